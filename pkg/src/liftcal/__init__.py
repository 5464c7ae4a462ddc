"""Calibration of quantum gates under model mismatch: optimal-control design, data-driven feasibility checks and iterative learning control."""
from .errors import (ConfigurationError, InfeasibleReferenceError, InsufficientDataError,
                     InvalidOperatorError, InvalidStateError, LiftError, QocConvergenceError,
                     ResetError, ShapeError, UnsupportedDimensionError)
from .ilc import IlcConfig, IlcState, contraction_estimate, ilc_step, solve_correction
from .lifting import LiftedSystem, ReferenceTriplet, lift, linearize, reference_from_controls
from .orchestrator import (CalibrationTrace, LiftConfig, SimulatedExperiment, run_ilc_only,
                           run_lift)
from .pauli import (PauliBasis, bloch_to_density, build_basis, density_to_bloch, ground_state,
                    vectorize_hamiltonian)
from .qoc import GateTarget, QocConfig, design_controls, design_reference, gate_fidelity
from .sim import (ErrorModel, HamiltonianModel, RolloutRecord, apply_error_model,
                  model_from_hamiltonians, qubit_model, rollout, sample_error_model)
from .sysid import (LearnedModel, SufficiencyReport, assemble_snapshots, bilinear_dmd, feasible,
                    model_mismatch, sufficiency_analysis)

__version__ = "0.1.0"
