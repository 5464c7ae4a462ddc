"""
The calibration loop: design a reference on the current model, roll it out on
the experiment, check feasibility with a data-driven model, and either
redesign the reference on the learned model or polish with ILC.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, QocConvergenceError
from .ilc import IlcConfig, IlcState, ilc_step, tracking_rms
from .lifting import lift
from .qoc import QocConfig, design_reference, gate_fidelity
from .sim import HamiltonianModel, rollout
from .sysid import assemble_snapshots, bilinear_dmd, feasible, learned_hamiltonian_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LiftConfig:
    target_fidelity: float = 0.9999
    max_rollouts: int = 50
    feasibility_threshold: float = 0.05
    dmd_rollout_budget: int = 1
    max_redesigns: int = 1
    refine_dmd: bool = True
    prior_weight: float = 0.0
    tracking_tolerance: float = None
    ilc: IlcConfig = field(default_factory=IlcConfig)
    qoc: QocConfig = field(default_factory=lambda: QocConfig(initial_guess_policy="random-seeded"))
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.target_fidelity < 1:
            raise ConfigurationError("target fidelity must lie in (0, 1)")
        if self.max_rollouts < 1 or self.dmd_rollout_budget < 1 or self.max_redesigns < 0:
            raise ConfigurationError("rollout budgets must be positive")


class SimulatedExperiment:
    """
    Stand-in for hardware: a hidden model reachable only through rollout().

    infidelity() scores a control schedule against the hidden model; the
    calibration loop uses it for bookkeeping only and never for decisions.
    """

    def __init__(self, model, x0, noise_std=0.0, seed=None):
        self._model = model
        self._x0 = np.asarray(x0, dtype=float)
        self._noise_std = noise_std
        self._rng = np.random.default_rng(seed)
        self.calls = 0

    def rollout(self, u, iteration=0, phase="ilc"):
        self.calls += 1
        return rollout(self._model, u, self._x0, iteration=iteration, phase=phase,
                       noise_std=self._noise_std, rng=self._rng)

    def infidelity(self, u, target):
        return 1.0 - gate_fidelity(self._model, u, target)


@dataclass(frozen=True)
class RolloutEntry:
    rollout: int  # 1-based count of experiment calls
    iteration: int
    phase: str  # how the applied controls were produced
    infidelity: float
    tracking_rms: float
    feasible: object  # True/False when checked, None otherwise
    model_id: int  # 0 = nominal, k = after the k-th redesign
    controls: np.ndarray = field(repr=False, compare=False)


@dataclass(eq=False)
class CalibrationTrace:
    entries: list = field(default_factory=list)
    u_star: np.ndarray = None
    converged: bool = False
    rollouts_used: int = 0
    redesigns: int = 0
    warnings: list = field(default_factory=list)
    records: list = field(default_factory=list, repr=False)
    references: list = field(default_factory=list, repr=False)  # one per model_id

    @property
    def infidelities(self):
        return np.array([e.infidelity for e in self.entries])

    @property
    def final_infidelity(self):
        return self.entries[-1].infidelity if self.entries else np.nan

    @property
    def phases(self):
        return [e.phase for e in self.entries]


def convergence_check(trace, cfg):
    """True when the latest scored infidelity meets the target or the rollout budget is spent."""
    if not trace.entries:
        raise ValueError("empty trace")
    last = trace.entries[-1]
    if last.infidelity <= 1.0 - cfg.target_fidelity:
        return True
    if cfg.tracking_tolerance is not None and last.tracking_rms <= cfg.tracking_tolerance:
        return True
    return trace.rollouts_used >= cfg.max_rollouts


def _as_experiment(experiment, x0):
    if isinstance(experiment, HamiltonianModel):
        return SimulatedExperiment(experiment, x0)
    return experiment


def run_lift(nominal, experiment, target, x0, cfg=None, scorer=None, allow_redesign=True):
    """
    Calibrate controls for `target` against `experiment`.

    `experiment` is either a HamiltonianModel (wrapped in a SimulatedExperiment)
    or any object with rollout(u, iteration, phase). `scorer(u)` returns the
    true infidelity for the trace; it defaults to experiment.infidelity when
    the experiment has one. Without any scorer the infidelity is logged as NaN
    and only cfg.tracking_tolerance or the rollout budget ends the loop.
    Controls never depend on the score.
    """
    cfg = LiftConfig() if cfg is None else cfg
    experiment = _as_experiment(experiment, x0)
    if scorer is None:
        if hasattr(experiment, "infidelity"):
            scorer = lambda u: experiment.infidelity(u, target)
        else:
            scorer = lambda u: np.nan
    rng = np.random.default_rng(cfg.rng_seed)
    trace = CalibrationTrace()

    model, model_id = nominal, 0
    try:
        ref, u = design_reference(model, target, x0, cfg.qoc, rng)
    except QocConvergenceError as exc:
        trace.warnings.append(f"initial design failed: {exc}")
        return trace
    lifted = lift(model, ref)
    trace.references.append(ref)
    phase = "initial-qoc"
    state = IlcState(delta_u=np.zeros(u.size))
    era_start = 0  # index of the first record rolled out against the current reference
    j = 0
    downgrade_warned = False

    while True:
        rec = experiment.rollout(u, iteration=j, phase=phase)
        trace.records.append(rec)
        trace.rollouts_used += 1
        infid = float(scorer(u))
        rms = tracking_rms(rec, ref)

        verdict = None
        learned = None
        if allow_redesign:
            recent = trace.records[max(era_start, len(trace.records) - cfg.dmd_rollout_budget):]
            learned = bilinear_dmd(assemble_snapshots(recent, C=nominal.C), refine=cfg.refine_dmd,
                                   prior=model if cfg.prior_weight > 0 else None,
                                   prior_weight=cfg.prior_weight)
            verdict = feasible(model, learned, cfg.feasibility_threshold)

        trace.entries.append(RolloutEntry(
            rollout=trace.rollouts_used, iteration=j, phase=phase, infidelity=infid,
            tracking_rms=rms, feasible=verdict, model_id=model_id, controls=u.copy(),
        ))
        log.debug("rollout %d (%s): infidelity %.3e, tracking rms %.3e, feasible %s",
                  trace.rollouts_used, phase, infid, rms, verdict)
        if convergence_check(trace, cfg):
            break

        if verdict is False and trace.redesigns < cfg.max_redesigns:
            if len(trace.records) > len(recent):
                learned = bilinear_dmd(assemble_snapshots(trace.records, C=nominal.C), refine=cfg.refine_dmd,
                                       prior=model if cfg.prior_weight > 0 else None,
                                       prior_weight=cfg.prior_weight)
            model = learned_hamiltonian_model(nominal, learned)
            try:
                ref, u = design_reference(model, target, x0, cfg.qoc, rng)
            except QocConvergenceError as exc:
                trace.warnings.append(f"redesign failed: {exc}")
                break
            model_id += 1
            trace.redesigns += 1
            trace.references.append(ref)
            lifted = lift(model, ref)
            state = IlcState(delta_u=np.zeros(u.size))
            era_start = len(trace.records)
            phase = "dmd-redesign"
        else:
            if verdict is False and not downgrade_warned:
                msg = f"reference still infeasible after {trace.redesigns} redesign(s); continuing with ILC"
                log.warning(msg)
                trace.warnings.append(msg)
                downgrade_warned = True
            du, state = ilc_step(lifted, rec, ref, state, cfg.ilc)
            u = ref.u_ref + du.reshape(ref.u_ref.shape)
            phase = "ilc"
        j += 1

    trace.u_star = trace.entries[-1].controls if trace.entries else None
    last = trace.entries[-1] if trace.entries else None
    trace.converged = bool(last is not None and (
        last.infidelity <= 1.0 - cfg.target_fidelity
        or (cfg.tracking_tolerance is not None and last.tracking_rms <= cfg.tracking_tolerance)
    ))
    return trace


def run_ilc_only(nominal, experiment, target, x0, cfg=None, scorer=None):
    """The same loop without the feasibility check: the reference is never redesigned."""
    return run_lift(nominal, experiment, target, x0, cfg, scorer=scorer, allow_redesign=False)
