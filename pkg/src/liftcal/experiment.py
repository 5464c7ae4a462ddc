"""
Single-qubit X-gate calibration experiment: error-level sweeps, per-trial
seeding, CSV/JSON persistence and tracking-trajectory dumps.
"""
import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .ilc import IlcConfig
from .orchestrator import LiftConfig, run_ilc_only, run_lift
from .pauli import ground_state
from .qoc import GateTarget, QocConfig
from .sim import apply_error_model, qubit_model, sample_error_model

log = logging.getLogger(__name__)

CSV_HEADER = ["trial_id", "eps_mean", "eps_z", "eps_x", "eps_y", "rollout", "phase",
              "infidelity", "tracking_rms", "converged"]
MODES = ("lift", "ilc-only", "both")
SEED_ENV = "LIFTCAL_SEED"


@dataclass
class ExperimentConfig:
    eps_levels: list = field(default_factory=lambda: [0.01, 0.05, 0.1, 0.2, 0.3])
    trials_per_level: int = 30
    sign_policy: str = "random"
    mode: str = "both"
    master_seed: int = 0
    output_dir: str = "liftcal-out"
    # physical setup: drive bound and step fix the time units
    horizon: int = 10
    dt: float = 0.04
    u_sat: float = 8.0
    target: str = "X"
    # calibration loop
    target_fidelity: float = 0.9999
    max_rollouts: int = 50
    feasibility_threshold: float = 0.05
    max_redesigns: int = 1
    refine_dmd: bool = True
    lam: float = 1e-3
    du_sat: float = None
    jobs: int = 1
    plots: bool = True

    def __post_init__(self):
        if not self.eps_levels:
            raise ConfigurationError("eps_levels must not be empty")
        if self.trials_per_level < 1:
            raise ConfigurationError("trials_per_level must be >= 1")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.sign_policy not in ("random", "positive"):
            raise ConfigurationError("sign_policy must be 'random' or 'positive'")
        if any(e < 0 for e in self.eps_levels):
            raise ConfigurationError("eps levels must be nonnegative")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        self.eps_levels = [float(e) for e in self.eps_levels]

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config file must hold a JSON object")
        return cls.from_dict(data)

    def lift_config(self, rng_seed=0):
        du_sat = self.u_sat if self.du_sat is None else self.du_sat
        return LiftConfig(
            target_fidelity=self.target_fidelity,
            max_rollouts=self.max_rollouts,
            feasibility_threshold=self.feasibility_threshold,
            max_redesigns=self.max_redesigns,
            refine_dmd=self.refine_dmd,
            ilc=IlcConfig(lam=self.lam, u_sat=self.u_sat, du_sat=du_sat),
            qoc=QocConfig(u_sat=self.u_sat, initial_guess_policy="random-seeded"),
            rng_seed=rng_seed,
        )


def seed_from_env(default):
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def trial_seeds(master_seed, eps_index, trial_index):
    """(error-model seed, calibration seed) for one trial, independent of execution order."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(eps_index), int(trial_index)))
    a, b = ss.generate_state(2, dtype=np.uint32)
    return int(a), int(b)


def setup(cfg):
    nominal = qubit_model(cfg.dt, cfg.horizon)
    return nominal, ground_state(nominal.basis), GateTarget.pauli(cfg.target)


@dataclass
class TrialResult:
    eps_index: int
    trial_index: int
    eps_mean: float
    error: tuple  # (eps_z, eps_x, eps_y)
    traces: dict  # mode -> CalibrationTrace


def run_trial(cfg, eps_index, trial_index, keep_records=False):
    eps = cfg.eps_levels[eps_index]
    err_seed, cal_seed = trial_seeds(cfg.master_seed, eps_index, trial_index)
    err = sample_error_model(eps, err_seed, cfg.sign_policy)
    nominal, x0, target = setup(cfg)
    true = apply_error_model(nominal, err)
    lift_cfg = cfg.lift_config(cal_seed)
    traces = {}
    if cfg.mode in ("lift", "both"):
        traces["lift"] = run_lift(nominal, true, target, x0, lift_cfg)
    if cfg.mode in ("ilc-only", "both"):
        traces["ilc-only"] = run_ilc_only(nominal, true, target, x0, lift_cfg)
    if not keep_records:
        for tr in traces.values():
            tr.records = []
            tr.references = []
    return TrialResult(eps_index, trial_index, eps, (err.eps_z, err.eps_x, err.eps_y), traces)


def _run_trial_args(args):
    return run_trial(*args)


def _fmt(x):
    return repr(float(x))


def trial_rows(result):
    rows = []
    for mode, tr in result.traces.items():
        trial_id = f"{mode}-{result.eps_index:02d}-{result.trial_index:04d}"
        last = len(tr.entries) - 1
        for k, e in enumerate(tr.entries):
            rows.append([
                trial_id, _fmt(result.eps_mean), *(_fmt(v) for v in result.error),
                str(e.rollout), e.phase, _fmt(e.infidelity), _fmt(e.tracking_rms),
                "1" if (k == last and tr.converged) else "0",
            ])
    return rows


def write_csv(path, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows, target_fidelity=0.9999):
    """Per-mode, per-eps statistics computed from trials.csv rows only."""
    by_run = {}
    for r in rows:
        by_run.setdefault(r["trial_id"], []).append(r)
    out = {}
    for trial_id, run in sorted(by_run.items()):
        mode = trial_id.rsplit("-", 2)[0]
        eps = run[0]["eps_mean"]
        slot = out.setdefault(mode, {}).setdefault(eps, {"runs": []})
        run = sorted(run, key=lambda r: int(r["rollout"]))
        slot["runs"].append(run)
    summary = {}
    for mode, per_eps in out.items():
        summary[mode] = {}
        for eps, slot in per_eps.items():
            runs = slot["runs"]
            finals = [float(run[-1]["infidelity"]) for run in runs]
            used = [len(run) for run in runs]
            conv = [run[-1]["converged"] == "1" for run in runs]
            redesigns = [sum(r["phase"] == "dmd-redesign" for r in run) for run in runs]
            max_len = max(used)
            per_rollout = []
            for k in range(max_len):
                vals = [float(run[k]["infidelity"]) for run in runs if len(run) > k]
                per_rollout.append({"rollout": k + 1, "n": len(vals), "median_infidelity": float(np.median(vals))})
            summary[mode][eps] = {
                "trials": len(runs),
                "converged_fraction": float(np.mean(conv)),
                "median_terminal_infidelity": float(np.median(finals)),
                "median_rollouts": float(np.median(used)),
                "max_rollouts_used": int(max_len),
                "redesign_counts": {str(c): int(sum(1 for r in redesigns if r == c)) for c in sorted(set(redesigns))},
                "per_rollout": per_rollout,
            }
    return summary


def run_sweep(cfg):
    """Run every (eps, trial) pair, write trials.csv, summary.json and config.json; return the summary."""
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc

    tasks = [(cfg, i, k) for i in range(len(cfg.eps_levels)) for k in range(cfg.trials_per_level)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_trial_args, tasks))
    else:
        results = [run_trial(*t) for t in tasks]

    rows = [row for res in results for row in trial_rows(res)]
    write_csv(out / "trials.csv", rows)
    summary = summarize(read_csv(out / "trials.csv"), cfg.target_fidelity)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    if cfg.plots:
        from .plotting import plot_sweep
        plot_sweep(read_csv(out / "trials.csv"), out / "infidelity_vs_rollout.png", cfg.target_fidelity)
    return summary


STAGES = {
    "a": "nominal-design rollout",
    "b": "post-redesign rollout",
    "c": "final calibrated rollout",
    "d": "ILC without redesign, final rollout",
}


def _stage_table(ref, rec):
    T = rec.u.shape[0]
    u = np.vstack([rec.u, np.full((1, rec.u.shape[1]), np.nan)])
    return np.column_stack([np.arange(T + 1), ref.x_ref, rec.x, u])


def dump_tracking(cfg, eps, trial_seed=0):
    """
    Write reference-vs-rollout trajectories for the calibration stages of one trial.

    Stage files hold columns s, x_ref..., x..., u... (u is NaN on the final
    snapshot). Stages that did not occur are listed in manifest.json.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    one = replace(cfg, eps_levels=[float(eps)], trials_per_level=1, mode="both",
                  master_seed=int(trial_seed))
    res = run_trial(one, 0, 0, keep_records=True)
    lift_tr, ilc_tr = res.traces["lift"], res.traces["ilc-only"]
    m = lift_tr.records[0].x.shape[1]
    J = lift_tr.records[0].u.shape[1]
    header = " ".join(["s"] + [f"xref_{i}" for i in range(m)] + [f"x_{i}" for i in range(m)]
                      + [f"u_{j}" for j in range(J)])

    def ref_for(tr, idx):
        return tr.references[tr.entries[idx].model_id]

    stages = {"a": (lift_tr, 0)}
    redesign_idx = next((i for i, e in enumerate(lift_tr.entries) if e.phase == "dmd-redesign"), None)
    if redesign_idx is not None:
        stages["b"] = (lift_tr, redesign_idx)
    stages["c"] = (lift_tr, len(lift_tr.entries) - 1)
    stages["d"] = (ilc_tr, len(ilc_tr.entries) - 1)

    manifest = {"eps_mean": float(eps), "trial_seed": int(trial_seed), "n_states": m, "n_controls": J,
                "error": dict(zip(("eps_z", "eps_x", "eps_y"), map(float, res.error))),
                "stages": {}, "omitted": {}}
    tables = {}
    for key, label in STAGES.items():
        if key not in stages:
            manifest["omitted"][key] = f"{label}: feasibility check passed, no redesign was triggered"
            continue
        tr, idx = stages[key]
        entry = tr.entries[idx]
        table = _stage_table(ref_for(tr, idx), tr.records[idx])
        name = f"stage_{key}.txt"
        np.savetxt(out / name, table, header=header, fmt="%.12e")
        tables[key] = table
        manifest["stages"][key] = {
            "file": name, "label": label, "rollout": entry.rollout, "phase": entry.phase,
            "infidelity": entry.infidelity, "tracking_rms": entry.tracking_rms,
            "terminal_tracking_error": float(np.linalg.norm(table[-1, 1:1 + m] - table[-1, 1 + m:1 + 2 * m])),
        }
    if stages["c"][1] == redesign_idx:
        manifest["stages"]["c"]["note"] = "converged on the redesigned reference without ILC iterations"
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if cfg.plots:
        from .plotting import plot_tracking
        plot_tracking(tables, manifest, out / "tracking.png")
    return manifest
