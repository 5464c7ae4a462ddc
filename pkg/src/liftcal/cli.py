"""Command-line entry point: error-level sweeps, tracking dumps and self-checks."""
import argparse
import json
import logging
import sys
from dataclasses import replace

from .errors import ConfigurationError, LiftError
from .experiment import MODES, ExperimentConfig, dump_tracking, run_sweep, seed_from_env

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="liftcal", description="Model-mismatch-aware gate calibration.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with ExperimentConfig fields")
        sp.add_argument("--seed", type=int, help="master seed (overridden by LIFTCAL_SEED)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--max-rollouts", type=int)
        sp.add_argument("--target-fidelity", type=float)
        sp.add_argument("--lambda", dest="lam", type=float, help="ILC smoothness weight")
        sp.add_argument("--sign-policy", choices=("random", "positive"))
        sp.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    sw = sub.add_parser("sweep", help="run calibration trials over error levels")
    common(sw)
    sw.add_argument("--eps", type=float, nargs="+", help="mean error levels")
    sw.add_argument("--trials", type=int, help="trials per error level")
    sw.add_argument("--mode", choices=MODES)
    sw.add_argument("--jobs", type=int, help="worker processes")

    tr = sub.add_parser("track", help="dump reference-vs-rollout trajectories for one trial")
    common(tr)
    tr.add_argument("--eps", type=float, required=True)

    sub.add_parser("validate", help="run structural self-checks")
    return p


def _config(args):
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {
        "master_seed": args.seed, "output_dir": args.out, "max_rollouts": args.max_rollouts,
        "target_fidelity": args.target_fidelity, "lam": args.lam, "sign_policy": args.sign_policy,
        "trials_per_level": getattr(args, "trials", None), "mode": getattr(args, "mode", None),
        "jobs": getattr(args, "jobs", None),
    }
    if args.command == "sweep" and args.eps:
        overrides["eps_levels"] = args.eps
    if args.no_plots:
        overrides["plots"] = False
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return replace(cfg, master_seed=seed_from_env(cfg.master_seed))


def _print_summary(summary):
    print("mode,eps_mean,trials,converged_fraction,median_rollouts,median_terminal_infidelity")
    for mode in sorted(summary):
        for eps in sorted(summary[mode], key=float):
            s = summary[mode][eps]
            print(f"{mode},{eps},{s['trials']},{s['converged_fraction']:.3f},"
                  f"{s['median_rollouts']:g},{s['median_terminal_infidelity']:.3e}")


def main(argv=None):
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "validate":
        from .validation import run_checks
        results = run_checks()
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
        return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_RUNTIME

    try:
        cfg = _config(args)
    except (ConfigurationError, TypeError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "sweep":
            summary = run_sweep(cfg)
            _print_summary(summary)
            print(f"results written to {cfg.output_dir}")
        else:
            manifest = dump_tracking(cfg, args.eps, cfg.master_seed)
            print(json.dumps(manifest, indent=2, sort_keys=True))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LiftError, OSError, RuntimeError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
