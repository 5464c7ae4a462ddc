"""Figures for sweep results and tracking dumps, rendered to files with the Agg backend."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_MODE_COLORS = {"lift": "tab:blue", "ilc-only": "tab:orange"}


def plot_sweep(rows, path, target_fidelity=0.9999):
    """Violins of infidelity per rollout index, one panel per error level, with medians overlaid."""
    runs = {}
    for r in rows:
        mode = r["trial_id"].rsplit("-", 2)[0]
        runs.setdefault(r["eps_mean"], {}).setdefault(mode, {}).setdefault(r["trial_id"], []).append(
            (int(r["rollout"]), float(r["infidelity"])))
    levels = sorted(runs, key=float)
    fig, axes = plt.subplots(1, len(levels), figsize=(4 * len(levels), 3.6), squeeze=False, sharey=True)
    floor = 1e-12
    for ax, eps in zip(axes[0], levels):
        for offset, (mode, trials) in zip((-0.18, 0.18), sorted(runs[eps].items())):
            series = [dict(v) for v in trials.values()]
            n_max = max(max(s) for s in series)
            # carry the terminal value forward for runs that stopped early
            grid = np.array([[s.get(k, s[max(s)]) for k in range(1, n_max + 1)] for s in series])
            logs = np.log10(np.maximum(grid, floor))
            pos = np.arange(1, n_max + 1) + offset
            parts = ax.violinplot([logs[:, k] for k in range(n_max)], positions=pos, widths=0.32,
                                  showextrema=False)
            color = _MODE_COLORS.get(mode, "gray")
            for body in parts["bodies"]:
                body.set_facecolor(color)
                body.set_alpha(0.35)
            ax.plot(pos, np.median(logs, axis=0), "o-", color=color, ms=3, label=mode)
        ax.axhline(np.log10(1 - target_fidelity), color="k", ls="--", lw=0.8)
        ax.set_title(f"eps = {float(eps):g}")
        ax.set_xlabel("rollout")
    axes[0][0].set_ylabel("log10 infidelity")
    axes[0][-1].legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_tracking(tables, manifest, path):
    """Reference and rolled-out Bloch components for each stored stage."""
    keys = sorted(tables)
    fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.4), squeeze=False, sharey=True)
    for ax, key in zip(axes[0], keys):
        t = tables[key]
        info = manifest["stages"][key]
        n_state = manifest["n_states"]
        s = t[:, 0]
        for i in range(n_state):
            line, = ax.plot(s, t[:, 1 + i], "--", lw=1)
            ax.plot(s, t[:, 1 + n_state + i], "-", color=line.get_color(), lw=1.5, label=f"x{i}")
        ax.set_title(f"({key}) {info['label']}", fontsize=9)
        ax.set_xlabel("step")
    axes[0][0].set_ylabel("Bloch component (dashed: reference)")
    axes[0][-1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

