"""Figures written next to the report tables."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"]


def init_matplotlib(font_size=9):
    matplotlib.rcParams.update({
        "font.size": font_size,
        "axes.labelsize": font_size,
        "legend.fontsize": font_size - 1,
        "xtick.labelsize": font_size - 1,
        "ytick.labelsize": font_size - 1,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "figure.dpi": 100,
        "savefig.dpi": 150,
    })


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_trainlog(rows, path, title=None):
    """Loss per iteration (left) and held-out Best/Mean/Worst@M (right)."""
    init_matplotlib()
    fig, (ax_l, ax_r) = plt.subplots(1, 2, figsize=(7.0, 2.8))
    loss = [(r["iteration"], r["loss"]) for r in rows if r["loss"] is not None]
    if loss:
        ax_l.plot(*zip(*loss), color=PALETTE[0], lw=0.8)
    ax_l.set_xlabel("iteration")
    ax_l.set_ylabel("loss")
    evals = [r for r in rows if r["mean"] is not None]
    for key, color in zip(("best", "mean", "worst"), PALETTE):
        ax_r.plot([r["iteration"] for r in evals], [r[key] for r in evals], "o-", ms=3, color=color, label=key.capitalize())
    ax_r.set_xlabel("iteration")
    ax_r.set_ylabel("held-out reward")
    if evals:
        ax_r.legend(frameon=False, loc="best")
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_sweep(rows, path):
    """Held-out Mean@M against iteration, one line per (M, N) cell."""
    init_matplotlib()
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    cells = {}
    for r in rows:
        if r["mean"] is not None:
            cells.setdefault((r["M"], r["N"], r["ratio"]), []).append((r["iteration"], r["mean"]))
    for i, ((m, n, ratio), pts) in enumerate(sorted(cells.items())):
        ax.plot(*zip(*pts), "o-", ms=3, color=PALETTE[i % len(PALETTE)], label=f"M={m}, N/M={ratio}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("held-out Mean@M")
    if cells:
        ax.legend(frameon=False)
    _save(fig, path)
