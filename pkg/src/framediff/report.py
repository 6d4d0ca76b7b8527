"""Delimited reports and their companion figures.

Every report path writes a CSV and renders a matching PNG figure next to it
(training loss curves, per-triplet metric profiles). Figures use the Agg
backend so the pipeline stays headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
})


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def figure_path(csv_path):
    p = Path(csv_path)
    return p.with_suffix(".png")


def render_loss_curves(csv_path, rows, columns):
    """Loss-vs-step curves; `columns` names the series after the step column."""
    fig, ax = plt.subplots()
    steps = [r[0] for r in rows]
    for i, name in enumerate(columns, start=1):
        ax.plot(steps, [r[i] for r in rows], label=name, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    out = figure_path(csv_path)
    fig.savefig(out)
    plt.close(fig)
    return out


def write_training_report(out_base, rows, columns):
    """CSV + loss-curve figure for a training run; returns both paths."""
    csv_path = Path(f"{out_base}.loss.csv")
    write_csv(csv_path, ["step"] + list(columns), rows)
    fig = render_loss_curves(csv_path, rows, columns)
    return csv_path, fig


def write_evaluation_report(csv_path, rows, means, metrics):
    """Per-triplet metric CSV (with a trailing mean row) plus a profile figure."""
    table = [[name] + [vals[m] for m in metrics] for name, vals in rows]
    table.append(["mean"] + [means[m] for m in metrics])
    write_csv(csv_path, ["triplet"] + list(metrics), table)

    fig, axes = plt.subplots(1, len(metrics), figsize=(4.5 * len(metrics), 3.2))
    if len(metrics) == 1:
        axes = [axes]
    xs = range(len(rows))
    for ax, m in zip(axes, metrics):
        vals = [v[m] for _, v in rows]
        ax.plot(xs, vals, marker="o", markersize=2.5, linewidth=0.8)
        ax.axhline(means[m], color="tab:red", linewidth=0.8, label=f"mean {means[m]:.3f}")
        ax.set_xlabel("triplet")
        ax.set_ylabel(m)
        ax.legend(frameon=False)
    fig.tight_layout()
    out = figure_path(csv_path)
    fig.savefig(out)
    plt.close(fig)
    return csv_path, out
