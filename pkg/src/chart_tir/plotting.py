"""Report figures.

Figures are built on bare ``matplotlib.figure.Figure`` objects with the Agg
canvas, so rendering never touches pyplot global state and is safe from
worker threads.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from pathlib import Path

import matplotlib
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # keep PNG output byte-stable across runs
    "svg.hashsalt": "chart-tir",
}

PALETTE = ("#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860")


def _new(width: float = 5.0, height: float = 3.2):
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(STYLE):
        fig.savefig(path, metadata={"Software": None})
    return path


def bar_shares(
    shares: Mapping[str, float],
    path: str | Path,
    title: str = "",
    target: Mapping[str, float] | None = None,
    ylabel: str = "share (%)",
) -> Path:
    """Bar chart of percentages, optionally next to a target distribution."""
    with matplotlib.rc_context(STYLE):
        keys = list(shares) if target is None else list(dict.fromkeys([*target, *shares]))
        fig, ax = _new(max(4.0, 0.55 * len(keys) + 2), 3.2)
        xs = range(len(keys))
        if target is None:
            ax.bar(xs, [shares.get(k, 0.0) for k in keys], color=PALETTE[0])
        else:
            w = 0.4
            ax.bar([x - w / 2 for x in xs], [shares.get(k, 0.0) for k in keys], w, label="observed", color=PALETTE[0])
            ax.bar([x + w / 2 for x in xs], [target.get(k, 0.0) for k in keys], w, label="target", color=PALETTE[1])
            ax.legend(frameon=False)
        ax.set_xticks(list(xs))
        ax.set_xticklabels(keys, rotation=30 if len(keys) > 4 else 0, ha="right" if len(keys) > 4 else "center")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def tool_distribution_figure(dist: Mapping[str, float], path: str | Path, title: str = "tool calls") -> Path:
    with matplotlib.rc_context(STYLE):
        fig, ax = _new(4.0, 1.8)
        crop, code = dist.get("crop_pct", 0.0), dist.get("code_pct", 0.0)
        ax.barh([0], [code], color=PALETTE[0], label=f"code {code:.2f}%")
        ax.barh([0], [crop], left=[code], color=PALETTE[1], label=f"crop {crop:.2f}%")
        ax.set_xlim(0, 100)
        ax.set_yticks([])
        ax.set_xlabel("share of tool calls (%)")
        ax.legend(frameon=False, ncol=2, loc="upper center", bbox_to_anchor=(0.5, -0.45))
        ax.set_title(title)
        return _save(fig, path)


def accuracy_figure(per_group: Mapping[str, float], overall: float, path: str | Path) -> Path:
    with matplotlib.rc_context(STYLE):
        labels = ["overall", *per_group]
        values = [overall, *per_group.values()]
        fig, ax = _new(max(3.5, 0.9 * len(labels) + 1.5), 3.0)
        bars = ax.bar(range(len(labels)), [100 * v for v in values], color=PALETTE[2])
        for b, v in zip(bars, values):
            ax.annotate(f"{100 * v:.1f}", (b.get_x() + b.get_width() / 2, b.get_height()), ha="center", va="bottom")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels)
        ax.set_ylim(0, 105)
        ax.set_ylabel("accuracy (%)")
        return _save(fig, path)


def histogram_figure(values: Sequence[float], path: str | Path, xlabel: str, bins: int = 32, title: str = "") -> Path:
    with matplotlib.rc_context(STYLE):
        fig, ax = _new()
        ax.hist(list(values), bins=bins, color=PALETTE[4])
        ax.set_xlabel(xlabel)
        ax.set_ylabel("count")
        if title:
            ax.set_title(title)
        return _save(fig, path)
