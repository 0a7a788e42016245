"""Static SVG timelines of frame-wise accident probability.

Output is byte-stable: the SVG id salt is fixed and no date is embedded.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import first_crossing  # noqa: E402

HASH_SALT = "anticipate"


def panel_spec(probs, fps: float, accident_frame: int = 0, threshold: float = 0.5) -> dict:
    """Everything drawn in one panel, in seconds; alarm/accident are None when absent."""
    p = np.asarray(probs, dtype=np.float64)
    n = p.size
    t_o = first_crossing(p, threshold)
    return {
        "times": np.arange(n) / fps,
        "probs": p,
        "xlim": (0.0, n / fps),
        "ylim": (0.0, 1.0),
        "threshold": threshold,
        "alarm_s": None if t_o is None else t_o / fps,
        "accident_s": accident_frame / fps if accident_frame >= 1 else None,
    }


def _draw(ax, spec, title):
    ax.plot(spec["times"], spec["probs"], color="tab:blue", lw=1.2)
    ax.axhline(spec["threshold"], color="grey", ls="--", lw=0.8)
    if spec["accident_s"] is not None:
        ax.axvline(spec["accident_s"], color="tab:red", lw=1.0)
    if spec["alarm_s"] is not None:
        ax.plot([spec["alarm_s"]], [spec["threshold"]], marker="v", color="tab:orange", ms=7)
    ax.set_xlim(*spec["xlim"])
    ax.set_ylim(*spec["ylim"])
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("p")


def plot_comparison(panels, path, titles=("window=10", "window=0")) -> None:
    """``panels`` is a list of rows ``(name, spec_a, spec_b)``; one row per video."""
    plt.rcParams["svg.hashsalt"] = HASH_SALT
    rows = max(len(panels), 1)
    fig, axes = plt.subplots(rows, 2, figsize=(9, 2.4 * rows), squeeze=False)
    for r, (name, spec_a, spec_b) in enumerate(panels):
        _draw(axes[r][0], spec_a, f"{name}: {titles[0]}")
        _draw(axes[r][1], spec_b, f"{name}: {titles[1]}")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
