"""Figure rendering for the report path.

Each CSV table the runner emits has a matching line plot written next to
it.  Rendering uses the Agg backend and fixed figure geometry so batch
runs behave identically on headless machines.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


_FIGSIZE = (6.0, 4.0)
_DPI = 120


def plot_norm_decay(norms: dict, out_path: Path, title: str = "iterate norms") -> Path:
    """Sup norm of the iterates against the step count, one line per radius."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    for r in sorted(norms):
        table = np.asarray(norms[r])
        ax.semilogy(np.arange(table.size), np.maximum(table, 1e-16),
                    marker=".", label=f"r={r:g}")
    ax.set_xlabel("iterate k")
    ax.set_ylabel("sup norm")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, out_path)


def plot_path_components(r_grid, components, tracked, out_path: Path,
                         title: str = "decay path components") -> Path:
    """Sampled path components against the radius, log-log."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    for i in tracked:
        ax.loglog(r_grid, components[i - 1], label=f"i={i}")
    ax.set_xlabel("r")
    ax.set_ylabel("component value")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if len(tracked) <= 12:
        ax.legend(loc="best", fontsize=8)
    return _save(fig, out_path)


def plot_trajectory(times, composite_values, state_norms, out_path: Path,
                    title: str = "trajectory") -> Path:
    """Composite Lyapunov value and state sup norm along a trajectory."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    ax.plot(times, composite_values, label="composite V")
    ax.plot(times, state_norms, label="state sup norm", linestyle="--")
    ax.set_xlabel("t")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, out_path)


def _save(fig, out_path: Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path)
    _pyplot().close(fig)
    return out_path
