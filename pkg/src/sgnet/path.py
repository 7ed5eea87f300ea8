"""Construction and verification of decay paths for a gain operator.

A decay path assigns to every radius r a point sigma(r) of the cone at
which the operator decays with a uniform margin (id + rho)^{-1}.  It is
built here as the closure of the constant ray under the margin-scaled
operator, sampled on a radius grid: per-index values, the closure depth
that realized them, and envelope functions squeezing every component.

The four defining properties (uniform decay margin, envelope sandwich,
strictly increasing unbounded components, locally bi-Lipschitz inverses)
are each re-checked numerically on the stored grid; construction runs the
first three automatically and refuses to hand out a path that fails them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kfunc, sgc
from .errors import ConstructionRefusedError, DomainError
from .gainop import KLEENE_EPS, KLEENE_M_MAX, GainOperator, NonnegSeq, kleene_star
from .kfunc import ScalarFn, linear_slope
from .sgc import Verdict, VerdictStatus

__all__ = [
    "DecayPath",
    "build_path",
    "identity_path",
    "default_r_grid",
    "gain_slope_bounds",
    "verify_decay",
    "verify_envelopes",
    "verify_monotone",
    "verify_bilipschitz",
    "invert_path",
]

GRID_POINTS_PER_DECADE = 64


def default_r_grid(lo: float, hi: float) -> np.ndarray:
    """Log-spaced radius grid, 64 points per decade across [lo, hi]."""
    if not 0.0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    decades = np.log10(hi / lo)
    points = max(8, int(np.ceil(GRID_POINTS_PER_DECADE * decades)) + 1)
    return np.geomspace(lo, hi, points)


@dataclass(frozen=True, eq=False)
class DecayPath:
    """Grid-sampled decay path with envelopes and construction metadata.

    components[i-1, k] holds the i-th coordinate of sigma at grid point k;
    tails[k] is the shared value of all coordinates beyond the window.
    depths[k] records how many iterates of the scaled operator were folded
    into the closure at grid point k, so the stored values can be
    reproduced as a finite running maximum.
    """

    r_grid: np.ndarray
    components: np.ndarray
    tails: np.ndarray
    rho: ScalarFn
    sigma_min: ScalarFn
    sigma_max: ScalarFn
    theta: ScalarFn
    depths: np.ndarray
    gain_slope_bounds: tuple | None = None

    def __post_init__(self):
        grid = np.asarray(self.r_grid, dtype=float)
        comp = np.asarray(self.components, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid needs at least two points")
        if np.any(grid <= 0.0) or np.any(np.diff(grid) <= 0.0):
            raise ValueError("grid must be positive and strictly increasing")
        if comp.shape != (comp.shape[0], grid.size):
            raise ValueError("component table shape must be (window, len(grid))")
        object.__setattr__(self, "r_grid", grid)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "tails", np.asarray(self.tails, dtype=float))
        object.__setattr__(self, "depths", np.asarray(self.depths, dtype=int))

    @property
    def window(self) -> int:
        return self.components.shape[0]

    def point(self, k: int) -> NonnegSeq:
        """sigma at the k-th grid radius, as a cone point."""
        return NonnegSeq(self.components[:, k], float(self.tails[k]))

    def component_values(self, i: int) -> np.ndarray:
        if not 1 <= i <= self.window:
            raise IndexError(f"component {i} outside window {self.window}")
        return self.components[i - 1]


def gain_slope_bounds(g: GainOperator, interval: tuple, samples: int = 9) -> tuple | None:
    """Sampled divided-difference bounds of every window gain on `interval`.

    Returns (l, L): the smallest and largest slope any nonzero gain
    exhibits between sample pairs.  A uniform positive lower bound is a
    regularity hypothesis a model must earn, so the bounds are reported
    with the path rather than assumed; None when the operator has no
    gains at all.
    """
    lo, hi = float(interval[0]), float(interval[1])
    values = np.linspace(lo, hi, samples)
    slope_min, slope_max = np.inf, 0.0
    seen = False
    for _, _, fn in g.support():
        seen = True
        ys = [fn(v) for v in values]
        for a in range(samples):
            for b in range(a + 1, samples):
                slope = (ys[b] - ys[a]) / (values[b] - values[a])
                slope_min = min(slope_min, slope)
                slope_max = max(slope_max, slope)
    if not seen:
        return None
    return float(slope_min), float(slope_max)


def build_path(g: GainOperator, theta: ScalarFn, r_grid,
               eps: float = KLEENE_EPS, m_max: int = KLEENE_M_MAX,
               omega: ScalarFn | None = None,
               precheck_k_max: int | None = None,
               decay_target: float = 0.5) -> DecayPath:
    """Decay path from ray closures of the margin-scaled operator.

    Requires the scaled operator to pass the uniform-decay check at the
    grid endpoints first; a failure there (or a non-convergent closure at
    any grid radius) refuses construction rather than returning a path
    that cannot satisfy its own contract.  The decay margin rho of the
    result is exactly the scaling theta used to build it.  When a
    contraction certificate `omega` is supplied, its inverse serves as the
    upper envelope; otherwise the empirical per-grid maximum does.  The
    sampled slope bounds of the gains over the grid hull ride along on
    the result (see gain_slope_bounds).
    """
    grid = np.asarray(r_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(grid <= 0.0):
        raise ValueError("r_grid must be a 1-d array of positive radii")
    scaled = g.scaled(theta)

    k_max = precheck_k_max if precheck_k_max is not None else max(64, 4 * g.window)
    report = sgc.check_ugas(scaled, radii=(float(grid[0]), float(grid[-1])),
                            k_max=k_max, decay_target=decay_target,
                            eps=eps, m_max=m_max)
    if report.uniform_decay is not True:
        failing = report.inconclusive_radii or tuple(
            r for r, k in (report.first_decay_step or {}).items() if k is None
        )
        raise ConstructionRefusedError(
            f"scaled operator failed the uniform-decay precheck at radius "
            f"{failing[0] if failing else grid[0]} (k_max={k_max})"
        )

    window = g.window
    components = np.empty((window, grid.size))
    tails = np.empty(grid.size)
    depths = np.empty(grid.size, dtype=int)
    for k, r in enumerate(grid):
        res = kleene_star(scaled, NonnegSeq.ones(window, float(r)), eps, m_max)
        if not res.converged:
            raise ConstructionRefusedError(
                f"closure did not converge at radius {r} within {m_max} iterates"
            )
        components[:, k] = res.closure.values
        tails[k] = res.closure.tail
        depths[k] = res.depth_used

    if omega is not None:
        sigma_max: ScalarFn = kfunc.InverseOf(omega)
    else:
        peaks = components.max(axis=0)
        sigma_max = kfunc.PiecewiseLinear([(0.0, 0.0)] + list(zip(grid, peaks)))

    path = DecayPath(
        r_grid=grid, components=components, tails=tails,
        rho=theta, sigma_min=kfunc.IDENTITY, sigma_max=sigma_max,
        theta=theta, depths=depths,
        gain_slope_bounds=gain_slope_bounds(g, (float(grid[0]), float(grid[-1]))),
    )
    _self_check(path, g, eps)
    return path


def identity_path(window: int, r_grid, rho: ScalarFn | None = None) -> DecayPath:
    """The path sigma(r) = r * ones, e.g. for operators with no gains."""
    grid = np.asarray(r_grid, dtype=float)
    rho = rho if rho is not None else kfunc.Linear(0.1)
    return DecayPath(
        r_grid=grid,
        components=np.tile(grid, (window, 1)),
        tails=grid.copy(),
        rho=rho,
        sigma_min=kfunc.IDENTITY,
        sigma_max=kfunc.IDENTITY,
        theta=rho,
        depths=np.zeros(grid.size, dtype=int),
    )


def _self_check(path: DecayPath, g: GainOperator, eps: float) -> None:
    for name, verdict in (
        ("decay", verify_decay(path, g, tol=max(10.0 * eps, 1e-9))),
        ("envelopes", verify_envelopes(path)),
        ("monotone", verify_monotone(path)),
    ):
        if verdict.falsified:
            raise ConstructionRefusedError(
                f"constructed path failed its own {name} check: {verdict.witness}"
            )


def _margin_inverse(rho: ScalarFn, value: float) -> float:
    """(id + rho)^{-1} at a single value."""
    slope = linear_slope(rho)
    if slope is not None:
        return value / (1.0 + slope)
    if value == 0.0:
        return 0.0
    return kfunc.invert(kfunc.IdPlus(rho), value, (0.0, value), tol=1e-12)


def verify_decay(path: DecayPath, g: GainOperator, tol: float = 1e-8) -> Verdict:
    """Check g(sigma(r)) <= (id + rho)^{-1} sigma(r) + tol on the grid."""
    if g.window != path.window:
        raise ValueError(f"operator window {g.window} != path window {path.window}")
    for k, r in enumerate(path.r_grid):
        image = g.apply(path.point(k))
        for idx in range(path.window):
            lhs = image.values[idx]
            rhs = _margin_inverse(path.rho, path.components[idx, k])
            if lhs > rhs + tol:
                return Verdict(
                    VerdictStatus.FALSIFIED,
                    witness={"kind": "decay", "r": float(r), "i": idx + 1,
                             "lhs": float(lhs), "rhs": float(rhs)},
                    scope=_grid_scope(path),
                )
    return Verdict(VerdictStatus.NO_VIOLATION_FOUND, scope=_grid_scope(path))


def verify_envelopes(path: DecayPath, tol: float = 1e-8) -> Verdict:
    """Check sigma_min <= sigma_i <= sigma_max at every grid point."""
    for k, r in enumerate(path.r_grid):
        lo = path.sigma_min(float(r))
        hi = path.sigma_max(float(r))
        col = path.components[:, k]
        bad_low = np.nonzero(col < lo - tol)[0]
        bad_high = np.nonzero(col > hi + tol)[0]
        if bad_low.size or bad_high.size:
            idx = int(bad_low[0]) if bad_low.size else int(bad_high[0])
            return Verdict(
                VerdictStatus.FALSIFIED,
                witness={"kind": "envelope", "i": idx + 1, "r": float(r),
                         "value": float(col[idx]), "lo": lo, "hi": hi},
                scope=_grid_scope(path),
            )
    return Verdict(VerdictStatus.NO_VIOLATION_FOUND, scope=_grid_scope(path))


def verify_monotone(path: DecayPath, margin: float = 1e-9) -> Verdict:
    """Strict growth of every component across the grid, plus end checks.

    The lower end must stay under the upper envelope (consistency with
    sigma_i(0) = 0); the top end re-applies the unboundedness tail
    heuristic.  Needs at least 8 grid points to mean anything.
    """
    if path.r_grid.size < 8:
        raise ValueError("monotonicity check needs at least 8 grid points")
    dr = np.diff(path.r_grid)
    for idx in range(path.window):
        vals = path.components[idx]
        growth = np.diff(vals)
        bad = np.nonzero(growth < margin * dr)[0]
        if bad.size:
            k = int(bad[0])
            return Verdict(
                VerdictStatus.FALSIFIED,
                witness={"kind": "flat", "i": idx + 1,
                         "r": float(path.r_grid[k]),
                         "r_next": float(path.r_grid[k + 1]),
                         "value": float(vals[k]), "value_next": float(vals[k + 1])},
                scope=_grid_scope(path),
            )
        if vals[0] > path.sigma_max(float(path.r_grid[0])) + 1e-8:
            return Verdict(
                VerdictStatus.FALSIFIED,
                witness={"kind": "origin", "i": idx + 1, "value": float(vals[0])},
                scope=_grid_scope(path),
            )
        top = float(path.r_grid[-1])
        if vals[-1] < kfunc.KINF_TAIL_RATIO * top:
            return Verdict(
                VerdictStatus.FALSIFIED,
                witness={"kind": "bounded-tail", "i": idx + 1, "value": float(vals[-1])},
                scope=_grid_scope(path),
            )
    return Verdict(VerdictStatus.NO_VIOLATION_FOUND, scope=_grid_scope(path))


def verify_bilipschitz(path: DecayPath, interval: tuple, tol: float = 1e-9,
                       samples: int = 17):
    """Divided-difference bounds for the component inverses on `interval`.

    Returns (c, C, verdict): the smallest and largest divided difference of
    every inverse component over all pairs of a value grid spanning the
    interval.  A degenerate lower constant (c < tol) falsifies.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if lo <= 0.0:
        raise DomainError("interval must have a positive lower endpoint")
    if hi <= lo:
        raise DomainError("interval must satisfy lo < hi")
    values = np.linspace(lo, hi, samples)
    c_best = np.inf
    c_worst = 0.0
    for i in range(1, path.window + 1):
        inv = np.array([invert_path(path, i, v) for v in values])
        for a in range(values.size):
            for b in range(a + 1, values.size):
                dd = abs(inv[b] - inv[a]) / (values[b] - values[a])
                c_best = min(c_best, dd)
                c_worst = max(c_worst, dd)
    if c_best < tol:
        verdict = Verdict(
            VerdictStatus.FALSIFIED,
            witness={"kind": "flat-inverse", "c": float(c_best)},
            scope=_grid_scope(path),
        )
    else:
        verdict = Verdict(VerdictStatus.NO_VIOLATION_FOUND, scope=_grid_scope(path))
    return float(c_best), float(c_worst), verdict


def invert_path(path: DecayPath, i: int, v: float) -> float:
    """Monotone interpolated inverse of component i; exact on grid knots.

    Below the first knot the inverse interpolates down to (0, 0); above
    the last it extends linearly at the final certified slope.
    """
    if v < 0.0:
        raise DomainError(f"cannot invert a negative value {v}")
    if v == 0.0:
        return 0.0
    vals = path.component_values(i)
    grid = path.r_grid
    if v >= vals[-1]:
        slope = (vals[-1] - vals[-2]) / (grid[-1] - grid[-2])
        return float(grid[-1] + (v - vals[-1]) / slope)
    if v <= vals[0]:
        return float(v * grid[0] / vals[0])
    return float(np.interp(v, vals, grid))


def _grid_scope(path: DecayPath) -> str:
    return (
        f"window={path.window}; grid=[{path.r_grid[0]:g}, {path.r_grid[-1]:g}] "
        f"({path.r_grid.size} pts, grid-certified)"
    )
