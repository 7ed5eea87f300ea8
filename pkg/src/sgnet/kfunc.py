"""Comparison-function algebra on the nonnegative half-line.

Representable monotone scalar functions (class-K / class-K-infinity
candidates) with composition, pointwise maximum, numerical inversion and
grid-sampled class certification.  Values are immutable after construction
and evaluation is pure, so they can be shared freely between workers.

Class certification is always grid-sampled, never symbolic: a verdict such
as "class K-infinity" only means the property held on the supplied grid,
and the certified range is recorded alongside the tag.  Unboundedness in
particular is a heuristic tail test (f(R) >= R/2 at the top grid point).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ClassificationError,
    DomainError,
    MalformedFunctionError,
    OutOfRangeError,
)

__all__ = [
    "ScalarFn",
    "Zero",
    "Identity",
    "Linear",
    "Power",
    "Saturating",
    "PiecewiseLinear",
    "Compose",
    "MaxOf",
    "IdPlus",
    "InverseOf",
    "FnTag",
    "FnClass",
    "compose",
    "max_of",
    "invert",
    "check_class",
    "linear_slope",
    "default_grid",
    "ZERO",
    "IDENTITY",
    "INVERT_TOL",
    "INVERT_MAX_ITER",
]

# Bisection defaults: residual tolerance and iteration cap.
INVERT_TOL = 1e-10
INVERT_MAX_ITER = 200

# Unboundedness heuristic: require f(R) >= KINF_TAIL_RATIO * R at the top
# grid point.  No finite sample proves unboundedness; this is recorded as
# grid-certified only.
KINF_TAIL_RATIO = 0.5


def _require_nonneg(r: float) -> float:
    r = float(r)
    if not math.isfinite(r) or r < 0.0:
        raise DomainError(f"argument must be a finite nonnegative real, got {r}")
    return r


def _require_finite_param(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise MalformedFunctionError(f"{name} must be finite, got {value}")
    return value


class ScalarFn:
    """A scalar function on [0, inf), closed under composition and max."""

    def __call__(self, r: float) -> float:
        return self._value(_require_nonneg(r))

    def _value(self, r: float) -> float:  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(ScalarFn):
    """The zero function."""

    def _value(self, r: float) -> float:
        return 0.0


@dataclass(frozen=True)
class Identity(ScalarFn):
    def _value(self, r: float) -> float:
        return r


@dataclass(frozen=True)
class Linear(ScalarFn):
    """r -> slope * r with slope >= 0."""

    slope: float

    def __post_init__(self):
        s = _require_finite_param("slope", self.slope)
        if s < 0.0:
            raise MalformedFunctionError(f"slope must be nonnegative, got {s}")
        object.__setattr__(self, "slope", s)

    def _value(self, r: float) -> float:
        return self.slope * r


@dataclass(frozen=True)
class Power(ScalarFn):
    """r -> coeff * r**exponent with coeff >= 0 and exponent > 0."""

    coeff: float
    exponent: float

    def __post_init__(self):
        c = _require_finite_param("coeff", self.coeff)
        p = _require_finite_param("exponent", self.exponent)
        if c < 0.0 or p <= 0.0:
            raise MalformedFunctionError(
                f"need coeff >= 0 and exponent > 0, got ({c}, {p})"
            )
        object.__setattr__(self, "coeff", c)
        object.__setattr__(self, "exponent", p)

    def _value(self, r: float) -> float:
        return self.coeff * r**self.exponent


@dataclass(frozen=True)
class Saturating(ScalarFn):
    """r -> coeff * r / (halfsat + r): strictly increasing, bounded by coeff."""

    coeff: float
    halfsat: float

    def __post_init__(self):
        c = _require_finite_param("coeff", self.coeff)
        h = _require_finite_param("halfsat", self.halfsat)
        if c < 0.0 or h <= 0.0:
            raise MalformedFunctionError(
                f"need coeff >= 0 and halfsat > 0, got ({c}, {h})"
            )
        object.__setattr__(self, "coeff", c)
        object.__setattr__(self, "halfsat", h)

    def _value(self, r: float) -> float:
        return self.coeff * r / (self.halfsat + r)


@dataclass(frozen=True)
class PiecewiseLinear(ScalarFn):
    """Piecewise-linear interpolant through (r, value) knots.

    Knots must start at r=0, be strictly increasing in r, and carry finite
    nonnegative values.  Beyond the last knot the final segment slope is
    extended, so a knot list with increasing values yields an unbounded
    strictly increasing function.
    """

    knots: tuple

    def __init__(self, knots):
        pts = tuple((float(r), float(v)) for r, v in knots)
        if len(pts) < 2:
            raise MalformedFunctionError("need at least two knots")
        if pts[0][0] != 0.0:
            raise MalformedFunctionError("first knot must be at r=0")
        for (r0, v0), (r1, v1) in zip(pts, pts[1:]):
            if not (math.isfinite(r1) and math.isfinite(v1)):
                raise MalformedFunctionError("knots must be finite")
            if r1 <= r0:
                raise MalformedFunctionError("knot abscissae must be strictly increasing")
        if any(v < 0.0 for _, v in pts):
            raise MalformedFunctionError("knot values must be nonnegative")
        object.__setattr__(self, "knots", pts)
        object.__setattr__(self, "_rs", np.array([r for r, _ in pts]))
        object.__setattr__(self, "_vs", np.array([v for _, v in pts]))

    def _value(self, r: float) -> float:
        rs, vs = self._rs, self._vs
        if r >= rs[-1]:
            slope = (vs[-1] - vs[-2]) / (rs[-1] - rs[-2])
            return float(vs[-1] + slope * (r - rs[-1]))
        k = int(np.searchsorted(rs, r, side="right")) - 1
        w = (r - rs[k]) / (rs[k + 1] - rs[k])
        return float(vs[k] + w * (vs[k + 1] - vs[k]))


@dataclass(frozen=True)
class Compose(ScalarFn):
    """outer after inner: r -> outer(inner(r))."""

    outer: ScalarFn
    inner: ScalarFn

    def _value(self, r: float) -> float:
        return self.outer._value(self.inner._value(r))


@dataclass(frozen=True)
class MaxOf(ScalarFn):
    """Pointwise maximum of finitely many functions."""

    terms: tuple

    def __init__(self, terms):
        terms = tuple(terms)
        if not terms:
            raise MalformedFunctionError("pointwise maximum needs at least one term")
        object.__setattr__(self, "terms", terms)

    def _value(self, r: float) -> float:
        return max(f._value(r) for f in self.terms)


@dataclass(frozen=True)
class IdPlus(ScalarFn):
    """r -> r + inner(r); the standard margin wrapper around a gain."""

    inner: ScalarFn

    def _value(self, r: float) -> float:
        return r + self.inner._value(r)


@dataclass(frozen=True)
class InverseOf(ScalarFn):
    """Numerical inverse of a strictly increasing function.

    Evaluation brackets the preimage by doubling and then bisects until the
    residual |inner(x) - y| drops below `tol`.  Values above the image of
    the (possibly bounded) inner function raise OutOfRangeError rather than
    returning a made-up preimage.
    """

    inner: ScalarFn
    tol: float = INVERT_TOL

    def _value(self, y: float) -> float:
        if y == 0.0:
            return 0.0
        f = self.inner
        hi = max(y, 1.0)
        doublings = 0
        while f._value(hi) < y:
            hi *= 2.0
            doublings += 1
            if doublings > 600 or hi > 1e300:
                raise OutOfRangeError(
                    f"value {y} appears to exceed the image of {f!r}"
                )
        return _bisect(f, y, 0.0, hi, self.tol)


ZERO = Zero()
IDENTITY = Identity()


def _bisect(f: ScalarFn, y: float, lo: float, hi: float, tol: float) -> float:
    for _ in range(INVERT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        val = f._value(mid)
        if abs(val - y) <= tol:
            return mid
        if val < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def compose(outer: ScalarFn, inner: ScalarFn) -> ScalarFn:
    """Composition outer(inner(.)) with the cheap exact simplifications.

    Linear/Linear collapses to a Linear with multiplied slopes and Identity
    is dropped; a Zero side collapses whenever the result is exactly zero.
    Everything else stays a lazy Compose node.
    """
    if isinstance(outer, Identity):
        return inner
    if isinstance(inner, Identity):
        return outer
    if isinstance(inner, Zero) and outer._value(0.0) == 0.0:
        return ZERO
    if isinstance(outer, Zero):
        return ZERO
    if isinstance(outer, Linear) and isinstance(inner, Linear):
        return Linear(outer.slope * inner.slope)
    return Compose(outer, inner)


def max_of(fs: Sequence[ScalarFn]) -> ScalarFn:
    """Pointwise maximum; a singleton list returns its only element."""
    fs = tuple(fs)
    if not fs:
        raise MalformedFunctionError("pointwise maximum of an empty list")
    if len(fs) == 1:
        return fs[0]
    return MaxOf(fs)


def invert(f: ScalarFn, y: float, bracket: tuple, tol: float = INVERT_TOL) -> float:
    """Preimage of `y` under `f` on a caller-certified bracket.

    `f` must be strictly increasing on [lo, hi] (certify with check_class);
    bisection returns r with |f(r) - y| <= tol.  Values outside
    [f(lo), f(hi)] raise OutOfRangeError: inversion outside the certified
    image must fail loudly rather than extrapolate.
    """
    y = _require_nonneg(y)
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0.0 <= lo < hi:
        raise DomainError(f"bracket must satisfy 0 <= lo < hi, got {bracket}")
    probes = [lo + (hi - lo) * k / 7.0 for k in range(8)]
    values = [f(r) for r in probes]
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ClassificationError(
            "function is not strictly increasing on the bracket; certify with check_class"
        )
    flo, fhi = values[0], values[-1]
    if y < flo - tol or y > fhi + tol:
        raise OutOfRangeError(
            f"y={y} outside certified image [{flo}, {fhi}] of the bracket"
        )
    if y <= flo:
        return lo
    if y >= fhi:
        return hi
    return _bisect(f, y, lo, hi, tol)


class FnTag(enum.IntEnum):
    """Comparison-class tags, ordered from weakest to strongest."""

    NOT_MONOTONE = 0
    POSITIVE_DEFINITE = 1
    CLASS_K = 2
    CLASS_K_INF = 3


@dataclass(frozen=True)
class FnClass:
    """Grid-certified classification of a scalar function."""

    tag: FnTag
    certified_range: tuple
    is_zero: bool = False

    def at_least(self, tag: FnTag) -> bool:
        return self.tag >= tag

    @property
    def is_class_k(self) -> bool:
        return self.tag >= FnTag.CLASS_K


def default_grid(top: float = 1e3, points: int = 16) -> tuple:
    """A sorted certification grid containing 0; log-spaced above it."""
    return (0.0,) + tuple(np.geomspace(1e-3, top, points - 1))


def check_class(f: ScalarFn, grid: Sequence[float]) -> FnClass:
    """Strongest comparison-class tag consistent with samples on `grid`.

    The grid must be sorted, contain 0 and have at least 8 points.  Strict
    increase (with a tiny relative margin) earns CLASS_K; the unbounded
    tail heuristic upgrades that to CLASS_K_INF.  The verdict is best
    effort and only valid on the recorded certified range.
    """
    grid = [float(r) for r in grid]
    if len(grid) < 8:
        raise ValueError("classification grid needs at least 8 points")
    if grid[0] != 0.0 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("classification grid must be sorted and start at 0")
    ys = [f(r) for r in grid]
    rng = (grid[0], grid[-1])

    if all(y == 0.0 for y in ys):
        return FnClass(FnTag.NOT_MONOTONE, rng, is_zero=True)

    zero_at_zero = abs(ys[0]) <= 1e-15
    positive = all(y > 0.0 for y in ys[1:])
    if not (zero_at_zero and positive):
        return FnClass(FnTag.NOT_MONOTONE, rng)

    increasing = all(
        y1 - y0 > 1e-12 * max(1.0, abs(y0)) * ((r1 - r0) / max(r1, 1.0))
        for (r0, y0), (r1, y1) in zip(zip(grid, ys), zip(grid[1:], ys[1:]))
    )
    if not increasing:
        return FnClass(FnTag.POSITIVE_DEFINITE, rng)

    if ys[-1] >= KINF_TAIL_RATIO * grid[-1]:
        return FnClass(FnTag.CLASS_K_INF, rng)
    return FnClass(FnTag.CLASS_K, rng)


def require_class(f: ScalarFn, tag: FnTag, grid: Sequence[float] | None = None) -> FnClass:
    """Classify and raise ClassificationError below the required tag."""
    cls = check_class(f, grid if grid is not None else default_grid())
    if not cls.at_least(tag):
        raise ClassificationError(
            f"function classified as {cls.tag.name} on {cls.certified_range}, "
            f"need at least {tag.name}"
        )
    return cls


def linear_slope(f: ScalarFn) -> float | None:
    """Slope of `f` if it is recognizably linear on [0, inf), else None.

    Used by operator fast paths; recognition is structural (Linear nodes,
    compositions, maxima and margins of linear pieces), never numerical.
    """
    if isinstance(f, Zero):
        return 0.0
    if isinstance(f, Identity):
        return 1.0
    if isinstance(f, Linear):
        return f.slope
    if isinstance(f, Power):
        return f.coeff if f.exponent == 1.0 else None
    if isinstance(f, IdPlus):
        s = linear_slope(f.inner)
        return None if s is None else 1.0 + s
    if isinstance(f, Compose):
        a, b = linear_slope(f.outer), linear_slope(f.inner)
        return None if a is None or b is None else a * b
    if isinstance(f, MaxOf):
        slopes = [linear_slope(t) for t in f.terms]
        if any(s is None for s in slopes):
            return None
        return max(slopes)
    if isinstance(f, InverseOf):
        s = linear_slope(f.inner)
        return 1.0 / s if s is not None and s > 0.0 else None
    return None
