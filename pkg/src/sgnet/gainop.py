"""Max-type gain operators on the nonnegative sequence cone.

An operator maps a nonnegative sequence s to (max_j gain[i][j](s_j))_i.
Rows are finite; infinite networks are handled through a truncation
window N plus a scalar tail standing for every component beyond it, so
all verdicts derived here are "at truncation N" statements.

Component indices are 1-based throughout the public API, matching the
usual indexing of network nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kfunc
from .errors import (
    InvalidPerturbationError,
    WindowMismatchError,
)
from .kfunc import ScalarFn, linear_slope

__all__ = [
    "NonnegSeq",
    "GainOperator",
    "KleeneResult",
    "oplus",
    "kleene_star",
    "example55",
    "cascade",
    "twonode",
    "zero_operator",
    "KLEENE_EPS",
    "KLEENE_M_MAX",
]

KLEENE_EPS = 1e-9
KLEENE_M_MAX = 10_000


@dataclass(frozen=True, eq=False)
class NonnegSeq:
    """Finite window of a nonnegative bounded sequence.

    `values[k]` holds component k+1; every component beyond the window is
    assumed equal to `tail`.  The sup norm is the max of the window values
    and the tail.
    """

    values: np.ndarray
    tail: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("values must be a nonempty 1-d array")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0.0):
            raise ValueError("sequence entries must be finite and nonnegative")
        tail = float(self.tail)
        if not np.isfinite(tail) or tail < 0.0:
            raise ValueError("tail must be finite and nonnegative")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tail", tail)

    @property
    def window(self) -> int:
        return self.values.size

    def component(self, i: int) -> float:
        """Component i (1-based); indices beyond the window read the tail."""
        if i < 1:
            raise IndexError(f"component indices are 1-based, got {i}")
        if i <= self.window:
            return float(self.values[i - 1])
        return self.tail

    def sup_norm(self) -> float:
        return float(max(self.values.max(), self.tail))

    def oplus(self, other: "NonnegSeq") -> "NonnegSeq":
        """Componentwise maximum, tails included."""
        self._check_window(other)
        return NonnegSeq(np.maximum(self.values, other.values), max(self.tail, other.tail))

    def leq(self, other: "NonnegSeq", slack: float = 0.0) -> bool:
        """Componentwise self <= other + slack, tails included."""
        self._check_window(other)
        return bool(
            np.all(self.values <= other.values + slack)
            and self.tail <= other.tail + slack
        )

    def geq(self, other: "NonnegSeq") -> bool:
        return other.leq(self)

    def max_violation(self, other: "NonnegSeq") -> float:
        """Largest amount by which self exceeds other, 0 if dominated."""
        self._check_window(other)
        gap = float(np.max(self.values - other.values))
        return max(gap, self.tail - other.tail, 0.0)

    def approx_equal(self, other: "NonnegSeq", tol: float) -> bool:
        self._check_window(other)
        return bool(
            np.all(np.abs(self.values - other.values) <= tol)
            and abs(self.tail - other.tail) <= tol
        )

    def is_zero(self) -> bool:
        return self.sup_norm() == 0.0

    def _check_window(self, other: "NonnegSeq") -> None:
        if self.window != other.window:
            raise WindowMismatchError(
                f"window mismatch: {self.window} vs {other.window}"
            )

    # constructors ----------------------------------------------------

    @staticmethod
    def zeros(window: int) -> "NonnegSeq":
        return NonnegSeq(np.zeros(window), 0.0)

    @staticmethod
    def ones(window: int, value: float = 1.0) -> "NonnegSeq":
        """The constant ray value * (1,1,1,...); its tail equals value."""
        return NonnegSeq(np.full(window, float(value)), float(value))

    @staticmethod
    def unit(i: int, window: int) -> "NonnegSeq":
        """Coordinate vector e_i with zero tail."""
        vals = np.zeros(window)
        if not 1 <= i <= window:
            raise IndexError(f"unit index {i} outside window {window}")
        vals[i - 1] = 1.0
        return NonnegSeq(vals, 0.0)

    @staticmethod
    def from_values(values: Iterable[float], tail: float = 0.0) -> "NonnegSeq":
        return NonnegSeq(np.asarray(list(values), dtype=float), tail)

    def __repr__(self) -> str:
        vals = np.array2string(self.values, max_line_width=70, threshold=8)
        return f"NonnegSeq({vals}, tail={self.tail})"


def oplus(a: NonnegSeq, b: NonnegSeq) -> NonnegSeq:
    return a.oplus(b)


Row = Sequence[tuple]  # [(j, ScalarFn), ...]


def _normalize_row(row: Iterable[tuple]) -> tuple:
    """Sort a row by column and drop structurally zero entries."""
    cleaned = []
    for j, fn in row:
        j = int(j)
        if j < 1:
            raise ValueError(f"column indices are 1-based, got {j}")
        if linear_slope(fn) == 0.0:
            continue
        cleaned.append((j, fn))
    cleaned.sort(key=lambda e: e[0])
    return tuple(cleaned)


@dataclass(frozen=True, eq=False)
class GainOperator:
    """Sparse max-type operator built from per-row gain functions.

    Either fully explicit (`rows` maps row index to its entries) or
    procedurally generated (`row_rule(i)` yields the entries of row i, for
    any i >= 1).  Explicit operators produce a zero tail; generated ones
    evaluate the rule at the sentinel index window+1 to produce the tail.
    """

    window: int
    rows: Mapping[int, Row] | None = None
    row_rule: Callable[[int], Row] | None = None
    name: str = ""
    _row_cache: dict = field(default_factory=dict, repr=False)
    _compiled: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if (self.rows is None) == (self.row_rule is None):
            raise ValueError("provide exactly one of rows / row_rule")
        if self.rows is not None:
            normalized = {}
            for i, row in self.rows.items():
                i = int(i)
                if not 1 <= i <= self.window:
                    raise ValueError(f"row index {i} outside window {self.window}")
                entries = _normalize_row(row)
                if entries:
                    normalized[i] = entries
            object.__setattr__(self, "rows", normalized)

    @property
    def is_explicit(self) -> bool:
        return self.rows is not None

    def row(self, i: int) -> tuple:
        """Entries of row i as a sorted tuple of (column, gain)."""
        if i < 1:
            raise IndexError(f"row indices are 1-based, got {i}")
        if self.rows is not None:
            return self.rows.get(i, ())
        cached = self._row_cache.get(i)
        if cached is None:
            cached = _normalize_row(self.row_rule(i))
            self._row_cache[i] = cached
        return cached

    def support(self):
        """Yield (i, j, gain) over all nonzero entries within the window."""
        for i in range(1, self.window + 1):
            for j, fn in self.row(i):
                yield i, j, fn

    # application ------------------------------------------------------

    def _compile(self):
        """Split rows into a vectorizable linear part and exceptions.

        Rows holding a single linear entry are evaluated in one numpy
        gather; anything else (multi-entry or nonlinear rows) is listed as
        an exception and evaluated entry by entry.
        """
        if self._compiled:
            return self._compiled[0]
        n = self.window
        cols = np.zeros(n, dtype=np.intp)
        slopes = np.zeros(n)
        exceptions = []
        for i in range(1, n + 1):
            row = self.row(i)
            if not row:
                continue
            if len(row) == 1:
                j, fn = row[0]
                s = linear_slope(fn)
                if s is not None:
                    cols[i - 1] = j
                    slopes[i - 1] = s
                    continue
            exceptions.append((i, row))
        in_window = cols <= n
        cols_idx = np.where(cols >= 1, cols - 1, 0)
        plan = (cols, cols_idx, in_window, slopes, tuple(exceptions))
        self._compiled.append(plan)
        return plan

    def apply(self, s: NonnegSeq) -> NonnegSeq:
        """One application: component i is max_j gain[i][j](s_j)."""
        if s.window != self.window:
            raise WindowMismatchError(
                f"operator window {self.window}, sequence window {s.window}"
            )
        cols, cols_idx, in_window, slopes, exceptions = self._compile()
        gathered = np.where(in_window, s.values[cols_idx], s.tail)
        out = slopes * gathered
        for i, row in exceptions:
            out[i - 1] = max(fn(s.component(j)) for j, fn in row)
        tail = 0.0
        if self.row_rule is not None:
            sentinel = self.row(self.window + 1)
            if sentinel:
                tail = max(fn(s.component(j)) for j, fn in sentinel)
        return NonnegSeq(out, tail)

    def iterate(self, s: NonnegSeq, k: int) -> NonnegSeq:
        """k-fold application; k=0 returns s unchanged."""
        if k < 0:
            raise ValueError("iteration count must be >= 0")
        out = s
        for _ in range(k):
            out = self.apply(out)
        return out

    # derived operators -------------------------------------------------

    def scaled(self, theta: ScalarFn) -> "GainOperator":
        """Every gain g replaced by (id + theta) o g; support unchanged."""
        if linear_slope(theta) == 0.0:
            return self
        kfunc.require_class(theta, kfunc.FnTag.CLASS_K)
        wrapper = kfunc.IdPlus(theta)

        def transform(row):
            return tuple((j, kfunc.compose(wrapper, fn)) for j, fn in row)

        if self.rows is not None:
            return GainOperator(
                window=self.window,
                rows={i: transform(r) for i, r in self.rows.items()},
                name=f"{self.name}+scaled" if self.name else "scaled",
            )
        base = self.row_rule
        return GainOperator(
            window=self.window,
            row_rule=lambda i: transform(_normalize_row(base(i))),
            name=f"{self.name}+scaled" if self.name else "scaled",
        )

    def perturbed(self, i: int, j: int, omega: ScalarFn,
                  grid: Sequence[float] | None = None) -> "GainOperator":
        """Max-merge `omega` into row i at column j.

        The result maps s to apply(s) oplus omega(s_j) e_i.  The
        perturbation gain must sit strictly below the identity on the test
        grid; anything else is refused.
        """
        if not 1 <= i <= self.window:
            raise WindowMismatchError(f"perturbation row {i} outside window {self.window}")
        if j < 1:
            raise ValueError(f"column indices are 1-based, got {j}")
        _require_below_identity(omega, grid)

        def transform(row_index, row):
            if row_index != i:
                return row
            merged = dict(row)
            merged[j] = kfunc.max_of([merged[j], omega]) if j in merged else omega
            return tuple(sorted(merged.items()))

        if self.rows is not None:
            rows = {k: r for k, r in self.rows.items()}
            rows[i] = transform(i, rows.get(i, ()))
            return GainOperator(window=self.window, rows=rows, name=self.name)
        base = self.row_rule
        return GainOperator(
            window=self.window,
            row_rule=lambda k: transform(k, _normalize_row(base(k))),
            name=self.name,
        )


def _require_below_identity(omega: ScalarFn, grid: Sequence[float] | None = None) -> None:
    grid = grid if grid is not None else kfunc.default_grid()
    kfunc.require_class(omega, kfunc.FnTag.CLASS_K, grid)
    for r in grid:
        if r > 0.0 and omega(r) >= r:
            raise InvalidPerturbationError(
                f"perturbation gain reaches the identity at r={r}: {omega(r)} >= {r}"
            )


@dataclass(frozen=True)
class KleeneResult:
    """Outcome of the iterated-maximum closure computation."""

    closure: NonnegSeq
    depth_used: int
    residual: float
    converged: bool


def kleene_star(g: GainOperator, s: NonnegSeq, eps: float = KLEENE_EPS,
                m_max: int = KLEENE_M_MAX) -> KleeneResult:
    """Running maximum of the iterates of `g` started at `s`.

    Computes M_m = s oplus g(s) oplus ... oplus g^m(s) and stops at the
    first m whose iterate both adds at most `eps` to the running maximum
    and has sup norm at most `eps`; the closure reported is the running
    maximum just before that iterate, which therefore satisfies the decay
    margin  g(closure) <= closure + eps * ones  by construction.  Hitting
    `m_max` first is reported as non-convergence, not an error.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    running = s
    iterate = s
    for m in range(1, m_max + 1):
        iterate = g.apply(iterate)
        growth = iterate.max_violation(running)
        if growth <= eps and iterate.sup_norm() <= eps:
            return KleeneResult(running, depth_used=m - 1, residual=growth, converged=True)
        running = running.oplus(iterate)
        if running.sup_norm() > 1e150:
            # expanding orbit: the running maximum cannot stabilize
            break
    return KleeneResult(running, depth_used=m, residual=float("inf"), converged=False)


# ---------------------------------------------------------------------------
# presets


def example55(window: int) -> GainOperator:
    """Chain of linear gains k/(k+1) with the gain zeroed below powers of two.

    Row i reads component i-1 through the slope (i-1)/i unless i-1 is a
    power of two (>= 2), in which case the row is empty.  Iterates of the
    all-ones ray then keep sup norm >= 1/2 over ever longer stretches while
    every single component still dies out, which separates componentwise
    from uniform decay.
    """

    def rule(i: int):
        k = i - 1
        if k < 1 or _is_power_of_two(k):
            return ()
        return ((k, kfunc.Linear(k / (k + 1))),)

    return GainOperator(window=window, row_rule=rule, name="example55")


def _is_power_of_two(k: int) -> bool:
    return k >= 2 and (k & (k - 1)) == 0


def cascade(slope: float, window: int) -> GainOperator:
    """Unidirectional chain: row i reads component i-1 through Linear(slope)."""
    gain = kfunc.Linear(slope)

    def rule(i: int):
        if i <= 1:
            return ()
        return ((i - 1, gain),)

    return GainOperator(window=window, row_rule=rule, name=f"cascade({slope})")


def twonode(a: float, b: float) -> GainOperator:
    """Two nodes in a loop: gain a from node 2 into node 1 and b back."""
    return GainOperator(
        window=2,
        rows={1: ((2, kfunc.Linear(a)),), 2: ((1, kfunc.Linear(b)),)},
        name=f"twonode({a},{b})",
    )


def zero_operator(window: int) -> GainOperator:
    """The operator with no gains at all; maps everything to zero."""
    return GainOperator(window=window, rows={}, name="zero")
