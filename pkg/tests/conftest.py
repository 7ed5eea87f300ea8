"""Shared oracles and generators for the test suite.

The generators build random explicit operators whose cycle structure is
made contractive by rescaling; the oracles recompute operator behavior by
brute force (double loops, chain enumeration) independently of the
library's application path.
"""

import numpy as np

from sgnet import kfunc, sgc
from sgnet.gainop import GainOperator, NonnegSeq


def _worst_cycle_gain(op):
    worst = 0.0
    for nodes in sgc.enumerate_cycles(op):
        slope = kfunc.linear_slope(sgc.cycle_composition(op, nodes))
        worst = max(worst, slope)
    return worst


def random_linear_operator(rng, n, edge_prob=0.35, slope_range=(0.2, 1.4), margin=0.9):
    """Random sparse explicit operator with linear gains, cycles rescaled
    until every cycle gain sits at or below `margin` (so the exact cycle
    check certifies contraction with room to spare)."""
    rows = {}
    for i in range(1, n + 1):
        entries = []
        for j in range(1, n + 1):
            if i != j and rng.random() < edge_prob:
                entries.append((j, kfunc.Linear(float(rng.uniform(*slope_range)))))
        if entries:
            rows[i] = tuple(entries)
    op = GainOperator(window=n, rows=rows)
    for _ in range(300):
        if _worst_cycle_gain(op) <= margin:
            return op
        rows = {
            i: tuple((j, kfunc.Linear(fn.slope * 0.85)) for j, fn in row)
            for i, row in op.rows.items()
        }
        op = GainOperator(window=n, rows=rows)
    raise AssertionError("failed to rescale a random operator to contraction")


def random_seq(rng, n, sparse=False):
    vals = rng.uniform(0.0, 3.0, size=n)
    if sparse:
        mask = rng.random(n) < 0.5
        vals = np.where(mask, vals, 0.0)
        if vals.max() == 0.0:
            vals[rng.integers(0, n)] = 1.0
    return NonnegSeq(vals)


def brute_force_apply(op, s):
    """Row-by-row double loop over all (i, j) pairs, no vectorization."""
    out = np.zeros(op.window)
    for i in range(1, op.window + 1):
        best = 0.0
        for j, fn in op.row(i):
            best = max(best, fn(s.component(j)))
        out[i - 1] = best
    return out


def brute_force_chain_sup(op, depth, r, index_bound=None):
    """sup over all chains of `depth` composed gains, evaluated at r."""
    bound = index_bound if index_bound is not None else op.window

    def from_node(i, d):
        if d == 0:
            return r
        return max((fn(from_node(j, d - 1)) for j, fn in op.row(i)), default=0.0)

    if depth == 0:
        return float(r)
    return max(from_node(i, depth) for i in range(1, bound + 1))
