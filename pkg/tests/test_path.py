import numpy as np
import pytest

from conftest import random_linear_operator
from sgnet.errors import ConstructionRefusedError, DomainError
from sgnet.gainop import NonnegSeq, cascade, kleene_star, twonode, zero_operator
from sgnet.kfunc import Linear
from sgnet.path import (
    DecayPath,
    build_path,
    default_r_grid,
    identity_path,
    invert_path,
    verify_bilipschitz,
    verify_decay,
    verify_envelopes,
    verify_monotone,
)

GRID = np.geomspace(0.1, 10.0, 64)


@pytest.fixture(scope="module")
def twonode_path():
    return build_path(twonode(2.0, 0.2), Linear(0.1), GRID)


def _twonode_closure_oracle(r, steps=80):
    """Running maximum of the margin-scaled two-node iterates of r*(1,1)."""
    a = b = r
    run = np.array([a, b])
    for _ in range(steps):
        a, b = 2.2 * b, 0.22 * a
        run = np.maximum(run, [a, b])
    return run


def test_two_node_path_values(twonode_path):
    for k, r in enumerate(GRID):
        oracle = _twonode_closure_oracle(r)
        assert np.allclose(twonode_path.components[:, k], oracle, atol=1e-9)
    assert np.allclose(twonode_path.components[0], 2.2 * GRID, atol=1e-9)
    assert np.allclose(twonode_path.components[1], GRID, atol=1e-9)


def test_two_node_path_decay_margin_numbers(twonode_path):
    g = twonode(2.0, 0.2)
    point = twonode_path.point(np.argmin(np.abs(GRID - 1.0)))
    r = point.values[1]
    image = g.apply(point)
    # image (2r, 0.44r) against the margin-shrunk path (2r, 0.909r)
    assert image.values[0] == pytest.approx(2.0 * r, rel=1e-12)
    assert image.values[1] == pytest.approx(0.44 * r, rel=1e-12)
    assert np.allclose(point.values / 1.1, [2.0 * r, r / 1.1], rtol=1e-12)
    assert verify_decay(twonode_path, g).status.name == "NO_VIOLATION_FOUND"


def test_cascade_path_is_identity():
    p = build_path(cascade(0.5, 12), Linear(0.2), GRID)
    assert np.allclose(p.components, np.tile(GRID, (12, 1)), atol=0.0)
    assert verify_decay(p, cascade(0.5, 12)).status.name == "NO_VIOLATION_FOUND"


def test_zero_operator_path_is_the_ray():
    p = build_path(zero_operator(6), Linear(0.1), GRID)
    assert np.allclose(p.components[:, 0], GRID[0], atol=0.0)
    assert np.all(p.depths == 0)


def test_construction_refused_without_uniform_decay():
    # a unit-gain loop scaled by any margin expands, so no closure exists
    with pytest.raises(ConstructionRefusedError):
        build_path(twonode(1.0, 1.0), Linear(0.05), GRID, precheck_k_max=64)


def test_verify_monotone_flags_flat_segment(twonode_path):
    comp = twonode_path.components.copy()
    comp[0, 10] = comp[0, 9]  # flatten one segment of the first component
    corrupted = DecayPath(
        r_grid=twonode_path.r_grid, components=comp, tails=twonode_path.tails,
        rho=twonode_path.rho, sigma_min=twonode_path.sigma_min,
        sigma_max=twonode_path.sigma_max, theta=twonode_path.theta,
        depths=twonode_path.depths,
    )
    verdict = verify_monotone(corrupted)
    assert verdict.falsified and verdict.witness["kind"] == "flat"
    assert verdict.witness["i"] == 1


def test_verify_envelopes_with_contraction_certificate():
    p = build_path(twonode(2.0, 0.2), Linear(0.1), GRID, omega=Linear(0.4))
    # upper envelope is the inverse certificate 2.5 r; components reach 2.2 r
    assert verify_envelopes(p).status.name == "NO_VIOLATION_FOUND"
    assert p.sigma_max(1.0) == pytest.approx(2.5, abs=1e-8)


def test_bilipschitz_identity_and_two_node(twonode_path):
    ident = identity_path(4, GRID)
    c, big_c, verdict = verify_bilipschitz(ident, (0.5, 2.0))
    assert c == pytest.approx(1.0, abs=1e-9)
    assert big_c == pytest.approx(1.0, abs=1e-9)
    assert not verdict.falsified

    c, big_c, _ = verify_bilipschitz(twonode_path, (0.5, 2.0))
    assert c == pytest.approx(1 / 2.2, abs=1e-6)
    assert big_c == pytest.approx(1.0, abs=1e-6)

    with pytest.raises(DomainError):
        verify_bilipschitz(ident, (0.0, 1.0))


def test_bilipschitz_matches_divided_difference_scan():
    rows = {
        1: ((2, Linear(1.5)),),
        2: ((3, Linear(0.4)),),
        3: ((1, Linear(0.5)),),
    }
    from sgnet.gainop import GainOperator
    op = GainOperator(window=3, rows=rows)
    p = build_path(op, Linear(0.1), GRID)
    c, big_c, _ = verify_bilipschitz(p, (0.5, 2.0), samples=17)
    values = np.linspace(0.5, 2.0, 17)
    dds = []
    for i in (1, 2, 3):
        inv = np.array([invert_path(p, i, v) for v in values])
        for a in range(len(values)):
            for b in range(a + 1, len(values)):
                dds.append(abs(inv[b] - inv[a]) / (values[b] - values[a]))
    assert c == pytest.approx(min(dds), abs=0.0)
    assert big_c == pytest.approx(max(dds), abs=0.0)


def test_invert_path_examples(twonode_path):
    ident = identity_path(3, GRID)
    assert invert_path(ident, 1, 3.0) == pytest.approx(3.0, abs=1e-12)
    assert invert_path(twonode_path, 1, 2.2) == pytest.approx(1.0, abs=1e-9)
    assert invert_path(twonode_path, 2, 0.0) == 0.0
    with pytest.raises(DomainError):
        invert_path(ident, 1, -1.0)


def test_invert_path_extends_beyond_top_knot(twonode_path):
    top = GRID[-1]
    assert invert_path(twonode_path, 1, 2.2 * (top * 2)) == pytest.approx(2 * top, rel=1e-9)


def test_construction_runs_own_checks(twonode_path):
    # anything build_path returns already passed decay/envelope/monotonicity
    g = twonode(2.0, 0.2)
    assert not verify_decay(twonode_path, g).falsified
    assert not verify_envelopes(twonode_path).falsified
    assert not verify_monotone(twonode_path).falsified


def test_finite_representation_from_recorded_depths(twonode_path):
    scaled = twonode(2.0, 0.2).scaled(twonode_path.theta)
    for k, r in enumerate(twonode_path.r_grid):
        depth = int(twonode_path.depths[k])
        x = NonnegSeq.ones(2, float(r))
        running = x
        for _ in range(depth):
            x = scaled.apply(x)
            running = running.oplus(x)
        assert np.allclose(running.values, twonode_path.components[:, k], atol=1e-9)


def test_larger_margin_dominates():
    small = build_path(twonode(2.0, 0.2), Linear(0.05), GRID)
    large = build_path(twonode(2.0, 0.2), Linear(0.2), GRID)
    assert np.all(large.components >= small.components - 1e-12)


def test_segment_toward_image_stays_in_image():
    # points between s and its image remain points of decay
    rng = np.random.default_rng(41)
    for _ in range(5):
        op = random_linear_operator(rng, 5)
        q = kleene_star(op, NonnegSeq(rng.uniform(0.0, 2.0, size=5))).closure
        image = op.apply(q)
        for alpha in np.linspace(0.0, 1.0, 11):
            mid = NonnegSeq(alpha * q.values + (1 - alpha) * image.values,
                            alpha * q.tail + (1 - alpha) * image.tail)
            assert op.apply(mid).leq(mid, 1e-12)


def test_default_r_grid_density():
    grid = default_r_grid(0.1, 10.0)
    assert grid.size >= 128  # two decades, 64 points per decade
    assert grid[0] == pytest.approx(0.1) and grid[-1] == pytest.approx(10.0)


def test_gain_slope_bounds_reported(twonode_path):
    lo, hi = twonode_path.gain_slope_bounds
    assert lo == pytest.approx(0.2, abs=1e-12)
    assert hi == pytest.approx(2.0, abs=1e-12)
    from sgnet.path import gain_slope_bounds
    assert gain_slope_bounds(zero_operator(4), (0.5, 2.0)) is None
