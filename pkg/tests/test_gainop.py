import numpy as np
import pytest

from conftest import brute_force_apply, brute_force_chain_sup, random_linear_operator, random_seq
from sgnet import kfunc, sgc
from sgnet.errors import InvalidPerturbationError, WindowMismatchError
from sgnet.gainop import (
    GainOperator,
    NonnegSeq,
    cascade,
    example55,
    kleene_star,
    oplus,
    twonode,
    zero_operator,
)
from sgnet.kfunc import Identity, Linear, linear_slope


# --- sequences -------------------------------------------------------------

def test_seq_validation():
    with pytest.raises(ValueError):
        NonnegSeq(np.array([1.0, -0.1]))
    with pytest.raises(ValueError):
        NonnegSeq(np.array([1.0, np.inf]))
    with pytest.raises(ValueError):
        NonnegSeq(np.array([1.0]), tail=-1.0)


def test_seq_norms_and_constructors():
    ones = NonnegSeq.ones(4, 2.0)
    assert ones.tail == 2.0 and ones.sup_norm() == 2.0
    e2 = NonnegSeq.unit(2, 4)
    assert e2.tail == 0.0 and e2.component(2) == 1.0 and e2.component(9) == 0.0
    assert NonnegSeq.zeros(3).sup_norm() == 0.0
    assert NonnegSeq(np.array([0.1, 0.2]), tail=0.9).sup_norm() == 0.9


def test_oplus_examples():
    a = NonnegSeq.from_values([1.0, 0.0])
    b = NonnegSeq.from_values([0.0, 2.0])
    assert np.array_equal(oplus(a, b).values, [1.0, 2.0])
    assert oplus(a, a).approx_equal(a, 0.0)
    assert oplus(a, NonnegSeq.zeros(2)).approx_equal(a, 0.0)
    with pytest.raises(WindowMismatchError):
        oplus(a, NonnegSeq.zeros(3))


# --- application -----------------------------------------------------------

def test_example55_single_application():
    g = example55(16)
    out = g.apply(NonnegSeq.ones(16))
    assert out.component(6) == pytest.approx(5 / 6, abs=1e-15)
    assert out.component(5) == 0.0  # the feeding gain sits below a power of two


def test_apply_zero_is_zero():
    g = example55(16)
    assert g.apply(NonnegSeq.zeros(16)).sup_norm() == 0.0


def test_apply_matches_double_loop_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10):
        op = random_linear_operator(rng, 4)
        s = random_seq(rng, 4)
        expected = brute_force_apply(op, s)
        got = op.apply(s)
        assert np.allclose(got.values, expected, atol=0.0)


def test_apply_window_mismatch():
    with pytest.raises(WindowMismatchError):
        example55(8).apply(NonnegSeq.ones(9))


def test_iterate_examples():
    g = example55(16)
    ones = NonnegSeq.ones(16)
    assert g.iterate(ones, 3).component(8) == pytest.approx(5 / 8, abs=1e-12)
    assert g.iterate(ones, 0).approx_equal(ones, 0.0)
    c = cascade(0.5, 12)
    for k in range(5):
        assert c.iterate(NonnegSeq.ones(12, 2.0), k).values.max() == pytest.approx(
            2.0 * 0.5**k, abs=1e-12)


def test_generated_tail_uses_sentinel_row():
    c = cascade(0.5, 8)
    out = c.apply(NonnegSeq.ones(8, 1.0))
    assert out.tail == pytest.approx(0.5)  # sentinel row reads the last window entry
    ex = GainOperator(window=2, rows={1: ((2, Linear(0.5)),)})
    assert ex.apply(NonnegSeq.ones(2)).tail == 0.0  # explicit means fully specified


# --- scaling and perturbation ----------------------------------------------

def test_scale_slope_arithmetic():
    c = cascade(0.5, 4).scaled(Linear(0.2))
    entry = c.row(2)[0][1]
    assert linear_slope(entry) == pytest.approx(0.6)
    assert entry(1.0) == pytest.approx(0.6, rel=1e-12)


def test_scale_by_zero_is_identity():
    g = twonode(2.0, 0.2)
    scaled = g.scaled(kfunc.ZERO)
    s = NonnegSeq.from_values([0.7, 1.3])
    assert scaled.apply(s).approx_equal(g.apply(s), 0.0)


def test_scale_twonode_cycle_slope():
    g = twonode(2.0, 0.2).scaled(Linear(0.1))
    slopes = [linear_slope(g.row(i)[0][1]) for i in (1, 2)]
    assert slopes[0] == pytest.approx(2.2)
    assert slopes[1] == pytest.approx(0.22)
    assert slopes[0] * slopes[1] == pytest.approx(0.484)


def test_perturb_zero_operator():
    g = zero_operator(3).perturbed(1, 1, Linear(0.5))
    out = g.apply(NonnegSeq.unit(1, 3))
    assert np.allclose(out.values, [0.5, 0.0, 0.0])
    assert g.apply(NonnegSeq.zeros(3)).sup_norm() == 0.0


def test_perturb_requires_below_identity():
    with pytest.raises(InvalidPerturbationError):
        zero_operator(2).perturbed(1, 1, Linear(1.0))
    with pytest.raises(InvalidPerturbationError):
        zero_operator(2).perturbed(1, 1, Identity())


def test_perturbed_contraction_keeps_cycles_contractive():
    g = GainOperator(window=2, rows={
        1: ((2, Linear(0.5)),), 2: ((1, Linear(0.5)),),
    }).perturbed(1, 2, Linear(0.4))
    for nodes in sgc.enumerate_cycles(g):
        comp = sgc.cycle_composition(g, nodes)
        for r in (0.5, 1.0, 2.0):
            assert comp(r) < r


def test_perturb_merges_into_existing_entry():
    g = twonode(2.0, 0.2).perturbed(1, 2, Linear(0.4))
    # max(2.0, 0.4) stays 2.0 on the positive axis
    s = NonnegSeq.from_values([0.0, 1.0])
    assert g.apply(s).component(1) == pytest.approx(2.0)


# --- closure ---------------------------------------------------------------

def test_kleene_two_node_closure():
    res = kleene_star(twonode(2.0, 0.2), NonnegSeq.ones(2))
    # oracle: running max of the explicitly enumerated iterates
    # (1,1), (2,.2), (.4,.4), (.8,.08), ... never exceeds (2, 1)
    a, b = 1.0, 1.0
    run = np.array([a, b])
    for _ in range(60):
        a, b = 2.0 * b, 0.2 * a
        run = np.maximum(run, [a, b])
    assert np.allclose(res.closure.values, run, atol=1e-12)
    assert np.allclose(res.closure.values, [2.0, 1.0], atol=1e-12)
    assert res.converged


def test_kleene_zero_input():
    res = kleene_star(twonode(2.0, 0.2), NonnegSeq.zeros(2))
    assert res.closure.sup_norm() == 0.0
    assert res.depth_used == 0 and res.converged


def test_kleene_fixed_point_returned_unchanged():
    g = twonode(2.0, 0.2)
    fixed = NonnegSeq.from_values([2.0, 1.0])
    assert g.apply(fixed).leq(fixed)  # (2, 0.4) <= (2, 1): a point of decay
    res = kleene_star(g, fixed)
    assert res.closure.approx_equal(fixed, 1e-9)


def test_kleene_sandwich_and_decay():
    rng = np.random.default_rng(21)
    for _ in range(10):
        op = random_linear_operator(rng, 6)
        s = random_seq(rng, 6, sparse=True)
        res = kleene_star(op, s)
        assert res.converged
        assert s.leq(res.closure)
        assert op.apply(res.closure).leq(res.closure, 1e-9)


def test_kleene_upper_bound_from_contraction_certificate():
    # every perturbed variant of this operator contracts with omega = 0.4
    g = twonode(2.0, 0.2)
    omega_inv_slope = 1.0 / 0.4
    for r in (0.5, 1.0, 2.0):
        res = kleene_star(g, NonnegSeq.ones(2, r))
        assert res.closure.sup_norm() <= omega_inv_slope * r + 1e-9


def test_kleene_idempotent():
    rng = np.random.default_rng(5)
    for _ in range(10):
        op = random_linear_operator(rng, 5)
        s = random_seq(rng, 5)
        closure = kleene_star(op, s).closure
        again = kleene_star(op, closure)
        assert again.closure.approx_equal(closure, 1e-9)


def test_image_characterization_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(20):
        op = random_linear_operator(rng, 6)
        s = random_seq(rng, 6)
        fixed = kleene_star(op, s).closure.approx_equal(s, 1e-9)
        decays = op.apply(s).leq(s)
        assert fixed == decays
        # the closure of anything is itself a point of decay
        q = kleene_star(op, s).closure
        assert op.apply(q).leq(q, 1e-9)


def test_closure_is_continuous_in_the_input():
    rng = np.random.default_rng(37)
    for _ in range(10):
        op = random_linear_operator(rng, 5)
        s = random_seq(rng, 5)
        bump = rng.uniform(-1e-6, 1e-6, size=5)
        near = NonnegSeq(np.maximum(s.values + bump, 0.0))
        a = kleene_star(op, s).closure
        b = kleene_star(op, near).closure
        gap = max(np.abs(a.values - b.values).max(), abs(a.tail - b.tail))
        assert gap <= 100 * 1e-6  # chains amplify by at most the worst slope product


def test_chain_identity_small():
    rng = np.random.default_rng(3)
    for _ in range(5):
        op = random_linear_operator(rng, 5)
        for depth in range(5):
            for r in (0.5, 1.0, 2.0):
                brute = brute_force_chain_sup(op, depth, r)
                fast = op.iterate(NonnegSeq.ones(5, r), depth).values.max()
                assert abs(brute - fast) <= 1e-12


# --- structural properties ---------------------------------------------------

def test_monotonicity_of_application():
    rng = np.random.default_rng(17)
    for _ in range(20):
        op = random_linear_operator(rng, 6)
        s1 = random_seq(rng, 6)
        bump = rng.uniform(0.0, 1.0, size=6)
        s2 = NonnegSeq(s1.values + bump)
        assert op.apply(s1).leq(op.apply(s2))


def test_max_preservation_exact():
    rng = np.random.default_rng(29)
    for _ in range(20):
        op = random_linear_operator(rng, 6)
        s1, s2 = random_seq(rng, 6), random_seq(rng, 6, sparse=True)
        left = op.apply(s1.oplus(s2))
        right = op.apply(s1).oplus(op.apply(s2))
        assert left.approx_equal(right, 0.0)


def test_rows_are_sorted_and_zero_entries_dropped():
    op = GainOperator(window=3, rows={
        1: ((3, Linear(0.2)), (2, Linear(0.1)), (1, kfunc.ZERO)),
    })
    assert [j for j, _ in op.row(1)] == [2, 3]


def test_example55_zero_rows_at_powers_of_two():
    g = example55(32)
    # row i is empty exactly when i-1 is a power of two (>= 2)
    empty = {i for i in range(1, 33) if not g.row(i)}
    assert empty == {1, 3, 5, 9, 17}
