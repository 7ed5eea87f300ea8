import math

import numpy as np
import pytest

from sgnet import kfunc, network, path as pathmod
from sgnet.errors import CapabilityError, DivergenceError, DomainError
from sgnet.kfunc import Identity, Linear, Power, Zero
from sgnet.network import (
    InputSignal,
    Network,
    Subsystem,
    check_decay_implication,
    check_iss_estimate,
    check_subsystem_implication,
    compose_V,
    comparison_solve,
    fit_iss_envelope,
    gamma_external,
    linear_cascade,
    simulate,
    twonode_network,
)

GRID = np.geomspace(1e-3, 100.0, 64)


def _random_states(net, count, seed, low=0.3, high=1.0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        x = rng.uniform(-1.0, 1.0, size=net.total_dim)
        x *= rng.uniform(low, high) / np.abs(x).max()
        out.append(x)
    return out


def _cascade_analytic(x0, coupling, t):
    """Closed-form solution of the unit-damped chain driven at rate coupling."""
    n = x0.size
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(i + 1):
            acc += x0[j] * (coupling * t) ** (i - j) / math.factorial(i - j)
        out[i] = math.exp(-t) * acc
    return out


# --- integration ---------------------------------------------------------------

def test_single_node_matches_exponential():
    net = linear_cascade(1)
    traj = simulate(net, np.array([1.0]), InputSignal.zero(), 1.0, 1e-3)
    assert abs(traj.states[-1][0] - math.exp(-1.0)) <= 1e-9


def test_cascade_matches_analytic_solution_and_decays():
    net = linear_cascade(50)
    x0 = np.ones(50)
    traj = simulate(net, x0, InputSignal.zero(), 4.0, 1e-3)
    for k in (1000, 2500, 4000):
        t = traj.times[k]
        assert np.allclose(traj.states[k], _cascade_analytic(x0, 0.25, t), atol=1e-9)
    assert np.abs(traj.states[-1]).max() < 0.1


def test_zero_initial_state_stays_zero():
    net = linear_cascade(5)
    traj = simulate(net, np.zeros(5), InputSignal.zero(), 1.0, 1e-3)
    assert np.all(traj.states == 0.0)


def test_generic_assembly_agrees_with_vectorized_field():
    net = linear_cascade(6)
    stripped = Network(
        net.subsystems, net.coercivity_lower, net.coercivity_upper,
        net.decay_floor, net.input_gain_bound, vector_field=None,
    )
    x0 = np.linspace(-1.0, 1.0, 6)
    sig = InputSignal.step(0.1, at=0.3)
    a = simulate(net, x0, sig, 1.0, 1e-3)
    b = simulate(stripped, x0, sig, 1.0, 1e-3)
    assert np.allclose(a.states, b.states, atol=1e-13)


def test_blowup_detected():
    unstable = Subsystem(
        dim=1, dynamics=lambda x, nb, u, t: 30.0 * x,
        lyapunov=network._abs_scalar, neighbors=(), gains=(),
        external_gain=Linear(1.0), decay_rate=Linear(0.01),
        coercivity_lower=Identity(), coercivity_upper=Identity(),
        lipschitz_bound=lambda R: 30.0,
    )
    net = Network([unstable], Identity(), Identity(), Linear(0.01), Linear(1.0))
    with pytest.raises(DivergenceError) as err:
        simulate(net, np.array([1.0]), InputSignal.zero(), 5.0, 1e-3)
    assert err.value.t_last > 0.0


def test_input_signal_segments():
    sig = InputSignal.step(0.2, at=1.0)
    assert np.all(sig.values_at(0.5, 3) == 0.0)
    assert np.all(sig.values_at(1.0, 3) == 0.2)  # right-continuous at the start
    with pytest.raises(ValueError):
        InputSignal(((0.5, lambda i: 0.0),))
    with pytest.raises(ValueError):
        InputSignal(((0.0, lambda i: 0.0), (0.0, lambda i: 1.0)))


def test_declared_bounds_verified():
    sub = linear_cascade(2).subsystems[0]
    with pytest.raises(Exception):
        Network([sub], Identity(), Identity(), Linear(0.5), Linear(4.0))  # floor above alpha


# --- composite evaluator ----------------------------------------------------------

def test_composite_value_identity_path():
    net = linear_cascade(3)
    V = compose_V(net, pathmod.identity_path(3, GRID))
    assert V(np.array([1.0, -2.0, 0.5])) == pytest.approx(2.0)
    assert V(np.zeros(3)) == 0.0


def test_composite_value_two_node_path():
    net = twonode_network()
    decay_path = pathmod.build_path(
        net.gain_operator(), Linear(0.1), np.geomspace(0.1, 10.0, 64))
    V = compose_V(net, decay_path)
    assert V(np.array([2.2, 0.5])) == pytest.approx(1.0, abs=1e-9)


def test_composite_coercivity_sandwich():
    net = twonode_network()
    decay_path = pathmod.build_path(
        net.gain_operator(), Linear(0.1), np.geomspace(0.01, 50.0, 128))
    V = compose_V(net, decay_path)
    rng = np.random.default_rng(3)
    for _ in range(1000):
        x = rng.uniform(-3.0, 3.0, size=2)
        norm = np.abs(x).max()
        if norm < 0.02:
            continue
        value = V(x)
        assert value <= norm + 1e-9                  # sigma_min = id
        assert value >= norm / 2.2 - 1e-6            # empirical upper envelope 2.2 r


def test_composite_local_lipschitz_quotients():
    net = linear_cascade(4)
    V = compose_V(net, pathmod.identity_path(4, GRID))
    rng = np.random.default_rng(9)
    for _ in range(200):
        x = rng.uniform(-2.0, 2.0, size=4)
        y = x + rng.uniform(-0.1, 0.1, size=4)
        if min(np.abs(x).max(), np.abs(y).max()) < 0.5:
            continue
        diff = abs(V(x) - V(y))
        assert diff <= np.abs(x - y).max() + 1e-12


# --- input gain composition ---------------------------------------------------------

def test_gamma_external_identity_envelope():
    net = linear_cascade(3)
    gamma = gamma_external(pathmod.identity_path(3, GRID, rho=Linear(0.1)), net)
    assert gamma(1.0) == pytest.approx(4.4, rel=1e-12)


def test_gamma_external_zero_inputs():
    net = linear_cascade(2)
    stripped = Network(
        [Subsystem(
            dim=1, dynamics=lambda x, nb, u, t: -x, lyapunov=network._abs_scalar,
            neighbors=(), gains=(), external_gain=Zero(), decay_rate=Linear(0.25),
            coercivity_lower=Identity(), coercivity_upper=Identity(),
            lipschitz_bound=lambda R: 1.0,
        )],
        Identity(), Identity(), Linear(0.25), Zero(),
    )
    gamma = gamma_external(pathmod.identity_path(1, GRID), stripped)
    assert isinstance(gamma, Zero)


def test_gamma_external_scaled_lower_envelope():
    ident = pathmod.identity_path(3, GRID, rho=Linear(0.1))
    halved = pathmod.DecayPath(
        r_grid=ident.r_grid, components=0.5 * ident.components, tails=0.5 * ident.tails,
        rho=Linear(0.1), sigma_min=Linear(0.5), sigma_max=Linear(0.5),
        theta=Linear(0.1), depths=ident.depths,
    )
    net = linear_cascade(3)
    gamma = gamma_external(halved, net)
    assert gamma(1.0) == pytest.approx(8.8, rel=1e-12)


# --- decay implication along trajectories ---------------------------------------------

@pytest.fixture(scope="module")
def cascade_run():
    net = linear_cascade(50)
    V = compose_V(net, pathmod.identity_path(50, GRID))
    gamma = gamma_external(pathmod.identity_path(50, GRID), net)
    traj = simulate(net, np.ones(50), InputSignal.zero(), 4.0, 1e-3)
    return net, V, gamma, traj


def test_decay_implication_cascade_passes(cascade_run):
    net, V, gamma, traj = cascade_run
    verdict = check_decay_implication(V, gamma, Linear(0.1), traj)
    assert not verdict.falsified
    assert "active=" in verdict.scope


def test_decay_implication_vacuous_when_gain_dominates(cascade_run):
    net, V, _, traj = cascade_run
    big_gamma = Linear(1e6)
    fake = network.Trajectory(traj.times, traj.states, traj.inputs, sup_input_norm=1.0)
    verdict = check_decay_implication(V, big_gamma, Linear(0.1), fake)
    assert not verdict.falsified
    assert "active=0" in verdict.scope


def test_decay_implication_rejects_inflated_rate(cascade_run):
    net, V, gamma, traj = cascade_run
    verdict = check_decay_implication(V, gamma, Linear(10.0), traj)
    assert verdict.falsified
    w = verdict.witness
    assert w["lhs"] > w["rhs"]


def test_zero_input_composite_value_nonincreasing(cascade_run):
    net, V, _, traj = cascade_run
    series = V.series(traj)
    assert np.all(np.diff(series) <= 1e-6)


def test_decay_implication_stride_validation(cascade_run):
    net, V, gamma, traj = cascade_run
    with pytest.raises(ValueError):
        check_decay_implication(V, gamma, Linear(0.1), traj, h=1e-4)
    with pytest.raises(ValueError):
        check_decay_implication(V, gamma, Linear(0.1), traj, h=10.0)


# --- per-subsystem implication ------------------------------------------------------

def test_subsystem_implication_arithmetic():
    net = linear_cascade(3)
    state = np.array([0.5, 1.0, 0.0])
    # premise 1 > max(0.5*0.5, 0) holds; derivative -1 + 0.125 <= -0.25
    assert check_subsystem_implication(net, 2, state, 0.0)
    # neighbor large enough to break the premise: vacuously true
    assert check_subsystem_implication(net, 2, np.array([4.0, 1.0, 0.0]), 0.0)


def test_subsystem_implication_detects_overclaimed_rate():
    net = linear_cascade(3, alpha_slope=2.0)
    state = np.array([0.5, 1.0, 0.0])
    assert not check_subsystem_implication(net, 2, state, 0.0)


def test_subsystem_implication_needs_gradient():
    net = linear_cascade(2)
    sub = net.subsystems[1]
    stripped = Subsystem(
        dim=sub.dim, dynamics=sub.dynamics, lyapunov=sub.lyapunov,
        neighbors=sub.neighbors, gains=sub.gains, external_gain=sub.external_gain,
        decay_rate=sub.decay_rate, coercivity_lower=sub.coercivity_lower,
        coercivity_upper=sub.coercivity_upper, lipschitz_bound=sub.lipschitz_bound,
        lyap_gradient=None,
    )
    net2 = Network([net.subsystems[0], stripped], net.coercivity_lower,
                   net.coercivity_upper, net.decay_floor, net.input_gain_bound)
    with pytest.raises(CapabilityError):
        check_subsystem_implication(net2, 2, np.array([0.5, 1.0]), 0.0)


# --- trajectory-level estimate -------------------------------------------------------

def _step_batch(net, count, seed, magnitude, horizon=4.0, dt=1e-3, at=0.5):
    rng = np.random.default_rng(seed)
    out = []
    for x0 in _random_states(net, count, rng.integers(1 << 31)):
        mags = rng.uniform(0.0, magnitude, size=net.window)
        sig = InputSignal.step(lambda i, m=mags: float(m[i - 1]), at=at)
        out.append(simulate(net, x0, sig, horizon, dt))
    return out


def test_iss_estimate_fit_and_holdout():
    net = linear_cascade(20)
    gamma = gamma_external(pathmod.identity_path(20, GRID), net)
    train = _step_batch(net, 6, 101, 0.1)
    test = _step_batch(net, 6, 202, 0.1)
    beta = fit_iss_envelope(train, net, gamma)
    assert beta.rate < 1.0
    verdict = check_iss_estimate(test, net, beta, gamma)
    assert not verdict.falsified


def test_iss_estimate_rejects_tightened_envelope():
    net = linear_cascade(20)
    gamma = gamma_external(pathmod.identity_path(20, GRID), net)
    train = _step_batch(net, 6, 303, 0.1)
    beta = fit_iss_envelope(train, net, gamma)
    tight = network.GeometricEnvelope(coeff=beta.coeff / 10.0, rate=beta.rate)
    verdict = check_iss_estimate(train, net, tight, gamma)
    assert verdict.falsified
    assert verdict.witness["lhs"] > verdict.witness["rhs"]


def test_iss_estimate_zero_batch_trivial():
    net = linear_cascade(5)
    gamma = gamma_external(pathmod.identity_path(5, GRID), net)
    traj = simulate(net, np.zeros(5), InputSignal.zero(), 1.0, 1e-3)
    beta = fit_iss_envelope([traj], net, gamma)
    assert not check_iss_estimate([traj], net, beta, gamma).falsified


# --- scalar comparison oracle ---------------------------------------------------------

def test_comparison_solve_analytic_curves():
    times, values = comparison_solve(Identity(), 1.0, 1.0, 1e-3)
    assert abs(values[-1] - math.exp(-1.0)) <= 1e-9
    times, values = comparison_solve(Power(1.0, 2.0), 1.0, 1.0, 1e-3)
    assert abs(values[-1] - 0.5) <= 1e-8
    _, flat = comparison_solve(Identity(), 0.0, 1.0, 1e-3)
    assert np.all(flat == 0.0)
    assert np.all(np.diff(values) <= 0.0)


def test_comparison_solve_rejects_negative_start():
    with pytest.raises(DomainError):
        comparison_solve(Identity(), -1.0, 1.0)


def test_comparison_principle_along_active_interval():
    # while a node's premise stays active, its Lyapunov value is dominated
    # by the scalar decay curve started at the interval's entry value
    net = linear_cascade(8)
    traj = simulate(net, np.ones(8), InputSignal.zero(), 3.0, 1e-3)
    i = 5
    vi = np.abs(traj.states[:, i - 1])
    premise = vi > 0.5 * np.abs(traj.states[:, i - 2])
    assert premise[0]
    end = int(np.argmin(premise)) if not premise.all() else len(premise)
    _, curve = comparison_solve(Linear(0.25), vi[0], traj.times[end - 1], 1e-3)
    assert np.all(vi[:end] <= curve[:end] + 1e-6)


# --- truncation consistency -----------------------------------------------------------

def test_doubling_window_preserves_prefix():
    small = linear_cascade(10)
    big = linear_cascade(20)
    x0 = np.linspace(1.0, 0.1, 10)
    x0_big = np.concatenate([x0, np.zeros(10)])
    a = simulate(small, x0, InputSignal.zero(), 2.0, 1e-3)
    b = simulate(big, x0_big, InputSignal.zero(), 2.0, 1e-3)
    assert np.allclose(a.states, b.states[:, :10], atol=1e-12)
    V_small = compose_V(small, pathmod.identity_path(10, GRID))
    V_big = compose_V(big, pathmod.identity_path(20, GRID))
    ks = [0, 500, 1000, 2000]
    for k in ks:
        assert V_small(a.states[k]) <= V_big(b.states[k]) + 1e-12
