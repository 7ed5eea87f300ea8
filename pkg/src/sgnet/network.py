"""Finite truncations of interconnected ODE networks.

Subsystems carry their own dynamics, Lyapunov data and gain rows; the
network couples finitely many of them (the truncation window), integrates
trajectories with fixed-step RK4, assembles the composite Lyapunov
evaluator from a decay path, and re-checks the decay implication and the
trajectory-level stability estimate along simulated paths.

External input channels are scalar per subsystem.  Fixed-step integration
is deliberate: determinism and reproducibility of the reported numbers
beat adaptive efficiency at this scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kfunc
from .errors import (
    CapabilityError,
    ConstructionRefusedError,
    DivergenceError,
    DomainError,
)
from .gainop import GainOperator
from .kfunc import ScalarFn
from .path import DecayPath, invert_path
from .sgc import GeometricEnvelope, Verdict, VerdictStatus

__all__ = [
    "Subsystem",
    "Network",
    "InputSignal",
    "Trajectory",
    "simulate",
    "CompositeLyapunov",
    "compose_V",
    "gamma_external",
    "check_decay_implication",
    "check_subsystem_implication",
    "fit_iss_envelope",
    "check_iss_estimate",
    "comparison_solve",
    "linear_cascade",
    "twonode_network",
    "DEFAULT_DT",
    "BLOWUP_NORM",
]

DEFAULT_DT = 1e-3
BLOWUP_NORM = 1e12
_BOUND_GRID = tuple(np.geomspace(1e-3, 1e3, 9))


@dataclass(frozen=True, eq=False)
class Subsystem:
    """One node of the network: dynamics plus Lyapunov-side data.

    `dynamics(x_own, neighbor_states, u, t)` returns the state derivative,
    with neighbor states passed as a tuple following the order of
    `neighbors`.  `gains` lists the internal gain row (j, gain) toward the
    Lyapunov values of the neighbors; its support must stay inside
    `neighbors`.
    """

    dim: int
    dynamics: Callable
    lyapunov: Callable
    neighbors: tuple
    gains: tuple
    external_gain: ScalarFn
    decay_rate: ScalarFn
    coercivity_lower: ScalarFn
    coercivity_upper: ScalarFn
    lipschitz_bound: Callable[[float], float]
    lyap_gradient: Callable | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("subsystem dimension must be >= 1")
        neighbors = tuple(int(j) for j in self.neighbors)
        gains = tuple((int(j), fn) for j, fn in self.gains)
        support = {j for j, _ in gains}
        if not support.issubset(neighbors):
            raise ValueError(f"gain row support {support} outside neighbors {neighbors}")
        object.__setattr__(self, "neighbors", neighbors)
        object.__setattr__(self, "gains", gains)


class Network:
    """A finite window of coupled subsystems with uniform Lyapunov bounds.

    The declared uniform bounds (coercivity envelope, decay floor, input
    gain bound) are verified by sampling against every subsystem on a grid
    at construction time.  An optional `vector_field(x, u_values, t)`
    short-circuits the per-subsystem derivative assembly for presets whose
    full right-hand side vectorizes.
    """

    def __init__(self, subsystems: Sequence[Subsystem],
                 coercivity_lower: ScalarFn, coercivity_upper: ScalarFn,
                 decay_floor: ScalarFn, input_gain_bound: ScalarFn,
                 vector_field: Callable | None = None, name: str = ""):
        self.subsystems = list(subsystems)
        if not self.subsystems:
            raise ValueError("network needs at least one subsystem")
        self.coercivity_lower = coercivity_lower
        self.coercivity_upper = coercivity_upper
        self.decay_floor = decay_floor
        self.input_gain_bound = input_gain_bound
        self.vector_field = vector_field
        self.name = name

        offsets = np.cumsum([0] + [s.dim for s in self.subsystems])
        self._slices = [(int(a), int(b)) for a, b in zip(offsets, offsets[1:])]
        self.total_dim = int(offsets[-1])
        for i, sub in enumerate(self.subsystems, start=1):
            if i in sub.neighbors:
                raise ValueError(f"subsystem {i} lists itself as a neighbor")
            for j in sub.neighbors:
                if not 1 <= j <= len(self.subsystems):
                    raise ValueError(f"subsystem {i} references neighbor {j} outside window")
        self._verify_uniform_bounds()

    @property
    def window(self) -> int:
        return len(self.subsystems)

    def _verify_uniform_bounds(self):
        for i, sub in enumerate(self.subsystems, start=1):
            for r in _BOUND_GRID:
                if self.coercivity_lower(r) > sub.coercivity_lower(r) + 1e-12:
                    raise ConstructionRefusedError(
                        f"declared lower coercivity exceeds subsystem {i}'s at r={r}")
                if sub.coercivity_upper(r) > self.coercivity_upper(r) + 1e-12:
                    raise ConstructionRefusedError(
                        f"subsystem {i}'s upper coercivity exceeds the declared bound at r={r}")
                if sub.decay_rate(r) < self.decay_floor(r) - 1e-12:
                    raise ConstructionRefusedError(
                        f"subsystem {i}'s decay rate falls below the declared floor at r={r}")
                if sub.external_gain(r) > self.input_gain_bound(r) + 1e-12:
                    raise ConstructionRefusedError(
                        f"subsystem {i}'s external gain exceeds the declared bound at r={r}")

    def block(self, x: np.ndarray, i: int) -> np.ndarray:
        a, b = self._slices[i - 1]
        return x[a:b]

    def state_norm(self, x: np.ndarray) -> float:
        """Sup over subsystems of the per-subsystem Euclidean norm."""
        if self.total_dim == self.window:
            return float(np.abs(x).max())
        return max(
            float(np.linalg.norm(x[a:b])) for a, b in self._slices
        )

    def gain_operator(self) -> GainOperator:
        """The explicit max-type operator collecting all gain rows."""
        rows = {}
        for i, sub in enumerate(self.subsystems, start=1):
            if sub.gains:
                rows[i] = sub.gains
        return GainOperator(window=self.window, rows=rows,
                            name=f"gains({self.name or 'network'})")

    def assemble_field(self) -> Callable:
        """Derivative of the full state from per-subsystem dynamics."""
        if self.vector_field is not None:
            return self.vector_field
        slices = self._slices
        neighbor_slices = [
            tuple(slices[j - 1] for j in sub.neighbors) for sub in self.subsystems
        ]
        subsystems = self.subsystems

        def field(x, u_values, t):
            dx = np.empty_like(x)
            for idx, sub in enumerate(subsystems):
                a, b = slices[idx]
                nb = tuple(x[c:d] for c, d in neighbor_slices[idx])
                dx[a:b] = sub.dynamics(x[a:b], nb, u_values[idx], t)
            return dx

        return field


@dataclass(frozen=True, eq=False)
class InputSignal:
    """Piecewise right-continuous input: (start time, per-index value) segments.

    The value active on [start_k, start_{k+1}) is segment k's; starts must
    strictly increase from 0.  Per-segment value vectors are cached, so
    sampling is cheap inside integration loops.
    """

    segments: tuple
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        segs = tuple((float(t0), fn) for t0, fn in self.segments)
        if not segs or segs[0][0] != 0.0:
            raise ValueError("segments must start at t=0")
        if any(b[0] <= a[0] for a, b in zip(segs, segs[1:])):
            raise ValueError("segment start times must be strictly increasing")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_starts", np.array([t0 for t0, _ in segs]))

    def values_at(self, t: float, n: int) -> np.ndarray:
        seg = int(np.searchsorted(self._starts, t, side="right")) - 1
        seg = max(seg, 0)
        key = (seg, n)
        cached = self._cache.get(key)
        if cached is None:
            fn = self.segments[seg][1]
            cached = np.array([float(fn(i)) for i in range(1, n + 1)])
            if not np.all(np.isfinite(cached)):
                raise ValueError(f"input segment {seg} produced non-finite values")
            self._cache[key] = cached
        return cached

    @staticmethod
    def zero() -> "InputSignal":
        return InputSignal(((0.0, lambda i: 0.0),))

    @staticmethod
    def constant(value) -> "InputSignal":
        fn = value if callable(value) else (lambda i, v=float(value): v)
        return InputSignal(((0.0, fn),))

    @staticmethod
    def step(value, at: float = 0.0) -> "InputSignal":
        """Zero until `at`, then the given per-index value (or scalar)."""
        fn = value if callable(value) else (lambda i, v=float(value): v)
        if at <= 0.0:
            return InputSignal(((0.0, fn),))
        return InputSignal(((0.0, lambda i: 0.0), (float(at), fn)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Fixed-step trajectory: times, stacked states and sampled inputs."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    sup_input_norm: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def initial_state(self) -> np.ndarray:
        return self.states[0]


def simulate(net: Network, x0, u: InputSignal, horizon: float,
             dt: float = DEFAULT_DT) -> Trajectory:
    """Classical RK4 integration of the truncated network over [0, horizon].

    Inputs are sampled right-continuously at stage times.  A state whose
    norm exceeds the blow-up threshold (or stops being finite) aborts with
    DivergenceError carrying the last valid time.
    """
    if dt <= 0.0 or horizon <= 0.0:
        raise ValueError("need dt > 0 and horizon > 0")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (net.total_dim,):
        raise ValueError(f"initial state must have shape ({net.total_dim},)")
    n_steps = int(round(horizon / dt))
    n = net.window
    field = net.assemble_field()

    times = np.arange(n_steps + 1) * dt
    states = np.empty((n_steps + 1, net.total_dim))
    inputs = np.empty((n_steps + 1, n))
    states[0] = x
    inputs[0] = u.values_at(0.0, n)

    half = 0.5 * dt
    for k in range(n_steps):
        t = times[k]
        u0 = u.values_at(t, n)
        um = u.values_at(t + half, n)
        u1 = u.values_at(t + dt, n)
        k1 = field(x, u0, t)
        k2 = field(x + half * k1, um, t + half)
        k3 = field(x + half * k2, um, t + half)
        k4 = field(x + dt * k3, u1, t + dt)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.abs(x).max() > BLOWUP_NORM:
            raise DivergenceError(float(t), float(np.abs(x[np.isfinite(x)]).max(initial=0.0)))
        states[k + 1] = x
        inputs[k + 1] = u1
    sup_u = float(np.abs(inputs).max()) if inputs.size else 0.0
    return Trajectory(times=times, states=states, inputs=inputs, sup_input_norm=sup_u)


class CompositeLyapunov:
    """max_i of inverse path component i applied to the i-th Lyapunov value."""

    def __init__(self, net: Network, decay_path: DecayPath):
        if decay_path.window < net.window:
            raise ValueError(
                f"path window {decay_path.window} smaller than network window {net.window}"
            )
        self.net = net
        self.path = decay_path
        # Identity components invert trivially; worth detecting once.
        self._identity = bool(
            np.allclose(decay_path.components, decay_path.r_grid[None, :], rtol=0.0, atol=0.0)
        )

    def subsystem_values(self, x: np.ndarray) -> np.ndarray:
        net = self.net
        return np.array([
            float(sub.lyapunov(net.block(x, i)))
            for i, sub in enumerate(net.subsystems, start=1)
        ])

    def components(self, x: np.ndarray) -> np.ndarray:
        vi = self.subsystem_values(x)
        if self._identity:
            return vi
        return np.array([
            invert_path(self.path, i, v) for i, v in enumerate(vi, start=1)
        ])

    def __call__(self, x: np.ndarray) -> float:
        return float(self.components(x).max())

    def series(self, traj: Trajectory) -> np.ndarray:
        return np.array([self(state) for state in traj.states])


def compose_V(net: Network, decay_path: DecayPath) -> CompositeLyapunov:
    """Composite Lyapunov evaluator for the network along a decay path."""
    return CompositeLyapunov(net, decay_path)


def gamma_external(decay_path: DecayPath, net: Network) -> ScalarFn:
    """Input gain of the composite function.

    Lower envelope inverse, then the decay margin, then the uniform bound
    on the subsystem input gains.
    """
    sigma_min = decay_path.sigma_min
    if isinstance(sigma_min, kfunc.Identity):
        inv = kfunc.IDENTITY
    elif isinstance(sigma_min, kfunc.Linear) and sigma_min.slope > 0.0:
        inv = kfunc.Linear(1.0 / sigma_min.slope)
    else:
        inv = kfunc.InverseOf(sigma_min)
    margin = kfunc.IdPlus(decay_path.rho)
    return kfunc.compose(inv, kfunc.compose(margin, net.input_gain_bound))


def check_decay_implication(V: CompositeLyapunov, gamma: ScalarFn,
                            alpha_hat: ScalarFn, traj: Trajectory,
                            h: float | None = None,
                            tol: float | None = None) -> Verdict:
    """Forward-difference decay test at every active grid time.

    At each grid time where the composite value exceeds gamma of the input
    norm, require (V(t+h) - V(t))/h <= -alpha_hat(V(t)) + tol.  The stride
    h defaults to 5 time steps and tol, when not given, to 10*h times the
    observed slope bound of the series (one-sided differences of an upper
    orbital derivative need that much slack).
    """
    kfunc.require_class(alpha_hat, kfunc.FnTag.POSITIVE_DEFINITE)
    dt = traj.dt
    h = 5.0 * dt if h is None else float(h)
    stride = int(round(h / dt))
    if stride < 1 or h < dt - 1e-15:
        raise ValueError(f"stride h={h} must be at least one time step dt={dt}")
    if stride >= traj.times.size:
        raise ValueError("horizon too short for the requested stride")

    values = V.series(traj)
    threshold = gamma(traj.sup_input_norm)
    if tol is None:
        slope_bound = float(np.abs(np.diff(values)).max() / dt) if values.size > 1 else 0.0
        tol = 10.0 * h * slope_bound + 1e-12

    active = 0
    for k in range(values.size - stride):
        v = values[k]
        if v <= threshold:
            continue
        active += 1
        lhs = (values[k + stride] - v) / h
        rhs = -alpha_hat(v) + tol
        if lhs > rhs:
            return Verdict(
                VerdictStatus.FALSIFIED,
                witness={"kind": "decay-implication", "t": float(traj.times[k]),
                         "lhs": float(lhs), "rhs": float(rhs), "value": float(v)},
                scope=f"grid times={values.size}; active={active}; h={h}; tol={tol:g}",
            )
    return Verdict(
        VerdictStatus.NO_VIOLATION_FOUND,
        scope=f"grid times={values.size}; active={active}; h={h}; tol={tol:g}",
    )


def check_subsystem_implication(net: Network, i: int, x: np.ndarray, u_i: float,
                                tol: float = 1e-9) -> bool:
    """Gradient-form decay implication for one subsystem at one state.

    Vacuously true when the premise (own Lyapunov value above every gained
    neighbor value and the gained input) fails.  Needs the subsystem's
    Lyapunov gradient.
    """
    sub = net.subsystems[i - 1]
    if sub.lyap_gradient is None:
        raise CapabilityError(f"subsystem {i} provides no Lyapunov gradient")
    xi = net.block(x, i)
    vi = float(sub.lyapunov(xi))
    gained = [fn(float(net.subsystems[j - 1].lyapunov(net.block(x, j))))
              for j, fn in sub.gains]
    premise_level = max([*gained, sub.external_gain(abs(float(u_i)))], default=0.0)
    if vi <= premise_level:
        return True
    neighbors = tuple(net.block(x, j) for j in sub.neighbors)
    derivative = float(np.dot(
        np.atleast_1d(sub.lyap_gradient(xi)),
        np.atleast_1d(sub.dynamics(xi, neighbors, u_i, 0.0)),
    ))
    return derivative <= -sub.decay_rate(vi) + tol


def fit_iss_envelope(trajs: Sequence[Trajectory], net: Network,
                     gamma_iss: ScalarFn, headroom: float = 1.5) -> GeometricEnvelope:
    """Geometric transient envelope fitted over a training batch.

    The excess of the state norm over the input gain, normalized by the
    initial norm, must be dominated by coeff * rate**t.  The rate is
    fitted on the per-time upper envelope of the batch near its peak (the
    region where the transient actually lives), then its log-slope is
    halved: held-out trajectories explore directions whose transients the
    training batch underrepresents, and a too-fast rate cannot be repaired
    by any coefficient.  The coefficient is the headroom-inflated maximum
    needed to cover every training point under the softened rate.
    """
    points = []
    envelope: dict[float, float] = {}
    for traj in trajs:
        r0 = net.state_norm(traj.initial_state())
        if r0 <= 0.0:
            continue
        offset = gamma_iss(traj.sup_input_norm)
        for t, state in zip(traj.times, traj.states):
            excess = net.state_norm(state) - offset
            if excess > 1e-12:
                t = float(t)
                ratio = excess / r0
                points.append((t, ratio))
                envelope[t] = max(envelope.get(t, 0.0), ratio)
    if len(points) < 2:
        return GeometricEnvelope(coeff=headroom, rate=0.5)
    peak = max(envelope.values())
    fit_pairs = [(t, math.log(v)) for t, v in envelope.items()
                 if v >= peak * 10.0**-1.5]
    if len({t for t, _ in fit_pairs}) < 2:
        fit_pairs = [(t, math.log(v)) for t, v in envelope.items()]
    ts_arr = np.asarray([t for t, _ in fit_pairs])
    logs_arr = np.asarray([lg for _, lg in fit_pairs])
    design = np.vstack([np.ones_like(ts_arr), ts_arr]).T
    (_, log_rate), *_ = np.linalg.lstsq(design, logs_arr, rcond=None)
    rate = min(math.exp(0.5 * min(log_rate, 0.0)), 0.999999)
    coeff = max(ratio / rate**t for t, ratio in points)
    return GeometricEnvelope(coeff=headroom * coeff, rate=rate)


def check_iss_estimate(trajs: Sequence[Trajectory], net: Network, beta,
                       gamma_iss: ScalarFn, tol: float = 1e-9) -> Verdict:
    """Pointwise transient-plus-gain bound over a batch of trajectories."""
    for idx, traj in enumerate(trajs):
        r0 = net.state_norm(traj.initial_state())
        offset = gamma_iss(traj.sup_input_norm)
        for t, state in zip(traj.times, traj.states):
            lhs = net.state_norm(state)
            rhs = beta(r0, t) + offset + tol
            if lhs > rhs:
                return Verdict(
                    VerdictStatus.FALSIFIED,
                    witness={"kind": "trajectory-bound", "trajectory": idx,
                             "t": float(t), "lhs": float(lhs), "rhs": float(rhs)},
                    scope=f"trajectories={len(trajs)}",
                )
    return Verdict(VerdictStatus.NO_VIOLATION_FOUND, scope=f"trajectories={len(trajs)}")


def comparison_solve(alpha: ScalarFn, v0: float, horizon: float,
                     dt: float = DEFAULT_DT):
    """RK4 solution of the scalar decay equation v' = -alpha(v).

    The curve is nonnegative and nonincreasing; it serves as a dominating
    oracle for any differentiable function with the same initial value
    whose derivative is bounded by -alpha of itself.
    """
    kfunc.require_class(alpha, kfunc.FnTag.POSITIVE_DEFINITE)
    if v0 < 0.0:
        raise DomainError("initial value must be nonnegative")
    n_steps = int(round(horizon / dt))
    times = np.arange(n_steps + 1) * dt
    values = np.empty(n_steps + 1)
    values[0] = v = float(v0)

    def rhs(w):
        return -alpha(max(w, 0.0))

    half = 0.5 * dt
    for k in range(n_steps):
        k1 = rhs(v)
        k2 = rhs(v + half * k1)
        k3 = rhs(v + half * k2)
        k4 = rhs(v + dt * k3)
        v = max(v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), 0.0)
        values[k + 1] = v
    return times, values


# ---------------------------------------------------------------------------
# presets


def _abs_scalar(x) -> float:
    return abs(float(x[0]))


def _sign_gradient(x) -> np.ndarray:
    return np.array([math.copysign(1.0, float(x[0]))])


def linear_cascade(n: int, self_rate: float = 1.0, coupling: float = 0.25,
                   gain_slope: float = 0.5, external_slope: float = 4.0,
                   alpha_slope: float = 0.25) -> Network:
    """Scalar chain: node i is damped by itself and driven by node i-1.

    With the default rates the gain row Linear(gain_slope) and decay rate
    Linear(alpha_slope) make each node's decay implication hold exactly:
    under the premise, the damping dominates the coupling plus the input.
    """
    gain = kfunc.Linear(gain_slope)
    ext = kfunc.Linear(external_slope)
    alpha = kfunc.Linear(alpha_slope)

    def head_dynamics(x, nb, u, t):
        return -self_rate * x + u

    def chain_dynamics(x, nb, u, t):
        return -self_rate * x + coupling * nb[0] + u

    subsystems = []
    for i in range(1, n + 1):
        subsystems.append(Subsystem(
            dim=1,
            dynamics=head_dynamics if i == 1 else chain_dynamics,
            lyapunov=_abs_scalar,
            lyap_gradient=_sign_gradient,
            neighbors=() if i == 1 else (i - 1,),
            gains=() if i == 1 else ((i - 1, gain),),
            external_gain=ext,
            decay_rate=alpha,
            coercivity_lower=kfunc.IDENTITY,
            coercivity_upper=kfunc.IDENTITY,
            lipschitz_bound=lambda R: 1.0,
        ))

    def vector_field(x, u_values, t):
        dx = -self_rate * x + u_values
        dx[1:] += coupling * x[:-1]
        return dx

    return Network(
        subsystems,
        coercivity_lower=kfunc.IDENTITY,
        coercivity_upper=kfunc.IDENTITY,
        decay_floor=alpha,
        input_gain_bound=ext,
        vector_field=vector_field,
        name=f"linear_cascade({n})",
    )


def twonode_network(a: float = 2.0, b: float = 0.2) -> Network:
    """Two coupled scalar nodes realizing the loop gains (a, b).

    Couplings are a/2 and b/2 so that, under each node's premise, damping
    1 is split as 1/2 against the neighbor and 1/4 against the input,
    leaving decay rate 1/4.
    """
    ext = kfunc.Linear(4.0)
    alpha = kfunc.Linear(0.25)
    c12, c21 = a / 2.0, b / 2.0

    def dyn1(x, nb, u, t):
        return -x + c12 * nb[0] + u

    def dyn2(x, nb, u, t):
        return -x + c21 * nb[0] + u

    def make(i, dyn, j, slope):
        return Subsystem(
            dim=1, dynamics=dyn, lyapunov=_abs_scalar,
            lyap_gradient=_sign_gradient,
            neighbors=(j,), gains=((j, kfunc.Linear(slope)),),
            external_gain=ext, decay_rate=alpha,
            coercivity_lower=kfunc.IDENTITY, coercivity_upper=kfunc.IDENTITY,
            lipschitz_bound=lambda R: 1.0,
        )

    def vector_field(x, u_values, t):
        return np.array([
            -x[0] + c12 * x[1] + u_values[0],
            -x[1] + c21 * x[0] + u_values[1],
        ])

    return Network(
        [make(1, dyn1, 2, a), make(2, dyn2, 1, b)],
        coercivity_lower=kfunc.IDENTITY,
        coercivity_upper=kfunc.IDENTITY,
        decay_floor=alpha,
        input_gain_bound=ext,
        vector_field=vector_field,
        name=f"twonode({a},{b})",
    )
