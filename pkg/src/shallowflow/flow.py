"""Activations with derivative in [alpha, 1] and numerical flow maps of the
autonomous ODE u' = sigma(A u + b) on [0, 1].

The training integrator is fixed-step explicit Euler (default 20 steps); a
classical fourth-order reference integrator backs the bound-verification
oracles, which are statements about the exact flow.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import FlowOverflowError, PreconditionError
from .linalg import as_square, as_vector

LEAKY = "leaky-relu"
SMOOTHED = "smoothed-leaky-relu"

#: Continuity tolerance of the smoothed activation at its junction points.
JUNCTION_TOL = 1e-12


@dataclass(frozen=True)
class ActivationSpec:
    """Scalar activation applied entrywise; derivative lies in [alpha, 1].

    The smoothed variant is z for z >= 0, tanh(z) on [-zbar, 0), and the
    alpha-slope line below; zbar and beta are derived from alpha so both
    junctions are continuous.
    """

    kind: str
    alpha: float
    zbar: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in (LEAKY, SMOOTHED):
            raise PreconditionError(f"unknown activation kind {self.kind!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise PreconditionError("activation alpha must lie in (0, 1]")
        if self.kind == SMOOTHED:
            if self.zbar <= 0.0:
                raise PreconditionError("smoothed activation needs zbar > 0")
            lower = self.alpha * (-self.zbar) + self.beta
            if abs(lower - math.tanh(-self.zbar)) > JUNCTION_TOL:
                raise PreconditionError("smoothed activation discontinuous at -zbar")


def leaky_relu(alpha=0.1):
    return ActivationSpec(kind=LEAKY, alpha=alpha)


def smoothed_leaky_relu(alpha=0.1):
    """Smoothed variant; tanh'(zbar) = alpha fixes zbar = atanh(sqrt(1 - alpha))."""
    zbar = math.atanh(math.sqrt(1.0 - alpha))
    beta = math.tanh(-zbar) + alpha * zbar
    return ActivationSpec(kind=SMOOTHED, alpha=alpha, zbar=zbar, beta=beta)


def act(spec, z):
    """Activation value, elementwise over arrays."""
    z = np.asarray(z, dtype=np.float64)
    if spec.kind == LEAKY:
        return np.where(z >= 0.0, z, spec.alpha * z)
    out = np.where(z >= 0.0, z, np.tanh(np.minimum(z, 0.0)))
    return np.where(z < -spec.zbar, spec.alpha * z + spec.beta, out)


def act_deriv(spec, z):
    """Activation derivative; at kinks the right limit is used (1 at z = 0)."""
    z = np.asarray(z, dtype=np.float64)
    if spec.kind == LEAKY:
        return np.where(z >= 0.0, 1.0, spec.alpha)
    t = np.tanh(np.minimum(z, 0.0))
    out = np.where(z >= 0.0, 1.0, 1.0 - t * t)
    return np.where(z < -spec.zbar, spec.alpha, out)


@dataclass(frozen=True)
class NeuralOde:
    """Right-hand side sigma(A u + b) with a fixed Euler step count."""

    A: np.ndarray
    b: np.ndarray
    activation: ActivationSpec
    euler_steps: int = 20

    def __post_init__(self):
        A = as_square(self.A, "ode matrix")
        b = as_vector(self.b, "ode bias")
        if b.shape[0] != A.shape[0]:
            raise PreconditionError("ode bias length does not match matrix dimension")
        if self.euler_steps < 1:
            raise PreconditionError("euler_steps must be >= 1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.A.shape[0]


def field_value(ode, u):
    """sigma(A u + b) for states with trailing dimension d.

    Overflow is silenced here; integrators detect non-finite states and raise
    FlowOverflowError naming the step.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return act(ode.activation, u @ ode.A.T + ode.b)


def _check_state(u, ode, step):
    if not np.isfinite(u).all():
        raise FlowOverflowError(f"non-finite state at Euler step {step}")


def flow(ode, u0):
    """Time-1 Euler flow map; accepts a state vector or a batch (..., d)."""
    u = np.asarray(u0, dtype=np.float64)
    if u.shape[-1] != ode.dim:
        raise PreconditionError(
            f"state dimension {u.shape[-1]} does not match ode dimension {ode.dim}"
        )
    h = 1.0 / ode.euler_steps
    for k in range(ode.euler_steps):
        u = u + h * field_value(ode, u)
        _check_state(u, ode, k + 1)
    return u


@dataclass(frozen=True)
class FlowTrajectory:
    """All Euler states of one solve: times[k] = k/N, states[k] the state there."""

    times: np.ndarray
    states: np.ndarray  # (N + 1, d)


def flow_trajectory(ode, u0):
    u0 = as_vector(u0, "initial state")
    states = trajectory_states(ode, u0[None, :])[:, 0, :]
    times = np.arange(ode.euler_steps + 1) / ode.euler_steps
    return FlowTrajectory(times=times, states=states)


def trajectory_states(ode, U0):
    """Euler states for a batch of initial conditions; shape (N + 1, batch, d)."""
    U = np.asarray(U0, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != ode.dim:
        raise PreconditionError("batch of initial states must have shape (batch, d)")
    n = ode.euler_steps
    out = np.empty((n + 1,) + U.shape)
    out[0] = U
    h = 1.0 / n
    for k in range(n):
        U = U + h * field_value(ode, U)
        _check_state(U, ode, k + 1)
        out[k + 1] = U
    return out


def snap_times(times, n_steps):
    """Snap times in [0, 1] to the nearest Euler node index."""
    idx = []
    for t in times:
        if not 0.0 <= t <= 1.0 + 1e-12:
            raise PreconditionError(f"time {t} outside [0, 1]")
        idx.append(int(round(t * n_steps)))
    return idx


def flow_at_times(ode, u0, times):
    """States of the single Euler trajectory sampled at the given grid nodes."""
    if len(times) == 0:
        raise PreconditionError("times list must be non-empty")
    traj = flow_trajectory(ode, u0)
    return [traj.states[i] for i in snap_times(times, ode.euler_steps)]


def scalar_flow_activation(lam, spec, n_steps):
    """Time-1 Euler flow of u' = sigma(u + lam), usable as a scalar activation.

    The returned callable maps arrays elementwise; it equals the flow of the
    d-dimensional ODE with A = I and constant bias lam applied entrywise,
    because that system is uncoupled.
    """

    def phi(z):
        u = np.asarray(z, dtype=np.float64)
        h = 1.0 / n_steps
        for _ in range(n_steps):
            u = u + h * act(spec, u + lam)
        return u

    return phi


def piecewise_flow(ode, t0, T, u0):
    """Flow of the piecewise ODE: linear growth on [t0, 0) and [1, T], the
    neural field on [0, 1); equals exp(T-1) * flow(ode, exp(-t0) * u0).

    The linear phases are applied analytically, not by Euler.
    """
    if t0 > 0.0:
        raise PreconditionError(f"t0 must be <= 0, got {t0}")
    if T < 1.0:
        raise PreconditionError(f"T must be >= 1, got {T}")
    u0 = np.asarray(u0, dtype=np.float64)
    return math.exp(T - 1.0) * flow(ode, math.exp(-t0) * u0)


def _rk4_step(ode, U, h):
    k1 = field_value(ode, U)
    k2 = field_value(ode, U + 0.5 * h * k1)
    k3 = field_value(ode, U + 0.5 * h * k2)
    k4 = field_value(ode, U + h * k3)
    return U + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def reference_flow(ode, U0, n_steps=2000):
    """Time-1 flow by classical RK4 (ignores ode.euler_steps); the oracle
    integrator for bound verification."""
    U = np.asarray(U0, dtype=np.float64)
    squeeze = U.ndim == 1
    if squeeze:
        U = U[None, :]
    h = 1.0 / n_steps
    for k in range(n_steps):
        U = _rk4_step(ode, U, h)
        _check_state(U, ode, k + 1)
    return U[0] if squeeze else U


@dataclass(frozen=True)
class ReferenceTrajectory:
    """RK4 solve with streamed statistics over a batch of initial states."""

    final: np.ndarray  # (batch, d)
    stored: dict  # node index -> (batch, d) states
    max_norm: np.ndarray  # (batch,) max over all nodes of the state norm
    min_norm_tail: np.ndarray  # (batch,) min over nodes >= tail_from


def reference_trajectory(ode, U0, n_steps=2000, collect=(), tail_from=0):
    """RK4 over a (batch, d) block, storing the requested nodes and running
    norm extremes (max over all nodes; min over nodes >= tail_from)."""
    U = np.array(U0, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != ode.dim:
        raise PreconditionError("batch of initial states must have shape (batch, d)")
    h = 1.0 / n_steps
    want = set(collect)
    stored = {}
    if 0 in want:
        stored[0] = U.copy()
    norms = np.linalg.norm(U, axis=1)
    max_norm = norms.copy()
    min_tail = norms.copy() if tail_from == 0 else np.full(U.shape[0], np.inf)
    for k in range(n_steps):
        U = _rk4_step(ode, U, h)
        _check_state(U, ode, k + 1)
        if (k + 1) in want:
            stored[k + 1] = U.copy()
        norms = np.linalg.norm(U, axis=1)
        np.maximum(max_norm, norms, out=max_norm)
        if k + 1 >= tail_from:
            np.minimum(min_tail, norms, out=min_tail)
    return ReferenceTrajectory(
        final=U, stored=stored, max_norm=max_norm, min_norm_tail=min_tail
    )
