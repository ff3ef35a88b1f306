"""Evaluation of the approximation bounds for stabilized nets: the constant-C
upper bound, the cosine test eta(x) with region detection over a grid, and the
per-point and global lower bounds.

Bound verification integrates with the fourth-order reference integrator and
aborts if two resolutions disagree, because the bounds concern the exact flow;
region maps follow the coarser fixed-step Euler discretization used for the
replication experiments.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import flow as flowmod
from . import nets as netsmod
from .errors import BoundViolationError, IntegratorAccuracyError, PreconditionError
from .linalg import sigma_extremes
from .spectral import delta_prime, delta_star, mask_diagonal

#: Below this norm the cosine direction is numerically meaningless.
UNDEFINED_NORM_TOL = 1e-12
#: Reference integrator resolution and self-check tolerance.
REFERENCE_STEPS = 4000
REFERENCE_CHECK_TOL = 1e-6
#: Slack of the verified upper and per-point lower inequalities.
VERIFY_TOL = 1e-8


@dataclass(frozen=True)
class CompactGrid:
    """Evaluation points: a regular box discretization or an explicit set."""

    points: np.ndarray  # (P, m)
    box: tuple | None = None
    h: float | None = None

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] == 0:
            raise PreconditionError("grid needs a non-empty (P, m) point array")

    def __len__(self):
        return self.points.shape[0]


def grid_from_box(bounds, h):
    """Regular grid with step h over a product of intervals."""
    axes = []
    for lo, hi in bounds:
        if hi <= lo:
            raise PreconditionError("box bounds must satisfy lo < hi")
        count = int(round((hi - lo) / h))
        axes.append(np.linspace(lo, hi, count + 1))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return CompactGrid(points=pts, box=tuple(tuple(b) for b in bounds), h=h)


def grid_from_points(points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    return CompactGrid(points=pts)


def estimate_epsilon(f_oracle, net, grid):
    """Grid maximum of ||f(x) - net(x)||_2 (an under-estimate of the sup)."""
    X = grid.points
    target = np.asarray(f_oracle(X), dtype=np.float64)
    pred = np.atleast_2d(netsmod.forward(net, X))
    if target.shape != pred.shape:
        raise PreconditionError("oracle and net output shapes differ")
    return float(np.max(np.linalg.norm(target - pred, axis=1)))


def g_ratio(delta):
    """(e^delta - 1)/delta with the removable singularity g(0) = 1."""
    if delta == 0.0:
        return 1.0
    return float(np.expm1(delta) / delta)


def g_ratio_tail(delta_prime_value, tbar):
    """(e^{delta'(1-tbar)} - 1)/delta' with value (1 - tbar) at delta' = 0."""
    if delta_prime_value == 0.0:
        return 1.0 - tbar
    return float(np.expm1(delta_prime_value * (1.0 - tbar)) / delta_prime_value)


def upper_bound(epsilon, C, sigma_max_delta, delta):
    """C sigma_max(Delta) (e^delta - 1)/delta + epsilon."""
    return C * sigma_max_delta * g_ratio(delta) + epsilon


def lower_bound(c1, c2, sigma_min_delta, delta_prime_value, tbar, epsilon):
    """c1 e^{delta'(1-tbar)} + c2 sigma_min(Delta) g_tail(delta') - epsilon."""
    growth = math.exp(delta_prime_value * (1.0 - tbar))
    return c1 * growth + c2 * sigma_min_delta * g_ratio_tail(delta_prime_value, tbar) - epsilon


def lower_bound_negative_eta(c1, c2, sigma_max_delta, delta_prime_value, tbar, epsilon):
    """Variant for eta <= 0, built from sigma_max and the trajectory maximum;
    returns (value, possibly_vacuous) since c2 <= 0 can make it negative."""
    growth = math.exp(delta_prime_value * (1.0 - tbar))
    value = c1 * growth + c2 * sigma_max_delta * g_ratio_tail(delta_prime_value, tbar) - epsilon
    return value, value < 0.0


def _initial_states(net, X):
    return np.atleast_2d(X) @ net.A1.T + net.b1


def _euler_pair(net, netbar, X, n_steps):
    """Euler trajectories of the original and stabilized flows from shared
    initial states; shapes (n_steps + 1, P, d)."""
    from dataclasses import replace

    V0 = _initial_states(net, X)
    ode = replace(net.ode, euler_steps=n_steps)
    odebar = replace(netbar.ode, euler_steps=n_steps)
    Z = flowmod.trajectory_states(ode, V0)
    Zbar = flowmod.trajectory_states(odebar, V0)
    return Z, Zbar


def eta_from_states(Z_nodes, Zbar_nodes, Delta, box):
    """Minimum cosine over vertex matrices and time nodes, per grid point.

    ``Z_nodes``/``Zbar_nodes`` have shape (T, P, d). Returns (eta, undefined):
    points where a difference or direction norm falls below the threshold are
    flagged undefined.
    """
    diff = Z_nodes - Zbar_nodes  # (T, P, d)
    dz = Z_nodes @ Delta.T  # Delta @ z(t), row convention
    diff_norm = np.linalg.norm(diff, axis=2)
    P = Z_nodes.shape[1]
    eta = np.full(P, np.inf)
    undefined = np.zeros(P, dtype=bool)
    undefined |= (diff_norm < UNDEFINED_NORM_TOL).any(axis=0)
    for mask in range(1 << box.dim):
        scale = mask_diagonal(mask, box)
        ddz = -dz * scale  # -D Delta z(t)
        ddz_norm = np.linalg.norm(ddz, axis=2)
        undefined |= (ddz_norm < UNDEFINED_NORM_TOL).any(axis=0)
        denom = diff_norm * ddz_norm
        safe = np.where(denom > 0.0, denom, 1.0)
        cos = np.einsum("tpd,tpd->tp", diff, ddz) / safe
        np.minimum(eta, cos.min(axis=0), out=eta)
    eta = np.where(undefined, np.nan, eta)
    return eta, undefined


def eta(net, netbar, Delta, x, box, tbar=0.3, tstep=0.05, euler_step=0.05):
    """Cosine test at one point; None when a direction is numerically undefined."""
    rm = region_map(
        net,
        netbar,
        Delta,
        grid_from_points(np.asarray(x, dtype=np.float64)[None, :]),
        box,
        tbar=tbar,
        tstep=tstep,
        euler_step=euler_step,
    )
    return None if rm.undefined[0] else float(rm.eta[0])


@dataclass(frozen=True)
class RegionMap:
    eta: np.ndarray  # (P,), nan where undefined
    holds: np.ndarray  # (P,) bool: eta > 0
    undefined: np.ndarray  # (P,) bool
    fraction_green: float


def _tail_nodes(tbar, tstep, n_steps):
    """Node indices of the time grid tbar, tbar + tstep, ..., 1."""
    if not 0.0 < tbar < 1.0:
        raise PreconditionError("tbar must lie in (0, 1)")
    times = []
    t = tbar
    while t < 1.0 - 1e-9:
        times.append(t)
        t += tstep
    times.append(1.0)
    return sorted({int(round(t * n_steps)) for t in times})


def region_map(net, netbar, Delta, grid, box, tbar=0.3, tstep=0.05, euler_step=0.05):
    """eta evaluated over the grid with the experiment discretization:
    Euler flows at step ``euler_step``, cosine minimized over the time grid
    tbar..1 at step ``tstep`` and over the box vertices."""
    n_steps = int(round(1.0 / euler_step))
    nodes = _tail_nodes(tbar, tstep, n_steps)
    Z, Zbar = _euler_pair(net, netbar, grid.points, n_steps)
    eta_vals, undefined = eta_from_states(Z[nodes], Zbar[nodes], Delta, box)
    holds = np.where(undefined, False, eta_vals > 0.0)
    return RegionMap(
        eta=eta_vals,
        holds=holds,
        undefined=undefined,
        fraction_green=float(holds.mean()),
    )


def _euler_node_norms(net, grid, tgrid):
    """State norms of the net's own Euler trajectories at the tgrid nodes."""
    V0 = _initial_states(net, grid.points)
    Z = flowmod.trajectory_states(net.ode, V0)
    if tgrid is None:
        nodes = range(Z.shape[0])
    else:
        nodes = flowmod.snap_times(tgrid, net.ode.euler_steps)
    return np.linalg.norm(Z[sorted(set(nodes))], axis=2)  # (T, P)


def constant_C(net, netbar, grid, tgrid=None):
    """max over the grid and the time nodes of ||z(t)||_2 (unperturbed flow,
    the net's own Euler discretization).

    ``netbar`` is accepted because callers hold the net pair; the constant
    only involves the unperturbed trajectories.
    """
    return float(_euler_node_norms(net, grid, tgrid).max())


def constant_m(net, grid, tgrid=None, tbar=0.3):
    """min over the grid of min over t in [tbar, 1] of ||z(t)||_2."""
    if tgrid is None:
        n = net.ode.euler_steps
        tgrid = [k / n for k in range(int(math.ceil(tbar * n - 1e-9)), n + 1)]
    if any(t < tbar - 1e-9 for t in tgrid):
        raise PreconditionError("tgrid for the trajectory minimum must lie in [tbar, 1]")
    return float(_euler_node_norms(net, grid, tgrid).min())


@dataclass(frozen=True)
class BoundReport:
    epsilon: float
    delta: float
    delta_prime: float
    sigma_max_Delta: float
    sigma_min_Delta: float
    C: float
    c1: float
    c2: float
    tbar: float
    upper_value: float
    lower_value: float
    empirical_sup: float


def _reference_pair(net, netbar, X, tbar, n_steps):
    """Reference trajectories of both flows with a coarse self-check."""
    V0 = _initial_states(net, X)
    tail = int(round(tbar * n_steps))
    eta_nodes = list(range(tail, n_steps + 1, max(1, n_steps // 200)))
    if eta_nodes[-1] != n_steps:
        eta_nodes.append(n_steps)
    collect = sorted(set(eta_nodes) | {tail, n_steps})
    ref = flowmod.reference_trajectory(
        net.ode, V0, n_steps=n_steps, collect=collect, tail_from=tail
    )
    refbar = flowmod.reference_trajectory(
        netbar.ode, V0, n_steps=n_steps, collect=collect, tail_from=tail
    )
    for ode, fine in ((net.ode, ref.final), (netbar.ode, refbar.final)):
        coarse = flowmod.reference_flow(ode, V0, n_steps=n_steps // 2)
        gap = float(np.max(np.linalg.norm(fine - coarse, axis=1)))
        if gap > REFERENCE_CHECK_TOL:
            raise IntegratorAccuracyError(
                f"reference integrations disagree by {gap:.3e}",
                {"disagreement": gap, "n_steps": n_steps},
            )
    return ref, refbar, collect, tail


def verify_bounds(
    f_oracle,
    net,
    netbar,
    Delta,
    grid,
    box,
    tbar=0.3,
    n_steps=REFERENCE_STEPS,
):
    """Full bound verification on a grid; raises BoundViolationError with the
    witness point if the upper bound or a per-point lower bound fails.

    ``f_oracle`` is a callable target, or None to verify the net against
    itself (epsilon = 0).
    """
    X = grid.points
    dstar_bar = delta_star(netbar.ode.A, box).value
    dprime = delta_prime(netbar.ode.A, box)
    smin, smax = sigma_extremes(Delta)
    ref, refbar, nodes, tail = _reference_pair(net, netbar, X, tbar, n_steps)

    if f_oracle is None:
        epsilon = 0.0
    else:
        target = np.atleast_2d(np.asarray(f_oracle(X), dtype=np.float64))
        pred = np.atleast_2d(ref.final @ net.A2.T + net.b2)
        epsilon = float(np.max(np.linalg.norm(target - pred, axis=1)))

    flow_diff = np.linalg.norm(ref.final - refbar.final, axis=1)
    out_diff = np.linalg.norm((ref.final - refbar.final) @ net.A2.T, axis=1)
    empirical_sup = float(out_diff.max())
    C = float(ref.max_norm.max())
    upper = upper_bound(epsilon, C, smax, dstar_bar)

    slack = (upper - epsilon) + VERIFY_TOL * (1.0 + upper)
    if empirical_sup > slack:
        witness = int(np.argmax(out_diff))
        raise BoundViolationError(
            f"upper bound violated: sup {empirical_sup} > {slack}",
            witness=X[witness],
        )

    Z_nodes = np.stack([ref.stored[k] for k in nodes])
    Zbar_nodes = np.stack([refbar.stored[k] for k in nodes])
    eta_vals, undefined = eta_from_states(Z_nodes, Zbar_nodes, Delta, box)
    positive = (~undefined) & (eta_vals > 0.0)

    c1_pts = np.linalg.norm(ref.stored[tail] - refbar.stored[tail], axis=1)
    m_pts = ref.min_norm_tail
    growth = math.exp(dprime * (1.0 - tbar))
    gtail = g_ratio_tail(dprime, tbar)
    alpha = box.alpha
    if positive.any():
        per_point = (
            c1_pts[positive] * growth
            + alpha * eta_vals[positive] * smin * m_pts[positive] * gtail
        )
        lhs = flow_diff[positive]
        bad = lhs < per_point - VERIFY_TOL
        if bad.any():
            witness = X[positive][int(np.argmax(bad))]
            raise BoundViolationError(
                "per-point lower bound violated", witness=witness
            )
        sA2 = sigma_extremes(net.A2)[0]
        c1 = float(sA2 * c1_pts[positive].min())
        c2 = float(alpha * sA2 * m_pts[positive].min() * eta_vals[positive].min())
        lower = lower_bound(c1, c2, smin, dprime, tbar, epsilon)
    else:
        c1 = 0.0
        c2 = 0.0
        lower = -epsilon

    return BoundReport(
        epsilon=epsilon,
        delta=dstar_bar,
        delta_prime=dprime,
        sigma_max_Delta=smax,
        sigma_min_Delta=smin,
        C=C,
        c1=c1,
        c2=c2,
        tbar=tbar,
        upper_value=upper,
        lower_value=lower,
        empirical_sup=empirical_sup,
    )
