"""Maximization of the logarithmic norm over the diagonal box, and the
minimal-Frobenius-norm perturbation driving that maximum to a target value.

The box maximum of mu2(D A) is attained at a vertex (D -> sym(DA) is affine
and the largest eigenvalue is convex), so for moderate dimension we enumerate
all 2^d vertices; above ``EXACT_DIM_LIMIT`` a multi-start coordinate ascent
over vertex masks is used and the result is flagged as heuristic.
"""

import math
from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .errors import ConvergenceError, PreconditionError
from .linalg import as_square, frobenius

#: Largest dimension for exact vertex enumeration (2^d masks).
EXACT_DIM_LIMIT = 16
#: |achieved - target| tolerance of the stabilization solver.
STABILIZE_TOL = 1e-6
#: Random restarts of the coordinate-ascent heuristic (plus D = identity).
HEURISTIC_STARTS = 32
#: Fixed seed of the heuristic restarts, so delta_star stays deterministic.
HEURISTIC_SEED = 0


@dataclass(frozen=True)
class OmegaBox:
    """Diagonal matrices with entries in [alpha, 1], in dimension ``dim``."""

    dim: int
    alpha: float

    def __post_init__(self):
        if self.dim < 1:
            raise PreconditionError("box dimension must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise PreconditionError("alpha must lie in (0, 1]")


def mask_bits(mask, dim):
    """Vertex mask as a tuple of booleans; True marks a unit diagonal entry."""
    return tuple(bool((mask >> i) & 1) for i in range(dim))


def mask_diagonal(mask, box):
    """Diagonal entries of the vertex matrix selected by an integer mask."""
    d = np.full(box.dim, box.alpha)
    for i in range(box.dim):
        if (mask >> i) & 1:
            d[i] = 1.0
    return d


@dataclass(frozen=True)
class LogNormMaxResult:
    value: float
    argmax: tuple
    method: str  # "exact-enumeration" or "heuristic"


def _check_box(A, box):
    A = as_square(A)
    if A.shape[0] != box.dim:
        raise PreconditionError(
            f"matrix dimension {A.shape[0]} does not match box dimension {box.dim}"
        )
    return A


def _mu2_of_mask(M, mask, box):
    scale = mask_diagonal(mask, box)
    DM = scale[:, None] * M
    return float(kernels.lambda_max_sym(0.5 * (DM + DM.T)))


def _ascent_from(M, mask, box):
    """Greedy single-bit-flip ascent of mu2(D M) from a starting mask."""
    val = _mu2_of_mask(M, mask, box)
    improved = True
    while improved:
        improved = False
        for i in range(box.dim):
            cand = mask ^ (1 << i)
            cval = _mu2_of_mask(M, cand, box)
            if cval > val:
                val, mask = cval, cand
                improved = True
    return val, mask


def _heuristic_max(M, box):
    rng = np.random.default_rng(HEURISTIC_SEED)
    best_val, best_mask = _ascent_from(M, (1 << box.dim) - 1, box)
    for _ in range(HEURISTIC_STARTS):
        start = int(rng.integers(0, 1 << box.dim, dtype=np.uint64))
        val, mask = _ascent_from(M, start, box)
        if val > best_val or (val == best_val and mask < best_mask):
            best_val, best_mask = val, mask
    return best_val, best_mask


def _max_mu2(M, box, negate=False):
    """(value, mask, exact) for max over the vertex set of mu2(D M) or mu2(-D M)."""
    if box.dim <= EXACT_DIM_LIMIT:
        val, mask = kernels.max_mu2_vertices(M, box.alpha, negate)
        return float(val), int(mask), True
    val, mask = _heuristic_max(-M if negate else M, box)
    return float(val), int(mask), False


def delta_star(A, box):
    """Maximum over the box of mu2(D A); exp of it bounds the flow Lipschitz constant."""
    A = _check_box(A, box)
    val, mask, exact = _max_mu2(A, box)
    return LogNormMaxResult(
        value=val,
        argmax=mask_bits(mask, box.dim),
        method="exact-enumeration" if exact else "heuristic",
    )


def delta_prime(Abar, box):
    """Contraction rate: -(max over the box of mu2(-D Abar))."""
    Abar = _check_box(Abar, box)
    val, _, _ = _max_mu2(Abar, box, negate=True)
    return -val


@dataclass(frozen=True)
class StabilizationResult:
    delta_target: float
    delta_achieved: float
    Delta: np.ndarray
    frob_norm: float
    iterations: int
    baseline_norm: float


def _active_gradient(M, box):
    """(value, gradient) of Delta -> max_vertex mu2(D(A+Delta)) at M = A + Delta.

    At the active vertex D with leading unit eigenvector v of sym(D M) the
    gradient is (D v) v^T; eigenvalue ties take the first index attaining the
    maximum (crossings are measure-zero under random data).
    """
    val, mask, _ = _max_mu2(M, box)
    scale = mask_diagonal(mask, box)
    DM = scale[:, None] * M
    w, V = kernels.jacobi_eigh(0.5 * (DM + DM.T))
    v = V[:, int(np.argmax(w))]
    return val, np.outer(scale * v, v)


class _EvalBudget:
    """Counts objective evaluations; the solver aborts past max_iterations."""

    def __init__(self, limit):
        self.limit = limit
        self.count = 0

    def tick(self):
        self.count += 1
        return self.count < self.limit


def stabilize(A, box, delta_target, max_iterations=10_000, init_delta=None):
    """Small-Frobenius-norm perturbation Delta with max_D mu2(D(A+Delta)) = target.

    Penalty descent on ||Delta||_F^2 + rho * (g(Delta) - target)_+^2 with rho
    increased geometrically, then a bisection along the scaling of the found
    direction hits the target to STABILIZE_TOL. When both the target and the
    unperturbed maximum are positive, the scaling (target/max - 1) * A is
    feasible by positive homogeneity and caps the returned norm.

    ``init_delta`` warm-starts the descent (continuation across nearby
    targets); the returned result is verified independently either way.
    """
    A = _check_box(A, box)
    dstar, _, _ = _max_mu2(A, box)
    if not delta_target < dstar:
        raise PreconditionError(
            f"delta target {delta_target} must be below the unperturbed maximum {dstar}"
        )
    delta_target = float(delta_target)

    if dstar > 0.0 and delta_target > 0.0:
        baseline_delta = (delta_target / dstar - 1.0) * A
        baseline_norm = frobenius(baseline_delta)
    else:
        baseline_delta = None
        baseline_norm = math.inf

    budget = _EvalBudget(max_iterations)

    def g_value(M):
        budget.tick()
        val, _, _ = _max_mu2(M, box)
        return val

    # Marginal target: the zero perturbation is already within tolerance.
    if dstar - delta_target <= STABILIZE_TOL:
        return StabilizationResult(
            delta_target=delta_target,
            delta_achieved=dstar,
            Delta=np.zeros_like(A),
            frob_norm=0.0,
            iterations=0,
            baseline_norm=baseline_norm,
        )

    delta = _penalty_descent(A, box, delta_target, dstar, budget, init_delta)

    candidates = []
    polished = _polish_scaling(A, box, delta, delta_target, g_value)
    if polished is not None:
        candidates.append(polished)
    if baseline_delta is not None:
        candidates.append(baseline_delta)
    if not candidates:
        # Guaranteed-feasible endpoint: g((target/alpha) I) = target for
        # target < 0 and g(0) = 0, both exact; bisect toward it.
        if delta_target < 0.0:
            endpoint = (delta_target / box.alpha) * np.eye(box.dim) - A
        else:
            endpoint = -A
        polished = _polish_scaling(A, box, endpoint, delta_target, g_value)
        if polished is not None:
            candidates.append(polished)

    best_pair = None
    for cand in candidates:
        achieved, _, _ = _max_mu2(A + cand, box)
        if abs(achieved - delta_target) > STABILIZE_TOL:
            continue
        norm = frobenius(cand)
        if best_pair is None or norm < best_pair[0]:
            best_pair = (norm, cand, achieved)
    if best_pair is None:
        raise ConvergenceError(
            "stabilization did not reach the target",
            diagnostics={
                "delta_target": delta_target,
                "delta_star": dstar,
                "iterations": budget.count,
            },
        )
    norm, cand, achieved = best_pair
    return StabilizationResult(
        delta_target=delta_target,
        delta_achieved=float(achieved),
        Delta=cand,
        frob_norm=float(norm),
        iterations=budget.count,
        baseline_norm=baseline_norm,
    )


def _penalty_descent(A, box, target, dstar, budget, init_delta=None):
    """Backtracking gradient descent on the quadratic-penalty objective."""
    delta = np.zeros_like(A) if init_delta is None else np.array(init_delta, dtype=np.float64)
    gap0 = dstar - target
    rho = 1.0 / max(gap0, 1e-6)
    step = 0.25 * gap0
    gap_goal = 1e-3 * gap0

    def objective(cand):
        budget.tick()
        val, _, _ = _max_mu2(A + cand, box)
        pen = max(val - target, 0.0)
        return float(np.sum(cand * cand)) + rho * pen * pen, val

    gval = dstar
    for _outer in range(14):
        step = max(step, 0.25 / rho)
        for _inner in range(150):
            if budget.count >= budget.limit:
                return delta
            gval, grad_g = _active_gradient(A + delta, box)
            budget.tick()
            gap = gval - target
            grad = 2.0 * delta
            if gap > 0.0:
                grad = grad + (2.0 * rho * gap) * grad_g
            gnorm = frobenius(grad)
            f0 = float(np.sum(delta * delta)) + rho * max(gap, 0.0) ** 2
            if gnorm <= 1e-10 * (1.0 + frobenius(delta)):
                break
            trial = step
            accepted = False
            for _bt in range(40):
                cand = delta - trial * grad
                fc, cval = objective(cand)
                if fc <= f0 - 1e-4 * trial * gnorm * gnorm:
                    delta, gval = cand, cval
                    step = trial * 1.5
                    accepted = True
                    break
                trial *= 0.5
            if not accepted or f0 - fc <= 1e-12 * (1.0 + abs(f0)):
                break  # stalled at this rho
        if gval - target <= gap_goal or budget.count >= budget.limit:
            break
        rho *= 10.0
    return delta


def _polish_scaling(A, box, delta, target, g_value):
    """Bisect s in g(A + s*delta) = target; returns the scaled matrix or None."""
    if frobenius(delta) == 0.0:
        return None
    lo, hi = 0.0, 1.0
    ghi = g_value(A + delta)
    grow = 0
    while ghi - target > 0.0 and grow < 60:
        hi *= 1.5
        ghi = g_value(A + hi * delta)
        grow += 1
    if ghi - target > 0.0:
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gmid = g_value(A + mid * delta)
        if abs(gmid - target) <= 1e-3 * STABILIZE_TOL:
            return mid * delta
        if gmid - target > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    return hi * delta
