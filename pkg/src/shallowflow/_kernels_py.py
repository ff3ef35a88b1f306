"""Pure-Python kernels: cyclic Jacobi eigensolve and log-norm vertex enumeration.

Same algorithms and sweep order as the compiled extension in ``_kernels.pyx``;
this module is the fallback used when the extension is unavailable.
"""

import math

import numpy as np

COMPILED = False

#: Convergence: all off-diagonals <= JACOBI_OFF_TOL * ||S||_F.
JACOBI_OFF_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100


def _jacobi(a, v, want_v):
    """Run cyclic-by-rows Jacobi sweeps in place on ``a`` (and ``v``).

    Returns the number of sweeps, or -1 if JACOBI_MAX_SWEEPS was exhausted.
    """
    d = a.shape[0]
    frob = 0.0
    for i in range(d):
        for j in range(d):
            frob += a[i, j] * a[i, j]
    tol = JACOBI_OFF_TOL * math.sqrt(frob)
    for sweep in range(JACOBI_MAX_SWEEPS):
        off = 0.0
        for p in range(d - 1):
            for q in range(p + 1, d):
                if abs(a[p, q]) > off:
                    off = abs(a[p, q])
        if off <= tol:
            return sweep
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                app = a[p, p]
                aqq = a[q, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(d):
                    if i != p and i != q:
                        aip = a[i, p]
                        aiq = a[i, q]
                        a[i, p] = c * aip - s * aiq
                        a[p, i] = a[i, p]
                        a[i, q] = s * aip + c * aiq
                        a[q, i] = a[i, q]
                if want_v:
                    for i in range(d):
                        vip = v[i, p]
                        viq = v[i, q]
                        v[i, p] = c * vip - s * viq
                        v[i, q] = s * vip + c * viq
    return -1


def jacobi_eigh(S):
    """Eigenvalues (ascending) and orthonormal eigenvector columns of symmetric S."""
    a = np.array(S, dtype=np.float64, order="C", copy=True)
    d = a.shape[0]
    v = np.eye(d)
    sweeps = _jacobi(a, v, True)
    if sweeps < 0:
        raise RuntimeError("Jacobi eigensolve did not converge")
    w = np.diagonal(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], np.ascontiguousarray(v[:, order])


def jacobi_eigvals(S):
    """Eigenvalues (ascending) of symmetric S."""
    a = np.array(S, dtype=np.float64, order="C", copy=True)
    sweeps = _jacobi(a, None, False)
    if sweeps < 0:
        raise RuntimeError("Jacobi eigensolve did not converge")
    w = np.diagonal(a).copy()
    w.sort()
    return w


def lambda_max_sym(S):
    """Largest eigenvalue of symmetric S."""
    return float(jacobi_eigvals(S)[-1])


def max_mu2_vertices(A, alpha, negate):
    """Maximize lambda_max(sym(D @ M)) over all 2^d diagonal vertices of the box.

    Vertex i of the mask scales row i of M by 1 (bit set) or by ``alpha``
    (bit clear); M is A, or -A when ``negate``. Ties are resolved toward the
    smallest mask integer. Returns (value, mask).
    """
    A = np.asarray(A, dtype=np.float64)
    d = A.shape[0]
    M = -A if negate else A
    best = -math.inf
    best_mask = 0
    scale = np.empty(d)
    for mask in range(1 << d):
        for i in range(d):
            scale[i] = 1.0 if (mask >> i) & 1 else alpha
        DM = scale[:, None] * M
        S = 0.5 * (DM + DM.T)
        val = lambda_max_sym(S)
        if val > best:
            best = val
            best_mask = mask
    return best, best_mask
