# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: cyclic Jacobi eigensolve and log-norm vertex enumeration.

Mirrors ``_kernels_py`` exactly (same sweep order and rotation formulas);
these routines sit in the inner loops of the stabilization solver and of the
vertex enumeration, where per-call overhead dominates pure numpy.
"""

from libc.math cimport fabs, sqrt

import numpy as np

COMPILED = True

cdef double JACOBI_OFF_TOL = 1e-14
cdef int JACOBI_MAX_SWEEPS = 100


cdef int _jacobi(double[:, ::1] a, double[:, ::1] v, bint want_v) noexcept nogil:
    cdef Py_ssize_t d = a.shape[0]
    cdef Py_ssize_t p, q, i, sweep
    cdef double frob = 0.0, tol, off, apq, theta, t, c, s
    cdef double app, aqq, aip, aiq, vip, viq
    for p in range(d):
        for q in range(d):
            frob += a[p, q] * a[p, q]
    tol = JACOBI_OFF_TOL * sqrt(frob)
    for sweep in range(JACOBI_MAX_SWEEPS):
        off = 0.0
        for p in range(d - 1):
            for q in range(p + 1, d):
                if fabs(a[p, q]) > off:
                    off = fabs(a[p, q])
        if off <= tol:
            return <int>sweep
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
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
    cdef Py_ssize_t d = a.shape[0]
    v = np.eye(d)
    cdef int sweeps = _jacobi(a, v, True)
    if sweeps < 0:
        raise RuntimeError("Jacobi eigensolve did not converge")
    w = np.diagonal(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], np.ascontiguousarray(v[:, order])


def jacobi_eigvals(S):
    """Eigenvalues (ascending) of symmetric S."""
    a = np.array(S, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] dummy = a
    cdef int sweeps = _jacobi(a, dummy, False)
    if sweeps < 0:
        raise RuntimeError("Jacobi eigensolve did not converge")
    w = np.diagonal(a).copy()
    w.sort()
    return w


cdef double _lambda_max(double[:, ::1] a) except? -1e308:
    cdef Py_ssize_t d = a.shape[0], i
    cdef int sweeps
    cdef double best
    with nogil:
        sweeps = _jacobi(a, a, False)
    if sweeps < 0:
        raise RuntimeError("Jacobi eigensolve did not converge")
    best = a[0, 0]
    for i in range(1, d):
        if a[i, i] > best:
            best = a[i, i]
    return best


def lambda_max_sym(S):
    """Largest eigenvalue of symmetric S."""
    a = np.array(S, dtype=np.float64, order="C", copy=True)
    return _lambda_max(a)


def max_mu2_vertices(A, double alpha, bint negate):
    """Maximize lambda_max(sym(D @ M)) over all 2^d diagonal vertices of the box.

    Vertex i of the mask scales row i of M by 1 (bit set) or by ``alpha``
    (bit clear); M is A, or -A when ``negate``. Ties are resolved toward the
    smallest mask integer. Returns (value, mask).
    """
    M_arr = np.array(A, dtype=np.float64, order="C", copy=True)
    if negate:
        M_arr = -M_arr
    cdef double[:, ::1] M = M_arr
    cdef Py_ssize_t d = M.shape[0]
    work_arr = np.empty((d, d))
    cdef double[:, ::1] work = work_arr
    cdef double best = -1e308
    cdef unsigned long best_mask = 0, mask, nmask = 1UL << d
    cdef Py_ssize_t i, j
    cdef double si, sj, val
    for mask in range(nmask):
        for i in range(d):
            si = 1.0 if (mask >> i) & 1 else alpha
            for j in range(d):
                sj = 1.0 if (mask >> j) & 1 else alpha
                work[i, j] = 0.5 * (si * M[i, j] + sj * M[j, i])
        val = _lambda_max(work)
        if val > best:
            best = val
            best_mask = mask
    return best, int(best_mask)
