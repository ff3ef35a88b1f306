"""Dense real linear algebra: symmetric eigensolve, singular-value extremes,
spectral and logarithmic 2-norms, and the matrix text format.

Matrices and vectors are plain float64 numpy arrays. The eigensolve is a
cyclic Jacobi iteration (see the kernel backends); tolerances are module
constants, not per-call parameters.
"""

from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .errors import ConvergenceError, ParseError, PreconditionError

#: Allowed relative asymmetry of eig_sym input.
SYMMETRY_TOL = 1e-12
#: Jacobi convergence threshold, relative to the Frobenius norm.
JACOBI_OFF_TOL = 1e-14
#: Significant digits of the matrix text format (round-trips float64).
TEXT_DIGITS = 17


def as_matrix(a, name="matrix"):
    """Validate and return a 2-D float64 array with finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise PreconditionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise PreconditionError(f"{name} has non-finite entries")
    return m


def as_square(a, name="matrix"):
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise PreconditionError(f"{name} must be square, got shape {m.shape}")
    return m


def as_vector(a, name="vector"):
    """Validate and return a 1-D float64 array with finite entries."""
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise PreconditionError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise PreconditionError(f"{name} has non-finite entries")
    return v


def frobenius(A):
    return float(np.sqrt(np.sum(np.asarray(A, dtype=np.float64) ** 2)))


def sym(A):
    """Symmetric part (A + A^T)/2; exactly symmetric (IEEE addition commutes)."""
    A = as_square(A)
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class EigenResult:
    """Spectral decomposition of a symmetric matrix.

    ``eigenvalues`` ascending; ``eigenvectors`` holds the matching orthonormal
    eigenvectors as columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def eig_sym(S):
    """Full spectral decomposition of a symmetric matrix via cyclic Jacobi."""
    S = as_square(S, "eig_sym input")
    scale = max(1.0, frobenius(S))
    if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * scale:
        raise PreconditionError("eig_sym input is not symmetric to tolerance")
    try:
        w, v = kernels.jacobi_eigh(S)
    except RuntimeError as exc:
        raise ConvergenceError(str(exc)) from exc
    return EigenResult(eigenvalues=w, eigenvectors=v)


def mu2(A):
    """Logarithmic 2-norm: largest eigenvalue of the symmetric part of A."""
    S = sym(A)
    try:
        return float(kernels.lambda_max_sym(S))
    except RuntimeError as exc:
        raise ConvergenceError(str(exc)) from exc


def _gram_extreme_eigs(A):
    G = A.T @ A
    G = 0.5 * (G + G.T)
    w = kernels.jacobi_eigvals(G)
    return float(w[0]), float(w[-1])


def sigma_extremes(A):
    """(sigma_min, sigma_max) of A from the eigenvalues of A^T A, clamped at 0.

    Squaring loses about half the digits near zero; fine at the condition
    numbers this library works with (< 1e6).
    """
    A = as_matrix(A)
    lo, hi = _gram_extreme_eigs(A)
    return float(np.sqrt(max(lo, 0.0))), float(np.sqrt(max(hi, 0.0)))


def spectral_norm(A):
    """Largest singular value, computed from the smaller Gram matrix."""
    A = as_matrix(A)
    if A.shape[0] < A.shape[1]:
        A = A.T
    _, hi = _gram_extreme_eigs(A)
    return float(np.sqrt(max(hi, 0.0)))


def format_matrix(A):
    """Matrix text format: 'rows cols' line, then one line per row."""
    A = as_matrix(A)
    lines = [f"{A.shape[0]} {A.shape[1]}"]
    for row in A:
        lines.append(" ".join(f"{x:.{TEXT_DIGITS}g}" for x in row))
    return "\n".join(lines) + "\n"


def parse_matrix_lines(lines, start=0, name="matrix"):
    """Parse one matrix block; returns (array, next line index)."""
    if start >= len(lines):
        raise ParseError(f"{name}: missing header at line {start + 1}")
    header = lines[start].split()
    if len(header) != 2:
        raise ParseError(f"{name}: bad header at line {start + 1}: {lines[start]!r}")
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError as exc:
        raise ParseError(f"{name}: non-integer dims at line {start + 1}") from exc
    if rows < 0 or cols < 0:
        raise ParseError(f"{name}: negative dims at line {start + 1}")
    data = np.empty((rows, cols))
    for r in range(rows):
        ln = start + 1 + r
        if ln >= len(lines):
            raise ParseError(f"{name}: truncated at line {ln + 1}")
        parts = lines[ln].split()
        if len(parts) != cols:
            raise ParseError(
                f"{name}: expected {cols} values at line {ln + 1}, got {len(parts)}"
            )
        for c, tok in enumerate(parts):
            try:
                data[r, c] = float(tok)
            except ValueError as exc:
                raise ParseError(
                    f"{name}: non-numeric value {tok!r} at line {ln + 1}"
                ) from exc
    return data, start + 1 + rows


def save_matrix(path, A):
    with open(path, "w") as fh:
        fh.write(format_matrix(A))


def load_matrix(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    A, _ = parse_matrix_lines(lines, 0, name=str(path))
    return A


def format_vector(v):
    """A vector is stored as a 1-row matrix."""
    v = as_vector(v)
    return format_matrix(v[None, :])


def parse_vector_lines(lines, start=0, name="vector"):
    A, nxt = parse_matrix_lines(lines, start, name)
    if A.shape[0] == 1:
        return A[0], nxt
    if A.shape[1] == 1:
        return A[:, 0], nxt
    raise ParseError(f"{name}: expected a 1-row or 1-column matrix, got {A.shape}")
