import numpy as np
import pytest

from shallowflow import _kernels_py
from shallowflow.errors import ParseError, PreconditionError
from shallowflow.linalg import (
    EigenResult,
    eig_sym,
    format_matrix,
    format_vector,
    frobenius,
    load_matrix,
    mu2,
    parse_matrix_lines,
    parse_vector_lines,
    save_matrix,
    sigma_extremes,
    spectral_norm,
    sym,
)


def test_sym_identity():
    assert np.array_equal(sym(np.eye(3)), np.eye(3))


def test_sym_skew_vanishes():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert np.array_equal(sym(A), np.zeros((2, 2)))


def test_sym_direct_arithmetic():
    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    assert np.array_equal(sym(A), np.ones((2, 2)))


def test_sym_exactly_symmetric_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        S = sym(rng.standard_normal((6, 6)))
        assert np.array_equal(S, S.T)


def test_sym_rejects_nonsquare():
    with pytest.raises(PreconditionError):
        sym(np.zeros((2, 3)))


def test_eig_sym_diag():
    res = eig_sym(np.diag([3.0, 1.0]))
    assert np.allclose(res.eigenvalues, [1.0, 3.0], atol=1e-14)


def test_eig_sym_ones_matrix():
    res = eig_sym(np.ones((2, 2)))
    assert np.allclose(res.eigenvalues, [0.0, 2.0], atol=1e-14)


def test_eig_sym_zero_matrix():
    res = eig_sym(np.zeros((4, 4)))
    assert np.array_equal(res.eigenvalues, np.zeros(4))
    assert np.allclose(res.eigenvectors @ res.eigenvectors.T, np.eye(4), atol=1e-14)


def test_eig_sym_rejects_asymmetric():
    with pytest.raises(PreconditionError):
        eig_sym(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_eig_sym_invariants_random():
    rng = np.random.default_rng(1)
    for _ in range(50):
        d = int(rng.integers(2, 9))
        S = sym(rng.standard_normal((d, d)) * rng.uniform(0.1, 10))
        res = eig_sym(S)
        V, w = res.eigenvectors, res.eigenvalues
        assert np.all(np.diff(w) >= 0)
        scale = max(frobenius(S), 1e-30)
        assert frobenius(S - V @ np.diag(w) @ V.T) <= 1e-9 * scale
        assert np.max(np.abs(V.T @ V - np.eye(d))) <= 1e-10
        resid = S @ V - V @ np.diag(w)
        assert np.max(np.abs(resid)) <= 1e-10 * scale


def test_mu2_examples():
    assert mu2(np.eye(3)) == pytest.approx(1.0, abs=1e-14)
    assert mu2(np.array([[0.0, 1.0], [-1.0, 0.0]])) == pytest.approx(0.0, abs=1e-14)
    assert mu2(np.array([[1.0, 2.0], [0.0, 1.0]])) == pytest.approx(2.0, abs=1e-14)


def test_mu2_matches_independent_eigensolver():
    rng = np.random.default_rng(2)
    for _ in range(50):
        A = rng.standard_normal((6, 6))
        expected = float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])
        assert mu2(A) == pytest.approx(expected, abs=1e-11)


def test_mu2_limit_definition():
    rng = np.random.default_rng(3)
    for _ in range(20):
        A = rng.standard_normal((4, 4))
        target = mu2(A)
        quotients = []
        for h in (1e-5, 1e-6):
            q = (np.linalg.norm(np.eye(4) + h * A, ord=2) - 1.0) / h
            assert q == pytest.approx(target, abs=1e-3)
            quotients.append(q)
        # the difference quotient decreases monotonically toward the limit
        assert quotients[0] >= quotients[1] - 1e-9
        assert quotients[1] >= target - 1e-9


def test_sigma_extremes_examples():
    assert sigma_extremes(np.eye(3)) == pytest.approx((1.0, 1.0), abs=1e-14)
    assert sigma_extremes(np.diag([2.0, 0.5])) == pytest.approx((0.5, 2.0), abs=1e-12)
    assert sigma_extremes(np.array([[0.0, 3.0], [0.0, 0.0]])) == pytest.approx(
        (0.0, 3.0), abs=1e-12
    )


def test_spectral_norm_rectangular():
    rng = np.random.default_rng(4)
    for shape in ((3, 7), (7, 3), (5, 5)):
        A = rng.standard_normal(shape)
        assert spectral_norm(A) == pytest.approx(np.linalg.norm(A, ord=2), rel=1e-12)


def test_singular_value_bounds_lemma():
    rng = np.random.default_rng(5)
    for _ in range(200):
        m, n = rng.integers(1, 7, size=2)
        A = rng.standard_normal((m, n)) * rng.uniform(0.1, 5)
        x = rng.standard_normal(n)
        lo, hi = sigma_extremes(A)
        ax = np.linalg.norm(A @ x)
        nx = np.linalg.norm(x)
        assert lo * nx <= ax + 1e-10
        assert ax <= hi * nx + 1e-10


def test_quadratic_form_log_norm_lemma():
    rng = np.random.default_rng(6)
    for _ in range(200):
        n = int(rng.integers(1, 7))
        A = rng.standard_normal((n, n)) * rng.uniform(0.1, 5)
        x = rng.standard_normal(n)
        quad = float(x @ A @ x)
        nx2 = float(x @ x)
        assert -mu2(-A) * nx2 - 1e-10 <= quad <= mu2(A) * nx2 + 1e-10


def test_backends_agree():
    from shallowflow.backend import kernels

    rng = np.random.default_rng(7)
    for _ in range(10):
        S = sym(rng.standard_normal((5, 5)))
        w1, v1 = kernels.jacobi_eigh(S)
        w2, v2 = _kernels_py.jacobi_eigh(S)
        assert np.allclose(w1, w2, atol=1e-14)
        assert np.allclose(np.abs(v1), np.abs(v2), atol=1e-12)
        A = rng.standard_normal((4, 4))
        val1, mask1 = kernels.max_mu2_vertices(A, 0.1, False)
        val2, mask2 = _kernels_py.max_mu2_vertices(A, 0.1, False)
        assert val1 == pytest.approx(val2, abs=1e-14)
        assert mask1 == mask2


def test_matrix_text_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    A = rng.standard_normal((3, 5)) * 1e3
    path = tmp_path / "m.txt"
    save_matrix(path, A)
    B = load_matrix(path)
    assert np.array_equal(A, B)


def test_vector_text_round_trip():
    v = np.array([1.25, -3.5e-17, 7.0])
    lines = format_vector(v).splitlines()
    w, nxt = parse_vector_lines(lines)
    assert np.array_equal(v, w)
    assert nxt == len(lines)


def test_parse_errors_carry_position():
    with pytest.raises(ParseError, match="line 1"):
        parse_matrix_lines(["bogus header"])
    with pytest.raises(ParseError, match="line 3"):
        parse_matrix_lines(["2 2", "1 2"])
    with pytest.raises(ParseError, match="line 2"):
        parse_matrix_lines(["1 2", "1 x"])
    with pytest.raises(ParseError, match="line 2"):
        parse_matrix_lines(["1 3", "1 2"])


def test_format_matrix_17_digits():
    text = format_matrix(np.array([[np.pi]]))
    assert float(text.splitlines()[1]) == np.pi
