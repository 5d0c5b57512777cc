import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riemnet.errors import DegenerateShape, NotPositiveDefinite, NotSymmetric, RankDeficient, ShapeMismatch
from riemnet.linalg import (
    as_tensor,
    dumps_tensor,
    loads_tensor,
    qr_thin,
    spd_solve,
    spd_sqrt_log,
    sym_eig,
)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_as_tensor_scalar_becomes_rank_one():
    t = as_tensor(3.0)
    assert t.shape == (1,) and t.dtype == np.float64


def test_as_tensor_rejects_empty_axis():
    with pytest.raises(DegenerateShape):
        as_tensor(np.zeros((0, 3)))


class TestQr:
    def test_scaled_identity(self):
        q, r = qr_thin([[2.0, 0.0], [0.0, 3.0]])
        np.testing.assert_allclose(q, np.eye(2), atol=1e-15)
        np.testing.assert_allclose(r, [[2.0, 0.0], [0.0, 3.0]], atol=1e-15)

    def test_permutation_has_identity_r(self):
        q, r = qr_thin([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(q, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)
        np.testing.assert_allclose(r, np.eye(2), atol=1e-15)

    def test_random_gaussian_reconstruction(self):
        a = np.random.default_rng(0).standard_normal((4, 2))
        q, r = qr_thin(a)
        assert np.linalg.norm(q.T @ q - np.eye(2)) <= 1e-10
        assert rel(q @ r, a) <= 1e-10
        assert np.all(np.diag(r) > 0)
        assert np.allclose(np.tril(r, -1), 0.0)

    def test_matches_lapack_up_to_signs(self):
        a = np.random.default_rng(1).standard_normal((7, 4))
        q, r = qr_thin(a)
        q_ref, r_ref = np.linalg.qr(a)
        signs = np.sign(np.diag(r_ref))
        np.testing.assert_allclose(q, q_ref * signs, atol=1e-12)
        np.testing.assert_allclose(r, r_ref * signs[:, None], atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_invariants_on_full_rank_input(self, n, p, seed):
        n, p = max(n, p), min(n, p)
        a = np.random.default_rng(seed).standard_normal((n, p))
        q, r = qr_thin(a)
        assert np.linalg.norm(q.T @ q - np.eye(p)) <= 1e-10
        assert np.linalg.norm(q @ r - a) <= 1e-10 * np.linalg.norm(a)
        np.testing.assert_allclose(qr_thin(q).q, q, rtol=0, atol=1e-12)

    def test_rank_deficient(self):
        a = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
        with pytest.raises(RankDeficient):
            qr_thin(a)

    def test_wide_matrix_rejected(self):
        with pytest.raises(ShapeMismatch):
            qr_thin(np.ones((2, 3)))


class TestSymEig:
    def test_diagonal(self):
        w, v = sym_eig(np.diag([3.0, 1.0]))
        np.testing.assert_array_equal(w, [1.0, 3.0])
        np.testing.assert_array_equal(v, [[0.0, 1.0], [1.0, 0.0]])

    def test_swap_matrix(self):
        w, _ = sym_eig([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(w, [-1.0, 1.0], atol=1e-15)

    def test_random_reconstruction(self):
        m = np.random.default_rng(2).standard_normal((6, 6))
        a = m + m.T
        w, v = sym_eig(a)
        assert np.all(np.diff(w) >= 0)
        assert rel((v * w) @ v.T, a) <= 1e-9
        np.testing.assert_allclose(v.T @ v, np.eye(6), atol=1e-12)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 9), st.floats(-50, 50), st.integers(0, 2**32 - 1))
    def test_shift_invariance(self, n, c, seed):
        m = np.random.default_rng(seed).standard_normal((n, n))
        a = m + m.T
        w = sym_eig(a).eigenvalues
        w_shift = sym_eig(a + c * np.eye(n)).eigenvalues
        np.testing.assert_allclose(w_shift, w + c, atol=1e-9)

    def test_not_symmetric(self):
        with pytest.raises(NotSymmetric):
            sym_eig([[1.0, 2.0], [0.0, 1.0]])

    def test_roundoff_asymmetry_tolerated(self):
        a = np.array([[2.0, 1.0], [1.0 + 1e-14, 3.0]])
        w, _ = sym_eig(a)
        np.testing.assert_allclose(w, np.linalg.eigvalsh((a + a.T) / 2), atol=1e-12)


class TestSpdSolve:
    def test_identity(self):
        b = np.array([[1.0, -2.0], [3.0, 0.5]])
        np.testing.assert_allclose(spd_solve(np.eye(2), b), b)

    def test_diagonal(self):
        np.testing.assert_allclose(spd_solve(np.diag([2.0, 4.0]), np.array([2.0, 4.0])), [1.0, 1.0])

    def test_random_residual(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((5, 5))
        a = m @ m.T + np.eye(5)
        b = rng.standard_normal((5, 3))
        x = spd_solve(a, b)
        assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) <= 1e-9

    def test_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            spd_solve([[1.0, 2.0], [2.0, 1.0]], np.ones(2))


class TestSpdFunctions:
    def test_sqrt_diagonal(self):
        np.testing.assert_allclose(spd_sqrt_log(np.diag([4.0, 9.0]), "sqrt"), np.diag([2.0, 3.0]), atol=1e-15)

    def test_log_identity_is_zero(self):
        np.testing.assert_array_equal(spd_sqrt_log(np.eye(3), "log"), np.zeros((3, 3)))

    def test_inv_sqrt_whitens(self):
        m = np.random.default_rng(4).standard_normal((5, 5))
        a = m @ m.T + np.eye(5)
        s = spd_sqrt_log(a, "inv_sqrt")
        assert np.linalg.norm(s @ a @ s - np.eye(5)) <= 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 7), st.integers(0, 2**32 - 1))
    def test_sqrt_squares_back(self, n, seed):
        m = np.random.default_rng(seed).standard_normal((n, n))
        a = m @ m.T + 0.1 * np.eye(n)
        s = spd_sqrt_log(a, "sqrt")
        np.testing.assert_array_equal(s, s.T)
        assert rel(s @ s, a) <= 1e-9

    def test_log_against_scipy(self):
        import scipy.linalg

        m = np.random.default_rng(5).standard_normal((4, 4))
        a = m @ m.T + np.eye(4)
        np.testing.assert_allclose(spd_sqrt_log(a, "log"), scipy.linalg.logm(a).real, atol=1e-10)

    def test_singular(self):
        with pytest.raises(NotPositiveDefinite):
            spd_sqrt_log(np.diag([1.0, 0.0]), "sqrt")

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            spd_sqrt_log(np.eye(2), "exp")


class TestSerialization:
    def test_format(self):
        text = dumps_tensor(np.array([[1.0, 0.1], [2.0, -3.5]]))
        assert text.splitlines() == ["shape: 2 2", "1 0.10000000000000001", "2 -3.5"]

    @pytest.mark.parametrize("shape", [(1,), (5,), (3, 4), (2, 3, 4)])
    def test_round_trip_bitwise(self, shape):
        t = np.random.default_rng(6).standard_normal(shape) * 1e3
        back = loads_tensor(dumps_tensor(t))
        assert back.shape == t.shape
        np.testing.assert_array_equal(back, t)

    def test_truncated(self):
        with pytest.raises(ValueError):
            loads_tensor("shape: 2 2\n1 2\n")
