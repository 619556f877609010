import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsrx.tensor import (
    cp_tensor,
    diag,
    diag_row,
    dominant_singular_triplet,
    fold,
    khatri_rao,
    kron,
    mode_n_product,
    pinv,
    unfold,
    unvec,
    vec,
)

from conftest import crand, rel_err

seeds = st.integers(min_value=0, max_value=2**32 - 1)


class TestKron:
    def test_scalar_one_identity(self, rng):
        B = crand(rng, 3, 2)
        np.testing.assert_array_equal(kron(np.array([[1.0]]), B), B)

    def test_column_expansion(self):
        out = kron(np.array([[1], [2]]), np.array([[1], [-1]]))
        np.testing.assert_array_equal(out.ravel(), [1, -1, 2, -2])

    def test_shape_rule(self):
        assert kron(np.ones((2, 3)), np.ones((4, 5))).shape == (8, 15)

    def test_blocks(self, rng):
        A, B = crand(rng, 2, 3), crand(rng, 4, 2)
        K = kron(A, B)
        for i, j in itertools.product(range(2), range(3)):
            np.testing.assert_allclose(K[4 * i:4 * i + 4, 2 * j:2 * j + 2], A[i, j] * B)


class TestKhatriRao:
    def test_single_column(self, rng):
        a, b = crand(rng, 3, 1), crand(rng, 4, 1)
        np.testing.assert_allclose(khatri_rao(a, b), np.kron(a, b))

    def test_identity(self):
        out = khatri_rao(np.eye(2), np.eye(2))
        np.testing.assert_array_equal(out[:, 0], [1, 0, 0, 0])
        np.testing.assert_array_equal(out[:, 1], [0, 0, 0, 1])

    def test_column_mismatch(self):
        with pytest.raises(ValueError):
            khatri_rao(np.ones((2, 2)), np.ones((2, 3)))

    @settings(max_examples=25, deadline=None)
    @given(seeds)
    def test_mixed_product(self, seed):
        rng = np.random.default_rng(seed)
        A, B, C, D = (crand(rng, 3, 3) for _ in range(4))
        lhs = khatri_rao(A @ C, B @ D)
        rhs = kron(A, B) @ khatri_rao(C, D)
        assert rel_err(lhs, rhs) < 1e-12


class TestVec:
    def test_column_stacking(self):
        np.testing.assert_array_equal(vec(np.array([[1, 3], [2, 4]])), [1, 2, 3, 4])

    def test_roundtrip(self, rng):
        A = crand(rng, 4, 6)
        np.testing.assert_array_equal(unvec(vec(A), 4, 6), A)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            unvec(np.ones(5), 2, 3)

    @settings(max_examples=25, deadline=None)
    @given(seeds)
    def test_vec_diag_identity(self, seed):
        rng = np.random.default_rng(seed)
        A, b, C = crand(rng, 3, 4), crand(rng, 4), crand(rng, 4, 5)
        lhs = vec(A @ np.diag(b) @ C)
        rhs = khatri_rao(C.T, A) @ b
        assert rel_err(lhs, rhs) < 1e-12


class TestDiag:
    def test_diag(self):
        np.testing.assert_array_equal(diag([1, 2]), [[1, 0], [0, 2]])

    def test_diag_row(self):
        # third row of I3 (0-based index 1 is the middle row)
        np.testing.assert_array_equal(diag_row(np.eye(3), 1), np.diag([0, 1, 0]))

    def test_diag_row_out_of_range(self):
        with pytest.raises(IndexError):
            diag_row(np.eye(3), 3)

    def test_diag_matches_hadamard(self, rng):
        a, x = crand(rng, 5), crand(rng, 5)
        np.testing.assert_allclose(diag(a) @ x, a * x)


class TestUnfold:
    def test_mode0_first_row(self):
        T = np.arange(1, 9).reshape(2, 2, 2, order="F")
        np.testing.assert_array_equal(unfold(T, 0)[0], [1, 3, 5, 7])

    @pytest.mark.parametrize("mode", [0, 1, 2])
    def test_fold_roundtrip(self, rng, mode):
        T = crand(rng, 3, 4, 5)
        np.testing.assert_array_equal(fold(unfold(T, mode), mode, T.shape), T)

    def test_invalid_mode(self, rng):
        with pytest.raises(ValueError):
            unfold(crand(rng, 2, 2), 2)

    def test_fold_shape_mismatch(self):
        with pytest.raises(ValueError):
            fold(np.ones((3, 5)), 0, (3, 2, 2))

    @pytest.mark.parametrize("shape", [(3, 4, 5), (2, 3, 2, 4)])
    def test_cp_unfolding_convention(self, rng, shape):
        R = 3
        U = [crand(rng, n, R) for n in shape]
        # brute-force CP reconstruction
        T = np.zeros(shape, dtype=complex)
        for idx in itertools.product(*(range(n) for n in shape)):
            T[idx] = sum(np.prod([U[m][idx[m], r] for m in range(len(shape))]) for r in range(R))
        np.testing.assert_allclose(cp_tensor(U), T, atol=1e-12)
        for n in range(len(shape)):
            others = [U[m] for m in reversed(range(len(shape))) if m != n]
            np.testing.assert_allclose(unfold(T, n), U[n] @ khatri_rao(*others).T, atol=1e-12)


class TestModeProduct:
    @pytest.mark.parametrize("mode", [0, 1, 2])
    def test_identity(self, rng, mode):
        T = crand(rng, 3, 4, 5)
        out = mode_n_product(T, np.eye(T.shape[mode]), mode)
        assert out.shape == T.shape
        np.testing.assert_array_equal(out, T)

    def test_distinct_modes_commute(self, rng):
        T, A, B = crand(rng, 3, 4, 5), crand(rng, 2, 3), crand(rng, 6, 4)
        lhs = mode_n_product(mode_n_product(T, A, 0), B, 1)
        rhs = mode_n_product(mode_n_product(T, B, 1), A, 0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_same_mode_composes(self, rng):
        T, A, B = crand(rng, 3, 4, 5), crand(rng, 6, 5), crand(rng, 2, 6)
        lhs = mode_n_product(mode_n_product(T, A, 2), B, 2)
        np.testing.assert_allclose(lhs, mode_n_product(T, B @ A, 2), atol=1e-12)

    def test_brute_force(self, rng):
        T, A = crand(rng, 3, 4, 2), crand(rng, 5, 4)
        out = mode_n_product(T, A, 1)
        ref = np.einsum("ijk,lj->ilk", T, A)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            mode_n_product(crand(rng, 3, 4), np.ones((2, 3)), 1)


class TestPinv:
    def test_identity(self):
        np.testing.assert_allclose(pinv(np.eye(4)), np.eye(4))

    def test_orthonormal_rows(self, rng):
        Q, _ = np.linalg.qr(crand(rng, 5, 3))
        A = Q.conj().T
        np.testing.assert_allclose(pinv(A), A.conj().T, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seeds)
    def test_penrose_axioms(self, seed):
        A = crand(np.random.default_rng(seed), 6, 4)
        X = pinv(A)
        assert np.linalg.norm(A @ X @ A - A) < 1e-10
        assert np.linalg.norm(X @ A @ X - X) < 1e-10
        assert np.linalg.norm((A @ X).conj().T - A @ X) < 1e-10
        assert np.linalg.norm((X @ A).conj().T - X @ A) < 1e-10

    def test_double_application(self, rng):
        A = crand(rng, 5, 3)
        np.testing.assert_allclose(pinv(pinv(A)), A, atol=1e-10)

    def test_rank_reported(self, rng):
        A = crand(rng, 6, 2) @ crand(rng, 2, 5)
        _, rank = pinv(A, return_rank=True)
        assert rank == 2


class TestDominantTriplet:
    def test_scaled_basis(self):
        A = np.zeros((3, 3), dtype=complex)
        A[0, 0] = 3
        u, s, v = dominant_singular_triplet(A)
        assert s == pytest.approx(3)
        np.testing.assert_allclose(v, [1, 0, 0], atol=1e-15)

    def test_rank_one_recovers_right_vector(self, rng):
        x, y = crand(rng, 4), crand(rng, 5)
        u, s, v = dominant_singular_triplet(np.outer(x, y.conj()))
        ref = y / np.linalg.norm(y)
        ref = ref * abs(ref[0]) / ref[0]
        np.testing.assert_allclose(v, ref, atol=1e-12)
        assert np.isreal(v[0]) and v[0].real > 0

    def test_matches_full_svd(self, rng):
        A = crand(rng, 8, 32)
        u, s, v = dominant_singular_triplet(A)
        U, S, Vh = np.linalg.svd(A)
        assert abs(s - S[0]) < 1e-10
        # same singular subspace, phase-insensitive
        assert abs(abs(np.vdot(Vh[0].conj(), v)) - 1) < 1e-10
        np.testing.assert_allclose(A @ v, s * u, atol=1e-10)
        assert np.linalg.norm(u) == pytest.approx(1) and np.linalg.norm(v) == pytest.approx(1)

    def test_zero_matrix(self):
        with pytest.raises(ValueError):
            dominant_singular_triplet(np.zeros((2, 2)))
