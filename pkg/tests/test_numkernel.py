import numpy as np
import pytest

from owlkit.numkernel import (
    matmul,
    matrix,
    seeded_rng,
    select_kth_smallest,
    truncated_svd,
)


def gram_tail_energy(w, r):
    """Oracle: sum of squared singular values below rank r, via eigh(w^T w)."""
    g = w.astype(np.float64).T @ w.astype(np.float64)
    eigvals = np.linalg.eigvalsh(g)  # ascending
    eigvals = np.clip(eigvals, 0.0, None)
    return float(np.sort(eigvals)[::-1][r:].sum())


class TestMatmul:
    def test_identity(self):
        a = matrix([[1, 2], [3, 4]])
        assert np.array_equal(matmul(matrix(np.eye(2)), a), a)

    def test_forced_product(self):
        a = matrix([[1, 2], [3, 4]])
        b = matrix([[5, 6], [7, 8]])
        assert np.array_equal(matmul(a, b), matrix([[19, 22], [43, 50]]))

    def test_zero(self):
        z = matrix(np.zeros((3, 2)))
        b = matrix(np.ones((2, 4)))
        assert np.array_equal(matmul(z, b), np.zeros((3, 4), dtype=np.float32))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            matmul(matrix(np.ones((2, 3))), matrix(np.ones((2, 3))))

    def test_associativity(self):
        rng = seeded_rng(7)
        for _ in range(20):
            a = matrix(rng.standard_normal((5, 4)))
            b = matrix(rng.standard_normal((4, 6)))
            c = matrix(rng.standard_normal((6, 3)))
            lhs = matmul(matmul(a, b), c)
            rhs = matmul(a, matmul(b, c))
            np.testing.assert_allclose(lhs, rhs, rtol=1e-4, atol=1e-5)


class TestSelectKthSmallest:
    def test_basic(self):
        assert select_kth_smallest([3, 1, 2], 2) == 2

    def test_all_equal(self):
        assert select_kth_smallest([5, 5, 5], 3) == 5

    def test_matches_full_sort_oracle(self):
        rng = seeded_rng(11)
        values = rng.random(1000)
        assert select_kth_smallest(values, 100) == float(np.sort(values)[99])

    def test_all_k_agree_with_sort(self):
        rng = seeded_rng(12)
        values = rng.random(64)
        full = np.sort(values)
        for k in range(1, 65):
            assert select_kth_smallest(values, k) == full[k - 1]

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            select_kth_smallest([], 1)
        with pytest.raises(ValueError, match="out of range"):
            select_kth_smallest([1.0, 2.0], 3)
        with pytest.raises(ValueError, match="out of range"):
            select_kth_smallest([1.0], 0)


class TestTruncatedSvd:
    def test_diagonal(self):
        w = matrix(np.diag([3.0, 1.0]))
        p, q = truncated_svd(w, 1)
        np.testing.assert_allclose(p @ q, np.diag([3.0, 0.0]), atol=1e-6)
        err = np.linalg.norm(w - p @ q) ** 2
        assert abs(err - 1.0) < 1e-5

    def test_full_rank_reconstructs(self):
        rng = seeded_rng(3)
        w = matrix(rng.standard_normal((7, 5)))
        p, q = truncated_svd(w, 5)
        np.testing.assert_allclose(p @ q, w, atol=1e-5)

    def test_error_matches_gram_oracle(self):
        rng = seeded_rng(4)
        w = matrix(rng.standard_normal((8, 6)))
        p, q = truncated_svd(w, 3)
        err = float(np.linalg.norm((w - p @ q).astype(np.float64)) ** 2)
        expected = gram_tail_energy(w, 3)
        assert abs(err - expected) <= 1e-4 * max(expected, 1e-30)

    def test_wide_matrix(self):
        rng = seeded_rng(5)
        w = matrix(rng.standard_normal((6, 9)))
        fro = float(np.linalg.norm(w))
        for r in (1, 3, 6):
            p, q = truncated_svd(w, r)
            assert p.shape == (6, r) and q.shape == (r, 9)
            err = float(np.linalg.norm((w - p @ q).astype(np.float64)) ** 2)
            expected = gram_tail_energy(w, r)
            # float32 factors leave ~(1e-5 * ||w||)^2 of noise at full rank
            assert abs(err - expected) <= 1e-4 * expected + (1e-5 * fro) ** 2

    def test_error_non_increasing_in_rank(self):
        rng = seeded_rng(6)
        w = matrix(rng.standard_normal((10, 8)))
        errs = []
        for r in range(1, 9):
            p, q = truncated_svd(w, r)
            errs.append(np.linalg.norm(w - p @ q))
        assert all(a >= b - 1e-6 for a, b in zip(errs, errs[1:]))
        assert errs[-1] <= 1e-5 * np.linalg.norm(w)

    def test_low_rank_input_exact(self):
        rng = seeded_rng(8)
        u = rng.standard_normal((8, 1))
        v = rng.standard_normal((1, 6))
        w = matrix(u @ v)
        p, q = truncated_svd(w, 1)
        np.testing.assert_allclose(p @ q, w, atol=1e-5)

    def test_rank_out_of_range(self):
        w = matrix(np.ones((3, 4)))
        with pytest.raises(ValueError, match="out of range"):
            truncated_svd(w, 0)
        with pytest.raises(ValueError, match="out of range"):
            truncated_svd(w, 4)


class TestMatrixValidation:
    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="non-finite"):
            matrix([[1.0, float("nan")]])

    def test_rejects_1d(self):
        with pytest.raises(ValueError, match="2-D"):
            matrix([1.0, 2.0])


def test_seeded_rng_repeatable():
    a = seeded_rng(123).integers(0, 1 << 30, 16)
    b = seeded_rng(123).integers(0, 1 << 30, 16)
    assert np.array_equal(a, b)
