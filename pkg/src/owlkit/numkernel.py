"""Dense numeric kernels shared by the toolkit.

Matrices are plain 2-D numpy arrays of float32 (row-major). Dot products and
norms accumulate in float64 before rounding back to float32, matching the
precision the rest of the pipeline assumes. The seeded RNG is numpy's PCG64,
whose stream is stable across platforms and numpy releases.
"""

from __future__ import annotations

import numpy as np

Matrix = np.ndarray


def matrix(data, dtype=np.float32) -> Matrix:
    """Coerce `data` to a validated 2-D float32 matrix (copies if needed)."""
    m = np.asarray(data, dtype=dtype)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    return validate_matrix(np.ascontiguousarray(m))


def validate_matrix(m: Matrix) -> Matrix:
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    if m.dtype != np.float32:
        raise ValueError(f"matrix must be float32, got {m.dtype}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite entries")
    return m


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64): identical seed, identical stream."""
    return np.random.Generator(np.random.PCG64(seed))


def derived_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent stream derived from (seed, *path), e.g. per grid point."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *path])))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Product of two float32 matrices, accumulated in float64."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def select_kth_smallest(values, k: int) -> float:
    """k-th smallest value, 1-indexed; duplicates count separately."""
    v = np.asarray(values)
    if v.size == 0:
        raise ValueError("select_kth_smallest on empty input")
    if not 1 <= k <= v.size:
        raise ValueError(f"k={k} out of range [1, {v.size}]")
    return float(np.partition(v.ravel(), k - 1)[k - 1])


def truncated_svd(w: Matrix, r: int, *, tol: float = 1e-12, max_sweeps: int = 60):
    """Best rank-r factorization of `w` as (p, q) with p: rows x r, q: r x cols.

    One-sided Jacobi run along the smaller dimension: columns of the working
    matrix are orthogonalized by plane rotations until every off-diagonal
    Gram entry is negligible, which yields the singular triplets without
    forming the Gram matrix explicitly. Accurate enough that the residual
    ||w - p@q||_F^2 matches the tail of the squared singular values to ~1e-10
    relative on desk-scale inputs.
    """
    w = validate_matrix(np.asarray(w, dtype=np.float32))
    rows, cols = w.shape
    dmin = min(rows, cols)
    if not 1 <= r <= dmin:
        raise ValueError(f"rank {r} out of range [1, {dmin}]")

    transposed = cols > rows
    a = np.array(w.T if transposed else w, dtype=np.float64)  # m x k, k = dmin
    k = a.shape[1]
    v = np.eye(k)

    for _ in range(max_sweeps):
        rotated = False
        for p_i in range(k - 1):
            for q_i in range(p_i + 1, k):
                cp = a[:, p_i]
                cq = a[:, q_i]
                apq = cp @ cq
                app = cp @ cp
                aqq = cq @ cq
                if abs(apq) <= tol * np.sqrt(app * aqq):
                    continue
                rotated = True
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                a_p = c * cp - s * cq
                a_q = s * cp + c * cq
                a[:, p_i], a[:, q_i] = a_p, a_q
                v_p = c * v[:, p_i] - s * v[:, q_i]
                v_q = s * v[:, p_i] + c * v[:, q_i]
                v[:, p_i], v[:, q_i] = v_p, v_q
        if not rotated:
            break

    sigma = np.sqrt(np.sum(a * a, axis=0))
    order = np.argsort(-sigma, kind="stable")[:r]

    # Columns of `a` are u_i * sigma_i after convergence.
    if not transposed:
        p_fac = a[:, order]
        q_fac = v[:, order].T
    else:
        # w = (u sigma v^T)^T of the worked matrix: swap the roles.
        p_fac = v[:, order] * sigma[order]
        u = np.zeros((a.shape[0], len(order)))
        for j, idx in enumerate(order):
            if sigma[idx] > 0.0:
                u[:, j] = a[:, idx] / sigma[idx]
        q_fac = u.T

    return p_fac.astype(np.float32), q_fac.astype(np.float32)
