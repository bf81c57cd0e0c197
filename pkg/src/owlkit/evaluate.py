"""Perplexity, sparsity accounting vs plan, and a CSR matvec microbenchmark.

Perplexity uses non-overlapping windows of seq_len tokens; within each window
positions 1..seq_len-1 are predicted from their prefixes and the exponent of
the mean next-token cross-entropy is reported. The CSR kernel is backed by
scipy.sparse; conversion and the offsets/indices/values invariants are ours.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .alloc import SparsityPlan
from .model import Checkpoint, block_of, forward_logits
from .outlier import OutlierProfile


@dataclass
class CsrMatrix:
    rows: int
    cols: int
    offsets: np.ndarray  # int64, rows + 1
    indices: np.ndarray  # int64, nnz
    values: np.ndarray  # float32, nnz

    def validate(self) -> "CsrMatrix":
        if self.offsets.shape != (self.rows + 1,) or self.offsets[0] != 0:
            raise ValueError("bad row offsets")
        if (np.diff(self.offsets) < 0).any():
            raise ValueError("row offsets must be monotone")
        if self.offsets[-1] != self.indices.size or self.indices.size != self.values.size:
            raise ValueError("nnz mismatch between offsets, indices, and values")
        for r in range(self.rows):
            idx = self.indices[self.offsets[r] : self.offsets[r + 1]]
            if idx.size and ((np.diff(idx) <= 0).any() or idx[0] < 0 or idx[-1] >= self.cols):
                raise ValueError(f"row {r}: column indices not strictly increasing in range")
        return self

    @property
    def nnz(self) -> int:
        return int(self.offsets[-1])

    @classmethod
    def from_dense(cls, w: np.ndarray) -> "CsrMatrix":
        rows, cols = w.shape
        r_idx, c_idx = np.nonzero(w)
        offsets = np.zeros(rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(r_idx, minlength=rows), out=offsets[1:])
        return cls(
            rows, cols, offsets, c_idx.astype(np.int64), w[r_idx, c_idx].astype(np.float32)
        )

    def _scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.indices, self.offsets), shape=(self.rows, self.cols)
        )

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._scipy() @ x.astype(np.float32)

    def matmul_dense(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._scipy() @ x.astype(np.float32))


def window_nll(logits: np.ndarray, targets: np.ndarray) -> float:
    """Summed next-token negative log-likelihood; positions 1..L-1 of a window
    are predicted from logits[0..L-2]. Max-subtracted log-softmax in float64."""
    pred = logits[:-1].astype(np.float64)
    mx = pred.max(axis=1, keepdims=True)
    logz = mx[:, 0] + np.log(np.exp(pred - mx).sum(axis=1))
    return float((logz - pred[np.arange(pred.shape[0]), targets]).sum())


def perplexity(ckpt: Checkpoint, tokens, seq_len: int) -> float:
    """exp of mean next-token cross-entropy over non-overlapping windows."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size <= seq_len:
        raise ValueError(f"need more than seq_len={seq_len} tokens, got {tokens.size}")
    n_windows = tokens.size // seq_len
    total_nll = 0.0
    count = 0
    for w in range(n_windows):
        window = tokens[w * seq_len : (w + 1) * seq_len]
        total_nll += window_nll(forward_logits(ckpt, window), window[1:])
        count += seq_len - 1
    return float(np.exp(total_nll / count))


def forward_logits_csr(ckpt: Checkpoint, tokens) -> np.ndarray:
    """Forward pass with every dense prunable projection applied in CSR form."""
    csr = {name: CsrMatrix.from_dense(ckpt.tensors[name]) for name in ckpt.prunable_layers()}

    def project(name, w, x):
        return csr[name].matmul_dense(x.T).T

    return forward_logits(ckpt, tokens, project=project)


@dataclass
class SparsityReport:
    per_layer: dict[str, float]
    per_unit: dict[str, float]
    overall: float
    deviations: dict[str, float] = field(default_factory=dict)  # realized - planned

    def to_dict(self) -> dict:
        return {
            "per_layer": self.per_layer,
            "per_unit": self.per_unit,
            "overall": self.overall,
            "deviations": self.deviations,
        }


def sparsity_report(
    source: Checkpoint | dict[str, np.ndarray], plan: SparsityPlan | None = None
) -> SparsityReport:
    """Exact zero (or dropped) counts per layer, per plan unit, and overall."""
    if isinstance(source, Checkpoint):
        counts = {
            n: (int(np.count_nonzero(source.tensors[n] == 0.0)), source.tensors[n].size)
            for n in source.prunable_layers()
        }
    else:
        counts = {n: (int(np.count_nonzero(~m)), m.size) for n, m in source.items()}

    per_layer = {n: z / t for n, (z, t) in counts.items()}
    units: dict[str, list] = {}
    for n, (z, t) in counts.items():
        units.setdefault(block_of(n), []).append((z, t))
    per_unit = {u: sum(z for z, _ in v) / sum(t for _, t in v) for u, v in units.items()}

    total_zero = sum(z for z, _ in counts.values())
    total = sum(t for _, t in counts.values())
    overall = total_zero / total if total else 0.0

    deviations = {}
    if plan is not None:
        for e in plan.entries:
            realized = per_unit.get(e.unit, per_layer.get(e.unit))
            if realized is not None:
                deviations[e.unit] = realized - e.s
    return SparsityReport(per_layer, per_unit, overall, deviations)


def spmv_bench(
    w: np.ndarray,
    keep: np.ndarray | None = None,
    repetitions: int = 25,
    warmup: int = 5,
    rng=None,
) -> dict:
    """Median dense vs CSR matvec time on the masked matrix, plus agreement."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    masked = np.where(keep, w, np.float32(0.0)) if keep is not None else w
    rng = rng or np.random.default_rng(0)
    x = rng.standard_normal(masked.shape[1]).astype(np.float32)

    csr = CsrMatrix.from_dense(masked).validate()
    sparse_op = csr._scipy()

    def timed(fn):
        for _ in range(warmup):
            fn()
        samples = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        return float(np.median(samples))

    dense_t = timed(lambda: masked @ x)
    sparse_t = timed(lambda: sparse_op @ x)

    y_dense = masked @ x
    y_sparse = sparse_op @ x
    denom = max(float(np.abs(y_dense).max()), 1e-12)
    max_rel = float(np.abs(y_dense - y_sparse).max()) / denom

    return {
        "dense_seconds": dense_t,
        "sparse_seconds": sparse_t,
        "speedup": dense_t / sparse_t if sparse_t > 0 else float("inf"),
        "max_rel_diff": max_rel,
        "sparsity": 1.0 - csr.nnz / masked.size,
    }


@dataclass
class EvalReport:
    perplexity: float
    overall_sparsity: float
    per_unit_sparsity: dict[str, float]
    lod_before: dict | None = None
    lod_after: dict | None = None
    spmv: dict | None = None

    def validate(self) -> "EvalReport":
        if self.perplexity < 1.0:
            raise ValueError("perplexity below 1 is impossible")
        for s in [self.overall_sparsity, *self.per_unit_sparsity.values()]:
            if not 0.0 <= s <= 1.0:
                raise ValueError("sparsity outside [0, 1]")
        return self

    def to_dict(self) -> dict:
        out = {
            "perplexity": self.perplexity,
            "overall_sparsity": self.overall_sparsity,
            "per_unit_sparsity": self.per_unit_sparsity,
        }
        if self.lod_before is not None:
            out["lod_before"] = self.lod_before
        if self.lod_after is not None:
            out["lod_after"] = self.lod_after
            out["lod_delta_sum"] = self.lod_after["sum"] - self.lod_before["sum"]
        if self.spmv is not None:
            out["spmv"] = self.spmv
        return out


def lod_summary(profile: OutlierProfile) -> dict:
    return {
        "per_unit": {u.unit: u.d for u in profile.units},
        "sum": profile.lod_sum(),
        "m": profile.m,
        "granularity": profile.granularity,
    }


def post_prune_lod_summary(
    scores: dict[str, np.ndarray],
    masks: dict[str, np.ndarray],
    means: dict[str, float],
    m: float,
    granularity: str,
) -> dict:
    """Per-unit outlier ratios of the pruned model against frozen dense means."""
    from .outlier import post_prune_outlier_ratio

    per_unit: dict[str, float] = {}
    if granularity == "layer":
        for name, a in scores.items():
            per_unit[name] = post_prune_outlier_ratio(a, masks[name], means[name], m)
    else:
        grouped: dict[str, list[str]] = {}
        for name in scores:
            grouped.setdefault(block_of(name), []).append(name)
        for blk, members in grouped.items():
            a = np.concatenate([scores[n].ravel() for n in members])[None, :]
            keep = np.concatenate([masks[n].ravel() for n in members])[None, :]
            per_unit[blk] = post_prune_outlier_ratio(a, keep, means[blk], m)
    return {
        "per_unit": per_unit,
        "sum": float(sum(per_unit.values())),
        "m": m,
        "granularity": granularity,
    }
