"""Checkpoint compression: SVD truncation per a rank plan and weights-only
round-to-nearest quantization per a bit plan.

Quantization is symmetric per output row with an absmax scale and integer
range +/-(2^(b-1) - 1); the container stays float32, so executing a bit plan
replaces each planned weight with its dequantized tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alloc import BitPlan, RankPlan
from .model import Checkpoint
from .numkernel import truncated_svd


@dataclass
class QuantizedLayer:
    layer: str
    bits: int
    q: np.ndarray  # int32, C_out x C_in
    scales: np.ndarray  # float32, per output row

    def validate(self) -> "QuantizedLayer":
        qmax = (1 << (self.bits - 1)) - 1
        if np.abs(self.q).max(initial=0) > qmax:
            raise ValueError(f"quantized values exceed +/-{qmax}")
        zero_rows = self.scales == 0.0
        if (self.scales < 0).any():
            raise ValueError("negative quantization scale")
        if zero_rows.any() and self.q[zero_rows].any():
            raise ValueError("zero-scale row carries non-zero codes")
        return self


def quantize_rtn(w: np.ndarray, bits: int, layer: str = "") -> QuantizedLayer:
    """Round-to-nearest quantization; max elementwise error is scale / 2."""
    if bits < 2:
        raise ValueError("bits must be >= 2")
    qmax = (1 << (bits - 1)) - 1
    absmax = np.abs(w.astype(np.float64)).max(axis=1)
    scales = absmax / qmax
    safe = np.where(scales > 0.0, scales, 1.0)
    q = np.rint(w.astype(np.float64) / safe[:, None])
    q = np.clip(q, -qmax, qmax).astype(np.int32)
    q[scales == 0.0] = 0
    return QuantizedLayer(layer, bits, q, scales.astype(np.float32)).validate()


def dequantize(ql: QuantizedLayer) -> np.ndarray:
    return (ql.q.astype(np.float64) * ql.scales.astype(np.float64)[:, None]).astype(
        np.float32
    )


def svd_compress(ckpt: Checkpoint, rank_plan: RankPlan) -> Checkpoint:
    """Replace each planned dense layer by its truncated factors
    `<name>.svd_p` / `<name>.svd_q`; unplanned tensors are untouched."""
    tensors = dict(ckpt.tensors)
    for name, rank, d_min in rank_plan.entries:
        if name not in tensors:
            raise ValueError(f"rank plan names unknown layer {name!r}")
        w = tensors[name]
        if d_min != min(w.shape) or not 1 <= rank <= d_min:
            raise ValueError(f"rank {rank} out of range for layer {name!r} {w.shape}")
        p, q = truncated_svd(w, rank)
        del tensors[name]
        tensors[f"{name}.svd_p"] = p
        tensors[f"{name}.svd_q"] = q
    return Checkpoint(ckpt.config, tensors).validate()


def quantize_checkpoint(
    ckpt: Checkpoint, bit_plan: BitPlan
) -> tuple[Checkpoint, dict[str, QuantizedLayer]]:
    """Execute a bit plan: planned layers become dequantize(quantize(w)).

    Plan entries may name layers or blocks; block entries apply to every
    member projection.
    """
    tensors = dict(ckpt.tensors)
    layers: dict[str, QuantizedLayer] = {}
    for unit, bits, _ in bit_plan.entries:
        members = (
            [unit]
            if unit in tensors
            else [n for n in ckpt.prunable_layers() if n.startswith(unit + ".")]
        )
        if not members:
            raise ValueError(f"bit plan names unknown unit {unit!r}")
        for name in members:
            ql = quantize_rtn(tensors[name], bits, name)
            layers[name] = ql
            tensors[name] = dequantize(ql)
    return Checkpoint(ckpt.config, tensors).validate(), layers
