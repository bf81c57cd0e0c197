"""Pruning scores, mask construction under four comparison groupings, and N:M masks.

Within every comparison group the k lowest-scoring weights are dropped, with
k = round(s * group_size) (half-up). Ties are broken by ascending
(layer order, row, column): the stable sort over canonically-ordered flats
prunes the lower index first, so masks are reproducible and nested in s.
"""

from __future__ import annotations

import numpy as np

from .model import Checkpoint, block_of
from .alloc import NMPlan, SparsityPlan

GROUPINGS = ("per_output", "per_layer", "per_block", "global")
METRICS = ("magnitude", "wanda")


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def prune_scores(w: np.ndarray, xnorms: np.ndarray | None, metric: str) -> np.ndarray:
    """Pruning score matrix: |w| for magnitude, xnorms_j * |w_ij| for wanda."""
    if metric == "magnitude":
        return np.abs(w).astype(np.float32)
    if metric == "wanda":
        from .outlier import outlier_scores

        if xnorms is None:
            raise ValueError("wanda metric requires calibration norms")
        return outlier_scores(w, xnorms)
    raise ValueError(f"unknown metric {metric!r}")


def _drop_lowest(flat_scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean keep vector dropping the k lowest scores, stable tie order."""
    keep = np.ones(flat_scores.size, dtype=bool)
    if k > 0:
        order = np.argsort(flat_scores, kind="stable")
        keep[order[:k]] = False
    return keep


def _resolve_sparsity(plan: SparsityPlan, layer: str) -> float:
    """Layer's target from its own plan entry or its block's entry."""
    for e in plan.entries:
        if e.unit == layer:
            return e.s
    blk = block_of(layer)
    for e in plan.entries:
        if e.unit == blk:
            return e.s
    raise ValueError(f"plan does not cover layer {layer!r}")


def build_mask(
    scores: dict[str, np.ndarray],
    plan: SparsityPlan,
    grouping: str = "per_output",
) -> dict[str, np.ndarray]:
    """Keep-masks per layer under the requested comparison grouping.

    `scores` must be keyed by canonical layer names in canonical order;
    per_block pools each block's matrices, global pools everything and uses
    the plan's global target.
    """
    if grouping not in GROUPINGS:
        raise ValueError(f"unknown grouping {grouping!r}")
    names = list(scores)
    masks: dict[str, np.ndarray] = {}

    if grouping == "per_output":
        for name in names:
            a = scores[name]
            s = _resolve_sparsity(plan, name)
            k = round_half_up(s * a.shape[1])
            keep = np.empty(a.shape, dtype=bool)
            for r in range(a.shape[0]):
                keep[r] = _drop_lowest(a[r], k)
            masks[name] = keep
    elif grouping == "per_layer":
        for name in names:
            a = scores[name]
            s = _resolve_sparsity(plan, name)
            k = round_half_up(s * a.size)
            masks[name] = _drop_lowest(a.ravel(), k).reshape(a.shape)
    elif grouping == "per_block":
        blocks: dict[str, list[str]] = {}
        for name in names:
            blocks.setdefault(block_of(name), []).append(name)
        for blk, members in blocks.items():
            flat = np.concatenate([scores[n].ravel() for n in members])
            s = _resolve_sparsity(plan, blk)
            keep = _drop_lowest(flat, round_half_up(s * flat.size))
            pos = 0
            for n in members:
                size = scores[n].size
                masks[n] = keep[pos : pos + size].reshape(scores[n].shape)
                pos += size
    else:  # global
        flat = np.concatenate([scores[n].ravel() for n in names])
        keep = _drop_lowest(flat, round_half_up(plan.global_s * flat.size))
        pos = 0
        for n in names:
            size = scores[n].size
            masks[n] = keep[pos : pos + size].reshape(scores[n].shape)
            pos += size
    return masks


def build_nm_mask(
    scores: dict[str, np.ndarray], nm_plan: NMPlan
) -> dict[str, np.ndarray]:
    """Keep the n_i highest scores in every group of m consecutive weights
    along the input dimension; a short tail group keeps ceil(n * len / m)."""
    m = nm_plan.m_group
    masks = {}
    for name, a in scores.items():
        try:
            n_i = nm_plan.n_for(name)
        except KeyError:
            n_i = nm_plan.n_for(block_of(name))
        keep = np.ones(a.shape, dtype=bool)
        for start in range(0, a.shape[1], m):
            g = a[:, start : start + m]
            glen = g.shape[1]
            n_keep = n_i if glen == m else int(np.ceil(n_i * glen / m))
            drop = glen - min(n_keep, glen)
            if drop <= 0:
                continue
            order = np.argsort(g, axis=1, kind="stable")
            rows = np.repeat(np.arange(a.shape[0]), drop)
            cols = (start + order[:, :drop]).ravel()
            keep[rows, cols] = False
        masks[name] = keep
    return masks


def apply_masks(ckpt: Checkpoint, masks: dict[str, np.ndarray]) -> Checkpoint:
    """New checkpoint with masked entries set to exactly 0.0."""
    prunable = set(ckpt.prunable_layers())
    tensors = dict(ckpt.tensors)
    for name, keep in masks.items():
        if name not in prunable:
            raise ValueError(f"mask for non-prunable layer {name!r}")
        w = tensors[name]
        if keep.shape != w.shape:
            raise ValueError(
                f"mask shape {keep.shape} does not match weight {w.shape} for {name!r}"
            )
        tensors[name] = np.where(keep, w, np.float32(0.0))
    return Checkpoint(ckpt.config, tensors).validate()


def mask_sparsity(keep: np.ndarray) -> float:
    return 1.0 - float(np.count_nonzero(keep)) / keep.size
