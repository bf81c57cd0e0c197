"""Outlier scores and the layerwise outlier distribution.

The score of a weight is the l2 norm of its input feature times the weight
magnitude; a weight is an outlier when its score is strictly more than
`m` times the mean score of its comparison unit (layer or transformer block).
The per-unit outlier fractions form the distribution the allocator consumes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .calib import CalibrationStats
from .model import Checkpoint, block_of

GRANULARITIES = ("layer", "block")


@dataclass(frozen=True)
class ProfileUnit:
    unit: str
    d: float
    params: int


@dataclass
class OutlierProfile:
    granularity: str
    m: float
    units: list[ProfileUnit]

    def validate(self) -> "OutlierProfile":
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        if self.m <= 1:
            raise ValueError("outlier multiplier m must be > 1")
        for u in self.units:
            if not 0.0 <= u.d <= 1.0:
                raise ValueError(f"unit {u.unit!r} has outlier ratio {u.d} outside [0,1]")
            if u.params <= 0:
                raise ValueError(f"unit {u.unit!r} has non-positive param count")
        return self

    def d_values(self) -> np.ndarray:
        return np.array([u.d for u in self.units], dtype=np.float64)

    def param_counts(self) -> np.ndarray:
        return np.array([u.params for u in self.units], dtype=np.float64)

    def lod_sum(self) -> float:
        """Summation of per-unit outlier ratios (the across-layer aggregate)."""
        return float(self.d_values().sum())

    def to_dict(self) -> dict:
        return {
            "granularity": self.granularity,
            "m": self.m,
            "units": [{"id": u.unit, "d": u.d, "params": u.params} for u in self.units],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OutlierProfile":
        units = [ProfileUnit(u["id"], u["d"], u["params"]) for u in d["units"]]
        return cls(d["granularity"], d["m"], units).validate()


def outlier_scores(w: np.ndarray, xnorms: np.ndarray) -> np.ndarray:
    """Score matrix a_ij = xnorms[j] * |w_ij| (float32, same shape as w)."""
    if xnorms.ndim != 1 or xnorms.shape[0] != w.shape[1]:
        raise ValueError(
            f"xnorms length {xnorms.shape} does not match weight columns {w.shape[1]}"
        )
    if (np.asarray(xnorms) < 0).any():
        raise ValueError("xnorms must be non-negative")
    return (np.abs(w) * xnorms.astype(np.float32)[None, :]).astype(np.float32)


def layer_outlier_ratio(a: np.ndarray, m: float) -> float:
    """Fraction of entries strictly above m times the mean score."""
    if a.size == 0:
        raise ValueError("empty score matrix")
    if m <= 1:
        raise ValueError("outlier multiplier m must be > 1")
    mean = float(a.astype(np.float64).mean())
    return float(np.count_nonzero(a.astype(np.float64) > m * mean)) / a.size


def post_prune_outlier_ratio(
    a: np.ndarray, keep: np.ndarray, frozen_mean: float, m: float
) -> float:
    """Outlier fraction of the kept entries against the pre-pruning mean.

    The denominator stays the full entry count (zeros included), so pruning
    can only lose outliers, never mint new ones.
    """
    if keep.shape != a.shape:
        raise ValueError(f"mask shape {keep.shape} does not match scores {a.shape}")
    kept_scores = a.astype(np.float64)[keep.astype(bool)]
    return float(np.count_nonzero(kept_scores > m * frozen_mean)) / a.size


def frozen_means(scores: dict[str, np.ndarray], granularity: str) -> dict[str, float]:
    """Pre-pruning mean score per unit, keyed like the profile's unit ids."""
    if granularity == "layer":
        return {name: float(a.astype(np.float64).mean()) for name, a in scores.items()}
    pooled: dict[str, list] = {}
    for name, a in scores.items():
        pooled.setdefault(block_of(name), []).append(a.astype(np.float64).ravel())
    return {b: float(np.concatenate(parts).mean()) for b, parts in pooled.items()}


def compute_scores(ckpt: Checkpoint, stats: CalibrationStats) -> dict[str, np.ndarray]:
    """Wanda-style outlier scores for every dense prunable layer."""
    scores = {}
    for name in ckpt.prunable_layers():
        if name not in stats.norms:
            raise ValueError(f"missing calibration stats for layer {name!r}")
        scores[name] = outlier_scores(ckpt.tensors[name], stats.norms[name])
    return scores


def build_profile(
    ckpt: Checkpoint,
    stats: CalibrationStats,
    m: float = 5.0,
    granularity: str = "block",
) -> OutlierProfile:
    """Outlier ratio per layer, or per block with a block-wide pooled mean."""
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown granularity {granularity!r}")
    scores = compute_scores(ckpt, stats)

    units = []
    if granularity == "layer":
        for name, a in scores.items():
            units.append(ProfileUnit(name, layer_outlier_ratio(a, m), a.size))
    else:
        pooled: dict[str, list] = {}
        for name, a in scores.items():
            pooled.setdefault(block_of(name), []).append(a.ravel())
        for blk in sorted(pooled, key=lambda b: int(b.split(".")[1])):
            flat = np.concatenate(pooled[blk])
            units.append(
                ProfileUnit(blk, layer_outlier_ratio(flat[None, :], m), flat.size)
            )
    return OutlierProfile(granularity, m, units).validate()


def write_profile_json(profile: OutlierProfile, path) -> None:
    with open(path, "w") as f:
        json.dump(profile.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")


def read_profile_json(path) -> OutlierProfile:
    with open(path) as f:
        return OutlierProfile.from_dict(json.load(f))


def write_profile_csv(profile: OutlierProfile, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["unit", "d", "params"])
        for u in profile.units:
            writer.writerow([u.unit, f"{u.d:.10g}", u.params])
