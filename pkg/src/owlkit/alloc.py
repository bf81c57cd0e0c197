"""Sparsity, N:M, rank, and bit-width allocation from an outlier profile.

The core mapping places each unit inside the band [target - lam, target + lam]
by min-max normalizing its outlier ratio (larger ratio, smaller sparsity),
shifts uniformly so the parameter-weighted mean hits the target exactly, and
resolves any band violations by clipping and redistributing the residual
budget over the still-free units until a fixpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .outlier import OutlierProfile

SCHEMES = ("owl", "owl_inverse", "uniform", "er", "er_plus")


@dataclass(frozen=True)
class PlanEntry:
    unit: str
    s: float
    params: int


@dataclass
class SparsityPlan:
    scheme: str
    global_s: float
    lam: float
    entries: list[PlanEntry]

    def sparsities(self) -> np.ndarray:
        return np.array([e.s for e in self.entries], dtype=np.float64)

    def param_counts(self) -> np.ndarray:
        return np.array([e.params for e in self.entries], dtype=np.float64)

    def sparsity_for(self, unit: str) -> float:
        for e in self.entries:
            if e.unit == unit:
                return e.s
        raise KeyError(f"no plan entry for unit {unit!r}")

    def weighted_mean(self) -> float:
        w = self.param_counts()
        return float(self.sparsities() @ (w / w.sum()))

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "global_s": self.global_s,
            "lambda": self.lam,
            "entries": [{"id": e.unit, "s": e.s, "params": e.params} for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SparsityPlan":
        entries = [PlanEntry(e["id"], e["s"], e["params"]) for e in d["entries"]]
        return cls(d["scheme"], d["global_s"], d["lambda"], entries)


@dataclass
class NMPlan:
    m_group: int
    n_target: float
    entries: list[tuple[str, int, int]]  # (unit, n_i, params)

    def n_for(self, unit: str) -> int:
        for u, n, _ in self.entries:
            if u == unit:
                return n
        raise KeyError(f"no N:M entry for unit {unit!r}")

    def weighted_mean_n(self) -> float:
        w = np.array([p for _, _, p in self.entries], dtype=np.float64)
        n = np.array([n for _, n, _ in self.entries], dtype=np.float64)
        return float(n @ (w / w.sum()))

    def to_dict(self) -> dict:
        return {
            "m_group": self.m_group,
            "n_target": self.n_target,
            "entries": [{"id": u, "n": n, "params": p} for u, n, p in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NMPlan":
        return cls(
            d["m_group"],
            d["n_target"],
            [(e["id"], e["n"], e["params"]) for e in d["entries"]],
        )


@dataclass
class RankPlan:
    r_target: float
    lam: float
    entries: list[tuple[str, int, int]]  # (layer, keep_rank, d_min)

    def to_dict(self) -> dict:
        return {
            "r_target": self.r_target,
            "lambda": self.lam,
            "entries": [{"id": u, "rank": r, "d_min": d} for u, r, d in self.entries],
        }


@dataclass
class BitPlan:
    menu: list[int]
    b_avg: float
    selector: str
    entries: list[tuple[str, int, int]]  # (unit, bits, params)

    def weighted_mean_bits(self) -> float:
        w = np.array([p for _, _, p in self.entries], dtype=np.float64)
        b = np.array([b for _, b, _ in self.entries], dtype=np.float64)
        return float(b @ (w / w.sum()))

    def to_dict(self) -> dict:
        return {
            "menu": self.menu,
            "b_avg": self.b_avg,
            "selector": self.selector,
            "entries": [{"id": u, "bits": b, "params": p} for u, b, p in self.entries],
        }


def band_allocate(d, weights, target, lam, max_iter: int = 100) -> np.ndarray:
    """Values in [target - lam, target + lam] anti-aligned with d, whose
    parameter-weighted mean equals target (to float precision)."""
    d = np.asarray(d, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    lo, hi = target - lam, target + lam

    spread = d.max() - d.min()
    if lam == 0.0 or spread == 0.0:
        return np.full(d.shape, target)

    t = (d - d.min()) / spread
    vals = target + lam - 2.0 * lam * t
    vals = vals + (target - float(w @ vals))

    for _ in range(max_iter):
        clipped = np.clip(vals, lo, hi)
        resid = target - float(w @ clipped)
        if abs(resid) < 1e-15:
            return clipped
        free = (clipped < hi - 1e-15) if resid > 0 else (clipped > lo + 1e-15)
        if not free.any():
            return clipped
        vals = clipped.copy()
        vals[free] += resid / float(w[free].sum())
    return np.clip(vals, lo, hi)


def _er_densities(shapes: list[tuple[int, int]], weights: np.ndarray, s: float) -> np.ndarray:
    """Erdos-Renyi densities proportional to (C_in + C_out) / (C_in * C_out),
    scaled so the parameter-weighted sparsity is s, capped at density 1."""
    e = np.array([(ci + co) / (ci * co) for co, ci in shapes], dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    target_density = 1.0 - s

    capped = np.zeros(len(e), dtype=bool)
    for _ in range(len(e) + 1):
        denom = float((w[~capped] * e[~capped]).sum())
        if denom == 0.0:
            break
        c = (target_density - float(w[capped].sum())) / denom
        newly = (~capped) & (c * e >= 1.0)
        if not newly.any():
            break
        capped |= newly
    dens = np.minimum(c * e, 1.0)
    dens[capped] = 1.0
    if (dens < 0).any():
        raise ValueError("ER scaling produced negative density; target sparsity too low")
    return dens


def allocate_sparsity(
    profile: OutlierProfile,
    scheme: str,
    s: float,
    lam: float,
    layer_shapes: dict[str, tuple[int, int]] | None = None,
) -> SparsityPlan:
    """Per-unit sparsity targets under the requested scheme.

    `layer_shapes` maps layer names to (C_out, C_in) and is required for the
    ER family; with block-level units each block's ER density is the
    parameter-weighted mean of its member layers' densities.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not 0.0 < s < 1.0:
        raise ValueError("target sparsity must lie in (0, 1)")
    if scheme in ("owl", "owl_inverse") and not 0.0 <= lam < min(s, 1.0 - s):
        raise ValueError(f"lambda {lam} incompatible with band around s={s}")
    if not profile.units:
        raise ValueError("empty profile")

    units = [u.unit for u in profile.units]
    params = profile.param_counts()
    d = profile.d_values()

    if scheme == "uniform":
        vals = np.full(len(units), s)
    elif scheme == "owl":
        vals = band_allocate(d, params, s, lam)
    elif scheme == "owl_inverse":
        vals = band_allocate(1.0 - d, params, s, lam)
    else:
        if layer_shapes is None:
            raise ValueError("ER schemes require layer_shapes")
        per_layer_names = sorted(layer_shapes)
        shapes = [layer_shapes[n] for n in per_layer_names]
        lw = np.array([co * ci for co, ci in shapes], dtype=np.float64)
        dens_layers = _er_densities(shapes, lw, s)
        # Pool member-layer densities onto each profile unit.
        dens = np.zeros(len(units))
        for k, unit in enumerate(units):
            member = [
                i
                for i, n in enumerate(per_layer_names)
                if n == unit or n.startswith(unit + ".")
            ]
            if not member:
                raise ValueError(f"no layer shapes for unit {unit!r}")
            wm = lw[member]
            dens[k] = float((dens_layers[member] * wm).sum() / wm.sum())
        if scheme == "er_plus" and dens[-1] < 1.0:
            kept = dens * params
            delta = params[-1] - kept[-1]
            rest = float(kept[:-1].sum())
            if rest < delta:
                raise ValueError("ER-plus cannot keep the last unit dense at this sparsity")
            kept[:-1] *= (rest - delta) / rest
            kept[-1] = params[-1]
            dens = kept / params
        vals = 1.0 - dens

    entries = [
        PlanEntry(u, float(v), int(p)) for u, v, p in zip(units, vals, params)
    ]
    return SparsityPlan(scheme, s, lam, entries)


def allocate_nm(profile: OutlierProfile, m_group: int, n_avg: float) -> NMPlan:
    """Mixed N:M plan: higher outlier ratio earns a larger N, budget matching
    a uniform n_avg within one group slot."""
    if not 0 < n_avg <= m_group:
        raise ValueError(f"n_avg {n_avg} out of range (0, {m_group}]")
    params = profile.param_counts()
    d = profile.d_values()
    base = int(np.floor(n_avg))
    n = np.full(len(d), base, dtype=np.int64)

    budget = float((params * (n_avg - base)).sum()) / m_group
    order = np.lexsort((np.arange(len(d)), -d))  # descending d, earlier unit first
    progress = True
    while progress and budget > 0:
        progress = False
        for i in order:
            cost = params[i] / m_group
            if n[i] < m_group and cost <= budget + 1e-9:
                n[i] += 1
                budget -= cost
                progress = True

    # Largest-remainder touch-up: a single overshooting bump may land closer
    # to the budget than stopping short (dominant-unit profiles).
    total_slots = params.sum() / m_group

    def gap():
        return abs(float(n @ params) / m_group - (n_avg * total_slots))

    improved = True
    while improved:
        improved = False
        best_i, best_gap = -1, gap()
        for i in order:
            if n[i] >= m_group:
                continue
            n[i] += 1
            if gap() < best_gap - 1e-12:
                best_gap, best_i = gap(), i
            n[i] -= 1
        if best_i >= 0:
            n[best_i] += 1
            improved = True

    entries = [
        (u.unit, int(ni), int(p)) for u, ni, p in zip(profile.units, n, params)
    ]
    return NMPlan(m_group, n_avg, entries)


def allocate_ranks(
    profile: OutlierProfile,
    r_target: float,
    lam: float,
    layer_shapes: dict[str, tuple[int, int]],
) -> RankPlan:
    """Per-layer kept ranks from band-mapped reduction ratios (higher outlier
    ratio, smaller reduction)."""
    if not 0.0 < r_target < 1.0:
        raise ValueError("rank-reduction target must lie in (0, 1)")
    if not 0.0 <= lam < min(r_target, 1.0 - r_target):
        raise ValueError(f"lambda {lam} incompatible with band around {r_target}")
    reductions = band_allocate(profile.d_values(), profile.param_counts(), r_target, lam)

    entries = []
    unit_reduction = dict(zip((u.unit for u in profile.units), reductions))
    for name in sorted(layer_shapes):
        owner = next(
            (u for u in unit_reduction if name == u or name.startswith(u + ".")), None
        )
        if owner is None:
            raise ValueError(f"layer {name!r} not covered by profile")
        co, ci = layer_shapes[name]
        d_min = min(co, ci)
        r = int(np.floor((1.0 - unit_reduction[owner]) * d_min + 0.5))
        entries.append((name, max(1, min(r, d_min)), d_min))
    return RankPlan(r_target, lam, entries)


def allocate_bits(
    profile: OutlierProfile,
    menu,
    b_avg: float,
    selector: str = "owl",
    rng=None,
    l1_norms: dict[str, float] | None = None,
) -> BitPlan:
    """Tiered bit assignment: rank units by the selector, give high bits to the
    top ranks, low to the rest, split chosen to land nearest the budget."""
    menu = sorted(set(int(b) for b in menu))
    if not menu:
        raise ValueError("empty bit menu")
    if not menu[0] <= b_avg <= menu[-1]:
        raise ValueError(f"budget {b_avg} unreachable with menu {menu}")
    if selector not in ("owl", "l1_norm", "random"):
        raise ValueError(f"unknown selector {selector!r}")

    n_units = len(profile.units)
    params = profile.param_counts()
    if selector == "owl":
        key = -profile.d_values()
    elif selector == "l1_norm":
        if l1_norms is None:
            raise ValueError("selector 'l1_norm' requires l1_norms")
        key = -np.array([l1_norms[u.unit] for u in profile.units])
    else:
        if rng is None:
            raise ValueError("selector 'random' requires an rng")
        key = rng.permutation(n_units).astype(np.float64)
    order = np.lexsort((np.arange(n_units), key))  # rank 0 = most important

    tiers = menu[::-1]  # descending bits
    total = params.sum()

    def avg_for(counts):
        acc = 0.0
        start = 0
        for bits, cnt in zip(tiers, counts):
            acc += bits * params[order[start : start + cnt]].sum()
            start += cnt
        return acc / total

    best = None
    for counts in _compositions(n_units, len(tiers)):
        gap = abs(avg_for(counts) - b_avg)
        bits_by_rank = tuple(
            b for b, cnt in zip(tiers, counts) for _ in range(cnt)
        )
        cand = (gap, tuple(-b for b in bits_by_rank), counts)
        if best is None or cand < best:
            best = cand
    counts = best[2]

    bits = np.empty(n_units, dtype=np.int64)
    start = 0
    for b, cnt in zip(tiers, counts):
        bits[order[start : start + cnt]] = b
        start += cnt
    entries = [
        (u.unit, int(b), int(p)) for u, b, p in zip(profile.units, bits, params)
    ]
    return BitPlan(menu, b_avg, selector, entries)


def _compositions(n: int, k: int):
    """All k-tuples of non-negative ints summing to n (tier sizes by rank)."""
    if k == 1:
        yield (n,)
        return
    for head in range(n + 1):
        for rest in _compositions(n - head, k - 1):
            yield (head,) + rest


def write_plan_json(plan, path) -> None:
    with open(path, "w") as f:
        json.dump(plan.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")


def read_sparsity_plan(path) -> SparsityPlan:
    with open(path) as f:
        return SparsityPlan.from_dict(json.load(f))


def read_nm_plan(path) -> NMPlan:
    with open(path) as f:
        return NMPlan.from_dict(json.load(f))
