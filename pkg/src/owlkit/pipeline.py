"""End-to-end orchestration: calibrate, profile, allocate, mask, apply, eval.

Every emitted artifact is plain JSON (sorted keys) or an OWLC container, so a
fixed config and seed reproduce byte-identical outputs. Timing never enters
the report. Calibration stats are cached per (model digest, tokens digest,
n_seq, seq_len, seed) so scheme comparisons share one calibration pass.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import alloc, calib, evaluate, outlier, prune
from .model import Checkpoint, layer_shape, load_checkpoint, write_container
from .numkernel import derived_rng

COMPARE_SCHEMES = ("global", "uniform", "er", "er_plus", "owl_inverse", "owl")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    model: str
    calib_tokens: str
    eval_tokens: str | None = None
    scheme: str = "owl"
    metric: str = "wanda"
    grouping: str = "per_block"
    granularity: str = "block"
    sparsity: float = 0.7
    lam: float = 0.08
    m_outlier: float = 5.0
    n_seq: int = 32
    seq_len: int = 256
    eval_seq_len: int | None = None
    nm: str | None = None  # "N:M" pattern, e.g. "2:8"
    seed: int = 0
    out_dir: str = "owlkit-out"
    figures: bool = False

    def validate(self) -> "RunConfig":
        for path in (self.model, self.calib_tokens, self.eval_tokens):
            if path is not None and not os.path.exists(path):
                raise ValueError(f"path does not exist: {path}")
        if self.scheme not in alloc.SCHEMES and self.scheme != "global":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.metric not in prune.METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.grouping not in prune.GROUPINGS:
            raise ValueError(f"unknown grouping {self.grouping!r}")
        if self.granularity not in outlier.GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        if self.grouping == "per_block" and self.granularity != "block":
            raise ValueError("per_block grouping requires block granularity")
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError("sparsity must lie in [0, 1)")
        if self.m_outlier <= 1.0:
            raise ValueError("m_outlier must be > 1")
        if self.n_seq < 1 or self.seq_len < 2:
            raise ValueError("n_seq must be >= 1 and seq_len >= 2")
        if self.nm is not None:
            self.parse_nm()
        return self

    def parse_nm(self) -> tuple[int, int]:
        try:
            n, m = (int(v) for v in self.nm.split(":"))
        except ValueError as e:
            raise ValueError(f"bad --nm pattern {self.nm!r}, expected N:M") from e
        if not 0 < n <= m:
            raise ValueError(f"bad --nm pattern {self.nm!r}: need 0 < N <= M")
        return n, m

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**known)


_STATS_CACHE: dict[tuple, calib.CalibrationStats] = {}


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def calibration_stats(
    ckpt: Checkpoint, config: RunConfig, corpus: calib.TokenCorpus
) -> calib.CalibrationStats:
    key = (
        _digest(config.model),
        _digest(config.calib_tokens),
        config.n_seq,
        config.seq_len,
        config.seed,
    )
    if key not in _STATS_CACHE:
        rng = derived_rng(config.seed, 0)
        seqs = calib.sample_calibration(corpus, config.n_seq, config.seq_len, rng)
        _STATS_CACHE[key] = calib.collect_feature_norms(ckpt, seqs)
    return _STATS_CACHE[key]


def _shapes_for(ckpt: Checkpoint) -> dict[str, tuple[int, int]]:
    return {n: layer_shape(ckpt.config, n) for n in ckpt.prunable_layers()}


@dataclass
class PipelineResult:
    profile: outlier.OutlierProfile
    plan: alloc.SparsityPlan | alloc.NMPlan
    masks: dict[str, np.ndarray]
    pruned: Checkpoint
    report: evaluate.EvalReport
    artifacts: dict[str, str] = field(default_factory=dict)


def _pipeline_core(
    ckpt: Checkpoint,
    config: RunConfig,
    stats: calib.CalibrationStats,
    eval_corpus: calib.TokenCorpus,
) -> PipelineResult:
    def stage(name, fn):
        try:
            return fn()
        except StageError:
            raise
        except Exception as e:
            raise StageError(name, e) from e

    profile = stage(
        "profile",
        lambda: outlier.build_profile(ckpt, stats, config.m_outlier, config.granularity),
    )

    scheme = "uniform" if config.scheme == "global" else config.scheme
    grouping = "global" if config.scheme == "global" else config.grouping

    def make_plan():
        if config.nm is not None:
            n, m = config.parse_nm()
            return alloc.allocate_nm(profile, m, n)
        if config.sparsity == 0.0:  # no-op run: keep everything
            entries = [alloc.PlanEntry(u.unit, 0.0, u.params) for u in profile.units]
            return alloc.SparsityPlan("uniform", 0.0, 0.0, entries)
        return alloc.allocate_sparsity(
            profile, scheme, config.sparsity, config.lam, layer_shapes=_shapes_for(ckpt)
        )

    plan = stage("allocate", make_plan)

    def make_masks():
        norms = stats.norms if config.metric == "wanda" else {}
        scores = {
            name: prune.prune_scores(ckpt.tensors[name], norms.get(name), config.metric)
            for name in ckpt.prunable_layers()
        }
        if isinstance(plan, alloc.NMPlan):
            return scores, prune.build_nm_mask(scores, plan)
        return scores, prune.build_mask(scores, plan, grouping)

    scores, masks = stage("mask", make_masks)
    pruned = stage("apply", lambda: prune.apply_masks(ckpt, masks))

    def make_report():
        ppl = evaluate.perplexity(
            pruned, eval_corpus.tokens, config.eval_seq_len or config.seq_len
        )
        outlier_score_map = outlier.compute_scores(ckpt, stats)
        means = outlier.frozen_means(outlier_score_map, config.granularity)
        lod_after = evaluate.post_prune_lod_summary(
            outlier_score_map, masks, means, config.m_outlier, config.granularity
        )
        sp = evaluate.sparsity_report(
            masks, plan if isinstance(plan, alloc.SparsityPlan) else None
        )
        return evaluate.EvalReport(
            perplexity=ppl,
            overall_sparsity=sp.overall,
            per_unit_sparsity=sp.per_unit,
            lod_before=evaluate.lod_summary(profile),
            lod_after=lod_after,
        ).validate()

    report = stage("eval", make_report)
    return PipelineResult(profile, plan, masks, pruned, report)


def _write_json(obj: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def run_pipeline(config: RunConfig) -> PipelineResult:
    """Full calibrate->profile->allocate->mask->apply->eval run with artifacts."""
    config.validate()

    def stage(name, fn):
        try:
            return fn()
        except StageError:
            raise
        except Exception as e:
            raise StageError(name, e) from e

    ckpt = stage("load", lambda: load_checkpoint(config.model))
    corpus = stage("load", lambda: calib.load_tokens(config.calib_tokens))
    eval_corpus = stage(
        "load",
        lambda: calib.load_tokens(config.eval_tokens)
        if config.eval_tokens
        else corpus,
    )
    stats = stage("calibrate", lambda: calibration_stats(ckpt, config, corpus))

    result = _pipeline_core(ckpt, config, stats, eval_corpus)

    out = config.out_dir
    os.makedirs(out, exist_ok=True)
    paths = {
        "profile": os.path.join(out, "profile.json"),
        "plan": os.path.join(out, "plan.json"),
        "masks": os.path.join(out, "masks.owlc"),
        "checkpoint": os.path.join(out, "pruned.owlc"),
        "report": os.path.join(out, "report.json"),
    }
    _write_json(result.profile.to_dict(), paths["profile"])
    _write_json(result.plan.to_dict(), paths["plan"])
    write_container(
        paths["masks"],
        ckpt.config.to_dict(),
        {n: m.astype(np.float32) for n, m in result.masks.items()},
    )
    from .model import save_checkpoint

    save_checkpoint(result.pruned, paths["checkpoint"])
    _write_json(result.report.to_dict(), paths["report"])

    if config.figures:
        from . import plots

        paths["figure"] = os.path.join(out, "report.png")
        plots.report_figure(result.report, paths["figure"])

    result.artifacts = paths
    return result


def run_compare(
    config: RunConfig, schemes, sparsities=None
) -> dict:
    """One pipeline per (scheme, sparsity) sharing calibration; ppl table out.

    Scheme "global" means a uniform plan thresholded globally.
    """
    config.validate()
    schemes = list(schemes)
    if not schemes:
        raise ValueError("need at least one scheme")
    sparsities = [config.sparsity] if sparsities is None else list(sparsities)

    ckpt = load_checkpoint(config.model)
    corpus = calib.load_tokens(config.calib_tokens)
    eval_corpus = (
        calib.load_tokens(config.eval_tokens) if config.eval_tokens else corpus
    )
    stats = calibration_stats(ckpt, config, corpus)

    table: dict[str, dict[str, float]] = {}
    plans: dict[str, dict[str, list]] = {}
    for scheme in schemes:
        table[scheme] = {}
        plans[scheme] = {}
        for s in sparsities:
            cfg = replace(config, scheme=scheme, sparsity=float(s))
            result = _pipeline_core(ckpt, cfg, stats, eval_corpus)
            table[scheme][f"{s:g}"] = result.report.perplexity
            if isinstance(result.plan, alloc.SparsityPlan):
                plans[scheme][f"{s:g}"] = [e.s for e in result.plan.entries]

    out = {
        "schemes": schemes,
        "sparsities": [float(s) for s in sparsities],
        "perplexity": table,
        "plans": plans,
        "lod": evaluate.lod_summary(
            outlier.build_profile(ckpt, stats, config.m_outlier, config.granularity)
        ),
    }

    os.makedirs(config.out_dir, exist_ok=True)
    _write_json(out, os.path.join(config.out_dir, "compare.json"))
    csv_path = os.path.join(config.out_dir, "compare.csv")
    with open(csv_path, "w") as f:
        f.write("scheme," + ",".join(f"{s:g}" for s in sparsities) + "\n")
        for scheme in schemes:
            row = ",".join(f"{table[scheme][f'{s:g}']:.6g}" for s in sparsities)
            f.write(f"{scheme},{row}\n")
    if config.figures:
        from . import plots

        plots.compare_figure(out, os.path.join(config.out_dir, "compare.png"))
    return out


def sweep(config: RunConfig, lambda_grid, m_grid) -> dict:
    """Grid of (lambda, M): full prune+perplexity per point, argmin returned."""
    config.validate()
    lambda_grid = list(lambda_grid)
    m_grid = list(m_grid)
    if not lambda_grid or not m_grid:
        raise ValueError("sweep grids must be non-empty")

    ckpt = load_checkpoint(config.model)
    corpus = calib.load_tokens(config.calib_tokens)
    eval_corpus = (
        calib.load_tokens(config.eval_tokens) if config.eval_tokens else corpus
    )
    stats = calibration_stats(ckpt, config, corpus)

    rows = []
    best = None
    for lam in lambda_grid:
        for m in m_grid:
            cfg = replace(config, lam=float(lam), m_outlier=float(m))
            result = _pipeline_core(ckpt, cfg, stats, eval_corpus)
            ppl = result.report.perplexity
            rows.append({"lambda": float(lam), "m": float(m), "perplexity": ppl})
            if best is None or ppl < best["perplexity"]:
                best = rows[-1]

    out = {"best": best, "table": rows, "sparsity": config.sparsity}
    os.makedirs(config.out_dir, exist_ok=True)
    _write_json(out, os.path.join(config.out_dir, "sweep.json"))
    with open(os.path.join(config.out_dir, "sweep.csv"), "w") as f:
        f.write("lambda,m,perplexity\n")
        for r in rows:
            f.write(f"{r['lambda']:g},{r['m']:g},{r['perplexity']:.6g}\n")
    return out
