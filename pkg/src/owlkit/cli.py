"""owlkit command line: analyze, plan, prune, compress, eval, compare, sweep.

Exit codes: 0 success, 2 configuration error, 3 stage failure. Heavy imports
happen inside main() so --threads can pin BLAS thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _set_threads(argv) -> None:
    if "--threads" in argv:
        idx = argv.index("--threads")
        if idx + 1 < len(argv):
            n = argv[idx + 1]
            for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ.setdefault(var, n)


def _dashed(value: str | None) -> str | None:
    return value.replace("-", "_") if value else value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="owlkit", description=__doc__)
    parser.add_argument("--config", help="JSON file with RunConfig fields; flags override")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, tokens_required=True):
        p.add_argument("--model", help="OWLC checkpoint path")
        p.add_argument("--calib-tokens", help="OWLT calibration token file")
        p.add_argument("--eval-tokens", help="OWLT evaluation token file")
        p.add_argument("--nsamples", type=int, default=None, help="calibration sequences")
        p.add_argument("--seqlen", type=int, default=None, help="calibration sequence length")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--m-outlier", type=float, default=None)
        p.add_argument("--granularity", choices=["layer", "block"], default=None)
        p.add_argument("--figures", action="store_true", default=None)
        # also accepted after the subcommand; SUPPRESS keeps the global value
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("analyze", help="emit the outlier profile (JSON + CSV + figure)")
    add_common(p)

    p = sub.add_parser("plan", help="emit an allocation plan from a profile")
    add_common(p)
    p.add_argument("--profile", help="profile JSON from 'analyze' (default: compute)")
    p.add_argument("--scheme", choices=["owl", "owl-inverse", "uniform", "er", "er-plus"], default=None)
    p.add_argument("--sparsity", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--nm", default=None, help="N:M plan instead of unstructured, e.g. 2:8")

    p = sub.add_parser("prune", help="full pipeline: calibrate, plan, mask, apply, eval")
    add_common(p)
    p.add_argument("--metric", choices=["wanda", "magnitude"], default=None)
    p.add_argument("--scheme", choices=["owl", "owl-inverse", "uniform", "er", "er-plus", "global"], default=None)
    p.add_argument("--grouping", choices=["per-output", "per-layer", "per-block", "global"], default=None)
    p.add_argument("--sparsity", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--nm", default=None, help="N:M mode, e.g. 2:8")
    p.add_argument("--plan", help="pre-computed plan JSON (skips allocation)")

    p = sub.add_parser("compress", help="SVD or quantization compression")
    add_common(p)
    p.add_argument("--mode", choices=["svd", "quant"], required=True)
    p.add_argument("--rank-reduction", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--bits-menu", default=None, help="comma list, e.g. 2,3,4")
    p.add_argument("--bits-avg", type=float, default=None)
    p.add_argument("--selector", choices=["owl", "l1", "random"], default="owl")

    p = sub.add_parser("eval", help="perplexity + sparsity accounting of a checkpoint")
    add_common(p)
    p.add_argument("--plan", help="plan JSON to report deviations against")
    p.add_argument("--spmv", action="store_true", help="include the CSR matvec benchmark")

    p = sub.add_parser("compare", help="scheme x sparsity perplexity table")
    add_common(p)
    p.add_argument("--metric", choices=["wanda", "magnitude"], default=None)
    p.add_argument("--grouping", choices=["per-output", "per-layer", "per-block", "global"], default=None)
    p.add_argument("--schemes", default="global,uniform,er,er-plus,owl-inverse,owl")
    p.add_argument("--sparsities", default=None, help="comma list, e.g. 0.5,0.6,0.7")
    p.add_argument("--sparsity", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)

    p = sub.add_parser("sweep", help="grid over (lambda, M) minimizing perplexity")
    add_common(p)
    p.add_argument("--metric", choices=["wanda", "magnitude"], default=None)
    p.add_argument("--grouping", choices=["per-output", "per-layer", "per-block", "global"], default=None)
    p.add_argument("--scheme", choices=["owl", "owl-inverse", "uniform", "er", "er-plus"], default=None)
    p.add_argument("--sparsity", type=float, default=None)
    p.add_argument("--lambda-grid", default="0.02,0.05,0.08,0.1,0.2")
    p.add_argument("--m-grid", default="3,5,7,10")
    return parser


def _build_config(args) -> "pipeline.RunConfig":
    from . import pipeline

    base = {}
    if args.config:
        with open(args.config) as f:
            base = json.load(f)
    overrides = {
        "model": args.model,
        "calib_tokens": getattr(args, "calib_tokens", None),
        "eval_tokens": getattr(args, "eval_tokens", None),
        "scheme": _dashed(getattr(args, "scheme", None)),
        "metric": getattr(args, "metric", None),
        "grouping": _dashed(getattr(args, "grouping", None)),
        "granularity": getattr(args, "granularity", None),
        "sparsity": getattr(args, "sparsity", None),
        "lam": getattr(args, "lam", None),
        "m_outlier": getattr(args, "m_outlier", None),
        "n_seq": getattr(args, "nsamples", None),
        "seq_len": getattr(args, "seqlen", None),
        "nm": getattr(args, "nm", None),
        "seed": args.seed,
        "out_dir": getattr(args, "out", None),
        "figures": getattr(args, "figures", None),
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if "model" not in base or "calib_tokens" not in base:
        raise ValueError("--model and --calib-tokens are required (flag or config file)")
    return pipeline.RunConfig.from_dict(base).validate()


def _profile_for(args, config):
    from . import calib, outlier, pipeline
    from .model import load_checkpoint

    if getattr(args, "profile", None):
        return outlier.read_profile_json(args.profile), load_checkpoint(config.model)
    ckpt = load_checkpoint(config.model)
    corpus = calib.load_tokens(config.calib_tokens)
    stats = pipeline.calibration_stats(ckpt, config, corpus)
    return outlier.build_profile(ckpt, stats, config.m_outlier, config.granularity), ckpt


def _cmd_analyze(args) -> int:
    from . import outlier, plots

    config = _build_config(args)
    profile, _ = _profile_for(args, config)
    os.makedirs(config.out_dir, exist_ok=True)
    outlier.write_profile_json(profile, os.path.join(config.out_dir, "profile.json"))
    outlier.write_profile_csv(profile, os.path.join(config.out_dir, "profile.csv"))
    plots.profile_figure(profile, os.path.join(config.out_dir, "profile.png"))
    print(f"profile: {len(profile.units)} units, LOD sum {profile.lod_sum():.6f}")
    print(f"wrote {config.out_dir}/profile.json, profile.csv, profile.png")
    return 0


def _cmd_plan(args) -> int:
    from . import alloc
    from .model import layer_shape

    config = _build_config(args)
    profile, ckpt = _profile_for(args, config)
    if config.nm is not None:
        n, m = config.parse_nm()
        plan = alloc.allocate_nm(profile, m, n)
    else:
        shapes = {n: layer_shape(ckpt.config, n) for n in ckpt.prunable_layers()}
        plan = alloc.allocate_sparsity(
            profile, config.scheme, config.sparsity, config.lam, layer_shapes=shapes
        )
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "plan.json")
    alloc.write_plan_json(plan, path)
    print(f"wrote {path}")
    return 0


def _cmd_prune(args) -> int:
    from . import pipeline

    config = _build_config(args)
    if getattr(args, "plan", None):
        result = _prune_with_plan(args.plan, config)
    else:
        result = pipeline.run_pipeline(config)
    report = result.report
    print(
        f"pruned: overall sparsity {report.overall_sparsity:.4f}, "
        f"perplexity {report.perplexity:.4f}"
    )
    for name, path in sorted(result.artifacts.items()):
        print(f"  {name}: {path}")
    return 0


def _prune_with_plan(plan_path, config):
    import numpy as np

    from . import alloc, calib, evaluate, outlier, pipeline, prune
    from .model import load_checkpoint, save_checkpoint, write_container

    with open(plan_path) as f:
        raw = json.load(f)
    plan = (
        alloc.NMPlan.from_dict(raw) if "m_group" in raw else alloc.SparsityPlan.from_dict(raw)
    )
    ckpt = load_checkpoint(config.model)
    corpus = calib.load_tokens(config.calib_tokens)
    stats = pipeline.calibration_stats(ckpt, config, corpus)
    norms = stats.norms if config.metric == "wanda" else {}
    scores = {
        n: prune.prune_scores(ckpt.tensors[n], norms.get(n), config.metric)
        for n in ckpt.prunable_layers()
    }
    if isinstance(plan, alloc.NMPlan):
        masks = prune.build_nm_mask(scores, plan)
    else:
        masks = prune.build_mask(scores, plan, config.grouping)
    pruned = prune.apply_masks(ckpt, masks)

    eval_corpus = calib.load_tokens(config.eval_tokens) if config.eval_tokens else corpus
    ppl = evaluate.perplexity(pruned, eval_corpus.tokens, config.eval_seq_len or config.seq_len)
    sp = evaluate.sparsity_report(masks, plan if isinstance(plan, alloc.SparsityPlan) else None)
    profile = outlier.build_profile(ckpt, stats, config.m_outlier, config.granularity)
    report = evaluate.EvalReport(ppl, sp.overall, sp.per_unit, evaluate.lod_summary(profile)).validate()

    os.makedirs(config.out_dir, exist_ok=True)
    paths = {
        "masks": os.path.join(config.out_dir, "masks.owlc"),
        "checkpoint": os.path.join(config.out_dir, "pruned.owlc"),
        "report": os.path.join(config.out_dir, "report.json"),
    }
    write_container(paths["masks"], ckpt.config.to_dict(), {n: m.astype(np.float32) for n, m in masks.items()})
    save_checkpoint(pruned, paths["checkpoint"])
    with open(paths["report"], "w") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    return pipeline.PipelineResult(profile, plan, masks, pruned, report, paths)


def _cmd_compress(args) -> int:
    from . import alloc, compress
    from .model import layer_shape, load_checkpoint, save_checkpoint
    from .numkernel import derived_rng

    config = _build_config(args)
    profile, ckpt = _profile_for(args, config)
    shapes = {n: layer_shape(ckpt.config, n) for n in ckpt.prunable_layers()}
    os.makedirs(config.out_dir, exist_ok=True)

    if args.mode == "svd":
        if args.rank_reduction is None:
            raise ValueError("--mode svd requires --rank-reduction")
        lam = args.lam if args.lam is not None else 0.0
        plan = alloc.allocate_ranks(profile, args.rank_reduction, lam, shapes)
        out_ckpt = compress.svd_compress(ckpt, plan)
        plan_path = os.path.join(config.out_dir, "rank_plan.json")
    else:
        if args.bits_menu is None or args.bits_avg is None:
            raise ValueError("--mode quant requires --bits-menu and --bits-avg")
        menu = [int(b) for b in args.bits_menu.split(",")]
        selector = {"l1": "l1_norm"}.get(args.selector, args.selector)
        l1 = None
        if selector == "l1_norm":
            import numpy as np

            sums: dict[str, list] = {}
            for n in ckpt.prunable_layers():
                unit = n if profile.granularity == "layer" else n.rsplit(".", 2)[0]
                sums.setdefault(unit, []).append(np.abs(ckpt.tensors[n]))
            l1 = {u: float(np.concatenate([a.ravel() for a in v]).mean()) for u, v in sums.items()}
        plan = alloc.allocate_bits(
            profile, menu, args.bits_avg, selector, rng=derived_rng(config.seed, 1), l1_norms=l1
        )
        out_ckpt, _ = compress.quantize_checkpoint(ckpt, plan)
        plan_path = os.path.join(config.out_dir, "bit_plan.json")

    alloc.write_plan_json(plan, plan_path)
    ckpt_path = os.path.join(config.out_dir, "compressed.owlc")
    save_checkpoint(out_ckpt, ckpt_path)
    print(f"wrote {plan_path}")
    print(f"wrote {ckpt_path}")
    return 0


def _cmd_eval(args) -> int:
    from . import alloc, calib, evaluate, outlier, pipeline, plots
    from .model import load_checkpoint
    from .numkernel import derived_rng

    config = _build_config(args)
    ckpt = load_checkpoint(config.model)
    corpus = calib.load_tokens(config.eval_tokens or config.calib_tokens)
    plan = None
    if getattr(args, "plan", None):
        plan = alloc.read_sparsity_plan(args.plan)
    ppl = evaluate.perplexity(ckpt, corpus.tokens, config.eval_seq_len or config.seq_len)
    sp = evaluate.sparsity_report(ckpt, plan)

    calib_corpus = calib.load_tokens(config.calib_tokens)
    stats = pipeline.calibration_stats(ckpt, config, calib_corpus)
    profile = outlier.build_profile(ckpt, stats, config.m_outlier, config.granularity)
    lod = evaluate.lod_summary(profile)

    report = evaluate.EvalReport(ppl, sp.overall, sp.per_unit, lod_before=lod).validate()
    out = report.to_dict()
    out["per_layer_sparsity"] = sp.per_layer
    if sp.deviations:
        out["plan_deviations"] = sp.deviations
    if args.spmv:
        name = max(ckpt.prunable_layers(), key=lambda n: ckpt.tensors[n].size)
        out["spmv"] = evaluate.spmv_bench(
            ckpt.tensors[name], rng=derived_rng(config.seed, 2)
        )

    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "report.json")
    with open(path, "w") as f:
        json.dump(out, f, sort_keys=True, indent=2)
        f.write("\n")
    with open(os.path.join(config.out_dir, "report.csv"), "w") as f:
        f.write("unit,sparsity,d\n")
        for unit in sorted(sp.per_unit):
            d = lod["per_unit"].get(unit)
            f.write(f"{unit},{sp.per_unit[unit]:.6g},{'' if d is None else f'{d:.6g}'}\n")
    plots.report_figure(report, os.path.join(config.out_dir, "report.png"))
    print(f"perplexity {ppl:.4f}, overall sparsity {sp.overall:.4f}")
    print(f"wrote {path}, report.csv, report.png")
    return 0


def _cmd_compare(args) -> int:
    from . import pipeline

    config = _build_config(args)
    schemes = [_dashed(s.strip()) for s in args.schemes.split(",") if s.strip()]
    sparsities = (
        [float(s) for s in args.sparsities.split(",")] if args.sparsities else None
    )
    out = pipeline.run_compare(config, schemes, sparsities)
    print("scheme x sparsity perplexity:")
    for scheme in out["schemes"]:
        row = "  ".join(f"{out['perplexity'][scheme][f'{s:g}']:>10.4f}" for s in out["sparsities"])
        print(f"  {scheme:>12}: {row}")
    print(f"wrote {config.out_dir}/compare.json, compare.csv")
    return 0


def _cmd_sweep(args) -> int:
    from . import pipeline, plots

    config = _build_config(args)
    lam_grid = [float(v) for v in args.lambda_grid.split(",")]
    m_grid = [float(v) for v in args.m_grid.split(",")]
    out = pipeline.sweep(config, lam_grid, m_grid)
    plots.sweep_figure(out, os.path.join(config.out_dir, "sweep.png"))
    best = out["best"]
    print(
        f"best lambda={best['lambda']:g} M={best['m']:g} "
        f"perplexity={best['perplexity']:.4f}"
    )
    print(f"wrote {config.out_dir}/sweep.json, sweep.csv, sweep.png")
    return 0


COMMANDS = {
    "analyze": _cmd_analyze,
    "plan": _cmd_plan,
    "prune": _cmd_prune,
    "compress": _cmd_compress,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _set_threads(argv)
    args = build_parser().parse_args(argv)
    from .pipeline import StageError

    try:
        return COMMANDS[args.command](args)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
