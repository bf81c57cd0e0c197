"""Figure rendering for the report paths (PNG files next to the CSV output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def _unit_labels(units):
    # "blocks.3" -> "3", full layer names keep their tail
    return [u.split(".", 1)[1] if u.startswith("blocks.") else u for u in units]


def profile_figure(profile, path, plan=None):
    """Outlier-ratio bars per unit, optionally overlaid with planned sparsity."""
    units = [u.unit for u in profile.units]
    d = [u.d for u in profile.units]
    fig, ax = plt.subplots(figsize=(max(6, 0.3 * len(units)), 3.2))
    ax.bar(range(len(units)), d, color="#86b3d1", label=f"outlier ratio (M={profile.m:g})")
    ax.set_xticks(range(len(units)))
    ax.set_xticklabels(_unit_labels(units), rotation=90, fontsize=6)
    ax.set_ylabel("outlier ratio")
    ax.set_xlabel("unit")
    if plan is not None:
        ax2 = ax.twinx()
        ax2.plot(
            range(len(plan.entries)),
            [e.s for e in plan.entries],
            color="#c44e52",
            marker="o",
            markersize=3,
            label="planned sparsity",
        )
        ax2.set_ylabel("sparsity")
        ax2.legend(loc="upper right", fontsize=7)
    ax.legend(loc="upper left", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def report_figure(report, path):
    """Per-unit realized sparsity bars with before/after outlier ratios."""
    units = sorted(report.per_unit_sparsity, key=lambda u: (len(u), u))
    fig, ax = plt.subplots(figsize=(max(6, 0.3 * len(units)), 3.2))
    ax.bar(
        range(len(units)),
        [report.per_unit_sparsity[u] for u in units],
        color="#86b3d1",
        label="realized sparsity",
    )
    ax.set_xticks(range(len(units)))
    ax.set_xticklabels(_unit_labels(units), rotation=90, fontsize=6)
    ax.set_ylabel("sparsity")
    if report.lod_before and report.lod_after:
        ax2 = ax.twinx()
        for key, style, color in (
            ("lod_before", "-", "#55a868"),
            ("lod_after", "--", "#c44e52"),
        ):
            per_unit = getattr(report, key)["per_unit"]
            ax2.plot(
                range(len(units)),
                [per_unit.get(u, 0.0) for u in units],
                style,
                color=color,
                label=key,
                linewidth=1,
            )
        ax2.set_ylabel("outlier ratio")
        ax2.legend(fontsize=7)
    ax.legend(loc="upper left", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def compare_figure(compare: dict, path):
    """Perplexity vs sparsity, one curve per allocation scheme (log scale)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = compare["sparsities"]
    for scheme in compare["schemes"]:
        ys = [compare["perplexity"][scheme][f"{s:g}"] for s in xs]
        ax.plot(xs, ys, marker="o", markersize=3, label=scheme)
    ax.set_yscale("log")
    ax.set_xlabel("target sparsity")
    ax.set_ylabel("perplexity")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sweep_figure(sweep: dict, path):
    """Perplexity per (lambda, M) grid point."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    by_m: dict[float, list] = {}
    for row in sweep["table"]:
        by_m.setdefault(row["m"], []).append((row["lambda"], row["perplexity"]))
    for m, pts in sorted(by_m.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", markersize=3, label=f"M={m:g}")
    ax.set_yscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("perplexity")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
