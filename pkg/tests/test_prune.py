import numpy as np
import pytest

from owlkit.alloc import NMPlan, PlanEntry, SparsityPlan
from owlkit.model import ModelConfig, random_checkpoint
from owlkit.numkernel import seeded_rng
from owlkit.outlier import outlier_scores
from owlkit.prune import (
    apply_masks,
    build_mask,
    build_nm_mask,
    mask_sparsity,
    prune_scores,
    round_half_up,
)


def uniform_plan(names_sizes, s):
    entries = [PlanEntry(n, s, sz) for n, sz in names_sizes]
    return SparsityPlan("uniform", s, 0.0, entries)


class TestPruneScores:
    def test_magnitude_ignores_norms(self):
        w = seeded_rng(0).standard_normal((4, 4)).astype(np.float32)
        assert np.array_equal(
            prune_scores(w, None, "magnitude"), prune_scores(w, np.ones(4), "magnitude")
        )

    def test_wanda_with_unit_norms_equals_magnitude(self):
        w = seeded_rng(1).standard_normal((4, 4)).astype(np.float32)
        assert np.array_equal(
            prune_scores(w, np.ones(4), "wanda"), prune_scores(w, None, "magnitude")
        )

    def test_wanda_equals_outlier_scores(self):
        rng = seeded_rng(2)
        w = rng.standard_normal((8, 8)).astype(np.float32)
        xn = rng.random(8)
        assert np.array_equal(prune_scores(w, xn, "wanda"), outlier_scores(w, xn))

    def test_wanda_requires_norms(self):
        with pytest.raises(ValueError, match="requires"):
            prune_scores(np.ones((2, 2), dtype=np.float32), None, "wanda")


class TestBuildMask:
    def test_per_output_one_zero_per_row(self):
        scores = {"blocks.0.attn.q_proj": np.array([[1, 2], [4, 3]], dtype=np.float32)}
        plan = uniform_plan([("blocks.0.attn.q_proj", 4)], 0.5)
        masks = build_mask(scores, plan, "per_output")
        keep = masks["blocks.0.attn.q_proj"]
        assert (np.count_nonzero(~keep, axis=1) == 1).all()
        assert not keep[0, 0] and not keep[1, 1]

    def test_global_forced_ordering(self):
        scores = {
            "blocks.0.attn.q_proj": np.array([[1, 2]], dtype=np.float32),
            "blocks.1.attn.q_proj": np.array([[3, 4]], dtype=np.float32),
        }
        plan = uniform_plan([(n, 2) for n in scores], 0.5)
        masks = build_mask(scores, plan, "global")
        assert mask_sparsity(masks["blocks.0.attn.q_proj"]) == 1.0
        assert mask_sparsity(masks["blocks.1.attn.q_proj"]) == 0.0

    def test_per_layer_exact_counts(self):
        rng = seeded_rng(3)
        for s in (0.3, 0.5, 0.7):
            scores = {"blocks.0.attn.q_proj": rng.random((16, 16)).astype(np.float32)}
            plan = uniform_plan([("blocks.0.attn.q_proj", 256)], s)
            masks = build_mask(scores, plan, "per_layer")
            dropped = np.count_nonzero(~masks["blocks.0.attn.q_proj"])
            assert dropped == round_half_up(s * 256)

    def test_per_block_pools_and_hits_block_budget(self):
        rng = seeded_rng(4)
        # One projection's scores dominate: its layer is pruned less.
        low = rng.random((8, 8)).astype(np.float32)
        high = (rng.random((8, 8)) + 10).astype(np.float32)
        scores = {
            "blocks.0.attn.q_proj": low,
            "blocks.0.attn.k_proj": high,
        }
        plan = SparsityPlan("owl", 0.5, 0.0, [PlanEntry("blocks.0", 0.5, 128)])
        masks = build_mask(scores, plan, "per_block")
        total_dropped = sum(np.count_nonzero(~m) for m in masks.values())
        assert total_dropped == 64
        # pooled-sort oracle: the 64 lowest pooled scores are exactly the drops
        pooled = np.concatenate([low.ravel(), high.ravel()])
        thresh = np.sort(pooled)[63]
        assert mask_sparsity(masks["blocks.0.attn.q_proj"]) == 1.0
        assert mask_sparsity(masks["blocks.0.attn.k_proj"]) == 0.0
        assert pooled.max() > thresh

    def test_per_block_within_block_variation(self):
        rng = seeded_rng(5)
        scores = {
            "blocks.0.attn.q_proj": (rng.random((8, 8)) * 2).astype(np.float32),
            "blocks.0.attn.k_proj": rng.random((8, 8)).astype(np.float32),
        }
        plan = SparsityPlan("owl", 0.5, 0.0, [PlanEntry("blocks.0", 0.5, 128)])
        masks = build_mask(scores, plan, "per_block")
        s_q = mask_sparsity(masks["blocks.0.attn.q_proj"])
        s_k = mask_sparsity(masks["blocks.0.attn.k_proj"])
        assert s_q != s_k  # realized per-layer sparsities differ inside the block

    def test_ties_prune_lower_index_first(self):
        scores = {"blocks.0.attn.q_proj": np.ones((2, 3), dtype=np.float32)}
        plan = uniform_plan([("blocks.0.attn.q_proj", 6)], 0.5)
        masks = build_mask(scores, plan, "per_layer")
        keep = masks["blocks.0.attn.q_proj"]
        assert not keep[0, 0] and not keep[0, 1] and not keep[0, 2]
        assert keep[1].all()

    def test_monotone_in_s(self):
        rng = seeded_rng(6)
        scores = {"blocks.0.attn.q_proj": rng.random((12, 12)).astype(np.float32)}
        prev = None
        for s in (0.2, 0.4, 0.6, 0.8):
            plan = uniform_plan([("blocks.0.attn.q_proj", 144)], s)
            keep = build_mask(scores, plan, "per_layer")["blocks.0.attn.q_proj"]
            if prev is not None:
                assert not (keep & ~prev).any()  # raising s never un-prunes
            prev = keep

    def test_per_output_equals_per_layer_for_constant_rows(self):
        row = np.arange(16, dtype=np.float32)
        scores = {"blocks.0.attn.q_proj": np.tile(row, (8, 1))}
        plan = uniform_plan([("blocks.0.attn.q_proj", 128)], 0.5)
        per_out = build_mask(scores, plan, "per_output")["blocks.0.attn.q_proj"]
        per_layer = build_mask(scores, plan, "per_layer")["blocks.0.attn.q_proj"]
        assert np.count_nonzero(~per_out) == np.count_nonzero(~per_layer)

    def test_plan_must_cover_layers(self):
        scores = {"blocks.0.attn.q_proj": np.ones((2, 2), dtype=np.float32)}
        plan = uniform_plan([("blocks.1.attn.q_proj", 4)], 0.5)
        with pytest.raises(ValueError, match="does not cover"):
            build_mask(scores, plan, "per_layer")


class TestNmMask:
    def test_forced_group(self):
        scores = {"blocks.0.attn.q_proj": np.array([[5, 1, 2, 9]], dtype=np.float32)}
        plan = NMPlan(4, 2.0, [("blocks.0.attn.q_proj", 2, 4)])
        keep = build_nm_mask(scores, plan)["blocks.0.attn.q_proj"]
        assert keep.tolist() == [[True, False, False, True]]

    def test_n_equals_m_identity(self):
        scores = {"blocks.0.attn.q_proj": seeded_rng(7).random((4, 8)).astype(np.float32)}
        plan = NMPlan(8, 8.0, [("blocks.0.attn.q_proj", 8, 32)])
        keep = build_nm_mask(scores, plan)["blocks.0.attn.q_proj"]
        assert keep.all()

    def test_matches_per_group_sort_oracle(self):
        rng = seeded_rng(8)
        a = rng.random((8, 16)).astype(np.float32)
        scores = {"blocks.0.attn.q_proj": a}
        plan = NMPlan(8, 3.0, [("blocks.0.attn.q_proj", 3, 128)])
        keep = build_nm_mask(scores, plan)["blocks.0.attn.q_proj"]
        for r in range(8):
            for start in (0, 8):
                g = a[r, start : start + 8]
                kept = np.where(keep[r, start : start + 8])[0]
                assert len(kept) == 3
                top3 = set(np.argsort(-g, kind="stable")[:3])
                assert set(kept) == top3

    def test_short_tail_group(self):
        a = seeded_rng(9).random((2, 10)).astype(np.float32)
        scores = {"blocks.0.attn.q_proj": a}
        plan = NMPlan(8, 4.0, [("blocks.0.attn.q_proj", 4, 20)])
        keep = build_nm_mask(scores, plan)["blocks.0.attn.q_proj"]
        assert (np.count_nonzero(keep[:, :8], axis=1) == 4).all()
        # tail of 2 keeps ceil(4 * 2 / 8) = 1
        assert (np.count_nonzero(keep[:, 8:], axis=1) == 1).all()

    def test_block_level_plan_entries(self):
        a = seeded_rng(10).random((2, 8)).astype(np.float32)
        scores = {"blocks.0.attn.q_proj": a}
        plan = NMPlan(8, 2.0, [("blocks.0", 2, 16)])
        keep = build_nm_mask(scores, plan)["blocks.0.attn.q_proj"]
        assert (np.count_nonzero(keep, axis=1) == 2).all()


class TestApplyMasks:
    @pytest.fixture
    def ckpt(self):
        cfg = ModelConfig(d_model=16, n_layers=1, n_heads=2, d_ff=24, vocab_size=32)
        return random_checkpoint(cfg, seeded_rng(11))

    def test_identity_masks_unchanged(self, ckpt):
        masks = {n: np.ones_like(ckpt.tensors[n], dtype=bool) for n in ckpt.prunable_layers()}
        out = apply_masks(ckpt, masks)
        for n in ckpt.tensors:
            assert np.array_equal(out.tensors[n], ckpt.tensors[n])

    def test_all_drop_single_layer(self, ckpt):
        name = "blocks.0.mlp.gate_proj"
        masks = {name: np.zeros_like(ckpt.tensors[name], dtype=bool)}
        out = apply_masks(ckpt, masks)
        assert (out.tensors[name] == 0.0).all()
        for n in ckpt.tensors:
            if n != name:
                assert np.array_equal(out.tensors[n], ckpt.tensors[n])

    def test_recount_matches_mask(self, ckpt):
        rng = seeded_rng(12)
        masks = {
            n: rng.random(ckpt.tensors[n].shape) > 0.7 for n in ckpt.prunable_layers()
        }
        out = apply_masks(ckpt, masks)
        for n, keep in masks.items():
            zeros = np.count_nonzero(out.tensors[n] == 0.0)
            # original random weights are never exactly zero
            assert zeros == np.count_nonzero(~keep)

    def test_shape_mismatch(self, ckpt):
        with pytest.raises(ValueError, match="mask shape"):
            apply_masks(ckpt, {"blocks.0.attn.q_proj": np.ones((2, 2), dtype=bool)})
