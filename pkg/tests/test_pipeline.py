import json

import numpy as np
import pytest

from owlkit.model import load_checkpoint
from owlkit.pipeline import RunConfig, StageError, run_compare, run_pipeline, sweep


def make_config(desk_files, tmp_path, **kw):
    base = dict(
        model=desk_files["model"],
        calib_tokens=desk_files["calib"],
        eval_tokens=desk_files["eval"],
        n_seq=4,
        seq_len=16,
        sparsity=0.6,
        lam=0.08,
        m_outlier=5.0,
        seed=7,
        out_dir=str(tmp_path / "out"),
    )
    base.update(kw)
    return RunConfig(**base).validate()


class TestRunPipeline:
    def test_noop_at_zero_sparsity(self, desk_files, tmp_path):
        config = make_config(desk_files, tmp_path, scheme="uniform", sparsity=0.0)
        result = run_pipeline(config)
        assert result.report.overall_sparsity == 0.0
        original = open(desk_files["model"], "rb").read()
        pruned = open(result.artifacts["checkpoint"], "rb").read()
        assert original == pruned

    def test_deterministic_artifacts(self, desk_files, tmp_path):
        c1 = make_config(desk_files, tmp_path, out_dir=str(tmp_path / "a"))
        c2 = make_config(desk_files, tmp_path, out_dir=str(tmp_path / "b"))
        r1, r2 = run_pipeline(c1), run_pipeline(c2)
        for key in ("profile", "plan", "masks", "checkpoint", "report"):
            b1 = open(r1.artifacts[key], "rb").read()
            b2 = open(r2.artifacts[key], "rb").read()
            assert b1 == b2, f"artifact {key} differs between identical runs"

    def test_owl_plan_non_uniform_when_lod_varies(self, desk_files, tmp_path):
        owl = run_pipeline(make_config(desk_files, tmp_path, scheme="owl"))
        d = owl.profile.d_values()
        assert d.max() > d.min()  # planted outliers force a spread
        svals = [e.s for e in owl.plan.entries]
        assert max(svals) > min(svals)

        uni = run_pipeline(
            make_config(desk_files, tmp_path, scheme="uniform", out_dir=str(tmp_path / "u"))
        )
        assert len(set(e.s for e in uni.plan.entries)) == 1

    def test_artifact_files_exist_and_parse(self, desk_files, tmp_path):
        result = run_pipeline(make_config(desk_files, tmp_path))
        with open(result.artifacts["report"]) as f:
            report = json.load(f)
        assert report["perplexity"] >= 1.0
        assert "lod_before" in report and "lod_after" in report
        masks_ckpt = result.artifacts["masks"]
        from owlkit.model import read_container

        _, tensors = read_container(masks_ckpt)
        assert set(tensors) == set(result.masks)
        for n, t in tensors.items():
            assert np.array_equal(t.astype(bool), result.masks[n])

    def test_realized_sparsity_near_target(self, desk_files, tmp_path):
        result = run_pipeline(make_config(desk_files, tmp_path, scheme="owl"))
        assert result.report.overall_sparsity == pytest.approx(0.6, abs=0.01)

    def test_nm_mode(self, desk_files, tmp_path):
        result = run_pipeline(make_config(desk_files, tmp_path, nm="4:8"))
        assert result.report.overall_sparsity == pytest.approx(0.5, abs=0.05)

    def test_stage_error_on_corrupt_model(self, desk_files, tmp_path):
        bad = tmp_path / "bad.owlc"
        bad.write_bytes(b"OWLC" + b"\x00" * 64)
        config = make_config(desk_files, tmp_path, model=str(bad))
        with pytest.raises(StageError) as err:
            run_pipeline(config)
        assert err.value.stage == "load"

    def test_missing_path_is_config_error(self, desk_files, tmp_path):
        with pytest.raises(ValueError, match="does not exist"):
            make_config(desk_files, tmp_path, model=str(tmp_path / "nope.owlc"))


class TestRunCompare:
    def test_single_scheme_matches_pipeline(self, desk_files, tmp_path):
        config = make_config(desk_files, tmp_path, scheme="uniform")
        table = run_compare(config, ["uniform"])
        single = run_pipeline(
            make_config(desk_files, tmp_path, scheme="uniform", out_dir=str(tmp_path / "s"))
        )
        assert table["perplexity"]["uniform"]["0.6"] == single.report.perplexity

    def test_owl_inverse_is_reflection(self, desk_files, tmp_path):
        config = make_config(desk_files, tmp_path)
        out = run_compare(config, ["owl", "owl_inverse"])
        owl = np.array(out["plans"]["owl"]["0.6"])
        inv = np.array(out["plans"]["owl_inverse"]["0.6"])
        np.testing.assert_allclose(inv, 2 * 0.6 - owl, atol=1e-9)

    def test_multi_sparsity_table_and_csv(self, desk_files, tmp_path):
        config = make_config(desk_files, tmp_path)
        out = run_compare(config, ["uniform", "owl"], sparsities=[0.5, 0.7])
        assert set(out["perplexity"]["owl"]) == {"0.5", "0.7"}
        csv_lines = (tmp_path / "out" / "compare.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "scheme,0.5,0.7"
        assert len(csv_lines) == 3

    def test_global_pseudo_scheme(self, desk_files, tmp_path):
        config = make_config(desk_files, tmp_path)
        out = run_compare(config, ["global", "uniform"], sparsities=[0.5])
        assert out["perplexity"]["global"]["0.5"] >= 1.0


class TestSweep:
    def test_single_point(self, desk_files, tmp_path):
        config = make_config(desk_files, tmp_path)
        out = sweep(config, [0.08], [5])
        assert out["best"]["lambda"] == 0.08 and out["best"]["m"] == 5
        assert len(out["table"]) == 1

    def test_duplicate_points_identical(self, desk_files, tmp_path):
        config = make_config(desk_files, tmp_path)
        out = sweep(config, [0.05, 0.05], [5])
        assert out["table"][0]["perplexity"] == out["table"][1]["perplexity"]

    def test_grid_matches_independent_runs(self, desk_files, tmp_path):
        config = make_config(desk_files, tmp_path)
        out = sweep(config, [0.05, 0.1], [3, 7])
        for row in out["table"]:
            cfg = make_config(
                desk_files,
                tmp_path,
                lam=row["lambda"],
                m_outlier=row["m"],
                out_dir=str(tmp_path / f"pt-{row['lambda']}-{row['m']}"),
            )
            single = run_pipeline(cfg)
            assert single.report.perplexity == row["perplexity"]


def test_config_roundtrip(desk_files, tmp_path):
    config = make_config(desk_files, tmp_path)
    clone = RunConfig.from_dict(config.to_dict())
    assert clone == config
    with pytest.raises(ValueError, match="unknown config keys"):
        RunConfig.from_dict({"model": "x", "calib_tokens": "y", "bogus": 1})
