import numpy as np
import pytest

from owlkit.model import (
    Checkpoint,
    CheckpointFormatError,
    ModelConfig,
    block_of,
    forward_logits,
    load_checkpoint,
    prunable_layer_names,
    random_checkpoint,
    rmsnorm,
    save_checkpoint,
)
from owlkit.numkernel import seeded_rng

from reference_forward import reference_logits


@pytest.fixture
def tiny_config():
    return ModelConfig(d_model=32, n_layers=2, n_heads=4, d_ff=48, vocab_size=40)


@pytest.fixture
def tiny_ckpt(tiny_config):
    return random_checkpoint(tiny_config, seeded_rng(0))


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(d_model=30, n_layers=1, n_heads=4, d_ff=16, vocab_size=8)

    def test_counts(self):
        with pytest.raises(ValueError, match=">= 1"):
            ModelConfig(d_model=8, n_layers=0, n_heads=2, d_ff=16, vocab_size=8)

    def test_roundtrip_dict(self, tiny_config):
        assert ModelConfig.from_dict(tiny_config.to_dict()) == tiny_config


class TestContainer:
    def test_save_load_roundtrip(self, tiny_ckpt, tmp_path):
        path = tmp_path / "m.owlc"
        save_checkpoint(tiny_ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.config == tiny_ckpt.config
        assert set(loaded.tensors) == set(tiny_ckpt.tensors)
        for name, t in tiny_ckpt.tensors.items():
            assert np.array_equal(loaded.tensors[name], t)

    def test_deterministic_bytes(self, tiny_ckpt, tmp_path):
        p1, p2 = tmp_path / "a.owlc", tmp_path / "b.owlc"
        save_checkpoint(tiny_ckpt, p1)
        save_checkpoint(tiny_ckpt, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_payload_alignment(self, tiny_ckpt, tmp_path):
        import json
        import struct

        path = tmp_path / "m.owlc"
        save_checkpoint(tiny_ckpt, path)
        raw = path.read_bytes()
        (hlen,) = struct.unpack_from("<Q", raw, 8)
        assert (16 + hlen) % 64 == 0
        header = json.loads(raw[16 : 16 + hlen].decode())
        for meta in header["tensors"].values():
            assert meta["offset"] % 64 == 0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.owlc"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload(self, tiny_ckpt, tmp_path):
        path = tmp_path / "m.owlc"
        save_checkpoint(tiny_ckpt, path)
        raw = path.read_bytes()
        (tmp_path / "t.owlc").write_bytes(raw[: len(raw) - 8])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            load_checkpoint(tmp_path / "t.owlc")

    def test_rejects_nan_tensor(self, tiny_ckpt, tmp_path):
        tiny_ckpt.tensors["embed"][0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            save_checkpoint(tiny_ckpt, tmp_path / "m.owlc")

    def test_missing_tensor(self, tiny_ckpt):
        del tiny_ckpt.tensors["blocks.1.mlp.up_proj"]
        with pytest.raises(ValueError, match="missing tensor"):
            tiny_ckpt.validate()

    def test_wrong_shape(self, tiny_ckpt):
        tiny_ckpt.tensors["blocks.0.attn.q_proj"] = np.zeros((4, 4), dtype=np.float32)
        with pytest.raises(ValueError, match="shape"):
            tiny_ckpt.validate()


class TestForward:
    def test_zero_network_uniform_logits(self, tiny_config):
        ckpt = random_checkpoint(tiny_config, seeded_rng(1))
        for name in list(ckpt.tensors):
            if not name.endswith("norm") and name != "embed":
                ckpt.tensors[name] = np.zeros_like(ckpt.tensors[name])
        logits = forward_logits(ckpt, [1, 2, 3])
        assert np.array_equal(logits, np.zeros((3, tiny_config.vocab_size), dtype=np.float32))

    def test_causality(self, tiny_ckpt):
        rng = seeded_rng(2)
        tokens = rng.integers(0, tiny_ckpt.config.vocab_size, 8)
        base = forward_logits(ckpt=tiny_ckpt, tokens=tokens)
        for t in (3, 6):
            perturbed = tokens.copy()
            perturbed[t] = (perturbed[t] + 1) % tiny_ckpt.config.vocab_size
            out = forward_logits(tiny_ckpt, perturbed)
            assert np.array_equal(out[:t], base[:t])
            assert not np.array_equal(out[t:], base[t:])

    def test_deterministic(self, tiny_ckpt):
        tokens = [5, 1, 9, 0]
        a = forward_logits(tiny_ckpt, tokens)
        b = forward_logits(tiny_ckpt, tokens)
        assert np.array_equal(a, b)

    def test_token_out_of_range(self, tiny_ckpt):
        with pytest.raises(ValueError, match="out of range"):
            forward_logits(tiny_ckpt, [0, tiny_ckpt.config.vocab_size])

    def test_matches_reference_implementation(self, tiny_ckpt):
        rng = seeded_rng(3)
        tokens = rng.integers(0, tiny_ckpt.config.vocab_size, 6)
        got = forward_logits(tiny_ckpt, tokens)
        want = reference_logits(tiny_ckpt.config, tiny_ckpt.tensors, tokens)
        np.testing.assert_allclose(got, want, atol=1e-4, rtol=1e-4)

    def test_tied_embeddings(self):
        cfg = ModelConfig(
            d_model=16, n_layers=1, n_heads=2, d_ff=24, vocab_size=20, tied_embeddings=True
        )
        ckpt = random_checkpoint(cfg, seeded_rng(4))
        assert "lm_head" not in ckpt.tensors
        got = forward_logits(ckpt, [3, 7])
        want = reference_logits(cfg, ckpt.tensors, [3, 7])
        np.testing.assert_allclose(got, want, atol=1e-4, rtol=1e-4)

    def test_capture_hook_sees_all_prunable_layers(self, tiny_ckpt):
        seen = {}
        forward_logits(tiny_ckpt, [1, 2, 3, 4], capture=lambda n, x: seen.setdefault(n, x.shape))
        assert set(seen) == set(prunable_layer_names(tiny_ckpt.config))
        assert seen["blocks.0.mlp.down_proj"] == (4, tiny_ckpt.config.d_ff)
        assert seen["blocks.1.attn.q_proj"] == (4, tiny_ckpt.config.d_model)


def test_rmsnorm_unit_rms():
    rng = seeded_rng(5)
    x = (rng.standard_normal((6, 32)) * 10).astype(np.float32)
    out = rmsnorm(x, np.ones((1, 32), dtype=np.float32), 1e-5)
    rms = np.sqrt(np.mean(out.astype(np.float64) ** 2, axis=-1))
    np.testing.assert_allclose(rms, 1.0, atol=1e-3)


def test_block_of():
    assert block_of("blocks.3.attn.q_proj") == "blocks.3"
    with pytest.raises(ValueError):
        block_of("embed")
