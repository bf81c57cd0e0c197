import numpy as np
import pytest

from owlkit.calib import TokenCorpus, save_tokens
from owlkit.model import ModelConfig, random_checkpoint, save_checkpoint
from owlkit.numkernel import seeded_rng


def build_desk_model(n_layers=2, d_model=32, d_ff=48, vocab=64, seed=100):
    """Random model with planted heavy-tailed columns so LOD is non-constant."""
    cfg = ModelConfig(d_model=d_model, n_layers=n_layers, n_heads=4, d_ff=d_ff, vocab_size=vocab)
    ckpt = random_checkpoint(cfg, seeded_rng(seed))
    rng = seeded_rng(seed + 1)
    for i in range(n_layers):
        name = f"blocks.{i}.attn.q_proj"
        w = ckpt.tensors[name]
        cols = rng.choice(w.shape[1], size=1 + 2 * i, replace=False)
        w[:, cols] *= 25.0
    return ckpt


@pytest.fixture(scope="session")
def desk_files(tmp_path_factory):
    """Checkpoint + calibration/eval token files shared by pipeline tests."""
    root = tmp_path_factory.mktemp("desk")
    ckpt = build_desk_model()
    model_path = root / "model.owlc"
    save_checkpoint(ckpt, model_path)

    rng = seeded_rng(200)
    corpus = TokenCorpus(64, rng.integers(0, 64, 4000).astype(np.uint32))
    calib_path = root / "calib.owlt"
    save_tokens(corpus, calib_path)

    eval_corpus = TokenCorpus(64, rng.integers(0, 64, 600).astype(np.uint32))
    eval_path = root / "eval.owlt"
    save_tokens(eval_corpus, eval_path)
    return {
        "model": str(model_path),
        "calib": str(calib_path),
        "eval": str(eval_path),
        "ckpt": ckpt,
    }
