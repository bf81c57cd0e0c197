"""Calibration sampling and per-layer input-feature l2-norm accumulation.

Token file layout (little-endian): magic b"OWLT", u32 version (= 1),
u32 vocab_size, u64 token count, then u32 token ids.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .model import Checkpoint, forward_logits, prunable_layer_names

TOKEN_MAGIC = b"OWLT"
TOKEN_VERSION = 1


class TokenFormatError(ValueError):
    """Raised when a token file's bytes do not match the OWLT layout."""


@dataclass
class TokenCorpus:
    vocab_size: int
    tokens: np.ndarray  # uint32

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.uint32)
        if self.tokens.size and int(self.tokens.max()) >= self.vocab_size:
            raise ValueError("token id out of range for vocab_size")

    def __len__(self):
        return self.tokens.size


def save_tokens(corpus: TokenCorpus, path) -> None:
    with open(path, "wb") as f:
        f.write(TOKEN_MAGIC)
        f.write(struct.pack("<I", TOKEN_VERSION))
        f.write(struct.pack("<I", corpus.vocab_size))
        f.write(struct.pack("<Q", corpus.tokens.size))
        f.write(corpus.tokens.astype("<u4").tobytes())


def load_tokens(path) -> TokenCorpus:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 20 or raw[:4] != TOKEN_MAGIC:
        raise TokenFormatError("bad magic: not an OWLT token file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != TOKEN_VERSION:
        raise TokenFormatError(f"unsupported token file version {version}")
    (vocab_size,) = struct.unpack_from("<I", raw, 8)
    (count,) = struct.unpack_from("<Q", raw, 12)
    if len(raw) < 20 + 4 * count:
        raise TokenFormatError("truncated token payload")
    tokens = np.frombuffer(raw, dtype="<u4", count=count, offset=20).copy()
    return TokenCorpus(vocab_size, tokens)


@dataclass
class CalibrationStats:
    """Per-layer l2 norm of every input feature over all calibration tokens."""

    norms: dict[str, np.ndarray] = field(default_factory=dict)  # float64, (C_in,)
    tokens_seen: int = 0

    def validate(self) -> "CalibrationStats":
        for name, v in self.norms.items():
            if v.ndim != 1 or not np.isfinite(v).all() or (v < 0).any():
                raise ValueError(f"invalid norms for layer {name!r}")
        return self


def sample_calibration(corpus: TokenCorpus, n_seq: int, seq_len: int, rng) -> list[np.ndarray]:
    """n_seq contiguous windows of seq_len tokens at rng-chosen starts (may overlap)."""
    if n_seq < 1:
        raise ValueError("n_seq must be >= 1")
    if len(corpus) < seq_len:
        raise ValueError(f"corpus of {len(corpus)} tokens shorter than seq_len {seq_len}")
    max_start = len(corpus) - seq_len
    starts = rng.integers(0, max_start + 1, size=n_seq)
    return [corpus.tokens[s : s + seq_len].astype(np.int64) for s in starts]


def collect_feature_norms(ckpt: Checkpoint, sequences) -> CalibrationStats:
    """Accumulate sqrt(sum_t x_j^2) per input feature of every prunable layer.

    Squared sums stream in float64, so sequence order does not matter beyond
    rounding and memory stays at C_in per layer.
    """
    sumsq: dict[str, np.ndarray] = {}

    def tap(name, x):
        acc = sumsq.get(name)
        sq = (x.astype(np.float64) ** 2).sum(axis=0)
        if acc is None:
            sumsq[name] = sq
        else:
            acc += sq

    total = 0
    for seq in sequences:
        forward_logits(ckpt, seq, capture=tap)
        total += len(seq)

    expected = set(prunable_layer_names(ckpt.config))
    stats = CalibrationStats(
        norms={name: np.sqrt(sumsq[name]) for name in sumsq if name in expected},
        tokens_seen=total,
    )
    return stats.validate()
