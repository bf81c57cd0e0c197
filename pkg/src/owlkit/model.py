"""LLaMA-style decoder definition, forward pass, and the OWLC checkpoint container.

Container layout (little-endian throughout):
    bytes 0-3   magic b"OWLC"
    bytes 4-7   u32 version (= 1)
    bytes 8-15  u64 header length
    header      UTF-8 JSON {"config": {...}, "tensors": {name: {"dtype": "f32",
                "shape": [r, c], "offset": u64, "nbytes": u64}}}, space-padded
                so the payload starts 64-byte aligned
    payload     concatenated row-major float32 tensors, each offset (relative
                to payload start) 64-byte aligned
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .numkernel import Matrix, matmul, validate_matrix

MAGIC = b"OWLC"
VERSION = 1
ALIGN = 64

PROJECTIONS = (
    "attn.q_proj",
    "attn.k_proj",
    "attn.v_proj",
    "attn.o_proj",
    "mlp.gate_proj",
    "mlp.up_proj",
    "mlp.down_proj",
)


class CheckpointFormatError(ValueError):
    """Raised when a container's bytes do not match the OWLC layout."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    vocab_size: int
    rope_theta: float = 10000.0
    rms_eps: float = 1e-5
    tied_embeddings: bool = False

    def __post_init__(self):
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "rope_theta": self.rope_theta,
            "rms_eps": self.rms_eps,
            "tied_embeddings": self.tied_embeddings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def block_tensor_names(i: int) -> list[str]:
    return [f"blocks.{i}.{p}" for p in PROJECTIONS] + [
        f"blocks.{i}.attn_norm",
        f"blocks.{i}.mlp_norm",
    ]


def prunable_layer_names(config: ModelConfig) -> list[str]:
    """The 7 projection tensors of every block, in canonical order."""
    return [f"blocks.{i}.{p}" for i in range(config.n_layers) for p in PROJECTIONS]


def block_of(name: str) -> str:
    """Block unit id ("blocks.3") for a per-layer tensor name."""
    parts = name.split(".")
    if len(parts) < 2 or parts[0] != "blocks":
        raise ValueError(f"{name!r} is not a block tensor")
    return f"blocks.{parts[1]}"


def layer_shape(config: ModelConfig, name: str) -> tuple[int, int]:
    """(C_out, C_in) for a canonical tensor name."""
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    if name == "embed" or name == "lm_head":
        return (v, d)
    if name == "final_norm":
        return (1, d)
    base = name.split(".", 2)[-1]
    shapes = {
        "attn.q_proj": (d, d),
        "attn.k_proj": (d, d),
        "attn.v_proj": (d, d),
        "attn.o_proj": (d, d),
        "mlp.gate_proj": (f, d),
        "mlp.up_proj": (f, d),
        "mlp.down_proj": (d, f),
        "attn_norm": (1, d),
        "mlp_norm": (1, d),
    }
    if base not in shapes:
        raise ValueError(f"unknown tensor name {name!r}")
    return shapes[base]


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, Matrix] = field(default_factory=dict)

    def validate(self) -> "Checkpoint":
        expected = ["embed", "final_norm"]
        if not self.config.tied_embeddings:
            expected.append("lm_head")
        for i in range(self.config.n_layers):
            expected.extend(block_tensor_names(i))
        for name in expected:
            shape = layer_shape(self.config, name)
            if name in self.tensors:
                t = validate_matrix(self.tensors[name])
                if t.shape != shape:
                    raise ValueError(
                        f"tensor {name!r} has shape {t.shape}, expected {shape}"
                    )
            elif name in (f"blocks.{i}.{p}" for i in range(self.config.n_layers) for p in PROJECTIONS):
                self._validate_factorized(name, shape)
            else:
                raise ValueError(f"missing tensor {name!r}")
        return self

    def _validate_factorized(self, name: str, shape: tuple[int, int]) -> None:
        p_name, q_name = f"{name}.svd_p", f"{name}.svd_q"
        if p_name not in self.tensors or q_name not in self.tensors:
            raise ValueError(f"missing tensor {name!r}")
        p = validate_matrix(self.tensors[p_name])
        q = validate_matrix(self.tensors[q_name])
        c_out, c_in = shape
        r = p.shape[1]
        if p.shape[0] != c_out or q.shape != (r, c_in) or r > min(c_out, c_in):
            raise ValueError(
                f"factorized {name!r} has shapes {p.shape}/{q.shape}, "
                f"inconsistent with {shape}"
            )

    def is_factorized(self, name: str) -> bool:
        return f"{name}.svd_p" in self.tensors and name not in self.tensors

    def head_weight(self) -> Matrix:
        return self.tensors["embed" if self.config.tied_embeddings else "lm_head"]

    def prunable_layers(self) -> list[str]:
        """Dense (non-factorized) projection layers, canonical order."""
        return [n for n in prunable_layer_names(self.config) if n in self.tensors]


def write_container(path, config_dict: dict, tensors: dict[str, Matrix]) -> None:
    """Serialize float32 tensors into the OWLC container (deterministic bytes)."""
    names = sorted(tensors)
    entries = {}
    offset = 0
    for name in names:
        t = validate_matrix(tensors[name])
        nbytes = t.size * 4
        entries[name] = {
            "dtype": "f32",
            "shape": [int(t.shape[0]), int(t.shape[1])],
            "offset": offset,
            "nbytes": nbytes,
        }
        offset += nbytes
        offset += (-offset) % ALIGN
    header = {"config": config_dict, "tensors": entries}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    pad = (-(16 + len(header_bytes))) % ALIGN
    header_bytes += b" " * pad

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        pos = 0
        for name in names:
            want = entries[name]["offset"]
            if want > pos:
                f.write(b"\x00" * (want - pos))
                pos = want
            data = np.ascontiguousarray(tensors[name], dtype="<f4").tobytes()
            f.write(data)
            pos += len(data)


def read_container(path) -> tuple[dict, dict[str, Matrix]]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointFormatError("bad magic: not an OWLC container")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported container version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    if 16 + header_len > len(raw):
        raise CheckpointFormatError("truncated container: header exceeds file")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"invalid header JSON: {e}") from e

    payload = raw[16 + header_len :]
    tensors = {}
    for name, meta in header["tensors"].items():
        if meta.get("dtype") != "f32":
            raise CheckpointFormatError(f"tensor {name!r}: unsupported dtype")
        r, c = meta["shape"]
        nbytes, offset = meta["nbytes"], meta["offset"]
        if nbytes != r * c * 4:
            raise CheckpointFormatError(
                f"tensor {name!r}: nbytes {nbytes} inconsistent with shape {r}x{c}"
            )
        if offset + nbytes > len(payload):
            raise CheckpointFormatError(f"tensor {name!r}: truncated payload")
        data = np.frombuffer(payload, dtype="<f4", count=r * c, offset=offset)
        tensors[name] = data.reshape(r, c).copy()
    return header["config"], tensors


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    ckpt.validate()
    write_container(path, ckpt.config.to_dict(), ckpt.tensors)


def load_checkpoint(path) -> Checkpoint:
    config_dict, tensors = read_container(path)
    return Checkpoint(ModelConfig.from_dict(config_dict), tensors).validate()


def rmsnorm(x: np.ndarray, weight: Matrix, eps: float) -> np.ndarray:
    """Row-wise RMS normalization with learned scale; float64 accumulation."""
    ms = np.mean(x.astype(np.float64) ** 2, axis=-1, keepdims=True)
    normed = x / np.sqrt(ms + eps)
    return (normed * weight[0].astype(np.float64)).astype(np.float32)


def rope_tables(seq_len: int, head_dim: int, theta: float):
    """cos/sin tables for interleaved-pair rotation, shape (seq_len, head_dim/2)."""
    inv_freq = theta ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    angles = np.arange(seq_len, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(angles), np.sin(angles)


def apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate adjacent head-dim pairs (0,1), (2,3), ... of a (seq, head_dim) slice."""
    even = x[:, 0::2].astype(np.float64)
    odd = x[:, 1::2].astype(np.float64)
    out = np.empty_like(x, dtype=np.float64)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out.astype(np.float32)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    s = scores.astype(np.float64)
    s -= s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def forward_logits(ckpt: Checkpoint, tokens, capture=None, project=None) -> Matrix:
    """Logits (seq_len x vocab_size) of a pre-norm decoder over `tokens`.

    `capture(layer_name, x)` is invoked with each projection's input activation
    (seq x C_in) before the projection runs; `project(layer_name, w, x)`
    overrides how a dense projection is applied (default x @ w.T).
    """
    cfg = ckpt.config
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size < 1:
        raise ValueError("tokens must be a non-empty 1-D sequence")
    if (tokens < 0).any() or (tokens >= cfg.vocab_size).any():
        raise ValueError("token id out of range")

    seq = tokens.size
    head_dim = cfg.head_dim
    cos, sin = rope_tables(seq, head_dim, cfg.rope_theta)
    causal = np.tril(np.ones((seq, seq), dtype=bool))

    def run_linear(name: str, x: np.ndarray) -> np.ndarray:
        if capture is not None:
            capture(name, x)
        if ckpt.is_factorized(name):
            p = ckpt.tensors[f"{name}.svd_p"]
            q = ckpt.tensors[f"{name}.svd_q"]
            return matmul(matmul(x, q.T), p.T)
        w = ckpt.tensors[name]
        if project is not None:
            return project(name, w, x)
        return matmul(x, w.T)

    x = ckpt.tensors["embed"][tokens]
    for i in range(cfg.n_layers):
        pre = f"blocks.{i}"
        h = rmsnorm(x, ckpt.tensors[f"{pre}.attn_norm"], cfg.rms_eps)
        q = run_linear(f"{pre}.attn.q_proj", h)
        k = run_linear(f"{pre}.attn.k_proj", h)
        v = run_linear(f"{pre}.attn.v_proj", h)

        attn_out = np.empty((seq, cfg.d_model), dtype=np.float32)
        scale = 1.0 / np.sqrt(head_dim)
        for hh in range(cfg.n_heads):
            sl = slice(hh * head_dim, (hh + 1) * head_dim)
            qh = apply_rope(q[:, sl], cos, sin)
            kh = apply_rope(k[:, sl], cos, sin)
            scores = matmul(qh, kh.T).astype(np.float64) * scale
            scores[~causal] = -np.inf
            probs = _softmax_rows(scores)
            attn_out[:, sl] = matmul(probs, v[:, sl])

        x = x + run_linear(f"{pre}.attn.o_proj", attn_out)

        h2 = rmsnorm(x, ckpt.tensors[f"{pre}.mlp_norm"], cfg.rms_eps)
        gate = run_linear(f"{pre}.mlp.gate_proj", h2)
        up = run_linear(f"{pre}.mlp.up_proj", h2)
        silu = (gate.astype(np.float64) / (1.0 + np.exp(-gate.astype(np.float64)))).astype(np.float32)
        x = x + run_linear(f"{pre}.mlp.down_proj", silu * up)

    x = rmsnorm(x, ckpt.tensors["final_norm"], cfg.rms_eps)
    return matmul(x, ckpt.head_weight().T)


def random_checkpoint(config: ModelConfig, rng, scale: float = 0.05) -> Checkpoint:
    """Random checkpoint for tests and desk-scale experiments."""
    tensors = {}
    names = ["embed", "final_norm"]
    if not config.tied_embeddings:
        names.append("lm_head")
    for i in range(config.n_layers):
        names.extend(block_tensor_names(i))
    for name in names:
        shape = layer_shape(config, name)
        if name.endswith("norm"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:
            tensors[name] = (rng.standard_normal(shape) * scale).astype(np.float32)
    return Checkpoint(config, tensors).validate()
