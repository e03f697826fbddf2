"""
A small CLIP-style text encoder.

Pre-layernorm transformer blocks with causal self-attention and a GELU MLP,
followed by a final layernorm.  The pooled embedding is the final hidden
state at the EOS position; there is no projection head.

Linear weights are stored ``[out, in]`` and applied as ``x @ W.T + b``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import container
from .errors import ConfigurationError, ContractError, DimensionError
from .lora import PROJECTIONS
from .tensor import (
    Tensor,
    add,
    causal_attention,
    gather_rows,
    gelu,
    layernorm,
    matmul,
    reshape,
    slice_rows,
    transpose,
)
from .tokenizer import TokenSeq

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    max_len: int = 77
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    mlp_ratio: int = 4
    seed: int = 0
    causal: bool = True

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ContractError(f"vocab_size must exceed the 4 reserved ids, got {self.vocab_size}")
        if self.max_len < 2:
            raise ContractError(f"max_len must be at least 2, got {self.max_len}")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ContractError(f"d_model {self.d_model} must be a positive multiple of n_heads {self.n_heads}")
        if self.n_layers < 1 or self.mlp_ratio < 1:
            raise ContractError("n_layers and mlp_ratio must be positive")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown encoder config fields {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "EncoderConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parameter_names(config: EncoderConfig) -> list[str]:
    names = ["token_embedding", "position_embedding"]
    for i in range(config.n_layers):
        p = f"blocks.{i}."
        names += [p + "ln1.gain", p + "ln1.bias"]
        for kind in PROJECTIONS:
            names += [f"{p}attn.{kind}.weight", f"{p}attn.{kind}.bias"]
        names += [p + "ln2.gain", p + "ln2.bias"]
        names += [p + "mlp.fc1.weight", p + "mlp.fc1.bias", p + "mlp.fc2.weight", p + "mlp.fc2.bias"]
    return names + ["final_ln.gain", "final_ln.bias"]


def parameter_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, hidden = config.d_model, config.d_model * config.mlp_ratio
    shapes = {}
    for name in parameter_names(config):
        if name == "token_embedding":
            shapes[name] = (config.vocab_size, d)
        elif name == "position_embedding":
            shapes[name] = (config.max_len, d)
        elif name.endswith("fc1.weight"):
            shapes[name] = (hidden, d)
        elif name.endswith("fc1.bias"):
            shapes[name] = (hidden,)
        elif name.endswith("fc2.weight"):
            shapes[name] = (d, hidden)
        elif name.endswith(".weight"):
            shapes[name] = (d, d)
        else:
            shapes[name] = (d,)
    return shapes


@dataclass
class EncodingOutput:
    tokenwise: Tensor  # [max_len, d_model]
    pooled: Tensor  # [d_model]
    eos_pos: int


class TextEncoder:
    """Frozen encoder weights bound to their configuration."""

    def __init__(self, config: EncoderConfig, weights: dict[str, Tensor]):
        shapes = parameter_shapes(config)
        if set(weights) != set(shapes):
            missing, extra = set(shapes) - set(weights), set(weights) - set(shapes)
            raise ConfigurationError(f"encoder weights mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in shapes.items():
            if weights[name].shape != shape:
                raise DimensionError(f"{name}: expected {shape}, got {weights[name].shape}")
            weights[name].requires_grad = False
        self.config = config
        self.weights = {name: weights[name] for name in shapes}

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def __getitem__(self, name: str) -> Tensor:
        return self.weights[name]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.weights.items()}

    def to_bytes(self) -> bytes:
        return container.to_bytes(self.state_arrays(), {"kind": "encoder", "config": self.config.to_dict()})

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "TextEncoder":
        arrays, meta = container.read(path)
        if meta.get("kind") != "encoder":
            raise ConfigurationError(f"{path} is not an encoder weight file (kind={meta.get('kind')!r})")
        return cls(EncoderConfig.from_dict(meta["config"]), {k: Tensor(v) for k, v in arrays.items()})

    def astype(self, dtype) -> "TextEncoder":
        return TextEncoder(self.config, {k: Tensor(v.data, dtype=dtype) for k, v in self.weights.items()})

    def n_parameters(self) -> int:
        return sum(t.size for t in self.weights.values())


def init_encoder(config: EncoderConfig) -> TextEncoder:
    """Seeded init: N(0, 0.02) matrices, zero biases, unit/zero layernorm."""
    rng = np.random.default_rng(config.seed)
    weights = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            arr = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bias"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            arr = rng.normal(0.0, INIT_STD, size=shape).astype(np.float32)
        weights[name] = Tensor(arr)
    return TextEncoder(config, weights)


def parameter_count(config: EncoderConfig) -> int:
    d, h, n = config.d_model, config.d_model * config.mlp_ratio, config.n_layers
    per_block = 4 * (d * d + d) + 4 * d + (h * d + h) + (d * h + d)
    return config.vocab_size * d + config.max_len * d + n * per_block + 2 * d


def load_encoder(spec: str | Path) -> TextEncoder:
    """Load ``path`` as a weight file, or ``init:<config.json>`` as a fresh encoder."""
    spec = str(spec)
    if spec.startswith("init:"):
        return init_encoder(EncoderConfig.from_json(spec[5:]))
    return TextEncoder.load(spec)


def _linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add(matmul(x, transpose(weight)), bias)


def check_adapters(encoder: TextEncoder, adapters) -> None:
    if adapters is None:
        return
    cfg = encoder.config
    for block, kind in adapters.layer_ids:
        if not 0 <= block < cfg.n_layers or kind not in PROJECTIONS:
            raise ConfigurationError(f"adapter targets ({block}, {kind!r}), which this encoder does not have")
        for term in adapters.terms[(block, kind)]:
            if term.in_features != cfg.d_model or term.out_features != cfg.d_model:
                raise ConfigurationError(f"adapter ({block}, {kind!r}) has width {term.B.shape[0]}x{term.A.shape[1]}")


def encode_text(encoder: TextEncoder, adapters, seq: TokenSeq) -> EncodingOutput:
    """Run the encoder on one token sequence, optionally through an adapter set."""
    cfg, w = encoder.config, encoder.weights
    if seq.max_len != cfg.max_len:
        raise DimensionError(f"sequence length {seq.max_len} != encoder max_len {cfg.max_len}")
    if max(seq.ids) >= cfg.vocab_size:
        raise DimensionError(f"token id {max(seq.ids)} outside encoder vocab of {cfg.vocab_size}")
    check_adapters(encoder, adapters)

    def project(block: int, kind: str, h: Tensor) -> Tensor:
        p = f"blocks.{block}.attn.{kind}."
        out = _linear(h, w[p + "weight"], w[p + "bias"])
        return out if adapters is None else adapters.apply((block, kind), h, out)

    x = add(gather_rows(w["token_embedding"], seq.ids), w["position_embedding"])
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        h = layernorm(x, w[p + "ln1.gain"], w[p + "ln1.bias"])
        q, k, v = project(i, "q", h), project(i, "k", h), project(i, "v", h)
        x = add(x, project(i, "out", causal_attention(q, k, v, cfg.n_heads, cfg.causal)))
        h = layernorm(x, w[p + "ln2.gain"], w[p + "ln2.bias"])
        h = gelu(_linear(h, w[p + "mlp.fc1.weight"], w[p + "mlp.fc1.bias"]))
        x = add(x, _linear(h, w[p + "mlp.fc2.weight"], w[p + "mlp.fc2.bias"]))
    tokenwise = layernorm(x, w["final_ln.gain"], w["final_ln.bias"])
    pooled = reshape(slice_rows(tokenwise, seq.eos_pos, seq.eos_pos + 1), (cfg.d_model,))
    return EncodingOutput(tokenwise, pooled, seq.eos_pos)
