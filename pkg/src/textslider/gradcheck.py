"""
Finite-difference check of the slider-loss gradient.

Analytic gradients come from the tape, run in float64.  The numerical side
uses a separate, plain-numpy forward pass of the same encoder and loss, so a
wrong backward rule cannot hide behind a matching forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
from scipy.special import erf

from .encoder import EncoderConfig, TextEncoder, encode_text, init_encoder
from .lora import AdapterSet, LoraAdapter
from .tensor import _BACKWARD, Tape, Tensor, backward, override_backward
from .tokenizer import TokenSeq, Vocab, encode
from .trainer import PromptSpec, TargetEmbedding, build_target, slider_loss

TOLERANCE = 1e-3
STEP = 1e-3

TOY_CONFIG = EncoderConfig(vocab_size=256, max_len=16, d_model=32, n_heads=4, n_layers=2, mlp_ratio=4, seed=0)
TOY_SPEC = PromptSpec(
    target="person",
    positive="person, elderly, wrinkles",
    negative="person, young, smooth skin",
    preserved=[["male", "female"]],
)


def toy_vocab() -> Vocab:
    with resources.as_file(resources.files("textslider") / "data" / "toy_vocab.txt") as path:
        return Vocab.from_file(path)


# ---------------------------------------------------------------------------
# Reference forward (numpy, float64, no tape)


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def reference_encode(cfg: EncoderConfig, w: dict[str, np.ndarray], lora: dict, seq: TokenSeq):
    """(tokenwise, pooled) with ``lora[(block, kind)] = [(A, B, alpha), ...]``."""
    n, dh = cfg.max_len, cfg.d_model // cfg.n_heads
    mask = np.triu(np.ones((n, n), dtype=bool), 1) if cfg.causal else np.zeros((n, n), dtype=bool)

    def proj(i, kind, h):
        p = f"blocks.{i}.attn.{kind}."
        out = h @ w[p + "weight"].T + w[p + "bias"]
        for a, b, alpha in lora.get((i, kind), ()):
            out = out + alpha * ((h @ a.T) @ b.T)
        return out

    x = w["token_embedding"][list(seq.ids)] + w["position_embedding"]
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        h = _ln(x, w[p + "ln1.gain"], w[p + "ln1.bias"])
        q, k, v = proj(i, "q", h), proj(i, "k", h), proj(i, "v", h)
        heads = []
        for hd in range(cfg.n_heads):
            sl = slice(hd * dh, (hd + 1) * dh)
            s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
            s = np.where(mask, -np.inf, s)
            e = np.exp(s - s.max(-1, keepdims=True))
            heads.append((e / e.sum(-1, keepdims=True)) @ v[:, sl])
        x = x + proj(i, "out", np.concatenate(heads, -1))
        h = _ln(x, w[p + "ln2.gain"], w[p + "ln2.bias"])
        h = h @ w[p + "mlp.fc1.weight"].T + w[p + "mlp.fc1.bias"]
        h = 0.5 * h * (1.0 + erf(h / math.sqrt(2.0)))
        x = x + h @ w[p + "mlp.fc2.weight"].T + w[p + "mlp.fc2.bias"]
    y = _ln(x, w["final_ln.gain"], w["final_ln.bias"])
    return y, y[seq.eos_pos]


def reference_loss(cfg, w, lora, seqs, targets: list[TargetEmbedding], tokenwise_weight=1.0, pooled_weight=1.0) -> float:
    total = 0.0
    for c, ww, lo, seq, t in zip(cfg, w, lora, seqs, targets):
        tok, pooled = reference_encode(c, ww, lo, seq)
        total += tokenwise_weight * np.mean((tok - t.tokenwise) ** 2) + pooled_weight * np.mean((pooled - t.pooled) ** 2)
    return float(total)


# ---------------------------------------------------------------------------


@dataclass
class GradcheckReport:
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def worst(self) -> str:
        return max(self.errors, key=self.errors.get)

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if denom == 0 else float(np.linalg.norm(analytic - numeric) / denom)


def randomized_adapters(encoder: TextEncoder, rank: int, seed: int, std: float = 0.05) -> AdapterSet:
    """Adapters with both factors non-zero, so every gradient is informative."""
    rng = np.random.default_rng([seed, 7])
    fresh = AdapterSet.fresh(encoder.config, rank, seed=seed)
    terms = {}
    for lid, group in fresh.terms.items():
        t = group[0]
        a = Tensor(rng.normal(0, std, t.A.shape), requires_grad=True, dtype=np.float64)
        b = Tensor(rng.normal(0, std, t.B.shape), requires_grad=True, dtype=np.float64)
        terms[lid] = [LoraAdapter(lid, a, b, 1.0)]
    return AdapterSet(terms, fresh.encoder_fingerprint)


def check_slider_gradients(encoders: list[TextEncoder], adapters: list[AdapterSet], vocab: Vocab, spec: PromptSpec,
                           step: float = STEP, tokenwise_weight: float = 1.0, pooled_weight: float = 1.0) -> GradcheckReport:
    """Compare tape gradients of the slider loss with central differences, per adapter tensor."""
    encoders = [enc.astype(np.float64) for enc in encoders]
    targets = [build_target(enc, vocab, spec) for enc in encoders]
    seqs = [encode(spec.target, vocab, enc.config.max_len) for enc in encoders]

    params = [p for ad in adapters for p in ad.parameters()]
    for p in params:
        p.grad = None
    with Tape():
        outs = [encode_text(enc, ad, s) for enc, ad, s in zip(encoders, adapters, seqs)]
        backward(slider_loss(outs, targets, tokenwise_weight, pooled_weight))

    cfgs = [enc.config for enc in encoders]
    weights = [{k: v.data for k, v in enc.weights.items()} for enc in encoders]
    lora = [
        {lid: [[t.A.data.copy(), t.B.data.copy(), ad.multiplier * t.alpha] for t in group] for lid, group in ad.terms.items()}
        for ad in adapters
    ]

    def loss() -> float:
        return reference_loss(cfgs, weights, lora, seqs, targets, tokenwise_weight, pooled_weight)

    report = GradcheckReport()
    for e, ad in enumerate(adapters):
        for (block, kind), group in ad.terms.items():
            for j, term in enumerate(group):
                for slot, tensor in ((0, term.A), (1, term.B)):
                    arr = lora[e][(block, kind)][j][slot]
                    numeric = np.zeros_like(arr)
                    for idx in np.ndindex(arr.shape):
                        orig = arr[idx]
                        arr[idx] = orig + step
                        plus = loss()
                        arr[idx] = orig - step
                        minus = loss()
                        arr[idx] = orig
                        numeric[idx] = (plus - minus) / (2 * step)
                    name = f"encoder.{e}.block.{block}.{kind}.term.{j}.lora_{'AB'[slot]}"
                    report.errors[name] = relative_error(tensor.grad, numeric)
    return report


def gradcheck_toy(seed: int = 0, config: EncoderConfig | None = None, rank: int = 4,
                  spec: PromptSpec | None = None, vocab: Vocab | None = None) -> GradcheckReport:
    config = replace(config or TOY_CONFIG, seed=seed)
    encoder = init_encoder(config)
    adapters = randomized_adapters(encoder, rank, seed)
    return check_slider_gradients([encoder], [adapters], vocab or toy_vocab(), spec or TOY_SPEC)


def corrupted(op: str, factor: float = 1.1):
    """Context manager that scales the backward rule of ``op`` by ``factor``."""
    original = _BACKWARD[op]

    def rule(node, g):
        return [None if gi is None else gi * factor for gi in original(node, g)]

    return override_backward(op, rule)
