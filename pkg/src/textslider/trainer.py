"""
Slider training.

The target embedding shifts the base encoding of the target concept by the
positive-minus-negative difference measured on every preserved concept::

    target = enc(c_t) + sum_q [ enc(c_plus, q) - enc(c_minus, q) ]

Only the adapters are trained; the encoder weights stay frozen.  The loss is
the mean squared error against the target on tokenwise and pooled outputs,
summed over encoders.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .artifact import SliderArtifact
from .encoder import EncodingOutput, TextEncoder, encode_text
from .errors import ConfigurationError, ContractError, DimensionError, NumericalError
from .lora import DEFAULT_RANK, PROJECTIONS, AdapterSet
from .tensor import Tensor, Tape, add, backward, mse, scale, slice_rows
from .tokenizer import Vocab, encode, join_prompt

log = logging.getLogger(__name__)

Q_MODES = ("sum", "mean")


@dataclass
class PromptSpec:
    target: str
    positive: str
    negative: str
    preserved: list[list[str]] = field(default_factory=list)
    q_mode: str = "sum"

    def __post_init__(self):
        for fname in ("target", "positive", "negative"):
            if not str(getattr(self, fname)).strip():
                raise ContractError(f"prompt spec field {fname!r} must be non-empty")
        if isinstance(self.preserved, str):
            self.preserved = parse_preserved(self.preserved)
        self.preserved = [[str(q) for q in group] for group in self.preserved]
        if self.q_mode not in Q_MODES:
            raise ConfigurationError(f"q_mode must be one of {Q_MODES}, got {self.q_mode!r}")

    def flat_preserved(self) -> list[str]:
        return [q for group in self.preserved for q in group if q.strip()]

    def to_dict(self) -> dict[str, Any]:
        return {
            "target": self.target,
            "positive": self.positive,
            "negative": self.negative,
            "preserved": self.preserved,
            "q_mode": self.q_mode,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PromptSpec":
        extra = set(d) - {"target", "positive", "negative", "preserved", "q_mode", "name"}
        if extra:
            raise ConfigurationError(f"unknown prompt spec fields {sorted(extra)}")
        for req in ("target", "positive", "negative"):
            if req not in d:
                raise ConfigurationError(f"prompt spec is missing field {req!r}")
        return cls(d["target"], d["positive"], d["negative"], d.get("preserved", []), d.get("q_mode", "sum"))

    @classmethod
    def from_json(cls, path: str | Path) -> "PromptSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def parse_preserved(text: str) -> list[list[str]]:
    """``"white race, black race ; male, female"`` -> ``[["white race", "black race"], ["male", "female"]]``."""
    groups = []
    for chunk in text.split(";"):
        items = [q.strip() for q in chunk.split(",") if q.strip()]
        if items:
            groups.append(items)
    return groups



def prompt_table() -> dict[str, PromptSpec]:
    """Bundled slider prompts for the ``person`` target, keyed by slider name."""
    raw = json.loads((resources.files("textslider") / "data" / "prompt_table.json").read_text(encoding="utf-8"))
    return {row["name"]: PromptSpec.from_dict(row) for row in raw}

@dataclass
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    rank: int = DEFAULT_RANK
    targets: tuple[str, ...] = PROJECTIONS
    q_mode: str | None = None  # None: take it from the prompt spec
    tokenwise_weight: float = 1.0
    pooled_weight: float = 1.0
    mask_pad: bool = False
    augment: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.rank < 1:
            raise ConfigurationError(f"rank must be >= 1, got {self.rank}")
        if self.q_mode is not None and self.q_mode not in Q_MODES:
            raise ConfigurationError(f"q_mode must be one of {Q_MODES}, got {self.q_mode!r}")
        self.targets = tuple(self.targets)


@dataclass
class TargetEmbedding:
    tokenwise: np.ndarray
    pooled: np.ndarray


def _embed(encoder: TextEncoder, vocab: Vocab, text: str, adapters=None) -> EncodingOutput:
    return encode_text(encoder, adapters, encode(text, vocab, encoder.config.max_len))


def preserved_direction(encoder: TextEncoder, vocab: Vocab, spec: PromptSpec, q_mode: str = "sum"):
    """``sum_q enc([c_plus, q]) - enc([c_minus, q])`` as (tokenwise, pooled), or None when Q is empty."""
    qs = spec.flat_preserved()
    if not qs:
        return None
    acc_t = acc_p = None
    for q in qs:
        pos = _embed(encoder, vocab, join_prompt([spec.positive, q]))
        neg = _embed(encoder, vocab, join_prompt([spec.negative, q]))
        dt = pos.tokenwise.data - neg.tokenwise.data
        dp = pos.pooled.data - neg.pooled.data
        acc_t = dt if acc_t is None else acc_t + dt
        acc_p = dp if acc_p is None else acc_p + dp
    if q_mode == "mean":
        n = acc_t.dtype.type(len(qs))
        acc_t, acc_p = acc_t / n, acc_p / n
    return acc_t, acc_p


def build_target(encoder: TextEncoder, vocab: Vocab, spec: PromptSpec, q_mode: str | None = None,
                 prompt: str | None = None) -> TargetEmbedding:
    """Target embedding for one encoder, computed without adapters.

    ``prompt`` replaces ``spec.target`` as the base prompt (used by the
    augmented training mode).
    """
    q_mode = q_mode or spec.q_mode
    if q_mode not in Q_MODES:
        raise ConfigurationError(f"q_mode must be one of {Q_MODES}, got {q_mode!r}")
    base = _embed(encoder, vocab, prompt or spec.target)
    direction = preserved_direction(encoder, vocab, spec, q_mode)
    if direction is None:
        return TargetEmbedding(base.tokenwise.numpy(), base.pooled.numpy())
    return TargetEmbedding(base.tokenwise.data + direction[0], base.pooled.data + direction[1])


def slider_loss(outputs: Sequence[EncodingOutput], targets: Sequence[TargetEmbedding],
                tokenwise_weight: float = 1.0, pooled_weight: float = 1.0, mask_pad: bool = False) -> Tensor:
    """Sum over encoders of weighted tokenwise and pooled MSE."""
    if len(outputs) != len(targets) or not outputs:
        raise DimensionError(f"{len(outputs)} encoder outputs vs {len(targets)} targets")
    total = None
    for out, tgt in zip(outputs, targets):
        tok, tok_target = out.tokenwise, tgt.tokenwise
        if mask_pad:
            tok = slice_rows(tok, 0, out.eos_pos + 1)
            tok_target = tok_target[: out.eos_pos + 1]
        term = add(
            scale(mse(tok, Tensor(tok_target, dtype=tok.dtype)), tokenwise_weight),
            scale(mse(out.pooled, Tensor(tgt.pooled, dtype=tok.dtype)), pooled_weight),
        )
        total = term if total is None else add(total, term)
    return total


@dataclass
class AdamWState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(params: Sequence[Tensor], state: AdamWState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.01) -> None:
    """One AdamW update with bias-corrected moments and decoupled weight decay.

    ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``
    """
    for p in params:
        if p.grad is None:
            raise ContractError(f"adamw_step: parameter {p.name or p.shape} has no gradient")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        update = m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data
        new = (p.data - lr * update).astype(p.dtype)
        new.flags.writeable = False
        p.data = new


class AdamW:
    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.state = AdamWState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adamw_step(self.params, self.state, self.lr, self.betas[0], self.betas[1], self.eps, self.weight_decay)


@dataclass
class TrainResult:
    artifact: SliderArtifact
    loss_history: list[float]
    final_loss: float
    targets: list[list[TargetEmbedding]]  # [candidate prompt][encoder]
    prompts: list[str]


def fresh_adapters(encoders: Sequence[TextEncoder], config: TrainConfig) -> list[AdapterSet]:
    return [AdapterSet.fresh(enc.config, config.rank, config.targets, config.seed) for enc in encoders]


def train_slider(encoders: Sequence[TextEncoder], vocab: Vocab, spec: PromptSpec, config: TrainConfig | None = None,
                 adapters: Sequence[AdapterSet] | None = None, callback=None) -> TrainResult:
    """Fit one adapter set per encoder so the adapted encoding of the target prompt matches the target embedding."""
    config = config or TrainConfig()
    if not encoders:
        raise ContractError("train_slider needs at least one encoder")
    q_mode = config.q_mode or spec.q_mode
    adapters = list(adapters) if adapters is not None else fresh_adapters(encoders, config)
    if len(adapters) != len(encoders):
        raise ConfigurationError(f"{len(adapters)} adapter sets for {len(encoders)} encoders")
    for enc, ad in zip(encoders, adapters):
        if ad.encoder_fingerprint != enc.fingerprint:
            raise ConfigurationError(f"adapter set built for encoder {ad.encoder_fingerprint}, got {enc.fingerprint}")
        ad.multiplier = 1.0

    prompts = [spec.target]
    if config.augment:
        prompts += [join_prompt([spec.target, q]) for q in spec.flat_preserved()]
    targets = [[build_target(enc, vocab, spec, q_mode, prompt=y) for enc in encoders] for y in prompts]
    seqs = [[encode(y, vocab, enc.config.max_len) for enc in encoders] for y in prompts]
    rng = np.random.default_rng(config.seed)

    params = [p for ad in adapters for p in ad.parameters()]
    for p in params:
        p.requires_grad = True
    opt = AdamW(params, config.learning_rate, (config.beta1, config.beta2), config.eps, config.weight_decay)

    def step_loss(idx: int) -> Tensor:
        outs = [encode_text(enc, ad, s) for enc, ad, s in zip(encoders, adapters, seqs[idx])]
        return slider_loss(outs, targets[idx], config.tokenwise_weight, config.pooled_weight, config.mask_pad)

    history: list[float] = []
    for epoch in range(1, config.epochs + 1):
        idx = int(rng.integers(len(prompts))) if config.augment else 0
        with Tape():
            loss = step_loss(idx)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"loss became {value} at epoch {epoch}")
            opt.zero_grad()
            backward(loss)
        opt.step()
        history.append(value)
        if callback is not None:
            callback(epoch, value)
        if epoch == 1 or epoch % 100 == 0:
            log.debug("epoch %d loss %.6g", epoch, value)

    with Tape() as tape:
        final = float(step_loss(0).data)
        tape.clear()
    if not math.isfinite(final):
        raise NumericalError(f"final loss is {final}")

    for ad in adapters:
        ad.freeze()
    header = {
        "rank": config.rank,
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "weight_decay": config.weight_decay,
        "seed": config.seed,
        "q_mode": q_mode,
        "augment": config.augment,
        "prompt_spec": spec.to_dict(),
    }
    artifact = SliderArtifact(adapters, header)
    return TrainResult(artifact, history, final, targets, prompts)


def write_loss_csv(path: str | Path, history: Sequence[float]) -> None:
    lines = ["epoch,loss"] + [f"{i},{v:.9g}" for i, v in enumerate(history, start=1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def config_dict(config: TrainConfig) -> dict[str, Any]:
    d = asdict(config)
    d["targets"] = list(config.targets)
    return d
