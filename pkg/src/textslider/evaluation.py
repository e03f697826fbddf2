"""
Embedding-space evaluation of trained sliders.

A slider is probed along the concept direction, the unit vector from the
pooled encoding of the negative prompt to that of the positive prompt.  For
each multiplier in a sweep we record how far the pooled target encoding moved
along that direction, the cosine between the move and the direction, and how
much the encodings of ``[target, q]`` moved for each preserved concept ``q``.

Encoders of a dual-encoder slider contribute their pooled vectors
concatenated, as the conditioning interface does.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .artifact import SliderArtifact
from .encoder import TextEncoder, encode_text
from .errors import ContractError, DegenerateDirectionError
from .lora import compose
from .runtime import check_fingerprints
from .tokenizer import Vocab, encode, join_prompt
from .trainer import PromptSpec, TargetEmbedding

FIVE_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.4)


def _as_list(encoders) -> list[TextEncoder]:
    return [encoders] if isinstance(encoders, TextEncoder) else list(encoders)


def pooled(encoders, vocab: Vocab, text: str, adapters=None) -> np.ndarray:
    encoders = _as_list(encoders)
    adapters = adapters or [None] * len(encoders)
    parts = [
        encode_text(enc, ad, encode(text, vocab, enc.config.max_len)).pooled.data
        for enc, ad in zip(encoders, adapters)
    ]
    return np.concatenate(parts).astype(np.float64)


def concept_direction(encoders, vocab: Vocab, spec: PromptSpec) -> np.ndarray:
    diff = pooled(encoders, vocab, spec.positive) - pooled(encoders, vocab, spec.negative)
    norm = np.linalg.norm(diff)
    if norm == 0.0:
        raise DegenerateDirectionError(
            f"positive and negative prompts encode identically ({spec.positive!r} / {spec.negative!r})"
        )
    return diff / norm


@dataclass
class SweepReport:
    alphas: list[float]
    projection: list[float]
    alignment: list[float]
    drift: dict[str, list[float]] = field(default_factory=dict)

    @property
    def monotone(self) -> bool:
        """Whether the projection never decreases as alpha grows (reported, not required)."""
        return bool(np.all(np.diff(self.projection) >= 0))

    def rows(self):
        for i, a in enumerate(self.alphas):
            yield [a, self.projection[i], self.alignment[i], *(self.drift[q][i] for q in self.drift)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(["alpha", "projection", "alignment", *(f"drift:{q}" for q in self.drift)]) + "\n")
        for row in self.rows():
            buf.write(",".join(f"{v:.9g}" for v in row) + "\n")
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def sweep(slider: SliderArtifact, spec: PromptSpec, alphas: Sequence[float], encoders, vocab: Vocab) -> SweepReport:
    encoders = _as_list(encoders)
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ContractError("sweep needs at least one alpha")
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ContractError(f"sweep alphas must be sorted ascending, got {alphas}")
    check_fingerprints([slider], encoders)

    direction = concept_direction(encoders, vocab, spec)
    qs = spec.flat_preserved()
    q_prompts = [join_prompt([spec.target, q]) for q in qs]
    base = pooled(encoders, vocab, spec.target)
    base_q = [pooled(encoders, vocab, p) for p in q_prompts]

    report = SweepReport(alphas, [], [], {q: [] for q in qs})
    for alpha in alphas:
        adapters = [compose([s], [alpha]) for s in slider.adapter_sets]
        shift = pooled(encoders, vocab, spec.target, adapters) - base
        norm = np.linalg.norm(shift)
        report.projection.append(float(shift @ direction))
        report.alignment.append(float(np.clip(shift @ direction / norm, -1.0, 1.0)) if norm > 0 else 0.0)
        for q, prompt, ref in zip(qs, q_prompts, base_q):
            moved = pooled(encoders, vocab, prompt, adapters)
            report.drift[q].append(float(np.linalg.norm(moved - ref) / np.linalg.norm(ref)))
    return report


def _sphere_gap(t: np.ndarray, radius2: float) -> float:
    # Squared distance from t to {y : mean(y) = 0, |y|^2 <= radius2}, the set a gain-1, bias-0 layernorm can emit.
    m = t.mean()
    c = t - m
    return max(0.0, float(np.linalg.norm(c)) - float(np.sqrt(radius2))) ** 2 + t.size * m * m


def layernorm_loss_floor(target: TargetEmbedding, eos_pos: int, tokenwise_weight: float = 1.0,
                         pooled_weight: float = 1.0) -> float:
    """Lower bound on the slider loss reachable by any adapter, for an encoder whose final layernorm is untrained.

    Each output row is confined to the zero-mean ball of radius ``sqrt(d)``,
    and the pooled vector is the EOS row of the tokenwise output, so the two
    targets of that row are met with one vector.
    """
    tok = target.tokenwise.astype(np.float64)
    n_rows, d = tok.shape
    wt = tokenwise_weight / (n_rows * d)
    wp = pooled_weight / d
    floor = sum(wt * _sphere_gap(tok[i], d) for i in range(n_rows) if i != eos_pos)
    te, p = tok[eos_pos], target.pooled.astype(np.float64)
    if wt + wp == 0:
        return floor
    mid = (wt * te + wp * p) / (wt + wp)
    return floor + (wt + wp) * _sphere_gap(mid, d) + wt * wp / (wt + wp) * float(np.sum((te - p) ** 2))
