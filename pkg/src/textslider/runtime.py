"""
Inference-time slider application.

Samplers denoise from high timesteps to low ones.  Sliders stay off while
``t > t_gate`` so the coarse layout forms from the unmodified prompt, and
switch on for ``t <= t_gate``.  The default gate is 800; 550 suits
real-image editing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import container
from .artifact import SliderArtifact
from .encoder import EncodingOutput, TextEncoder, encode_text
from .errors import ConfigurationError, ContractError
from .lora import compose
from .tokenizer import Vocab, encode

T_MAX = 1000
DEFAULT_GATE = 800
EDIT_GATE = 550


@dataclass(frozen=True)
class GateSchedule:
    t_gate: int = DEFAULT_GATE
    alpha_on: float = 1.0

    def __post_init__(self):
        if not 0 <= self.t_gate <= T_MAX:
            raise ContractError(f"t_gate must lie in [0, {T_MAX}], got {self.t_gate}")


def gate_multiplier(schedule: GateSchedule, t: int) -> float:
    """0 while ``t > t_gate``, ``alpha_on`` once ``t <= t_gate``."""
    if int(t) != t or not 0 <= t <= T_MAX:
        raise ContractError(f"timestep must be an integer in [0, {T_MAX}], got {t}")
    return 0.0 if t > schedule.t_gate else schedule.alpha_on


@dataclass
class ConditioningRequest:
    prompt: str
    sliders: list[tuple[SliderArtifact, float]] = field(default_factory=list)
    timestep: int | None = None


def effective_alphas(request: ConditioningRequest, schedule: GateSchedule | None = None) -> list[float]:
    alphas = []
    for _, alpha in request.sliders:
        alpha = float(alpha)
        if not math.isfinite(alpha):
            raise ContractError(f"slider multiplier must be finite, got {alpha}")
        if request.timestep is not None:
            t_gate = (schedule or GateSchedule()).t_gate
            alpha = gate_multiplier(GateSchedule(t_gate, alpha), request.timestep)
        alphas.append(alpha)
    return alphas


def check_fingerprints(sliders: Sequence[SliderArtifact], encoders: Sequence[TextEncoder]) -> None:
    expected = [enc.fingerprint for enc in encoders]
    for i, s in enumerate(sliders):
        if s.encoder_fingerprints != expected:
            label = s.name or f"slider #{i}"
            raise ConfigurationError(
                f"{label} was trained for encoder(s) {s.encoder_fingerprints}, but the loaded encoder(s) are {expected}"
            )


def request_adapters(request: ConditioningRequest, encoders: Sequence[TextEncoder],
                     schedule: GateSchedule | None = None) -> list:
    """Composed adapter set per encoder (None where no slider is active)."""
    check_fingerprints([s for s, _ in request.sliders], encoders)
    alphas = effective_alphas(request, schedule)
    active = [(s, a) for (s, _), a in zip(request.sliders, alphas) if a != 0.0]
    if not active:
        return [None] * len(encoders)
    return [compose([s.adapter_sets[e] for s, _ in active], [a for _, a in active]) for e in range(len(encoders))]


def condition(request: ConditioningRequest, encoders: Sequence[TextEncoder], vocab: Vocab,
              schedule: GateSchedule | None = None) -> list[EncodingOutput]:
    """Encode ``request.prompt`` through every encoder with the requested sliders applied."""
    adapters = request_adapters(request, encoders, schedule)
    return [
        encode_text(enc, ad, encode(request.prompt, vocab, enc.config.max_len))
        for enc, ad in zip(encoders, adapters)
    ]


def conditioning_bytes(outputs: Sequence[EncodingOutput], request: ConditioningRequest,
                       encoders: Sequence[TextEncoder], schedule: GateSchedule | None = None) -> bytes:
    """Serialize conditioning for downstream consumers.

    The header lists only sliders with a non-zero effective multiplier, so a
    request whose sliders are all off exports the same bytes as a plain
    encode of the prompt.
    """
    schedule = schedule or GateSchedule()
    alphas = effective_alphas(request, schedule)
    active = [
        {"name": s.name, "alpha": float(a), "effective_alpha": eff}
        for (s, a), eff in zip(request.sliders, alphas)
        if eff != 0.0
    ]
    meta = {
        "kind": "conditioning",
        "prompt": request.prompt,
        "timestep": request.timestep,
        "t_gate": schedule.t_gate,
        "encoder_fingerprint": [enc.fingerprint for enc in encoders],
        "active_sliders": active,
    }
    arrays = {}
    for e, out in enumerate(outputs):
        arrays[f"tokenwise.{e}"] = out.tokenwise.data
    for e, out in enumerate(outputs):
        arrays[f"pooled.{e}"] = out.pooled.data
    return container.to_bytes(arrays, meta)


def export_conditioning(path: str | Path, outputs, request, encoders, schedule=None) -> None:
    Path(path).write_bytes(conditioning_bytes(outputs, request, encoders, schedule))
