"""
Low-rank adapters on the attention projections of a text encoder.

An adapted projection computes ``W0 x + alpha * B (A x)``; the multiplier is
the bare ``alpha`` with no ``alpha / r`` rescaling.  ``B`` starts at zero, so
a fresh adapter leaves the encoder untouched for every multiplier.

An :class:`AdapterSet` maps each targeted projection to one or more adapter
terms.  Trained sets hold one term per projection; :func:`compose` stacks the
terms of several sets so that the effective update becomes
``sum_i alpha_i B_i A_i``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor, _seq_matmul, add, matmul, reshape, scale, transpose

PROJECTIONS = ("q", "k", "v", "out")
DEFAULT_RANK = 4
INIT_STD = 0.02

LayerId = tuple[int, str]


@dataclass
class LoraAdapter:
    layer_id: LayerId
    A: Tensor  # [r, k]
    B: Tensor  # [d, r]
    alpha: float = 1.0

    def __post_init__(self):
        r, k = self.A.shape
        d, r2 = self.B.shape
        if r != r2:
            raise DimensionError(f"LoRA {self.layer_id}: A is {self.A.shape} but B is {self.B.shape}")
        if not 1 <= r <= min(d, k):
            raise ContractError(f"LoRA rank {r} must lie in [1, min({d}, {k})]")

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def in_features(self) -> int:
        return self.A.shape[1]

    @property
    def out_features(self) -> int:
        return self.B.shape[0]

    def delta_weight(self) -> np.ndarray:
        """``alpha * B A`` as a plain array."""
        return _seq_matmul(self.B.data, self.A.data) * self.B.dtype.type(self.alpha)


def new_adapter(layer_id: LayerId, out_features: int, in_features: int, rank: int, rng: np.random.Generator) -> LoraAdapter:
    if rank < 1 or rank > min(out_features, in_features):
        raise ContractError(f"rank must lie in [1, {min(out_features, in_features)}], got {rank}")
    a = rng.normal(0.0, INIT_STD, size=(rank, in_features)).astype(np.float32)
    b = np.zeros((out_features, rank), dtype=np.float32)
    return LoraAdapter(layer_id, Tensor(a, requires_grad=True), Tensor(b, requires_grad=True))


def apply_lora(adapter: LoraAdapter, x: Tensor, base_out: Tensor, multiplier: float = 1.0) -> Tensor:
    """``base_out + alpha * B (A x)`` for a vector or a stack of row vectors ``x``."""
    eff = multiplier * adapter.alpha
    if x.shape[-1] != adapter.in_features or base_out.shape[-1] != adapter.out_features:
        raise DimensionError(
            f"LoRA {adapter.layer_id}: input {x.shape} / output {base_out.shape} "
            f"do not fit A {adapter.A.shape}, B {adapter.B.shape}"
        )
    if eff == 0.0:
        return base_out
    rows = x if x.data.ndim == 2 else reshape(x, (1, x.shape[0]))
    delta = matmul(matmul(rows, transpose(adapter.A)), transpose(adapter.B))
    if x.data.ndim != 2:
        delta = reshape(delta, base_out.shape)
    return add(base_out, scale(delta, eff))


class AdapterSet:
    """Adapters for every targeted projection of one encoder, plus a global multiplier."""

    def __init__(self, terms: dict[LayerId, Sequence[LoraAdapter]], encoder_fingerprint: str, multiplier: float = 1.0):
        self.terms: dict[LayerId, tuple[LoraAdapter, ...]] = {}
        for lid, group in terms.items():
            group = tuple(group)
            if any(t.layer_id != lid for t in group):
                raise ConfigurationError(f"adapter filed under {lid} targets another layer")
            if group:
                self.terms[lid] = group
        self.encoder_fingerprint = encoder_fingerprint
        self.multiplier = float(multiplier)

    @classmethod
    def fresh(cls, config, rank: int = DEFAULT_RANK, targets: Iterable[str] = PROJECTIONS, seed: int = 0) -> "AdapterSet":
        """Zero-initialized adapters on ``targets`` of every block of an encoder."""
        targets = tuple(targets)
        unknown = set(targets) - set(PROJECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown projection kinds {sorted(unknown)}")
        rng = np.random.default_rng([seed, int(config.fingerprint()[:8], 16)])
        d = config.d_model
        terms = {}
        for block in range(config.n_layers):
            for kind in targets:
                terms[(block, kind)] = [new_adapter((block, kind), d, d, rank, rng)]
        return cls(terms, config.fingerprint())

    @property
    def layer_ids(self) -> list[LayerId]:
        return list(self.terms)

    @property
    def rank(self) -> int:
        """Rank of the (single-term) adapters; composed sets report the largest."""
        return max(t.rank for group in self.terms.values() for t in group)

    def parameters(self) -> list[Tensor]:
        out = []
        for group in self.terms.values():
            for t in group:
                out += [t.A, t.B]
        return out

    def apply(self, layer_id: LayerId, x: Tensor, base_out: Tensor) -> Tensor:
        out = base_out
        for term in self.terms.get(layer_id, ()):
            out = apply_lora(term, x, out, self.multiplier)
        return out

    def merged_delta(self, layer_id: LayerId) -> np.ndarray | None:
        """Effective weight update of one projection, summed in canonical term order."""
        group = self.terms.get(layer_id)
        if not group:
            return None
        total = None
        for term in group:
            eff = self.multiplier * term.alpha
            part = _seq_matmul(term.B.data, term.A.data) * term.B.dtype.type(eff)
            total = part if total is None else total + part
        return total

    def merged_weight(self, layer_id: LayerId, base: np.ndarray) -> np.ndarray:
        delta = self.merged_delta(layer_id)
        return base.copy() if delta is None else base + delta

    def copy(self) -> "AdapterSet":
        terms = {
            lid: [LoraAdapter(lid, Tensor(t.A.data), Tensor(t.B.data), t.alpha) for t in group]
            for lid, group in self.terms.items()
        }
        return AdapterSet(terms, self.encoder_fingerprint, self.multiplier)

    def freeze(self) -> "AdapterSet":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self


def set_multiplier(adapters: AdapterSet, alpha: float) -> None:
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise ContractError(f"slider multiplier must be finite, got {alpha}")
    adapters.multiplier = alpha


def _term_key(term: LoraAdapter) -> bytes:
    h = hashlib.sha256()
    h.update(np.float64(term.alpha).tobytes())
    h.update(np.ascontiguousarray(term.A.data, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(term.B.data, dtype="<f4").tobytes())
    return h.digest()


def compose(sets: Sequence[AdapterSet], alphas: Sequence[float]) -> AdapterSet:
    """Combine several slider sets with per-slider multipliers.

    Terms with a zero multiplier are dropped.  The remaining terms of each
    projection are sorted by a content hash, so argument order never changes
    the result.
    """
    if len(sets) != len(alphas):
        raise ContractError(f"compose: {len(sets)} sets but {len(alphas)} multipliers")
    if not sets:
        raise ContractError("compose needs at least one adapter set")
    fingerprint = sets[0].encoder_fingerprint
    for s in sets[1:]:
        if s.encoder_fingerprint != fingerprint:
            raise ConfigurationError(
                f"compose: adapter sets target different encoders ({fingerprint} vs {s.encoder_fingerprint})"
            )
    merged: dict[LayerId, list[LoraAdapter]] = {}
    for s, alpha in zip(sets, alphas):
        alpha = float(alpha)
        if not math.isfinite(alpha):
            raise ContractError(f"slider multiplier must be finite, got {alpha}")
        if alpha == 0.0:
            continue
        for lid, group in s.terms.items():
            for t in group:
                merged.setdefault(lid, []).append(LoraAdapter(lid, t.A.detach(), t.B.detach(), alpha * t.alpha))
    ordered = {lid: sorted(merged[lid], key=_term_key) for lid in sorted(merged, key=_layer_order)}
    return AdapterSet(ordered, fingerprint)


def _layer_order(lid: LayerId) -> tuple[int, int]:
    return lid[0], PROJECTIONS.index(lid[1])
