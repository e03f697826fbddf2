"""Slider artifacts: trained (or composed) adapter sets plus their training header."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import container
from .errors import ConfigurationError, ContainerError
from .lora import AdapterSet, LoraAdapter, _layer_order
from .tensor import Tensor

FORMAT_VERSION = 1

_NAME = re.compile(r"^encoder\.(\d+)\.block\.(\d+)\.(q|k|v|out)\.term\.(\d+)\.lora_(A|B)$")


@dataclass
class SliderArtifact:
    adapter_sets: list[AdapterSet]
    header: dict[str, Any] = field(default_factory=dict)
    name: str = ""

    @property
    def encoder_fingerprints(self) -> list[str]:
        return [s.encoder_fingerprint for s in self.adapter_sets]

    @property
    def rank(self) -> int:
        return int(self.header.get("rank", max(s.rank for s in self.adapter_sets)))

    def metadata(self) -> dict[str, Any]:
        meta = dict(self.header)
        meta["format_version"] = FORMAT_VERSION
        meta["kind"] = "slider"
        meta["encoder_fingerprint"] = self.encoder_fingerprints
        meta["target_layers"] = [[f"{b}.{k}" for b, k in s.layer_ids] for s in self.adapter_sets]
        meta["multipliers"] = [s.multiplier for s in self.adapter_sets]
        meta["term_alphas"] = {
            _key(e, lid, j): t.alpha
            for e, s in enumerate(self.adapter_sets)
            for lid, group in s.terms.items()
            for j, t in enumerate(group)
        }
        return meta

    def arrays(self):
        out = {}
        for e, s in enumerate(self.adapter_sets):
            for lid, group in s.terms.items():
                for j, t in enumerate(group):
                    out[_key(e, lid, j) + ".lora_A"] = t.A.data
                    out[_key(e, lid, j) + ".lora_B"] = t.B.data
        return out

    def to_bytes(self) -> bytes:
        return container.to_bytes(self.arrays(), self.metadata())

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, buf: bytes, name: str = "") -> "SliderArtifact":
        arrays, meta = container.from_bytes(buf)
        if meta.get("kind") != "slider":
            raise ConfigurationError(f"not a slider artifact (kind={meta.get('kind')!r})")
        if meta.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported slider format_version {meta.get('format_version')!r}")
        fps = meta["encoder_fingerprint"]
        grouped: list[dict] = [{} for _ in fps]
        for tname in arrays:
            m = _NAME.match(tname)
            if m is None:
                raise ContainerError(f"unexpected tensor name {tname!r} in slider artifact")
            e, block, kind, j, _ = m.groups()
            grouped[int(e)].setdefault((int(block), kind), {}).setdefault(int(j), None)
        sets = []
        for e, layers in enumerate(grouped):
            terms = {}
            for lid in sorted(layers, key=_layer_order):
                group = []
                for j in sorted(layers[lid]):
                    key = _key(e, lid, j)
                    try:
                        a, b = arrays[key + ".lora_A"], arrays[key + ".lora_B"]
                        alpha = float(meta["term_alphas"][key])
                    except KeyError as exc:
                        raise ContainerError(f"slider artifact incomplete: missing {exc}") from None
                    group.append(LoraAdapter(lid, Tensor(a), Tensor(b), alpha))
                terms[lid] = group
            sets.append(AdapterSet(terms, fps[e], float(meta["multipliers"][e])))
        header = {k: v for k, v in meta.items() if k not in _DERIVED}
        return cls(sets, header, name)

    @classmethod
    def load(cls, path: str | Path) -> "SliderArtifact":
        return cls.from_bytes(Path(path).read_bytes(), name=str(path))


_DERIVED = {"format_version", "kind", "encoder_fingerprint", "target_layers", "multipliers", "term_alphas"}


def _key(e: int, lid, j: int) -> str:
    return f"encoder.{e}.block.{lid[0]}.{lid[1]}.term.{j}"
