"""Word-level tokenizer with CLIP-style fixed-length framing.

Vocab files are UTF-8 text with one token per line.  Lines starting with
``#`` and blank lines are skipped; the remaining lines receive ids 4, 5, ...
in order, after the four reserved ids.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConfigurationError, ContractError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
N_RESERVED = 4
DEFAULT_MAX_LEN = 77

_WORD = re.compile(r"\w+")


class Vocab:
    """Immutable token to id mapping with reserved PAD/BOS/EOS/UNK."""

    def __init__(self, tokens: Iterable[str]):
        ids: dict[str, int] = {}
        for tok in tokens:
            if tok in ids:
                raise ConfigurationError(f"duplicate vocab token {tok!r}")
            ids[tok] = N_RESERVED + len(ids)
        self._ids = ids
        self._tokens = tuple(ids)

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#"))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, int]) -> "Vocab":
        """Build from explicit ids; they must fill ``4..size-1`` densely."""
        order = sorted(mapping.items(), key=lambda kv: kv[1])
        for expected, (tok, idx) in enumerate(order, start=N_RESERVED):
            if idx != expected:
                raise ConfigurationError(f"vocab ids must be dense from {N_RESERVED}; {tok!r} has id {idx}")
        return cls(tok for tok, _ in order)

    @property
    def size(self) -> int:
        return N_RESERVED + len(self._tokens)

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def to_text(self) -> str:
        return "".join(tok + "\n" for tok in self._tokens)


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    eos_pos: int

    def __post_init__(self):
        ids = self.ids
        if not 0 < self.eos_pos < len(ids):
            raise ContractError(f"eos_pos {self.eos_pos} outside sequence of length {len(ids)}")
        if ids[0] != BOS or ids[self.eos_pos] != EOS or any(i != PAD for i in ids[self.eos_pos + 1 :]):
            raise ContractError("token sequence must be BOS ... EOS PAD*")

    @property
    def max_len(self) -> int:
        return len(self.ids)


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def encode(text: str | bytes, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN) -> TokenSeq:
    """Lowercase, split on whitespace/punctuation, frame as BOS ... EOS PAD*.

    Words beyond ``max_len - 2`` are dropped so EOS always fits.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if max_len < 2:
        raise ContractError(f"max_len must be at least 2, got {max_len}")
    body = [vocab.id_of(w) for w in words(text)][: max_len - 2]
    ids = [BOS, *body, EOS]
    eos_pos = len(ids) - 1
    ids.extend([PAD] * (max_len - len(ids)))
    return TokenSeq(tuple(ids), eos_pos)


def join_prompt(parts: Sequence[str]) -> str:
    """Join prompt fragments with ``", "``, skipping empty ones."""
    kept = [p.strip() for p in parts if p and p.strip()]
    if not kept:
        raise ContractError("join_prompt needs at least one non-empty part")
    return ", ".join(kept)
