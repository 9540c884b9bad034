"""Whitespace tokenization, vocabulary, and the pair layout fed to the encoder.

A pair ``[CLS] s [SEP] c [SEP]`` with ``m`` source and ``n`` hypothesis tokens
occupies ``m + n + 3`` slots: ``[CLS]`` at 0, source at ``1..m``, the source
``[SEP]`` at ``m+1``, the hypothesis at ``m+2..m+n+1`` and the final ``[SEP]``
at ``m+n+2``.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, CLS, SEP, UNK = "[PAD]", "[CLS]", "[SEP]", "[UNK]"
PAD_ID, CLS_ID, SEP_ID, UNK_ID = 0, 1, 2, 3
RESERVED = (PAD, CLS, SEP, UNK)

# 120 content tokens plus the three specials.
DEFAULT_MAX_LEN = 123


def tokenize(text: str, lowercase: bool = False) -> list[str]:
    if lowercase:
        text = text.lower()
    return text.split()


@dataclass(frozen=True)
class Vocabulary:
    token_to_id: dict[str, int]
    min_count: int = 1
    id_to_token: list[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        inv = [""] * len(self.token_to_id)
        for tok, i in self.token_to_id.items():
            inv[i] = tok
        object.__setattr__(self, "id_to_token", inv)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok, i in sorted(self.token_to_id.items(), key=lambda kv: kv[1]):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        mapping = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    tok, idx = line.split("\t")
                    mapping[tok] = int(idx)
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: malformed vocabulary line") from exc
        return cls.from_mapping(mapping)

    @classmethod
    def from_mapping(cls, mapping: dict[str, int], min_count: int = 1) -> "Vocabulary":
        for i, tok in enumerate(RESERVED):
            if mapping.get(tok) != i:
                raise ValueError(f"reserved token {tok} must have id {i}")
        if sorted(mapping.values()) != list(range(len(mapping))):
            raise ValueError("vocabulary ids must be contiguous from 0")
        return cls(dict(mapping), min_count)

    def to_list(self) -> list[str]:
        return list(self.id_to_token)


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Ids by descending frequency, ties broken lexicographically."""
    counts: Counter[str] = Counter()
    n_sent = 0
    for sent in corpus:
        n_sent += 1
        counts.update(sent)
    if n_sent == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    mapping = {tok: i for i, tok in enumerate(RESERVED)}
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count and t not in mapping),
        key=lambda t: (-counts[t], t),
    )
    for tok in kept:
        mapping[tok] = len(mapping)
    return Vocabulary(mapping, min_count)


@dataclass(frozen=True)
class PairLayout:
    m: int
    n: int
    ids: np.ndarray

    def __post_init__(self):
        assert len(self.ids) == self.m + self.n + 3

    def __len__(self) -> int:
        return self.m + self.n + 3

    @property
    def src_sep(self) -> int:
        return self.m + 1

    @property
    def final_sep(self) -> int:
        return self.m + self.n + 2

    @property
    def segments(self) -> np.ndarray:
        seg = np.zeros(len(self), dtype=np.int64)
        seg[self.m + 2:] = 1
        return seg

    def hyp_slice(self) -> slice:
        """Hypothesis tokens plus the final [SEP]."""
        return slice(self.m + 2, self.m + self.n + 3)

    def src_slice(self) -> slice:
        """Source tokens plus the source [SEP]."""
        return slice(1, self.m + 2)


def truncate_counts(m: int, n: int, max_len: int) -> tuple[int, int]:
    budget = max_len - 3
    if budget < 0:
        raise ValueError("max_len must leave room for three special tokens")
    if m + n <= budget:
        return m, n
    n2 = max(0, budget - m)
    m2 = min(m, budget - n2)
    return m2, n2


def encode_pair(
    source: Sequence[str],
    hypothesis: Sequence[str],
    vocab: Vocabulary,
    max_len: int = DEFAULT_MAX_LEN,
) -> PairLayout:
    m, n = truncate_counts(len(source), len(hypothesis), max_len)
    if (m, n) != (len(source), len(hypothesis)):
        log.info("truncated pair from (%d, %d) to (%d, %d)", len(source), len(hypothesis), m, n)
    ids = [CLS_ID, *vocab.encode(source[:m]), SEP_ID, *vocab.encode(hypothesis[:n]), SEP_ID]
    return PairLayout(m, n, np.asarray(ids, dtype=np.int64))


def decode_pair(layout: PairLayout, vocab: Vocabulary) -> tuple[list[str], list[str]]:
    ids = layout.ids
    return vocab.decode(ids[1:layout.m + 1]), vocab.decode(ids[layout.m + 2:layout.m + layout.n + 2])
