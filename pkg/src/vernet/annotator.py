"""Token-level edit extraction and binary quality labels.

Edits come from a unit-cost Levenshtein alignment.  Runs of non-match
alignment steps between two matches are merged into one span edit, so a
sentence/gold pair yields Delete, Insert and Replace edits over half-open
token spans of the labeled sentence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DELETE, INSERT, REPLACE = "Delete", "Insert", "Replace"
KINDS = (DELETE, INSERT, REPLACE)

# backtrace preference order on ties
_MATCH, _SUB, _DEL, _INS = 0, 1, 2, 3


@dataclass(frozen=True, order=True)
class Edit:
    start: int
    end: int
    kind: str
    replacement: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad span [{self.start}, {self.end})")
        if self.kind == INSERT and self.start != self.end:
            raise ValueError("insert edits have empty spans")
        if self.kind == DELETE and self.replacement:
            raise ValueError("delete edits have no replacement")
        object.__setattr__(self, "replacement", tuple(self.replacement))

    @property
    def cost(self) -> int:
        """Unit-cost operations this edit stands for."""
        return max(self.end - self.start, len(self.replacement))

    def to_line(self) -> str:
        return f"{self.kind}\t{self.start}\t{self.end}\t{' '.join(self.replacement)}"

    @classmethod
    def from_line(cls, line: str) -> "Edit":
        kind, start, end, rep = line.rstrip("\n").split("\t")
        return cls(int(start), int(end), kind, tuple(rep.split()))


def _table(a: Sequence[str], b: Sequence[str]) -> np.ndarray:
    n, m = len(a), len(b)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ai = a[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            row[j] = min(sub, prev[j] + 1, row[j - 1] + 1)
    return d


def alignment(sent: Sequence[str], gold: Sequence[str]) -> list[tuple[int, int, int]]:
    """Minimal-cost alignment as (op, i, j) steps in left-to-right order.

    ``i``/``j`` index the sentence/gold token consumed by the step (or the
    position it sits at, for insertions/deletions).
    """
    d = _table(sent, gold)
    i, j = len(sent), len(gold)
    steps = []
    while i > 0 or j > 0:
        if i > 0 and j > 0 and sent[i - 1] == gold[j - 1] and d[i, j] == d[i - 1, j - 1]:
            steps.append((_MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + 1:
            steps.append((_SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            steps.append((_DEL, i - 1, j))
            i -= 1
        else:
            steps.append((_INS, i, j - 1))
            j -= 1
    steps.reverse()
    return steps


def extract_edits(sent: Sequence[str], gold: Sequence[str]) -> list[Edit]:
    edits = []
    run: list[tuple[int, int, int]] = []

    def flush(pos: int):
        if not run:
            return
        start = next((i for op, i, _ in run if op != _INS), pos)
        consumed = [i for op, i, _ in run if op != _INS]
        end = consumed[-1] + 1 if consumed else start
        rep = tuple(gold[j] for op, _, j in run if op != _DEL)
        if not consumed:
            kind = INSERT
        elif not rep:
            kind = DELETE
        else:
            kind = REPLACE
        edits.append(Edit(start, end, kind, rep))
        run.clear()

    pos = 0
    for step in alignment(sent, gold):
        op, i, _ = step
        if op == _MATCH:
            flush(i)
            pos = i + 1
        else:
            if not run:
                # an insertion run starts at the next unconsumed sentence index
                pos = i
            run.append(step)
    flush(pos)
    return edits


def apply_edits(sent: Sequence[str], edits: Iterable[Edit]) -> list[str]:
    out: list[str] = []
    cursor = 0
    for e in sorted(edits):
        if e.start < cursor:
            raise ValueError("overlapping edits")
        out.extend(sent[cursor:e.start])
        out.extend(e.replacement)
        cursor = e.end
    out.extend(sent[cursor:])
    return out


def edit_cost(edits: Iterable[Edit]) -> int:
    return sum(e.cost for e in edits)


def levenshtein(a: Sequence[str], b: Sequence[str]) -> int:
    return int(_table(a, b)[len(a), len(b)])


def labels_from_edits(length: int, edits: Iterable[Edit]) -> list[int]:
    """1 = correct, 0 = incorrect; slot ``length`` is the sentence-end marker."""
    labels = [1] * (length + 1)
    for e in edits:
        if e.kind == INSERT:
            labels[e.start] = 0
        else:
            for p in range(e.start, e.end):
                labels[p] = 0
    return labels


def label_tokens(sent: Sequence[str], gold: Sequence[str]) -> list[int]:
    return labels_from_edits(len(sent), extract_edits(sent, gold))


def label_pair(source: Sequence[str], hypothesis: Sequence[str], gold: Sequence[str] | None):
    """Source and hypothesis label sequences against the same gold.

    Returns ``None`` when there is no gold (the pair is inference-only).
    """
    if gold is None:
        return None
    return label_tokens(source, gold), label_tokens(hypothesis, gold)
