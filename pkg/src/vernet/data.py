"""Dataset records and JSON-lines I/O.

One record per line::

    {"source": "...", "gold": "..." | ["...", ...] | null,
     "hypotheses": [{"text": "...", "model_score": -1.3}, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .textpipe import tokenize


class RecordError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass
class Hypothesis:
    tokens: list[str]
    model_score: float | None = None

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class HypothesisGroup:
    """A source sentence, its K hypotheses, and optional gold references."""

    source: list[str]
    hypotheses: list[Hypothesis]
    golds: list[list[str]] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.hypotheses)

    @property
    def gold(self) -> list[str] | None:
        """The first reference (used for token labels)."""
        return self.golds[0] if self.golds else None

    def to_record(self) -> dict:
        rec: dict = {"source": " ".join(self.source)}
        if not self.golds:
            rec["gold"] = None
        elif len(self.golds) == 1:
            rec["gold"] = " ".join(self.golds[0])
        else:
            rec["gold"] = [" ".join(g) for g in self.golds]
        rec["hypotheses"] = [
            {"text": h.text, "model_score": h.model_score} for h in self.hypotheses
        ]
        rec.update(self.extra)
        return rec

    @classmethod
    def from_record(cls, rec: dict, lineno: int = 0, lowercase: bool = False) -> "HypothesisGroup":
        if not isinstance(rec, dict) or "source" not in rec:
            raise RecordError(lineno, "record needs a 'source' field")
        gold = rec.get("gold")
        if gold is None:
            golds = []
        elif isinstance(gold, str):
            golds = [tokenize(gold, lowercase)]
        elif isinstance(gold, list) and all(isinstance(g, str) for g in gold):
            golds = [tokenize(g, lowercase) for g in gold]
        else:
            raise RecordError(lineno, "'gold' must be a string, a list of strings, or null")
        hyps = []
        for h in rec.get("hypotheses") or []:
            if isinstance(h, str):
                hyps.append(Hypothesis(tokenize(h, lowercase)))
                continue
            if not isinstance(h, dict) or "text" not in h:
                raise RecordError(lineno, "each hypothesis needs a 'text' field")
            score = h.get("model_score")
            if score is not None and not isinstance(score, (int, float)):
                raise RecordError(lineno, "'model_score' must be a number")
            hyps.append(Hypothesis(tokenize(h["text"], lowercase),
                                   None if score is None else float(score)))
        extra = {k: v for k, v in rec.items() if k not in ("source", "gold", "hypotheses")}
        return cls(tokenize(rec["source"], lowercase), hyps, golds, extra)


def iter_records(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(lineno, f"malformed JSON ({exc.msg})") from exc


def read_groups(path: str | Path, lowercase: bool = False) -> list[HypothesisGroup]:
    return [HypothesisGroup.from_record(rec, lineno, lowercase) for lineno, rec in iter_records(path)]


def dumps(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, sort_keys=False, separators=(",", ":"))


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")


def write_groups(path: str | Path, groups: Sequence[HypothesisGroup]) -> None:
    write_jsonl(path, (g.to_record() for g in groups))
