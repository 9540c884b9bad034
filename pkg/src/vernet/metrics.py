"""Evaluation: token/span precision-recall-F0.5, GLEU, and Pearson correlation."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .annotator import Edit, extract_edits

BETA = 0.5


@dataclass(frozen=True)
class PRF:
    tp: int
    fp: int
    fn: int
    beta: float = BETA

    @property
    def precision(self) -> float:
        if self.tp + self.fp + self.fn == 0:
            return 1.0
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        if self.tp + self.fp + self.fn == 0:
            return 1.0
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f_beta(self) -> float:
        return f_beta(self.precision, self.recall, self.beta)

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.beta)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f0.5": self.f_beta}


def f_beta(p: float, r: float, beta: float = BETA) -> float:
    b2 = beta * beta
    denom = b2 * p + r
    return (1 + b2) * p * r / denom if denom > 0 else 0.0


def predict_labels(p_correct: Iterable[float]) -> list[int]:
    """Label 0 (incorrect) wherever P(y=0) > 0.5."""
    return [0 if 1.0 - p > 0.5 else 1 for p in p_correct]


def token_prf(predicted: Sequence[Sequence[int]], gold: Sequence[Sequence[int]]) -> PRF:
    """Micro-averaged detection scores; the positive class is label 0."""
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predicted sentences vs {len(gold)} gold")
    tp = fp = fn = 0
    for i, (p, g) in enumerate(zip(predicted, gold)):
        if len(p) != len(g):
            raise ValueError(f"sentence {i}: {len(p)} predicted labels vs {len(g)} gold")
        p = np.asarray(p) == 0
        g = np.asarray(g) == 0
        tp += int(np.sum(p & g))
        fp += int(np.sum(p & ~g))
        fn += int(np.sum(~p & g))
    return PRF(tp, fp, fn)


def _edit_key(e: Edit):
    return (e.kind, e.start, e.end, tuple(e.replacement))


def edit_counts(system: Iterable[Edit], gold: Iterable[Edit]) -> PRF:
    sys_c = Counter(_edit_key(e) for e in system)
    gold_c = Counter(_edit_key(e) for e in gold)
    tp = sum((sys_c & gold_c).values())
    return PRF(tp, sum(sys_c.values()) - tp, sum(gold_c.values()) - tp)


def best_reference(system: Sequence[Edit], references: Sequence[Sequence[Edit]]) -> PRF:
    """Counts against the reference giving the highest sentence F0.5."""
    if not references:
        raise ValueError("need at least one reference")
    best = None
    for ref in references:
        c = edit_counts(system, ref)
        if best is None or (c.f_beta, c.tp, -c.fp - c.fn) > (best.f_beta, best.tp, -best.fp - best.fn):
            best = c
    return best


def span_prf(system: Sequence[Sequence[Edit]], gold: Sequence[Sequence[Sequence[Edit]] | Sequence[Edit]]) -> PRF:
    """Corpus span scores.  ``gold[i]`` is one edit list or a list of alternatives."""
    if len(system) != len(gold):
        raise ValueError("system and gold sentence counts differ")
    total = PRF(0, 0, 0)
    for sys_edits, ref in zip(system, gold):
        refs = ref if ref and isinstance(ref[0], (list, tuple)) else [ref]
        total = total + best_reference(sys_edits, refs)
    return total


def sentence_f05(source: Sequence[str], hypothesis: Sequence[str], golds: Sequence[Sequence[str]]) -> float:
    """Gold sentence F0.5 of a hypothesis: its edits against each reference's edits."""
    sys_edits = extract_edits(source, hypothesis)
    refs = [extract_edits(source, g) for g in golds]
    return best_reference(sys_edits, refs).f_beta


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def gleu(candidate: Sequence[str], source: Sequence[str], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Source-penalized sentence GLEU, averaged over references.

    Orders above the candidate length are skipped; any zero precision
    collapses the geometric mean to 0.
    """
    if not references:
        raise ValueError("gleu needs at least one reference")
    if not candidate:
        return 0.0
    orders = range(1, min(max_n, len(candidate)) + 1)
    scores = []
    for ref in references:
        log_sum = 0.0
        zero = False
        for n in orders:
            c, r, s = _ngrams(candidate, n), _ngrams(ref, n), _ngrams(source, n)
            matches = sum(min(cnt, r[g]) for g, cnt in c.items())
            penalty = sum(min(cnt, max(0, s[g] - r[g])) for g, cnt in c.items())
            p = max(0, matches - penalty) / sum(c.values())
            if p == 0:
                zero = True
                break
            log_sum += math.log(p)
        if zero:
            scores.append(0.0)
            continue
        bp = min(1.0, math.exp(1.0 - len(ref) / len(candidate)))
        scores.append(bp * math.exp(log_sum / len(orders)))
    return float(np.mean(scores))


def corpus_gleu(candidates, sources, references, max_n: int = 4) -> float:
    vals = [gleu(c, s, r, max_n) for c, s, r in zip(candidates, sources, references)]
    return float(np.mean(vals)) if vals else 0.0


class UndefinedCorrelation(ValueError):
    pass


def pcc(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pcc needs two equal-length 1-d sequences")
    if len(x) < 2:
        raise ValueError("pcc needs at least two points")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((xc * xc).sum()), np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("correlation undefined for a constant input")
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def grouped_pcc(xs: Sequence[Sequence[float]], ys: Sequence[Sequence[float]]) -> float:
    """Mean per-group correlation over groups where it is defined."""
    vals = []
    for x, y in zip(xs, ys):
        try:
            vals.append(pcc(x, y))
        except (UndefinedCorrelation, ValueError):
            continue
    if not vals:
        raise UndefinedCorrelation("no group has a defined correlation")
    return float(np.mean(vals))


def format_report(values: dict[str, float]) -> str:
    width = max(len(k) for k in values) if values else 0
    lines = []
    for k, v in values.items():
        lines.append(f"{k:<{width}}  {v:.6f}" if isinstance(v, float) else f"{k:<{width}}  {v}")
    return "\n".join(lines)
