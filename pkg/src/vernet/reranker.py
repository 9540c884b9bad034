"""Coordinate Ascent over linear hypothesis-ranking features.

The training objective is the mean, over groups, of the gold sentence F0.5 of
the hypothesis ranked first by ``features @ weights`` (ties keep beam order).
Each coordinate is line-searched over ``w_i +/- step * 2**t`` plus a sign
flip; only strict improvements are accepted, and passes repeat until one
yields no gain.  Several restarts run and the best objective wins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

FEATURES = ("model_score", "f", "length_ratio")
# mean top-1 F0.5, or the share of groups whose top-1 has the best F0.5
METRICS = ("gain", "p_at_1")


@dataclass
class RankGroup:
    """Features (K, F) in beam order and the gold sentence F0.5 of each hypothesis."""

    features: np.ndarray
    gains: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if self.features.shape[0] != len(self.gains) or len(self.gains) < 1:
            raise ValueError("each group needs one gain per hypothesis and at least one hypothesis")


@dataclass
class RankerWeights:
    names: list[str]
    weights: np.ndarray
    mean: np.ndarray = None
    std: np.ndarray = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        n = len(self.names)
        self.mean = np.zeros(n) if self.mean is None else np.asarray(self.mean, dtype=np.float64)
        self.std = np.ones(n) if self.std is None else np.asarray(self.std, dtype=np.float64)

    def scores(self, features: np.ndarray) -> np.ndarray:
        return ((np.asarray(features, dtype=np.float64) - self.mean) / self.std) @ self.weights

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for name, w, mu, sd in zip(self.names, self.weights, self.mean, self.std):
                fh.write(f"{name}\t{float(w)!r}\t{float(mu)!r}\t{float(sd)!r}\n")

    @classmethod
    def load(cls, path: str | Path) -> "RankerWeights":
        names, ws, mus, sds = [], [], [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if not parts or parts == [""]:
                    continue
                if len(parts) not in (2, 4):
                    raise ValueError(f"{path}:{lineno}: expected name<TAB>weight[<TAB>mean<TAB>std]")
                names.append(parts[0])
                ws.append(float(parts[1]))
                mus.append(float(parts[2]) if len(parts) == 4 else 0.0)
                sds.append(float(parts[3]) if len(parts) == 4 else 1.0)
        return cls(names, np.array(ws), np.array(mus), np.array(sds))


def l1_normalize(w: np.ndarray) -> np.ndarray:
    s = np.abs(w).sum()
    return w / s if s > 0 else w


def rank(features: np.ndarray, weights: np.ndarray | RankerWeights) -> list[int]:
    """Hypothesis indices best first; equal scores keep the original order."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    s = weights.scores(features) if isinstance(weights, RankerWeights) else features @ np.asarray(weights)
    return sorted(range(len(s)), key=lambda i: (-s[i], i))


def _top1(features: np.ndarray, w: np.ndarray) -> int:
    # argmax returns the first maximum: stable tie-breaking by beam order
    return int(np.argmax(features @ w))


def objective(groups: Sequence[RankGroup], w: np.ndarray, metric: str = "gain") -> float:
    total = 0.0
    for g in groups:
        top = _top1(g.features, w)
        if metric == "gain":
            total += g.gains[top]
        elif metric == "p_at_1":
            total += float(g.gains[top] == g.gains.max())
        else:
            raise ValueError(f"unknown ranking metric {metric!r}")
    return total / len(groups)


@dataclass
class CAConfig:
    restarts: int = 5
    step: float = 0.05
    max_exponent: int = 6
    max_passes: int = 50
    seed: int = 0
    normalize_features: bool = True
    metric: str = "gain"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")


@dataclass
class CAResult:
    weights: RankerWeights
    objective: float
    initial_objective: float
    trace: list[float] = field(default_factory=list)


def _ascend(groups, w0, cfg: CAConfig, trace: list[float]) -> tuple[np.ndarray, float]:
    w = l1_normalize(w0.copy())
    best = objective(groups, w, cfg.metric)
    trace.append(best)
    for _ in range(cfg.max_passes):
        improved = False
        for i in range(len(w)):
            cands = []
            for t in range(cfg.max_exponent + 1):
                delta = cfg.step * 2.0**t
                for sgn in (1.0, -1.0):
                    c = w.copy()
                    c[i] += sgn * delta
                    cands.append(c)
            flip = w.copy()
            flip[i] = -flip[i]
            cands.append(flip)
            local_best, local_w = best, None
            for c in cands:
                if not np.any(c):
                    continue
                c = l1_normalize(c)
                val = objective(groups, c, cfg.metric)
                if val > local_best:
                    local_best, local_w = val, c
            if local_w is not None:
                w, best = local_w, local_best
                trace.append(best)
                improved = True
        if not improved:
            break
    return w, best


def coordinate_ascent(groups: Sequence[RankGroup], names: Sequence[str], config: CAConfig | None = None) -> CAResult:
    cfg = config or CAConfig()
    if not groups:
        raise ValueError("coordinate ascent needs at least one group")
    F = groups[0].features.shape[1]
    if len(names) != F or any(g.features.shape[1] != F for g in groups):
        raise ValueError("feature arity must be fixed across groups and match the names")
    allf = np.concatenate([g.features for g in groups])
    if cfg.normalize_features:
        mu = allf.mean(axis=0)
        sd = allf.std(axis=0)
        sd[sd == 0] = 1.0
    else:
        mu, sd = np.zeros(F), np.ones(F)
    normed = [RankGroup((g.features - mu) / sd, g.gains) for g in groups]
    uniform = np.full(F, 1.0 / F)
    if all(np.all(g.features == g.features[0]) for g in normed):
        log.warning("every hypothesis is tied in every group; returning uniform weights")
        val = objective(normed, uniform, cfg.metric)
        return CAResult(RankerWeights(list(names), uniform, mu, sd), val, val, [val])
    rng = np.random.default_rng(cfg.seed)
    initial = objective(normed, uniform, cfg.metric)
    best_w, best_val, best_trace = None, -np.inf, []
    for r in range(max(1, cfg.restarts)):
        w0 = uniform if r == 0 else l1_normalize(rng.uniform(-1.0, 1.0, size=F))
        trace: list[float] = []
        w, val = _ascend(normed, w0, cfg, trace)
        if val > best_val:
            best_w, best_val, best_trace = w, val, trace
    return CAResult(RankerWeights(list(names), best_w, mu, sd), best_val, initial, best_trace)


def group_features(hyps: Sequence[dict], source_len: int, names: Sequence[str]) -> np.ndarray:
    """Feature rows from score-file hypothesis records."""
    rows = []
    for h in hyps:
        row = []
        for name in names:
            if name == "length_ratio":
                row.append(len(h["text"].split()) / max(1, source_len))
            else:
                v = h.get(name)
                if v is None:
                    raise ValueError(f"hypothesis lacks feature {name!r}")
                row.append(float(v))
        rows.append(row)
    return np.array(rows, dtype=np.float64)
