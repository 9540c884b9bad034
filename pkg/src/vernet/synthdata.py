"""Seeded synthetic corpus: clean sentences from a toy grammar, learner-style
corruptions, and beam-like hypothesis lists of graded quality.

The grammar enforces article/noun agreement (a/an/this vs. these), subject-verb
agreement in the present tense, and tense agreement with a time adverb, so
most corruptions are detectable from context.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .annotator import apply_edits, extract_edits, levenshtein
from .data import Hypothesis, HypothesisGroup

VOWELS = "aeiou"

NOUNS = [
    ("dog", "dogs"), ("cat", "cats"), ("student", "students"), ("teacher", "teachers"),
    ("apple", "apples"), ("idea", "ideas"), ("engineer", "engineers"), ("owl", "owls"),
    ("house", "houses"), ("car", "cars"), ("book", "books"), ("letter", "letters"),
    ("phone", "phones"), ("friend", "friends"), ("city", "cities"), ("child", "children"),
    ("doctor", "doctors"), ("artist", "artists"), ("umbrella", "umbrellas"), ("orange", "oranges"),
    ("window", "windows"), ("garden", "gardens"), ("story", "stories"), ("song", "songs"),
    ("problem", "problems"), ("answer", "answers"), ("invention", "inventions"), ("animal", "animals"),
    ("river", "rivers"), ("market", "markets"), ("office", "offices"), ("road", "roads"),
    ("island", "islands"), ("uncle", "uncles"), ("bottle", "bottles"), ("picture", "pictures"),
    ("bridge", "bridges"), ("egg", "eggs"), ("chair", "chairs"), ("game", "games"),
]

VERBS = [
    ("see", "sees", "saw"), ("like", "likes", "liked"), ("visit", "visits", "visited"),
    ("change", "changes", "changed"), ("help", "helps", "helped"), ("call", "calls", "called"),
    ("find", "finds", "found"), ("write", "writes", "wrote"), ("carry", "carries", "carried"),
    ("watch", "watches", "watched"), ("paint", "paints", "painted"), ("open", "opens", "opened"),
    ("clean", "cleans", "cleaned"), ("follow", "follows", "followed"), ("suffer", "suffers", "suffered"),
    ("remember", "remembers", "remembered"), ("buy", "buys", "bought"), ("sell", "sells", "sold"),
    ("build", "builds", "built"), ("read", "reads", "read"), ("move", "moves", "moved"),
    ("want", "wants", "wanted"),
]

ADJECTIVES = [
    "big", "small", "old", "new", "red", "happy", "quiet", "clever", "ugly", "early",
    "marvelous", "honest", "strange", "bright", "heavy", "young", "empty", "famous",
    "green", "kind", "angry", "large",
]

PREPOSITIONS = ["in", "on", "near", "with", "behind", "for"]
PAST_MARKERS = [("yesterday",), ("last", "week")]
PRESENT_MARKERS = ["usually", "often", "always"]
FILLERS = ["the", "a", "to", "of", "very", "and", "is"]


def _article_for(word: str, plural: bool, rng: np.random.Generator) -> str:
    if plural:
        return str(rng.choice(["the", "these", "some", "my"]))
    det = str(rng.choice(["the", "a", "this", "my"]))
    if det == "a" and word[0] in VOWELS:
        det = "an"
    return det


def _build_confusions() -> dict[str, list[str]]:
    conf: dict[str, set[str]] = {}

    def link(group: Sequence[str]):
        for w in group:
            conf.setdefault(w, set()).update(x for x in group if x != w)

    link(["a", "an", "the"])
    link(["this", "these"])
    link(["in", "on", "at"])
    for sg, pl in NOUNS:
        link([sg, pl])
    for forms in VERBS:
        link(list(dict.fromkeys(forms)))
    return {k: sorted(v) for k, v in conf.items()}


DEFAULT_CONFUSIONS = _build_confusions()


def vocabulary_words() -> list[str]:
    words = {".", "at"} | set(ADJECTIVES) | set(PREPOSITIONS) | set(PRESENT_MARKERS) | set(FILLERS)
    words |= {w for m in PAST_MARKERS for w in m}
    words |= {"a", "an", "the", "this", "these", "some", "my"}
    for sg, pl in NOUNS:
        words |= {sg, pl}
    for forms in VERBS:
        words |= set(forms)
    return sorted(words)


@dataclass(frozen=True)
class CorruptionConfig:
    error_rate: float = 0.15
    p_replace: float = 0.6
    p_delete: float = 0.15
    p_insert: float = 0.15
    p_swap: float = 0.1
    k: int = 5
    seed: int = 0
    confusions: dict[str, list[str]] = field(default_factory=lambda: DEFAULT_CONFUSIONS, hash=False)
    repair_high: float = 0.9
    repair_low: float = 0.3
    spurious_rate: float = 0.15
    score_noise: float = 0.7

    def __post_init__(self):
        mix = (self.p_replace, self.p_delete, self.p_insert, self.p_swap)
        if any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError("operation probabilities must be non-negative and sum to 1")
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error_rate must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def mix(self) -> np.ndarray:
        return np.array([self.p_replace, self.p_delete, self.p_insert, self.p_swap])


def generate_sentence(rng: np.random.Generator) -> list[str]:
    past = rng.random() < 0.5
    subj_sg, subj_pl = NOUNS[rng.integers(len(NOUNS))]
    subj_plural = rng.random() < 0.4
    subj = subj_pl if subj_plural else subj_sg
    out: list[str] = []
    if past:
        out.extend(PAST_MARKERS[rng.integers(len(PAST_MARKERS))])
    np_words = []
    if rng.random() < 0.4:
        np_words.append(str(rng.choice(ADJECTIVES)))
    np_words.append(subj)
    out.append(_article_for(np_words[0], subj_plural, rng))
    out.extend(np_words)
    base, third, past_form = VERBS[rng.integers(len(VERBS))]
    if past:
        out.append(past_form)
    else:
        out.append(str(rng.choice(PRESENT_MARKERS)))
        out.append(base if subj_plural else third)
    obj_sg, obj_pl = NOUNS[rng.integers(len(NOUNS))]
    obj_plural = rng.random() < 0.4
    obj = [str(rng.choice(ADJECTIVES))] if rng.random() < 0.4 else []
    obj.append(obj_pl if obj_plural else obj_sg)
    out.append(_article_for(obj[0], obj_plural, rng))
    out.extend(obj)
    if rng.random() < 0.35:
        p_sg, p_pl = NOUNS[rng.integers(len(NOUNS))]
        pl = rng.random() < 0.4
        out.append(str(rng.choice(PREPOSITIONS)))
        out.append(_article_for(p_pl if pl else p_sg, pl, rng))
        out.append(p_pl if pl else p_sg)
    out.append(".")
    return out


def _replacement(tok: str, config: CorruptionConfig, rng: np.random.Generator, vocab: Sequence[str]) -> str:
    options = config.confusions.get(tok)
    if options:
        return str(options[rng.integers(len(options))])
    while True:
        cand = str(vocab[rng.integers(len(vocab))])
        if cand != tok:
            return cand


def corrupt(gold: Sequence[str], config: CorruptionConfig, rng: np.random.Generator,
            vocab: Sequence[str] | None = None) -> list[str]:
    """Independently corrupt each position with probability ``error_rate``.

    Operations that would leave the sentence unchanged (e.g. swapping equal
    neighbours) fall back to a replacement, so rate 1 never returns the gold.
    """
    vocab = vocab if vocab is not None else vocabulary_words()
    out: list[str] = []
    i = 0
    gold = list(gold)
    touched = False
    while i < len(gold):
        tok = gold[i]
        if rng.random() >= config.error_rate:
            out.append(tok)
            i += 1
            continue
        touched = True
        op = int(rng.choice(4, p=config.mix))
        if op == 3 and i + 1 < len(gold) and gold[i + 1] != tok:
            out.extend([gold[i + 1], tok])
            i += 2
            continue
        if op == 1 and len(gold) > 1:
            i += 1
            continue
        if op == 2:
            out.append(str(FILLERS[rng.integers(len(FILLERS))]))
            out.append(tok)
            if out[-2] != out[-1]:
                i += 1
                continue
            out.pop()
            out.pop()
        out.append(_replacement(tok, config, rng, vocab))
        i += 1
    if touched and out == gold:
        # a delete followed by an insert can rebuild the gold
        out[0] = _replacement(out[0], config, rng, vocab)
    return out


def _spurious(tokens: list[str], config: CorruptionConfig, rng: np.random.Generator, vocab) -> list[str]:
    if not tokens:
        return tokens
    j = int(rng.integers(len(tokens)))
    out = list(tokens)
    out[j] = _replacement(out[j], config, rng, vocab)
    return out


def make_hypotheses(source: Sequence[str], gold: Sequence[str], config: CorruptionConfig,
                    rng: np.random.Generator, vocab: Sequence[str] | None = None) -> list[Hypothesis]:
    """K hypotheses sorted by a pseudo decoder score (higher first).

    Hypothesis r repairs each source-vs-gold edit with a probability falling
    linearly from ``repair_high`` to ``repair_low`` and occasionally adds a
    spurious replacement.  The score is ``-distance_to_gold + noise``.
    """
    vocab = vocab if vocab is not None else vocabulary_words()
    source, gold = list(source), list(gold)
    K = config.k
    if source == gold:
        # scores still carry noise so rank order is not trivially informative
        scores = sorted((-config.score_noise * abs(rng.normal()) for _ in range(K)), reverse=True)
        return [Hypothesis(list(gold), float(s)) for s in scores]
    edits = extract_edits(source, gold)
    base = levenshtein(source, gold)
    hyps = []
    for r in range(K):
        frac = config.repair_high if K == 1 else config.repair_high - (config.repair_high - config.repair_low) * r / (K - 1)
        chosen = [e for e in edits if rng.random() < frac]
        toks = apply_edits(source, chosen)
        if rng.random() < config.spurious_rate:
            toks = _spurious(toks, config, rng, vocab)
        hyps.append(toks)
    dists = [levenshtein(h, gold) for h in hyps]
    if min(dists) >= base:
        e = edits[int(rng.integers(len(edits)))]
        hyps[0] = apply_edits(source, [e])
        dists[0] = levenshtein(hyps[0], gold)
    scores = [-d + config.score_noise * rng.normal() for d in dists]
    order = sorted(range(K), key=lambda i: -scores[i])
    return [Hypothesis(hyps[i], float(scores[i])) for i in order]


def make_corpus(n_groups: int, config: CorruptionConfig) -> list[HypothesisGroup]:
    """Each group draws from its own generator seeded by (seed, index)."""
    vocab = vocabulary_words()
    groups = []
    for idx in range(n_groups):
        rng = np.random.default_rng([config.seed, idx])
        gold = generate_sentence(rng)
        source = corrupt(gold, config, rng, vocab)
        hyps = make_hypotheses(source, gold, config, rng, vocab)
        groups.append(HypothesisGroup(source, hyps, [gold]))
    return groups
