import numpy as np
import pytest

from vernet.annotator import levenshtein
from vernet.synthdata import CorruptionConfig, corrupt, generate_sentence, make_corpus, make_hypotheses


def test_rate_zero_keeps_gold():
    cfg = CorruptionConfig(error_rate=0.0)
    for g in make_corpus(50, cfg):
        assert g.source == g.gold


def test_fixed_seed_is_deterministic():
    cfg = CorruptionConfig(seed=11)
    a = [g.to_record() for g in make_corpus(30, cfg)]
    b = [g.to_record() for g in make_corpus(30, cfg)]
    assert a == b
    c = [g.to_record() for g in make_corpus(30, CorruptionConfig(seed=12))]
    assert a != c


def test_corruption_fraction_matches_rate():
    # replacement-only corruption keeps positions aligned, so the rate is directly observable
    cfg = CorruptionConfig(error_rate=0.3, p_replace=1.0, p_delete=0.0, p_insert=0.0, p_swap=0.0)
    rng = np.random.default_rng(0)
    changed = total = 0
    while total < 10_000:
        gold = generate_sentence(rng)
        src = corrupt(gold, cfg, rng)
        changed += sum(a != b for a, b in zip(src, gold))
        total += len(gold)
    assert abs(changed / total - 0.3) <= 0.02


def test_full_corruption_never_returns_gold():
    cfg = CorruptionConfig(error_rate=1.0)
    rng = np.random.default_rng(1)
    for _ in range(200):
        gold = generate_sentence(rng)
        assert corrupt(gold, cfg, rng) != gold


def test_clean_source_gives_gold_hypotheses():
    rng = np.random.default_rng(2)
    gold = generate_sentence(rng)
    hyps = make_hypotheses(gold, gold, CorruptionConfig(k=5), rng)
    assert len(hyps) == 5 and all(h.tokens == gold for h in hyps)


def test_distance_to_gold_grows_with_rank():
    groups = make_corpus(1000, CorruptionConfig(k=5, seed=3))
    dists = np.array([[levenshtein(h.tokens, g.gold) for h in g.hypotheses] for g in groups])
    means = dists.mean(axis=0)
    assert np.all(np.diff(means) >= 0), means


def test_every_corrupted_group_has_a_better_hypothesis():
    for g in make_corpus(500, CorruptionConfig(k=5, seed=4)):
        base = levenshtein(g.source, g.gold)
        assert len(g.hypotheses) == 5
        if base > 0:
            assert min(levenshtein(h.tokens, g.gold) for h in g.hypotheses) < base


def test_hypotheses_sorted_by_score():
    for g in make_corpus(100, CorruptionConfig(seed=5)):
        scores = [h.model_score for h in g.hypotheses]
        assert scores == sorted(scores, reverse=True)


def test_config_validation():
    with pytest.raises(ValueError):
        CorruptionConfig(p_replace=0.5)
    with pytest.raises(ValueError):
        CorruptionConfig(error_rate=1.5)
    with pytest.raises(ValueError):
        CorruptionConfig(k=0)
