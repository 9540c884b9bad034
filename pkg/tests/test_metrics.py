import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vernet.annotator import DELETE, INSERT, REPLACE, Edit
from vernet.metrics import (PRF, UndefinedCorrelation, best_reference, corpus_gleu, edit_counts, f_beta,
                            format_report, gleu, grouped_pcc, pcc, predict_labels, sentence_f05, span_prf,
                            token_prf)


def test_prf_hand_values():
    c = PRF(3, 1, 7)
    assert c.precision == 0.75 and c.recall == 0.3
    assert abs(c.f_beta - 0.576923) < 1e-6


def test_f_beta_hand_value():
    assert abs(f_beta(2 / 3, 0.5) - 0.625) < 1e-12


def test_prf_empty_conventions():
    assert PRF(0, 0, 0).f_beta == 1.0
    assert PRF(0, 0, 4).precision == 0.0 and PRF(0, 0, 4).f_beta == 0.0
    assert PRF(0, 3, 0).recall == 0.0


def test_prf_addition():
    assert PRF(1, 2, 3) + PRF(4, 5, 6) == PRF(5, 7, 9)


def test_predict_labels_threshold():
    assert predict_labels([0.2, 0.5, 0.8]) == [0, 1, 1]


def test_token_prf_positive_class_is_incorrect():
    pred = [[0, 1, 1, 0], [1, 0]]
    gold = [[0, 0, 1, 1], [1, 0]]
    assert token_prf(pred, gold) == PRF(2, 1, 1)
    with pytest.raises(ValueError):
        token_prf([[0, 1]], [[0]])


def test_edit_counts_and_best_reference():
    sys_e = [Edit(1, 2, DELETE), Edit(4, 4, INSERT, ("x",))]
    ref_a = [Edit(1, 2, DELETE)]
    ref_b = [Edit(3, 4, REPLACE, ("y",))]
    assert edit_counts(sys_e, ref_a) == PRF(1, 1, 0)
    assert best_reference(sys_e, [ref_b, ref_a]) == PRF(1, 1, 0)
    assert span_prf([sys_e, []], [[ref_b, ref_a], []]) == PRF(1, 1, 0)


def test_sentence_f05_cases():
    src = "a b c".split()
    assert sentence_f05(src, "a x c".split(), ["a x c".split()]) == 1.0
    assert sentence_f05(src, src, ["a x c".split()]) == 0.0
    assert sentence_f05(src, src, [src]) == 1.0


def test_gleu_hand_value():
    val = gleu("a b c".split(), "a x c".split(), ["a b d".split()], max_n=2)
    assert abs(val - math.sqrt(1 / 6)) < 1e-6


def test_gleu_perfect_and_empty():
    ref = "the cat sat on the mat".split()
    assert gleu(ref, "the cat sit on mat".split(), [ref]) == pytest.approx(1.0)
    assert gleu([], ref, [ref]) == 0.0
    assert corpus_gleu([ref], [ref], [[ref]]) == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(*(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8) for _ in range(3)))
def test_gleu_bounded(c, s, r):
    assert 0.0 <= gleu(c, s, [r]) <= 1.0


def test_pcc_hand_value():
    assert abs(pcc([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12


def test_pcc_matches_numpy_oracle():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=50), rng.normal(size=50)
    assert abs(pcc(x, y) - np.corrcoef(x, y)[0, 1]) < 1e-12


def test_pcc_constant_input_raises():
    with pytest.raises(UndefinedCorrelation):
        pcc([1, 1, 1], [1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=20),
       st.floats(0.1, 10), st.floats(-10, 10))
def test_pcc_affine_invariance(x, a, b):
    x = np.array(x)
    if np.ptp(x) < 1e-3:
        return
    y = np.sin(x) + x
    if np.ptp(y) < 1e-3:
        return
    assert abs(pcc(x, y) - pcc(a * x + b, y)) < 1e-12
    assert abs(pcc(x, y) - pcc(x, a * y + b)) < 1e-12
    assert abs(pcc(x, y) - pcc(y, x)) < 1e-12


def test_grouped_pcc_skips_undefined():
    assert grouped_pcc([[1, 2, 3], [1, 1, 1]], [[1, 2, 3], [3, 2, 1]]) == pytest.approx(1.0)


def test_format_report():
    assert format_report({"f": 0.5, "n": 3}) == "f  0.500000\nn  3"


def test_pcc_linear_cases():
    x = np.arange(6.0)
    assert pcc(x, 2 * x + 1) == pytest.approx(1.0)
    assert pcc(x, -x) == pytest.approx(-1.0)


def test_gleu_trivial_cases():
    s = "a b c d".split()
    assert gleu(s, s, [s]) == pytest.approx(1.0)
    assert gleu("x y".split(), s, [s]) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f05_weighs_precision(tp, fp, fn):
    c = PRF(tp, fp, fn)
    p, r = c.precision, c.recall
    if p > r:
        assert c.f_beta > f_beta(p, r, 1.0)
    if p == r:
        assert c.f_beta == pytest.approx(p)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("abcde"), min_size=1, max_size=12))
def test_gleu_self_is_one(s):
    assert gleu(s, s, [s]) == pytest.approx(1.0, abs=1e-12)


def _edits(draw_list):
    return [Edit(i, i + 1, REPLACE, (t,)) for i, t in draw_list]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.sampled_from("xy")), unique_by=lambda t: t[0]),
       st.lists(st.tuples(st.integers(0, 5), st.sampled_from("xy")), unique_by=lambda t: t[0]))
def test_span_prf_swap_symmetry(a, b):
    ea, eb = sorted(_edits(a)), sorted(_edits(b))
    fwd, rev = span_prf([ea], [eb]), span_prf([eb], [ea])
    assert fwd.precision == rev.recall and fwd.recall == rev.precision
