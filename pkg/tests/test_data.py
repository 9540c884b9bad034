import pytest

from vernet.data import Hypothesis, HypothesisGroup, RecordError, read_groups, write_groups


def test_record_round_trip(tmp_path):
    groups = [
        HypothesisGroup(["a", "b"], [Hypothesis(["a"], -1.5), Hypothesis(["b"], None)], [["a", "c"]]),
        HypothesisGroup(["x"], [Hypothesis(["y"])], [], {"id": 7}),
        HypothesisGroup(["x"], [Hypothesis(["y"])], [["x"], ["y"]]),
    ]
    write_groups(tmp_path / "g.jsonl", groups)
    assert read_groups(tmp_path / "g.jsonl") == groups
    assert groups[2].gold == ["x"] and groups[1].gold is None


def test_string_hypotheses_and_lowercase():
    g = HypothesisGroup.from_record({"source": "A B", "gold": "A", "hypotheses": ["A b"]}, lowercase=True)
    assert g.source == ["a", "b"] and g.hypotheses[0].tokens == ["a", "b"] and g.gold == ["a"]


@pytest.mark.parametrize("rec", [
    {"gold": "a"},
    {"source": "a", "gold": 3},
    {"source": "a", "hypotheses": [{"txt": "a"}]},
    {"source": "a", "hypotheses": [{"text": "a", "model_score": "high"}]},
])
def test_bad_records(rec):
    with pytest.raises(RecordError, match="line 4"):
        HypothesisGroup.from_record(rec, 4)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"source": "a"}\n\n{"source": \n')
    with pytest.raises(RecordError) as exc:
        read_groups(p)
    assert exc.value.lineno == 3
