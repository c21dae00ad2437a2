import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qamatch.dialogue import (
    NQ,
    Q,
    Dialogue,
    DialogueError,
    Turn,
    build_candidate_pairs,
    dialogue_from_json,
    dialogue_to_json,
    encode_distance,
    load_dialogues,
    make_dialogue,
    save_dialogues,
    validate_dialogue,
)

from conftest import WORKED_GOLD, random_dialogue


def test_worked_accepted(worked):
    assert validate_dialogue(worked) is worked
    assert worked.gold_pairs == WORKED_GOLD
    assert worked.roles == ["P", "D"]


def test_worked_candidate_pairs(worked):
    got = [(p.q_index, p.nq_index, p.gold) for p in build_candidate_pairs(worked)]
    assert got == [(0, 1, False), (3, 4, True), (0, 5, True), (0, 6, True), (0, 7, True)]


def test_worked_history_partition(worked):
    p = {(c.q_index, c.nq_index): c for c in build_candidate_pairs(worked)}[(0, 5)]
    assert p.distance == 5
    assert [t.index for t in p.history] == [1, 2, 3, 4]
    assert [t.index for t in p.h_rq] == [2, 4]  # parent's turns
    assert [t.index for t in p.h_rnq] == [1, 3]  # doctor's turns


def test_answer_precedes_question():
    with pytest.raises(DialogueError, match="answer precedes question"):
        make_dialogue("x", [("A", Q, "why ?"), ("B", NQ, "because")], {(1, 0)})


def test_same_role_gold_pair_rejected():
    with pytest.raises(DialogueError, match="both turns uttered by"):
        make_dialogue("x", [("A", Q, "why ?"), ("A", NQ, "because")], {(0, 1)})


def test_other_violations():
    with pytest.raises(DialogueError, match="more than two roles"):
        make_dialogue("x", [("A", Q, "q"), ("B", NQ, "a"), ("C", NQ, "b")])
    with pytest.raises(DialogueError, match="has no tokens"):
        make_dialogue("x", [("A", Q, "q"), ("B", NQ, "   ")])
    with pytest.raises(DialogueError, match="label"):
        make_dialogue("x", [("A", "A", "q"), ("B", NQ, "a")])
    with pytest.raises(DialogueError, match="answers both"):
        make_dialogue("x", [("A", Q, "q"), ("A", Q, "r"), ("B", NQ, "a")], {(0, 2), (1, 2)})
    with pytest.raises(DialogueError, match="at least 2 turns"):
        make_dialogue("x", [("A", Q, "q")])


def test_minimal_dialogues():
    d = make_dialogue("x", [("P1", Q, "why ?"), ("P2", NQ, "because")])
    (p,) = build_candidate_pairs(d)
    assert p.distance == 1 and p.history == () and not p.gold
    same = make_dialogue("y", [("P1", Q, "why ?"), ("P1", NQ, "because")])
    assert build_candidate_pairs(same) == []


def test_encode_distance_examples():
    np.testing.assert_array_equal(encode_distance(4), [0, 0, 0, 1, 0, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(encode_distance(1), [1, 0, 0, 0, 0, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(encode_distance(13), [0, 0, 0, 0, 0, 0, 0, 0, 0, 1])
    with pytest.raises(ValueError):
        encode_distance(0)


@given(st.integers(1, 10_000))
def test_encode_distance_one_hot_and_idempotent(d):
    v = encode_distance(d)
    assert v.sum() == 1 and set(np.unique(v)) <= {0.0, 1.0}
    np.testing.assert_array_equal(encode_distance(int(np.argmax(v)) + 1), v)


def _brute_force_pairs(d: Dialogue):
    out = []
    for i in range(len(d.turns)):
        for j in range(len(d.turns)):
            ti, tj = d.turns[i], d.turns[j]
            if j > i and ti.label == Q and tj.label == NQ and ti.role != tj.role:
                out.append((i, j))
    return sorted(out, key=lambda p: (p[1], p[0]))


def test_candidate_pairs_match_brute_force_1000_dialogues():
    rng = np.random.default_rng(7)
    for k in range(1000):
        d = random_dialogue(rng, f"d{k}")
        pairs = build_candidate_pairs(d)
        assert [(p.q_index, p.nq_index) for p in pairs] == _brute_force_pairs(d)
        assert sum(p.gold for p in pairs) == len(d.gold_pairs)
        for p in pairs:
            assert len(p.history) == p.distance - 1
            assert len(p.h_rq) + len(p.h_rnq) == p.distance - 1
            assert not set(p.h_rq) & set(p.h_rnq)
            merged = sorted(p.h_rq + p.h_rnq, key=lambda t: t.index)
            assert tuple(merged) == p.history
            assert p.gold == ((p.q_index, p.nq_index) in d.gold_pairs)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("AB"), st.sampled_from([Q, NQ])), min_size=2, max_size=14))
def test_pair_count_law(spec):
    turns = tuple(Turn(i, r, lab, ("w",), "w") for i, (r, lab) in enumerate(spec))
    d = validate_dialogue(Dialogue("h", turns, frozenset()))
    expected = sum(
        sum(1 for i in range(j) if spec[i][1] == Q and spec[i][0] != spec[j][0])
        for j in range(len(spec))
        if spec[j][1] == NQ
    )
    assert len(build_candidate_pairs(d)) == expected


def test_jsonl_round_trip(tmp_path, worked):
    path = tmp_path / "d.jsonl"
    save_dialogues([worked], path)
    (back,) = load_dialogues(path)
    assert back == worked


def test_qao_format_conversion():
    obj = {
        "id": "qa",
        "turns": [
            {"role": "P", "label": "Q", "text": "what now ?"},
            {"role": "D", "label": "QA", "text": "which one ? this one", "answers": None},
            {"role": "P", "label": "A", "text": "the red one", "answers": 1},
            {"role": "D", "label": "O", "text": "hmm"},
            {"role": "D", "label": "A", "text": "do this", "answers": 0},
        ],
    }
    d = dialogue_from_json(obj)
    assert [t.label for t in d.turns] == [Q, Q, NQ, NQ, NQ]
    assert d.gold_pairs == {(1, 2), (0, 4)}
    assert dialogue_from_json(dialogue_to_json(d)) == d


def test_malformed_line_reports_line_number(tmp_path, worked):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(dialogue_to_json(worked)) + "\n{not json\n")
    with pytest.raises(DialogueError, match=r":2:"):
        load_dialogues(path)
