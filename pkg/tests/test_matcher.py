import numpy as np
import pytest

from qamatch.dialogue import NQ, Q, build_candidate_pairs, is_candidate, make_dialogue
from qamatch.matcher import (
    GD_RULES,
    DistanceBaseline,
    MatchResult,
    _gd_claims,
    baseline_gd,
    distance_baseline_score,
    distance_baseline_train,
    greedy_match,
    load_predictions,
    run_rule,
    save_predictions,
)

from conftest import random_dialogue


@pytest.fixture
def four_q():
    # Q1 and Q3 by A, NQ at 4 by B; indices 0 and 2 are fillers
    return make_dialogue(
        "g", [("B", NQ, "x"), ("A", Q, "q1"), ("B", NQ, "y"), ("A", Q, "q3"), ("B", NQ, "answer")]
    )


def _probs(d, table):
    out = {}
    for p in build_candidate_pairs(d):
        out[(p.q_index, p.nq_index)] = table.get((p.q_index, p.nq_index), 0.0)
    return out


def test_greedy_threshold(four_q):
    res = greedy_match(four_q, _probs(four_q, {(1, 4): 0.4, (3, 4): 0.45}))
    assert res.pairs == set()


def test_greedy_max_probability(four_q):
    res = greedy_match(four_q, _probs(four_q, {(1, 4): 0.9, (3, 4): 0.6}))
    assert res.pairs == {(1, 4)}
    assert res.probs == {(1, 4): 0.9}


def test_greedy_tie_goes_to_nearest(four_q):
    assert greedy_match(four_q, _probs(four_q, {(1, 4): 0.8, (3, 4): 0.8})).pairs == {(3, 4)}


def test_greedy_strict_threshold(four_q):
    assert greedy_match(four_q, _probs(four_q, {(3, 4): 0.5})).pairs == set()


def test_greedy_with_callable_scorer(four_q):
    res = greedy_match(four_q, lambda p: 1.0 / p.distance)
    assert res.pairs == {(3, 4), (1, 2)}


def test_greedy_missing_score(four_q):
    with pytest.raises(KeyError):
        greedy_match(four_q, {})


def test_greedy_properties_random():
    rng = np.random.default_rng(11)
    for k in range(300):
        d = random_dialogue(rng, f"d{k}")
        probs = {(p.q_index, p.nq_index): float(rng.choice([0.2, 0.5, 0.51, 0.8, rng.random()])) for p in build_candidate_pairs(d)}
        res = greedy_match(d, probs)
        nqs = [j for _, j in res.pairs]
        assert len(nqs) == len(set(nqs))
        for i, j in res.pairs:
            assert is_candidate(d.turns, i, j)
            assert probs[(i, j)] > 0.5
            assert probs[(i, j)] == max(v for (a, b), v in probs.items() if b == j)


def test_worked_gd_rules(worked):
    for rule in ("gd1", "gdn", "gdn+j"):
        assert run_rule([worked], rule)["worked"].pairs == {(0, 1), (3, 4)}
    assert run_rule([worked], "gd1+j")["worked"].pairs == {(0, 1), (3, 4)}


def _naive_scan(d, multi, jump):
    """Independent re-statement of the scan rule, resolving multi-claims to the latest Q."""
    claims = {}
    T = d.turns
    for i in range(len(T)):
        if T[i].label != Q:
            continue
        j = i + 1
        matched = 0
        while j < len(T):
            if T[j].label == Q:
                break
            if T[j].role == T[i].role:
                if not jump:
                    break
            else:
                claims.setdefault(j, []).append(i)
                matched += 1
                if not multi:
                    break
            j += 1
    return {(max(qs), j) for j, qs in claims.items()}


def test_gd_matches_naive_oracle_1000_dialogues():
    rng = np.random.default_rng(21)
    dialogues = [random_dialogue(rng, f"d{k}") for k in range(1000)]
    for rule, (multi, jump) in GD_RULES.items():
        for d in dialogues:
            assert baseline_gd(d, multi, jump).pairs == _naive_scan(d, multi, jump), (rule, d.id)


def test_gd1_is_first_of_gdn():
    rng = np.random.default_rng(22)
    for k in range(500):
        d = random_dialogue(rng, f"d{k}")
        for jump in (False, True):
            one = _gd_claims(d, False, jump)
            many = _gd_claims(d, True, jump)
            for i, js in one.items():
                assert js == many[i][:1]


def test_gd_pairs_are_candidates():
    rng = np.random.default_rng(23)
    for k in range(300):
        d = random_dialogue(rng, f"d{k}")
        for multi, jump in GD_RULES.values():
            for i, j in baseline_gd(d, multi, jump, resolve=False).pairs:
                assert is_candidate(d.turns, i, j)


def test_unknown_rule():
    with pytest.raises(ValueError, match="unknown rule"):
        run_rule([], "gd2")


def _distance_pairs():
    rng = np.random.default_rng(0)
    pairs = []
    for k in range(40):
        d = random_dialogue(rng, f"d{k}", max_turns=14)
        pairs.extend(build_candidate_pairs(d))
    return pairs


def test_distance_baseline_depends_only_on_bucket():
    pairs = _distance_pairs()
    model = distance_baseline_train(pairs)
    by = {}
    for p in pairs:
        by.setdefault(min(p.distance, 10), set()).add(distance_baseline_score(model, p))
    assert all(len(v) == 1 for v in by.values())
    probs = model.bucket_probs()
    d10 = next(p for p in pairs if p.distance == 1)
    assert model.score(d10) == probs[0]


def test_distance_10_and_37_identical():
    model = DistanceBaseline().fit(_distance_pairs())
    d = make_dialogue("long", [("A", Q, "q")] + [("B", NQ, f"n{j}") for j in range(37)])
    by_dist = {p.distance: p for p in build_candidate_pairs(d)}
    assert distance_baseline_score(model, by_dist[10]) == distance_baseline_score(model, by_dist[37])
    assert distance_baseline_score(model, by_dist[9]) != distance_baseline_score(model, by_dist[10])


def test_distance_baseline_learns_d1_positive():
    rows = []
    for k in range(30):
        turns = [("A", Q, "q")] + [("B", NQ, f"n{j}") for j in range(6)]
        d = make_dialogue(f"x{k}", turns, {(0, 1)})
        rows.extend(build_candidate_pairs(d))
    model = DistanceBaseline().fit(rows)
    probs = model.bucket_probs()
    assert probs[0] > 0.5 > probs[4]


def test_predictions_round_trip(tmp_path):
    res = {
        "a": MatchResult("a", {(0, 1), (2, 5)}, {(0, 1): 0.75, (2, 5): 0.6}),
        "b": MatchResult("b", set(), None),
    }
    path = tmp_path / "p.jsonl"
    save_predictions(res, path)
    back = load_predictions(path)
    assert back["a"].pairs == res["a"].pairs and back["a"].probs == res["a"].probs
    assert back["b"].pairs == set() and back["b"].probs is None


def test_bad_prediction_line(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"id": "a", "pairs": [[0, 1]]}\n{"pairs": []}\n')
    with pytest.raises(ValueError, match=":2:"):
        load_predictions(path)
