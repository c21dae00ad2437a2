"""Turning pair scores into QA matches, plus the rule-based and distance baselines."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .dialogue import DISTANCE_DIMS, CandidatePair, Dialogue, Pair, build_candidate_pairs, distance_bucket
from .numerics import Parameter, Tensor

Scorer = Callable[[CandidatePair], float]

GD_RULES = {
    "gd1": (False, False),
    "gdn": (True, False),
    "gd1+j": (False, True),
    "gdn+j": (True, True),
}


@dataclass
class MatchResult:
    dialogue_id: str
    pairs: set[Pair] = field(default_factory=set)
    probs: dict[Pair, float] | None = None

    def to_json(self) -> dict:
        ordered = sorted(self.pairs, key=lambda p: (p[1], p[0]))
        out: dict = {"id": self.dialogue_id, "pairs": [list(p) for p in ordered]}
        if self.probs is not None:
            out["probs"] = [self.probs[p] for p in ordered]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MatchResult":
        pairs = [tuple(int(x) for x in p) for p in obj.get("pairs", [])]
        probs = None
        if obj.get("probs") is not None:
            if len(obj["probs"]) != len(pairs):
                raise ValueError(f"{obj.get('id')}: 'probs' and 'pairs' differ in length")
            probs = {p: float(v) for p, v in zip(pairs, obj["probs"])}
        return cls(str(obj["id"]), set(pairs), probs)


def greedy_match(
    dialogue: Dialogue,
    scorer: Scorer | Mapping[Pair, float],
    threshold: float = 0.5,
) -> MatchResult:
    """Match every NQ to its highest-probability earlier Q if that probability
    is strictly above ``threshold``. Ties go to the nearest Q."""
    get = scorer.get if isinstance(scorer, Mapping) else None
    best: dict[int, tuple[float, int]] = {}
    for p in build_candidate_pairs(dialogue):
        prob = get((p.q_index, p.nq_index)) if get else scorer(p)
        if prob is None:
            raise KeyError(f"{dialogue.id}: no score for pair ({p.q_index}, {p.nq_index})")
        cur = best.get(p.nq_index)
        # candidates arrive in increasing q_index, so >= keeps the nearest on ties
        if cur is None or prob >= cur[0]:
            best[p.nq_index] = (float(prob), p.q_index)
    res = MatchResult(dialogue.id, set(), {})
    for j, (prob, i) in best.items():
        if prob > threshold:
            res.pairs.add((i, j))
            res.probs[(i, j)] = prob
    return res


def match_dialogues(
    dialogues: Sequence[Dialogue], pairs: Sequence[CandidatePair], probs: np.ndarray, threshold: float = 0.5
) -> dict[str, MatchResult]:
    """Greedy matching for many dialogues from a flat array of pair probabilities."""
    table: dict[str, dict[Pair, float]] = {d.id: {} for d in dialogues}
    for p, pr in zip(pairs, probs):
        table[p.dialogue_id][(p.q_index, p.nq_index)] = float(pr)
    return {d.id: greedy_match(d, table[d.id], threshold) for d in dialogues}


def _gd_claims(dialogue: Dialogue, multi: bool, jump: bool) -> dict[int, list[int]]:
    turns = dialogue.turns
    claims: dict[int, list[int]] = {}
    for i, q in enumerate(turns):
        if not q.is_question:
            continue
        got: list[int] = []
        for j in range(i + 1, len(turns)):
            t = turns[j]
            if t.is_question:
                break
            if t.role == q.role:
                if jump:
                    continue
                break
            got.append(j)
            if not multi:
                break
        claims[i] = got
    return claims


def baseline_gd(dialogue: Dialogue, multi: bool, jump: bool, resolve: bool = True) -> MatchResult:
    """Greedy scan baselines (GD1, GDN, GD1+J, GDN+J).

    From each question, walk forward: an NQ by the other party is claimed
    (once for GD1, repeatedly for GDN); any question ends the walk; an NQ by
    the asker ends it too unless ``jump`` skips over it. With ``resolve``, an
    NQ claimed by several questions keeps only the latest one.
    """
    claims = _gd_claims(dialogue, multi, jump)
    owner: dict[int, int] = {}
    pairs: set[Pair] = set()
    for i in sorted(claims):
        for j in claims[i]:
            if resolve:
                owner[j] = i  # later questions overwrite earlier claims
            else:
                pairs.add((i, j))
    if resolve:
        pairs = {(i, j) for j, i in owner.items()}
    return MatchResult(dialogue.id, pairs, None)


def run_rule(dialogues: Iterable[Dialogue], rule: str, resolve: bool = True) -> dict[str, MatchResult]:
    try:
        multi, jump = GD_RULES[rule.lower()]
    except KeyError:
        raise ValueError(f"unknown rule {rule!r}; choose from {sorted(GD_RULES)}") from None
    return {d.id: baseline_gd(d, multi, jump, resolve) for d in dialogues}


class DistanceBaseline:
    """Affine layer over the one-hot distance bucket, trained with cross-entropy."""

    def __init__(self, dims: int = DISTANCE_DIMS):
        self.dims = dims
        self.W = Parameter(np.zeros((dims, 2)), "W_fc")
        self.b = Parameter(np.zeros(2), "b_fc")

    def _onehot(self, distances) -> np.ndarray:
        x = np.zeros((len(distances), self.dims))
        for r, d in enumerate(distances):
            x[r, distance_bucket(int(d), self.dims) - 1] = 1.0
        return x

    def fit(self, pairs: Sequence[CandidatePair], steps: int = 500, lr: float = 0.05) -> "DistanceBaseline":
        if not pairs:
            raise ValueError("distance baseline needs at least one training pair")
        x = Tensor(self._onehot([p.distance for p in pairs]))
        y = np.array([int(p.gold) for p in pairs])
        opt = nx.Adam([self.W, self.b])
        for _ in range(steps):
            opt.zero_grad()
            nx.cross_entropy(x @ self.W + self.b, y).backward()
            opt.step(lr)
        return self

    def bucket_probs(self) -> np.ndarray:
        """P(match) for buckets 1..dims."""
        z = np.eye(self.dims) @ self.W.value + self.b.value
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e[:, 1] / e.sum(axis=1)

    def score(self, pair: CandidatePair) -> float:
        return float(self.bucket_probs()[distance_bucket(pair.distance, self.dims) - 1])

    def predict_proba(self, pairs: Sequence[CandidatePair]) -> np.ndarray:
        table = self.bucket_probs()
        return np.array([table[distance_bucket(p.distance, self.dims) - 1] for p in pairs])


def distance_baseline_train(pairs: Sequence[CandidatePair], **kw) -> DistanceBaseline:
    return DistanceBaseline().fit(pairs, **kw)


def distance_baseline_score(model: DistanceBaseline, pair: CandidatePair) -> float:
    return model.score(pair)


def save_predictions(results: Mapping[str, MatchResult] | Iterable[MatchResult], path) -> None:
    items = results.values() if isinstance(results, Mapping) else results
    with open(Path(path), "w", encoding="utf-8") as fh:
        for r in items:
            fh.write(json.dumps(r.to_json()) + "\n")


def load_predictions(path) -> dict[str, MatchResult]:
    out = {}
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = MatchResult.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad prediction record ({exc})") from None
            out[r.dialogue_id] = r
    return out
