"""Labeled two-party dialogues and Q-NQ candidate pair construction.

Indices are 0-based everywhere in code and files. Figures that label turns
``U1, U2, ...`` are 1-based, so ``U(k)`` is turn ``k - 1`` here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

Q = "Q"
NQ = "NQ"
LABELS = (Q, NQ)
DISTANCE_DIMS = 10

Pair = tuple[int, int]
Tokenizer = Callable[[str], list[str]]


class DialogueError(ValueError):
    """A dialogue violates a structural invariant."""


@dataclass(frozen=True)
class Turn:
    index: int
    role: str
    label: str
    tokens: tuple[str, ...]
    text: str = ""

    @property
    def is_question(self) -> bool:
        return self.label == Q


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Turn, ...]
    gold_pairs: frozenset[Pair] = field(default_factory=frozenset)

    @property
    def roles(self) -> list[str]:
        seen: list[str] = []
        for t in self.turns:
            if t.role not in seen:
                seen.append(t.role)
        return seen

    def __len__(self) -> int:
        return len(self.turns)


@dataclass(frozen=True)
class CandidatePair:
    """One (Q, NQ) instance with its distance and role-partitioned history.

    ``turns`` is the full turn sequence of the owning dialogue; variants that
    look outside the Q..NQ window (all turns before Q or before NQ) need it.
    """

    dialogue_id: str
    q_index: int
    nq_index: int
    gold: bool
    turns: tuple[Turn, ...] = field(repr=False, compare=False)

    @property
    def distance(self) -> int:
        return self.nq_index - self.q_index

    @property
    def q_turn(self) -> Turn:
        return self.turns[self.q_index]

    @property
    def nq_turn(self) -> Turn:
        return self.turns[self.nq_index]

    @property
    def history(self) -> tuple[Turn, ...]:
        return self.turns[self.q_index + 1 : self.nq_index]

    @property
    def h_rq(self) -> tuple[Turn, ...]:
        role = self.q_turn.role
        return tuple(t for t in self.history if t.role == role)

    @property
    def h_rnq(self) -> tuple[Turn, ...]:
        role = self.nq_turn.role
        return tuple(t for t in self.history if t.role == role)

    def to_json(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "q_index": self.q_index,
            "nq_index": self.nq_index,
            "distance": self.distance,
            "history": [t.index for t in self.history],
            "h_rq": [t.index for t in self.h_rq],
            "h_rnq": [t.index for t in self.h_rnq],
            "gold": self.gold,
        }


def whitespace_tokenize(text: str) -> list[str]:
    return text.split()


def validate_dialogue(raw: Dialogue) -> Dialogue:
    """Return ``raw`` unchanged if every dialogue invariant holds.

    Raises :class:`DialogueError` naming the first violation and the turn
    indices involved.
    """
    did = raw.id
    turns = raw.turns
    if len(turns) < 2:
        raise DialogueError(f"{did}: dialogue needs at least 2 turns, got {len(turns)}")
    for pos, t in enumerate(turns):
        if t.index != pos:
            raise DialogueError(f"{did}: turn at position {pos} carries index {t.index}")
        if t.label not in LABELS:
            raise DialogueError(f"{did}: turn {pos} has label {t.label!r}, expected Q or NQ")
        if not t.tokens:
            raise DialogueError(f"{did}: turn {pos} has no tokens")
    roles = raw.roles
    if len(roles) > 2:
        raise DialogueError(f"{did}: more than two roles {roles}")
    answered: dict[int, int] = {}
    for i, j in sorted(raw.gold_pairs):
        n = len(turns)
        if not (0 <= i < n and 0 <= j < n):
            raise DialogueError(f"{did}: gold pair ({i}, {j}) out of range for {n} turns")
        if j <= i:
            raise DialogueError(f"{did}: gold pair ({i}, {j}): answer precedes question")
        if turns[i].label != Q:
            raise DialogueError(f"{did}: gold pair ({i}, {j}): turn {i} is not a question")
        if turns[j].label != NQ:
            raise DialogueError(f"{did}: gold pair ({i}, {j}): turn {j} is not a non-question")
        if turns[i].role == turns[j].role:
            raise DialogueError(
                f"{did}: gold pair ({i}, {j}): both turns uttered by {turns[i].role!r}"
            )
        if j in answered:
            raise DialogueError(
                f"{did}: turn {j} answers both question {answered[j]} and question {i}"
            )
        answered[j] = i
    return raw


def is_candidate(turns: Sequence[Turn], i: int, j: int) -> bool:
    return (
        j > i
        and turns[i].label == Q
        and turns[j].label == NQ
        and turns[i].role != turns[j].role
    )


def build_candidate_pairs(d: Dialogue) -> list[CandidatePair]:
    """Pair every NQ with every earlier Q uttered by the other party.

    Pairs are ordered by NQ index, then Q index.
    """
    pairs = []
    turns = d.turns
    for j, nq in enumerate(turns):
        if nq.label != NQ:
            continue
        for i in range(j):
            if turns[i].label == Q and turns[i].role != nq.role:
                pairs.append(CandidatePair(d.id, i, j, (i, j) in d.gold_pairs, turns))
    return pairs


def encode_distance(distance: int, dims: int = DISTANCE_DIMS) -> np.ndarray:
    """One-hot distance bucket; position ``min(distance, dims)`` (1-based) is hot."""
    if distance < 1:
        raise ValueError(f"distance must be >= 1, got {distance}")
    v = np.zeros(dims)
    v[min(distance, dims) - 1] = 1.0
    return v


def distance_bucket(distance: int, dims: int = DISTANCE_DIMS) -> int:
    if distance < 1:
        raise ValueError(f"distance must be >= 1, got {distance}")
    return min(distance, dims)


# --------------------------------------------------------------------------
# JSONL I/O
# --------------------------------------------------------------------------


def dialogue_from_json(obj: dict, tokenize: Tokenizer = whitespace_tokenize) -> Dialogue:
    """Parse either the Q/NQ format or the Q/A/O back-reference format.

    The Q/A/O format labels every turn ``Q``, ``A`` or ``O`` and each ``A``
    turn carries ``"answers": <question index>``. Turns labeled ``QA`` (both
    a question and an answer) are kept as plain questions.
    """
    try:
        did = str(obj["id"])
        raw_turns = obj["turns"]
    except (KeyError, TypeError) as exc:
        raise DialogueError(f"missing field {exc}") from None
    labels = {t.get("label") for t in raw_turns}
    qao = bool(labels & {"A", "O", "QA"}) or any("answers" in t for t in raw_turns)
    turns = []
    gold: set[Pair] = set()
    for pos, t in enumerate(raw_turns):
        label = t.get("label")
        if "tokens" in t:
            tokens = tuple(str(w) for w in t["tokens"])
            text = t.get("text", " ".join(tokens))
        else:
            text = t.get("text", "")
            tokens = tuple(tokenize(text))
        if qao:
            if label in ("Q", "QA"):
                label = Q
            elif label == "A":
                ref = t.get("answers")
                if isinstance(ref, list):
                    if len(ref) != 1:
                        raise DialogueError(f"{did}: turn {pos} answers {len(ref)} questions")
                    ref = ref[0]
                if ref is None:
                    raise DialogueError(f"{did}: answer turn {pos} has no 'answers' reference")
                gold.add((int(ref), pos))
                label = NQ
            elif label == "O":
                label = NQ
        turns.append(Turn(pos, str(t.get("role")), label, tokens, text))
    if not qao:
        for p in obj.get("gold_pairs", []):
            if len(p) != 2:
                raise DialogueError(f"{did}: malformed gold pair {p!r}")
            gold.add((int(p[0]), int(p[1])))
    return Dialogue(did, tuple(turns), frozenset(gold))


def dialogue_to_json(d: Dialogue) -> dict:
    return {
        "id": d.id,
        "turns": [{"role": t.role, "label": t.label, "text": t.text or " ".join(t.tokens)} for t in d.turns],
        "gold_pairs": [list(p) for p in sorted(d.gold_pairs)],
    }


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DialogueError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None


def load_dialogues(
    path: str | Path, tokenize: Tokenizer = whitespace_tokenize, validate: bool = True
) -> list[Dialogue]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            d = dialogue_from_json(obj, tokenize)
            out.append(validate_dialogue(d) if validate else d)
        except DialogueError as exc:
            raise DialogueError(f"{path}:{lineno}: {exc}") from None
    return out


def save_dialogues(dialogues: Iterable[Dialogue], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(dialogue_to_json(d), ensure_ascii=False) + "\n")


def make_dialogue(
    did: str,
    turns: Sequence[tuple[str, str, str]],
    gold_pairs: Iterable[Pair] = (),
    tokenize: Tokenizer = whitespace_tokenize,
) -> Dialogue:
    """Build a validated dialogue from ``(role, label, text)`` triples."""
    ts = tuple(Turn(i, r, lab, tuple(tokenize(txt)), txt) for i, (r, lab, txt) in enumerate(turns))
    return validate_dialogue(Dialogue(did, ts, frozenset(tuple(p) for p in gold_pairs)))
