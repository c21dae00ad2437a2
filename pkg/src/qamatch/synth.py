"""Synthetic two-party dialogues with planted QA structure.

Every question carries a key token that its answers repeat. Dialogues are a
shuffled sequence of segments (roles ``P`` and ``D``):

``direct``       asker Q(k), other party answers with 1-2 turns A(k)
``chit``         a single unmatched remark
``incremental``  P Q0(k0); then 1-2 follow-up rounds [D Q(ki); P A(ki)];
                 then D A(k0) -- the final answer sits at distance 3 or 5
``reask``        P Q0(k); 1 or 3 chit turns; P re-asks Q(k); D A(k) -- the
                 answer belongs to the re-asked question, so (Q0, A) is a
                 negative pair that looks exactly like an incremental pair
                 from the question, answer and distance alone

Only the intervening history (a follow-up exchange versus a repeated
question) separates incremental answers from re-ask decoys.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dialogue import NQ, Q, Dialogue, Turn, validate_dialogue
from .numerics.rng import RandomSource

QUESTION_WORDS = ("what", "how", "why", "which", "when", "can")
CHIT_WORDS = ("hello", "thanks", "ok", "hmm", "sure")


class InfeasibleSpec(ValueError):
    pass


@dataclass
class SyntheticSpec:
    n_dialogues: int = 100
    min_turns: int = 8
    max_turns: int = 14
    vocab_size: int = 40
    n_keys: int = 30
    incremental_fraction: float = 0.5
    decoy_fraction: float = 1.0
    seed: int = 0

    def check(self) -> None:
        if self.n_dialogues < 0:
            raise InfeasibleSpec("n_dialogues must be >= 0")
        if self.min_turns < 2 or self.max_turns < self.min_turns:
            raise InfeasibleSpec(f"bad turn range [{self.min_turns}, {self.max_turns}]")
        if not (0.0 <= self.incremental_fraction <= 1.0 and 0.0 <= self.decoy_fraction <= 1.0):
            raise InfeasibleSpec("fractions must lie in [0, 1]")
        if self.incremental_fraction > 0 and self.max_turns < 4:
            raise InfeasibleSpec("incremental chains need at least 4 turns per dialogue")
        if self.incremental_fraction >= 1.0 and self.min_turns < 4:
            raise InfeasibleSpec("incremental fraction 1 needs min_turns >= 4")
        if self.vocab_size < 1:
            raise InfeasibleSpec("vocab_size must be >= 1")
        if self.n_keys < self.max_turns:
            raise InfeasibleSpec(f"n_keys must be >= max_turns ({self.max_turns}) so keys stay unique")


class _Builder:
    def __init__(self, spec: SyntheticSpec, rng: RandomSource):
        self.spec = spec
        self.rng = rng
        self.turns: list[tuple[str, str, list[str]]] = []
        self.gold: list[tuple[int, int]] = []
        self.keys = [f"k{i}" for i in rng.permutation(spec.n_keys)]

    def _fill(self, lo: int, hi: int) -> list[str]:
        n = int(self.rng.integers(lo, hi + 1))
        return [f"w{int(x)}" for x in self.rng.integers(0, self.spec.vocab_size, size=n)]

    def key(self) -> str:
        return self.keys.pop()

    def ask(self, role: str, key: str) -> int:
        qw = QUESTION_WORDS[int(self.rng.integers(len(QUESTION_WORDS)))]
        self.turns.append((role, Q, [qw] + self._fill(0, 2) + [key] + self._fill(0, 1) + ["?"]))
        return len(self.turns) - 1

    def answer(self, role: str, key: str, q: int) -> int:
        self.turns.append((role, NQ, self._fill(0, 2) + [key] + self._fill(1, 2)))
        j = len(self.turns) - 1
        self.gold.append((q, j))
        return j

    def chit(self, role: str) -> None:
        cw = CHIT_WORDS[int(self.rng.integers(len(CHIT_WORDS)))]
        self.turns.append((role, NQ, [cw] + self._fill(0, 2)))


def _other(role: str) -> str:
    return "D" if role == "P" else "P"


def _emit(b: _Builder, seg: tuple) -> None:
    kind = seg[0]
    if kind == "chit":
        b.chit(seg[1])
    elif kind == "direct":
        _, asker, n_ans = seg
        k = b.key()
        q = b.ask(asker, k)
        for _ in range(n_ans):
            b.answer(_other(asker), k, q)
    elif kind == "incremental":
        rounds = seg[1]
        k0 = b.key()
        q0 = b.ask("P", k0)
        for _ in range(rounds):
            k = b.key()
            b.answer("P", k, b.ask("D", k))
        b.answer("D", k0, q0)
    elif kind == "reask":
        gap = seg[1]
        k = b.key()
        b.ask("P", k)
        role = "D"
        for _ in range(gap):
            b.chit(role)
            role = _other(role)
        b.answer("D", k, b.ask("P", k))


_SIZE = {"chit": lambda s: 1, "direct": lambda s: 1 + s[2], "incremental": lambda s: 2 + 2 * s[1], "reask": lambda s: 3 + s[1]}


def generate_dialogue(did: str, spec: SyntheticSpec, rng: RandomSource) -> Dialogue:
    n = int(rng.integers(spec.min_turns, spec.max_turns + 1))
    segs: list[tuple] = []
    room = n
    if room >= 4 and rng.random() < spec.incremental_fraction:
        rounds = 2 if (room >= 6 and rng.random() < 0.3) else 1
        segs.append(("incremental", rounds))
        room -= _SIZE["incremental"](segs[-1])
    if room >= 4 and rng.random() < spec.decoy_fraction:
        gap = 3 if (room >= 6 and rng.random() < 0.3) else 1
        segs.append(("reask", gap))
        room -= _SIZE["reask"](segs[-1])
    while room > 0:
        r = rng.random()
        if room >= 2 and r < 0.75:
            n_ans = 2 if (room >= 3 and rng.random() < 0.4) else 1
            segs.append(("direct", "P" if rng.random() < 0.5 else "D", n_ans))
        else:
            segs.append(("chit", "P" if rng.random() < 0.5 else "D"))
        room -= _SIZE[segs[-1][0]](segs[-1])
    order = rng.permutation(len(segs))
    b = _Builder(spec, rng)
    for k in order:
        _emit(b, segs[int(k)])
    turns = tuple(Turn(i, r, lab, tuple(toks), " ".join(toks)) for i, (r, lab, toks) in enumerate(b.turns))
    return validate_dialogue(Dialogue(did, turns, frozenset(b.gold)))


def generate(spec: SyntheticSpec) -> list[Dialogue]:
    spec.check()
    rng = RandomSource(spec.seed, "synth")
    width = max(4, len(str(spec.n_dialogues)))
    return [generate_dialogue(f"synth-{spec.seed}-{i:0{width}d}", spec, rng) for i in range(spec.n_dialogues)]
