import numpy as np
import pytest

from qamatch.dialogue import NQ, Q, Dialogue, Turn, make_dialogue, validate_dialogue
from qamatch.embeddings import Vocabulary, random_embeddings
from qamatch.model import ModelConfig, QAModel
from qamatch.numerics.rng import RandomSource

# The worked example: a parent (P) asks about a 4-month-old, the doctor (D)
# asks a clarifying question, then answers the original question three turns
# later. Indices are 0-based.
WORKED_TURNS = [
    ("P", Q, "boy 4 months tried a little yolk yesterday what is wrong ?"),
    ("D", NQ, "hello"),
    ("P", NQ, "hello"),
    ("D", Q, "is he four months old"),
    ("P", NQ, "yes"),
    ("D", NQ, "eat too early"),
    ("D", NQ, "not advise"),
    ("D", NQ, "difficult for digestion"),
]
WORKED_GOLD = {(0, 5), (0, 6), (0, 7), (3, 4)}


@pytest.fixture
def worked():
    return make_dialogue("worked", WORKED_TURNS, WORKED_GOLD)


def random_dialogue(rng: np.random.Generator, did="r", max_turns=12, words=("a", "b", "c", "d", "e")) -> Dialogue:
    """Two roles, random labels, gold pairs drawn among valid candidates (each NQ at most once)."""
    n = int(rng.integers(2, max_turns + 1))
    roles = rng.choice(["A", "B"], size=n)
    labels = rng.choice([Q, NQ], size=n, p=[0.4, 0.6])
    turns = tuple(
        Turn(i, str(roles[i]), str(labels[i]), tuple(rng.choice(words, size=int(rng.integers(1, 5)))), "")
        for i in range(n)
    )
    gold = set()
    for j in range(n):
        if labels[j] != NQ:
            continue
        qs = [i for i in range(j) if labels[i] == Q and roles[i] != roles[j]]
        if qs and rng.random() < 0.6:
            gold.add((int(rng.choice(qs)), j))
    return validate_dialogue(Dialogue(did, turns, frozenset(gold)))


@pytest.fixture
def small_vocab():
    return Vocabulary([f"w{i}" for i in range(12)] + ["a", "b", "c", "d", "e"])


def small_model(variant="HDM", h1=4, h2=8, dim=5, seed=0, vocab=None, scale=None, dropout=0.0):
    vocab = vocab or Vocabulary([f"w{i}" for i in range(12)] + ["a", "b", "c", "d", "e"])
    emb = random_embeddings(vocab, dim, RandomSource(seed, "emb"))
    cfg = ModelConfig(variant=variant, embedding_dim=dim, encoder_hidden=h1, match_hidden=h2, dropout=dropout)
    model = QAModel(cfg, emb, RandomSource(seed, "init"))
    if scale is not None:
        g = np.random.default_rng(seed + 1000)
        for p in model.parameters():
            p.value[...] = g.uniform(-scale, scale, size=p.shape)
    return model


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
