"""Tokenization, vocabulary and skip-gram (negative sampling) word vectors."""

from __future__ import annotations

import json
import logging
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numerics import kernels
from .numerics.rng import RandomSource

log = logging.getLogger(__name__)

UNK = "<unk>"
PAD = "<pad>"
UNK_ID = 0
PAD_ID = 1
RESERVED = (UNK, PAD)


class Tokenizer:
    """``whitespace`` splits raw text; ``pretokenized`` refuses raw text.

    Languages that need segmentation are tokenized upstream and delivered
    with an explicit ``"tokens"`` list per turn.
    """

    MODES = ("whitespace", "pretokenized")

    def __init__(self, mode: str = "whitespace"):
        if mode not in self.MODES:
            raise ValueError(f"unknown tokenizer mode {mode!r}")
        self.mode = mode

    def __call__(self, text: str) -> list[str]:
        if self.mode == "pretokenized":
            raise ValueError("pretokenized mode needs explicit 'tokens' on every turn")
        return text.split()


class Vocabulary:
    def __init__(self, tokens: Sequence[str], min_count: int = 1, counts: dict[str, int] | None = None):
        self.itos: list[str] = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        self.min_count = min_count
        self.counts = dict(counts or {})

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def ids(self, tokens: Iterable[str]) -> np.ndarray:
        get = self.stoi.get
        return np.array([get(t, UNK_ID) for t in tokens], dtype=np.int64)


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 2) -> Vocabulary:
    """Ids ordered by descending frequency, ties broken by the token string."""
    counts: Counter[str] = Counter()
    n = 0
    for sent in corpus:
        counts.update(sent)
        n += 1
    if n == 0 or not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, min_count, {t: counts[t] for t in kept})


@dataclass
class SkipGramConfig:
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_count: int = 2
    seed: int = 0


@dataclass
class Embeddings:
    vocab: Vocabulary
    matrix: np.ndarray
    config: dict = field(default_factory=dict)
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup(self, token: str) -> np.ndarray:
        return self.matrix[self.vocab.id(token)]

    def save(self, path) -> None:
        """Text format: ``<|V|> <dim>`` header, then ``token v1 .. vdim`` per line.

        The training config goes to a JSON sidecar next to the file.
        """
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.vocab)} {self.dim}\n")
            for tok, row in zip(self.vocab.itos, self.matrix):
                fh.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")
        meta = {"config": self.config, "epoch_losses": self.epoch_losses, "kernel_backend": kernels.backend()}
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Embeddings":
        """Read the text format. Reserved rows are found by name in any position;
        a missing UNK row becomes the mean of all rows, a missing PAD row zeros."""
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}: bad header {header!r}")
            n, dim = int(header[0]), int(header[1])
            rows: dict[str, np.ndarray] = {}
            order: list[str] = []
            for lineno, line in enumerate(fh, 2):
                parts = line.rstrip("\n").split(" ")
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}:{lineno}: expected {dim} values")
                tok = parts[0]
                rows[tok] = np.array([float(x) for x in parts[1:]])
                if tok not in RESERVED:
                    order.append(tok)
        if len(rows) != n:
            log.warning("%s: header says %d rows, read %d", path, n, len(rows))
        vocab = Vocabulary(order)
        mat = np.zeros((len(vocab), dim))
        for i, tok in enumerate(vocab.itos[2:], 2):
            mat[i] = rows[tok]
        mat[UNK_ID] = rows[UNK] if UNK in rows else (mat[2:].mean(axis=0) if len(vocab) > 2 else 0.0)
        if PAD in rows:
            mat[PAD_ID] = rows[PAD]
        cfg = {}
        side = Path(str(path) + ".json")
        if side.exists():
            cfg = json.loads(side.read_text(encoding="utf-8")).get("config", {})
        return cls(vocab, mat, cfg)


def _finalize(w: np.ndarray) -> np.ndarray:
    out = w.copy()
    out[PAD_ID] = 0.0
    out[UNK_ID] = out[2:].mean(axis=0) if out.shape[0] > 2 else 0.0
    return out


def initial_matrix(vocab_size: int, dim: int, rng: RandomSource) -> np.ndarray:
    return rng.uniform(-0.5 / dim, 0.5 / dim, size=(vocab_size, dim))


def _training_pairs(sentences: list[np.ndarray], window: int, rng: RandomSource) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for ids in sentences:
        n = len(ids)
        if n < 2:
            continue
        spans = rng.integers(1, window + 1, size=n)  # reduced window per center
        for pos in range(n):
            b = spans[pos]
            lo, hi = max(0, pos - b), min(n, pos + b + 1)
            ctx = np.concatenate([ids[lo:pos], ids[pos + 1 : hi]])
            centers.append(np.full(len(ctx), ids[pos]))
            contexts.append(ctx)
    if not centers:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(centers).astype(np.int64), np.concatenate(contexts).astype(np.int64)


def train_skipgram(
    corpus: Sequence[Sequence[str]],
    config: SkipGramConfig | None = None,
    vocab: Vocabulary | None = None,
    rng: RandomSource | None = None,
) -> Embeddings:
    """Skip-gram with negative sampling, sequential SGD, linear lr decay.

    Noise words are drawn from the unigram distribution raised to 0.75.
    Out-of-vocabulary tokens are dropped from training windows. The UNK row
    of the result is the mean of all non-reserved rows; PAD is zero.
    """
    cfg = config or SkipGramConfig()
    rng = rng or RandomSource(cfg.seed, "skipgram")
    vocab = vocab or build_vocab(corpus, cfg.min_count)
    if sum(len(s) for s in corpus) <= cfg.window:
        warnings.warn("skip-gram corpus is shorter than the context window", RuntimeWarning, stacklevel=2)
    w_in = initial_matrix(len(vocab), cfg.dim, rng.child("init"))
    w_out = np.zeros_like(w_in)
    sentences = []
    for s in corpus:
        ids = vocab.ids(s)
        sentences.append(ids[ids >= 2])
    counts = np.zeros(len(vocab))
    for ids in sentences:
        np.add.at(counts, ids, 1.0)
    noise = counts**0.75
    noise = noise / noise.sum() if noise.sum() > 0 else None

    losses = []
    pair_rng = rng.child("pairs")
    # pair counts vary a little per epoch (random windows); decay against a fixed estimate
    est_total = None
    done = 0
    for _ in range(cfg.epochs):
        centers, contexts = _training_pairs(sentences, cfg.window, pair_rng)
        n = len(centers)
        if est_total is None:
            est_total = max(n * cfg.epochs, 1)
        if n == 0 or noise is None:
            losses.append(0.0)
            continue
        negs = pair_rng.choice(len(vocab), size=(n, cfg.negatives), p=noise).astype(np.int64)
        progress = (done + np.arange(n)) / est_total
        alphas = cfg.lr * np.maximum(1.0 - progress, 1e-4)
        losses.append(float(kernels.sgns_sweep(w_in, w_out, centers, contexts, negs, alphas)))
        done += n
        log.debug("skip-gram epoch %d loss %.5f", len(losses), losses[-1])
    return Embeddings(vocab, _finalize(w_in), {**asdict(cfg), "vocab_size": len(vocab)}, losses)


def random_embeddings(vocab: Vocabulary, dim: int, rng: RandomSource, scale: float = 1.0) -> Embeddings:
    """Untrained Gaussian vectors; handy for tests and ablations."""
    return Embeddings(vocab, _finalize(rng.generator.normal(0.0, scale, size=(len(vocab), dim))), {"random": True})
