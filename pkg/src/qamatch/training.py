"""Mini-batch training with lr decay, early stopping and multi-seed averaging."""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .dialogue import CandidatePair, Dialogue, build_candidate_pairs
from .embeddings import Embeddings
from .evaluation import MetricsReport, evaluate, micro_prf, gold_map
from .matcher import MatchResult, match_dialogues
from .model import ModelConfig, QAModel
from .numerics import Adam, cross_entropy
from .numerics.rng import RandomSource

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    def __init__(self, epoch: int, msg: str):
        super().__init__(f"epoch {epoch}: {msg}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 0.001
    lr_decay: float = 0.95
    dropout: float = 0.3
    patience: int = 3
    max_epochs: int = 50
    batch_size: int = 32
    seeds: tuple[int, ...] = (1, 2, 3)
    monitor: str = "dev"  # or "train"
    eval_batch_size: int = 128

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.monitor not in ("dev", "train"):
            raise ValueError("monitor must be 'dev' or 'train'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.seeds = tuple(int(s) for s in self.seeds)


def lr_at(epoch: int, lr0: float, decay: float) -> float:
    """Learning rate for 0-based ``epoch``: lr0 * decay**epoch."""
    return lr0 * decay**epoch


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float | None
    dev_f1: float | None
    lr: float
    wall_time: float
    improved: bool = False


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


class EarlyStopping:
    """Stop once the monitored loss has not improved for ``patience`` updates."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch: int | None = None
        self.bad = 0
        self.epoch = -1

    def update(self, value: float) -> bool:
        self.epoch += 1
        if value < self.best:
            self.best, self.best_epoch, self.bad = value, self.epoch, 0
            return True
        self.bad += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad >= self.patience


def _pairs_of(dialogues: Iterable[Dialogue]) -> list[CandidatePair]:
    return [p for d in dialogues for p in build_candidate_pairs(d)]


def dataset_loss(model: QAModel, pairs: Sequence[CandidatePair], batch_size: int = 128) -> tuple[float, np.ndarray]:
    """Mean eval-mode cross-entropy over ``pairs`` and the match probabilities."""
    probs = np.empty(len(pairs))
    total = 0.0
    for s in range(0, len(pairs), batch_size):
        b = model.batch(pairs[s : s + batch_size])
        logits = model.forward(b)
        total += float(cross_entropy(logits, b.labels).value) * b.size
        z = logits.value - logits.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs[s : s + b.size] = e[:, 1] / e.sum(axis=1)
    return total / max(len(pairs), 1), probs


def train(
    model_config: ModelConfig,
    train_pairs: Sequence[CandidatePair],
    dev_dialogues: Sequence[Dialogue],
    train_config: TrainConfig,
    embeddings: Embeddings,
    seed: int = 1,
    checkpoint_path=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[QAModel, TrainLog]:
    """Train a scorer and return it with the parameters of its best epoch.

    The best epoch is the one with the lowest monitored loss (dev loss by
    default, or epoch-mean training loss). Training stops after
    ``patience`` epochs without improvement or at ``max_epochs``.
    """
    if not train_pairs:
        raise ValueError("empty training set")
    labels = {p.gold for p in train_pairs}
    if len(labels) < 2:
        warnings.warn(f"all training pairs have gold={labels.pop()}", RuntimeWarning, stacklevel=2)
    tc = train_config
    model_config.dropout = tc.dropout
    root = RandomSource(seed)
    model = QAModel(model_config, embeddings, root.child("init"))
    opt = Adam(model.parameters())
    shuffle_rng = root.child("shuffle")
    dropout_rng = root.child("dropout")
    dev_pairs = _pairs_of(dev_dialogues)
    if tc.monitor == "dev" and not dev_pairs:
        raise ValueError("dev monitoring needs at least one dev candidate pair")

    stopper = EarlyStopping(tc.patience)
    tlog = TrainLog()
    best_state = model.state_dict()
    pairs = list(train_pairs)
    n = len(pairs)
    for epoch in range(tc.max_epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, tc.lr, tc.lr_decay)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for s in range(0, n, tc.batch_size):
            chunk = [pairs[k] for k in order[s : s + tc.batch_size]]
            batch = model.batch(chunk)
            model.zero_grad()
            loss = model.loss(batch, training=True, rng=dropout_rng)
            lv = float(loss.value)
            if not math.isfinite(lv):
                raise NumericError(epoch, f"non-finite training loss {lv}")
            loss.backward()
            opt.step(lr)
            total += lv * batch.size
        train_loss = total / n

        dev_loss = dev_f1 = None
        if dev_pairs:
            dev_loss, probs = dataset_loss(model, dev_pairs, tc.eval_batch_size)
            if not math.isfinite(dev_loss):
                raise NumericError(epoch, f"non-finite dev loss {dev_loss}")
            preds = match_dialogues(dev_dialogues, dev_pairs, probs, model_config.classification_threshold)
            dev_f1 = micro_prf(preds, gold_map(dev_dialogues)).f1
        improved = stopper.update(dev_loss if tc.monitor == "dev" else train_loss)
        if improved:
            best_state = model.state_dict()
            tlog.best_epoch = epoch
            if checkpoint_path is not None:
                model.save(checkpoint_path, train=asdict(tc), seed=seed, best_epoch=epoch)
        rec = EpochRecord(epoch, train_loss, dev_loss, dev_f1, lr, time.perf_counter() - t0, improved)
        tlog.records.append(rec)
        log.info(
            "epoch %d lr %.6f train %.4f dev %s f1 %s%s", epoch, lr, train_loss,
            "-" if dev_loss is None else f"{dev_loss:.4f}", "-" if dev_f1 is None else f"{dev_f1:.4f}",
            " *" if improved else "",
        )
        if on_epoch:
            on_epoch(rec)
        if stopper.should_stop:
            tlog.stopped_early = True
            break
    model.load_state_dict(best_state)
    return model, tlog


def predict_dialogues(model: QAModel, dialogues: Sequence[Dialogue], batch_size: int = 128) -> dict[str, MatchResult]:
    pairs = _pairs_of(dialogues)
    probs = model.predict_proba(pairs, batch_size) if pairs else np.zeros(0)
    return match_dialogues(dialogues, pairs, probs, model.config.classification_threshold)


def train_and_evaluate(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_dialogues: Sequence[Dialogue],
    dev_dialogues: Sequence[Dialogue],
    test_dialogues: Sequence[Dialogue],
    embeddings: Embeddings,
    seed: int,
) -> tuple[MetricsReport, QAModel, TrainLog]:
    model, tlog = train(ModelConfig(**asdict(model_config)), _pairs_of(train_dialogues), dev_dialogues, train_config, embeddings, seed)
    return evaluate(predict_dialogues(model, test_dialogues), test_dialogues), model, tlog


@dataclass
class MultiSeedResult:
    per_seed: dict[int, MetricsReport]
    mean: dict[str, float]


def average_metrics(reports: Sequence[MetricsReport]) -> dict[str, float]:
    """Mean P/R/F1 and mean Acc per bucket (over the seeds where the bucket exists)."""
    if not reports:
        raise ValueError("nothing to average")
    out = {
        "precision": float(np.mean([r.precision for r in reports])),
        "recall": float(np.mean([r.recall for r in reports])),
        "f1": float(np.mean([r.f1 for r in reports])),
    }
    buckets = sorted({b for r in reports for b in r.acc_by_distance})
    for b in buckets:
        vals = [r.acc_by_distance[b] for r in reports if b in r.acc_by_distance]
        out[f"acc@{b}"] = float(np.mean(vals))
    return out


def run_multi_seed(run: Callable[[int], MetricsReport], seeds: Sequence[int]) -> MultiSeedResult:
    """Call ``run(seed)`` once per seed and average the resulting metrics."""
    if not seeds:
        raise ValueError("need at least one seed")
    per = {int(s): run(int(s)) for s in seeds}
    return MultiSeedResult(per, average_metrics([per[s] for s in sorted(per)]))
