"""Pair scorer: sentence encoder, mutual attention, match-LSTM, prediction layer.

All variants share one network definition; the variant decides which history
turns each side attends to and whether the distance one-hot reaches the
prediction layer.

======  ===========================================  ========
variant Q attends / NQ attends                       distance
======  ===========================================  ========
HDM     H_RNQ / H_RQ (turns between Q and NQ)        yes
HTY     as HDM                                       no
DIS     nothing (context vectors are zero)           yes
MLSTM   nothing                                      no
NM      H_RQ / H_RNQ                                 yes
ID      H_RQ + H_RNQ in turn order, both sides       yes
QH      as HDM over all turns before Q               yes
AH      as HDM over all turns before NQ              yes
======  ===========================================  ========
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import numerics as nx
from .dialogue import CandidatePair, Turn, encode_distance
from .embeddings import PAD_ID, Embeddings, Vocabulary
from .numerics import Parameter, Tensor
from .numerics.rng import RandomSource

VARIANTS = ("HDM", "DIS", "HTY", "QH", "AH", "NM", "ID", "MLSTM")
_NO_HISTORY = {"DIS", "MLSTM"}
_NO_DISTANCE = {"HTY", "MLSTM"}


class CheckpointMismatch(ValueError):
    """A checkpoint does not fit the requested model configuration."""


@dataclass
class ModelConfig:
    variant: str = "HDM"
    embedding_dim: int = 100
    encoder_hidden: int = 128
    match_hidden: int = 256
    dropout: float = 0.3
    distance_dims: int = 10
    classification_threshold: float = 0.5

    def __post_init__(self):
        self.variant = self.variant.upper()
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def uses_history(self) -> bool:
        return self.variant not in _NO_HISTORY

    @property
    def uses_distance(self) -> bool:
        return self.variant not in _NO_DISTANCE

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class EncodedTurn:
    all_states: Tensor  # (n_words, encoder_hidden)
    last_state: Tensor  # (encoder_hidden,)


@dataclass
class PairScore:
    probability: float
    logits: np.ndarray


def attended_turns(pair: CandidatePair, variant: str) -> tuple[list[int], list[int]]:
    """Turn indices the Q side and the NQ side attend to, in dialogue order."""
    variant = variant.upper()
    if variant in _NO_HISTORY:
        return [], []
    q, nq = pair.q_index, pair.nq_index
    if variant == "QH":
        hist = range(0, q)
    elif variant == "AH":
        hist = range(0, nq)
    else:
        hist = range(q + 1, nq)
    turns = pair.turns
    rq, rnq = turns[q].role, turns[nq].role
    h_rq = [t for t in hist if turns[t].role == rq]
    h_rnq = [t for t in hist if turns[t].role == rnq]
    if variant == "NM":
        return h_rq, h_rnq
    if variant == "ID":
        return list(hist), list(hist)
    return h_rnq, h_rq


@dataclass
class Batch:
    token_ids: np.ndarray  # (U, T) ids of the unique turns in the batch
    token_mask: np.ndarray  # (U, T)
    q_turn: np.ndarray  # (B,) row into token_ids
    nq_turn: np.ndarray
    q_hist: np.ndarray  # (B, Kq) rows attended by the Q side
    q_hist_mask: np.ndarray
    nq_hist: np.ndarray
    nq_hist_mask: np.ndarray
    distance: np.ndarray  # (B,)
    labels: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return len(self.q_turn)


def make_batch(pairs: Sequence[CandidatePair], variant: str, vocab: Vocabulary) -> Batch:
    rows: dict[tuple[str, int], int] = {}
    seqs: list[np.ndarray] = []

    def row(p: CandidatePair, k: int) -> int:
        key = (p.dialogue_id, k)
        r = rows.get(key)
        if r is None:
            t = p.turns[k]
            if not t.tokens:
                raise ValueError(f"{p.dialogue_id}: turn {k} has no tokens")
            r = rows[key] = len(seqs)
            seqs.append(vocab.ids(t.tokens))
        return r

    B = len(pairs)
    q_turn = np.empty(B, dtype=np.intp)
    nq_turn = np.empty(B, dtype=np.intp)
    q_sets, nq_sets = [], []
    for b, p in enumerate(pairs):
        q_turn[b] = row(p, p.q_index)
        nq_turn[b] = row(p, p.nq_index)
        qs, ns = attended_turns(p, variant)
        q_sets.append([row(p, k) for k in qs])
        nq_sets.append([row(p, k) for k in ns])

    T = max(len(s) for s in seqs)
    ids = np.full((len(seqs), T), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), T))
    for r, s in enumerate(seqs):
        ids[r, : len(s)] = s
        mask[r, : len(s)] = 1.0

    def pad(sets):
        K = max((len(s) for s in sets), default=0)
        idx = np.zeros((B, K), dtype=np.intp)
        m = np.zeros((B, K))
        for b, s in enumerate(sets):
            idx[b, : len(s)] = s
            m[b, : len(s)] = 1.0
        return idx, m

    qh, qm = pad(q_sets)
    nh, nm = pad(nq_sets)
    return Batch(
        ids, mask, q_turn, nq_turn, qh, qm, nh, nm,
        np.array([p.distance for p in pairs], dtype=np.int64),
        np.array([int(p.gold) for p in pairs], dtype=np.int64),
    )


class QAModel:
    def __init__(self, config: ModelConfig, embeddings: Embeddings, rng: RandomSource | None = None):
        if embeddings.dim != config.embedding_dim:
            raise ValueError(f"embedding dim {embeddings.dim} != config {config.embedding_dim}")
        self.config = config
        self.embeddings = embeddings
        self.params: dict[str, Parameter] = {}
        self._init_params(rng or RandomSource(0, "init"))

    # ------------------------------------------------------------------ setup

    def _init_params(self, rng: RandomSource) -> None:
        cfg = self.config
        E, H1, H2 = cfg.embedding_dim, cfg.encoder_hidden, cfg.match_hidden

        def weight(name, shape):
            k = 1.0 / np.sqrt(shape[0])
            self.params[name] = Parameter(rng.uniform(-k, k, size=shape), name)

        def lstm(prefix, d_in, h):
            weight(f"{prefix}.W", (d_in + h, 4 * h))
            b = np.zeros(4 * h)
            b[h : 2 * h] = 1.0  # forget gate
            self.params[f"{prefix}.b"] = Parameter(b, f"{prefix}.b")

        lstm("encoder", E, H1)
        if cfg.uses_history:
            for side, own in (("mutual_q", "W_Q"), ("mutual_nq", "W_NQ")):
                weight(f"{side}.{own}", (H1, H1))
                weight(f"{side}.W_H", (H1, H1))
                weight(f"{side}.v", (H1,))
        lstm("fusion", 2 * H1, H2)
        weight("match.W_NQ", (H2, H2))
        weight("match.W_Q", (H2, H2))
        weight("match.W_p", (H2, H2))
        weight("match.v", (H2,))
        lstm("match_lstm", 2 * H2, H2)
        fc_in = H2 + (cfg.distance_dims if cfg.uses_distance else 0)
        weight("W_fc", (fc_in, 2))
        self.params["b_fc"] = Parameter(np.zeros(2), "b_fc")

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) ^ set(state)
            raise CheckpointMismatch(f"parameter sets differ: {sorted(missing)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise CheckpointMismatch(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].value[...] = v

    # ---------------------------------------------------------- building blocks

    def _encode(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        x = Tensor(self.embeddings.matrix[ids])  # frozen embeddings
        P = self.params
        return nx.lstm_sequence(x, mask, P["encoder.W"], P["encoder.b"])

    def _attend(self, queries: Tensor, keys: Tensor, key_mask: np.ndarray, side: str):
        """Additive attention of each query row over a (possibly empty) key set.

        queries (B, N, H), keys (B, K, H), key_mask (B, K). Returns the pooled
        context (B, N, H) and the weights (B, N, K).
        """
        B, N, H = queries.shape
        K = keys.shape[1]
        if K == 0:
            return Tensor(np.zeros((B, N, H))), np.zeros((B, N, 0))
        P = self.params
        own = P[f"{side}.W_Q"] if side == "mutual_q" else P[f"{side}.W_NQ"]
        A = own.shape[1]
        qa = nx.reshape(queries @ own, (B, N, 1, A))
        ka = nx.reshape(keys @ P[f"{side}.W_H"], (B, 1, K, A))
        s = nx.reshape(nx.tanh(qa + ka) @ nx.reshape(P[f"{side}.v"], (A, 1)), (B, N, K))
        a = nx.masked_softmax(s, key_mask[:, None, :])
        return a @ keys, a.value

    def _match(self, fq: Tensor, q_mask: np.ndarray, fp: Tensor, nq_len: np.ndarray) -> Tensor:
        """Word-by-word match-LSTM over the NQ words; returns the final state p_M."""
        P = self.params
        B, T, H2 = fq.shape
        A = P["match.W_Q"].shape[1]
        wq = fq @ P["match.W_Q"]
        v = nx.reshape(P["match.v"], (A, 1))
        p = Tensor(np.zeros((B, H2)))
        c = Tensor(np.zeros((B, H2)))
        for i in range(int(nq_len.max())):
            f_i = fp[:, i]
            x = f_i @ P["match.W_NQ"] + p @ P["match.W_p"]
            s = nx.reshape(nx.tanh(wq + nx.reshape(x, (B, 1, A))) @ v, (B, T))
            a = nx.masked_softmax(s, q_mask)
            ctx = nx.reshape(nx.reshape(a, (B, 1, T)) @ fq, (B, H2))
            keep = (i < nq_len).astype(np.float64)
            state = nx.lstm_step(nx.concat([f_i, ctx]), p, c, P["match_lstm.W"], P["match_lstm.b"], keep)
            p, c = state[0], state[1]
        return p

    def _logits(self, p_m: Tensor, distance: np.ndarray) -> Tensor:
        P = self.params
        z = p_m
        if self.config.uses_distance:
            d = np.stack([encode_distance(int(x), self.config.distance_dims) for x in distance])
            z = nx.concat([p_m, Tensor(d)])
        return z @ P["W_fc"] + P["b_fc"]

    # ----------------------------------------------------------------- forward

    def forward(self, batch: Batch, training: bool = False, rng: RandomSource | None = None) -> Tensor:
        """Logits (B, 2) for a batch; class 1 means "is a QA pair"."""
        cfg = self.config
        p_drop = cfg.dropout if training else 0.0
        B = batch.size
        S = self._encode(batch.token_ids, batch.token_mask)
        S = nx.dropout(S, p_drop, training, rng)
        hq = nx.take(S, batch.q_turn)
        hp = nx.take(S, batch.nq_turn)
        q_mask = batch.token_mask[batch.q_turn]
        p_mask = batch.token_mask[batch.nq_turn]
        if cfg.uses_history:
            last = S[:, -1]
            cq, _ = self._attend(hq, nx.take(last, batch.q_hist), batch.q_hist_mask, "mutual_q")
            cp, _ = self._attend(hp, nx.take(last, batch.nq_hist), batch.nq_hist_mask, "mutual_nq")
        else:
            cq = cp = Tensor(np.zeros(hq.shape))
        u = nx.concat([nx.concat([hq, cq]), nx.concat([hp, cp])], axis=0)
        u = nx.dropout(u, p_drop, training, rng)
        F = nx.lstm_sequence(u, np.concatenate([q_mask, p_mask]), self.params["fusion.W"], self.params["fusion.b"])
        p_m = self._match(F[:B], q_mask, F[B:], p_mask.sum(axis=1).astype(np.int64))
        return self._logits(p_m, batch.distance)

    def loss(self, batch: Batch, training: bool = False, rng: RandomSource | None = None) -> Tensor:
        return nx.cross_entropy(self.forward(batch, training, rng), batch.labels)

    def batch(self, pairs: Sequence[CandidatePair]) -> Batch:
        return make_batch(pairs, self.config.variant, self.embeddings.vocab)

    def predict_proba(self, pairs: Sequence[CandidatePair], batch_size: int = 64) -> np.ndarray:
        out = np.empty(len(pairs))
        for s in range(0, len(pairs), batch_size):
            chunk = pairs[s : s + batch_size]
            out[s : s + len(chunk)] = nx.softmax(self.forward(self.batch(chunk))).value[:, 1]
        return out

    def score_pair(self, pair: CandidatePair) -> PairScore:
        logits = self.forward(self.batch([pair])).value[0]
        return PairScore(float(nx.softmax(logits).value[1]), logits)

    # -------------------------------------------------- single-instance API

    def encode_sentence(self, turn: Turn | Sequence[str]) -> EncodedTurn:
        tokens = turn.tokens if isinstance(turn, Turn) else tuple(turn)
        if not tokens:
            raise ValueError("cannot encode an empty turn")
        ids = self.embeddings.vocab.ids(tokens)[None, :]
        S = self._encode(ids, np.ones(ids.shape))
        states = S[0]
        return EncodedTurn(states, states[-1])

    def mutual_attention(
        self,
        q: EncodedTurn,
        nq: EncodedTurn,
        h_rq: Sequence[Tensor],
        h_rnq: Sequence[Tensor],
        history: Sequence[Tensor] | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Q' (N, 2H) and NQ' (M, 2H), wired by this model's variant.

        ``h_rq``/``h_rnq`` are last-state vectors of the partitioned history.
        ``history`` (the merged, ordered history) is only read by ID; without
        it ID attends to ``h_rq + h_rnq``.
        """
        v = self.config.variant
        if v in _NO_HISTORY:
            q_keys, nq_keys = [], []
        elif v == "NM":
            q_keys, nq_keys = list(h_rq), list(h_rnq)
        elif v == "ID":
            joint = list(history) if history is not None else list(h_rq) + list(h_rnq)
            q_keys, nq_keys = joint, joint
        else:
            q_keys, nq_keys = list(h_rnq), list(h_rq)
        return self._side(q.all_states, q_keys, "mutual_q"), self._side(nq.all_states, nq_keys, "mutual_nq")

    def _side(self, states: Tensor, keys: list[Tensor], side: str) -> Tensor:
        N, H = states.shape
        if not keys or not self.config.uses_history:
            return nx.concat([states, Tensor(np.zeros((N, H)))])
        kt = nx.reshape(nx.concat([nx.reshape(k, (1, H)) for k in keys], axis=0), (1, len(keys), H))
        c, _ = self._attend(nx.reshape(states, (1, N, H)), kt, np.ones((1, len(keys))), side)
        return nx.concat([states, nx.reshape(c, (N, H))])

    def attention_weights(self, pair: CandidatePair) -> tuple[np.ndarray, np.ndarray]:
        """Mutual-attention weights (Q side (N, Kq), NQ side (M, Knq)) for one pair."""
        b = self.batch([pair])
        S = self._encode(b.token_ids, b.token_mask)
        last = S[:, -1]
        n = len(pair.q_turn.tokens)
        m = len(pair.nq_turn.tokens)
        if not self.config.uses_history:
            return np.zeros((n, 0)), np.zeros((m, 0))
        _, aq = self._attend(nx.take(S, b.q_turn), nx.take(last, b.q_hist), b.q_hist_mask, "mutual_q")
        _, ap = self._attend(nx.take(S, b.nq_turn), nx.take(last, b.nq_hist), b.nq_hist_mask, "mutual_nq")
        return aq[0, :n], ap[0, :m]

    def match_lstm(self, q_prime: Tensor, nq_prime: Tensor) -> Tensor:
        N, M = q_prime.shape[0], nq_prime.shape[0]
        T = max(N, M)
        D = q_prime.shape[1]
        pad_q = nx.concat([q_prime, Tensor(np.zeros((T - N, D)))], axis=0) if T > N else q_prime
        pad_p = nx.concat([nq_prime, Tensor(np.zeros((T - M, D)))], axis=0) if T > M else nq_prime
        u = nx.concat([nx.reshape(pad_q, (1, T, D)), nx.reshape(pad_p, (1, T, D))], axis=0)
        mask = np.zeros((2, T))
        mask[0, :N] = 1.0
        mask[1, :M] = 1.0
        F = nx.lstm_sequence(u, mask, self.params["fusion.W"], self.params["fusion.b"])
        return self._match(F[:1], mask[:1], F[1:], np.array([M]))[0]

    def predict(self, p_m: Tensor, distance: int) -> PairScore:
        H2 = p_m.shape[-1]
        logits = self._logits(nx.reshape(p_m, (1, H2)), np.array([distance])).value[0]
        return PairScore(float(nx.softmax(logits).value[1]), logits)

    # ------------------------------------------------------------- checkpoint

    def header(self, **extra) -> dict:
        return {"format": "qamatch-checkpoint/1", "model": asdict(self.config), **extra}

    def save(self, path, **extra) -> None:
        nx.save_checkpoint(
            path,
            self.header(**extra),
            self.state_dict(),
            {"embeddings": self.embeddings.matrix, "vocab": np.array(self.embeddings.vocab.itos[2:], dtype=str)},
        )

    @classmethod
    def load(cls, path, expect: ModelConfig | None = None) -> tuple["QAModel", dict]:
        header, params, extras = nx.load_checkpoint(path)
        cfg = ModelConfig.from_dict(header["model"])
        if expect is not None:
            for f in fields(ModelConfig):
                if f.name == "dropout":
                    continue
                a, b = getattr(cfg, f.name), getattr(expect, f.name)
                if a != b:
                    raise CheckpointMismatch(f"checkpoint {f.name}={a!r}, requested {b!r}")
        vocab = Vocabulary([str(t) for t in extras["vocab"]])
        model = cls(cfg, Embeddings(vocab, extras["embeddings"]))
        model.load_state_dict(params)
        return model, header
