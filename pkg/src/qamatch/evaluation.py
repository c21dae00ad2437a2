"""Micro-averaged P/R/F1, accuracy by QA distance, and comparison tables."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .dialogue import Dialogue, Pair

BUCKETS = ("1", "2", "3", "4", ">=5")


def _bucket(distance: int, exact: bool) -> str:
    if exact:
        return str(distance)
    return str(distance) if distance < 5 else ">=5"


def _bucket_order(label: str) -> tuple[int, str]:
    return (int(label.lstrip(">=")), label)


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    acc_by_distance: dict[str, float] = field(default_factory=dict)
    counts_by_distance: dict[str, tuple[int, int]] = field(default_factory=dict)
    per_dialogue: dict[str, tuple[int, int, int]] = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["counts_by_distance"] = {k: list(v) for k, v in self.counts_by_distance.items()}
        d["per_dialogue"] = {k: list(v) for k, v in self.per_dialogue.items()}
        return d


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    # harmonic mean as one integer division, so it is the correctly rounded rational
    f = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return p, r, f


def _as_sets(m: Mapping[str, Iterable[Pair]]) -> dict[str, set[Pair]]:
    out = {}
    for k, v in m.items():
        pairs = getattr(v, "pairs", v)
        out[str(k)] = {(int(a), int(b)) for a, b in pairs}
    return out


def gold_map(dialogues: Iterable[Dialogue]) -> dict[str, set[Pair]]:
    return {d.id: set(d.gold_pairs) for d in dialogues}


def acc_at_distance(
    predictions: Mapping[str, Iterable[Pair]], gold: Mapping[str, Iterable[Pair]], exact: bool = False
) -> dict[str, tuple[int, int]]:
    """(hits, total) of gold pairs per distance bucket; empty buckets are absent."""
    pred = _as_sets(predictions)
    counts: dict[str, list[int]] = {}
    for did, gs in _as_sets(gold).items():
        ps = pred.get(did, set())
        for g in gs:
            c = counts.setdefault(_bucket(g[1] - g[0], exact), [0, 0])
            c[1] += 1
            c[0] += g in ps
    return {k: (v[0], v[1]) for k, v in sorted(counts.items(), key=lambda kv: _bucket_order(kv[0]))}


def acc_at_least(
    predictions: Mapping[str, Iterable[Pair]], gold: Mapping[str, Iterable[Pair]], min_distance: int
) -> float | None:
    """Fraction of gold pairs with distance >= ``min_distance`` that were predicted."""
    pred = _as_sets(predictions)
    hit = tot = 0
    for did, gs in _as_sets(gold).items():
        for g in gs:
            if g[1] - g[0] >= min_distance:
                tot += 1
                hit += g in pred.get(did, set())
    return hit / tot if tot else None


def micro_prf(
    predictions: Mapping[str, Iterable[Pair]], gold: Mapping[str, Iterable[Pair]], exact: bool = False
) -> MetricsReport:
    """Pool TP/FP/FN over every question of every dialogue, then compute P/R/F1.

    Dialogues missing from ``predictions`` count as empty predictions; a
    prediction for a dialogue that is not in ``gold`` is an error.
    """
    pred = _as_sets(predictions)
    gold_s = _as_sets(gold)
    unknown = sorted(set(pred) - set(gold_s))
    if unknown:
        raise KeyError(f"predictions reference unknown dialogue ids: {unknown[:5]}")
    tp = fp = fn = 0
    per = {}
    for did, gs in gold_s.items():
        ps = pred.get(did, set())
        a, b, c = len(ps & gs), len(ps - gs), len(gs - ps)
        per[did] = (a, b, c)
        tp, fp, fn = tp + a, fp + b, fn + c
    p, r, f = prf(tp, fp, fn)
    counts = acc_at_distance(pred, gold_s, exact)
    acc = {k: h / t for k, (h, t) in counts.items()}
    return MetricsReport(tp, fp, fn, p, r, f, acc, counts, per)


def evaluate(predictions: Mapping[str, Iterable[Pair]], dialogues: Sequence[Dialogue], exact: bool = False) -> MetricsReport:
    return micro_prf(predictions, gold_map(dialogues), exact)


# --------------------------------------------------------------------------
# comparison tables
# --------------------------------------------------------------------------


@dataclass
class Report:
    """One row per system, ordered by F1 (descending) then system name."""

    rows: list[dict]
    buckets: list[str]

    @property
    def columns(self) -> list[str]:
        return ["system", "P", "R", "F1", "tp", "fp", "fn"] + [f"Acc@{b}" for b in self.buckets]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in self.columns])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Report":
        rd = list(csv.reader(io.StringIO(text)))
        header, body = rd[0], rd[1:]
        buckets = [c[len("Acc@"):] for c in header if c.startswith("Acc@")]
        rows = []
        for rec in body:
            row: dict = {}
            for c, v in zip(header, rec):
                if c == "system":
                    row[c] = v
                elif c in ("tp", "fp", "fn"):
                    row[c] = int(v)
                else:
                    row[c] = float(v) if v != "" else None
            rows.append(row)
        return cls(rows, buckets)

    def to_json(self) -> str:
        return json.dumps({"columns": self.columns, "rows": self.rows}, indent=2)

    def to_text(self) -> str:
        """Fixed-width table, percentages with two decimals."""
        cols = self.columns
        lines = []
        cells = [cols]
        for row in self.rows:
            out = []
            for c in cols:
                v = row.get(c)
                if v is None:
                    out.append("-")
                elif isinstance(v, float):
                    out.append(f"{100 * v:.2f}")
                else:
                    out.append(str(v))
            cells.append(out)
        widths = [max(len(r[k]) for r in cells) for k in range(len(cols))]
        for r in cells:
            lines.append("  ".join(s.rjust(w) if k else s.ljust(w) for k, (s, w) in enumerate(zip(r, widths))))
        return "\n".join(lines) + "\n"


def report(results: Mapping[str, MetricsReport]) -> Report:
    if not results:
        raise ValueError("report needs at least one system")
    buckets = sorted({b for m in results.values() for b in m.acc_by_distance}, key=_bucket_order)
    rows = []
    for name, m in results.items():
        row = {"system": name, "P": m.precision, "R": m.recall, "F1": m.f1, "tp": m.tp, "fp": m.fp, "fn": m.fn}
        for b in buckets:
            row[f"Acc@{b}"] = m.acc_by_distance.get(b)
        rows.append(row)
    rows.sort(key=lambda r: (-r["F1"], r["system"]))
    return Report(rows, buckets)
