"""Command-line entry point: ``qamatch <subcommand> [options]``.

Options can also come from a ``--config`` file of ``key = value`` lines
(``#`` starts a comment; keys use the long option name with ``-`` or ``_``).
A flag on the command line beats the config file, which beats the built-in
default. The resolved configuration is written next to every output as
``<output>.config.json`` (and into checkpoint headers).

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dialogue import DialogueError, build_candidate_pairs, load_dialogues, save_dialogues
from .embeddings import Embeddings, SkipGramConfig, Tokenizer, train_skipgram
from .evaluation import BUCKETS, MetricsReport, evaluate, report
from .matcher import GD_RULES, DistanceBaseline, load_predictions, match_dialogues, run_rule, save_predictions
from .model import VARIANTS, CheckpointMismatch, ModelConfig, QAModel
from .numerics import kernels
from .numerics.rng import RandomSource
from .synth import InfeasibleSpec, SyntheticSpec, generate
from .training import NumericError, TrainConfig, _pairs_of, predict_dialogues, train

log = logging.getLogger("qamatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# config file handling
# --------------------------------------------------------------------------


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _apply_config(parser: argparse.ArgumentParser, cfg: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions}
    unknown = sorted(set(cfg) - set(actions) - {"config", "command"})
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    defaults = {}
    for k, v in cfg.items():
        a = actions.get(k)
        if a is None:
            continue
        if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            val = v.lower() in ("1", "true", "yes", "on")
            if v.lower() not in ("0", "1", "true", "false", "yes", "no", "on", "off"):
                raise UsageError(f"config key {k}: expected a boolean, got {v!r}")
            defaults[k] = val
        elif a.nargs in ("+", "*"):
            defaults[k] = [a.type(x) if a.type else x for x in v.replace(",", " ").split()]
        else:
            defaults[k] = v  # argparse converts string defaults through ``type``
    parser.set_defaults(**defaults)


def resolved(args: argparse.Namespace) -> dict:
    d = {k: v for k, v in vars(args).items() if k != "func"}
    d["version"] = __version__
    d["kernel_backend"] = kernels.backend()
    return d


def _echo(path, args) -> None:
    Path(str(path) + ".config.json").write_text(json.dumps(resolved(args), indent=2, default=str), encoding="utf-8")


def _mkparent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _load(path, args) -> list:
    return load_dialogues(path, Tokenizer(getattr(args, "tokenizer", "whitespace")))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def split_counts(n: int, ratio: tuple[int, ...]) -> list[int]:
    """Per-split sizes: floor shares for all but the last split, which takes the rest."""
    tot = sum(ratio)
    counts = [n * r // tot for r in ratio[:-1]]
    return counts + [n - sum(counts)]


def _parse_ratio(s: str) -> tuple[int, ...]:
    try:
        r = tuple(int(x) for x in s.split(":"))
    except ValueError:
        raise UsageError(f"bad split ratio {s!r}; expected e.g. 7:1:2") from None
    if len(r) != 3 or any(x < 0 for x in r) or sum(r) == 0:
        raise UsageError(f"bad split ratio {s!r}; expected three non-negative integers")
    return r


def distance_summary(dialogues) -> dict:
    """Gold pairs per distance bucket plus positive/negative candidate pair counts."""
    by = {b: 0 for b in BUCKETS}
    pos = neg = 0
    for d in dialogues:
        for i, j in d.gold_pairs:
            by[str(j - i) if j - i < 5 else ">=5"] += 1
        for p in build_candidate_pairs(d):
            pos += p.gold
            neg += not p.gold
    return {"dialogues": len(dialogues), "gold_by_distance": by, "pairs_true": pos, "pairs_false": neg}


def _summary_text(summary: dict) -> str:
    names = list(summary)
    lines = ["split  " + "  ".join(f"{b:>5}" for b in BUCKETS) + "   true   false"]
    for n in names:
        s = summary[n]
        lines.append(
            f"{n:<5}  " + "  ".join(f"{s['gold_by_distance'][b]:>5}" for b in BUCKETS)
            + f"  {s['pairs_true']:>5}  {s['pairs_false']:>6}"
        )
    return "\n".join(lines) + "\n"


def cmd_prepare(args) -> int:
    dialogues = _load(args.input, args)
    ids = [d.id for d in dialogues]
    if len(set(ids)) != len(ids):
        raise DialogueError(f"{args.input}: duplicate dialogue ids")
    ratio = _parse_ratio(args.split)
    order = RandomSource(args.seed, "split").permutation(len(dialogues))
    sizes = split_counts(len(dialogues), ratio)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"input": str(args.input), "seed": args.seed, "ratio": list(ratio), "splits": {}}
    summary = {}
    start = 0
    for name, n in zip(("train", "dev", "test"), sizes):
        part = [dialogues[int(k)] for k in order[start : start + n]]
        start += n
        save_dialogues(part, out / f"{name}.jsonl")
        with open(out / f"{name}.pairs.jsonl", "w", encoding="utf-8") as fh:
            for d in part:
                for p in build_candidate_pairs(d):
                    fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")
        manifest["splits"][name] = [d.id for d in part]
        summary[name] = distance_summary(part)
    manifest["config"] = resolved(args)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    (out / "summary.txt").write_text(_summary_text(summary), encoding="utf-8")
    log.info("split %d dialogues into %s", len(dialogues), "/".join(map(str, sizes)))
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_dialogues=args.n_dialogues, min_turns=args.min_turns, max_turns=args.max_turns,
        vocab_size=args.vocab_size, n_keys=args.n_keys, incremental_fraction=args.incremental_fraction,
        decoy_fraction=args.decoy_fraction, seed=args.seed,
    )
    try:
        dialogues = generate(spec)
    except InfeasibleSpec as exc:
        raise UsageError(f"infeasible synthetic spec: {exc}") from None
    save_dialogues(dialogues, _mkparent(args.out))
    _echo(args.out, args)
    log.info("wrote %d dialogues to %s", len(dialogues), args.out)
    return EXIT_OK


def _skipgram_config(args) -> SkipGramConfig:
    return SkipGramConfig(
        dim=args.dim, window=args.window, negatives=args.negatives, epochs=args.sg_epochs,
        lr=args.sg_lr, min_count=args.min_count, seed=args.seed,
    )


def _pretrain(paths, args) -> Embeddings:
    corpus = [t.tokens for p in paths for d in _load(p, args) for t in d.turns]
    return train_skipgram(corpus, _skipgram_config(args))


def cmd_pretrain(args) -> int:
    emb = _pretrain(args.input, args)
    emb.save(_mkparent(args.out))
    _echo(args.out, args)
    log.info("vocabulary %d, dim %d, epoch losses %s", len(emb.vocab), emb.dim, [round(x, 4) for x in emb.epoch_losses])
    return EXIT_OK


def _model_config(args) -> ModelConfig:
    try:
        return ModelConfig(
            variant=args.variant, embedding_dim=args.dim, encoder_hidden=args.encoder_hidden,
            match_hidden=args.match_hidden, dropout=args.dropout, classification_threshold=args.threshold,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            lr=args.lr, lr_decay=args.lr_decay, dropout=args.dropout, patience=args.patience,
            max_epochs=args.max_epochs, batch_size=args.batch_size, seeds=(args.seed,),
            monitor=args.monitor, eval_batch_size=args.eval_batch_size,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    mc, tc = _model_config(args), _train_config(args)
    train_d = _load(args.train, args)
    dev_d = _load(args.dev, args) if args.dev else []
    if not dev_d and tc.monitor == "dev":
        raise UsageError("--monitor dev needs --dev")
    if args.embeddings:
        emb = Embeddings.load(args.embeddings)
    else:
        log.info("no --embeddings given; pretraining skip-gram vectors on the training and dev text")
        emb = _pretrain([args.train] + ([args.dev] if args.dev else []), args)
    mc.embedding_dim = emb.dim
    out = _mkparent(args.out)
    if not args.embeddings:
        emb.save(str(out) + ".vectors.txt")
    log_path = args.train_log or str(out) + ".trainlog.jsonl"
    records = []

    def on_epoch(rec):
        records.append(rec)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(asdict(rec)) + "\n")

    Path(log_path).write_text("", encoding="utf-8")
    # ``train`` rewrites the checkpoint at every improving epoch; the final
    # save adds the resolved run config to the header of the best parameters
    model, tlog = train(mc, _pairs_of(train_d), dev_d, tc, emb, args.seed, out, on_epoch)
    model.save(out, train=asdict(tc), seed=args.seed, best_epoch=tlog.best_epoch, run=resolved(args))
    _echo(out, args)
    log.info("best epoch %s; checkpoint %s; log %s", tlog.best_epoch, out, log_path)
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        model, _ = QAModel.load(args.checkpoint)
    except (KeyError, OSError) as exc:
        raise DialogueError(f"cannot read checkpoint {args.checkpoint}: {exc}") from None
    if args.variant and model.config.variant != args.variant:
        raise CheckpointMismatch(f"checkpoint variant={model.config.variant!r}, requested {args.variant!r}")
    if args.threshold is not None:
        model.config.classification_threshold = args.threshold
    dialogues = _load(args.input, args)
    preds = predict_dialogues(model, dialogues, args.eval_batch_size)
    save_predictions(preds, _mkparent(args.out))
    _echo(args.out, args)
    return EXIT_OK


def cmd_baseline(args) -> int:
    dialogues = _load(args.input, args)
    rule = args.rule.lower()
    if rule == "distance":
        if not args.train:
            raise UsageError("--rule distance needs --train")
        model = DistanceBaseline().fit(_pairs_of(_load(args.train, args)))
        pairs = _pairs_of(dialogues)
        preds = match_dialogues(dialogues, pairs, model.predict_proba(pairs) if pairs else np.zeros(0), args.threshold)
    else:
        preds = run_rule(dialogues, rule, resolve=not args.no_resolve)
    save_predictions(preds, _mkparent(args.out))
    _echo(args.out, args)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    dialogues = _load(args.gold, args)
    results: dict[str, MetricsReport] = {}
    for spec in args.pred:
        name, _, path = spec.rpartition("=")
        name = name or Path(path).stem
        if name in results:
            raise UsageError(f"duplicate system name {name!r}")
        results[name] = evaluate(load_predictions(path), dialogues, exact=args.exact_distance)
    rep = report(results)
    text = rep.to_text()
    sys.stdout.write(text)
    if args.out:
        out = _mkparent(args.out)
        Path(str(out) + ".csv").write_text(rep.to_csv(), encoding="utf-8")
        Path(str(out) + ".json").write_text(
            json.dumps({"config": resolved(args), "table": json.loads(rep.to_json()),
                        "systems": {k: v.to_json() for k, v in results.items()}}, indent=2),
            encoding="utf-8",
        )
        Path(str(out) + ".txt").write_text(text, encoding="utf-8")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--tokenizer", choices=("whitespace", "pretokenized"), default="whitespace")
    p.add_argument("--log-level", default="INFO")


def _add_skipgram(p):
    d = SkipGramConfig()
    p.add_argument("--dim", type=int, default=d.dim, help="embedding dimension")
    p.add_argument("--window", type=int, default=d.window)
    p.add_argument("--negatives", type=int, default=d.negatives)
    p.add_argument("--sg-epochs", type=int, default=d.epochs, help="skip-gram epochs")
    p.add_argument("--sg-lr", type=float, default=d.lr, help="skip-gram initial learning rate")
    p.add_argument("--min-count", type=int, default=d.min_count)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qamatch", description="QA matching in two-party dialogues")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dialogue corpus")
    _add_common(p)
    s = SyntheticSpec()
    p.add_argument("--out", required=True)
    p.add_argument("--n-dialogues", type=int, default=s.n_dialogues)
    p.add_argument("--min-turns", type=int, default=s.min_turns)
    p.add_argument("--max-turns", type=int, default=s.max_turns)
    p.add_argument("--vocab-size", type=int, default=s.vocab_size)
    p.add_argument("--n-keys", type=int, default=s.n_keys)
    p.add_argument("--incremental-fraction", type=float, default=s.incremental_fraction)
    p.add_argument("--decoy-fraction", type=float, default=s.decoy_fraction)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="split dialogues 7:1:2 and emit candidate pairs")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="7:1:2", help="train:dev:test ratio")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("pretrain", help="train skip-gram embeddings on dialogue text")
    _add_common(p)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out", required=True)
    _add_skipgram(p)
    p.set_defaults(func=cmd_pretrain)

    m, t = ModelConfig(), TrainConfig()
    p = sub.add_parser("train", help="train a matching model")
    _add_common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--embeddings", help="embedding text file; pretrained on train+dev when omitted")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--train-log", help="epoch log JSONL (default: <out>.trainlog.jsonl)")
    p.add_argument("--variant", choices=VARIANTS, default=m.variant)
    p.add_argument("--encoder-hidden", type=int, default=m.encoder_hidden)
    p.add_argument("--match-hidden", type=int, default=m.match_hidden)
    p.add_argument("--threshold", type=float, default=m.classification_threshold)
    p.add_argument("--lr", type=float, default=t.lr)
    p.add_argument("--lr-decay", type=float, default=t.lr_decay)
    p.add_argument("--dropout", type=float, default=t.dropout)
    p.add_argument("--patience", type=int, default=t.patience)
    p.add_argument("--max-epochs", type=int, default=t.max_epochs)
    p.add_argument("--batch-size", type=int, default=t.batch_size)
    p.add_argument("--eval-batch-size", type=int, default=t.eval_batch_size)
    p.add_argument("--monitor", choices=("dev", "train"), default=t.monitor)
    _add_skipgram(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="match QA pairs with a trained checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=VARIANTS, help="fail unless the checkpoint has this variant")
    p.add_argument("--threshold", type=float)
    p.add_argument("--eval-batch-size", type=int, default=t.eval_batch_size)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("baseline", help="run a rule-based or distance baseline")
    _add_common(p)
    p.add_argument("--rule", required=True, choices=sorted(GD_RULES) + ["distance"])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train", help="training dialogues (distance baseline only)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--no-resolve", action="store_true", help="keep every claim of a multiply-claimed NQ")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="score prediction files against gold dialogues")
    _add_common(p)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", nargs="+", required=True, help="predictions as PATH or NAME=PATH")
    p.add_argument("--out", help="report prefix; writes .csv, .json and .txt")
    p.add_argument("--exact-distance", action="store_true", help="Acc per exact distance instead of 1-4/>=5 buckets")
    p.set_defaults(func=cmd_evaluate)
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = ap.parse_args(argv)
    if getattr(pre, "config", None):
        cfg = read_config(pre.config)
        subparser = ap._subparsers._group_actions[0].choices[pre.command]
        _apply_config(subparser, cfg)
        pre = ap.parse_args(argv)
    return pre


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"qamatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qamatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except CheckpointMismatch as exc:
        log.error("checkpoint mismatch: %s", exc)
        return EXIT_DATA
    except (DialogueError, OSError, KeyError, ValueError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
