"""Command-line entry point: annotate, synth, train, score, rerank, eval, gradcheck.

Configuration is a flat ``key = value`` file; command-line flags override
file values, which override built-in defaults.  Set ``VERNET_LOG`` (e.g.
``DEBUG``) for log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import diffcore as dc
from .annotator import extract_edits, labels_from_edits, label_tokens
from .data import HypothesisGroup, RecordError, dumps, iter_records, read_groups, write_groups, write_jsonl
from .encoder import CheckpointVersionError, EncoderConfig
from .metrics import (UndefinedCorrelation, corpus_gleu, format_report, pcc, predict_labels, sentence_f05,
                      span_prf, token_prf)
from .model import ModelConfig, VerNet
from .reranker import CAConfig, RankGroup, RankerWeights, coordinate_ascent, group_features, rank
from .synthdata import CorruptionConfig, make_corpus
from .textpipe import DEFAULT_MAX_LEN, build_vocab
from .trainer import TrainConfig, grad_check, load_model, train

log = logging.getLogger("vernet")

EXIT_OK, EXIT_FAIL, EXIT_PARTIAL = 0, 1, 3

DEFAULTS: dict[str, object] = {
    # model
    "kind": "vernet",
    "mask_policy": "joint",
    "d_model": 64,
    "layers": 2,
    "heads": 4,
    "ff_dim": 256,
    "max_len": DEFAULT_MAX_LEN,
    "max_positions": 128,
    "init_std": 0.02,
    "head_dropout": 0.0,
    "encoder_dropout": 0.0,
    "lowercase": False,
    "min_count": 1,
    # training
    "learning_rate": 5e-5,
    "batch_size": 8,
    "accumulation": 4,
    "epochs": 1,
    "max_steps": 0,
    "dev_metric": "token_f05",
    "seed": 0,
    # synthetic data
    "n_groups": 1000,
    "error_rate": 0.15,
    "p_replace": 0.6,
    "p_delete": 0.15,
    "p_insert": 0.15,
    "p_swap": 0.1,
    "k": 5,
    "spurious_rate": 0.15,
    "score_noise": 0.7,
    # reranking
    "features": "model_score,f",
    "restarts": 5,
    "ca_step": 0.05,
    "ca_max_exponent": 6,
    "ca_metric": "gain",
    # gradient check
    "gc_d_model": 8,
    "gc_layers": 1,
    "gc_heads": 2,
    "gc_ff_dim": 16,
    "gc_k": 3,
    "gc_m": 4,
    "gc_max_n": 5,
    "gc_step": 1e-5,
    "gc_tolerance": 1e-4,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    return raw


def read_config(path: str | Path | None) -> dict:
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            cfg[key] = _coerce(key, raw)
    return cfg


def resolve_config(args) -> dict:
    cfg = read_config(args.config)
    for key, raw in getattr(args, "set", None) or []:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = _coerce(key, raw)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "k", None) is not None:
        cfg["k"] = args.k
    return cfg


def corruption_config(cfg: dict) -> CorruptionConfig:
    return CorruptionConfig(error_rate=cfg["error_rate"], p_replace=cfg["p_replace"], p_delete=cfg["p_delete"],
                            p_insert=cfg["p_insert"], p_swap=cfg["p_swap"], k=cfg["k"], seed=cfg["seed"],
                            spurious_rate=cfg["spurious_rate"], score_noise=cfg["score_noise"])


def train_config(cfg: dict) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: cfg[k] for k in names if k in cfg})


# ---------------------------------------------------------------- commands


def _edits_json(edits):
    return [[e.kind, e.start, e.end, " ".join(e.replacement)] for e in edits]


def cmd_annotate(args, cfg) -> int:
    failures = 0
    out = []
    for lineno, rec in iter_records(args.inp):
        group = HypothesisGroup.from_record(rec, lineno, cfg["lowercase"])
        if group.gold is None:
            log.error("line %d: record has no gold; skipped", lineno)
            failures += 1
            continue
        gold = group.gold
        src_edits = extract_edits(group.source, gold)
        row = {
            "source": " ".join(group.source),
            "gold": " ".join(gold),
            "source_labels": labels_from_edits(len(group.source), src_edits),
            "source_edits": _edits_json(src_edits),
            "hypotheses": [],
        }
        for h in group.hypotheses:
            e = extract_edits(h.tokens, gold)
            row["hypotheses"].append({"text": h.text, "labels": labels_from_edits(len(h.tokens), e),
                                      "edits": _edits_json(e)})
        out.append(row)
    write_jsonl(args.out, out)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_synth(args, cfg) -> int:
    n = args.n_groups if args.n_groups is not None else cfg["n_groups"]
    groups = make_corpus(n, corruption_config(cfg))
    write_groups(args.out, groups)
    return EXIT_OK


def _model_config(cfg: dict, vocab_size: int) -> ModelConfig:
    enc = EncoderConfig(vocab_size=vocab_size, d_model=cfg["d_model"], layers=cfg["layers"], heads=cfg["heads"],
                        ff_dim=cfg["ff_dim"], max_positions=cfg["max_positions"], seed=cfg["seed"],
                        init_std=cfg["init_std"])
    return ModelConfig(enc, kind=cfg["kind"], mask_policy=cfg["mask_policy"], max_len=cfg["max_len"],
                       head_dropout=cfg["head_dropout"], encoder_dropout=cfg["encoder_dropout"],
                       lowercase=cfg["lowercase"])


def cmd_train(args, cfg) -> int:
    groups = read_groups(args.inp, cfg["lowercase"])
    missing = [i for i, g in enumerate(groups) if g.gold is None]
    if missing:
        raise RecordError(missing[0] + 1, "training records need gold")
    dev = read_groups(args.dev, cfg["lowercase"]) if args.dev else None
    corpus = [g.source for g in groups] + [t for g in groups for t in g.golds] + \
        [h.tokens for g in groups for h in g.hypotheses]
    vocab = build_vocab(corpus, cfg["min_count"])
    model = VerNet(_model_config(cfg, len(vocab)), vocab)
    tcfg = train_config(cfg)
    fh = open(args.log, "w", encoding="utf-8") if args.log else None

    def log_fn(rec):
        if fh is not None:
            fh.write(dumps({k: rec[k] for k in sorted(rec)}) + "\n")

    try:
        result = train(model, groups, tcfg, dev, log_fn)
    finally:
        if fh:
            fh.close()
    result.trainer.save(args.out, extra={"history": result.history, "best_epoch": result.best_epoch})
    for rec in result.history:
        log.info("epoch %s: %s", rec["epoch"], rec)
    return EXIT_OK


def cmd_score(args, cfg) -> int:
    model = load_model(args.checkpoint)
    out = []
    for lineno, rec in iter_records(args.inp):
        group = HypothesisGroup.from_record(rec, lineno, model.config.lowercase)
        if group.k == 0:
            raise RecordError(lineno, "scoring needs at least one hypothesis")
        res = model.score_group(group, baselines=args.baselines)
        row = group.to_record()
        for k, (h, s) in enumerate(zip(row["hypotheses"], res["hypotheses"])):
            h["f"] = s["f"]
            h["gamma"] = res["gamma"][k] if res["gamma"] is not None else None
            h["token_probs"] = s["token_probs"]
            h["sep_prob"] = s["sep_prob"]
            if "baselines" in s:
                h["baselines"] = s["baselines"]
        row["source_token_probs"] = res["hypotheses"][0]["source_token_probs"]
        out.append(row)
    write_jsonl(args.out, out)
    return EXIT_OK


def _rank_groups(path, names, with_gold: bool):
    recs, groups = [], []
    for lineno, rec in iter_records(path):
        group = HypothesisGroup.from_record(rec, lineno)
        if not group.hypotheses:
            raise RecordError(lineno, "reranking needs hypotheses")
        try:
            feats = group_features(rec["hypotheses"], len(group.source), names)
        except ValueError as exc:
            raise RecordError(lineno, str(exc)) from exc
        gains = np.zeros(group.k)
        if with_gold:
            if not group.golds:
                raise RecordError(lineno, "learning weights needs gold")
            gains = np.array([sentence_f05(group.source, h.tokens, group.golds) for h in group.hypotheses])
        recs.append(rec)
        groups.append(RankGroup(feats, gains))
    return recs, groups


def _available_features(path, names):
    """Drop ``model_score`` corpus-wide when any hypothesis lacks it."""
    for _, rec in iter_records(path):
        if "model_score" in names and any(h.get("model_score") is None for h in rec.get("hypotheses", [])):
            log.warning("some hypotheses lack model_score; dropping that feature")
            return [n for n in names if n != "model_score"]
    return list(names)


def cmd_rerank(args, cfg) -> int:
    if args.train_in:
        names = _available_features(args.train_in, [n.strip() for n in cfg["features"].split(",") if n.strip()])
        _, train_groups = _rank_groups(args.train_in, names, with_gold=True)
        ca = CAConfig(restarts=cfg["restarts"], step=cfg["ca_step"], max_exponent=cfg["ca_max_exponent"],
                      seed=cfg["seed"], metric=cfg["ca_metric"])
        res = coordinate_ascent(train_groups, names, ca)
        weights = res.weights
        if args.weights:
            weights.save(args.weights)
        log.info("coordinate ascent objective %.6f (start %.6f)", res.objective, res.initial_objective)
    elif args.weights:
        weights = RankerWeights.load(args.weights)
    else:
        raise ConfigError("rerank needs --weights (to load) or --train-in (to learn)")
    if args.inp:
        recs, groups = _rank_groups(args.inp, weights.names, with_gold=False)
        out = []
        for rec, g in zip(recs, groups):
            order = rank(g.features, weights)
            scores = weights.scores(g.features)
            row = dict(rec)
            row["hypotheses"] = [dict(rec["hypotheses"][i], rank_score=float(scores[i]), original_rank=i)
                                 for i in order]
            out.append(row)
        write_jsonl(args.out, out)
    return EXIT_OK


def evaluate_file(path) -> dict:
    """System output = first hypothesis of each record."""
    sys_edits, gold_edits, cands, srcs, refs = [], [], [], [], []
    fs, f05s = [], []
    tok_pred, tok_gold = [], []
    for lineno, rec in iter_records(path):
        group = HypothesisGroup.from_record(rec, lineno)
        if not group.golds:
            raise RecordError(lineno, "evaluation needs gold")
        if not group.hypotheses:
            raise RecordError(lineno, "evaluation needs at least one hypothesis")
        top = group.hypotheses[0].tokens
        sys_edits.append(extract_edits(group.source, top))
        gold_edits.append([extract_edits(group.source, g) for g in group.golds])
        cands.append(top)
        srcs.append(group.source)
        refs.append(group.golds)
        for h, raw in zip(group.hypotheses, rec["hypotheses"]):
            if isinstance(raw, dict) and raw.get("f") is not None:
                fs.append(float(raw["f"]))
                f05s.append(sentence_f05(group.source, h.tokens, group.golds))
            if isinstance(raw, dict) and raw.get("token_probs") is not None:
                probs = list(raw["token_probs"]) + ([raw["sep_prob"]] if raw.get("sep_prob") is not None else [])
                gold_lab = label_tokens(h.tokens, group.gold)
                if len(probs) == len(gold_lab):
                    tok_pred.append(predict_labels(probs))
                    tok_gold.append(gold_lab)
    prf = span_prf(sys_edits, gold_edits)
    report: dict = {
        "sentences": len(cands),
        "span_precision": prf.precision,
        "span_recall": prf.recall,
        "span_f0.5": prf.f_beta,
        "gleu": corpus_gleu(cands, srcs, refs),
    }
    if fs:
        try:
            report["pcc"] = pcc(fs, f05s)
        except (UndefinedCorrelation, ValueError):
            report["pcc"] = float("nan")
    if tok_pred:
        t = token_prf(tok_pred, tok_gold)
        report["token_precision"] = t.precision
        report["token_recall"] = t.recall
        report["token_f0.5"] = t.f_beta
    return report


def cmd_eval(args, cfg) -> int:
    report = evaluate_file(args.inp)
    text = format_report(report)
    print(text)
    if args.out:
        write_jsonl(args.out, [{"metric": k, "value": v} for k, v in report.items()])
    return EXIT_OK


def gradcheck_setup(cfg: dict):
    """A tiny random model and labeled group for finite-difference checks."""
    from .data import Hypothesis

    rng = np.random.default_rng(cfg["seed"])
    words = [f"w{i}" for i in range(6)]
    vocab = build_vocab([words])
    m, K = cfg["gc_m"], cfg["gc_k"]
    source = [str(w) for w in rng.choice(words, size=m)]
    gold = list(source)
    gold[int(rng.integers(m))] = "w5" if gold[0] != "w5" else "w4"
    hyps = []
    for k in range(K):
        n = int(rng.integers(1, cfg["gc_max_n"] + 1))
        hyps.append(Hypothesis([str(w) for w in rng.choice(words, size=n)]))
    group = HypothesisGroup(source, hyps, [gold])
    enc = EncoderConfig(vocab_size=len(vocab), d_model=cfg["gc_d_model"], layers=cfg["gc_layers"],
                        heads=cfg["gc_heads"], ff_dim=cfg["gc_ff_dim"], max_positions=32, seed=cfg["seed"],
                        init_std=0.5)
    model = VerNet(ModelConfig(enc, max_len=32), vocab)
    batch = model.prepare(group, with_labels=True)

    def loss_fn():
        (H,) = model.encode([batch])
        return model.group_loss(batch, H)

    return model, loss_fn


def cmd_gradcheck(args, cfg) -> int:
    model, loss_fn = gradcheck_setup(cfg)
    report = grad_check(loss_fn, model.params, step=cfg["gc_step"], tolerance=cfg["gc_tolerance"])
    text = "\n".join(report.lines())
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK if report.passed else EXIT_FAIL


COMMANDS = {
    "annotate": cmd_annotate,
    "synth": cmd_synth,
    "train": cmd_train,
    "score": cmd_score,
    "rerank": cmd_rerank,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vernet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", nargs=2, action="append", metavar=("KEY", "VALUE"),
                        help="override one config key")
        return sp

    sp = common(sub.add_parser("annotate", help="derive token labels and edits from gold"))
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)

    sp = common(sub.add_parser("synth", help="generate a synthetic dataset"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--n-groups", type=int)

    sp = common(sub.add_parser("train", help="train a model"))
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--dev")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--log", help="JSON-lines training log")

    sp = common(sub.add_parser("score", help="score hypotheses with a checkpoint"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--baselines", action="store_true", help="also emit every head's sentence score")

    sp = common(sub.add_parser("rerank", help="learn and/or apply ranking weights"))
    sp.add_argument("--in", dest="inp", help="score file to rerank")
    sp.add_argument("--out")
    sp.add_argument("--weights", help="weights file (written when learning, read otherwise)")
    sp.add_argument("--train-in", help="score file with gold to learn weights from")

    sp = common(sub.add_parser("eval", help="evaluate top-1 hypotheses against gold"))
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", help="machine-readable report (JSON lines)")

    sp = common(sub.add_parser("gradcheck", help="finite-difference check of every parameter"))
    sp.add_argument("--out")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("VERNET_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "rerank" and args.inp and not args.out:
        print("vernet rerank: --out is required with --in", file=sys.stderr)
        return 2
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (RecordError, ConfigError, CheckpointVersionError, dc.ContractError) as exc:
        print(f"vernet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
