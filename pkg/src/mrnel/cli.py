"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
corpora, priors, checkpoints, configs).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import config as cfgmod
from .corpus import (CorpusError, gen_synthetic, load_corpus,
                     load_embeddings, save_corpus, save_embeddings,
                     save_prior_table, split_corpus)
from .evaluation import (alpha_histogram, dump_alpha, dump_beliefs,
                         evaluate_corpus, oracle_eval)
from .params import (CheckpointError, init_params, load_checkpoint,
                     save_checkpoint)
from .training import TrainConfig, fit, gradient_check

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(USAGE_ERROR)


def _print_resolved(tag, obj):
    print(f"[resolved {tag}]")
    print(cfgmod.format_resolved(obj))


def _load_config_values(path):
    try:
        return cfgmod.parse_config_file(path)
    except FileNotFoundError as exc:
        raise CorpusError(str(exc)) from exc


def _apply_overrides(values, overrides):
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise cfgmod.ConfigError(f"override {item!r} is not key=value")
        values[key.strip()] = value.strip()
    return values


def cmd_synth(args):
    values = _apply_overrides(_load_config_values(args.spec), args.set)
    spec = cfgmod.build_synth_spec(values)
    spec.seed = cfgmod.resolve_seed(spec.seed)
    _print_resolved("synth spec", spec)
    corpus, word_emb, entity_emb, priors = gen_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    train, dev, test = split_corpus(corpus)
    save_corpus(corpus, os.path.join(args.out, "corpus.jsonl"))
    save_corpus(train, os.path.join(args.out, "train.jsonl"))
    save_corpus(dev, os.path.join(args.out, "dev.jsonl"))
    save_corpus(test, os.path.join(args.out, "test.jsonl"))
    save_prior_table(priors, os.path.join(args.out, "priors.tsv"))
    save_embeddings(os.path.join(args.out, "embeddings.npz"),
                    word_emb, entity_emb)
    print(f"wrote {len(corpus)} documents "
          f"({len(train)}/{len(dev)}/{len(test)} train/dev/test) to {args.out}")
    return 0


def cmd_train(args):
    values = _apply_overrides(_load_config_values(args.config), args.set)
    embeddings_path = values.get("embeddings")
    if embeddings_path is None:
        raise cfgmod.ConfigError("config must set embeddings = <npz path>")
    model_cfg = cfgmod.build_model_config(values)
    train_cfg = cfgmod.build_train_config(values)
    train_cfg.seed = cfgmod.resolve_seed(train_cfg.seed)
    _print_resolved("model config", model_cfg)
    _print_resolved("train config", train_cfg)

    word_emb, entity_emb = load_embeddings(embeddings_path)
    if model_cfg.dim != word_emb.dim:
        model_cfg.dim = word_emb.dim
    train_corpus = load_corpus(args.train)
    dev_corpus = load_corpus(args.dev)
    params = init_params(model_cfg, train_cfg.seed, word_emb, entity_emb)

    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train_log.csv")
    with open(log_path, "w", encoding="utf-8", newline="\n") as log_fh:
        log_fh.write("epoch,loss,dev_f1,lr,seconds\n")
        best, log = fit(train_corpus, dev_corpus, params, train_cfg,
                        log_fh=log_fh,
                        progress=lambda row: print(
                            f"epoch {row['epoch']:3d} loss {row['loss']:.4f} "
                            f"dev_f1 {row['dev_f1']:.4f} lr {row['lr']:.0e}"))
    model_path = os.path.join(args.out, "model.ckpt")
    save_checkpoint(best, model_path)
    print(f"best dev F1 {max(r['dev_f1'] for r in log):.4f}; "
          f"model -> {model_path}, log -> {log_path}")
    return 0


def cmd_eval(args):
    params = load_checkpoint(args.model)
    corpus = load_corpus(args.corpus)
    report = evaluate_corpus(corpus, params, mode=args.mode)
    if args.dump_beliefs and args.mode != "prior-only":
        dump_beliefs(corpus, params, args.dump_beliefs, mode=args.mode)
    print(report.to_json())
    return 0


def cmd_oracle_eval(args):
    params = load_checkpoint(args.model)
    corpus = load_corpus(args.corpus)
    print(oracle_eval(corpus, params).to_json())
    return 0


def cmd_gradcheck(args):
    from .corpus import SynthSpec

    values = _apply_overrides(_load_config_values(args.config), args.set)
    model_cfg = cfgmod.build_model_config(values)
    train_cfg = cfgmod.build_train_config(values)
    train_cfg.seed = cfgmod.resolve_seed(train_cfg.seed)
    # small fixed instance: 3 mentions, d=8, checked against central
    # finite differences with dropout off
    spec = SynthSpec(num_docs=3, tokens_per_doc=40, num_entities=40,
                     num_mentions_per_doc=3, num_coref_clusters=2,
                     topic_count=5, embedding_dim=8, noise=0.4,
                     seed=train_cfg.seed)
    model_cfg.dim = 8
    _print_resolved("model config", model_cfg)
    corpus, word_emb, entity_emb, _ = gen_synthetic(spec)
    params = init_params(model_cfg, train_cfg.seed, word_emb, entity_emb)
    err = gradient_check(params, corpus.documents, train_cfg, eps=args.eps)
    status = "PASS" if err < 1e-3 else "FAIL"
    print(f"max relative error {err:.3e} -> {status} (threshold 1e-3)")
    return 0 if status == "PASS" else DATA_ERROR


def cmd_inspect_alpha(args):
    params = load_checkpoint(args.model)
    corpus = load_corpus(args.corpus)
    dump_alpha(corpus, params, args.out)
    if args.histogram:
        rows = alpha_histogram(corpus, params)
        with open(args.histogram, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("k\tbucket_low\tbucket_high\tcount\n")
            for k, lo, hi, count in rows:
                fh.write(f"{k}\t{lo:.2f}\t{hi:.2f}\t{count}\n")
    print(f"alpha dump -> {args.out}")
    return 0


def build_parser():
    parser = _Parser(prog="mrnel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=["lbp", "exact", "prior-only"],
                   default="lbp")
    p.add_argument("--dump-beliefs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-eval", help="oracle-conditioned evaluation")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_oracle_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config", required=True)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect-alpha", help="dump attention weights")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--histogram")
    p.set_defaults(func=cmd_inspect_alpha)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_ERROR
    try:
        return args.func(args)
    except (CorpusError, CheckpointError, cfgmod.ConfigError,
            FileNotFoundError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return DATA_ERROR


def main():
    raise SystemExit(run())


if __name__ == "__main__":
    main()
