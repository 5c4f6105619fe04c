"""Command-line entry point: build-corpus, train, eval, analyze, sweep, bench, rescore.

Exit codes: 0 success, 1 usage error, 2 data/checkpoint error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import corpus as corpus_mod
from .bench import latency_benchmark, selection_cost
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import ConfigError, TokenFrequencyTable, Vocabulary, build_frequency_table, extract_tail, ngram_counts, tokenize
from .evaluate import gradient_attribution, information_gain, perplexity
from .memory import LookupDictionary
from .model import TransformerLM
from .rescore import FusionConfig, nbest_to_hypotheses, read_nbest, rescore_with_model, write_rescored
from .sweep import SweepCell, sweep
from .training import NumericError, run_training

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _emit(record: dict, fh=None) -> None:
    line = json.dumps(record, sort_keys=True)
    print(line, file=fh or sys.stdout)
    if fh is not None:
        fh.flush()


def _load_lines(path: str) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read corpus file {path}: {exc}") from exc


def _load_tokenized(path: str, vocab: Vocabulary, mode: str) -> list[list[int]]:
    return [tokenize(line, vocab, mode) for line in _load_lines(path)]


def cmd_build_corpus(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for path in args.paths:
        lines.extend(_load_lines(path))
    vocab = Vocabulary.build(lines, args.mode)
    sentences = [tokenize(line, vocab, args.mode) for line in lines]
    freq = build_frequency_table(sentences)
    vocab.save(out / "vocab.txt")
    freq.save(out / "freq.tsv")
    _emit({"event": "build-corpus", "vocab_size": vocab.size, "total_tokens": freq.total})
    return 0


def _prepare(args) -> tuple[RunConfig, Vocabulary, TokenFrequencyTable]:
    cfg = RunConfig.load(args.config)
    art = Path(args.artifacts)
    vocab = Vocabulary.load(art / "vocab.txt")
    freq = TokenFrequencyTable.load(art / "freq.tsv")
    cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, V=vocab.size))
    return cfg, vocab, freq


def cmd_train(args) -> int:
    cfg, vocab, freq = _prepare(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    sentences = _load_tokenized(cfg.train_path, vocab, cfg.tokenize_mode)
    log_path = out / "train.log.jsonl"
    ckpt_path = out / "checkpoint.bin"
    from .training import make_optimizer  # noqa: PLC0415

    if args.resume:
        ck = load_checkpoint(args.resume, expect_hash=cfg.hash())
        model, dictionary, optimizer, start = ck.model, ck.dictionary, ck.optimizer, ck.step
    else:
        torch.manual_seed(cfg.model.seed)
        model = TransformerLM(cfg.model)
        dictionary = (
            LookupDictionary(cfg.memory, cfg.model.d_emb, init_std=model.init_std)
            if cfg.use_dict else None
        )
        optimizer = make_optimizer(model, cfg.train)
        start = 0
    with open(log_path, "a", encoding="utf-8") as fh:
        def log(rec):
            rec = dict(rec, config_hash=cfg.hash())
            _emit(rec, fh)
            every = cfg.train.checkpoint_every
            if every and rec["step"] % every == 0:
                save_checkpoint(ckpt_path, cfg, model, dictionary,
                                optimizer, freq, rec["step"])
        try:
            run_training(cfg, sentences, freq, model=model, dictionary=dictionary,
                         optimizer=optimizer, start_step=start, log_fn=log)
        except NumericError as exc:
            print(f"numeric failure: {exc} (last checkpoint retained)", file=sys.stderr)
            return NUMERIC_ERROR
    save_checkpoint(ckpt_path, cfg, model, dictionary, optimizer, freq, cfg.train.max_steps)
    _emit({"event": "train-done", "steps": cfg.train.max_steps,
           "checkpoint": str(ckpt_path), "config_hash": cfg.hash()})
    return 0


def _load_ckpt_for_eval(args):
    ck = load_checkpoint(args.checkpoint)
    if args.config:
        want = RunConfig.load(args.config)
        got = ck.config
        mism = [
            name for name, a, b in [
                ("U", want.memory.U, got.memory.U),
                ("M", want.memory.M, got.memory.M),
                ("d_emb", want.model.d_emb, got.model.d_emb),
            ] if a != b
        ]
        if mism:
            raise CheckpointError(
                f"checkpoint/config mismatch on {', '.join(mism)} "
                f"(checkpoint hash {ck.config.hash()})"
            )
    if ck.dictionary is not None:
        ck.dictionary.freeze()
    return ck


def _tails(freq, sentences, threshold):
    tail1 = extract_tail(freq, threshold, n=1)
    tail2 = extract_tail(ngram_counts(sentences, 2), threshold, n=2)
    return tail1, tail2


def cmd_eval(args) -> int:
    ck = _load_ckpt_for_eval(args)
    vocab = Vocabulary.load(Path(args.artifacts) / "vocab.txt")
    sentences = _load_tokenized(args.eval_path, vocab, ck.config.tokenize_mode)
    train_sents = _load_tokenized(ck.config.train_path, vocab, ck.config.tokenize_mode) \
        if ck.config.train_path else sentences
    tail1, tail2 = _tails(ck.freq, train_sents, ck.config.tail_threshold)
    report = perplexity(ck.model, ck.dictionary, sentences, tail1, tail2)
    _emit(dict(json.loads(report.to_json()), event="eval", config_hash=ck.config.hash()))
    return 0


def cmd_analyze(args) -> int:
    ck = _load_ckpt_for_eval(args)
    vocab = Vocabulary.load(Path(args.artifacts) / "vocab.txt")
    sentences = _load_tokenized(args.eval_path, vocab, ck.config.tokenize_mode)
    if ck.dictionary is None:
        print("checkpoint has no dictionary; nothing to analyze", file=sys.stderr)
        return DATA_ERROR
    ig = 0.0 if ck.dictionary.cfg.M == 1 else information_gain(
        ck.model, ck.dictionary, sentences, random_seed=ck.config.memory.seed + 10_000
    )
    from .training import pad_batch  # noqa: PLC0415
    batch = torch.from_numpy(pad_batch(sentences[: min(len(sentences), 64)]))
    attribution = gradient_attribution(ck.model, ck.dictionary, batch)
    _emit(dict(attribution, event="analyze", information_gain=ig,
               config_hash=ck.config.hash()))
    return 0


def cmd_sweep(args) -> int:
    cfg, vocab, freq = _prepare(args)
    train_sents = _load_tokenized(cfg.train_path, vocab, cfg.tokenize_mode)
    eval_sents = _load_tokenized(cfg.eval_path or cfg.train_path, vocab, cfg.tokenize_mode)
    tail1, tail2 = _tails(freq, train_sents, cfg.tail_threshold)
    policies = [p if p == "freq" else float(p) for p in args.policies]
    cells = [
        SweepCell(U=u, N=n, M=m, ratio_policy=p)
        for u in args.U for n in args.N for m in args.M for p in policies
    ]
    result = sweep(cfg, cells, args.seeds, train_sents, freq, eval_sents,
                   tail1, tail2, with_info_gain=args.info_gain,
                   log_fn=lambda r: _emit({"event": "sweep-cell",
                                           "U": r.cell.U, "N": r.cell.N, "M": r.cell.M,
                                           "policy": str(r.cell.ratio_policy),
                                           "seed": r.seed, "error": r.error}))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.format in ("tsv", "both"):
        result.write_tsv(out / "sweep.tsv")
    if args.format in ("jsonl", "both"):
        result.write_jsonl(out / "sweep.jsonl")
    _emit({"event": "sweep-done", "cells": len(cells), "seeds": len(args.seeds)})
    return 0


def cmd_bench(args) -> int:
    ck = _load_ckpt_for_eval(args)
    vocab = Vocabulary.load(Path(args.artifacts) / "vocab.txt")
    sentences = _load_tokenized(args.eval_path, vocab, ck.config.tokenize_mode)
    base = TransformerLM(ck.config.model)
    base.load_state_dict(ck.model.state_dict())
    report = latency_benchmark(base, ck.model, ck.dictionary, sentences, reps=args.reps)
    costs = selection_cost(args.M, d_emb=ck.config.model.d_emb)
    _emit(dict(report.to_dict(), event="bench",
               selection_cost={str(k): v for k, v in costs.items()}))
    return 0


def cmd_rescore(args) -> int:
    ck = _load_ckpt_for_eval(args)
    vocab = Vocabulary.load(Path(args.artifacts) / "vocab.txt")
    fcfg = FusionConfig(lambda_sf=args.lambda_sf, lambda_res=args.lambda_res)
    blocks = read_nbest(args.nbest)
    out_blocks = []
    for block in blocks:
        hyps = nbest_to_hypotheses(block, vocab)
        scored = rescore_with_model(ck.model, ck.dictionary, hyps, fcfg, mode=args.mode)
        out_blocks.append((block, scored))
    write_rescored(args.output, out_blocks)
    _emit({"event": "rescore", "utterances": len(blocks), "output": args.output})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lookuplm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    bc = sub.add_parser("build-corpus", help="build vocabulary and frequency table")
    bc.add_argument("paths", nargs="+")
    bc.add_argument("--mode", choices=["char", "whitespace"], default="whitespace")
    bc.add_argument("--out-dir", required=True)
    bc.set_defaults(func=cmd_build_corpus)

    def common(sp, config=False):
        sp.add_argument("--artifacts", required=True, help="dir with vocab.txt/freq.tsv")
        if config:
            sp.add_argument("--config", required=True, help="RunConfig JSON file")

    tr = sub.add_parser("train", help="train a model (optionally dictionary-augmented)")
    common(tr, config=True)
    tr.add_argument("--resume", default=None, help="checkpoint to resume from")
    tr.set_defaults(func=cmd_train)

    for name, fn in [("eval", cmd_eval), ("analyze", cmd_analyze), ("bench", cmd_bench)]:
        sp = sub.add_parser(name)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--config", default=None)
        sp.add_argument("--artifacts", required=True)
        sp.add_argument("--eval-path", required=True)
        if name == "bench":
            sp.add_argument("--reps", type=int, default=30)
            sp.add_argument("--M", type=int, nargs="+", default=[16, 64, 128])
        sp.set_defaults(func=fn)

    sw = sub.add_parser("sweep", help="grid sweep over U/N/M/ratio policies")
    common(sw, config=True)
    sw.add_argument("--U", type=int, nargs="+", default=[64, 512, 4096])
    sw.add_argument("--N", type=int, nargs="+", default=[2])
    sw.add_argument("--M", type=int, nargs="+", default=[64])
    sw.add_argument("--policies", nargs="+", default=["freq"])
    sw.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    sw.add_argument("--info-gain", action="store_true")
    sw.add_argument("--format", choices=["tsv", "jsonl", "both"], default="both")
    sw.set_defaults(func=cmd_sweep)

    rs = sub.add_parser("rescore", help="rescore an N-best file")
    rs.add_argument("--checkpoint", required=True)
    rs.add_argument("--config", default=None)
    rs.add_argument("--artifacts", required=True)
    rs.add_argument("--nbest", required=True)
    rs.add_argument("--output", required=True)
    rs.add_argument("--mode", choices=["rescoring", "fusion"], default="rescoring")
    rs.add_argument("--lambda-sf", type=float, default=0.0)
    rs.add_argument("--lambda-res", type=float, default=0.1)
    rs.set_defaults(func=cmd_rescore)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except (CheckpointError, ConfigError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
