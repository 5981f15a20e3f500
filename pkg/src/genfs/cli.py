"""Command-line entry point: ``genfs <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

from . import checkpoint, metrics
from .config import load_config, parse_config
from .data import ingest, read_jsonl
from .errors import ConfigError, GenFSError
from .model import VARIANTS, TrainConfig, ablate, fit, format_explanation
from .tokenization import DEFAULT_MERGES, FuzzyTokenizer, basic_tokenize, zipf_stats

log = logging.getLogger("genfs")


def _emit(text: str, out=None) -> None:
    (out or sys.stdout).write(text if text.endswith("\n") else text + "\n")


def resolve_config(config_path=None, dataset=None, seed=None, rules=None, variant=None) -> TrainConfig:
    cfg = load_config(config_path) if config_path else parse_config("")
    cfg = replace(cfg, **{k: v for k, v in (("dataset", dataset), ("seed", seed), ("rules", rules)) if v is not None})
    if variant:
        cfg = ablate(cfg, VARIANTS[variant])
    if not cfg.dataset:
        raise ConfigError("no dataset given (set dataset= in the config or pass --dataset)")
    return cfg


def run_train(cfg: TrainConfig, checkpoint_path=None, out=None):
    split = ingest(cfg.dataset, seed=cfg.seed, val_fraction=cfg.val_fraction, test_fraction=cfg.test_fraction)
    model, history = fit(split.train, split.val, cfg, on_epoch=lambda e: _emit(e.to_text(), out))
    if checkpoint_path:
        checkpoint.save(model, checkpoint_path)
    report = None
    if split.test:
        hyps = model.translate([r.src for r in split.test])
        report = metrics.evaluate(hyps, [r.tgt for r in split.test])
        _emit("split=test", out)
        _emit(report.to_text(), out)
    return model, history, report


def run_generate(checkpoint_path, inputs) -> list[str]:
    return checkpoint.load(checkpoint_path).translate(list(inputs))


def run_eval(dataset, checkpoint_path=None, predictions=None) -> metrics.MetricReport:
    records = read_jsonl(dataset)
    refs = [r.tgt for r in records]
    if predictions is not None:
        hyps = Path(predictions).read_text(encoding="utf-8").splitlines()
        if len(hyps) != len(refs):
            raise ConfigError(f"{len(hyps)} predictions for {len(refs)} references")
    elif checkpoint_path is not None:
        hyps = run_generate(checkpoint_path, [r.src for r in records])
    else:
        raise ConfigError("eval needs --checkpoint or --predictions")
    return metrics.evaluate(hyps, refs)


def run_ablate(cfg: TrainConfig, variants=None, out=None) -> dict:
    reports = {}
    for name in variants or list(VARIANTS):
        _emit(f"variant={name}", out)
        _, _, report = run_train(ablate(cfg, VARIANTS[name]), out=out)
        reports[name] = report
    return reports


def run_inspect(checkpoint_path, text: str) -> str:
    return format_explanation(checkpoint.load(checkpoint_path).explain(text))


def _corpus_words(dataset) -> list[list[str]]:
    records = read_jsonl(dataset)
    return [basic_tokenize(r.src) for r in records] + [basic_tokenize(r.tgt) for r in records]


def run_tokenizer_train(dataset, out_path, merges=DEFAULT_MERGES, seed=0) -> FuzzyTokenizer:
    tok = FuzzyTokenizer.fit(_corpus_words(dataset), merges, seed=seed)
    tok.save(out_path)
    return tok


def run_zipf_report(dataset, tokenizer_path=None, threshold: int = 5) -> str:
    words = _corpus_words(dataset)
    if tokenizer_path:
        tok = FuzzyTokenizer.load(tokenizer_path)
        tokens = [t for seq in words for w in seq for t in tok.tokenize_word(w)]
    else:
        tokens = [w for seq in words for w in seq]
    stats = zipf_stats(tokens)
    lines = [f"tokens={len(tokens)}", f"distinct={len(Counter(tokens))}",
             f"fitted_C={stats.fitted_C:.6g}", f"fitted_exponent={stats.fitted_exponent:.6g}",
             f"low_freq_threshold={threshold}", f"low_freq_fraction={stats.low_freq_fraction(threshold):.6f}"]
    lines += [f"rank={r} freq={f}" for r, f in stats.rank_frequency_table]
    return "\n".join(lines) + "\n"


def _merges(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(m) for m in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genfs", description="Fuzzy-rule sequence-to-sequence models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config=True):
        if need_config:
            sp.add_argument("--config", help="key=value config file")
            sp.add_argument("--seed", type=int)
            sp.add_argument("--rules", type=int, metavar="K")
        sp.add_argument("--dataset", help="JSONL file with src/tgt fields")

    sp = sub.add_parser("train", help="fit a model and write a checkpoint")
    common(sp)
    sp.add_argument("--variant", choices=list(VARIANTS))
    sp.add_argument("--checkpoint", required=True)

    sp = sub.add_parser("generate", help="greedy generation from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", action="append", help="source text (repeatable); stdin lines otherwise")

    sp = sub.add_parser("eval", help="score a checkpoint or a predictions file against a dataset")
    common(sp, need_config=False)
    sp.add_argument("--checkpoint")
    sp.add_argument("--predictions", help="one hypothesis per line, aligned with the dataset")

    sp = sub.add_parser("ablate", help="train the ablation variants and report test metrics")
    common(sp)
    sp.add_argument("--variant", choices=list(VARIANTS), action="append")

    sp = sub.add_parser("inspect", help="print the rule-level explanation for one input")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)

    sp = sub.add_parser("tokenizer-train", help="fit a fuzzy tokenizer on a dataset")
    common(sp, need_config=False)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--merges", type=_merges, default=DEFAULT_MERGES)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("zipf-report", help="rank/frequency table and low-frequency fraction")
    common(sp, need_config=False)
    sp.add_argument("--tokenizer", help="tokenizer model; basic tokens when omitted")
    sp.add_argument("--threshold", type=int, default=5)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "train":
            cfg = resolve_config(args.config, args.dataset, args.seed, args.rules, args.variant)
            run_train(cfg, args.checkpoint)
        elif args.command == "generate":
            inputs = args.input if args.input else [line.rstrip("\n") for line in sys.stdin]
            for line in run_generate(args.checkpoint, inputs):
                _emit(line)
        elif args.command == "eval":
            if not args.dataset:
                raise ConfigError("eval needs --dataset")
            _emit(run_eval(args.dataset, args.checkpoint, args.predictions).to_text())
        elif args.command == "ablate":
            cfg = resolve_config(args.config, args.dataset, args.seed, args.rules)
            run_ablate(cfg, args.variant)
        elif args.command == "inspect":
            _emit(run_inspect(args.checkpoint, args.input))
        elif args.command == "tokenizer-train":
            if not args.dataset:
                raise ConfigError("tokenizer-train needs --dataset")
            tok = run_tokenizer_train(args.dataset, args.out, args.merges, args.seed)
            _emit(f"scales={tok.K} merges={','.join(str(m.merge_count) for m in tok.models)} out={args.out}")
        elif args.command == "zipf-report":
            if not args.dataset:
                raise ConfigError("zipf-report needs --dataset")
            _emit(run_zipf_report(args.dataset, args.tokenizer, args.threshold))
    except (GenFSError, ValueError, OSError) as exc:
        print(f"genfs {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
