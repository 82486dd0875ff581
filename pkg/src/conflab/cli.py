"""Command-line interface: train / score / experiment.

Exit codes are a stable contract: 0 success, 2 config error, 3 training
divergence, 4 checkpoint/corpus mismatch. Commands only write inside their
run directory, and every emitted file gets a checksummed manifest entry.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, resolve_out_dir
from .data import generate_corpus, load_parallel_text, write_corpus_metadata
from .errors import (
    ConfigError,
    ConflabError,
    DivergenceError,
    VocabMismatchError,
)
from .experiments import (
    run_density_experiment,
    run_gradcheck_bundle,
    run_noise_experiment,
    run_ood_experiment,
    run_qe_correlation,
    score_corpus,
)
from .inference import DEFAULT_MC_PASSES
from .model import init_model, load_checkpoint, save_checkpoint
from .rng import RngState
from .runio import RunDir, write_csv, write_json
from .training import evaluate_token_accuracy, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_MISMATCH = 4

EXPERIMENT_KINDS = ("noise", "ood", "qe-corr", "density", "gradcheck")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conflab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model on the configured task")
    _config_args(p_train)

    p_score = sub.add_parser("score", help="force-decode a corpus and emit metrics CSV")
    p_score.add_argument("--checkpoint", required=True)
    p_score.add_argument("--src", help="source text file (one sentence per line)")
    p_score.add_argument("--tgt", help="target text file (one sentence per line)")
    p_score.add_argument(
        "--task-test", type=int, default=None,
        help="score N freshly generated task sentences instead of files",
    )
    p_score.add_argument(
        "--mc", type=int, nargs="?", const=DEFAULT_MC_PASSES, default=None,
        help=f"add D-family columns from K dropout passes (default K={DEFAULT_MC_PASSES})",
    )
    p_score.add_argument("--dropout", type=float, default=None, help="MC dropout rate")
    _config_args(p_score)

    p_exp = sub.add_parser("experiment", help="run an experiment harness")
    p_exp.add_argument("--kind", required=True, choices=EXPERIMENT_KINDS)
    p_exp.add_argument(
        "--assert", dest="assert_checks", action="store_true",
        help="exit nonzero when the bundle's directional checks fail",
    )
    _config_args(p_exp)
    return parser


def _config_args(p):
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="KEY.PATH=VALUE", help="override a config field (JSON-parsed value)",
    )
    p.add_argument("--out", default=None, help="run directory")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "score":
            return cmd_score(args)
        return cmd_experiment(args)
    except (ConfigError,) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except VocabMismatchError as e:
        print(f"artifact mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except ConflabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _stamp(prefix: str) -> str:
    return f"{prefix}-{time.strftime('%Y%m%d-%H%M%S')}"


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)  # validates before any writes
    out = resolve_out_dir(args.out, cfg.out_dir, _stamp("train"))
    run = RunDir(out)
    corpus = generate_corpus(cfg.task, cfg.experiment["corpus_size"])
    vocab = corpus.vocab
    model = init_model(cfg.model, RngState(cfg.model.seed))
    run.adopt(out / "train_log.jsonl")
    try:
        train(model, corpus, cfg.schedule, run_dir=out, vocab=vocab)
    except DivergenceError:
        run.write_manifest(cfg.echo(), {"status": "diverged"})
        raise
    save_checkpoint(run.path("checkpoint.npz"), model, vocab, extra={"steps": cfg.schedule.total_steps})
    accuracy = evaluate_token_accuracy(model, corpus)
    write_json(run.path("summary.json"), {"final_train_accuracy": accuracy})
    run.write_manifest(cfg.echo(), {"status": "ok"})
    print(out)
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = load_config(args.config, args.overrides)
    model, vocab, _ = load_checkpoint(args.checkpoint)
    if args.task_test is not None:
        from dataclasses import replace

        spec = replace(cfg.task, seed=cfg.task.seed + 1013904223)
        if spec.vocab_size != model.config.vocab_size:
            raise VocabMismatchError(
                f"task vocab {spec.vocab_size} != checkpoint vocab {model.config.vocab_size}"
            )
        corpus = generate_corpus(spec, args.task_test)
        references = None
    elif args.src and args.tgt:
        corpus, skipped = load_parallel_text(args.src, args.tgt, vocab=vocab)
        if skipped:
            print(f"warning: skipped {skipped} empty lines", file=sys.stderr)
        references = None
    else:
        raise ConfigError("score needs either --src/--tgt files or --task-test N")
    out = resolve_out_dir(args.out, cfg.out_dir, _stamp("score"))
    run = RunDir(out)
    scored, _ = score_corpus(
        model,
        corpus,
        references=references,
        mc=args.mc,
        mc_dropout=args.dropout,
        rng=RngState(cfg.seed).stream("cli/score"),
    )
    rows = [s.as_row() for s in scored]
    fields = list(rows[0])
    if args.mc is None:
        fields = [f for f in fields if not f.startswith("d_")]
    write_csv(run.path("scores.csv"), fields, rows)
    write_corpus_metadata(corpus, run.path("corpus_meta.jsonl"))
    run.write_manifest(cfg.echo(), {"status": "ok", "mc": args.mc})
    print(out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = resolve_out_dir(args.out, cfg.out_dir, _stamp(f"exp-{args.kind}"))
    exp = cfg.experiment
    if args.kind == "gradcheck":
        summary = run_gradcheck_bundle(out_dir=out, points=exp["gradcheck_points"])
        _finalize(out, cfg, summary)
        return EXIT_OK if summary["pass"] else 1
    if args.kind == "noise":
        summary = run_noise_experiment(
            cfg.task, cfg.model, cfg.schedule,
            rates=tuple(exp["noise_rates"]),
            word_rate=exp["word_rate"],
            corpus_size=exp["corpus_size"],
            out_dir=out,
        )
        checks = _noise_checks(summary)
    elif args.kind == "ood":
        corpus = generate_corpus(cfg.task, exp["corpus_size"])
        model = init_model(cfg.model, RngState(cfg.model.seed))
        train(model, corpus, cfg.schedule)
        summary = run_ood_experiment(
            model, cfg.task,
            n_test=exp["n_test"], beam_size=exp["beam_size"], alpha=exp["alpha"],
            out_dir=out, train_corpus=corpus,
        )
        checks = _ood_checks(summary)
    elif args.kind == "qe-corr":
        summary = run_qe_correlation(
            cfg.task, cfg.model, cfg.schedule,
            train_noise=exp["train_noise"], corpus_size=exp["corpus_size"],
            n_test=exp["n_test"], mc=exp["mc_passes"], out_dir=out,
        )
        checks = _qe_checks(summary)
    else:
        summary = run_density_experiment(
            cfg.task, cfg.model, cfg.schedule,
            corpus_size=exp["corpus_size"], n_test=exp["n_test"],
            test_noise=exp["test_noise"], out_dir=out,
        )
        checks = {"has_both_classes": summary["n_correct"] > 0 and summary["n_incorrect"] > 0}
    summary["checks"] = checks
    _finalize(out, cfg, summary)
    if args.assert_checks and not all(checks.values()):
        failed = [k for k, v in checks.items() if not v]
        print(f"checks failed: {failed}", file=sys.stderr)
        return 1
    return EXIT_OK


def _finalize(out, cfg: RunConfig, summary: dict) -> None:
    from .runio import SCHEMA_VERSION

    run = RunDir(out)
    for p in Path(out).rglob("*"):
        if p.is_file() and p.name != "manifest.json":
            run.adopt(p)
    clean = {k: v for k, v in summary.items() if not k.startswith("_")}
    clean["schema_version"] = SCHEMA_VERSION
    clean["seed"] = cfg.seed
    clean["config"] = cfg.echo()
    write_json(run.path("bundle.json"), clean)
    run.write_manifest(cfg.echo(), {"status": "ok"})


def _noise_checks(summary) -> dict:
    results = [r for r in summary["results"] if r["conf"] is not None]
    checks = {}
    for r in results:
        checks[f"conf_beats_prob@{r['rate']}"] = r["conf"]["auroc"] >= r["prob"]["auroc"] - 0.02
        checks[f"conf_auroc@{r['rate']}>=0.8"] = r["conf"]["auroc"] >= 0.80
    return checks


def _ood_checks(summary) -> dict:
    checks = {}
    for row in summary["detection"]:
        if row["corpus"] == "vocab-shift":
            checks["vocab_shift_conf_auroc>=0.9"] = row["conf_auroc"] >= 0.90
        if row["corpus"] == "rule-shift":
            checks["rule_shift_conf_vs_prob"] = row["conf_auroc"] >= row["prob_auroc"] - 0.02
    bins = {r["bin"]: r for r in summary["frequency_bins"]}
    if bins.get("High", {}).get("mean_confidence") is not None and bins.get("Low", {}).get("mean_confidence") is not None:
        checks["low_freq_conf<high_freq_conf"] = (
            bins["Low"]["mean_confidence"] < bins["High"]["mean_confidence"]
        )
    return checks


def _qe_checks(summary) -> dict:
    r = summary["pearson"]
    checks = {"conf_pearson>=0.3": r.get("conf", 0.0) >= 0.3}
    if "d_comb" in r:
        scored = summary.get("_scored", [])
        checks["d_comb_identity"] = all(
            s.d_comb == s.d_tp + s.d_conf for s in scored if s.d_comb is not None
        )
    return checks


if __name__ == "__main__":
    sys.exit(main())
