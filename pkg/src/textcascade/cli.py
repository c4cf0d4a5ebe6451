"""Command-line entry point.

Verbs mirror the experiment pipeline: `synth` writes a corpus, `ingest`
validates one, `train-rnn` fits a first-stage checkpoint, `build-index`
caches the slow stage's feature bags, `profile` emits the alpha/rho curve,
`sweep` runs a model roster and writes reports, and `verify` reruns the
theorem and lemma suites, exiting nonzero on any falsification.

Flags may be seeded from a TOML file via --config (one table per verb);
explicit flags win. TEXTCASCADE_WORKERS overrides the worker count.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import cascade, harness, recurrent


def _load_config(path: str | None, section: str) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as handle:
        data = tomllib.load(handle)
    table = data.get(section, {})
    if not isinstance(table, dict):
        raise SystemExit(f"config section [{section}] must be a table")
    return {key.replace("-", "_"): value for key, value in table.items()}


def _merge(args: argparse.Namespace, config: dict, defaults: dict) -> argparse.Namespace:
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, config.get(key, default))
    return args


def _add_corpus_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--corpus", required=True, help="TSV of text-id, class, text")
    parser.add_argument("--parses", default=None, help="CoNLL-U parses keyed by sent_id")
    parser.add_argument("--vectors", required=True, help="word2vec text-format vectors")
    parser.add_argument("--splits", default=None, help="TSV of text-id, split")
    parser.add_argument("--cache", default=None, help="feature-bag cache (.npz)")
    parser.add_argument("--seed", type=int, default=None, help="root seed")
    parser.add_argument("--holdout", type=float, default=None, help="holdout fraction")
    parser.add_argument(
        "--test-fraction", type=float, default=None, help="share of holdout used for test"
    )
    parser.add_argument("--case-fold", action="store_true", help="lowercase vocabulary")
    parser.add_argument("--config", default=None, help="TOML config file")


_INGEST_DEFAULTS = {"seed": 0, "holdout": 0.1, "test_fraction": 0.5}


def _ingest_from_args(args: argparse.Namespace, section: str) -> harness.ExperimentData:
    config = _load_config(args.config, section)
    _merge(args, config, _INGEST_DEFAULTS)
    ingest_config = harness.IngestConfig(
        case_fold=bool(args.case_fold or config.get("case_fold", False)),
        holdout_fraction=args.holdout,
        test_fraction=args.test_fraction,
        seed=args.seed,
        splits_path=args.splits or config.get("splits"),
    )
    return harness.ingest(
        args.corpus,
        args.parses or config.get("parses"),
        args.vectors,
        ingest_config,
        cache_path=args.cache or config.get("cache"),
    )


def _cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config(args.config, "synth")
    defaults = {
        "classes": 50,
        "samples_per_class": None,
        "vocab": 200,
        "dim": 25,
        "noise": 0.1,
        "seed": 0,
        "valid_queries": 100,
        "test_queries": 100,
    }
    _merge(args, config, defaults)
    data = harness.synth_corpus(
        harness.SynthConfig(
            classes=args.classes,
            samples_per_class=args.samples_per_class,
            vocab=args.vocab,
            dim=args.dim,
            noise=args.noise,
            seed=args.seed,
            valid_queries=args.valid_queries,
            test_queries=args.test_queries,
        )
    )
    paths = harness.write_corpus_files(data, args.out)
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


def _cmd_ingest(args: argparse.Namespace) -> int:
    data = _ingest_from_args(args, "ingest")
    corpus = data.corpus
    counts = {split: len(corpus.split_records(split)) for split in harness.SPLIT_NAMES}
    print(
        f"corpus OK: {len(corpus.records)} records, {len(corpus.labels)} classes, "
        f"splits {counts}"
    )
    unseen = corpus.unseen_classes()
    if unseen:
        print(f"warning: {len(unseen)} holdout classes have no training sample: "
              f"{list(unseen)[:5]}")
    if args.cache:
        print(f"feature-bag cache at {args.cache}")
    return 0


def _cmd_train_rnn(args: argparse.Namespace) -> int:
    data = _ingest_from_args(args, "train")
    config = _load_config(args.config, "train")
    _merge(args, config, {"cell": "gru", "hidden": 32, "epochs": 10, "lr": 0.5})
    train_config = recurrent.TrainConfig(
        hidden_dim=args.hidden,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        cell=args.cell,
    )
    params = recurrent.train(harness.training_pairs(data), data.table, train_config)
    recurrent.save_params(params, args.out)
    print(
        f"trained {args.cell} (h={args.hidden}, epochs={args.epochs}, lr={args.lr}, "
        f"seed={args.seed}) over {data.index.class_count} classes -> {args.out}"
    )
    return 0


def _cmd_build_index(args: argparse.Namespace) -> int:
    if args.cache is None:
        args.cache = args.out
    data = _ingest_from_args(args, "build-index")
    total = sum(len(s) for s in data.index.classes.values())
    print(f"indexed {total} samples across {data.index.class_count} classes -> {args.cache}")
    return 0


def _cmd_profile(args: argparse.Namespace) -> int:
    data = _ingest_from_args(args, "profile")
    params = recurrent.load_params(args.checkpoint)
    valid, unseen = harness.prepare_queries(data, args.split)
    if unseen:
        print(f"note: skipping {len(unseen)} unseen-class queries", file=sys.stderr)
    curve = cascade.estimate_profiles(valid, params, data.index, args.n)
    harness.write_profile_csv(curve, args.out)
    print(
        f"profiled {len(valid)} {args.split} queries over {curve.class_count} classes; "
        f"{len(curve.change_points)} alpha change points -> {args.out}"
    )
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    data = _ingest_from_args(args, "sweep")
    config = _load_config(args.config, "sweep")
    defaults = {
        "n": 10,
        "roster": "gru,sn-vectors,cascade:gru",
        "lsh_bits": "5,10,15,20",
        "t_policy": "candidates",
        "extra_ts": "",
        "timing_reps": 1,
        "hidden": 32,
        "epochs": 10,
        "lr": 0.5,
        "workers": 1,
    }
    _merge(args, config, defaults)

    def _ints(raw) -> tuple[int, ...]:
        if isinstance(raw, (list, tuple)):
            return tuple(int(v) for v in raw)
        return tuple(int(v) for v in str(raw).split(",") if v.strip())

    roster = args.roster if isinstance(args.roster, (list, tuple)) else args.roster.split(",")
    spec = harness.SweepSpec(
        n=args.n,
        roster=tuple(m.strip() for m in roster if m.strip()),
        lsh_bits=_ints(args.lsh_bits),
        cascade_t_policy=args.t_policy,
        extra_ts=_ints(args.extra_ts),
        seed=args.seed,
        timing_reps=args.timing_reps,
        hidden_dim=args.hidden,
        epochs=args.epochs,
        learning_rate=args.lr,
        workers=args.workers,
    )
    result = harness.evaluate(data, spec)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    harness.write_reports_jsonl(result.reports, outdir / "reports.jsonl")
    table = harness.format_report_table(result.reports)
    (outdir / "table.txt").write_text(table, encoding="utf-8")
    for cell, curve in result.curves.items():
        harness.write_profile_csv(curve, outdir / f"profile_{cell}.csv")
    print(table, end="")
    if result.selected_t:
        print(f"selected t: {result.selected_t}")
    if result.unseen_query_ids:
        print(f"unseen-class queries (auto-miss): {list(result.unseen_query_ids)}")
    print(f"reports -> {outdir / 'reports.jsonl'}")
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    data = _ingest_from_args(args, "verify")
    config = _load_config(args.config, "verify")
    defaults = {
        "n": 10,
        "roster": "cascade:gru",
        "hidden": 32,
        "epochs": 10,
        "lr": 0.5,
    }
    _merge(args, config, defaults)
    roster = args.roster if isinstance(args.roster, (list, tuple)) else args.roster.split(",")
    spec = harness.SweepSpec(
        n=args.n,
        roster=tuple(m.strip() for m in roster if m.strip()),
        seed=args.seed,
        hidden_dim=args.hidden,
        epochs=args.epochs,
        learning_rate=args.lr,
    )
    ok, lines = harness.verify_suite(data, spec)
    for line in lines:
        print(line)
    print("verification " + ("PASSED" if ok else "FAILED"))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textcascade",
        description="Cascaded text classification: recurrent filtering + syntactic reranking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus on disk")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--samples-per-class", type=int, default=None)
    p.add_argument("--vocab", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--valid-queries", type=int, default=None)
    p.add_argument("--test-queries", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="validate corpus files and build the index")
    _add_corpus_inputs(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train-rnn", help="train a first-stage checkpoint")
    _add_corpus_inputs(p)
    p.add_argument("--cell", choices=("gru", "lstm"), default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.set_defaults(func=_cmd_train_rnn)

    p = sub.add_parser("build-index", help="write the feature-bag cache")
    _add_corpus_inputs(p)
    p.add_argument("--out", required=True, help="cache path (.npz)")
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("profile", help="emit the alpha/rho curve as CSV")
    _add_corpus_inputs(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--split", choices=("valid", "test"), default="valid")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("sweep", help="evaluate a model roster and write reports")
    _add_corpus_inputs(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--roster", default=None, help="comma-separated model list")
    p.add_argument("--lsh-bits", default=None, help="comma-separated P values")
    p.add_argument("--t-policy", choices=("candidates", "best"), default=None)
    p.add_argument("--extra-ts", default=None, help="extra candidate counts to evaluate")
    p.add_argument("--timing-reps", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("verify", help="run the theorem/lemma suites")
    _add_corpus_inputs(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--roster", default=None, help="cascade models to verify")
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (harness.IngestError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
