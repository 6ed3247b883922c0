"""``calib-lab`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .data import generate_toy_corpus, write_dataset, write_lexicon


def _train(args) -> int:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    flat = cfg.to_flat()
    if args.recipe:
        flat = {**flat, **harness.recipe(args.recipe, low_resource=(args.fraction or cfg.fraction) < 1.0)}
        if flat["name"] == harness.ExperimentConfig.name:
            flat["name"] = args.recipe
    if args.data:
        flat["data_path"] = args.data
    if args.fraction is not None:
        flat["fraction"] = args.fraction
    if args.seeds is not None:
        flat["seeds"] = list(range(args.seeds))
    if args.epochs is not None:
        flat["epochs"] = args.epochs
    if args.out:
        flat["out_dir"] = args.out
    cfg = harness.from_flat(flat)
    record = harness.train(cfg)
    s = record.summary
    print(f"{record.name} [{record.config_hash}] seeds={len(record.seeds)} "
          f"acc={100 * s['accuracy']['mean']:.2f} ece_x100={100 * s['ece']['mean']:.2f} "
          f"nll_x100={100 * s['nll']['mean']:.2f}")
    if cfg.out_dir:
        print(f"report written to {cfg.out_dir}")
    return 0


def _eval(args) -> int:
    rep = harness.evaluate_checkpoint(args.checkpoint, args.data, args.format, args.bins)
    print(json.dumps({**rep.to_dict(), "accuracy_pct": rep.accuracy_pct, "ece_x100": rep.ece_x100,
                      "nll_x100": rep.nll_x100}, indent=2))
    return 0


def _gen_toy(args) -> int:
    corpus = generate_toy_corpus(num_classes=args.classes, size=args.size, seed=args.seed)
    out = Path(args.out)
    write_dataset(corpus.splits, out, args.format)
    write_lexicon(corpus.lexicon, out / "lexicon.tsv")
    print(f"wrote {len(corpus.splits.train)}/{len(corpus.splits.dev)}/{len(corpus.splits.test)} "
          f"train/dev/test examples to {out}")
    return 0


def _report(args) -> int:
    records = harness.collect_reports(args.inp)
    if not records:
        print(f"no report.json found under {args.inp}", file=sys.stderr)
        return 1
    harness.write_summary_csv(records, args.out)
    print(f"summarized {len(records)} runs into {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calib-lab", description="Calibration experiments for text classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration over several seeds")
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--recipe", choices=harness.RECIPES)
    p.add_argument("--data", help="dataset directory or builtin:toy / builtin:trec-like")
    p.add_argument("--fraction", type=float)
    p.add_argument("--seeds", type=int, help="run seeds 0..N-1")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or seed manifest on a test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("tsv", "jsonl"))
    p.add_argument("--bins", type=int, default=15)
    p.set_defaults(func=_eval)

    p = sub.add_parser("gen-toy", help="write a synthetic keyword corpus and its synonym lexicon")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--size", type=int, default=1200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("tsv", "jsonl"), default="tsv")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_gen_toy)

    p = sub.add_parser("report", help="collect report.json files into one summary CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"calib-lab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
