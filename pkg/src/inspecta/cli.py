"""Command-line entry point: ``inspecta <subcommand>``.

Exit codes: 0 success, 1 a run failed, 2 bad configuration or arguments.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import harness, learner
from .dataset import ManifestError
from .plot import render_roc_svg
from .syngen import GenerationError, gen_dataset, load_generator_config

log = logging.getLogger("inspecta")

AGG = {"max": "max_box", "min": "min_box", "max_box": "max_box", "min_box": "min_box"}


def _hyper(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise harness.ConfigError(f"cannot read hyperparameters {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise harness.ConfigError("hyperparameter file must hold a JSON object")
    return doc


def cmd_gen(args: argparse.Namespace) -> int:
    try:
        cfg = load_generator_config(args.config)
    except (OSError, ValueError) as exc:
        raise harness.ConfigError(str(exc)) from None
    m = gen_dataset(cfg, args.out)
    print(Path(args.out) / m.name / "manifest.json")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    ref = harness.DatasetRef(args.manifest, args.split)
    params = harness.train_on(ref, args.kind, args.seed, _hyper(args.hyper))
    learner.save_model(params, args.out)
    print(args.out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        params = learner.load_model(args.model)
    except (OSError, learner.ModelFileError) as exc:
        raise harness.ConfigError(f"cannot load model {args.model}: {exc}") from None
    doc = harness.evaluate_saved_model(
        params, harness.DatasetRef(args.manifest, args.split), args.out,
        aggregation=AGG[args.aggregation], score_threshold=args.score_threshold,
    )
    ap = "" if doc["ap"] is None else f" ap={doc['ap']:.4f}"
    print(f"auc={doc['auc']:.4f}{ap} -> {args.out}")
    return 0


def cmd_matrix(args: argparse.Namespace) -> int:
    configs = harness.load_matrix_config(args.config)
    result = harness.run_matrix(configs, args.out)
    sys.stdout.write(result.summary_csv())
    return 1 if result.failed else 0


def cmd_ablate(args: argparse.Namespace) -> int:
    test = harness.DatasetRef.parse(args.test, "holdout")
    report = harness.run_ablation(args.manifest, args.kind, test, args.seed, args.out,
                                  hyperparameters=_hyper(args.hyper))
    d = report.to_dict()
    print(f"k={d['k']} baseline auc={d['baseline']['auc']:.4f}")
    for c in d["clusters"]:
        print(f"  excl-{c['cluster']}: excluded {c['excluded']} ({c['fraction']:.1%}) "
              f"auc={c['auc']:.4f} delta={c['delta_auc']:+.4f}")
    return 0


def cmd_plot_roc(args: argparse.Namespace) -> int:
    paths = [p for p in args.reports.split(",") if p]
    if not paths:
        raise harness.ConfigError("--reports needs at least one report path")
    curves = []
    for p in paths:
        try:
            doc = harness.load_report(p)
        except (OSError, ValueError) as exc:
            raise harness.ConfigError(f"cannot read report {p}: {exc}") from None
        cfg = doc.get("config")
        if cfg:
            name = f"exp {cfg['experiment_id']} {cfg['model_kind']} ({doc.get('test_dataset', '')})"
        else:
            name = f"{doc.get('model_kind', Path(p).stem)} ({doc.get('test_dataset', '')})"
        curves.append((name, harness.report_curve(doc)))
    render_roc_svg(curves, args.out)
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="inspecta", description="Defect-detection generalization benchmark")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a classifier or detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", required=True, choices=learner.KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train", choices=("train", "validation", "holdout"))
    p.add_argument("--hyper", help="JSON file of training overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True, choices=("train", "validation", "holdout"))
    p.add_argument("--aggregation", default="max", choices=sorted(AGG))
    p.add_argument("--score-threshold", type=float, default=0.0,
                   help="detector boxes below this score are dropped before aggregation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="run an experiment matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("ablate", help="cluster-exclusion ablation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", required=True, choices=learner.KINDS)
    p.add_argument("--test", required=True, help="<manifest>:<split>")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hyper", help="JSON file of training overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot-roc", help="draw ROC curves from reports")
    p.add_argument("--reports", required=True, help="comma-separated report paths")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_roc)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, ManifestError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, don't dump a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
