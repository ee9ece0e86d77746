"""Command-line entry point: ``mapignn <command> [options]``.

Commands
    synth      write a synthetic dataset
    train      cross-validate, write the report, loss history and test scores
    eval       cross-validate, write the report and loss history
    construct  write per-patient activation graphs and influence matrices
    ablate     component / perturbation / PAF studies as plain-text tables
    metrics    recompute a report from a ``label,score`` file

Exit status is 0 on success, 2 for usage and validation errors (bad flags,
missing files, invalid configuration or input files) and 1 for failures
during a run.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import dataio, pipeline
from .config import TrainConfig, load_config, parse_config
from .errors import ConfigError, ContractError, MapiError, ParseError, StratificationError
from .metrics import MetricReport, compute_metrics

log = logging.getLogger("mapignn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MAPI_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MAPI_SEED must be an integer, got {env!r}") from None


def _config(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.set:
        cfg = parse_config("\n".join(args.set), cfg)
    seed = _seed(args)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def _dataset(args):
    return dataio.load_dataset(args.data)


def _sibling(out, suffix):
    p = Path(out)
    return p.with_name(p.stem + suffix)


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    seed = _seed(args)
    spec = dataio.SyntheticSpec(
        N=args.n,
        informative=args.informative,
        noise=args.noise,
        separation=args.separation,
        seed=7 if seed is None else seed,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    dataio.save_dataset(dataio.generate_synthetic(spec), args.out)
    print(f"wrote {spec.N} patients to {args.out}")


def _evaluate(args, with_scores):
    cfg = _config(args)
    ds = _dataset(args)
    report = pipeline.kfold_evaluate(ds, cfg, jobs=args.jobs)
    _write(args.out, report.to_text())
    dataio.save_history(_sibling(args.out, ".history.csv"), report.histories)
    if with_scores:
        ids, labels, scores = [], [], []
        for res in report.fold_results:
            ids.extend(ds.ids[i] for i in res.test_idx)
            labels.extend(ds.labels[res.test_idx])
            scores.extend(res.probabilities[:, 1])
        dataio.save_scores(_sibling(args.out, ".scores.csv"), labels, scores, ids)
    mean = report.mean
    print(f"ACC {mean['ACC']:.4f}  AUC {mean['AUC']:.4f}  SCORE {mean['SCORE']:.4f}  -> {args.out}")


def cmd_train(args):
    _evaluate(args, with_scores=True)


def cmd_eval(args):
    _evaluate(args, with_scores=False)


def cmd_construct(args):
    cfg = _config(args)
    ds = _dataset(args)
    stacks, influence = pipeline.construct(ds, cfg, epochs=args.epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for stack, matrix in zip(stacks, influence):
        dataio.export_graphs(stack, out / f"{stack.patient_id}.graphs.txt", cfg.k, cfg.paf)
        dataio.export_influence(matrix, out / f"{stack.patient_id}.influence.csv")
    print(f"wrote {len(stacks)} graph stacks to {out}")


ABLATION_COLUMNS = ("ACC", "AUC", "PRE", "REC", "F1")


def cmd_ablate(args):
    cfg = _config(args)
    ds = _dataset(args)
    studies = ("components", "fpm", "paf") if args.study == "all" else (args.study,)
    parts = []
    for study in studies:
        if study == "components":
            reports = pipeline.run_ablation(ds, cfg, jobs=args.jobs)
            # the full model goes last, below its ablated variants
            rows = [(name, reports[name]) for name in list(reports)[1:] + ["full"]]
            parts.append(pipeline.format_table(rows, "Method", ABLATION_COLUMNS))
        elif study == "fpm":
            rows = pipeline.run_sweep(ds, cfg, "fpm", jobs=args.jobs)
            parts.append(pipeline.format_table(rows, "Perturbation Method"))
        else:
            rows = pipeline.run_sweep(ds, cfg, "paf", jobs=args.jobs)
            parts.append(pipeline.format_table(rows, "Proportion (PAF)"))
    text = "\n".join(parts)
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)


def cmd_metrics(args):
    labels, scores = dataio.load_scores(args.scores)
    entry = compute_metrics(labels, scores, args.threshold, allow_single_class=True)
    text = MetricReport(folds=[entry]).to_text()
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)


# ---------------------------------------------------------------- parser


def build_parser():
    parser = _Parser(prog="mapignn", description="Graph classification of multimodal tabular cohorts.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def common(p, data=True):
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed (env MAPI_SEED)")
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        if data:
            p.add_argument("--data", required=True, help="dataset file")
        p.add_argument("--jobs", type=int, default=1, help="folds evaluated in parallel")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n", type=int, default=440)
    p.add_argument("--informative", type=int, default=4)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=4.0)
    p.set_defaults(func=cmd_synth)

    for name, func, text in (
        ("train", cmd_train, "cross-validate and keep per-patient test scores"),
        ("eval", cmd_eval, "cross-validate and write a metric report"),
    ):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--out", required=True, help="report path; history and scores go beside it")
        p.set_defaults(func=func)

    p = sub.add_parser("construct", help="export activation graphs and influence matrices")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=0, help="train on all patients first")
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("ablate", help="component, perturbation and PAF studies")
    common(p)
    p.add_argument("--study", choices=("components", "fpm", "paf", "all"), default="components")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("metrics", help="metric report from a label,score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)
    return parser


_VALIDATION = (ConfigError, ParseError, StratificationError, FileNotFoundError, IsADirectoryError)


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"mapignn: usage error: {exc}", file=sys.stderr)
        return 2
    except _VALIDATION as exc:
        print(f"mapignn: {_one_line(exc)}", file=sys.stderr)
        return 2
    except ContractError as exc:
        # malformed inputs reach the library as contract violations
        print(f"mapignn: invalid input: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (MapiError, OSError, ValueError) as exc:
        print(f"mapignn: error: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc):
    text = str(exc) or type(exc).__name__
    return " ".join(text.split())


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
