"""Command-line entry point.

Exit codes: 0 success, 1 a verification sweep or training run failed,
2 bad usage or bad input (unreadable file, malformed value, invalid config).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import DataError, Schema, load_csv, partition_by, save_csv, two_group_fixture
from .evaluation import (
    EvaluationError,
    error_analysis,
    evaluate,
    top_m_proportion,
    weight_distribution_dump,
    write_diagnostics_csv,
)
from .irw import global_epoch_weights
from .model import ModelError, model_from_dict, model_to_dict
from .objective import ObjectiveError
from .outlier import OutlierError
from .trainer import METHODS, SCHEMES, ConfigError, TrainConfig, TrainingError, train, with_overrides
from .verify import SUITES, run_suite

log = logging.getLogger("alphafair")

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 1, 2
FIXTURE_EVAL_SEED_OFFSET = 10_000

INPUT_ERRORS = (DataError, ConfigError, ModelError, ObjectiveError, OutlierError, EvaluationError, OSError)


class InputError(Exception):
    """Bad usage detected after argument parsing."""


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


# ---------------------------------------------------------------- estimate-alpha


def cmd_estimate_alpha(args) -> int:
    if args.simulate:
        if not 0.0 <= args.true_alpha <= 1.0:
            raise InputError(f"--true-alpha must lie in [0, 1], got {args.true_alpha}")
        if args.n < 1:
            raise InputError("--n must be >= 1")
        reports = dataio.simulate_survey(args.true_alpha, args.n, args.seed, args.p1, args.p2)
    else:
        reports = dataio.read_reports(args.reports, args.p1, args.p2)
    lo, hi = dataio.alpha_interval(reports, args.z)
    print(
        _dump(
            {
                "alpha_hat": dataio.estimate_alpha(reports),
                "interval": [lo, hi],
                "z": args.z,
                "n_reports": int(len(reports.reports)),
                "p1": reports.p1,
                "p2": reports.p2,
                "privacy_ratio": dataio.rr_privacy_ratio(reports.p1, reports.p2),
                "source": "simulate" if args.simulate else str(args.reports),
            }
        )
    )
    return EXIT_OK


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    ds = two_group_fixture(
        n=args.n,
        minority_frac=args.minority_frac,
        outlier_frac=args.outlier_frac,
        seed=args.seed,
        d=args.d,
        separation=args.separation,
        angle=args.angle,
        minority_std=args.minority_std,
        displacement=args.displacement,
    )
    save_csv(ds, args.out)
    print(_dump({"path": str(args.out), "n_rows": len(ds), "n_features": ds.n_features,
                 "sensitive": sorted(ds.sensitive)}))
    return EXIT_OK


# ---------------------------------------------------------------- shared data helpers


def _schema(args) -> Schema:
    return Schema(label=args.label, sensitive=_csv_list(args.sensitive))


def _group_attrs(args) -> tuple[str, ...]:
    attrs = _csv_list(args.group_attr)
    missing = [a for a in attrs if a not in _csv_list(args.sensitive)]
    if missing:
        raise InputError(f"--group-attr {missing} must also be listed in --sensitive")
    return attrs


def _load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such checkpoint: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return model_from_dict(data), data.get("code_tables")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: not a model checkpoint ({exc})") from None


# ---------------------------------------------------------------- train


def _train_config(args) -> TrainConfig:
    config = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {f.name: getattr(args, f.name, None) for f in fields(TrainConfig)}
    return with_overrides(config, **overrides)


def cmd_train(args) -> int:
    config = _train_config(args)
    attrs = _group_attrs(args)
    if args.fixture:
        train_set = two_group_fixture(n=args.fixture_n, outlier_frac=args.fixture_outlier_frac, seed=config.seed)
        eval_set = two_group_fixture(n=args.fixture_n, seed=config.seed + FIXTURE_EVAL_SEED_OFFSET)
    else:
        if args.data is None:
            raise InputError("train needs --data CSV or --fixture")
        train_set = load_csv(args.data, _schema(args))
        eval_set = None
        if args.eval_data is not None:
            eval_set = load_csv(args.eval_data, _schema(args), code_tables=train_set.code_tables)
    target = eval_set if eval_set is not None else train_set
    partition = partition_by(target, attrs)

    model, tlog = train(config, train_set, eval_set, partition if eval_set is not None else None)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = {**model_to_dict(model), "code_tables": train_set.code_tables, "config": config.to_dict()}
    (out / "model.json").write_text(json.dumps(ckpt, sort_keys=True) + "\n", encoding="utf-8")
    tlog.write_ndjson(out / "log.ndjson", include_timing=args.timing)
    (out / "removals.json").write_text(_dump(tlog.removals) + "\n", encoding="utf-8")
    echo = {**config.to_dict(), "evaluated_on": "eval" if eval_set is not None else "train"}
    report = evaluate(model, target, partition, echo)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")

    if eval_set is not None:
        print(report.to_json())
    else:
        print(_dump({"files": [str(out / n) for n in ("model.json", "log.ndjson", "removals.json", "report.json")]}))
    return EXIT_OK


# ---------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    model, tables = _load_checkpoint(args.model)
    ds = load_csv(args.data, _schema(args), code_tables=tables)
    report = evaluate(model, ds, partition_by(ds, _group_attrs(args)), {"model": str(args.model), "data": str(args.data)})
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_json())
    return EXIT_OK


# ---------------------------------------------------------------- verify


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    results = [run_suite(name, args.trials, args.seed) for name in names]
    ok = all(r.ok for r in results)
    print(_dump({"ok": ok, "seed": args.seed, "suites": [r.to_dict() for r in results]}))
    return EXIT_OK if ok else EXIT_FAILED


# ---------------------------------------------------------------- diag


def cmd_diag(args) -> int:
    model, tables = _load_checkpoint(args.model)
    ds = load_csv(args.data, _schema(args), code_tables=tables)
    attrs = _group_attrs(args)
    partition = partition_by(ds, attrs)
    wanted = [k for k in ("weights_dump", "top_m", "error_analysis") if getattr(args, k)]
    if not wanted:
        wanted = ["weights_dump", "top_m", "error_analysis"]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written, summary = [], {}

    if "weights_dump" in wanted or "top_m" in wanted:
        irw = global_epoch_weights(model, ds, args.alpha, args.grad_slice)
        group_ids = partition.group_ids()
    if "weights_dump" in wanted:
        rows = weight_distribution_dump(irw.weights.weights, group_ids, ds.sample_ids)
        selected = irw.selection.mask(len(ds))
        for row, loss, sel in zip(rows, irw.losses, selected):
            row.update(loss=float(loss), selected=int(sel))
        path = out / "weights.csv"
        write_diagnostics_csv(path, rows)
        written.append(str(path))
    if "top_m" in wanted:
        report = evaluate(model, ds, partition)
        worst = partition.group_ids() == list(report.group_acc).index(report.worst_group)
        irw_curve = top_m_proportion(irw.weights.weights, worst)
        uni_curve = top_m_proportion(np.full(len(ds), 1.0 / len(ds)), worst)
        path = out / "top_m.ndjson"
        with path.open("w", encoding="utf-8") as fh:
            for m in irw_curve:
                fh.write(json.dumps({"m": m, "irw": irw_curve[m], "uniform": uni_curve[m]}) + "\n")
        summary["worst_group"] = report.worst_group
        written.append(str(path))
    if "error_analysis" in wanted:
        ea = error_analysis(model, ds)
        path = out / "errors.csv"
        with path.open("w", encoding="utf-8") as fh:
            fh.write("rank,id,loss,correct\n")
            for rank, (sid, loss) in enumerate(zip(ea.sample_ids, ea.losses)):
                fh.write(f"{rank},{int(sid)},{float(loss)!r},{int(loss < ea.boundary)}\n")
        summary["error_analysis"] = {
            "boundary": ea.boundary,
            "n_correct_boundary": ea.n_correct_boundary,
            "n_correct_argmax": ea.n_correct_argmax,
            "consistent": ea.consistent,
        }
        written.append(str(path))
    print(_dump({"files": written, **summary}))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_data_flags(p, need_data: bool = True) -> None:
    if need_data:
        p.add_argument("--data", type=Path, required=True, help="input CSV with a header row")
    p.add_argument("--label", default="label", help="label column")
    p.add_argument("--sensitive", default="group,is_outlier",
                   help="comma-separated columns excluded from the features and kept for evaluation")
    p.add_argument("--group-attr", default="group",
                   help="comma-separated sensitive columns whose code combinations define the evaluation groups")


_TRAIN_HELP = {
    "method": f"training objective, one of {', '.join(METHODS)}",
    "alpha": "lower bound on the smallest group share, in (0, 1]",
    "epochs": "passes over the training set",
    "batch_size": "mini-batch size",
    "lr": "SGD learning rate",
    "scheme": f"IRW weight computation, one of {', '.join(SCHEMES)}: once per epoch over all data, or per batch",
    "cvar_eps": "CVaR floor weight for samples outside the top alpha share (0 = hard CVaR)",
    "tau": "outlier screening period in steps (irwo); unset = batches per epoch",
    "dbscan_eps": "DBSCAN radius (irwo); unset = percentile of the min-pts neighbour distances",
    "min_pts": "DBSCAN core-point threshold, the point itself included (irwo)",
    "eps_percentile": "percentile used for the data-driven DBSCAN radius (irwo)",
    "grad_slice": "parameters used for importance scores and outlier screening: full or last (output layer)",
    "hidden": "hidden ReLU units; 0 = linear softmax model",
    "init_scale": "std of the initial weights; unset = Glorot (linear) or He (MLP)",
    "seed": "random seed for initialisation and batch order",
    "log_level": "logging level",
}


def _add_train_flags(p) -> None:
    defaults = TrainConfig()
    types = {"method": str, "scheme": str, "grad_slice": str, "log_level": str, "epochs": int, "batch_size": int,
             "tau": int, "min_pts": int, "hidden": int, "seed": int}
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        value = getattr(defaults, f.name)
        suffix = "" if value is None else f" (default: {value})"
        kwargs = {"dest": f.name, "default": None, "type": types.get(f.name, float),
                  "help": _TRAIN_HELP[f.name] + suffix}
        if f.name == "method":
            kwargs["choices"] = METHODS
        elif f.name == "scheme":
            kwargs["choices"] = SCHEMES
        elif f.name == "grad_slice":
            kwargs["choices"] = ("full", "last")
        p.add_argument(flag, **kwargs)


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Shows defaults, except unset (None) and off (False) ones."""

    def _get_help_string(self, action):
        if action.default is None or action.default is False:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="alphafair", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate-alpha", formatter_class=fmt,
                       help="estimate the protected-group share from randomized-response reports")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--reports", type=Path, help="file with one 0/1 report per line")
    src.add_argument("--simulate", action="store_true", help="simulate a survey instead of reading reports")
    p.add_argument("--true-alpha", type=float, default=0.3, help="protected share used by --simulate")
    p.add_argument("--n", type=int, default=100_000, help="participants simulated by --simulate")
    p.add_argument("--seed", type=int, default=0, help="seed for --simulate")
    p.add_argument("--p1", type=float, default=0.5, help="probability of answering with the second coin")
    p.add_argument("--p2", type=float, default=0.5, help="probability that the second coin reports 1")
    p.add_argument("--z", type=float, default=1.96, help="normal quantile for the confidence interval")
    p.set_defaults(func=cmd_estimate_alpha)

    p = sub.add_parser("synth", formatter_class=fmt, help="write the two-group synthetic fixture as CSV")
    p.add_argument("--out", type=Path, required=True, help="output CSV path")
    p.add_argument("--n", type=int, default=2000, help="inlier count")
    p.add_argument("--minority-frac", type=float, default=0.1, help="minority group share")
    p.add_argument("--outlier-frac", type=float, default=0.0, help="planted outliers as a share of --n")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--d", type=int, default=5, help="feature dimension (>= 2)")
    p.add_argument("--separation", type=float, default=3.5, help="distance of each class mean from the origin")
    p.add_argument("--angle", type=float, default=90.0, help="degrees between the two groups' class axes")
    p.add_argument("--minority-std", type=float, default=1.2, help="noise std of the minority group")
    p.add_argument("--displacement", type=float, default=10.0, help="outlier offset in units of the group std")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", formatter_class=fmt, help="train a model; writes checkpoint, log and report")
    p.add_argument("--data", type=Path, help="training CSV")
    p.add_argument("--eval-data", type=Path, help="evaluation CSV (same columns as --data)")
    p.add_argument("--fixture", action="store_true",
                   help="train on the built-in two-group fixture and evaluate on a fresh draw of it")
    p.add_argument("--fixture-n", type=int, default=2000, help="fixture size for --fixture")
    p.add_argument("--fixture-outlier-frac", type=float, default=0.0, help="planted outlier share for --fixture")
    p.add_argument("--config", type=Path, help="JSON file of training config keys; flags override it")
    p.add_argument("--out-dir", type=Path, default=Path("run"), help="directory for model.json, log.ndjson, "
                   "removals.json and report.json")
    p.add_argument("--timing", action="store_true", help="keep per-epoch wall-clock seconds in the log")
    _add_data_flags(p, need_data=False)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", formatter_class=fmt, help="evaluate a checkpoint on a CSV")
    p.add_argument("--model", type=Path, required=True, help="checkpoint written by train")
    p.add_argument("--out", type=Path, help="also write the report JSON here")
    _add_data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", formatter_class=fmt, help="run randomised property sweeps")
    p.add_argument("--suite", choices=[*SUITES, "all"], default="all", help="which sweep to run")
    p.add_argument("--trials", type=int, help="instances per sweep (default: the sweep's own count)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("diag", formatter_class=fmt, help="weight, top-m and error diagnostics for a checkpoint")
    p.add_argument("--model", type=Path, required=True, help="checkpoint written by train")
    p.add_argument("--out-dir", type=Path, default=Path("diag"), help="output directory")
    p.add_argument("--alpha", type=float, default=0.1, help="top share used to compute the IRW weights")
    p.add_argument("--grad-slice", choices=("full", "last"), default="full", help="parameters used for scores")
    p.add_argument("--weights-dump", action="store_true", help="write weights.csv (id, group, loss, weight, selected)")
    p.add_argument("--top-m", action="store_true", help="write top_m.ndjson, worst-group share among top-m%% weights")
    p.add_argument("--error-analysis", action="store_true", help="write errors.csv, sorted losses vs the ln 2 boundary")
    _add_data_flags(p)
    p.set_defaults(func=cmd_diag)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
