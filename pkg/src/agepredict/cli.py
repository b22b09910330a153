"""``agepredict`` command-line front end.

Every command writes deterministic output: JSON keys are sorted, floats use
their shortest round-trip form and nothing time-dependent is recorded.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .domain import DEFAULT_REFERENCE_DATE
from .evaluate import DEFAULT_MAX_BOUND, build_report, export_report, report_from_predictions, report_to_json
from .featurize import (
    IMPUTE_STRATEGIES,
    apply_interactional_scaling,
    apply_preprocessing,
    build_dataset,
    build_index,
    build_vocabulary,
    fit_preprocessing,
    read_dataset,
    write_dataset,
)
from .ingest import FixtureAnnotationClient, ParseError, enrich_popular, load_fixture, load_users
from .models import SPEC_GRAMMAR, SchemaMismatch, SpecError, format_spec, load_model, parse_spec, predict, save_model
from .selection import METRICS, SplitPlan, cross_validate, split, train_with_preprocessing, write_grid_csv
from .synth import GeneratorParams, generate_cohort, write_cohort

logger = logging.getLogger("agepredict")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

# per-command flags that must end up set, from the command line or --config
_REQUIRED = {
    "synth": ("n", "out_dir"),
    "featurize": ("users", "popular", "kb", "out"),
    "train": ("matrix", "model", "out"),
    "grid": ("matrix", "grid", "out"),
    "evaluate": ("model", "matrix", "out_dir"),
}


class CommandError(Exception):
    """Runtime failure reported to the user with exit code 1."""


def _on_off(value: str) -> bool:
    v = value.lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on|off, got {value!r}")


def _fraction(value: str) -> float:
    try:
        f = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None
    if not 0.0 < f < 1.0:
        raise argparse.ArgumentTypeError(f"split fraction must lie in (0, 1), got {value}")
    return f


def _date(value: str) -> dt.date:
    try:
        return dt.date.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {value!r}") from None


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agepredict",
        description="Predict user age from the knowledge-base types of the popular accounts they follow.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--config",
        metavar="FILE",
        help="JSON file of flag values (top-level keys, or nested under the command name); "
        "flags given on the command line win",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--n", type=int, help="number of users")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", help="directory for users.jsonl, popular.jsonl, kb_fixture.json, generator_meta.json")
    p.add_argument("--params", metavar="FILE", help="JSON object of generator parameters")

    p = sub.add_parser("featurize", help="build the feature matrix")
    p.add_argument("--users", help="users.jsonl")
    p.add_argument("--popular", help="popular.jsonl (candidate popular-user profiles)")
    p.add_argument("--kb", help="kb_fixture.json")
    p.add_argument("--annotations", metavar="FILE", help="annotation table; default derives one from the KB labels")
    p.add_argument("--reference-date", type=_date, default=DEFAULT_REFERENCE_DATE)
    p.add_argument("--interaction-scaling", type=_on_off, default=False, metavar="on|off")
    p.add_argument("--normalize", type=_on_off, default=False, metavar="on|off")
    p.add_argument("--impute", choices=IMPUTE_STRATEGIES, default="none")
    p.add_argument("--out", help="matrix CSV path; the schema sidecar goes next to it")

    model_help = "model SPEC, one of:\n  " + SPEC_GRAMMAR.replace("\n", "\n  ")
    p = sub.add_parser("train", help="fit one model on a train split", formatter_class=argparse.RawTextHelpFormatter)
    p.add_argument("--matrix", help="feature matrix CSV")
    p.add_argument("--model", help=model_help)
    p.add_argument("--split", type=_fraction, default=0.33, metavar="FRACTION", help="test fraction (default 0.33)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--impute", choices=("mean", "drop"), default="mean", help="fitted on the train split")
    p.add_argument("--normalize", type=_on_off, default=True, metavar="on|off", help="fitted on the train split")
    p.add_argument("--out", help="model JSON path; metrics go to <stem>.metrics.json")
    p.add_argument("--test-matrix-out", metavar="FILE", help="also write the held-out rows as a matrix CSV")

    p = sub.add_parser("grid", help="cross-validate a grid of models and split plans")
    p.add_argument("--matrix")
    p.add_argument(
        "--grid",
        metavar="FILE",
        help='JSON: {"models": [SPEC, ...] and/or "lambdas": [...], "test_fractions": [...], '
        '"kfold": K, "seed": S, "metric": M, "impute": I, "normalize": bool}',
    )
    p.add_argument("--out", help="results CSV")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: number of processors)")

    p = sub.add_parser("evaluate", help="score a trained model on a matrix")
    p.add_argument("--model")
    p.add_argument("--matrix")
    p.add_argument("--out-dir")
    p.add_argument("--max-bound", type=int, default=DEFAULT_MAX_BOUND)
    return parser


def _load_config(path: str) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise CommandError(f"config {path} must hold a JSON object")
    return obj


def _config_defaults(config: dict, command: str, subparser: argparse.ArgumentParser) -> dict:
    dests = {a.dest: a for a in subparser._actions}
    merged = {k: v for k, v in config.items() if not isinstance(v, dict)}
    merged.update(config.get(command, {}))
    out = {}
    for key, value in merged.items():
        dest = key.replace("-", "_")
        action = dests.get(dest)
        if action is None:
            continue
        if action.type is not None and isinstance(value, str):
            value = action.type(value)
        out[dest] = value
    return out


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    if args.config:
        try:
            defaults = _config_defaults(_load_config(args.config), args.command, subparser)
        except (CommandError, argparse.ArgumentTypeError) as exc:
            parser.error(str(exc))
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [k for k in _REQUIRED[args.command] if getattr(args, k, None) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        subparser.error(f"missing required argument(s): {flags}")
    if args.command == "train":
        try:
            args.spec = parse_spec(args.model)
        except SpecError as exc:
            subparser.error(str(exc))
    return args


# --- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    params = GeneratorParams()
    if args.params:
        try:
            params = GeneratorParams.from_json(json.loads(Path(args.params).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise CommandError(f"cannot read generator params {args.params}: {exc}") from exc
    cohort = generate_cohort(args.n, args.seed, params)
    paths = write_cohort(cohort, args.out_dir)
    print(f"wrote {len(cohort.users)} users, {len(cohort.candidates)} candidate popular users to {args.out_dir}")
    logger.info("files: %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_featurize(args) -> int:
    users = load_users(args.users)
    candidates = load_users(args.popular)
    fixture = load_fixture(args.kb)
    for label, res in (("users", users), ("popular", candidates)):
        if res.skipped:
            print(f"{label}: skipped {res.skipped} invalid record(s)", file=sys.stderr)
    if not users.records:
        raise CommandError(f"no valid user records in {args.users}")
    client = (
        FixtureAnnotationClient.from_file(args.annotations)
        if args.annotations
        else FixtureAnnotationClient.from_kb_fixture(fixture)
    )
    popular = enrich_popular(candidates.records, fixture, client, args.reference_date)
    index = build_index(popular)
    vocab = build_vocabulary(index)
    dataset = build_dataset(users.records, index, vocab)
    if dataset.n_rows == 0:
        raise CommandError("no users with a known age; nothing to featurize")
    if args.interaction_scaling:
        dataset = apply_interactional_scaling(dataset, vocab)
    if args.normalize and args.impute == "none" and dataset.has_missing():
        raise CommandError("cannot normalize a matrix with missing values; pass --impute mean or drop")
    prep = fit_preprocessing(dataset, args.impute, args.normalize)
    out = apply_preprocessing(dataset, prep)
    dropped = dataset.n_rows - out.n_rows
    write_dataset(
        out,
        args.out,
        vocab,
        extra={
            "impute": args.impute,
            "impute_means": list(prep.impute_means) if prep.impute_means else None,
            "reference_date": args.reference_date.isoformat(),
        },
    )
    print(
        f"{out.n_rows} rows x {out.n_cols} columns ({len(vocab)} KB types, {len(index)} linked popular users, "
        f"{users.skipped} users skipped, {dropped} rows dropped) -> {args.out}"
    )
    return EXIT_OK


def _metrics(pred, actual) -> dict:
    rep = report_from_predictions(pred, actual)
    return {"n": rep.n, "mae": rep.mae, "medae": rep.medae, "r2": report_to_json(rep)["r2"], "acc10": rep.accuracy(10)}


def cmd_train(args) -> int:
    dataset, schema = read_dataset(args.matrix)
    train, test = split(dataset, SplitPlan(args.split, args.seed))
    model = train_with_preprocessing(train, args.spec, args.impute, args.normalize, seed=args.seed)
    summary = {"model": format_spec(args.spec), "split": args.split, "seed": args.seed}
    for name, part in (("train", train), ("test", test)):
        prepared = apply_preprocessing(part, model.preprocessing)
        summary[name] = _metrics(predict(model, prepared), prepared.targets)
    summary["converged"] = bool(model.training_meta.get("converged", True))
    out = Path(args.out)
    save_model(model, out)
    _dump_json(summary, out.with_name(out.stem + ".metrics.json"))
    if args.test_matrix_out:
        write_dataset(test, args.test_matrix_out, extra={k: v for k, v in schema.items() if k != "n_rows"} or None)
    print(
        f"{summary['model']}: train MAE {summary['train']['mae']:.4f}, "
        f"test MAE {summary['test']['mae']:.4f}, test Accuracy@10 {summary['test']['acc10']:.4f}"
    )
    return EXIT_OK


def _grid_specs(grid: dict) -> list:
    specs = [parse_spec(s) for s in grid.get("models", [])]
    specs += [parse_spec(f"lasso:lambda={lam!r}") for lam in grid.get("lambdas", [])]
    if not specs:
        raise CommandError("grid file lists no models (use \"models\" and/or \"lambdas\")")
    return specs


def cmd_grid(args) -> int:
    try:
        grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read grid {args.grid}: {exc}") from exc
    specs = _grid_specs(grid)
    seed = int(grid.get("seed", 0))
    plans = [SplitPlan(float(f), seed) for f in grid.get("test_fractions", [])]
    if grid.get("kfold"):
        plans.append(SplitPlan.kfold(int(grid["kfold"]), seed))
    if not plans:
        plans = [SplitPlan(0.33, seed)]
    metric = grid.get("metric", "mae")
    if metric not in METRICS:
        raise CommandError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
    dataset, _ = read_dataset(args.matrix)
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    cells = cross_validate(
        dataset,
        specs,
        plans,
        metric=metric,
        impute=grid.get("impute", "mean"),
        normalize=bool(grid.get("normalize", True)),
        jobs=jobs,
    )
    write_grid_csv(cells, args.out)
    leaks = sum(c.leak for c in cells)
    errors = [c for c in cells if c.error]
    print(f"{len(cells)} cells ({len(specs)} models x {len(plans)} plans), {leaks} leaks, {len(errors)} failed -> {args.out}")
    for c in errors:
        print(f"  {c.spec_id} / {c.plan_id}: {c.error}", file=sys.stderr)
    if leaks:
        raise CommandError(f"{leaks} cell(s) leaked test rows into preprocessing")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    dataset, _ = read_dataset(args.matrix)
    try:
        report = build_report(model, dataset, args.max_bound)
    except SchemaMismatch as exc:
        raise CommandError(str(exc)) from exc
    export_report(report, args.out_dir)
    bound, acc = report.accuracy_curve[-1]
    print(f"{report.model}: n={report.n} MAE {report.mae:.4f} MedAE {report.medae:.4f} "
          f"Accuracy@{bound} {acc:.4f} -> {args.out_dir}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "grid": cmd_grid,
    "evaluate": cmd_evaluate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    level = logging.WARNING if args.verbose == 0 else (logging.INFO if args.verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CommandError, ParseError, SchemaMismatch, SpecError, ValueError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"agepredict {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
