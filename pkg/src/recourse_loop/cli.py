"""Command-line entry point: run experiments across seeds, plot archived
metrics, verify the analysis numerics, and print effective configurations.

Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .errors import ConfigurationError, RecourseLoopError, SchemaError
from .metrics import CSV_COLUMNS, read_metrics_csv
from .plotting import render_line_svg
from .simulation import (
    SimulationConfig,
    config_digest,
    config_from_dict,
    config_to_dict,
    run_simulation,
)
from .theory import (
    CONDITION_NAMES,
    condition4_counterexample,
    condition_suite,
    f_value,
    proposition_spot_check,
    theorem1_threshold_check,
)

logger = logging.getLogger(__name__)

WORKERS_ENV = "RECOURSE_LOOP_WORKERS"

AGGREGATED_METRICS = ["stba", "higher_standard", "tar", "ftr", "avg_recourse_cost", "jsd"]


def parse_config(path) -> SimulationConfig:
    """Strictly parse a JSON configuration file (unknown keys are fatal)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        count = int(raw)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, count)


def _run_one_seed(config: SimulationConfig, seed: int, final_dir: str) -> tuple[int, str | None]:
    """Run one seed into a temp dir then rename into place (atomic-ish)."""
    parent = os.path.dirname(final_dir) or "."
    temp_dir = tempfile.mkdtemp(prefix=".tmp-seed-", dir=parent)
    try:
        run_simulation(config, out_dir=temp_dir)
        os.replace(temp_dir, final_dir)
        return seed, None
    except Exception as exc:  # per-seed status is reported by the caller
        shutil.rmtree(temp_dir, ignore_errors=True)
        return seed, f"{type(exc).__name__}: {exc}"


def _aggregate_rows(seed_dirs, method: str):
    per_seed = {metric: [] for metric in AGGREGATED_METRICS}
    for seed_dir in seed_dirs:
        columns = read_metrics_csv(os.path.join(seed_dir, "metrics.csv"))
        for metric in AGGREGATED_METRICS:
            values = [v for v in columns.get(metric, []) if v is not None]
            if values:
                per_seed[metric].append(float(np.mean(values)))
    rows = []
    for metric in AGGREGATED_METRICS:
        values = per_seed[metric]
        if not values:
            continue
        mean = float(np.mean(values))
        stderr = 0.0 if len(values) < 2 else float(np.std(values, ddof=1) / np.sqrt(len(values)))
        rows.append((method, metric, mean, stderr, len(values)))
    return rows


def cmd_run(args) -> int:
    config = parse_config(args.config)
    out_dir = args.out
    if os.path.exists(out_dir) and os.listdir(out_dir):
        if not args.force:
            print(f"error: output directory {out_dir} is not empty (use --force)", file=sys.stderr)
            return 2
        shutil.rmtree(out_dir)
    os.makedirs(out_dir, exist_ok=True)

    seeds = [config.seed + i for i in range(args.seeds)]
    jobs = []
    for seed in seeds:
        seed_config = config_from_dict({**config_to_dict(config), "seed": seed})
        jobs.append((seed_config, seed, os.path.join(out_dir, f"seed_{seed:04d}")))

    workers = min(_worker_count(), len(jobs))
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, error in pool.map(_run_one_seed, *zip(*jobs)):
                results[seed] = error
    else:
        for job in jobs:
            seed, error = _run_one_seed(*job)
            results[seed] = error

    failures = {seed: err for seed, err in results.items() if err is not None}
    if failures:
        print("per-seed status:", file=sys.stderr)
        for seed in seeds:
            status = failures.get(seed, "ok")
            print(f"  seed {seed}: {status}", file=sys.stderr)
        return 1

    seed_dirs = [os.path.join(out_dir, f"seed_{seed:04d}") for seed in seeds]
    rows = _aggregate_rows(seed_dirs, config.method)
    with open(os.path.join(out_dir, "aggregate.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "metric", "mean", "stderr", "seeds"])
        for row in rows:
            writer.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4]])
    manifest = {
        "config_digest": config_digest(config),
        "seeds": seeds,
        "out_dir": os.path.abspath(out_dir),
        "tool_version": __version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {len(seeds)} archive(s) and aggregate.csv under {out_dir}")
    return 0


def cmd_plot(args) -> int:
    metric = args.metric
    if metric not in CSV_COLUMNS or metric == "round":
        available = ", ".join(c for c in CSV_COLUMNS if c != "round")
        print(f"error: unknown metric {metric!r}; available: {available}", file=sys.stderr)
        return 2
    archive = args.archive
    csv_paths = sorted(glob.glob(os.path.join(archive, "seed_*", "metrics.csv")))
    if not csv_paths:
        direct = os.path.join(archive, "metrics.csv")
        if os.path.exists(direct):
            csv_paths = [direct]
    if not csv_paths:
        print(f"error: no metrics.csv found under {archive}", file=sys.stderr)
        return 2

    by_round: dict[int, list[float]] = {}
    for path in csv_paths:
        columns = read_metrics_csv(path)
        if metric not in columns:
            available = ", ".join(c for c in columns if c != "round")
            print(f"error: {path} has no column {metric!r}; available: {available}", file=sys.stderr)
            return 2
        for rnd, value in zip(columns["round"], columns[metric]):
            if value is not None:
                by_round.setdefault(rnd, []).append(float(value))
    if not by_round:
        print(f"error: metric {metric!r} is absent in every round", file=sys.stderr)
        return 2
    rounds = sorted(by_round)
    means = [float(np.mean(by_round[r])) for r in rounds]
    svg = render_line_svg(
        {f"{metric} (seed mean)": (rounds, means)},
        title=metric,
        x_label="round",
        y_label=metric,
    )
    out_path = args.out or os.path.join(archive, "plots", f"{metric}.svg")
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    with open(out_path, "w") as fh:
        fh.write(svg)
    print(f"wrote {out_path}")
    return 0


def cmd_verify_theory(args) -> int:
    lines = []
    rows = []

    suite = condition_suite(args.samples, seed=args.seed)
    for c in sorted(CONDITION_NAMES):
        hits = suite.antecedent_counts[c]
        violations = suite.violation_counts[c]
        status = "ok" if violations == 0 else f"violations={violations}"
        lines.append(
            f"condition {c} [{CONDITION_NAMES[c]}]: {hits} hits, "
            f"violation rate {suite.violation_rate(c):.6f} ({status})"
        )
        rows.append((f"condition_{c}_violation_rate", suite.violation_rate(c)))

    counter = condition4_counterexample()
    lines.append(
        "condition 4 counterexample: "
        f"x={counter.x}, xhat={counter.xhat}, h(x)={counter.hx}, "
        f"h(xhat)={counter.hxhat}, u={counter.u} -> F={f_value(counter):.6f} (> 0)"
    )
    rows.append(("condition_4_counterexample_f", f_value(counter)))

    for kind in ("failed_recourse", "limited_resource"):
        decreased = sum(
            proposition_spot_check(kind, seed).decreased for seed in range(args.prop_seeds)
        )
        rate = decreased / args.prop_seeds
        lines.append(f"{kind}: mean test logit decreased in {decreased}/{args.prop_seeds} seeds")
        rows.append((f"{kind}_decrease_rate", rate))

    found = sum(theorem1_threshold_check(seed).found for seed in range(args.prop_seeds))
    lines.append(
        f"threshold shift: matching-or-better stricter model found in "
        f"{found}/{args.prop_seeds} seeds"
    )
    rows.append(("threshold_shift_found_rate", found / args.prop_seeds))

    for line in lines:
        print(line)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["check", "value"])
            for name, value in rows:
                writer.writerow([name, repr(float(value))])
        print(f"wrote {args.out}")
    return 0


def cmd_print_config(args) -> int:
    config = parse_config(args.config)
    print(json.dumps(config_to_dict(config), sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recourse-loop",
        description=(
            "Closed-loop simulation of recourse-seeking users and a "
            "budget-constrained score model. Configuration is a strict JSON "
            "document; every omitted key takes the documented default "
            "(see README)."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one configuration across seeds")
    run_p.add_argument("--config", required=True, help="path to the JSON configuration")
    run_p.add_argument(
        "--seeds", type=int, default=1,
        help="number of consecutive seeds, starting at the config seed (default 1)",
    )
    run_p.add_argument("--out", required=True, help="output directory (one archive per seed)")
    run_p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    run_p.set_defaults(func=cmd_run)

    plot_p = sub.add_parser("plot", help="render one metric of an archive as SVG")
    plot_p.add_argument("archive", help="archive directory produced by run")
    plot_p.add_argument("metric", help="metrics.csv column to plot")
    plot_p.add_argument("--out", help="output SVG path (default <archive>/plots/<metric>.svg)")
    plot_p.set_defaults(func=cmd_plot)

    verify_p = sub.add_parser("verify-theory", help="numeric checks of the analysis")
    verify_p.add_argument("--samples", type=int, default=100_000, help="Monte Carlo sample count")
    verify_p.add_argument("--prop-seeds", type=int, default=50, help="seeds per retraining check")
    verify_p.add_argument("--seed", type=int, default=0, help="Monte Carlo base seed")
    verify_p.add_argument("--out", help="optional CSV report path")
    verify_p.set_defaults(func=cmd_verify_theory)

    print_p = sub.add_parser("print-config", help="print the fully defaulted configuration")
    print_p.add_argument("--config", required=True)
    print_p.set_defaults(func=cmd_print_config)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RecourseLoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
