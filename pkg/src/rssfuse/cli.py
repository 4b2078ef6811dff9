"""Command line front end.

Exit status: 0 on success, 2 for bad input (arguments, config, CSV),
3 when every Monte Carlo trial failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

from . import channel as ch
from .config import ConfigError, load_config
from .sim import (
    BUILTIN_IDS,
    CHANNEL_PRESETS,
    ErrorReport,
    Scenario,
    ScenarioError,
    builtin_scenario,
    run_monte_carlo,
    run_trial,
    trace_header,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ALL_DIVERGED = 3

DEFAULT_TRIALS = 200
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


def atomic_write(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def format_stats(grand_mean: float, std: float) -> str:
    return f"{grand_mean:.5f} +/- {std:.5f} m"


def read_summary(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _positive_trials(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid trial count {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"trials must be >= 1, got {n}")
    return n


def _resolve(args) -> tuple[Scenario, int, int]:
    if args.builtin:
        try:
            scenario = builtin_scenario(args.builtin, args.model)
        except ScenarioError as exc:
            raise UsageError(str(exc)) from None
        trials, seed = args.trials, args.seed
    else:
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            raise UsageError(f"bad config: {exc}") from None
        scenario = cfg.scenario
        trials = args.trials if args.trials is not None else cfg.trials
        seed = args.seed if args.seed is not None else cfg.base_seed
    trials = DEFAULT_TRIALS if trials is None else trials
    seed = DEFAULT_SEED if seed is None else seed
    return scenario, trials, seed


def _trace_csv(scenario: Scenario, seed: int) -> Optional[str]:
    _, rows = run_trial(scenario, seed, trace=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_header(scenario.dimension, scenario.n_nodes))
    writer.writerows([[repr(float(v)) for v in row] for row in rows])
    return buf.getvalue()


def _summary_dict(report: ErrorReport) -> dict:
    out = report.summary()
    if math.isnan(out["grand_mean"]):
        out["grand_mean"] = None
        out["std"] = None
    return out


def cmd_run(args) -> int:
    scenario, trials, seed = _resolve(args)
    report = run_monte_carlo(scenario, trials, seed)
    if report.metadata["completed"] == 0:
        print(f"error: all {trials} trials failed", file=sys.stderr)
        return EXIT_ALL_DIVERGED

    out = Path(args.out)
    files = {"summary.json": dump_json(_summary_dict(report))}
    if args.trace and "0" not in report.metadata.get("failures", {}):
        files["trace_trial0.csv"] = _trace_csv(scenario, seed)
    for name, text in files.items():
        atomic_write(out / name, text)

    meta = report.metadata
    print(f"{scenario.name}: {meta['completed']}/{trials} trials, seed {seed}")
    print(f"grand mean error {format_stats(report.grand_mean, report.std)}")
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        samples = ch.read_samples_csv(args.csv)
    except ch.CsvFormatError as exc:
        raise UsageError(f"{args.csv}: {exc}") from None
    except OSError as exc:
        raise UsageError(f"{args.csv}: {exc.strerror or exc}") from None
    try:
        fit = ch.fit_log_model(samples)
    except ValueError as exc:
        raise UsageError(f"{args.csv}: {exc}") from None
    result = {"a": fit.a, "n": fit.n, "sigma": fit.sigma, "n_samples": fit.n_samples}
    atomic_write(Path(args.out), dump_json(result))
    print(f"a = {fit.a:.4f} dBm, n = {fit.n:.4f}, sigma = {fit.sigma:.4f} dB ({fit.n_samples} samples)")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        scenarios = [builtin_scenario(i, args.model) for i in args.scenarios]
    except ScenarioError as exc:
        raise UsageError(str(exc)) from None
    if scenarios[0].dimension != scenarios[1].dimension:
        raise UsageError(
            f"cannot compare a {scenarios[0].dimension}D and a {scenarios[1].dimension}D scenario"
        )
    reports = [run_monte_carlo(s, args.trials, args.seed) for s in scenarios]
    if any(r.metadata["completed"] == 0 for r in reports):
        print("error: every trial of a scenario failed", file=sys.stderr)
        return EXIT_ALL_DIVERGED

    base = reports[0].grand_mean
    rows = [
        {
            "scenario": s.name,
            "grand_mean": r.grand_mean,
            "std": r.std,
            "ratio": r.grand_mean / base,
            "completed": r.metadata["completed"],
        }
        for s, r in zip(scenarios, reports)
    ]
    result = {"trials": args.trials, "base_seed": args.seed, "model": args.model, "rows": rows}
    atomic_write(Path(args.out) / "comparison.json", dump_json(result))

    print(f"{'scenario':<24} {'grand_mean':>11} {'std':>9} {'ratio':>7}")
    for row in rows:
        print(f"{row['scenario']:<24} {row['grand_mean']:>11.5f} {row['std']:>9.5f} {row['ratio']:>7.3f}")
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for sid in BUILTIN_IDS:
        sc = builtin_scenario(sid)
        print(f"{sid:<16} {sc.dimension}D  {len(sc.references):>2} references  {sc.n_nodes} node(s)")
    print(f"channel models: {', '.join(CHANNEL_PRESETS)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rssfuse", description="Cooperative RSS tracking simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    models = sorted(CHANNEL_PRESETS)

    run = sub.add_parser("run", help="run a Monte Carlo batch")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", metavar="ID", help=f"built-in scenario ({', '.join(BUILTIN_IDS)})")
    src.add_argument("--config", metavar="PATH", help="scenario TOML file")
    run.add_argument("--model", choices=models, default="log81", help="channel preset for --builtin")
    run.add_argument("--trials", type=_positive_trials, default=None)
    run.add_argument("--seed", type=int, default=None, help="base seed; trial i uses seed + i")
    run.add_argument("--out", default=".", help="output directory")
    run.add_argument("--trace", action="store_true", help="also write trace_trial0.csv")
    run.set_defaults(func=cmd_run)

    fit = sub.add_parser("fit", help="fit a log-distance model to distance_m,rss_dbm CSV")
    fit.add_argument("csv")
    fit.add_argument("--out", default="fit.json")
    fit.set_defaults(func=cmd_fit)

    cmp_ = sub.add_parser("compare", help="run two built-ins with matched seeds")
    cmp_.add_argument("scenarios", nargs=2, metavar="ID")
    cmp_.add_argument("--model", choices=models, default="log81")
    cmp_.add_argument("--trials", type=_positive_trials, default=DEFAULT_TRIALS)
    cmp_.add_argument("--seed", type=int, default=DEFAULT_SEED)
    cmp_.add_argument("--out", default=".")
    cmp_.set_defaults(func=cmd_compare)

    lst = sub.add_parser("scenarios", help="list built-in scenarios")
    lst.set_defaults(func=cmd_scenarios)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
