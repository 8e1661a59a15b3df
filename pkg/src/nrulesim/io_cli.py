"""Command line entry point and on-disk result formats.

Results directory layout::

    <out>/manifest.json
    <out>/summary.jsonl
    <out>/series/<traj-id>.csv

Floats are written with 17 significant digits so every value round-trips.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import (
    EnsembleSummary,
    Series,
    TrajectoryRecord,
    compute_prefix,
    localization_report,
    run_ensemble,
    run_trajectory,
)
from .config import ScenarioConfig, config_from_dict, parse_config
from .errors import ArgumentError, ConfigError, NRulesError
from .reduction_engine import RngStream
from .scenarios import build_scenario

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3, 4
RESULTS_ENV = "NRULESIM_RESULTS"
SERIES_LIMIT = 16


def format_float(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return format(v, ".17g")


def dumps(obj) -> str:
    """Compact JSON with 17-digit floats, keys kept in insertion order."""
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def summary_line(summary: EnsembleSummary) -> str:
    return dumps(summary.to_record()) + "\n"


def write_summary(path: Path, summaries: Sequence[EnsembleSummary]) -> None:
    with open(path, "w", newline="\n") as fh:
        for s in summaries:
            fh.write(summary_line(s))


def read_summaries(path: Path) -> list[EnsembleSummary]:
    with open(path) as fh:
        return [EnsembleSummary.from_record(json.loads(line)) for line in fh if line.strip()]


def write_series(path: Path, series: Series) -> None:
    n_ch = series.H.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "variance", "s"] + [f"H_{i + 1}" for i in range(n_ch)])
        for i in range(len(series)):
            w.writerow([format_float(series.t[i]), format_float(series.variance[i]), format_float(series.s[i])]
                       + [format_float(h) for h in series.H[i]])


def read_series(path: Path) -> Series:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))
    return Series(data[:, 0], data[:, 1], data[:, 2], data[:, 3:])


@dataclass
class RunManifest:
    config_hash: str
    engine_version: str
    seed: int
    command: list[str]
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    n_traj: int = 0
    workers: int = 1
    series_limit: int = SERIES_LIMIT
    sweep: dict | None = None

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def read(cls, path: Path) -> RunManifest:
        return cls(**json.loads(Path(path).read_text()))


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def results_root() -> Path:
    return Path(os.environ.get(RESULTS_ENV, "results"))


def execute(cfg: ScenarioConfig, out: Path, n_traj: int, seed: int, *, workers: int = 1,
            series_limit: int = SERIES_LIMIT, baseline: bool = False, oracle: bool = True) -> EnsembleSummary:
    """Run one ensemble and write summary and series files into ``out``."""
    scenario = build_scenario(cfg)
    if baseline:
        scenario = scenario.without_channels()
    prefix = compute_prefix(scenario)
    summary = run_ensemble(scenario, n_traj, seed, workers=workers, oracle=oracle, prefix=prefix)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(out / "summary.jsonl", [summary])
    if series_limit > 0:
        (out / "series").mkdir(exist_ok=True)
        for st in range(min(series_limit, n_traj)):
            rec: TrajectoryRecord = run_trajectory(scenario, RngStream(seed, st), prefix=prefix)
            write_series(out / "series" / f"{st:06d}.csv", rec.series)
    return summary


def _outputs(out: Path) -> list[str]:
    return sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")


def _load_config(args) -> ScenarioConfig:
    if args.config is None:
        raise ConfigError(["--config: required"])
    return parse_config(args.config)


def _default_out(args, cfg: ScenarioConfig, suffix: str = "") -> Path:
    return Path(args.out) if args.out else results_root() / (cfg.scenario_id + suffix)


def cmd_run(args, baseline: bool = False) -> int:
    if getattr(args, "manifest", None):
        man = RunManifest.read(args.manifest)
        cfg = config_from_dict(man.config)
        n_traj, seed, workers, limit = man.n_traj, man.seed, man.workers, man.series_limit
    else:
        cfg = _load_config(args)
        n_traj, seed, workers, limit = args.traj, args.seed, args.workers, args.series_limit
    out = _default_out(args, cfg, "-baseline" if baseline else "")
    man = RunManifest(cfg.config_hash(), __version__, seed, list(sys.argv), _now(), config=cfg.canonical(),
                      n_traj=n_traj, workers=workers, series_limit=limit)
    summary = execute(cfg, out, n_traj, seed, workers=workers, series_limit=limit, baseline=baseline,
                      oracle=not args.no_oracle)
    man.finished = _now()
    man.outputs = _outputs(out)
    man.write(out / "manifest.json")
    print(f"{summary.scenario_id}: {summary.n_collapsed}/{summary.n_traj} collapsed, hits {summary.hits}, "
          f"reduction factor {summary.reduction_factor:.4g} -> {out}")
    for f in summary.failures:
        print(f"failed {f}", file=sys.stderr)
    return EXIT_OK


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _default_out(args, cfg, "-sweep")
    values = [_parse_value(v) for v in args.values.split(",")]
    variants = [cfg.updated(args.param, v) for v in values]  # validate every point before running any
    man = RunManifest(cfg.config_hash(), __version__, args.seed, list(sys.argv), _now(), config=cfg.canonical(),
                      n_traj=args.traj, workers=args.workers, series_limit=args.series_limit,
                      sweep={"param": args.param, "values": values})
    summaries = []
    for i, (v, c) in enumerate(zip(values, variants)):
        s = execute(c, out / f"point{i:03d}", args.traj, args.seed, workers=args.workers,
                    series_limit=args.series_limit, oracle=not args.no_oracle)
        summaries.append(s)
        print(f"{args.param}={v}: median t_sc {s.t_sc_p50}, reduction factor {s.reduction_factor:.4g}")
    write_summary(out / "summary.jsonl", summaries)
    man.finished = _now()
    man.outputs = _outputs(out)
    man.write(out / "manifest.json")
    return EXIT_OK


def cmd_report(args) -> int:
    ens = read_summaries(Path(args.ensemble) / "summary.jsonl")[0]
    base = read_summaries(Path(args.baseline) / "summary.jsonl")[0]
    print(localization_report(ens, base).format_table())
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .acceptance import run_all

    results = run_all(quick=args.quick, workers=args.workers)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nrulesim", description="Stochastic reduction simulator.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def ensemble_args(sp, manifest=False):
        sp.add_argument("--config", help="scenario TOML file")
        sp.add_argument("--traj", type=int, default=20000, help="number of trajectories")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", help=f"results directory (default ${RESULTS_ENV}/<scenario>)")
        sp.add_argument("--series-limit", type=int, default=SERIES_LIMIT,
                        help="number of per-trajectory series files to write")
        sp.add_argument("--no-oracle", action="store_true", help="skip the fine-step oracle comparison")
        if manifest:
            sp.add_argument("--manifest", help="re-run exactly as recorded in a manifest")

    ensemble_args(sub.add_parser("run", help="run an ensemble from a config"), manifest=True)
    ensemble_args(sub.add_parser("baseline", help="run the config with all capture channels removed"),
                  manifest=True)
    sw = sub.add_parser("sweep", help="vary one config key over a list of values")
    ensemble_args(sw)
    sw.add_argument("--param", required=True, help="dotted config key, e.g. capture.rate")
    sw.add_argument("--values", required=True, help="comma separated values")
    rp = sub.add_parser("report", help="localization table from two result directories")
    rp.add_argument("--ensemble", required=True)
    rp.add_argument("--baseline", required=True)
    st = sub.add_parser("selftest", help="run the acceptance suite")
    st.add_argument("--quick", action="store_true", help="4,000 instead of 20,000 trajectories per statistical check")
    st.add_argument("--workers", type=int, default=1)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "baseline":
            return cmd_run(args, baseline=True)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "report":
            return cmd_report(args)
        return cmd_selftest(args)
    except ConfigError as exc:
        print(f"config error:\n  " + "\n  ".join(exc.errors), file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NRulesError as exc:
        if isinstance(exc, ArgumentError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
