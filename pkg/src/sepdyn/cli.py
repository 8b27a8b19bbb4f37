"""Command-line entry point: ``sepdyn run <config> [--out DIR] [--list-experiments] [--validate-only]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_config, run_config_to_dict
from .dynamics import NonFiniteStateError, StepSizeUnderflow
from .harness import ExperimentError, Harness, Report, run_experiment

logger = logging.getLogger("sepdyn")


def write_series(path: Path, report: Report, names=None) -> int:
    """Write ``t,metric,value`` rows; values carry 17 significant digits."""
    names = sorted(report.series) if names is None else names
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "metric", "value"])
        for name in names:
            t, v = report.series[name]
            for ti, vi in zip(t, v):
                w.writerow([f"{ti:.17g}", name, f"{vi:.17g}"])
                rows += 1
    return rows


def read_series(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    out: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["t", "metric", "value"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for t, name, v in r:
            ts, vs = out.setdefault(name, ([], []))
            ts.append(float(t))
            vs.append(float(v))
    return {k: (np.array(a), np.array(b)) for k, (a, b) in out.items()}


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)!r}")


def write_report(out_dir: Path, report: Report, run_cfg: dict) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    body = report.to_dict()
    body["run"] = {k: v for k, v in run_cfg.items() if k != "experiments"}
    rpath = out_dir / "report.json"
    rpath.write_text(json.dumps(body, indent=2, default=_json_default, allow_nan=True) + "\n")
    spath = out_dir / "series.csv"
    write_series(spath, report)
    return [rpath, spath]


def _failed_report(spec, exc: Exception) -> Report:
    rep = Report(spec.name, spec.kind)
    rep.values["error"] = f"{type(exc).__name__}: {exc}"
    if isinstance(exc, NonFiniteStateError):
        rep.values["first_non_finite_time"] = exc.time
    from .harness import Verdict
    rep.verdicts.append(Verdict("completed", 0.0, 1.0, ">=", rep.values["error"]))
    return rep


def run(cfg: RunConfig, out_dir: Path | None = None) -> int:
    out_dir = Path(out_dir or cfg.output_dir)
    if not cfg.experiments:
        logger.warning("configuration lists no experiments; nothing to do")
        return 0
    harness = Harness(cfg.workers)
    plain = run_config_to_dict(cfg)
    failed = []
    for spec in cfg.experiments:
        logger.info("running %s (%s)", spec.name, spec.kind)
        try:
            report = run_experiment(spec, harness)
        except (NonFiniteStateError, StepSizeUnderflow, ExperimentError) as exc:
            logger.error("%s aborted: %s", spec.name, exc)
            report = _failed_report(spec, exc)
        write_report(out_dir / spec.name, report, plain)
        status = "PASS" if report.passed else "FAIL"
        logger.info("%s: %s", spec.name, status)
        for v in report.verdicts:
            logger.log(logging.INFO if v.passed else logging.WARNING, "  %-44s %-4s %.6g %s %s",
                       v.name, "ok" if v.passed else "FAIL", v.value, v.relation, v.threshold)
        if not report.passed:
            failed.append(spec.name)
    if failed:
        logger.error("failed experiments: %s", ", ".join(failed))
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sepdyn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiments of a configuration file")
    r.add_argument("config", help="YAML configuration file")
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.add_argument("--list-experiments", action="store_true",
                   help="print experiment names and kinds, then exit")
    r.add_argument("--validate-only", action="store_true",
                   help="parse and validate the configuration, then exit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", level=logging.INFO)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        logger.error("%s", exc)
        return 2
    logging.getLogger().setLevel(getattr(logging, cfg.verbosity.upper(), logging.INFO))
    if args.list_experiments:
        for spec in cfg.experiments:
            print(f"{spec.name}\t{spec.kind}")
        return 0
    if args.validate_only:
        print(f"{args.config}: {len(cfg.experiments)} experiment(s) valid")
        return 0
    return run(cfg, Path(args.out) if args.out else None)


if __name__ == "__main__":
    sys.exit(main())
