"""Command-line front end: simulate, measure, fit, test-break, har, study."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .har import HAR_NAMES, har_fit
from .harness import (
    ClockSpec,
    ConfigError,
    ExperimentConfig,
    derive_seed,
    STREAM_PANEL,
    ingest_ticks,
    load_config,
    run_break_analysis,
    run_simulation_study,
    split_measures,
)
from .inference import InferenceError, normal_two_sided, sandwich_covariance
from .measures import DailyMeasures, MeasureError, build_daily_measures
from .params import GARCH_NAMES
from .qmle import FitError, fit
from .simulate import LunchBreak, SimulationError, panel_to_csv, simulate_panel

log = logging.getLogger("contagion")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _lunch(text: str | None) -> LunchBreak | None:
    if not text:
        return None
    a, b = (float(x) for x in text.split(","))
    return LunchBreak(a, b)


def _out(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _measures_path(args, cfg: ExperimentConfig) -> Path:
    return Path(args.measures) if args.measures else Path(cfg.out_dir) / "measures.csv"


def cmd_simulate(args, cfg: ExperimentConfig) -> None:
    n = args.n or cfg.n_max
    m = args.m or cfg.m_max
    panel = simulate_panel(
        cfg.structural, cfg.jumps, cfg.noise, cfg.calendar, cfg.sim_config(n, m, derive_seed(cfg.seed, STREAM_PANEL, 0))
    )
    out = _out(cfg)
    panel_to_csv(panel, out / "ticks.csv", out / "truth.csv", header=cfg.header())
    print(f"wrote {n} days x {m} intervals to {out / 'ticks.csv'}")


def cmd_measure(args, cfg: ExperimentConfig) -> None:
    ticks = Path(args.ticks) if args.ticks else Path(cfg.out_dir) / "ticks.csv"
    lunch = {l: lb for l, lb in ((1, _lunch(args.lunch_1)), (2, _lunch(args.lunch_2))) if lb is not None}
    panel = ingest_ticks(ticks, cfg.calendar, lunch, ClockSpec(args.clock, args.open_utc))
    d = build_daily_measures(panel, cfg.estimator)
    out = _out(cfg)
    d.to_csv(out / "measures.csv", header=cfg.header())
    print(f"wrote {d.n} days of {cfg.estimator} measures to {out / 'measures.csv'}")


def cmd_fit(args, cfg: ExperimentConfig) -> None:
    d = DailyMeasures.from_csv(_measures_path(args, cfg), cfg.calendar)
    f = fit(d)
    cov = sandwich_covariance(f, d)
    out = _out(cfg)
    hdr = cfg.header()
    f.to_csv(out / "fit.csv", header=hdr)
    se = cov.se
    p = normal_two_sided(f.theta.values / np.where(se > 0, se, np.nan))
    lines = [hdr.rstrip("\n"), f.diagnostics(), f"{'coef':<16}{'estimate':>14}{'se':>12}{'p':>8}"]
    for j, name in enumerate(GARCH_NAMES):
        lines.append(f"{name:<16}{f.theta.values[j]:>14.6g}{se[j]:>12.4g}{p[j]:>8.3f}")
    (out / "fit_report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines[1:]))
    if not f.converged:
        raise FitError("optimizer did not converge; see fit_report.txt")


def cmd_test_break(args, cfg: ExperimentConfig, model: str = "garch") -> None:
    d = DailyMeasures.from_csv(_measures_path(args, cfg), cfg.calendar)
    if args.measures2:
        d1, d2 = d, DailyMeasures.from_csv(args.measures2, cfg.calendar)
    else:
        if args.break_day is None:
            raise ConfigError("--break-day is required with a single measures file")
        d1, d2 = split_measures(d, args.break_day)
    rep = run_break_analysis(d1, d2, model)
    out = _out(cfg)
    hdr = cfg.header()
    stem = "break" if model == "garch" else "har_break"
    rep.to_csv(out / f"{stem}_report.csv", header=hdr)
    text = rep.to_text(header=hdr)
    (out / f"{stem}_report.txt").write_text(text)
    print(text, end="")


def cmd_har(args, cfg: ExperimentConfig) -> None:
    if args.break_day is not None or args.measures2:
        cmd_test_break(args, cfg, model="har")
        return
    d = DailyMeasures.from_csv(_measures_path(args, cfg), cfg.calendar)
    h = har_fit(d)
    se = h.cov.se
    p = normal_two_sided(h.theta / np.where(se > 0, se, np.nan))
    out = _out(cfg)
    hdr = cfg.header()
    with open(out / "har_fit.csv", "w") as fh:
        fh.write(hdr + "coordinate,estimate,se,p\n")
        for j, name in enumerate(HAR_NAMES):
            fh.write(f"{name},{h.theta[j]:.17g},{se[j]:.17g},{p[j]:.17g}\n")
    for j, name in enumerate(HAR_NAMES):
        print(f"{name:<16}{h.theta[j]:>14.6g}{se[j]:>12.4g}{p[j]:>8.3f}")


def cmd_study(args, cfg: ExperimentConfig) -> None:
    res = run_simulation_study(cfg)
    for (n, m), c in sorted(res.cells.items()):
        print(f"n={n:<4} m={m:<5} reps={len(c['theta']):<4} median sq. error (mean over coords) = {np.mean(res.median_se(n, m)):.4g}")
    if res.aborted:
        print(f"{len(res.aborted)} replication(s) aborted")
    for name, path in sorted(res.files.items()):
        print(f"{name}: {path}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key-value config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="concurrent replications")
    common.add_argument("--estimator", choices=("msrv", "arp", "paremedi"))
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="contagion", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="simulate a two-market tick panel")
    p.add_argument("--n", type=int, help="days (default: largest n in the grid)")
    p.add_argument("--m", type=int, help="intervals per session (default: largest m in the grid)")
    p = sub.add_parser("measure", parents=[common], help="daily realized measures from a tick CSV")
    p.add_argument("--ticks", help="tick CSV (default: <out-dir>/ticks.csv)")
    p.add_argument("--lunch-1", help="market 1 lunch break as 'start,end' day-fraction offsets from the open")
    p.add_argument("--lunch-2", help="market 2 lunch break as 'start,end'")
    p.add_argument("--clock", choices=("model", "utc"), default="model", help="meaning of the time column")
    p.add_argument("--open-utc", type=float, default=0.0, help="market 1 open in UTC hours (with --clock utc)")
    for name, hlp in (("fit", "quasi-likelihood fit with sandwich errors"),
                      ("test-break", "two-window break tests"),
                      ("har", "HAR contagion fit, or its break test with --break-day")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        p.add_argument("--measures", help="measures CSV (default: <out-dir>/measures.csv)")
        if name != "fit":
            p.add_argument("--break-day", type=int, help="first day of window 2")
            p.add_argument("--measures2", help="separate measures CSV for window 2")
    sub.add_parser("study", parents=[common], help="Monte Carlo study over the (n, m) grid")
    return ap


COMMANDS = {
    "simulate": cmd_simulate,
    "measure": cmd_measure,
    "fit": cmd_fit,
    "test-break": cmd_test_break,
    "har": cmd_har,
    "study": cmd_study,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(
            args.config,
            {"seed": args.seed, "workers": args.workers, "estimator": args.estimator, "out_dir": args.out_dir},
        )
        COMMANDS[args.command](args, cfg)
    except (ConfigError, MeasureError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SimulationError, FitError, InferenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
