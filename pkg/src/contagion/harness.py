"""Experiment configuration, tick ingestion, Monte Carlo study and break-analysis pipelines."""

from __future__ import annotations

import configparser
import csv
import hashlib
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .har import HAR_NAMES, har_fit
from .inference import BreakTestReport, break_report, chi2_ppf, normal_ppf, sandwich_covariance
from .measures import DailyMeasures, MeasureError, build_daily_measures
from .params import (
    GARCH_NAMES,
    JumpSpec,
    MarketCalendar,
    StreamSpec,
    StructuralParams,
    map_structural_to_garch,
    design_structural_params,
    rho_constants,
    session_bounds,
    structural_from_mapping,
)
from .qmle import FitError, FitOptions, fit
from .simulate import LunchBreak, NoiseSpec, Session, SimConfig, SimulationError, TickPanel, simulate_panel

log = logging.getLogger(__name__)

MAX_ABORT_FRACTION = 0.02


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


@dataclass
class ExperimentConfig:
    n_list: list[int] = field(default_factory=lambda: [100, 250, 500])
    m_list: list[int] = field(default_factory=lambda: [360, 720, 2160])
    replications: int = 100
    seed: int = 20240101
    estimator: str = "msrv"
    structural: StructuralParams = field(default_factory=design_structural_params)
    jumps: JumpSpec = field(default_factory=JumpSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    calendar: MarketCalendar = field(default_factory=MarketCalendar)
    substeps: int = 10
    overnight_points: int = 100
    burn_in: int = 50
    calibration_replications: int = 0
    power_replications: int = 0
    alternative: StructuralParams | None = None
    out_dir: str = "out"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not self.n_list or not self.m_list:
            raise ConfigError("n and m grids must be non-empty")
        if min(self.n_list) < 30:
            raise ConfigError("every n in the grid must be at least 30")
        if min(self.m_list) < 16:
            raise ConfigError("every m in the grid must be at least 16")
        if self.estimator not in ("msrv", "arp", "paremedi"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        self.n_list = sorted(set(self.n_list))
        self.m_list = sorted(set(self.m_list))
        if max(self.n_list) ** 2 / min(self.m_list) > 100:
            log.warning(
                "max(n)^2 / min(m) = %.0f exceeds 100; the high-frequency error may dominate at this grid",
                max(self.n_list) ** 2 / min(self.m_list),
            )

    @property
    def n_max(self) -> int:
        return max(self.n_list)

    @property
    def m_max(self) -> int:
        return max(self.m_list)

    def canonical(self) -> str:
        """Stable text form of every setting that affects results."""
        s = self.structural
        parts = [
            f"n_list={self.n_list}",
            f"m_list={self.m_list}",
            f"replications={self.replications}",
            f"seed={self.seed}",
            f"estimator={self.estimator}",
            f"structural={_structural_text(s)}",
            f"jumps={self.jumps!r}",
            f"noise={self.noise!r}",
            f"calendar={self.calendar!r}",
            f"substeps={self.substeps}",
            f"overnight_points={self.overnight_points}",
            f"burn_in={self.burn_in}",
            f"calibration_replications={self.calibration_replications}",
            f"power_replications={self.power_replications}",
            f"alternative={_structural_text(self.alternative) if self.alternative else None}",
        ]
        return "\n".join(parts)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def header(self) -> str:
        return f"# config_hash={self.config_hash()} seed={self.seed}\n"

    def sim_config(self, n: int, m: int, seed: int) -> SimConfig:
        return SimConfig(
            n=n, m=m, seed=seed, substeps=self.substeps, overnight_points=self.overnight_points, burn_in=self.burn_in
        )


def _structural_text(s: StructuralParams) -> str:
    return repr((s.market1, s.market2, s.rho, s.mu_1, s.mu_2))


def load_config(path: str | os.PathLike | None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a sectioned key-value config; ``overrides`` (already typed) win over file values."""
    cp = configparser.ConfigParser()
    cp.optionxform = str  # structural keys are case-sensitive (omega_H_1 vs omega_L_1)
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file {path} not found")
        cp.read(path)
    kw: dict = {}
    try:
        if cp.has_section("experiment"):
            e = cp["experiment"]
            if "n" in e:
                kw["n_list"] = _ints(e["n"])
            if "m" in e:
                kw["m_list"] = _ints(e["m"])
            for key in ("replications", "seed", "substeps", "overnight_points", "burn_in",
                        "calibration_replications", "power_replications", "workers"):
                if key in e:
                    kw[key] = int(e[key])
            for key in ("estimator", "out_dir"):
                if key in e:
                    kw[key] = e[key].strip()
        if cp.has_section("calendar"):
            c = cp["calendar"]
            kw["calendar"] = MarketCalendar(
                float(c.get("lambda_1", 0.25)), float(c.get("lambda_2", 0.25)), float(c.get("tau", 0.5))
            )
        if cp.has_section("structural"):
            kw["structural"] = structural_from_mapping(dict(cp["structural"]))
        if cp.has_section("jumps"):
            j = cp["jumps"]
            b = float(j.get("b", 0.005))
            sd = float(j.get("sd", 0.0005))
            kw["jumps"] = JumpSpec(
                *(StreamSpec(float(j.get(k, d)), b, sd) for k, d in
                  (("pos_1", 12), ("neg_1", 16), ("pos_2", 16), ("neg_2", 12)))
            )
        if cp.has_section("noise"):
            nz = cp["noise"]
            kw["noise"] = NoiseSpec(
                float(nz.get("sd", 5e-4)), nz.get("family", "gaussian").strip(), float(nz.get("df", 3.0)),
                float(nz.get("ar", 0.0)),
            )
        if cp.has_section("alternative"):
            base = kw.get("structural", design_structural_params())
            kw["alternative"] = structural_from_mapping(dict(cp["alternative"]), base)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def derive_seed(master: int, stream: int, index: int) -> int:
    """Counter-based seed for replication ``index`` of stream ``stream``."""
    ss = np.random.SeedSequence([int(master) & (2**63 - 1), int(stream), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


STREAM_PANEL, STREAM_H0, STREAM_ALT, STREAM_EXTRA = 1, 2, 3, 4


def omega_doubled_alternative(s: StructuralParams, jumps: JumpSpec, market: int = 1) -> StructuralParams:
    """Structural parameters whose mapped omega^g for ``market`` is twice the original.

    Only omega_L moves: omega^g is affine in it with slope rho_l, and no other
    mapped coordinate depends on it.
    """
    theta = map_structural_to_garch(s, jumps)
    mp = s.market(market)
    rho = rho_constants(mp.alpha_H, mp.gamma_H).rho
    new_mp = replace(mp, omega_L=mp.omega_L + theta[f"omega_{market}"] / rho)
    return replace(s, market1=new_mp) if market == 1 else replace(s, market2=new_mp)


# --------------------------------------------------------------------------
# tick ingestion


def _parse_clock(text: str) -> float:
    """Hours from a 'HH:MM[:SS]' string or a plain number of hours."""
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        while len(parts) < 3:
            parts.append(0.0)
        return parts[0] + parts[1] / 60 + parts[2] / 3600
    return float(text)


@dataclass(frozen=True)
class ClockSpec:
    """How the CSV time column maps to model time.

    ``model``: times are already model time in days. ``utc``: times are wall-clock
    hours (or HH:MM:SS) and market 1 opens at ``open_utc_1`` hours.
    """

    kind: str = "model"
    open_utc_1: float = 0.0


def ingest_ticks(
    path: str | os.PathLike,
    calendar: MarketCalendar,
    lunch: dict[int, LunchBreak] | None = None,
    clock: ClockSpec = ClockSpec(),
) -> TickPanel:
    """Read and validate a (market, day, time, price) tick CSV into a TickPanel."""
    lunch = lunch or {}
    data: dict[int, dict[int, list[tuple[float, float]]]] = {1: {}, 2: {}}
    last: dict[tuple[int, int], float] = {}
    tol = 1e-9
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.DictReader(lines)
        if reader.fieldnames is None or not {"market", "day", "time", "price"} <= set(reader.fieldnames):
            raise MeasureError("tick CSV needs columns market, day, time, price")
        for row_no, rec in enumerate(reader, start=2):
            try:
                l = int(rec["market"])
                day = int(rec["day"])
                raw = rec["time"].strip()
                price = float(rec["price"])
            except (TypeError, ValueError) as exc:
                raise MeasureError(f"row {row_no}: unparseable tick ({exc})") from exc
            if l not in (1, 2):
                raise MeasureError(f"row {row_no}: market must be 1 or 2")
            if day < 1:
                raise MeasureError(f"row {row_no}: day must be >= 1")
            if clock.kind == "utc":
                t = day - 1 + (_parse_clock(raw) - clock.open_utc_1) / 24.0
            else:
                t = float(raw)
            if not (math.isfinite(t) and math.isfinite(price)):
                raise MeasureError(f"row {row_no}: non-finite value")
            lo, hi = session_bounds(calendar, l, day)
            if t < lo - tol or t > hi + tol:
                raise MeasureError(f"row {row_no}: tick at {t!r} outside the market {l} session [{lo}, {hi}]")
            lb = lunch.get(l)
            if lb is not None and lo + lb.start + tol < t < lo + lb.end - tol:
                raise MeasureError(f"row {row_no}: tick inside the market {l} lunch break")
            key = (l, day)
            if key in last:
                if t == last[key]:
                    raise MeasureError(f"row {row_no}: duplicate timestamp {t!r}")
                if t < last[key]:
                    raise MeasureError(f"row {row_no}: times not sorted within market {l}, day {day}")
            last[key] = t
            data[l].setdefault(day, []).append((t, price))
    days1, days2 = sorted(data[1]), sorted(data[2])
    if not days1:
        raise MeasureError("no ticks found")
    if days1 != days2:
        raise MeasureError("both markets must cover the same days")
    if days1 != list(range(days1[0], days1[-1] + 1)):
        missing = sorted(set(range(days1[0], days1[-1] + 1)) - set(days1))
        raise MeasureError(f"missing day(s) {missing[:5]}")
    sessions = {}
    for l in (1, 2):
        out = []
        for d in days1:
            arr = np.array(data[l][d])
            out.append(Session(arr[:, 0], arr[:, 1]))
        sessions[l] = out
    return TickPanel(calendar, sessions, lunch=dict(lunch), first_day=days1[0])


def subsample_panel(panel: TickPanel, step: int) -> TickPanel:
    """Every ``step``-th tick of each session, keeping the open and the close."""
    if step == 1:
        return panel
    sessions = {}
    for l in (1, 2):
        out = []
        for s in panel.sessions[l]:
            if (len(s.times) - 1) % step:
                raise ValueError("session length is not a multiple of the subsampling step")
            out.append(Session(s.times[::step], s.prices[::step]))
        sessions[l] = out
    return TickPanel(panel.calendar, sessions, panel.truth, panel.lunch, panel.next_open, panel.first_day)


# --------------------------------------------------------------------------
# Monte Carlo study


@dataclass
class WindowFit:
    theta: np.ndarray
    se: np.ndarray
    converged: bool
    fit: object = None
    cov: object = None


def _fit_window(d: DailyMeasures) -> WindowFit:
    f = fit(d)
    cov = sandwich_covariance(f, d)
    return WindowFit(np.array(f.theta.values), cov.se, f.converged, f, cov)


def _simulate_measures(cfg: ExperimentConfig, s: StructuralParams, n: int, m: int, seed: int) -> TickPanel:
    return simulate_panel(s, cfg.jumps, cfg.noise, cfg.calendar, cfg.sim_config(n, m, seed))


def _replication(args) -> dict:
    """One replication: the (n, m) grid from a single path plus optional H0/alternative windows."""
    cfg, rep = args
    out: dict = {"rep": rep, "cells": {}, "error": None}
    try:
        panel = _simulate_measures(cfg, cfg.structural, cfg.n_max, cfg.m_max, derive_seed(cfg.seed, STREAM_PANEL, rep))
        grid = rep < cfg.replications
        ms = cfg.m_list if grid else [cfg.m_max]
        base = None
        for m in ms:
            if cfg.m_max % m == 0:
                sub = subsample_panel(panel, cfg.m_max // m)
            else:
                sub = _simulate_measures(cfg, cfg.structural, cfg.n_max, m, derive_seed(cfg.seed, STREAM_EXTRA, rep * 1000 + m))
            d = build_daily_measures(sub, cfg.estimator)
            for n in (cfg.n_list if grid else [cfg.n_max]):
                wf = _fit_window(d.window(0, n))
                out["cells"][(n, m)] = (wf.theta, wf.se, wf.converged)
                if n == cfg.n_max and m == cfg.m_max:
                    base = wf
        if rep < cfg.calibration_replications:
            p2 = _simulate_measures(cfg, cfg.structural, cfg.n_max, cfg.m_max, derive_seed(cfg.seed, STREAM_H0, rep))
            w2 = _fit_window(build_daily_measures(p2, cfg.estimator))
            out["h0"] = _test_summary(base, w2)
        if rep < cfg.power_replications:
            alt = cfg.alternative or omega_doubled_alternative(cfg.structural, cfg.jumps)
            p3 = _simulate_measures(cfg, alt, cfg.n_max, cfg.m_max, derive_seed(cfg.seed, STREAM_ALT, rep))
            w3 = _fit_window(build_daily_measures(p3, cfg.estimator))
            out["alt"] = _test_summary(base, w3)
    except (SimulationError, FitError, MeasureError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def _test_summary(w1: WindowFit, w2: WindowFit) -> dict:
    rep = break_report(w1.fit, w1.cov, w2.fit, w2.cov)
    return {"W": rep.joint[0], "p": rep.joint[2], "W1": rep.country1[0], "W2": rep.country2[0], "z": rep.z}


@dataclass
class StudyResult:
    cfg: ExperimentConfig
    truth: np.ndarray
    cells: dict  # (n, m) -> dict with "theta", "se", "converged" arrays (rows = kept replications)
    h0: list[dict]
    alt: list[dict]
    aborted: list[tuple[int, str]]
    files: dict[str, Path]

    def mse(self, n: int, m: int) -> np.ndarray:
        c = self.cells[(n, m)]
        return np.mean((c["theta"] - self.truth) ** 2, axis=0)

    def median_se(self, n: int, m: int) -> np.ndarray:
        c = self.cells[(n, m)]
        return np.median((c["theta"] - self.truth) ** 2, axis=0)


def _run_map(cfg: ExperimentConfig, reps: list[int]) -> list[dict]:
    jobs = [(cfg, r) for r in reps]
    if cfg.workers == 1 or len(jobs) == 1:
        return [_replication(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
        return list(ex.map(_replication, jobs, chunksize=1))


def run_simulation_study(cfg: ExperimentConfig, write: bool = True) -> StudyResult:
    """MSE grid over (n, m) plus optional H0 calibration and power samples."""
    total = max(cfg.replications, cfg.calibration_replications, cfg.power_replications)
    results = sorted(_run_map(cfg, list(range(total))), key=lambda r: r["rep"])
    aborted = [(r["rep"], r["error"]) for r in results if r["error"]]
    for rep, msg in aborted:
        log.warning("replication %d aborted: %s", rep, msg)
    if len(aborted) > MAX_ABORT_FRACTION * total:
        raise SimulationError(f"{len(aborted)} of {total} replications aborted")
    ok = [r for r in results if not r["error"]]
    truth = np.array(map_structural_to_garch(cfg.structural, cfg.jumps).values)
    cells = {}
    for key in sorted({k for r in ok for k in r["cells"]}):
        rows = [r["cells"][key] for r in ok if key in r["cells"]]
        cells[key] = {
            "theta": np.array([x[0] for x in rows]),
            "se": np.array([x[1] for x in rows]),
            "converged": np.array([x[2] for x in rows]),
            "reps": np.array([r["rep"] for r in ok if key in r["cells"]]),
        }
    h0 = [dict(r["h0"], rep=r["rep"]) for r in ok if "h0" in r]
    alt = [dict(r["alt"], rep=r["rep"]) for r in ok if "alt" in r]
    res = StudyResult(cfg, truth, cells, h0, alt, aborted, {})
    if write:
        res.files = write_study_outputs(res, Path(cfg.out_dir))
    return res


def write_study_outputs(res: StudyResult, out: Path) -> dict[str, Path]:
    cfg = res.cfg
    out.mkdir(parents=True, exist_ok=True)
    hdr = cfg.header()
    files = {}
    p = out / "mse.csv"
    with open(p, "w") as fh:
        fh.write(hdr + "n,m,coordinate,mse,median_sq_error,replications\n")
        for (n, m), c in sorted(res.cells.items()):
            if len(c["theta"]) == 0:
                continue
            mse, med = res.mse(n, m), res.median_se(n, m)
            for j, name in enumerate(GARCH_NAMES):
                fh.write(f"{n},{m},{name},{mse[j]:.17g},{med[j]:.17g},{len(c['theta'])}\n")
    files["mse"] = p
    p = out / "estimates.csv"
    with open(p, "w") as fh:
        fh.write(hdr + "rep,n,m,converged," + ",".join(GARCH_NAMES) + "," + ",".join(f"se_{x}" for x in GARCH_NAMES) + "\n")
        for (n, m), c in sorted(res.cells.items()):
            for rep, th, se, cv in zip(c["reps"], c["theta"], c["se"], c["converged"]):
                fh.write(f"{rep},{n},{m},{int(cv)}," + ",".join(f"{v:.17g}" for v in np.concatenate([th, se])) + "\n")
    files["estimates"] = p
    for tag, rows in (("h0", res.h0), ("power", res.alt)):
        if not rows:
            continue
        p = out / f"{tag}_tests.csv"
        with open(p, "w") as fh:
            fh.write(hdr + "rep,W,p,W_country1,W_country2," + ",".join(f"z_{x}" for x in GARCH_NAMES) + "\n")
            for r in rows:
                vals = [r["W"], r["p"], r["W1"], r["W2"], *r["z"]]
                fh.write(f"{r['rep']}," + ",".join(f"{v:.17g}" for v in vals) + "\n")
        files[f"{tag}_tests"] = p
    if res.h0:
        files.update(write_qq(res.h0, out, hdr))
    if res.aborted:
        p = out / "aborted.csv"
        with open(p, "w") as fh:
            fh.write(hdr + "rep,error\n")
            for rep, msg in res.aborted:
                fh.write(f"{rep},\"{msg}\"\n")
        files["aborted"] = p
    return files


def qq_points(sample: np.ndarray, ppf) -> tuple[np.ndarray, np.ndarray]:
    x = np.sort(np.asarray(sample, dtype=float))
    q = (np.arange(1, len(x) + 1) - 0.5) / len(x)
    return x, np.array([ppf(v) for v in q])


def write_qq(h0: list[dict], out: Path, hdr: str) -> dict[str, Path]:
    files = {}
    W = np.array([r["W"] for r in h0])
    x, q = qq_points(W, lambda v: chi2_ppf(v, 18))
    p = out / "qq_wald.csv"
    with open(p, "w") as fh:
        fh.write(hdr + "sample,chi2_18_quantile\n")
        for a, b in zip(x, q):
            fh.write(f"{a:.17g},{b:.17g}\n")
    files["qq_wald"] = p
    Z = np.array([r["z"] for r in h0])
    qz = qq_points(Z[:, 0], normal_ppf)[1]
    p = out / "qq_z.csv"
    with open(p, "w") as fh:
        fh.write(hdr + "normal_quantile," + ",".join(GARCH_NAMES) + "\n")
        zs = np.sort(Z, axis=0)
        for i in range(len(qz)):
            fh.write(f"{qz[i]:.17g}," + ",".join(f"{v:.17g}" for v in zs[i]) + "\n")
    files["qq_z"] = p
    return files


# --------------------------------------------------------------------------
# break analysis


def split_measures(d: DailyMeasures, break_day: int) -> tuple[DailyMeasures, DailyMeasures]:
    """Window 1 holds days before ``break_day``, window 2 the break day onwards."""
    k = int(np.searchsorted(d.day, break_day))
    if k < 30 or d.n - k < 30:
        raise ConfigError("both break windows need at least 30 days")
    return d.window(0, k), d.window(k, d.n)


def run_break_analysis(
    d1: DailyMeasures, d2: DailyMeasures, model: str = "garch"
) -> BreakTestReport:
    """Fit both windows and run the joint, per-country and per-coordinate break tests."""
    for d in (d1, d2):
        if d.n < 30:
            raise ConfigError("both break windows need at least 30 days")
    if model == "garch":
        w1, w2 = _fit_window(d1), _fit_window(d2)
        return break_report(w1.fit, w1.cov, w2.fit, w2.cov, GARCH_NAMES)
    if model == "har":
        h1, h2 = har_fit(d1), har_fit(d2)
        return break_report(h1, h1.cov, h2, h2.cov, HAR_NAMES)
    raise ConfigError(f"unknown model {model!r}")
