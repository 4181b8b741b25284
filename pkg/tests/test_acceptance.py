"""Acceptance criteria, each at its stated tolerance.

The Monte Carlo study behind criteria 6 to 10 runs once per session; set
CONTAGION_WORKERS to spread its replications over several processes.
"""

import os
from pathlib import Path

import mpmath as mp
import numpy as np
import pytest
from scipy import stats

from contagion.cli import main
from contagion.harness import ExperimentConfig, run_simulation_study
from contagion.inference import chi2_ppf, chi2_sf, normal_ppf, normal_two_sided
from contagion.measures import arp, detect_jumps, msrv, msrv_weights, paremedi, session_measures
from contagion.params import JumpSpec, MarketCalendar, map_structural_to_garch, design_structural_params
from contagion.qmle import loglik_gradient, quasi_loglik
from contagion.simulate import NoiseSpec, SimConfig, simulate_panel

from conftest import brownian_prices

IV = 1e-4  # sigma^2 lambda of the benchmark path
WORKERS = int(os.environ.get("CONTAGION_WORKERS", "1"))


def _detail(record_property, text):
    record_property("detail", text)


# --------------------------------------------------------------------------
# shared Monte Carlo study


@pytest.fixture(scope="session")
def study(tmp_path_factory):
    cfg = ExperimentConfig(
        n_list=[100, 250, 500],
        m_list=[360, 720, 2160],
        replications=100,
        calibration_replications=500,
        power_replications=100,
        seed=20240101,
        substeps=10,
        workers=WORKERS,
        out_dir=str(tmp_path_factory.mktemp("study")),
    )
    return run_simulation_study(cfg)


# --------------------------------------------------------------------------


def test_criterion_01_msrv_weight_identities(record_property):
    worst = 0.0
    grid = [(M, C) for M in range(3, 41) for C in range(0, 16)]
    assert (11, 4) in grid
    for M, C in grid:
        a = msrv_weights(M, C)
        k = np.arange(1, M + 1)
        worst = max(worst, abs(a.sum() - 1.0), abs(np.sum(a / (k + C))))
    _detail(record_property, f"max identity error {worst:.2e} over {len(grid)} (M, C) pairs (tol 1e-12)")
    assert worst <= 1e-12


def test_criterion_02_estimator_consistency(record_property):
    reps = 500
    rng = np.random.default_rng(202)
    est = {"msrv": msrv, "arp": arp, "paremedi": paremedi}
    rmse = {k: [] for k in est}
    lines = []
    ok = True
    for m in (360, 720, 2160):
        vals = {k: np.empty(reps) for k in est}
        for r in range(reps):
            y = brownian_prices(rng, m, IV)
            for k, f in est.items():
                vals[k][r] = f(y)
        for k in est:
            v = vals[k]
            rmse[k].append(float(np.sqrt(np.mean((v - IV) ** 2))))
            if m == 2160:
                dev = abs(v.mean() - IV) / v.std(ddof=1)
                ok &= dev <= 3.0
                lines.append(f"{k} |mean-IV|/sd={dev:.2f}")
    for k in est:
        dec = all(b < a for a, b in zip(rmse[k], rmse[k][1:]))
        ok &= dec
        lines.append(f"{k} rmse/IV over m={[round(x / IV, 3) for x in rmse[k]]}")
    _detail(record_property, "; ".join(lines))
    assert ok


def test_criterion_03_jump_pipeline(record_property):
    reps, m = 500, 2160
    rng = np.random.default_rng(303)
    t = np.arange(m + 1) / m * 0.25
    k0 = m // 2
    hits = 0
    err = np.empty(reps)
    for r in range(reps):
        y = brownian_prices(rng, m, IV, noise_sd=1e-4)
        y[k0:] += 0.01
        hits += any(abs(j.index - k0) <= 1 and j.size > 0 for j in detect_jumps(t, y))
        err[r] = abs(session_measures(t, y).jvp - 1e-4) / 1e-4
    rate, med = hits / reps, float(np.median(err))
    _detail(record_property, f"detection {rate:.3f} (>= 0.95), median JV+ relative error {med:.3f} (< 0.20)")
    assert rate >= 0.95 and med < 0.20


def test_criterion_04_martingale_check(record_property):
    reps = 2000
    s, jumps, cal = design_structural_params(), JumpSpec(), MarketCalendar()
    D = np.empty((2, reps))
    for r in range(reps):
        p = simulate_panel(s, jumps, NoiseSpec(sd=0.0), cal, SimConfig(n=1, m=2160, burn_in=0, seed=40_000 + r), sigma2_start=(0.12, 0.12))
        tr = p.truth
        D[:, r] = tr.iv[:, 0] - np.array([cal.lambda_1, cal.lambda_2]) * tr.h[:, 0]
    z = D.mean(axis=1) / (D.std(axis=1, ddof=1) / np.sqrt(reps))
    _detail(record_property, f"mean(IV - lambda h) in standard errors: market 1 {z[0]:+.2f}, market 2 {z[1]:+.2f} (|.| <= 4)")
    assert np.all(np.abs(z) <= 4)


def test_criterion_05_gradient(record_property, design_measures):
    rng = np.random.default_rng(505)
    theta0 = map_structural_to_garch(design_structural_params(), JumpSpec()).values
    worst = 0.0
    for _ in range(20):
        x = theta0 * rng.uniform(0.5, 1.5, 18)
        g = loglik_gradient(x, design_measures)
        fd = np.empty(18)
        for j in range(18):
            e = np.zeros(18)
            e[j] = 1e-6 * max(1.0, abs(x[j]))
            fd[j] = (quasi_loglik(x + e, design_measures) - quasi_loglik(x - e, design_measures)) / (2 * e[j])
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8))))
    _detail(record_property, f"max relative error {worst:.2e} over 20 points (tol 1e-5)")
    assert worst <= 1e-5


def test_criterion_06_mse_decreases(record_property, study):
    med = {key: study.median_se(*key) for key in study.cells}
    bad_n = [(j, n1, n2) for j in range(18) for n1, n2 in ((100, 250), (250, 500)) if med[(n2, 2160)][j] > med[(n1, 2160)][j]]
    bad_m = [(j, m1, m2) for j in range(18) for m1, m2 in ((360, 720), (720, 2160)) if med[(250, m2)][j] > med[(250, m1)][j]]
    reps = sorted({len(c["theta"]) for c in study.cells.values()})
    _detail(record_property, f"increases in n at m=2160: {len(bad_n)} of 36; in m at n=250: {len(bad_m)} of 36; replications per cell {reps}")
    assert not bad_n and not bad_m


def test_criterion_07_null_calibration(record_property, study):
    W = np.array([r["W"] for r in study.h0])
    p = np.array([r["p"] for r in study.h0])
    Z = np.array([r["z"] for r in study.h0])
    ks = stats.kstest(W, lambda x: 1 - np.vectorize(chi2_sf)(x, 18)).statistic
    size = float(np.mean(p < 0.05))
    zm, zv = Z.mean(axis=0), Z.var(axis=0, ddof=1)
    ok = len(W) >= 490 and ks <= 0.08 and 0.02 <= size <= 0.10
    ok &= bool(np.all(np.abs(zm) <= 0.15) and np.all((zv >= 0.7) & (zv <= 1.4)))
    _detail(
        record_property,
        f"{len(W)} reps, KS {ks:.3f} (<= 0.08), size {size:.3f} in [0.02, 0.10], "
        f"Z mean range [{zm.min():+.3f}, {zm.max():+.3f}], Z var range [{zv.min():.3f}, {zv.max():.3f}]",
    )
    assert ok


def test_criterion_08_parameter_recovery(record_property, study):
    c = study.cells[(500, 2160)]
    i = int(np.flatnonzero(c["reps"] == c["reps"].min())[0])
    inside = np.abs(c["theta"][i] - study.truth) <= 4 * c["se"][i]
    _detail(record_property, f"replication {c['reps'][i]}: {int(inside.sum())} of 18 within 4 SE (>= 16)")
    assert inside.sum() >= 16


def test_criterion_09_coverage(record_property, study):
    c = study.cells[(500, 2160)]
    order = np.argsort(c["reps"])[:200]
    th, se = c["theta"][order], c["se"][order]
    cov = np.mean(np.abs(th - study.truth) <= normal_ppf(0.975) * se, axis=0)
    names = [f"{x:.2f}" for x in cov]
    _detail(record_property, f"{len(order)} reps, coverage per coordinate {names} (each in [0.90, 0.98])")
    assert len(order) == 200 and np.all((cov >= 0.90) & (cov <= 0.98))


def test_criterion_10_power_and_size(record_property, study):
    power = float(np.mean([r["p"] < 0.05 for r in study.alt]))
    h0 = sorted(study.h0, key=lambda r: r["rep"])[:100]
    size = float(np.mean([r["p"] < 0.05 for r in h0]))
    _detail(record_property, f"power {power:.2f} over {len(study.alt)} (>= 0.80), size {size:.2f} over {len(h0)} in [0.02, 0.10]")
    assert len(study.alt) >= 98 and power >= 0.80 and 0.02 <= size <= 0.10


def test_criterion_11_distribution_oracle(record_property):
    mp.mp.dps = 50
    q_mp = float(mp.findroot(lambda x: mp.gammainc(9, x / 2, mp.inf, regularized=True) - mp.mpf("0.05"), 28.9))
    z_mp = float(mp.sqrt(2) * mp.erfinv(mp.mpf("0.95")))
    q, z = chi2_ppf(0.95, 18), normal_ppf(0.975)
    e1, e2 = abs(q - q_mp), abs(z - z_mp)
    e3, e4 = abs(q - 28.869), abs(z - 1.959964)
    p1, p2 = chi2_sf(28.869, 18), normal_two_sided(1.959964)
    _detail(record_property, f"chi2(18) 95% point {q:.6f} (oracle diff {e1:.1e}), normal {z:.7f} (oracle diff {e2:.1e})")
    assert max(e1, e2) <= 1e-4 and e3 <= 1e-3 and e4 <= 1e-6
    assert abs(p1 - 0.05) <= 1e-4 and abs(p2 - 0.05) <= 1e-4


def test_criterion_12_determinism(record_property, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(
        "[experiment]\nn = 120\nm = 60, 120\nreplications = 1\ncalibration_replications = 1\n"
        "power_replications = 1\nseed = 99\nsubsteps = 2\novernight_points = 10\nburn_in = 10\n"
    )
    commands = [
        ["simulate", "--n", "120", "--m", "120"],
        ["measure"],
        ["fit"],
        ["test-break", "--break-day", "61"],
        ["har"],
        ["har", "--break-day", "61"],
        ["study"],
    ]
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        codes = [main([*c, "--config", str(cfg), "--out-dir", str(out)]) for c in commands]
        assert codes == [0] * len(commands)
        runs.append({p.name: p.read_bytes() for p in sorted(Path(out).iterdir())})
    same = [name for name in runs[0] if runs[0][name] == runs[1].get(name)]
    _detail(record_property, f"{len(same)} of {len(runs[0])} output files bit-identical across reruns of 6 subcommands")
    assert runs[0] == runs[1] and len(runs[0]) >= 15
