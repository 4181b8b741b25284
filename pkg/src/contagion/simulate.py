"""Euler simulation of the two-market contagion jump-diffusion with noisy ticks.

Days are simulated chronologically: market-1 session, market-2 overnight
(which accumulates market 1's session integrals), market-2 session, market-1
overnight.  Open sessions run on a fine grid of ``m * substeps`` steps; the
overnight branch runs on a coarse latent grid whose nodes inside the other
market's session sit on that market's fine grid, so the contagion integrals
it sees are exact partial sums.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.signal import lfilter

from .params import (
    GarchParams,
    JumpSpec,
    MarketCalendar,
    MarketParams,
    StreamSpec,
    StructuralParams,
    map_structural_to_garch,
    open_level,
    rho_constants,
    session_bounds,
)

log = logging.getLogger(__name__)

Branch = Literal["open", "overnight"]


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Additive microstructure noise on observed log-prices.

    ``family`` is one of ``gaussian``, ``student_t`` (scaled to ``sd``) or
    ``ar1`` (stationary Gaussian AR(1) with coefficient ``ar``).
    """

    sd: float = 5e-4
    family: str = "gaussian"
    df: float = 3.0
    ar: float = 0.0

    def __post_init__(self) -> None:
        if self.sd < 0:
            raise ValueError("noise sd must be non-negative")
        if self.family not in ("gaussian", "student_t", "ar1"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.family == "student_t" and self.df <= 2:
            raise ValueError("student_t noise needs df > 2 for a finite sd")
        if self.family == "ar1" and not -1 < self.ar < 1:
            raise ValueError("ar1 coefficient must lie in (-1, 1)")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.sd == 0:
            return np.zeros(size)
        if self.family == "gaussian":
            return self.sd * rng.standard_normal(size)
        if self.family == "student_t":
            return self.sd * math.sqrt((self.df - 2) / self.df) * rng.standard_t(self.df, size)
        e = self.sd * rng.standard_normal(size)
        e[1:] *= math.sqrt(1 - self.ar**2)
        return lfilter([1.0], [1.0, -self.ar], e)


@dataclass(frozen=True)
class SimConfig:
    n: int
    m: int
    seed: int = 0
    substeps: int = 10
    overnight_points: int = 100
    burn_in: int = 50
    max_clamp_fraction: float = 1e-3

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 2:
            raise ValueError("need n >= 1 days and m >= 2 ticks per session")
        if self.substeps < 1 or self.overnight_points < 3:
            raise ValueError("substeps must be >= 1 and overnight_points >= 3")


@dataclass
class Session:
    """Observed ticks of one market on one day."""

    times: np.ndarray
    prices: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.prices = np.asarray(self.prices, dtype=float)
        if self.times.shape != self.prices.shape or self.times.ndim != 1:
            raise ValueError("times and prices must be 1-d arrays of equal length")


@dataclass
class GroundTruth:
    """Latent per-day quantities, arrays of shape (2, n) indexed [market - 1, day - 1]."""

    iv: np.ndarray
    ijp: np.ndarray
    ijn: np.ndarray
    ov: np.ndarray
    h: np.ndarray
    sigma2_open: np.ndarray
    sigma2_close: np.ndarray
    jump_times: list[list[np.ndarray]]
    jump_sizes: list[list[np.ndarray]]
    theta: GarchParams
    clamped_steps: int = 0
    total_steps: int = 0

    @property
    def n(self) -> int:
        return self.iv.shape[1]


@dataclass(frozen=True)
class LunchBreak:
    """Intra-session gap, as offsets (day fractions) from the session open."""

    start: float
    end: float

    def __post_init__(self) -> None:
        if not 0 < self.start < self.end:
            raise ValueError("lunch break needs 0 < start < end")


@dataclass
class TickPanel:
    calendar: MarketCalendar
    sessions: dict[int, list[Session]]
    truth: GroundTruth | None = None
    lunch: dict[int, LunchBreak] = field(default_factory=dict)
    # observed price at the open following the last day, per market
    next_open: dict[int, float] = field(default_factory=dict)
    first_day: int = 1

    @property
    def n(self) -> int:
        return len(self.sessions[1])


# --------------------------------------------------------------------------
# one-branch stepping


@dataclass(frozen=True)
class BranchState:
    """Instantaneous variance plus the integrals accumulated since the branch began.

    ``anchor`` is sigma^2 at the branch start ([t]_l for the open branch, the
    close for the overnight branch) and ``elapsed`` the time since then.
    """

    anchor: float
    elapsed: float = 0.0
    iv: float = 0.0
    jp: float = 0.0
    jn: float = 0.0
    z: float = 0.0
    ret: float = 0.0
    cross_v: float = 0.0
    cross_jp: float = 0.0
    cross_jn: float = 0.0


@dataclass
class Shocks:
    """Per-step inputs on a grid of ``len(dt)`` steps.

    ``jp``/``jn`` are squared own jump sizes arriving inside each step; the
    ``cross_*`` arrays are increments of the other market's session integrals.
    """

    dt: np.ndarray
    dB: np.ndarray
    dW: np.ndarray | None = None
    jp: np.ndarray | None = None
    jn: np.ndarray | None = None
    cross_v: np.ndarray | None = None
    cross_jp: np.ndarray | None = None
    cross_jn: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.dt)


@dataclass
class BranchPath:
    sigma2: np.ndarray  # variance at the left point of every step, then the end point
    dx: np.ndarray  # continuous price increments sigma dB
    clamped: int
    iv: np.ndarray | None = None  # running integral of sigma^2 at the grid nodes (open branch)


def _zeros_if_none(x: np.ndarray | None, n: int) -> np.ndarray:
    return np.zeros(n) if x is None else np.asarray(x, dtype=float)


def branch_variance(state: BranchState, branch: Branch, mp: MarketParams, lam: float, lam_other: float) -> float:
    """Instantaneous variance implied by a branch state."""
    e = state.elapsed
    if branch == "open":
        return (
            state.anchor
            + e / lam * (mp.omega_H + (mp.gamma_H - 1) * state.anchor)
            + mp.alpha_H / lam * state.iv
            + (mp.beta_H_pos * state.jp + mp.beta_H_neg * state.jn) / lam
            + mp.nu_H / lam**2 * (lam - e) * state.z**2
        )
    night = 1.0 - lam
    return (
        state.anchor
        + e / night * (mp.omega_L + (mp.gamma_L - 1) * state.anchor)
        + (mp.alpha_cross * state.cross_v + mp.beta_cross_pos * state.cross_jp + mp.beta_cross_neg * state.cross_jn)
        / lam_other
        + mp.alpha_L / night * state.ret**2
    )


def advance_variance(
    state: BranchState,
    branch: Branch,
    mp: MarketParams,
    lam: float,
    lam_other: float,
    shocks: Shocks,
) -> tuple[BranchState, BranchPath]:
    """Left-point Euler step of one volatility branch over the grid in ``shocks``.

    Raises ``SimulationError`` if the grid runs past the end of the branch.
    Negative variances are clamped at zero and counted in the returned path.
    """
    n = len(shocks)
    dt = np.asarray(shocks.dt, dtype=float)
    span = lam if branch == "open" else 1.0 - lam
    end = state.elapsed + float(dt.sum())
    if end > span * (1 + 1e-9) + 1e-12:
        raise SimulationError(f"step grid straddles the {branch} branch boundary")
    if n == 0:
        s2 = branch_variance(state, branch, mp, lam, lam_other)
        return state, BranchPath(np.array([s2]), np.zeros(0), 0)
    if branch == "open":
        return _advance_open(state, mp, lam, shocks, dt)
    return _advance_overnight(state, mp, lam, lam_other, shocks, dt)


def _advance_open(state, mp, lam, shocks, dt):
    n = len(dt)
    dW = _zeros_if_none(shocks.dW, n)
    jp = _zeros_if_none(shocks.jp, n)
    jn = _zeros_if_none(shocks.jn, n)
    uniform = dt.max() - dt.min() <= 1e-12 * dt[0]
    if uniform:
        e = state.elapsed + dt[0] * np.arange(n + 1)
    else:
        e = state.elapsed + np.concatenate([[0.0], np.cumsum(dt)])
    z = state.z + np.concatenate([[0.0], np.cumsum(dW)])
    cjp = state.jp + np.concatenate([[0.0], np.cumsum(jp)])
    cjn = state.jn + np.concatenate([[0.0], np.cumsum(jn)])
    a0 = state.anchor
    # everything except the alpha_H * iv feedback
    a = (
        a0
        + e / lam * (mp.omega_H + (mp.gamma_H - 1) * a0)
        + (mp.beta_H_pos * cjp + mp.beta_H_neg * cjn) / lam
        + mp.nu_H / lam**2 * np.maximum(lam - e, 0.0) * z**2
    )
    k = mp.alpha_H / lam
    iv = np.empty(n + 1)
    iv[0] = state.iv
    if uniform:
        h = dt[0]
        # iv_{j+1} = (1 + k h) iv_j + a_j h
        zi = np.array([(1 + k * h) * state.iv])
        iv[1:] = lfilter([h], [1.0, -(1 + k * h)], a[:n], zi=zi)[0]
        sigma2 = a + k * iv
        clamped = 0
        if sigma2[:n].min() < 0:
            uniform = False
    if not uniform:
        sigma2 = np.empty(n + 1)
        clamped = 0
        cur = state.iv
        for j in range(n):
            s2 = a[j] + k * cur
            if s2 < 0:
                s2 = 0.0
                clamped += 1
            sigma2[j] = s2
            cur += s2 * dt[j]
            iv[j + 1] = cur
        sigma2[n] = a[n] + k * cur
    dx = np.sqrt(np.maximum(sigma2[:n], 0.0)) * shocks.dB
    new = replace(state, elapsed=float(e[-1]), iv=float(iv[-1]), jp=float(cjp[-1]), jn=float(cjn[-1]), z=float(z[-1]))
    return new, BranchPath(sigma2, dx, clamped, iv)


def _advance_overnight(state, mp, lam, lam_other, shocks, dt):
    n = len(dt)
    night = 1.0 - lam
    e = state.elapsed + np.concatenate([[0.0], np.cumsum(dt)])
    cv = state.cross_v + np.concatenate([[0.0], np.cumsum(_zeros_if_none(shocks.cross_v, n))])
    cjp = state.cross_jp + np.concatenate([[0.0], np.cumsum(_zeros_if_none(shocks.cross_jp, n))])
    cjn = state.cross_jn + np.concatenate([[0.0], np.cumsum(_zeros_if_none(shocks.cross_jn, n))])
    a0 = state.anchor
    base = (
        a0
        + e / night * (mp.omega_L + (mp.gamma_L - 1) * a0)
        + (mp.alpha_cross * cv + mp.beta_cross_pos * cjp + mp.beta_cross_neg * cjn) / lam_other
    )
    c = mp.alpha_L / night
    dB = np.asarray(shocks.dB, dtype=float)
    sigma2 = np.empty(n + 1)
    dx = np.empty(n)
    ret = state.ret
    clamped = 0
    for j in range(n):
        s2 = base[j] + c * ret * ret
        if s2 < 0:
            s2 = 0.0
            clamped += 1
        sigma2[j] = s2
        inc = math.sqrt(s2) * dB[j]
        dx[j] = inc
        ret += inc
    sigma2[n] = base[n] + c * ret * ret
    new = replace(
        state, elapsed=float(e[-1]), ret=ret, cross_v=float(cv[-1]), cross_jp=float(cjp[-1]), cross_jn=float(cjn[-1])
    )
    return new, BranchPath(sigma2, dx, clamped)


# --------------------------------------------------------------------------
# full panel


@dataclass
class _SessionSim:
    sigma2_open: float
    sigma2_close: float
    iv: float
    ijp: float
    ijn: float
    x_ticks: np.ndarray  # latent log-price at the m + 1 tick times, relative to the open
    iv_nodes: np.ndarray  # running integral of sigma^2 on the fine grid (N + 1 nodes)
    dB: np.ndarray
    jump_steps: tuple[np.ndarray, np.ndarray]  # fine step index of each +/- jump
    jump_sq: tuple[np.ndarray, np.ndarray]  # squared sizes, sorted by step
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    clamped: int
    steps: int


def _draw_jumps(rng: np.random.Generator, stream: StreamSpec, lam: float) -> tuple[np.ndarray, np.ndarray]:
    if stream.intensity == 0:
        return np.zeros(0), np.zeros(0)
    k = rng.poisson(stream.intensity * lam)
    times = rng.uniform(0.0, lam, k)
    sq = stream.b + stream.sd * rng.standard_normal(k)
    bad = sq <= 0
    while bad.any():
        sq[bad] = stream.b + stream.sd * rng.standard_normal(int(bad.sum()))
        bad = sq <= 0
    return times, sq


def _simulate_session(rng, sigma2_open, mp, streams, lam, m, substeps) -> _SessionSim:
    n = m * substeps
    h = lam / n
    sqh = math.sqrt(h)
    dB = sqh * rng.standard_normal(n)
    dW = sqh * rng.standard_normal(n)
    tp, sqp = _draw_jumps(rng, streams[0], lam)
    tn, sqn = _draw_jumps(rng, streams[1], lam)
    # a jump at time t lands in step ceil(t / h) - 1, i.e. counts from node ceil(t / h)
    ip = np.clip(np.ceil(tp / h).astype(int), 1, n)
    inn = np.clip(np.ceil(tn / h).astype(int), 1, n)
    jp = np.bincount(ip - 1, weights=sqp, minlength=n)
    jn = np.bincount(inn - 1, weights=sqn, minlength=n)
    shocks = Shocks(np.full(n, h), dB, dW, jp, jn)
    state0 = BranchState(anchor=sigma2_open)
    state, path = advance_variance(state0, "open", mp, lam, lam, shocks)
    jump_dx = np.bincount(ip - 1, weights=np.sqrt(sqp), minlength=n) - np.bincount(
        inn - 1, weights=np.sqrt(sqn), minlength=n
    )
    x = np.concatenate([[0.0], np.cumsum(path.dx + jump_dx)])
    times = np.concatenate([tp, tn])
    sizes = np.concatenate([np.sqrt(sqp), -np.sqrt(sqn)])
    order = np.argsort(times, kind="stable")
    return _SessionSim(
        sigma2_open=sigma2_open,
        sigma2_close=float(path.sigma2[-1]),
        iv=state.iv,
        ijp=state.jp,
        ijn=state.jn,
        x_ticks=x[::substeps],
        iv_nodes=path.iv,
        dB=dB,
        jump_steps=(np.sort(ip - 1), np.sort(inn - 1)),
        jump_sq=(sqp[np.argsort(ip, kind="stable")], sqn[np.argsort(inn, kind="stable")]),
        jump_times=times[order],
        jump_sizes=sizes[order],
        clamped=path.clamped,
        steps=n,
    )


def _overnight_grid(gap1: float, other: _SessionSim, lam_other: float, gap2: float, points: int):
    """Coarse overnight grid: step lengths plus per-step increments of the other market's integrals."""
    total = gap1 + lam_other + gap2
    n_fine = len(other.iv_nodes) - 1
    n_mid = max(1, min(n_fine, round(points * lam_other / total)))
    idx = np.unique(np.round(np.linspace(0, n_fine, n_mid + 1)).astype(int))
    mid_dt = np.diff(idx) * (lam_other / n_fine)
    parts_dt, parts_v, parts_p, parts_n, parts_b = [], [], [], [], []
    for gap in (gap1, None, gap2):
        if gap is None:
            parts_dt.append(mid_dt)
            parts_v.append(np.diff(other.iv_nodes[idx]))
            for lst, steps, sq in zip((parts_p, parts_n), other.jump_steps, other.jump_sq):
                # squared jumps arriving in fine steps [idx_k, idx_{k+1})
                cum = np.concatenate([[0.0], np.cumsum(sq)])
                lst.append(np.diff(cum[np.searchsorted(steps, idx, side="left")]))
            parts_b.append(np.add.reduceat(other.dB, idx[:-1]))
            continue
        if gap <= 0:
            continue
        k = max(1, round(points * gap / total))
        parts_dt.append(np.full(k, gap / k))
        for lst in (parts_v, parts_p, parts_n):
            lst.append(np.zeros(k))
        parts_b.append(np.full(k, np.nan))
    return tuple(np.concatenate(p) for p in (parts_dt, parts_v, parts_p, parts_n, parts_b))


def _simulate_overnight(rng, sigma2_close, mp, lam, lam_other, grid, rho):
    dt, cv, cjp, cjn, other_b = grid
    indep = np.sqrt(dt) * rng.standard_normal(len(dt))
    if rho != 0.0:
        overlap = ~np.isnan(other_b)
        dB = indep.copy()
        dB[overlap] = rho * other_b[overlap] + math.sqrt(1 - rho**2) * indep[overlap]
    else:
        dB = indep
    state, path = advance_variance(
        BranchState(anchor=sigma2_close), "overnight", mp, lam, lam_other, Shocks(dt, dB, cross_v=cv, cross_jp=cjp, cross_jn=cjn)
    )
    return float(path.sigma2[-1]), state.ret, path.clamped, len(dt)


def _initial_open_variance(theta: GarchParams, s: StructuralParams, jumps: JumpSpec, cal: MarketCalendar) -> np.ndarray:
    """Rough stationary open variance, used only to start the burn-in."""
    h = np.array([0.05, 0.05])
    v = theta.values
    for _ in range(200):
        new = np.empty(2)
        for l in (0, 1):
            b = v[9 * l : 9 * l + 9]
            lam = cal.lam(l + 1)
            pos, neg = jumps.streams(l + 1)
            qpos, qneg = jumps.streams(2 - l)
            o = 1 - l
            new[l] = (
                b[0]
                + b[1] * h[l]
                + b[2] * h[l]
                + b[3] * pos.intensity * pos.b
                + b[4] * neg.intensity * neg.b
                + b[5] * h[l]
                + b[6] * h[o]
                + b[7] * qpos.intensity * qpos.b
                + b[8] * qneg.intensity * qneg.b
            )
        if not np.all(np.isfinite(new)) or np.any(new > 1e6):
            break
        h = np.maximum(new, 1e-8)
    out = np.empty(2)
    for l in (1, 2):
        mp = s.market(l)
        c = rho_constants(mp.alpha_H, mp.gamma_H)
        out[l - 1] = max((h[l - 1] - open_level(mp, jumps.streams(l))) / c.rho, 1e-8)
    return out


def simulate_panel(
    s: StructuralParams,
    jumps: JumpSpec,
    noise: NoiseSpec,
    cal: MarketCalendar,
    cfg: SimConfig,
    sigma2_start: tuple[float, float] | None = None,
) -> TickPanel:
    """Simulate ``cfg.n`` days of noisy ticks for both markets, with ground truth."""
    for l in (1, 2):
        if not 0 < s.market(l).alpha_H < 1:
            raise ValueError(f"alpha_{l}H must lie in (0, 1)")
    rng = np.random.default_rng(cfg.seed)
    theta = map_structural_to_garch(s, jumps)
    lam = (cal.lambda_1, cal.lambda_2)
    # market 1 overnight: gap A, market-2 session, gap B; market 2 overnight: gap B, market-1 session, gap A
    gap_a = cal.tau - cal.lambda_1
    gap_b = 1.0 - cal.tau - cal.lambda_2
    if sigma2_start is None:
        sig_open = _initial_open_variance(theta, s, jumps, cal)
    else:
        sig_open = np.array(sigma2_start, dtype=float)
    total_days = cfg.burn_in + cfg.n
    mp1, mp2 = s.market1, s.market2
    st1, st2 = jumps.streams(1), jumps.streams(2)

    out = {k: np.zeros((2, cfg.n)) for k in ("iv", "ijp", "ijn", "ov", "sigma2_open", "sigma2_close")}
    jt: list[list[np.ndarray]] = [[], []]
    js: list[list[np.ndarray]] = [[], []]
    sessions: dict[int, list[Session]] = {1: [], 2: []}
    clamped = steps = 0
    x = np.zeros(2)
    # market 2 starts the burn-in "at its close" of day 0
    sig2_close_2 = sig_open[1]
    sig2_open_1 = sig_open[0]
    pending_ov2 = None
    tick_grid = [np.arange(cfg.m + 1) * (lam[l] / cfg.m) for l in (0, 1)]
    next_open_obs: dict[int, float] = {}

    for d in range(total_days):
        day = d - cfg.burn_in + 1  # emitted days are 1..n
        emit = day >= 1
        s1 = _simulate_session(rng, sig2_open_1, mp1, st1, lam[0], cfg.m, cfg.substeps)
        x1_ticks = x[0] + s1.x_ticks
        x[0] = x1_ticks[-1]
        # market 2 overnight, ending at its day-d open
        grid2 = _overnight_grid(gap_b, s1, lam[0], gap_a, cfg.overnight_points)
        sig2_open_2, ret2, c2, n2 = _simulate_overnight(rng, sig2_close_2, mp2, lam[1], lam[0], grid2, s.rho)
        x[1] += ret2
        if pending_ov2 is not None:
            out["ov"][1, pending_ov2] = ret2**2
            pending_ov2 = None
        s2 = _simulate_session(rng, sig2_open_2, mp2, st2, lam[1], cfg.m, cfg.substeps)
        x2_ticks = x[1] + s2.x_ticks
        x[1] = x2_ticks[-1]
        sig2_close_2 = s2.sigma2_close
        grid1 = _overnight_grid(gap_a, s2, lam[1], gap_b, cfg.overnight_points)
        sig2_open_1, ret1, c1, n1 = _simulate_overnight(rng, s1.sigma2_close, mp1, lam[0], lam[1], grid1, s.rho)
        x[0] += ret1
        clamped += s1.clamped + s2.clamped + c1 + c2
        steps += s1.steps + s2.steps + n1 + n2
        if not (np.isfinite(sig2_open_1) and np.isfinite(sig2_open_2) and np.all(np.isfinite(x))):
            raise SimulationError(f"non-finite state on simulated day {day}")
        if emit:
            i = day - 1
            for l, sim, ticks in ((0, s1, x1_ticks), (1, s2, x2_ticks)):
                out["iv"][l, i] = sim.iv
                out["ijp"][l, i] = sim.ijp
                out["ijn"][l, i] = sim.ijn
                out["sigma2_open"][l, i] = sim.sigma2_open
                out["sigma2_close"][l, i] = sim.sigma2_close
                open_t = session_bounds(cal, l + 1, day)[0]
                jt[l].append(open_t + sim.jump_times)
                js[l].append(sim.jump_sizes)
                y = ticks + noise.draw(rng, cfg.m + 1)
                sessions[l + 1].append(Session(open_t + tick_grid[l], y))
            out["ov"][0, i] = ret1**2
            pending_ov2 = i
    # close the last market-2 overnight so OV_{2,n} and the next opens are known
    s1 = _simulate_session(rng, sig2_open_1, mp1, st1, lam[0], cfg.m, cfg.substeps)
    grid2 = _overnight_grid(gap_b, s1, lam[0], gap_a, cfg.overnight_points)
    _, ret2, _, _ = _simulate_overnight(rng, sig2_close_2, mp2, lam[1], lam[0], grid2, s.rho)
    out["ov"][1, pending_ov2] = ret2**2
    next_open_obs[1] = float(x[0] + noise.draw(rng, 1)[0])
    next_open_obs[2] = float(x[1] + ret2 + noise.draw(rng, 1)[0])

    if steps and clamped > cfg.max_clamp_fraction * steps:
        raise SimulationError(f"variance clamped on {clamped} of {steps} steps")
    if clamped:
        log.warning("variance clamped at zero on %d of %d steps", clamped, steps)

    h = truth_h(theta, out, cal, s, jumps)
    truth = GroundTruth(
        iv=out["iv"], ijp=out["ijp"], ijn=out["ijn"], ov=out["ov"], h=h,
        sigma2_open=out["sigma2_open"], sigma2_close=out["sigma2_close"],
        jump_times=jt, jump_sizes=js, theta=theta, clamped_steps=clamped, total_steps=steps,
    )
    return TickPanel(cal, sessions, truth=truth, next_open=next_open_obs)


def truth_h(theta: GarchParams, out: dict, cal: MarketCalendar, s: StructuralParams, jumps: JumpSpec) -> np.ndarray:
    """Conditional GARCH volatility driven by the simulated integrals."""
    from .qmle import filter_recursion

    h0 = np.array(
        [
            open_level(s.market(l), jumps.streams(l))
            + rho_constants(s.market(l).alpha_H, s.market(l).gamma_H).rho * out["sigma2_open"][l - 1, 0]
            for l in (1, 2)
        ]
    )
    h, _ = filter_recursion(
        theta.values, out["iv"], out["ijp"], out["ijn"], out["ov"], cal.lambda_1, cal.lambda_2, h0, floor=None
    )
    return h


def panel_to_csv(panel: TickPanel, path, truth_path=None, header: str = "") -> None:
    """Write ticks (market, day, time, price) and optionally the ground truth."""
    rows = []
    for l in (1, 2):
        for i, sess in enumerate(panel.sessions[l]):
            day = panel.first_day + i
            for t, y in zip(sess.times, sess.prices):
                rows.append(f"{l},{day},{float(t)!r},{float(y)!r}")
    with open(path, "w") as fh:
        fh.write(header)
        fh.write("market,day,time,price\n")
        fh.write("\n".join(rows))
        fh.write("\n")
    if truth_path is not None and panel.truth is not None:
        tr = panel.truth
        with open(truth_path, "w") as fh:
            fh.write(header)
            fh.write("market,day,iv,ijp,ijn,ov,h\n")
            for l in (0, 1):
                for i in range(tr.n):
                    vals = (tr.iv[l, i], tr.ijp[l, i], tr.ijn[l, i], tr.ov[l, i], tr.h[l, i])
                    fh.write(f"{l + 1},{panel.first_day + i}," + ",".join(repr(float(v)) for v in vals) + "\n")
