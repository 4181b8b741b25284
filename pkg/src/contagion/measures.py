"""Daily realized measures from noisy ticks: jumps, signed jump variations, RV estimators."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .params import MarketCalendar, session_bounds

log = logging.getLogger(__name__)

RV_FLOOR = 1e-12
MAD_SCALE = 0.6744897501960817  # standard normal 75% quantile


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class JumpEstimate:
    location: float
    size: float
    statistic: float
    index: int  # first tick after the jump


@dataclass
class DailyMeasures:
    """Per-day realized measures; arrays have shape (2, n) indexed [market - 1, day - day0]."""

    day: np.ndarray
    rv: np.ndarray
    jvp: np.ndarray
    jvn: np.ndarray
    ov: np.ndarray
    estimator: str = "msrv"
    calendar: MarketCalendar = field(default_factory=MarketCalendar)
    floored: int = 0

    def __post_init__(self) -> None:
        self.day = np.asarray(self.day, dtype=int)
        for name in ("rv", "jvp", "jvn", "ov"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (2, len(self.day)):
                raise MeasureError(f"{name} must have shape (2, {len(self.day)})")
            setattr(self, name, a)
        if len(self.day) > 1 and np.any(np.diff(self.day) != 1):
            raise MeasureError("measure panel must be contiguous in day")

    @property
    def n(self) -> int:
        return len(self.day)

    def window(self, start: int, stop: int) -> "DailyMeasures":
        """Rows start..stop-1 (positional)."""
        sl = slice(start, stop)
        return DailyMeasures(
            self.day[sl], self.rv[:, sl], self.jvp[:, sl], self.jvn[:, sl], self.ov[:, sl],
            self.estimator, self.calendar,
        )

    def swapped(self) -> "DailyMeasures":
        return DailyMeasures(
            self.day, self.rv[::-1], self.jvp[::-1], self.jvn[::-1], self.ov[::-1], self.estimator,
            self.calendar.swapped(),
        )

    def to_csv(self, path, header: str = "") -> None:
        with open(path, "w") as fh:
            fh.write(header)
            fh.write("day,market,rv,jv_pos,jv_neg,ov,estimator\n")
            for i, day in enumerate(self.day):
                for l in (0, 1):
                    vals = (self.rv[l, i], self.jvp[l, i], self.jvn[l, i], self.ov[l, i])
                    fh.write(f"{day},{l + 1}," + ",".join(f"{v:.17g}" for v in vals) + f",{self.estimator}\n")

    @classmethod
    def from_csv(cls, path, calendar: MarketCalendar | None = None) -> "DailyMeasures":
        import csv

        rows: dict[tuple[int, int], tuple[float, ...]] = {}
        est = "msrv"
        with open(path, newline="") as fh:
            lines = (ln for ln in fh if not ln.startswith("#"))
            for lineno, rec in enumerate(csv.DictReader(lines), start=2):
                try:
                    key = (int(rec["day"]), int(rec["market"]))
                    rows[key] = tuple(float(rec[k]) for k in ("rv", "jv_pos", "jv_neg", "ov"))
                except (KeyError, ValueError) as exc:
                    raise MeasureError(f"bad measures row {lineno}: {exc}") from exc
                if key[1] not in (1, 2):
                    raise MeasureError(f"bad market on row {lineno}")
                est = rec.get("estimator") or est
        days = sorted({d for d, _ in rows})
        if not days:
            raise MeasureError("empty measures file")
        n = len(days)
        arr = np.full((4, 2, n), np.nan)
        for j, d in enumerate(days):
            for l in (1, 2):
                if (d, l) not in rows:
                    raise MeasureError(f"missing day {d} for market {l}")
                arr[:, l - 1, j] = rows[(d, l)]
        return cls(np.array(days), arr[0], arr[1], arr[2], arr[3], est, calendar or MarketCalendar())


# --------------------------------------------------------------------------
# jump detection


def _robust_var(x: np.ndarray) -> float:
    if len(x) == 0:
        return 0.0
    med = np.median(x)
    return float((np.median(np.abs(x - med)) / MAD_SCALE) ** 2)


def _haar_details(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Non-decimated Haar details for a jump between ticks k-1 and k, k = 1..m."""
    d1 = np.diff(y) / math.sqrt(2.0)
    p = np.concatenate([[y[0]], y, [y[-1]]])  # edge padding for the two-tick windows
    # (y_k + y_{k+1} - y_{k-2} - y_{k-1}) / 2 with padded index shifted by one
    d2 = (p[2:-1] + p[3:] - p[:-3] - p[1:-2]) / 2.0
    return d1, d2


def detect_jumps(times: np.ndarray, prices: np.ndarray, threshold_scale: float = 1.0) -> list[JumpEstimate]:
    """Haar wavelet jump detection with the universal threshold on both fine levels.

    Sizes are window-mean differences at ``default_window``; ``window_jump_sizes``
    re-sizes them at any other window.
    """
    times = np.asarray(times, dtype=float)
    y = np.asarray(prices, dtype=float)
    if len(y) < 16:
        raise MeasureError("jump detection needs at least 16 ticks")
    m = len(y) - 1
    d1, d2 = _haar_details(y)
    thr = threshold_scale * math.sqrt(2.0 * math.log(m))
    s1 = math.sqrt(_robust_var(d1))
    s2 = math.sqrt(_robust_var(d2))
    cand = np.flatnonzero((np.abs(d1) > thr * s1) & (np.abs(d2) > thr * s2)) + 1
    if len(cand) == 0:
        return []
    # adjacent candidates describe one jump: keep the strongest level-1 response
    keep = []
    group = [cand[0]]
    for k in cand[1:]:
        if k - group[-1] <= 1:
            group.append(k)
        else:
            keep.append(max(group, key=lambda j: abs(d1[j - 1])))
            group = [k]
    keep.append(max(group, key=lambda j: abs(d1[j - 1])))
    idx = np.array(keep)
    window = default_window(y)
    sizes = window_jump_sizes(y, idx, window)
    scale = s1 if s1 > 0 else 1.0
    out = []
    for k, sz in zip(idx, sizes):
        if sz == 0:
            continue
        loc = 0.5 * (times[k - 1] + times[k])
        out.append(JumpEstimate(float(loc), float(sz), float(abs(d1[k - 1]) / scale), int(k)))
    return out


def default_window(y: np.ndarray) -> int:
    """Ticks per side for the jump-size averages.

    Capped at ceil(sqrt(m)); shrunk towards the noise/diffusion balance
    sqrt(3 noise_var / diffusion_var) so that drift over long windows does not
    contaminate the size estimate when noise is small relative to volatility.
    """
    m = len(y) - 1
    cap = max(1, math.ceil(math.sqrt(m)))
    r1 = np.diff(y)
    r2 = y[2:] - y[:-2]
    v1 = _robust_var(r1)  # diffusion + 2 noise
    v2 = _robust_var(r2)  # 2 diffusion + 2 noise
    diff_var = v2 - v1
    noise_var = max(v1 - diff_var, 0.0) / 2.0
    if diff_var <= 0:
        return cap
    return int(min(cap, max(1, round(math.sqrt(3.0 * noise_var / diff_var)))))


def window_jump_sizes(y: np.ndarray, idx: Sequence[int], window: int) -> np.ndarray:
    """Post-window mean minus pre-window mean around each jump index.

    Windows stop at neighbouring jumps and at the session edges rather than
    straddling them.
    """
    y = np.asarray(y, dtype=float)
    idx = np.asarray(idx, dtype=int)
    if window < 1:
        raise MeasureError("jump window must be at least one tick")
    if len(idx) and (idx.min() < 1 or idx.max() > len(y) - 1 or np.any(np.diff(idx) <= 0)):
        raise MeasureError("jump indices must be increasing and inside the session")
    cs = np.concatenate([[0.0], np.cumsum(y)])
    sizes = np.empty(len(idx))
    for j, k in enumerate(idx):
        lo = max(k - window, idx[j - 1] if j > 0 else 0)
        hi = min(k + window, idx[j + 1] if j + 1 < len(idx) else len(y))
        pre = (cs[k] - cs[lo]) / (k - lo)
        post = (cs[hi] - cs[k]) / (hi - k)
        sizes[j] = post - pre
    return sizes


def signed_jump_variations(
    prices: np.ndarray, jumps: Sequence[JumpEstimate], window: int | None = None
) -> tuple[float, float]:
    """(JV+, JV-) as sums of squared window-mean differences split by sign."""
    if not jumps:
        return 0.0, 0.0
    y = np.asarray(prices, dtype=float)
    idx = [j.index for j in jumps]
    sizes = window_jump_sizes(y, idx, window or default_window(y))
    jvp = float(np.sum(sizes[sizes > 0] ** 2))
    jvn = float(np.sum(sizes[sizes < 0] ** 2))
    return jvp, jvn


def jump_adjust(prices: np.ndarray, jumps: Sequence[JumpEstimate]) -> np.ndarray:
    """Remove each estimated jump from the prices at and after its index."""
    y = np.array(prices, dtype=float)
    for j in jumps:
        y[j.index :] -= j.size
    return y


# --------------------------------------------------------------------------
# MSRV


def msrv_weights(M: int, C: int) -> np.ndarray:
    if M < 3:
        raise MeasureError("MSRV needs M >= 3 scales")
    if C < 0:
        raise MeasureError("MSRV offset C must be non-negative")
    k = np.arange(1, M + 1, dtype=float)
    return 12.0 * (k + C) * (k - M / 2.0 - 0.5) / (M * (M * M - 1.0))


def msrv_zeta(M: int, C: int, m: int) -> float:
    """Noise-bias constant; ``m`` is the number of returns (m + 1 observations)."""
    return (M + C) * (C + 1.0) / ((m + 1.0) * (M - 1.0))


def subsampled_rv(y: np.ndarray, K: int) -> float:
    d = y[K:] - y[:-K]
    return float(d @ d) / K


def msrv(prices: np.ndarray, M: int = 11, C: int = 4) -> float:
    """Multi-scale realized volatility of (already jump-adjusted) prices."""
    y = np.asarray(prices, dtype=float)
    m = len(y) - 1
    a = msrv_weights(M, C)
    if m <= M + C:
        raise MeasureError("session shorter than the largest MSRV scale")
    rvk = np.array([subsampled_rv(y, k + C) for k in range(1, M + 1)])
    return float(a @ rvk + msrv_zeta(M, C, m) * (rvk[0] - rvk[-1]))


# --------------------------------------------------------------------------
# ARP


def tent(x: np.ndarray | float) -> np.ndarray:
    """g(x) = min(x, 1 - x) on [0, 1], zero outside."""
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0) & (x <= 1), np.minimum(x, 1 - x), 0.0)


def c_a(a: float) -> float:
    return max((a - 1.0) / a, math.sqrt((2.0 - a) / a))


def t_a(a: float) -> float:
    return (1.0 / (a * c_a(a))) ** (1.0 / (a - 1.0))


def psi_a(x: np.ndarray | float, a: float = 2.0) -> np.ndarray:
    """Catoni-type influence function used for robust truncation."""
    x = np.asarray(x, dtype=float)
    u = np.minimum(np.abs(x), t_a(a))
    return -np.sign(x) * np.log1p(-u + c_a(a) * u**a)


def preaverage(y: np.ndarray, w: int) -> np.ndarray:
    """Pre-averaged returns sum_{r<w} g(r/w) (y[k+r+1] - y[k+r]) for k = 0..m-w."""
    r = np.diff(y)
    g = tent(np.arange(w) / w)
    # correlate: out[k] = sum_r g[r] r[k + r]
    return np.correlate(r, g, mode="valid")


def arp(prices: np.ndarray, a: float = 2.0, c: float = 0.15) -> float:
    """Adaptive robust pre-averaging realized volatility with a fixed tail order ``a``."""
    if not 1.0 < a <= 2.0:
        raise MeasureError("ARP moment order must lie in (1, 2]")
    if c <= 0:
        raise MeasureError("ARP truncation scale must be positive")
    y = np.asarray(prices, dtype=float)
    m = len(y) - 1
    K = int(math.floor(math.sqrt(m)))
    if K < 2:
        raise MeasureError("ARP needs m >= 4")
    g = tent(np.arange(K) / K)
    phi = float(np.sum(g**2)) / K
    ybar = preaverage(y, K)[1 : m - K + 1]  # k = 1..m-K
    Q = (m - K) / (phi * K) * ybar**2
    Qs = 0.5 * np.diff(y)[1:] ** 2  # k = 1..m-1
    S = float(np.mean(np.abs(Q) ** a))
    Ss = float(np.mean(np.abs(Qs) ** a))
    if S == 0 or Ss == 0:
        return 0.0
    ca = c_a(a)
    th = c * (K / ((a - 1) * ca * S * (m - K))) ** (1 / a)
    ths = c * (1 / ((a - 1) * ca * Ss * (m - 1))) ** (1 / a)
    zeta = arp_zeta(m, K)
    first = float(np.sum(psi_a(th * Q, a))) / ((m - K) * th)
    second = zeta / (phi * ths * K) * float(np.sum(psi_a(ths * Qs, a)))
    return first - second


def arp_zeta(m: int, K: int) -> float:
    """Noise-bias constant making the ARP correction cancel i.i.d. noise exactly.

    The first term carries (m - K) psi sigma_eps^2 / (phi K) of noise, with psi the
    squared norm of the tent differences; the Q* sum carries (m - 1) sigma_eps^2.
    """
    gk = tent(np.arange(K + 1) / K)
    psi = float(np.sum(np.diff(gk) ** 2))
    return psi * (m - K) / (m - 1)


# --------------------------------------------------------------------------
# PaReMeDI


def remedi_products(y: np.ndarray, kn: int, lag: int, start: int, stop: int) -> np.ndarray:
    """(y[k+lag] - y[k+lag+kn]) (y[k] - y[k-kn]) for k = start..stop (inclusive).

    Negative lags use |lag| so the two increments never overlap.
    """
    s = abs(lag)
    k = np.arange(start, stop + 1)
    return (y[k + s] - y[k + s + kn]) * (y[k] - y[k - kn])


def phibar(w: int, lag: int) -> float:
    s = abs(lag)
    k = np.arange(s, w + 1)
    return float(w * np.sum((tent((k + 1) / w) - tent(k / w)) * (tent((k - s + 1) / w) - tent((k - s) / w))))


def paremedi(prices: np.ndarray, kn: int = 10, k_phi: float = 4.78, pilot: float | None = None) -> float:
    """Pre-averaged ReMeDI realized volatility; ``pilot`` is an RV pilot (MSRV by default)."""
    y = np.asarray(prices, dtype=float)
    m = len(y) - 1
    sbar = int(math.floor(m ** (1 / 7)))
    if m < 2 * kn + sbar + 4:
        raise MeasureError("too few ticks for the PaReMeDI windows")
    # R: autocovariance sum of the noise via ReMeDI products
    stop_r = m - sbar - kn
    R = sum(
        float(np.sum(remedi_products(y, kn, s, kn, stop_r))) * (1 if s == 0 else 2) for s in range(0, sbar + 1)
    ) / m
    R = max(R, 0.0)
    if pilot is None:
        pilot = msrv(y) if m > 15 else float(np.sum(np.diff(y) ** 2))
    if pilot <= 0:
        w = 2
    else:
        w = max(2, int(math.ceil(k_phi * math.sqrt(R) / math.sqrt(pilot) * math.sqrt(m))))
    w = min(w, (m - 2 * kn - sbar) // 2)
    if w < 2:
        raise MeasureError("too few ticks for the PaReMeDI windows")
    phi = float(np.sum(tent(np.arange(1, w + 1) / w) ** 2)) / w
    ybar = preaverage(y, w)
    first = float(ybar @ ybar) / (w * phi)
    stop = min(m - w, m - sbar - kn)
    corr = 0.0
    for s in range(0, sbar + 1):
        mult = 1 if s == 0 else 2
        corr += mult * phibar(w, s) * float(np.sum(remedi_products(y, kn, s, kn, stop)))
    return first - corr / (w * w * phi)


# --------------------------------------------------------------------------
# daily panel


ESTIMATORS: dict[str, Callable[[np.ndarray], float]] = {"msrv": msrv, "arp": arp, "paremedi": paremedi}


@dataclass
class SessionMeasures:
    rv: float
    jvp: float
    jvn: float
    jumps: list[JumpEstimate]


def session_measures(
    times: np.ndarray, prices: np.ndarray, estimator: str = "msrv", window: int | None = None
) -> SessionMeasures:
    """Detect jumps, compute signed JV, jump-adjust and apply the RV estimator."""
    if len(prices) == 0:
        raise MeasureError("empty session")
    fn = ESTIMATORS.get(estimator)
    if fn is None:
        raise MeasureError(f"unknown estimator {estimator!r}")
    y = np.asarray(prices, dtype=float)
    jumps = detect_jumps(times, y)
    if window is not None and jumps:
        sizes = window_jump_sizes(y, [j.index for j in jumps], window)
        jumps = [JumpEstimate(j.location, float(s), j.statistic, j.index) for j, s in zip(jumps, sizes) if s != 0]
    jvp = float(sum(j.size**2 for j in jumps if j.size > 0))
    jvn = float(sum(j.size**2 for j in jumps if j.size < 0))
    ystar = jump_adjust(y, jumps)
    return SessionMeasures(fn(ystar), jvp, jvn, jumps)


def build_daily_measures(panel, estimator: str = "msrv", window: int | None = None) -> DailyMeasures:
    """Daily (RV, JV+, JV-, OV) for both markets of a TickPanel."""
    n = panel.n
    if n == 0:
        raise MeasureError("empty panel")
    out = np.zeros((4, 2, n))
    floored = 0
    for l in (1, 2):
        sessions = panel.sessions[l]
        if len(sessions) != n:
            raise MeasureError(f"market {l} has {len(sessions)} sessions, expected {n}")
        lunch = panel.lunch.get(l)
        for i, sess in enumerate(sessions):
            if len(sess.prices) == 0:
                raise MeasureError(f"empty session: market {l}, day {panel.first_day + i}")
            if lunch is None:
                sm = session_measures(sess.times, sess.prices, estimator, window)
                rv, jvp, jvn = sm.rv, sm.jvp, sm.jvn
            else:
                open_t = session_bounds(panel.calendar, l, panel.first_day + i)[0]
                rv, jvp, jvn = _lunch_composite(sess, lunch, open_t, estimator, window)
            if rv < RV_FLOOR:
                floored += 1
                rv = RV_FLOOR
            out[:3, l - 1, i] = rv, jvp, jvn
            if i + 1 < n:
                nxt = sessions[i + 1].prices[0]
            else:
                nxt = panel.next_open.get(l, np.nan)
            out[3, l - 1, i] = (nxt - sess.prices[-1]) ** 2
    if floored:
        log.warning("RV floored at %g on %d market-days", RV_FLOOR, floored)
    days = np.arange(panel.first_day, panel.first_day + n)
    return DailyMeasures(days, out[0], out[1], out[2], out[3], estimator, panel.calendar, floored)


def _lunch_composite(sess, lunch, open_t, estimator, window):
    t = sess.times
    am = t <= open_t + lunch.start + 1e-12
    pm = t >= open_t + lunch.end - 1e-12
    if am.sum() == 0 or pm.sum() == 0:
        raise MeasureError("lunch-split session needs both sub-sessions")
    a = session_measures(t[am], sess.prices[am], estimator, window)
    b = session_measures(t[pm], sess.prices[pm], estimator, window)
    gap = sess.prices[pm][0] - sess.prices[am][-1]
    return a.rv + b.rv + gap**2, a.jvp + b.jvp, a.jvn + b.jvn
