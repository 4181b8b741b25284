"""Realized GARCH filter, Gaussian quasi-likelihood, analytic gradient and box-constrained fit."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .measures import DailyMeasures
from .params import GARCH_NAMES, GarchParams, ParamBox, default_box

log = logging.getLogger(__name__)

H_FLOOR = 1e-12
NPAR = 9  # coordinates per market


class FitError(RuntimeError):
    pass


@dataclass
class FilterOutput:
    h: np.ndarray  # (2, n)
    dh: np.ndarray | None  # (2, n, 9), derivative w.r.t. the market's own block
    h_init: np.ndarray
    floored: int = 0


def market_regressors(rv, jvp, jvn, ov, lam1: float, lam2: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-market (n - 1, 9) innovation matrices for days 2..n.

    Column 1 (the gamma slot) is left at zero; the lagged h enters separately.
    """
    lam = (lam1, lam2)
    out = []
    for l in (0, 1):
        o = 1 - l
        # market 1 sees market 2 lagged; market 2 sees market 1 on the same day
        sl_other = slice(0, -1) if l == 0 else slice(1, None)
        z = np.zeros((rv.shape[1] - 1, NPAR))
        z[:, 0] = 1.0
        z[:, 2] = rv[l, :-1] / lam[l]
        z[:, 3] = jvp[l, :-1] / lam[l]
        z[:, 4] = jvn[l, :-1] / lam[l]
        z[:, 5] = ov[l, :-1] / (1.0 - lam[l])
        z[:, 6] = rv[o, sl_other] / lam[o]
        z[:, 7] = jvp[o, sl_other] / lam[o]
        z[:, 8] = jvn[o, sl_other] / lam[o]
        out.append(z)
    return out[0], out[1]


def _filter_block(theta9: np.ndarray, z: np.ndarray, h0: float, floor: float | None, grad: bool):
    """h_i = gamma h_{i-1} + z_{i-1} . theta (gamma slot excluded), h_1 = h0."""
    n = len(z) + 1
    gamma = theta9[1]
    coef = theta9.copy()
    coef[1] = 0.0
    u = z @ coef
    h = np.empty(n)
    h[0] = h0
    h[1:] = lfilter([1.0], [1.0, -gamma], u, zi=[gamma * h0])[0]
    floored = 0
    active = None
    if floor is not None and h.min() < floor:
        h[0] = h0
        active = np.zeros(n, dtype=bool)
        for i in range(1, n):
            v = gamma * h[i - 1] + u[i - 1]
            if v < floor:
                v = floor
                active[i] = True
                floored += 1
            h[i] = v
    dh = None
    if grad:
        x = z.copy()
        x[:, 1] = h[:-1]
        dh = np.zeros((n, NPAR))
        if active is None:
            dh[1:] = lfilter([1.0], [1.0, -gamma], x, axis=0)
        else:
            for i in range(1, n):
                dh[i] = 0.0 if active[i] else x[i - 1] + gamma * dh[i - 1]
    return h, dh, floored


def default_h_init(d: DailyMeasures) -> np.ndarray:
    lam = np.array([d.calendar.lambda_1, d.calendar.lambda_2])
    return np.mean(d.rv, axis=1) / lam


def _as_vector(p) -> np.ndarray:
    if isinstance(p, GarchParams):
        return np.asarray(p.values, dtype=float)
    v = np.asarray(p, dtype=float)
    if v.shape != (18,):
        raise ValueError("GARCH parameter vector must have 18 entries")
    return v


def filter_recursion(theta, rv, jvp, jvn, ov, lam1, lam2, h_init, floor: float | None = H_FLOOR, grad: bool = False):
    """Both markets' filters on raw arrays; returns (h, dh) with dh of shape (2, n, 9) or None."""
    theta = _as_vector(theta)
    z1, z2 = market_regressors(np.asarray(rv), np.asarray(jvp), np.asarray(jvn), np.asarray(ov), lam1, lam2)
    h = np.empty((2, z1.shape[0] + 1))
    dh = np.empty((2, h.shape[1], NPAR)) if grad else None
    floored = 0
    for l, z in enumerate((z1, z2)):
        hl, dhl, f = _filter_block(theta[9 * l : 9 * l + 9], z, float(h_init[l]), floor, grad)
        h[l] = hl
        floored += f
        if grad:
            dh[l] = dhl
    if not grad:
        return h, floored
    return h, dh, floored


def _check(d: DailyMeasures, h_init) -> np.ndarray:
    if d.n < 2:
        raise ValueError("need at least two days of measures")
    hi = default_h_init(d) if h_init is None else np.asarray(h_init, dtype=float)
    if hi.shape != (2,) or np.any(~np.isfinite(hi)) or np.any(hi <= 0):
        raise ValueError("h_init must be two positive values")
    for name in ("rv", "jvp", "jvn"):
        if not np.all(np.isfinite(getattr(d, name))):
            raise ValueError(f"missing {name} measures")
    if not np.all(np.isfinite(d.ov[:, :-1])):
        raise ValueError("missing ov measures")
    return hi


def garch_filter(p, d: DailyMeasures, h_init=None, grad: bool = False) -> FilterOutput:
    hi = _check(d, h_init)
    res = filter_recursion(p, d.rv, d.jvp, d.jvn, d.ov, d.calendar.lambda_1, d.calendar.lambda_2, hi, grad=grad)
    if grad:
        h, dh, f = res
    else:
        (h, f), dh = res, None
    return FilterOutput(h, dh, hi, f)


def _targets(d: DailyMeasures) -> np.ndarray:
    lam = np.array([[d.calendar.lambda_1], [d.calendar.lambda_2]])
    return d.rv / lam


def quasi_loglik(p, d: DailyMeasures, h_init=None) -> float:
    f = garch_filter(p, d, h_init)
    y = _targets(d)
    return float(-np.sum(np.log(f.h) + y / f.h) / (2 * d.n))


def _loglik_and_grad(theta: np.ndarray, d: DailyMeasures, hi: np.ndarray):
    h, dh, _ = filter_recursion(theta, d.rv, d.jvp, d.jvn, d.ov, d.calendar.lambda_1, d.calendar.lambda_2, hi, grad=True)
    y = _targets(d)
    n = d.n
    ll = -np.sum(np.log(h) + y / h) / (2 * n)
    w = (1.0 / h - y / h**2)  # d/dh of log h + y/h
    g = np.concatenate([-(w[l] @ dh[l]) / (2 * n) for l in (0, 1)])
    return float(ll), g


def loglik_gradient(p, d: DailyMeasures, h_init=None) -> np.ndarray:
    hi = _check(d, h_init)
    return _loglik_and_grad(_as_vector(p), d, hi)[1]


# --------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    theta: GarchParams
    loglik: float
    grad_norm: float
    iterations: int
    converged: bool
    at_bound: np.ndarray
    filter: FilterOutput
    n: int
    starts_tried: int = 0
    messages: list[str] = field(default_factory=list)

    def to_csv(self, path, header: str = "") -> None:
        with open(path, "w") as fh:
            fh.write(header)
            fh.write("coordinate,estimate\n")
            for name, v in zip(GARCH_NAMES, self.theta.values):
                fh.write(f"{name},{v!r}\n")

    def diagnostics(self) -> str:
        flags = [GARCH_NAMES[j] for j in np.flatnonzero(self.at_bound)]
        return "\n".join(
            [
                f"n = {self.n}",
                f"quasi log-likelihood = {self.loglik!r}",
                f"projected gradient norm = {self.grad_norm:.3e}",
                f"iterations = {self.iterations}",
                f"converged = {self.converged}",
                f"at bound = {', '.join(flags) if flags else 'none'}",
            ]
        )


@dataclass(frozen=True)
class FitOptions:
    box: ParamBox | None = None
    pgtol: float = 1e-8
    maxiter: int = 500
    seeds: tuple[int, ...] = (11, 23)
    h_init: tuple[float, float] | None = None


def _projected_grad(x: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Gradient of the minimization objective with outward components at active bounds removed."""
    pg = g.copy()
    tol = 1e-10 * np.maximum(1.0, np.abs(x))
    pg[(x <= lo + tol) & (g > 0)] = 0.0
    pg[(x >= hi - tol) & (g < 0)] = 0.0
    return pg


def start_points(d: DailyMeasures, box: ParamBox, seeds: tuple[int, ...]) -> list[np.ndarray]:
    """Moment-based starts at gamma in {0.1, 0.5, 0.9} plus random draws from a central sub-box."""
    ybar = np.mean(_targets(d), axis=1)
    pts = []
    for gamma in (0.1, 0.5, 0.9):
        x = np.zeros(18)
        for l in (0, 1):
            a = 0.05
            x[9 * l] = ybar[l] * max(1 - gamma - a, 0.02)
            x[9 * l + 1] = gamma
            x[9 * l + 2] = a
        pts.append(box.clip(x))
    for s in seeds:
        rng = np.random.default_rng(s)
        x = np.zeros(18)
        for l in (0, 1):
            gamma = rng.uniform(0.1, 0.7)
            a = rng.uniform(0.02, 0.3)
            b = 9 * l
            x[b + 1] = gamma
            x[b + 2] = a
            x[b + 3 : b + 5] = rng.uniform(0.0, 0.5, 2)
            x[b + 5] = rng.uniform(0.0, 0.2)
            x[b + 6] = rng.uniform(0.0, 0.2)
            x[b + 7 : b + 9] = rng.uniform(0.0, 0.5, 2)
            x[b] = ybar[l] * max(1 - gamma - a - x[b + 6], 0.05)
        pts.append(box.clip(x))
    return pts


def _fit_block(l: int, d: DailyMeasures, hi: np.ndarray, starts, lo, up, opts: FitOptions):
    """Maximize one market's share of the likelihood; the two blocks separate exactly."""
    sl = slice(9 * l, 9 * l + 9)
    base = starts[0].copy()

    def obj(x9):
        full = base.copy()
        full[sl] = x9
        ll, g = _loglik_and_grad(full, d, hi)
        # only market l's block of the likelihood depends on x9; the other block is constant
        return -ll, -g[sl]

    best = None
    for x0 in starts:
        try:
            res = minimize(
                obj, x0[sl], jac=True, method="L-BFGS-B", bounds=list(zip(lo[sl], up[sl])),
                options={"maxiter": opts.maxiter, "gtol": opts.pgtol, "ftol": 1e-15, "maxcor": 20},
            )
        except (FloatingPointError, ValueError) as exc:
            log.debug("start failed: %s", exc)
            continue
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    return best


def fit(d: DailyMeasures, opts: FitOptions | None = None) -> FitResult:
    """Maximize the quasi-likelihood over the parameter box from several starts."""
    opts = opts or FitOptions()
    if d.n < 30:
        raise FitError("panel too short to fit (need n >= 30)")
    box = opts.box or default_box()
    hi = _check(d, opts.h_init)
    lo, up = box.lower, box.upper
    starts = start_points(d, box, opts.seeds)
    theta = np.empty(18)
    iters = 0
    msgs = []
    ok = True
    with np.errstate(all="ignore"):
        for l in (0, 1):
            res = _fit_block(l, d, hi, starts, lo, up, opts)
            if res is None:
                raise FitError("all starting points failed")
            theta[9 * l : 9 * l + 9] = res.x
            iters += int(res.nit)
            msgs.append(str(res.message))
            ok = ok and bool(res.success)
    ll, g = _loglik_and_grad(theta, d, hi)
    pg = _projected_grad(theta, -g, lo, up)
    gn = float(np.linalg.norm(pg))
    tol = 1e-9 * np.maximum(1.0, np.abs(theta))
    at_bound = (theta <= lo + tol) | (theta >= up - tol)
    converged = ok or gn <= max(opts.pgtol, 1e-6)
    f = garch_filter(theta, d, hi, grad=True)
    return FitResult(
        GarchParams(theta), ll, gn, iters, bool(converged), at_bound, f, d.n, len(starts), msgs
    )

