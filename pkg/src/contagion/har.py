"""HAR-type contagion model fitted by the same Gaussian quasi-likelihood."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .inference import SandwichCov, embed_blocks, sandwich_from_arrays
from .measures import DailyMeasures
from .qmle import H_FLOOR, FitError

log = logging.getLogger(__name__)

LAGS = (1, 5, 22)
HAR_NAMES = tuple(
    f"{c}_{l}"
    for l, o in ((1, 2), (2, 1))
    for c in (
        "omega", "alpha_d1", "alpha_d5", "alpha_d22", "beta_pos", "beta_neg", "kappa",
        f"alpha_{l}{o}", f"beta_{l}{o}_pos", f"beta_{l}{o}_neg",
    )
)
COND_LIMIT = 1e10
MIN_ROWS = 30


@dataclass
class HarDesign:
    X: np.ndarray  # (2, n_eff, 10)
    y: np.ndarray  # (2, n_eff), RV / lambda on the target day
    days: np.ndarray


@dataclass
class HarParams:
    values: np.ndarray

    def block(self, market: int) -> np.ndarray:
        return self.values[:10] if market == 1 else self.values[10:]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(HAR_NAMES, map(float, self.values)))


@dataclass
class HarFit:
    params: HarParams
    cov: SandwichCov
    loglik: float
    converged: bool
    H: np.ndarray
    design: HarDesign

    @property
    def theta(self) -> np.ndarray:
        return self.params.values


def har_design(d: DailyMeasures) -> HarDesign:
    """Regressors for days 23..n: own lag averages, signed jumps, overnight, and cross-market terms.

    Market 1 uses market 2's previous day; market 2 uses market 1's same day.
    """
    lmax = max(LAGS)
    n = d.n
    if n < lmax + MIN_ROWS:
        raise ValueError(f"HAR design needs at least {lmax + MIN_ROWS} days")
    lam = (d.calendar.lambda_1, d.calendar.lambda_2)
    rows = np.arange(lmax, n)  # positional index of the target day
    X = np.zeros((2, len(rows), 10))
    y = np.zeros((2, len(rows)))
    cs = np.concatenate([np.zeros((2, 1)), np.cumsum(d.rv, axis=1)], axis=1)
    for l in (0, 1):
        o = 1 - l
        shift = 0 if l == 0 else 1  # iota_l
        X[l, :, 0] = 1.0
        for c, lag in enumerate(LAGS, start=1):
            X[l, :, c] = (cs[l, rows] - cs[l, rows - lag]) / lag / lam[l]
        X[l, :, 4] = d.jvp[l, rows - 1] / lam[l]
        X[l, :, 5] = d.jvn[l, rows - 1] / lam[l]
        X[l, :, 6] = d.ov[l, rows - 1] / (1.0 - lam[l])
        X[l, :, 7] = d.rv[o, rows - 1 + shift] / lam[o]
        X[l, :, 8] = d.jvp[o, rows - 1 + shift] / lam[o]
        X[l, :, 9] = d.jvn[o, rows - 1 + shift] / lam[o]
        y[l] = d.rv[l, rows] / lam[l]
    if not np.all(np.isfinite(X)):
        raise ValueError("missing measures inside the HAR design")
    return HarDesign(X, y, d.day[rows])


def _negll(theta10: np.ndarray, X: np.ndarray, y: np.ndarray, n: int):
    H = X @ theta10
    active = H < H_FLOOR
    H = np.where(active, H_FLOOR, H)
    f = np.sum(np.log(H) + y / H) / (2 * n)
    w = (1.0 / H - y / H**2)
    w[active] = 0.0
    return f, (w @ X) / (2 * n)


def har_fit(d: DailyMeasures, maxiter: int = 1000, active: np.ndarray | None = None) -> HarFit:
    """Quasi-likelihood fit of both markets' HAR equations with sandwich covariance.

    ``active`` (20 booleans) restricts the fit: inactive coordinates are held at zero.
    """
    des = har_design(d)
    mask = np.ones(20, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    if mask.shape != (20,):
        raise ValueError("active mask must have 20 entries")
    n = des.y.shape[1]
    theta = np.zeros(20)
    ok = True
    ll = 0.0
    for l in (0, 1):
        keep = mask[10 * l : 10 * l + 10]
        X, y = des.X[l][:, keep], des.y[l]
        Xs = X / np.maximum(np.abs(X).max(axis=0), 1e-300)
        if np.linalg.cond(Xs) > COND_LIMIT:
            raise FitError(f"collinear HAR design for market {l + 1}")
        # least-squares start, nudged so that the fitted mean is positive
        b0, *_ = np.linalg.lstsq(X, y, rcond=None)
        if np.min(X @ b0) <= 0:
            b0 = np.zeros(X.shape[1])
            b0[0] = float(np.mean(y)) if keep[0] else 0.0
        res = minimize(_negll, b0, args=(X, y, n), jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": maxiter})
        if not np.all(np.isfinite(res.x)):
            raise FitError("HAR quasi-likelihood diverged")
        theta[10 * l : 10 * l + 10][keep] = res.x
        ok = ok and (res.success or np.linalg.norm(res.jac) < 1e-6)
        ll -= res.fun
    H = np.stack([np.maximum(des.X[l] @ theta[10 * l : 10 * l + 10], H_FLOOR) for l in (0, 1)])
    cov = sandwich_from_arrays(H, embed_blocks(des.X)[:, :, mask], des.y)
    return HarFit(HarParams(theta), cov, ll, bool(ok), H, des)
