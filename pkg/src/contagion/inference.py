"""Sandwich covariance, two-window Wald and per-coordinate Z break tests."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, special

from .params import GARCH_NAMES

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


class InferenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# distribution tails


def chi2_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution."""
    if x <= 0:
        return 1.0
    return float(special.chdtrc(df, x))


def chi2_ppf(q: float, df: int) -> float:
    return float(special.chdtri(df, 1.0 - q))


def normal_two_sided(z: float | np.ndarray) -> np.ndarray | float:
    """P(|N(0,1)| >= |z|)."""
    return special.erfc(np.abs(z) / math.sqrt(2.0))


def normal_ppf(q: float) -> float:
    return float(special.ndtri(q))


# --------------------------------------------------------------------------
# sandwich


@dataclass
class SandwichCov:
    A: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray
    n: int
    condition: float
    pinv_used: bool = False

    @property
    def se(self) -> np.ndarray:
        """Standard errors of the estimates: sqrt(Sigma_jj / n)."""
        return np.sqrt(np.maximum(np.diag(self.Sigma), 0.0) / self.n)


def sandwich_from_arrays(h: np.ndarray, dh: np.ndarray, y: np.ndarray) -> SandwichCov:
    """A, B and B^-1 A B^-1 from per-market volatilities, derivatives and targets.

    ``h`` and ``y`` have shape (2, n); ``dh`` has shape (2, n, p) with full-length
    derivative vectors.
    """
    n = h.shape[1]
    p = dh.shape[2]
    A = np.zeros((p, p))
    B = np.zeros((p, p))
    for l in range(h.shape[0]):
        D = dh[l]
        wa = (y[l] - h[l]) ** 2 / h[l] ** 4
        wb = 1.0 / h[l] ** 2
        A += (D * wa[:, None]).T @ D
        B += (D * wb[:, None]).T @ D
    A /= 4 * n
    B /= 2 * n
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    cond = float(np.linalg.cond(B))
    pinv = False
    if not np.isfinite(cond) or cond > COND_LIMIT:
        log.warning("B is numerically singular (condition %.3g); using a pseudo-inverse", cond)
        Binv = np.linalg.pinv(B, hermitian=True)
        Sigma = Binv @ A @ Binv
        pinv = True
    else:
        cf = linalg.cho_factor(B)
        Sigma = linalg.cho_solve(cf, linalg.cho_solve(cf, A).T)
    Sigma = 0.5 * (Sigma + Sigma.T)
    return SandwichCov(A, B, Sigma, n, cond, pinv)


def embed_blocks(dh_block: np.ndarray) -> np.ndarray:
    """(2, n, k) own-block derivatives to (2, n, 2k) full derivatives."""
    _, n, k = dh_block.shape
    out = np.zeros((2, n, 2 * k))
    out[0, :, :k] = dh_block[0]
    out[1, :, k:] = dh_block[1]
    return out


def sandwich_covariance(fit, d) -> SandwichCov:
    """Sandwich covariance of a GARCH fit on the measures it was fitted to."""
    if d.n <= 18:
        raise InferenceError("sandwich covariance needs more than 18 days")
    if not fit.converged:
        log.warning("sandwich covariance computed at a fit that did not converge")
    f = fit.filter
    if f.dh is None:
        raise InferenceError("fit carries no filter derivatives")
    lam = np.array([[d.calendar.lambda_1], [d.calendar.lambda_2]])
    return sandwich_from_arrays(f.h, embed_blocks(f.dh), d.rv / lam)


# --------------------------------------------------------------------------
# break tests


def _theta(x) -> np.ndarray:
    v = getattr(x, "theta", x)
    v = getattr(v, "values", v)
    return np.asarray(v, dtype=float)


def scope_indices(scope: str, p: int) -> np.ndarray:
    half = p // 2
    if scope == "joint":
        return np.arange(p)
    if scope == "country1":
        return np.arange(half)
    if scope == "country2":
        return np.arange(half, p)
    raise ValueError(f"unknown scope {scope!r}")


def combined_cov(cov1: SandwichCov, cov2: SandwichCov) -> tuple[np.ndarray, float]:
    r = cov1.n / cov2.n
    S = cov1.Sigma + r * cov2.Sigma
    return 0.5 * (S + S.T), r


def wald_test(
    fit1, cov1: SandwichCov, fit2, cov2: SandwichCov, delta0: Sequence[float] | None = None, scope: str = "joint"
) -> tuple[float, int, float]:
    """Two-window Wald statistic n1 d' (S1 + r S2)^-1 d on the selected block."""
    t1, t2 = _theta(fit1), _theta(fit2)
    p = len(t1)
    delta = np.zeros(p) if delta0 is None else np.asarray(delta0, dtype=float)
    idx = scope_indices(scope, p)
    d = (t1 - t2 - delta)[idx]
    S, _ = combined_cov(cov1, cov2)
    S = S[np.ix_(idx, idx)]
    df = len(idx)
    if not np.any(d):
        return 0.0, df, 1.0
    try:
        cf = linalg.cho_factor(S)
    except linalg.LinAlgError as exc:
        raise InferenceError("combined covariance is singular on the tested block") from exc
    if np.linalg.cond(S) > COND_LIMIT:
        raise InferenceError("combined covariance is singular on the tested block")
    W = float(cov1.n * d @ linalg.cho_solve(cf, d))
    W = max(W, 0.0)
    return W, df, chi2_sf(W, df)


def z_tests(fit1, cov1: SandwichCov, fit2, cov2: SandwichCov, delta0=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate Z = sqrt(n1) (theta1 - theta2 - delta) / sqrt(Sigma_ii) and two-sided p-values."""
    t1, t2 = _theta(fit1), _theta(fit2)
    delta = np.zeros(len(t1)) if delta0 is None else np.asarray(delta0, dtype=float)
    S, _ = combined_cov(cov1, cov2)
    diag = np.diag(S)
    if np.any(diag <= 0):
        raise InferenceError("non-positive variance on the combined covariance diagonal")
    z = math.sqrt(cov1.n) * (t1 - t2 - delta) / np.sqrt(diag)
    return z, np.asarray(normal_two_sided(z), dtype=float)


@dataclass
class BreakTestReport:
    names: list[str]
    theta1: np.ndarray
    theta2: np.ndarray
    se1: np.ndarray
    se2: np.ndarray
    joint: tuple[float, int, float]
    country1: tuple[float, int, float]
    country2: tuple[float, int, float]
    z: np.ndarray
    pz: np.ndarray
    r: float
    n1: int
    n2: int
    fit1: object = None
    fit2: object = None

    def rows(self) -> list[tuple]:
        p1 = normal_two_sided(self.theta1 / np.where(self.se1 > 0, self.se1, np.nan))
        p2 = normal_two_sided(self.theta2 / np.where(self.se2 > 0, self.se2, np.nan))
        return [
            (nm, self.theta1[j], self.se1[j], p1[j], self.theta2[j], self.se2[j], p2[j], self.z[j], self.pz[j])
            for j, nm in enumerate(self.names)
        ]

    def to_csv(self, path, header: str = "") -> None:
        with open(path, "w") as fh:
            if header:
                fh.write(header)
            fh.write("row,est_1,se_1,p_1,est_2,se_2,p_2,z,p_break\n")
            for row in self.rows():
                fh.write(row[0] + "," + ",".join(f"{v:.17g}" for v in row[1:]) + "\n")
            fh.write("statistic,value,df,p\n")
            for label, (w, df, p) in (("wald_joint", self.joint), ("wald_country1", self.country1), ("wald_country2", self.country2)):
                fh.write(f"{label},{w:.17g},{df},{p:.17g}\n")

    def to_text(self, header: str = "") -> str:
        lines = [header.rstrip("\n")] if header else []
        lines.append(f"windows: n1 = {self.n1}, n2 = {self.n2}, r = {self.r:.6g}")
        lines.append(f"{'coef':<14}{'est1':>12}{'se1':>11}{'p1':>8}{'est2':>12}{'se2':>11}{'p2':>8}{'Z':>9}{'p':>8}")
        for nm, e1, s1, q1, e2, s2, q2, z, pz in self.rows():
            lines.append(f"{nm:<14}{e1:>12.5g}{s1:>11.4g}{q1:>8.3f}{e2:>12.5g}{s2:>11.4g}{q2:>8.3f}{z:>9.3f}{pz:>8.3f}")
        for label, (w, df, p) in (("joint", self.joint), ("country 1", self.country1), ("country 2", self.country2)):
            lines.append(f"Wald {label}: W = {w:.4f}, df = {df}, p = {p:.4f}")
        return "\n".join(lines) + "\n"


def break_report(fit1, cov1: SandwichCov, fit2, cov2: SandwichCov, names: Sequence[str] = GARCH_NAMES, delta0=None) -> BreakTestReport:
    t1, t2 = _theta(fit1), _theta(fit2)
    z, pz = z_tests(fit1, cov1, fit2, cov2, delta0)
    return BreakTestReport(
        names=list(names),
        theta1=t1,
        theta2=t2,
        se1=cov1.se,
        se2=cov2.se,
        joint=wald_test(fit1, cov1, fit2, cov2, delta0, "joint"),
        country1=wald_test(fit1, cov1, fit2, cov2, delta0, "country1"),
        country2=wald_test(fit1, cov1, fit2, cov2, delta0, "country2"),
        z=z,
        pz=pz,
        r=cov1.n / cov2.n,
        n1=cov1.n,
        n2=cov2.n,
        fit1=fit1,
        fit2=fit2,
    )
