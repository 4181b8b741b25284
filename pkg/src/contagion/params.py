"""Parameter types, trading-calendar geometry and the structural-to-GARCH map.

Model time is measured in days.  Market 1 opens at integer times, market 2
opens ``tau`` later; both sessions of day ``i`` lie inside ``[i - 1, i)``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterable

import numpy as np

GARCH_NAMES: tuple[str, ...] = (
    "omega_1", "gamma_1", "alpha_1", "beta_1_pos", "beta_1_neg", "kappa_1",
    "alpha_12", "beta_12_pos", "beta_12_neg",
    "omega_2", "gamma_2", "alpha_2", "beta_2_pos", "beta_2_neg", "kappa_2",
    "alpha_21", "beta_21_pos", "beta_21_neg",
)

# coordinate kinds, used to build boxes and start points
_KINDS: tuple[str, ...] = (
    "omega", "gamma", "alpha_own", "beta", "beta", "kappa", "alpha_cross", "beta", "beta",
) * 2


@dataclass(frozen=True)
class MarketCalendar:
    """Session geometry of the two markets (all values are day fractions)."""

    lambda_1: float = 0.25
    lambda_2: float = 0.25
    tau: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.lambda_1 < 1.0 and 0.0 < self.lambda_2 < 1.0):
            raise ValueError("session lengths must lie in (0, 1)")
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if self.lambda_1 > self.tau or self.tau + self.lambda_2 > 1.0:
            raise ValueError("market sessions overlap")

    def lam(self, market: int) -> float:
        return self.lambda_1 if market == 1 else self.lambda_2

    def swapped(self) -> "MarketCalendar":
        """Calendar seen with the market labels exchanged (market 2 opens first)."""
        return MarketCalendar(self.lambda_2, self.lambda_1, 1.0 - self.tau)


def session_bounds(cal: MarketCalendar, market: int, day: int) -> tuple[float, float]:
    """Open and close model times of ``market`` on ``day`` (days start at 1)."""
    if day < 1:
        raise ValueError(f"day must be >= 1, got {day}")
    if market == 1:
        start = float(day - 1)
    elif market == 2:
        start = day - 1 + cal.tau
    else:
        raise ValueError(f"market must be 1 or 2, got {market}")
    return start, start + cal.lam(market)


@dataclass(frozen=True)
class MarketParams:
    """Open-session, overnight and contagion loadings of one market."""

    omega_H: float
    gamma_H: float
    alpha_H: float
    beta_H_pos: float
    beta_H_neg: float
    nu_H: float
    omega_L: float
    gamma_L: float
    alpha_L: float
    alpha_cross: float
    beta_cross_pos: float
    beta_cross_neg: float


@dataclass(frozen=True)
class StructuralParams:
    market1: MarketParams
    market2: MarketParams
    rho: float = 0.0
    mu_1: float = 0.0
    mu_2: float = 0.0

    def __post_init__(self) -> None:
        if abs(self.rho) > 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        for mp in (self.market1, self.market2):
            vals = [getattr(mp, f.name) for f in fields(mp)]
            if not all(math.isfinite(v) for v in vals):
                raise ValueError("structural parameters must be finite")

    def market(self, l: int) -> MarketParams:
        return self.market1 if l == 1 else self.market2


@dataclass(frozen=True)
class StreamSpec:
    """One signed jump stream: Poisson intensity and squared-size law b + N(0, sd^2)."""

    intensity: float
    b: float = 0.005
    sd: float = 0.0005

    def __post_init__(self) -> None:
        if self.intensity < 0:
            raise ValueError("jump intensity must be non-negative")
        if self.b <= 0 or self.sd < 0:
            raise ValueError("squared jump size offset must be positive")


@dataclass(frozen=True)
class JumpSpec:
    pos_1: StreamSpec = field(default_factory=lambda: StreamSpec(12.0))
    neg_1: StreamSpec = field(default_factory=lambda: StreamSpec(16.0))
    pos_2: StreamSpec = field(default_factory=lambda: StreamSpec(16.0))
    neg_2: StreamSpec = field(default_factory=lambda: StreamSpec(12.0))

    def streams(self, market: int) -> tuple[StreamSpec, StreamSpec]:
        return (self.pos_1, self.neg_1) if market == 1 else (self.pos_2, self.neg_2)

    @classmethod
    def off(cls) -> "JumpSpec":
        z = StreamSpec(0.0)
        return cls(z, z, z, z)


def design_structural_params() -> StructuralParams:
    """The simulation design point used throughout the Monte Carlo study."""
    m1 = MarketParams(
        omega_H=0.001, gamma_H=0.3, alpha_H=0.7, beta_H_pos=0.25, beta_H_neg=0.3, nu_H=0.1,
        omega_L=0.0005, gamma_L=0.4, alpha_L=0.1,
        alpha_cross=0.12, beta_cross_pos=0.1, beta_cross_neg=0.12,
    )
    m2 = MarketParams(
        omega_H=0.0015, gamma_H=0.4, alpha_H=0.6, beta_H_pos=0.3, beta_H_neg=0.4, nu_H=0.1,
        omega_L=0.0005, gamma_L=0.4, alpha_L=0.1,
        alpha_cross=0.12, beta_cross_pos=0.1, beta_cross_neg=0.1,
    )
    return StructuralParams(m1, m2, rho=0.0)


# --------------------------------------------------------------------------
# GARCH parameter vector and its box


@dataclass(frozen=True)
class GarchParams:
    """The 18 GARCH coordinates, market 1 block first."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != 18:
            raise ValueError(f"expected 18 GARCH coordinates, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, name: str) -> float:
        return float(self.values[GARCH_NAMES.index(name)])

    def block(self, market: int) -> np.ndarray:
        return self.values[:9] if market == 1 else self.values[9:]

    def with_value(self, name: str, value: float) -> "GarchParams":
        v = self.values.copy()
        v[GARCH_NAMES.index(name)] = value
        return GarchParams(v)

    def swapped(self) -> "GarchParams":
        return GarchParams(np.concatenate([self.values[9:], self.values[:9]]))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(GARCH_NAMES, map(float, self.values)))

    def to_csv_row(self) -> str:
        return ",".join(repr(float(x)) for x in self.values)

    @classmethod
    def from_csv_row(cls, row: str) -> "GarchParams":
        return cls(np.array([float(x) for x in row.strip().split(",")]))


@dataclass(frozen=True)
class ParamBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("every box coordinate needs lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def bounds(self) -> list[tuple[float, float]]:
        return list(zip(self.lower.tolist(), self.upper.tolist()))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


_BOX_BY_KIND = {
    "omega": (1e-12, 1.0),
    "gamma": (1e-6, 0.999),
    "alpha_own": (1e-6, 0.999),
    "alpha_cross": (-0.999, 0.999),
    "beta": (-5.0, 5.0),
    "kappa": (-5.0, 5.0),
}


def default_box() -> ParamBox:
    lo, hi = zip(*(_BOX_BY_KIND[k] for k in _KINDS))
    return ParamBox(np.array(lo), np.array(hi))


def coordinate_kinds() -> tuple[str, ...]:
    return _KINDS


@dataclass(frozen=True)
class ValidityReport:
    inside: np.ndarray  # per-coordinate flags

    @property
    def valid(self) -> bool:
        return bool(np.all(self.inside))

    @property
    def violations(self) -> list[int]:
        """1-based indices of coordinates outside the box."""
        return [int(i) + 1 for i in np.flatnonzero(~self.inside)]


def validate_garch_params(p: GarchParams, box: ParamBox | None = None) -> ValidityReport:
    box = box or default_box()
    v = p.values
    inside = (v >= box.lower) & (v <= box.upper) & np.isfinite(v)
    return ValidityReport(inside)


# --------------------------------------------------------------------------
# structural -> GARCH map


def _exp_remainder(x: float, order: int) -> float:
    """(e^x - sum_{k<order} x^k/k!) / x^order, stable near zero."""
    if abs(x) < 1e-2:
        # series: sum_{j>=0} x^j / (order + j)!
        return sum(x**j / math.factorial(order + j) for j in range(8))
    if order == 1:
        return math.expm1(x) / x
    if order == 2:
        return (math.expm1(x) - x) / x**2
    if order == 3:
        return (math.expm1(x) - x - 0.5 * x * x) / x**3
    raise ValueError(order)


@dataclass(frozen=True)
class RhoConstants:
    r1: float  # (e^a - 1)/a
    r2: float  # (e^a - 1 - a)/a^2
    r3: float  # (e^a - 1 - a - a^2/2)/a^3
    rho: float  # (gamma_H - 1) r2 + r1

    @property
    def nu_weight(self) -> float:
        return self.r2 - 2.0 * self.r3


def rho_constants(alpha_H: float, gamma_H: float) -> RhoConstants:
    r1 = _exp_remainder(alpha_H, 1)
    r2 = _exp_remainder(alpha_H, 2)
    r3 = _exp_remainder(alpha_H, 3)
    return RhoConstants(r1, r2, r3, (gamma_H - 1.0) * r2 + r1)


def open_level(mp: MarketParams, streams: tuple[StreamSpec, StreamSpec]) -> float:
    """Intercept of h = level + rho * sigma^2_open for one market."""
    c = rho_constants(mp.alpha_H, mp.gamma_H)
    pos, neg = streams
    jump_drift = mp.beta_H_pos * pos.intensity * pos.b + mp.beta_H_neg * neg.intensity * neg.b
    return c.nu_weight * mp.nu_H + c.r2 * (jump_drift + mp.omega_H)


def map_structural_to_garch(s: StructuralParams, jumps: JumpSpec) -> GarchParams:
    out: list[float] = []
    for l in (1, 2):
        mp = s.market(l)
        if not 0.0 < mp.alpha_H < 1.0:
            raise ValueError(f"alpha_{l}H must lie in (0, 1), got {mp.alpha_H}")
        c = rho_constants(mp.alpha_H, mp.gamma_H)
        gamma = mp.gamma_L * mp.gamma_H
        level = open_level(mp, jumps.streams(l))
        omega = (1.0 - gamma) * level + c.rho * (mp.omega_L + mp.gamma_L * mp.omega_H)
        out += [
            omega,
            gamma,
            c.rho * mp.gamma_L * mp.alpha_H,
            c.rho * mp.gamma_L * mp.beta_H_pos,
            c.rho * mp.gamma_L * mp.beta_H_neg,
            c.rho * mp.alpha_L,
            c.rho * mp.alpha_cross,
            c.rho * mp.beta_cross_pos,
            c.rho * mp.beta_cross_neg,
        ]
    return GarchParams(np.array(out))


# --------------------------------------------------------------------------
# config serialization

_MARKET_KEYS = {f.name: f.name for f in fields(MarketParams)}


def structural_to_config(s: StructuralParams, section: str = "structural") -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep key case
    cp[section] = {}
    for l in (1, 2):
        mp = s.market(l)
        for f in fields(mp):
            cp[section][f"{f.name}_{l}"] = repr(getattr(mp, f.name))
    cp[section]["rho"] = repr(s.rho)
    return cp


def structural_from_mapping(values: dict[str, str], base: StructuralParams | None = None) -> StructuralParams:
    base = base or design_structural_params()
    known = {f"{name}_{l}" for name in _MARKET_KEYS for l in (1, 2)} | {"rho"}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"unknown structural key(s) {unknown}")
    markets = []
    for l in (1, 2):
        mp = base.market(l)
        upd = {}
        for name in _MARKET_KEYS:
            key = f"{name}_{l}"
            if key in values:
                upd[name] = float(values[key])
        markets.append(replace(mp, **upd))
    rho = float(values.get("rho", base.rho))
    return StructuralParams(markets[0], markets[1], rho=rho)


def as_vector(x: GarchParams | Iterable[float]) -> np.ndarray:
    if isinstance(x, GarchParams):
        return x.values
    return np.asarray(list(x), dtype=float)
