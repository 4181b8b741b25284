import numpy as np
import pytest

from contagion.params import MarketParams, StructuralParams


def quiet_market(**kw) -> MarketParams:
    """Market with every loading off unless overridden."""
    base = dict(
        omega_H=0.0, gamma_H=0.0, alpha_H=0.5, beta_H_pos=0.0, beta_H_neg=0.0, nu_H=0.0,
        omega_L=0.0, gamma_L=0.0, alpha_L=0.0, alpha_cross=0.0, beta_cross_pos=0.0, beta_cross_neg=0.0,
    )
    base.update(kw)
    return MarketParams(**base)


def quiet_structural(**kw) -> StructuralParams:
    m1 = {k[:-2]: v for k, v in kw.items() if k.endswith("_1")}
    m2 = {k[:-2]: v for k, v in kw.items() if k.endswith("_2")}
    return StructuralParams(quiet_market(**m1), quiet_market(**m2))


def brownian_prices(rng: np.random.Generator, m: int, iv: float, noise_sd: float = 0.0) -> np.ndarray:
    """m + 1 log-prices of a constant-variance path with integrated variance ``iv``."""
    x = np.concatenate([[0.0], np.cumsum(np.sqrt(iv / m) * rng.standard_normal(m))])
    return x + noise_sd * rng.standard_normal(m + 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def design_panel():
    """One simulated panel at the design point, n = 500 days, m = 2160 intervals."""
    from contagion.params import JumpSpec, MarketCalendar, design_structural_params
    from contagion.simulate import NoiseSpec, SimConfig, simulate_panel

    return simulate_panel(
        design_structural_params(), JumpSpec(), NoiseSpec(), MarketCalendar(), SimConfig(n=500, m=2160, seed=777)
    )


@pytest.fixture(scope="session")
def design_measures(design_panel):
    from contagion.measures import build_daily_measures

    return build_daily_measures(design_panel)


@pytest.fixture(scope="session")
def design_fit(design_measures):
    from contagion.qmle import fit

    return fit(design_measures)


# one PASS/FAIL line per acceptance criterion, printed after the run
_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        num = int(report.nodeid.split("test_criterion_")[1].split("_")[0])
        detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
        if report.failed and not detail:
            detail = str(report.longrepr).strip().splitlines()[-1][:200]
        _CRITERIA[num] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, detail = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:>2}: {status}  {detail}")
