"""Two-market volatility contagion: simulation, realized measures, QMLE and break tests."""

from .params import (
    GARCH_NAMES,
    GarchParams,
    JumpSpec,
    MarketCalendar,
    MarketParams,
    ParamBox,
    StreamSpec,
    StructuralParams,
    default_box,
    map_structural_to_garch,
    design_structural_params,
    session_bounds,
    validate_garch_params,
)

__all__ = [
    "GARCH_NAMES",
    "GarchParams",
    "JumpSpec",
    "MarketCalendar",
    "MarketParams",
    "ParamBox",
    "StreamSpec",
    "StructuralParams",
    "default_box",
    "map_structural_to_garch",
    "design_structural_params",
    "session_bounds",
    "validate_garch_params",
]
