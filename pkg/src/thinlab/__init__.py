"""Diameter-class stand simulation, quality thinning and return-on-capital optimization."""

__version__ = "1.0.0"

from .economics import EconomicTrace, bare_land_sensitivity, build_trace, expected_return_rate
from .errors import ConfigError, EconomicsError, MissingRunError, ScheduleError, ThinlabError
from .kernel import GrowthKernel, default_kernel, load_kernel
from .optimizer import OptimResult, SearchConfig, compare_regimes, exhaustive, optimize
from .quality import evolve_quality, quality_correction, survival_after_strip_roads
from .stand import DiameterClassGrid, Stand, grow_step, read_stand, write_stand
from .thinning import ManagementSchedule, Regime, ThinningRule, apply_thinning, load_schedule
from .valuation import MarketModel, default_market, load_market

__all__ = [
    "ConfigError", "DiameterClassGrid", "EconomicTrace", "EconomicsError", "GrowthKernel", "ManagementSchedule",
    "MarketModel", "MissingRunError", "OptimResult", "Regime", "ScheduleError", "SearchConfig", "Stand",
    "ThinlabError", "ThinningRule", "apply_thinning", "bare_land_sensitivity", "build_trace", "compare_regimes",
    "default_kernel", "default_market", "evolve_quality", "exhaustive", "expected_return_rate", "grow_step",
    "load_kernel", "load_market", "load_schedule", "optimize", "quality_correction", "read_stand",
    "survival_after_strip_roads", "write_stand",
]
