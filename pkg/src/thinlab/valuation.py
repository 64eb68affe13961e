"""Tree and stand valuation.

A trunk of diameter ``d`` yields commercial volume ``a * d_cm**b`` above
the pulpwood minimum diameter.  A per-species sawlog share ramps linearly
across the pulpwood-sawlog transition.  Quality only enters through the
sawlog unit price, so a pure pulpwood trunk is worth the same whatever its
quality.

Harvesting time per cubic metre follows ``t = c * v**(-2/3)`` with separate
constants for thinning and clearcut, and costs ``machine_rate`` euro per
minute.  Stumpage (roadside value minus harvesting cost) is what the stand
is worth on the balance sheet.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .kernel import GrowthKernel
from .stand import STEP_YEARS, DiameterClassGrid, GrowthModel, Stand

POWER_LAW_EXPONENT = -2.0 / 3.0


@dataclass(frozen=True)
class SpeciesMarket:
    volume_a: float
    volume_b: float
    pulp_min_mm: float
    sawlog_threshold_mm: float
    sawlog_ramp_mm: float
    sawlog_share_max: float
    price_pulp: float
    price_saw: float

    def validate(self, name: str) -> None:
        if self.volume_a <= 0 or self.volume_b <= 0:
            raise ConfigError(f"species.{name}: volume coefficients must be positive")
        if self.pulp_min_mm >= self.sawlog_threshold_mm:
            raise ConfigError(f"species.{name}: pulp_min_mm must be below sawlog_threshold_mm")
        if self.sawlog_ramp_mm <= 0:
            raise ConfigError(f"species.{name}: sawlog_ramp_mm must be positive")
        if not 0 < self.sawlog_share_max <= 1:
            raise ConfigError(f"species.{name}: sawlog_share_max must lie in (0, 1]")
        if self.price_pulp < 0 or self.price_saw < 0:
            raise ConfigError(f"species.{name}: prices must be non-negative")


@dataclass(frozen=True)
class MarketModel:
    species: Mapping[str, SpeciesMarket]
    clearcut_premium: float = 0.0
    harvest_time_thinning: float = 1.0
    harvest_time_clearcut: float = 1.0
    machine_rate: float = 1.0
    regeneration_expense: float = 0.0
    bare_land_value: float = 0.0
    _tables: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for name, sp in self.species.items():
            sp.validate(name)
        for key in ("clearcut_premium", "harvest_time_thinning", "harvest_time_clearcut", "machine_rate",
                    "regeneration_expense", "bare_land_value"):
            v = getattr(self, key)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{key}: must be a finite non-negative number")

    def get(self, species: str) -> SpeciesMarket:
        try:
            return self.species[species]
        except KeyError:
            raise ConfigError(f"market model has no entry for species '{species}'") from None

    def with_changes(self, **changes) -> "MarketModel":
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "_tables"}
        data.update(changes)
        return MarketModel(**data)

    def scaled(self, factor: float) -> "MarketModel":
        """All prices, premiums and expenses multiplied by ``factor``."""
        species = {
            k: SpeciesMarket(**{**v.__dict__, "price_pulp": v.price_pulp * factor, "price_saw": v.price_saw * factor})
            for k, v in self.species.items()
        }
        return self.with_changes(
            species=species,
            clearcut_premium=self.clearcut_premium * factor,
            machine_rate=self.machine_rate * factor,
            regeneration_expense=self.regeneration_expense * factor,
            bare_land_value=self.bare_land_value * factor,
        )

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("_tables", "species")}
        out["species"] = {k: dict(v.__dict__) for k, v in self.species.items()}
        return out

    def value_table(self, order: tuple[str, ...], grid: DiameterClassGrid, clearcut: bool) -> "ValueTable":
        key = (order, grid, clearcut)
        if key not in self._tables:
            self._tables[key] = ValueTable.build(self, order, grid, clearcut)
        return self._tables[key]


@dataclass(frozen=True)
class ValueTable:
    """Per-tree stumpage ``base + j * saw`` for every (species, class) midpoint."""

    base: np.ndarray
    saw: np.ndarray
    volume: np.ndarray
    roadside_base: np.ndarray

    @classmethod
    def build(cls, market: MarketModel, order, grid: DiameterClassGrid, clearcut: bool) -> "ValueTable":
        shape = (len(order), grid.class_count)
        base, saw, vol, road = (np.zeros(shape) for _ in range(4))
        for k, sp in enumerate(order):
            m = market.get(sp)
            for i, d in enumerate(grid.midpoints):
                v_pulp, v_saw = assortment_volumes(market, sp, float(d))
                v = v_pulp + v_saw
                if v <= 0:
                    continue
                cost = v * harvest_cost_per_m3(market, v, clearcut)
                road[k, i] = v_pulp * m.price_pulp
                saw[k, i] = v_saw * (m.price_saw + (market.clearcut_premium if clearcut else 0.0))
                base[k, i] = road[k, i] - cost
                vol[k, i] = v
        return cls(base=base, saw=saw, volume=vol, roadside_base=road)

    def per_tree(self, j: np.ndarray) -> np.ndarray:
        return self.base + j * self.saw

    def capitalization(self, n: np.ndarray, j: np.ndarray) -> float:
        """Floored stumpage of all cohorts, without bare land."""
        return float(np.sum(n * np.maximum(self.base + j * self.saw, 0.0)))


def sawlog_share(market: MarketModel, species: str, diameter: float) -> float:
    m = market.get(species)
    lo = m.sawlog_threshold_mm - m.sawlog_ramp_mm / 2.0
    x = (diameter - lo) / m.sawlog_ramp_mm
    return m.sawlog_share_max * min(1.0, max(0.0, x))


def assortment_volumes(market: MarketModel, species: str, diameter: float) -> tuple[float, float]:
    """Expected (pulpwood, sawlog) volume of one trunk, m^3."""
    m = market.get(species)
    if diameter < m.pulp_min_mm:
        return 0.0, 0.0
    v = m.volume_a * (diameter / 10.0) ** m.volume_b
    sigma = sawlog_share(market, species, diameter)
    return (1.0 - sigma) * v, sigma * v


def harvest_time_per_m3(market: MarketModel, trunk_volume: float, clearcut: bool = False) -> float:
    """Harvester minutes per m^3 for trunks of the given volume."""
    if trunk_volume <= 0:
        raise ValueError("non-commercial trunk")
    c = market.harvest_time_clearcut if clearcut else market.harvest_time_thinning
    return c * trunk_volume**POWER_LAW_EXPONENT


def harvest_cost_per_m3(market: MarketModel, trunk_volume: float, clearcut: bool = False) -> float:
    return market.machine_rate * harvest_time_per_m3(market, trunk_volume, clearcut)


def tree_roadside_value(market: MarketModel, species: str, diameter: float, quality_j: float = 1.0,
                        clearcut: bool = False) -> float:
    m = market.get(species)
    v_pulp, v_saw = assortment_volumes(market, species, diameter)
    premium = market.clearcut_premium if clearcut else 0.0
    return v_pulp * m.price_pulp + v_saw * quality_j * (m.price_saw + premium)


def tree_stumpage_value(market: MarketModel, species: str, diameter: float, quality_j: float = 1.0,
                        clearcut: bool = False) -> float:
    """Roadside value less harvesting cost; 0 for sub-commercial trees, may be negative otherwise."""
    v_pulp, v_saw = assortment_volumes(market, species, diameter)
    v = v_pulp + v_saw
    if v <= 0:
        return 0.0
    return tree_roadside_value(market, species, diameter, quality_j, clearcut) - v * harvest_cost_per_m3(
        market, v, clearcut
    )


def stand_capitalization(market: MarketModel, stand: Stand, clearcut: bool = False) -> float:
    """Balance-sheet value K: floored stumpage of every cohort plus bare land value."""
    order = stand.species
    n, j = stand.as_arrays(order)
    return market.value_table(order, stand.grid, clearcut).capitalization(n, j) + market.bare_land_value


def stand_volume(market: MarketModel, stand: Stand) -> float:
    """Commercial volume, m^3/ha."""
    order = stand.species
    n, _ = stand.as_arrays(order)
    return float(np.sum(n * market.value_table(order, stand.grid, False).volume))


def relative_value_increment_profile(
    market: MarketModel,
    stand: Stand,
    kernel: GrowthKernel,
    coupling_on: bool = False,
    coupling_strength: float = 1.0,
    clearcut: bool = False,
    dt: float = STEP_YEARS,
) -> dict[str, list[tuple[float, float]]]:
    """Relative value increment rate (1/yr) of the trees now in each class.

    A cohort is followed through one growth step: the fraction that stays,
    the fraction that moves up a class, and their survival.  With
    ``clearcut`` the end-of-step values use clearcut pricing, as in the last
    step of a rotation.  Every class with positive current value is
    reported, occupied or not: the rate depends on the stand only through
    its basal area.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    order = stand.species
    n, j = stand.as_arrays(order)
    model = GrowthModel(kernel, order, stand.grid, stand.site_index, coupling_strength if coupling_on else 0.0)
    frac, surv, _ = model.rates(n, j)
    before_tab = market.value_table(order, stand.grid, False)
    after_tab = market.value_table(order, stand.grid, clearcut)
    before = before_tab.per_tree(j)
    mids = stand.grid.midpoints
    out: dict[str, list[tuple[float, float]]] = {}
    for k, sp in enumerate(order):
        rows = []
        for i in range(stand.grid.class_count):
            if before[k, i] <= 0:
                continue
            stay = (1.0 - frac[k, i]) * surv[k, i] * (after_tab.base[k, i] + j[k, i] * after_tab.saw[k, i])
            up = 0.0
            if frac[k, i] > 0:
                up = frac[k, i] * surv[k, i + 1] * (after_tab.base[k, i + 1] + j[k, i] * after_tab.saw[k, i + 1])
            rows.append((float(mids[i]), (stay + up - before[k, i]) / (before[k, i] * dt)))
        out[sp] = rows
    return out


def local_maxima(rows: list[tuple[float, float]]) -> list[float]:
    """Midpoints where the rate strictly exceeds both neighbours (ends compare one side)."""
    x = [r for _, r in rows]
    out = []
    for i, (mid, r) in enumerate(rows):
        if (i == 0 or r > x[i - 1]) and (i == len(x) - 1 or r > x[i + 1]):
            out.append(mid)
    return out


def pulp_only(market: MarketModel) -> MarketModel:
    """Counterfactual market in which sawlogs fetch the pulpwood price."""
    species = {k: SpeciesMarket(**{**v.__dict__, "price_saw": v.price_pulp}) for k, v in market.species.items()}
    return market.with_changes(species=species, clearcut_premium=0.0)


def half_max_width(x: np.ndarray, top: int) -> float:
    """Full width at half maximum around ``x[top]``, in index units.

    The half level is measured from zero, not from the surrounding minima.
    Crossings are linearly interpolated; a side that never drops below the
    half level stops at the end of the array, so the width is then a lower
    bound.
    """
    half = x[top] / 2.0
    left = 0.0
    for i in range(top, 0, -1):
        if x[i - 1] < half:
            left = i - (x[i] - half) / (x[i] - x[i - 1])
            break
    right = float(len(x) - 1)
    for i in range(top, len(x) - 1):
        if x[i + 1] < half:
            right = i + (x[i] - half) / (x[i] - x[i + 1])
            break
    return right - left


def transition_peak(market: MarketModel, stand: Stand, kernel: GrowthKernel, species: str) -> tuple[float, float]:
    """Location and full width at half maximum (mm) of the sawlog transition peak.

    The transition peak is the excess of the profile over its pulp-only
    counterfactual, which isolates the part of the value increment that comes
    from trees growing into sawlog dimensions.
    """
    real = dict(relative_value_increment_profile(market, stand, kernel)[species])
    base = dict(relative_value_increment_profile(pulp_only(market), stand, kernel)[species])
    mids = [m for m in stand.grid.midpoints if m in real and m in base]
    if len(mids) < 2:
        raise ValueError(f"{species}: too few commercial classes for a transition peak")
    excess = np.array([real[m] - base[m] for m in mids])
    top = int(np.argmax(excess))
    if excess[top] <= 0:
        raise ValueError(f"{species}: no sawlog transition in the profile")
    return float(mids[top]), float(half_max_width(excess, top) * stand.grid.class_width)

# ---------------------------------------------------------------------------
# config IO

_SPECIES_KEYS = tuple(f.name for f in fields(SpeciesMarket))
_GLOBAL_KEYS = ("clearcut_premium", "harvest_time_thinning", "harvest_time_clearcut", "machine_rate",
                "regeneration_expense", "bare_land_value")


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def market_from_dict(data: dict) -> MarketModel:
    if not isinstance(data, dict) or not isinstance(data.get("species"), dict) or not data["species"]:
        raise ConfigError("market config: 'species' must be a non-empty object")
    species = {}
    for name, entry in data["species"].items():
        if not isinstance(entry, dict):
            raise ConfigError(f"species.{name}: expected an object")
        values = {}
        for key in _SPECIES_KEYS:
            if key not in entry:
                raise ConfigError(f"species.{name}.{key}: missing")
            values[key] = _number(entry[key], f"species.{name}.{key}")
        species[name] = SpeciesMarket(**values)
    kw = {key: _number(data[key], key) for key in _GLOBAL_KEYS if key in data}
    return MarketModel(species=species, **kw)


def load_market(path: str | Path) -> MarketModel:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read market config {path}: {exc}") from exc
    return market_from_dict(data)


@lru_cache(maxsize=None)
def _default_market_text() -> str:
    return resources.files("thinlab.data").joinpath("default_market.json").read_text()


def default_market() -> MarketModel:
    """Placeholder price/cost level shipped with the package."""
    return market_from_dict(json.loads(_default_market_text()))
