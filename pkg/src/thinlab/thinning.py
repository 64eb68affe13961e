"""Thinning events and management schedules.

A thinning keeps the fraction ``retention[species][class]`` of every
cohort.  Where the quality mask is set (and the caller allows it), the
trees kept are the best ones among those surviving strip-road clearing, and
their quality multiplier is raised accordingly.  Removed trees are sold at
thinning stumpage with their pre-event multiplier.

Schedule file (JSON)::

    {"rotation_steps": 16,
     "thinnings": [{"step": 0,
                    "retention": [1.0, ...],          # default for every species
                    "strip_road_survival": 0.85,
                    "quality": false,                 # or a per-class list of bools
                    "b": 0.5,
                    "species_overrides": {"birch": {"retention": [...], "quality": [...]}}}]}
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, ScheduleError
from .quality import DEFAULT_HALF_WIDTH, DEFAULT_STRIP_ROAD_SURVIVAL
from .stand import DiameterClassGrid, Stand
from .valuation import MarketModel, ValueTable, assortment_volumes


class Regime(str, enum.Enum):
    NONE = "none"
    QUALITY = "quality"
    QUALITY_GROWTH = "quality-growth"

    @classmethod
    def parse(cls, value: "str | Regime") -> "Regime":
        if isinstance(value, Regime):
            return value
        try:
            return cls(str(value).replace("_", "-"))
        except ValueError:
            raise ConfigError(f"unknown mode '{value}' (expected none, quality or quality-growth)") from None

    @property
    def quality_thinning(self) -> bool:
        return self is not Regime.NONE

    @property
    def growth_coupled(self) -> bool:
        return self is Regime.QUALITY_GROWTH


@dataclass(frozen=True, eq=False)
class ThinningRule:
    """Per-species, per-class retention plus an optional quality-selection mask.

    Species absent from ``retention`` are left untouched.
    """

    step: int
    retention: Mapping[str, np.ndarray]
    quality: Mapping[str, np.ndarray] = field(default_factory=dict)
    strip_road_survival: float = DEFAULT_STRIP_ROAD_SURVIVAL
    b: float = DEFAULT_HALF_WIDTH

    def validate(self, grid: DiameterClassGrid) -> None:
        if not isinstance(self.step, (int, np.integer)) or self.step < 0:
            raise ScheduleError(f"thinning step must be a non-negative integer, got {self.step!r}")
        a = self.strip_road_survival
        if not 0.0 < a <= 1.0:
            raise ScheduleError(f"strip_road_survival must lie in (0, 1], got {a}")
        if not 0.0 < self.b < 1.0:
            raise ScheduleError(f"b must lie in (0, 1), got {self.b}")
        for sp, s in self.retention.items():
            s = np.asarray(s, dtype=float)
            if s.shape != (grid.class_count,):
                raise ScheduleError(f"retention[{sp}]: expected {grid.class_count} values")
            if not np.all((s >= 0.0) & (s <= 1.0)):
                raise ScheduleError(f"retention[{sp}]: values must lie in [0, 1]")
        for sp, q in self.quality.items():
            q = np.asarray(q, dtype=bool)
            if q.shape != (grid.class_count,):
                raise ScheduleError(f"quality[{sp}]: expected {grid.class_count} flags")
            s = np.asarray(self.retention.get(sp, np.ones(grid.class_count)), dtype=float)
            # untouched classes (s == 1) carry no selection and are exempt
            bad = q & (s > a) & (s < 1.0)
            if np.any(bad):
                i = int(np.flatnonzero(bad)[0])
                raise ScheduleError(f"quality[{sp}][{i}]: retention exceeds strip-road survival")

    def arrays(self, order: tuple[str, ...], grid: DiameterClassGrid) -> tuple[np.ndarray, np.ndarray]:
        c = grid.class_count
        s = np.array([self.retention.get(sp, np.ones(c)) for sp in order], dtype=float).reshape(len(order), c)
        q = np.array([self.quality.get(sp, np.zeros(c, dtype=bool)) for sp in order], dtype=bool).reshape(
            len(order), c
        )
        return s, q

    def is_null(self) -> bool:
        return all(np.all(np.asarray(s) == 1.0) for s in self.retention.values())


@dataclass(frozen=True, eq=False)
class HarvestRecord:
    """Per-species, per-class removals and their money."""

    species: tuple[str, ...]
    stems_removed: np.ndarray
    volume_pulp: np.ndarray
    volume_saw: np.ndarray
    revenue: np.ndarray
    cost: np.ndarray
    net: np.ndarray

    @property
    def net_cash(self) -> float:
        return float(np.sum(self.net))

    @property
    def volume(self) -> float:
        return float(np.sum(self.volume_pulp) + np.sum(self.volume_saw))

    def is_empty(self) -> bool:
        return not np.any(self.stems_removed > 0)


def thin_arrays(n, j, s, q, a: float, b: float, apply_quality: bool):
    """Apply retention ``s`` (and, if allowed, quality mask ``q``) to (species x class) arrays.

    Returns ``(remaining, new_j, removed)``.
    """
    remaining = n * s
    removed = n - remaining
    if apply_quality:
        sel = q & (s > 0.0) & (s < 1.0) & (n > 0.0)
        if sel.any():
            j = np.where(sel, j * (1.0 + b * (1.0 - s / a)), j)
    return remaining, j, removed


def harvest_record(order, removed, j, table: ValueTable, market: MarketModel, grid: DiameterClassGrid) -> HarvestRecord:
    """Book ``removed`` stems (pre-event multipliers ``j``) at the prices of ``table``."""
    saw_vol = np.zeros_like(removed)
    pulp_vol = np.zeros_like(removed)
    for k, sp in enumerate(order):
        for i, d in enumerate(grid.midpoints):
            if removed[k, i] > 0:
                vp, vs = assortment_volumes(market, sp, float(d))
                pulp_vol[k, i] = removed[k, i] * vp
                saw_vol[k, i] = removed[k, i] * vs
    revenue = removed * (table.roadside_base + j * table.saw)
    cost = removed * (table.roadside_base - table.base)
    return HarvestRecord(order, removed, pulp_vol, saw_vol, revenue, cost, revenue - cost)


def apply_thinning(stand: Stand, rule: ThinningRule, market: MarketModel,
                   apply_quality: bool = True) -> tuple[Stand, HarvestRecord]:
    """Thin ``stand`` by ``rule``; quality correction only when ``apply_quality`` is set."""
    rule.validate(stand.grid)
    order = stand.species
    n, j = stand.as_arrays(order)
    s, q = rule.arrays(order, stand.grid)
    remaining, new_j, removed = thin_arrays(n, j, s, q, rule.strip_road_survival, rule.b, apply_quality)
    table = market.value_table(order, stand.grid, False)
    record = harvest_record(order, removed, j, table, market, stand.grid)
    return stand.with_arrays(order, remaining, new_j), record


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True, eq=False)
class ManagementSchedule:
    thinnings: tuple[ThinningRule, ...]
    rotation_steps: int

    def validate(self, grid: DiameterClassGrid) -> None:
        if not isinstance(self.rotation_steps, (int, np.integer)) or self.rotation_steps < 1:
            raise ScheduleError("rotation_steps must be a positive integer")
        steps = [r.step for r in self.thinnings]
        if steps != sorted(steps) or len(set(steps)) != len(steps):
            raise ScheduleError("thinning steps must be strictly increasing")
        for r in self.thinnings:
            r.validate(grid)
            if r.step >= self.rotation_steps:
                raise ScheduleError(f"thinning at step {r.step} lies beyond rotation of {self.rotation_steps} steps")

    def to_dict(self) -> dict:
        out = []
        for r in self.thinnings:
            entry: dict = {"step": int(r.step), "strip_road_survival": r.strip_road_survival, "b": r.b}
            overrides = {}
            for sp in sorted(set(r.retention) | set(r.quality)):
                o = {}
                if sp in r.retention:
                    o["retention"] = [float(x) for x in r.retention[sp]]
                if sp in r.quality:
                    o["quality"] = [bool(x) for x in r.quality[sp]]
                overrides[sp] = o
            entry["quality"] = False
            entry["species_overrides"] = overrides
            out.append(entry)
        return {"rotation_steps": int(self.rotation_steps), "thinnings": out}


def _flags(value, count: int, where: str) -> np.ndarray:
    if isinstance(value, bool):
        return np.full(count, value)
    if isinstance(value, list) and len(value) == count and all(isinstance(v, bool) for v in value):
        return np.array(value, dtype=bool)
    raise ConfigError(f"{where}: expected true/false or a list of {count} booleans")


def _fractions(value, count: int, where: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != count:
        raise ConfigError(f"{where}: expected a list of {count} numbers")
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{where}[{i}]: expected a number, got {v!r}")
    return np.array(value, dtype=float)


def schedule_from_dict(data: dict, species: tuple[str, ...], grid: DiameterClassGrid | None = None) -> ManagementSchedule:
    """Parse a schedule for a stand holding ``species``."""
    grid = grid or DiameterClassGrid()
    c = grid.class_count
    if not isinstance(data, dict):
        raise ConfigError("schedule: expected an object")
    rot = data.get("rotation_steps")
    if isinstance(rot, bool) or not isinstance(rot, int):
        raise ConfigError("rotation_steps: expected an integer")
    rules = []
    for t, entry in enumerate(data.get("thinnings", [])):
        where = f"thinnings[{t}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: expected an object")
        step = entry.get("step")
        if isinstance(step, bool) or not isinstance(step, int):
            raise ConfigError(f"{where}.step: expected an integer")
        base_s = _fractions(entry["retention"], c, f"{where}.retention") if "retention" in entry else np.ones(c)
        base_q = _flags(entry.get("quality", False), c, f"{where}.quality")
        overrides = entry.get("species_overrides", {}) or {}
        if not isinstance(overrides, dict):
            raise ConfigError(f"{where}.species_overrides: expected an object")
        retention, quality = {}, {}
        for sp in species:
            o = overrides.get(sp, {})
            retention[sp] = _fractions(o["retention"], c, f"{where}.species_overrides.{sp}.retention") \
                if "retention" in o else base_s.copy()
            quality[sp] = _flags(o["quality"], c, f"{where}.species_overrides.{sp}.quality") \
                if "quality" in o else base_q.copy()
        for key in ("strip_road_survival", "b"):
            v = entry.get(key)
            if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise ConfigError(f"{where}.{key}: expected a number")
        rules.append(ThinningRule(
            step=step,
            retention=retention,
            quality=quality,
            strip_road_survival=float(entry.get("strip_road_survival", DEFAULT_STRIP_ROAD_SURVIVAL)),
            b=float(entry.get("b", DEFAULT_HALF_WIDTH)),
        ))
    return ManagementSchedule(tuple(rules), rot)


def load_schedule(path: str | Path, species: tuple[str, ...], grid: DiameterClassGrid | None = None) -> ManagementSchedule:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read schedule {path}: {exc}") from exc
    return schedule_from_dict(data, species, grid)


def write_schedule(schedule: ManagementSchedule, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schedule.to_dict(), indent=2) + "\n")
