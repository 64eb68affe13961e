"""Coefficient-driven growth kernel: diameter increment, mortality and ingrowth.

All rates are per 30-month step.  The functional forms are deliberately
simple (linear predictor, logistic, linearly damped ingrowth) so that any
published coefficient table can be dropped into the JSON config.

Config schema::

    {"species": {"spruce": {"increment": [c0, c1, c2, c3, c4],
                            "mortality": [m0, m1, m2],
                            "ingrowth": [g0, g1]}, ...}}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit

from .errors import ConfigError

MAX_PROBABILITY = math.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class SpeciesGrowth:
    increment: tuple[float, float, float, float, float]
    mortality: tuple[float, float, float]
    ingrowth: tuple[float, float]


@dataclass(frozen=True)
class GrowthKernel:
    species: Mapping[str, SpeciesGrowth]
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def get(self, species: str) -> SpeciesGrowth:
        try:
            return self.species[species]
        except KeyError:
            raise ConfigError(f"growth kernel has no coefficients for species '{species}'") from None

    def arrays(self, order: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (increment, mortality, ingrowth) coefficient matrices for ``order``."""
        if order not in self._cache:
            rows = [self.get(sp) for sp in order]
            self._cache[order] = (
                np.array([r.increment for r in rows], dtype=float).reshape(len(order), 5),
                np.array([r.mortality for r in rows], dtype=float).reshape(len(order), 3),
                np.array([r.ingrowth for r in rows], dtype=float).reshape(len(order), 2),
            )
        return self._cache[order]

    def to_dict(self) -> dict:
        return {
            "species": {
                name: {
                    "increment": list(sp.increment),
                    "mortality": list(sp.mortality),
                    "ingrowth": list(sp.ingrowth),
                }
                for name, sp in self.species.items()
            }
        }


def increment(kernel: GrowthKernel, species: str, diameter: float, basal_area: float, site_index: float) -> float:
    """Expected diameter increment (mm per step), clamped at zero."""
    if diameter <= 0:
        raise ConfigError("diameter must be positive")
    c0, c1, c2, c3, c4 = kernel.get(species).increment
    return max(0.0, c0 + c1 * diameter + c2 * diameter * diameter + c3 * basal_area + c4 * site_index)


def mortality(kernel: GrowthKernel, species: str, diameter: float, basal_area: float) -> float:
    """Probability that a tree dies during one step; logistic in diameter and basal area."""
    if diameter <= 0:
        raise ConfigError("diameter must be positive")
    m0, m1, m2 = kernel.get(species).mortality
    return _logistic(m0 + m1 * diameter + m2 * basal_area)


def ingrowth(kernel: GrowthKernel, species: str, basal_area: float) -> float:
    """Stems/ha recruited into the smallest class during one step."""
    if basal_area < 0:
        raise ConfigError("basal area must be non-negative")
    g0, g1 = kernel.get(species).ingrowth
    return max(0.0, g0 - g1 * basal_area)


def _logistic(x: float) -> float:
    return min(float(expit(x)), MAX_PROBABILITY)


def _coerce(values, n: int, where: str) -> tuple[float, ...]:
    if not isinstance(values, (list, tuple)) or len(values) != n:
        raise ConfigError(f"{where}: expected a list of {n} numbers")
    out = []
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{where}[{i}]: expected a finite number, got {v!r}")
        out.append(float(v))
    return tuple(out)


def kernel_from_dict(data: dict) -> GrowthKernel:
    if not isinstance(data, dict) or not isinstance(data.get("species"), dict) or not data["species"]:
        raise ConfigError("kernel config: 'species' must be a non-empty object")
    species = {}
    for name, entry in data["species"].items():
        if not isinstance(entry, dict):
            raise ConfigError(f"species.{name}: expected an object")
        for key in ("increment", "mortality", "ingrowth"):
            if key not in entry:
                raise ConfigError(f"species.{name}.{key}: missing")
        species[name] = SpeciesGrowth(
            increment=_coerce(entry["increment"], 5, f"species.{name}.increment"),
            mortality=_coerce(entry["mortality"], 3, f"species.{name}.mortality"),
            ingrowth=_coerce(entry["ingrowth"], 2, f"species.{name}.ingrowth"),
        )
        if species[name].ingrowth[1] < 0:
            raise ConfigError(f"species.{name}.ingrowth[1]: basal-area damping must be non-negative")
    return GrowthKernel(species=species)


def load_kernel(path: str | Path) -> GrowthKernel:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read kernel config {path}: {exc}") from exc
    return kernel_from_dict(data)


@lru_cache(maxsize=None)
def _default_kernel_dict() -> str:
    return resources.files("thinlab.data").joinpath("default_kernel.json").read_text()


def default_kernel() -> GrowthKernel:
    """Synthetic spruce/pine/birch calibration shipped with the package."""
    return kernel_from_dict(json.loads(_default_kernel_dict()))
