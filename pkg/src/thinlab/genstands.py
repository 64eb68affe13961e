"""Synthetic never-thinned, spruce-dominated young stands.

Each stand is sampled like a field plot: individual trees are drawn on a
circular plot of 10 m radius, every tree standing for
``10000 / (pi * 10**2)`` stems per hectare.  Diameters come from Weibull
distributions whose parameters are set by a template:

``even``
    single-storey spruce with a birch admixture and a few pines.
``layered``
    spruce dominants over a suppressed spruce understorey, birch admixture.
``birch-rich``
    spruce still holds most of the basal area, but birch is frequent.

Only :func:`generate_stands` touches the random number generator, and only
through the seed it is given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .stand import DiameterClassGrid, Stand, basal_area

PLOT_RADIUS_M = 10.0
STEMS_PER_TREE = 10000.0 / (math.pi * PLOT_RADIUS_M**2)
AGE_RANGE_MONTHS = (360, 540)
SITE_INDEX_RANGE = (18.0, 24.0)
MIN_DIAMETER_MM = 25.0  # calipering limit


@dataclass(frozen=True)
class Layer:
    species: str
    trees: tuple[int, int]  # inclusive range of trees on the plot
    scale_mm: tuple[float, float]  # Weibull scale range
    shape: float


TEMPLATES: dict[str, tuple[Layer, ...]] = {
    "even": (
        Layer("spruce", (38, 58), (140.0, 185.0), 3.2),
        Layer("birch", (5, 12), (120.0, 160.0), 2.8),
        Layer("pine", (0, 4), (150.0, 190.0), 3.5),
    ),
    "layered": (
        Layer("spruce", (22, 34), (165.0, 200.0), 3.6),
        Layer("spruce", (14, 26), (70.0, 100.0), 2.4),
        Layer("birch", (4, 10), (120.0, 160.0), 2.8),
    ),
    "birch-rich": (
        Layer("spruce", (34, 48), (150.0, 185.0), 3.2),
        Layer("birch", (12, 20), (110.0, 145.0), 2.6),
        Layer("pine", (0, 3), (150.0, 190.0), 3.5),
    ),
}

DEFAULT_SEQUENCE = ("even", "layered", "even", "birch-rich", "even", "layered", "birch-rich")


def spruce_share(stand: Stand) -> float:
    total = basal_area(stand)
    if "spruce" not in stand.stems or total <= 0:
        return 0.0
    g = stand.grid.basal_area_per_stem
    return float(np.sum(stand.stems["spruce"] * g)) / total


def _draw(rng: np.random.Generator, template: str, grid: DiameterClassGrid) -> Stand:
    layers = TEMPLATES[template]
    edges = grid.midpoints[0] - grid.class_width / 2.0
    stems: dict[str, np.ndarray] = {}
    for layer in layers:
        count = int(rng.integers(layer.trees[0], layer.trees[1] + 1))
        scale = float(rng.uniform(*layer.scale_mm))
        d = scale * rng.weibull(layer.shape, size=count)
        d = d[d >= MIN_DIAMETER_MM]
        idx = np.clip(((d - edges) // grid.class_width).astype(int), 0, grid.class_count - 1)
        counts = np.bincount(idx, minlength=grid.class_count) * STEMS_PER_TREE
        stems[layer.species] = stems.get(layer.species, np.zeros(grid.class_count)) + counts
    stems = {sp: n for sp, n in stems.items() if n.sum() > 0}
    quality = {sp: np.ones(grid.class_count) for sp in stems}
    age = int(rng.integers(AGE_RANGE_MONTHS[0], AGE_RANGE_MONTHS[1] + 1))
    site = round(float(rng.uniform(*SITE_INDEX_RANGE)), 1)
    return Stand(stems=stems, quality=quality, age_months=age, site_index=site, grid=grid)


def generate_stands(seed: int, count: int = 7, templates: tuple[str, ...] | str | None = None,
                    grid: DiameterClassGrid | None = None) -> list[Stand]:
    """Draw ``count`` spruce-dominated stands; redraws until spruce holds over half the basal area."""
    grid = grid or DiameterClassGrid()
    if count < 1:
        raise ConfigError("count must be positive")
    if templates is None:
        templates = DEFAULT_SEQUENCE
    elif isinstance(templates, str):
        templates = (templates,)
    for t in templates:
        if t not in TEMPLATES:
            raise ConfigError(f"unknown template '{t}' (expected one of {', '.join(TEMPLATES)})")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        template = templates[i % len(templates)]
        while True:
            stand = _draw(rng, template, grid)
            if spruce_share(stand) > 0.5:
                break
        out.append(stand)
    return out


def stand_name(index: int) -> str:
    """``stand_A``, ``stand_B``, ... ``stand_Z``, ``stand_AA`` ..."""
    letters = ""
    index += 1
    while index:
        index, rem = divmod(index - 1, 26)
        letters = chr(65 + rem) + letters
    return f"stand_{letters}"


def fixture_paths() -> list:
    """The seven shipped fixture stands (seed 2024), in name order."""
    from importlib import resources

    root = resources.files("thinlab.data").joinpath("fixtures")
    return sorted((p for p in root.iterdir() if p.name.endswith(".csv")), key=lambda p: p.name)
