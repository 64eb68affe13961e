"""Stand state: species x diameter-class cohorts carrying a quality multiplier.

The stand is an expectation machine: stems per hectare are real valued and
every class is represented by its midpoint.  A growth step moves the
fraction ``increment / class_width`` of each class one class up, applies
survival, and recruits ingrowth into the smallest class at unit quality.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, NamedTuple

import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .kernel import MAX_PROBABILITY, GrowthKernel
from .quality import evolve_quality

STEP_MONTHS = 30
STEP_YEARS = STEP_MONTHS / 12.0

STAND_HEADER = ("species", "diameter_class_midpoint_mm", "stems_per_ha", "quality")


@dataclass(frozen=True)
class DiameterClassGrid:
    class_width: float = 25.0
    min_midpoint: float = 37.5
    class_count: int = 20

    def __post_init__(self):
        if not self.class_width > 0:
            raise ConfigError("class_width must be positive")
        if self.class_count < 2:
            raise ConfigError("class_count must be at least 2")

    @property
    def midpoints(self) -> np.ndarray:
        return self.min_midpoint + self.class_width * np.arange(self.class_count)

    def midpoint(self, i: int) -> float:
        return self.min_midpoint + i * self.class_width

    def index_of(self, midpoint: float) -> int:
        """Class index whose midpoint equals ``midpoint`` (to 1e-6 mm)."""
        x = (midpoint - self.min_midpoint) / self.class_width
        i = round(x)
        if abs(x - i) * self.class_width > 1e-6 or not 0 <= i < self.class_count:
            raise ConfigError(f"diameter {midpoint} mm is not a class midpoint of the grid")
        return int(i)

    @property
    def basal_area_per_stem(self) -> np.ndarray:
        """m^2 per tree at each class midpoint."""
        return math.pi * (self.midpoints / 2000.0) ** 2


class Cohort(NamedTuple):
    stems: float
    quality: float


@dataclass(frozen=True, eq=False)
class Stand:
    """Stems/ha and quality multipliers per species, one entry per diameter class."""

    stems: Mapping[str, np.ndarray]
    quality: Mapping[str, np.ndarray]
    age_months: int = 0
    site_index: float = 20.0
    grid: DiameterClassGrid = field(default_factory=DiameterClassGrid)

    def __post_init__(self):
        if set(self.stems) != set(self.quality):
            raise ConfigError("stems and quality must cover the same species")
        for sp in self.stems:
            n = np.asarray(self.stems[sp], dtype=float)
            j = np.asarray(self.quality[sp], dtype=float)
            if n.shape != (self.grid.class_count,) or j.shape != n.shape:
                raise ConfigError(f"{sp}: arrays must have one entry per diameter class")
            if not np.all(np.isfinite(n)) or np.any(n < 0):
                raise ConfigError(f"{sp}: stems must be finite and non-negative")
            if np.any(j < 1.0 - 1e-12):
                raise ConfigError(f"{sp}: quality multipliers must be >= 1")

    @classmethod
    def empty(cls, species=("spruce",), grid: DiameterClassGrid | None = None, **kw) -> "Stand":
        grid = grid or DiameterClassGrid()
        return cls(
            stems={sp: np.zeros(grid.class_count) for sp in species},
            quality={sp: np.ones(grid.class_count) for sp in species},
            grid=grid,
            **kw,
        )

    @property
    def species(self) -> tuple[str, ...]:
        return tuple(self.stems)

    def cohorts(self) -> Iterator[tuple[str, float, Cohort]]:
        """Nonempty cohorts as ``(species, midpoint_mm, Cohort)``."""
        mids = self.grid.midpoints
        for sp in self.species:
            for i in np.flatnonzero(self.stems[sp] > 0):
                yield sp, float(mids[i]), Cohort(float(self.stems[sp][i]), float(self.quality[sp][i]))

    def total_stems(self) -> float:
        return float(sum(n.sum() for n in self.stems.values()))

    # array views in a fixed species order, used by the simulation core
    def as_arrays(self, order: tuple[str, ...] | None = None) -> tuple[np.ndarray, np.ndarray]:
        order = order or self.species
        zeros = np.zeros(self.grid.class_count)
        ones = np.ones(self.grid.class_count)
        n = np.array([self.stems.get(sp, zeros) for sp in order], dtype=float)
        j = np.array([self.quality.get(sp, ones) for sp in order], dtype=float)
        return n, j

    def with_arrays(self, order: tuple[str, ...], n: np.ndarray, j: np.ndarray, **changes) -> "Stand":
        return replace(
            self,
            stems={sp: n[k].copy() for k, sp in enumerate(order)},
            quality={sp: j[k].copy() for k, sp in enumerate(order)},
            **changes,
        )


def basal_area(stand: Stand) -> float:
    """Stand basal area, m^2/ha."""
    g = stand.grid.basal_area_per_stem
    return float(sum(np.dot(n, g) for n in stand.stems.values()))


def ba_weighted_mean_diameter(stand: Stand) -> float:
    """Basal-area-weighted mean diameter, mm."""
    g = stand.grid.basal_area_per_stem
    mids = stand.grid.midpoints
    ba = sum(n * g for n in stand.stems.values())
    total = float(np.sum(ba))
    if total <= 0:
        raise ValueError("no basal area")
    return float(np.dot(ba, mids) / total)


class GrowthModel:
    """Kernel coefficients evaluated on the class grid for one species order and site.

    Arrays passed to :meth:`rates` and :meth:`grow` have shape
    ``(..., species, classes)``; leading axes are independent stands.
    """

    def __init__(self, kernel: GrowthKernel, order: tuple[str, ...], grid: DiameterClassGrid,
                 site_index: float, coupling: float = 0.0):
        inc_c, mort_c, ing_c = kernel.arrays(order)
        d = grid.midpoints
        self.grid = grid
        self.coupling = coupling
        self.inc_base = inc_c[:, :1] + inc_c[:, 1:2] * d + inc_c[:, 2:3] * d * d + inc_c[:, 4:5] * site_index
        self.inc_ba = inc_c[:, 3:4]
        self.mort_base = mort_c[:, :1] + mort_c[:, 1:2] * d
        self.mort_ba = mort_c[:, 2:3]
        self.ing_g0 = ing_c[:, 0]
        self.ing_g1 = ing_c[:, 1]
        self.g = np.broadcast_to(grid.basal_area_per_stem, (len(order), grid.class_count)).reshape(-1)
        self.size = len(order) * grid.class_count

    def basal_area(self, n: np.ndarray) -> np.ndarray:
        flat = n.reshape(n.shape[:-2] + (self.size,))
        return (flat * self.g).sum(axis=-1)

    def rates(self, n: np.ndarray, j: np.ndarray):
        """Transfer fractions, survival (indexed by destination class) and recruits for one step.

        Everything is evaluated at the basal area at the start of the step.
        """
        ba = self.basal_area(n)[..., None, None]
        inc = np.maximum(self.inc_base + self.inc_ba * ba, 0.0)
        if self.coupling:
            inc = inc * (1.0 + self.coupling * (j - 1.0))
        frac = np.minimum(inc / self.grid.class_width, 1.0)
        frac[..., -1] = 0.0  # top class is absorbing
        surv = 1.0 - np.minimum(expit(self.mort_base + self.mort_ba * ba), MAX_PROBABILITY)
        recruits = np.maximum(0.0, self.ing_g0 - self.ing_g1 * ba[..., 0])
        return frac, surv, recruits

    def grow(self, n: np.ndarray, j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        frac, surv, recruits = self.rates(n, j)
        moving = frac * n
        staying = n - moving
        arriving = np.zeros_like(n)
        arriving[..., 1:] = moving[..., :-1]
        j_up = np.ones_like(j)
        j_up[..., 1:] = j[..., :-1]
        new_j = evolve_quality(arriving, j_up, staying, j)
        new_n = (arriving + staying) * surv

        new_j[..., 0] = evolve_quality(recruits, 1.0, new_n[..., 0], new_j[..., 0])
        new_n[..., 0] = new_n[..., 0] + recruits
        return new_n, new_j


def grow_step(stand: Stand, kernel: GrowthKernel, coupling_on: bool = False, coupling_strength: float = 1.0) -> Stand:
    """Advance the stand by one 30-month step.

    With ``coupling_on`` the diameter increment of each cohort is scaled by
    ``1 + coupling_strength * (j - 1)``, i.e. quality includes vigour.
    """
    if not 0.0 <= coupling_strength <= 1.0:
        raise ConfigError("coupling_strength must lie in [0, 1]")
    order = stand.species
    model = GrowthModel(kernel, order, stand.grid, stand.site_index, coupling_strength if coupling_on else 0.0)
    n, j = stand.as_arrays(order)
    new_n, new_j = model.grow(n, j)
    return stand.with_arrays(order, new_n, new_j, age_months=stand.age_months + STEP_MONTHS)


# ---------------------------------------------------------------------------
# CSV fixture format

_FRONT_MATTER = re.compile(r"#\s*age_months\s*=\s*([^,\s]+)\s*,\s*site_index\s*=\s*([^,\s]+)")


def read_stand(path: str | Path, grid: DiameterClassGrid | None = None) -> Stand:
    """Read a stand fixture CSV (``# age_months=..., site_index=...`` front matter)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read stand file {path}: {exc}") from exc
    return parse_stand(text, grid=grid, source=str(path))


def parse_stand(text: str, grid: DiameterClassGrid | None = None, source: str = "<stand>") -> Stand:
    grid = grid or DiameterClassGrid()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    age = site = None
    rows = []
    header = None
    for lineno, line in enumerate(lines, 1):
        if line.startswith("#"):
            m = _FRONT_MATTER.match(line)
            if m:
                try:
                    age, site = int(float(m.group(1))), float(m.group(2))
                except ValueError:
                    raise ConfigError(f"{source}:{lineno}: bad front matter '{line}'") from None
            continue
        cells = [c.strip() for c in line.split(",")]
        if header is None:
            header = tuple(cells)
            if header != STAND_HEADER:
                raise ConfigError(f"{source}: header must be {','.join(STAND_HEADER)}")
            continue
        if len(cells) != 4:
            raise ConfigError(f"{source}:{lineno}: expected 4 fields")
        rows.append((lineno, cells))
    if age is None:
        raise ConfigError(f"{source}: missing '# age_months=..., site_index=...' line")
    if header is None:
        raise ConfigError(f"{source}: missing header row")

    stems: dict[str, np.ndarray] = {}
    quality: dict[str, np.ndarray] = {}
    for lineno, (sp, mid, n, q) in rows:
        try:
            mid_v, n_v, q_v = float(mid), float(n), float(q)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: non-numeric field") from None
        if not sp:
            raise ConfigError(f"{source}:{lineno}: species: empty")
        if not math.isfinite(n_v) or n_v < 0:
            raise ConfigError(f"{source}:{lineno}: stems_per_ha: must be a non-negative number")
        if not math.isfinite(q_v) or q_v < 1.0:
            raise ConfigError(f"{source}:{lineno}: quality: must be >= 1")
        try:
            i = grid.index_of(mid_v)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: diameter_class_midpoint_mm: {exc}") from None
        if sp not in stems:
            stems[sp] = np.zeros(grid.class_count)
            quality[sp] = np.ones(grid.class_count)
        stems[sp][i] += n_v
        quality[sp][i] = q_v
    if not stems:
        raise ConfigError(f"{source}: no cohorts")
    return Stand(stems=stems, quality=quality, age_months=age, site_index=site, grid=grid)


def format_stand(stand: Stand) -> str:
    out = [f"# age_months={stand.age_months}, site_index={stand.site_index!r}", ",".join(STAND_HEADER)]
    for sp, mid, c in stand.cohorts():
        out.append(f"{sp},{mid!r},{c.stems!r},{c.quality!r}")
    return "\n".join(out) + "\n"


def write_stand(stand: Stand, path: str | Path) -> None:
    Path(path).write_text(format_stand(stand))
