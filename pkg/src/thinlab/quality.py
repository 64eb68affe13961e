"""Quality-distribution algebra.

Tree quality within a species/diameter class is uniform on ``[1-b, 1+b]``
(relative to the class mean).  Selecting the best fraction ``p`` of the
trees leaves a mean multiplier ``1 + b(1-p)``; afterwards the multipliers
are carried through the diameter classes as stem-weighted averages.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

DEFAULT_HALF_WIDTH = 0.5
DEFAULT_STRIP_ROAD_SURVIVAL = 0.85


def quality_correction(b: float, p: float) -> float:
    """Mean quality multiplier of the trees kept when the best fraction ``p`` survives."""
    if not 0.0 < b < 1.0:
        raise ConfigError(f"quality half-width b must lie in (0, 1), got {b}")
    if p <= 0.0:
        raise ConfigError("full removal leaves no remaining trees to correct")
    if p > 1.0:
        raise ConfigError(f"survival rate p must not exceed 1, got {p}")
    return 1.0 + b * (1.0 - p)


def survival_after_strip_roads(s: float, a: float) -> float:
    """Survival rate among the trees left standing after the strip roads are opened.

    ``s`` is the total retention of the harvest and ``a`` the retention after
    strip-road clearing alone.
    """
    if not 0.0 < a <= 1.0:
        raise ConfigError(f"strip-road survival a must lie in (0, 1], got {a}")
    if s <= 0.0:
        raise ConfigError("retention must be positive for a quality selection")
    if s > a:
        raise ConfigError("retention exceeds strip-road survival")
    return s / a


def evolve_quality(nt_upstream, j_upstream, nr_resident, j_resident):
    """Stem-weighted quality multiplier of a class after one transfer step.

    ``nt_upstream`` trees arrive from the class below carrying ``j_upstream``;
    ``nr_resident`` trees stay carrying ``j_resident``.  Empty results reset to 1.
    Works element-wise on arrays; scalar inputs give a float.
    """
    nt = np.asarray(nt_upstream, dtype=float)
    nr = np.asarray(nr_resident, dtype=float)
    total = nt + nr
    filled = total > 0.0
    j = (nt * j_upstream + nr * j_resident) / np.where(filled, total, 1.0)
    out = np.where(filled, j, 1.0)
    if out.ndim == 0:
        return float(out)
    return out
