"""Figure-level datasets.

Every dataset is a plain CSV preceded by two comment lines: the manifest
hash of the run that produced it and the column schema.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .economics import EconomicTrace, build_trace, return_rate_from_terms, simulate
from .errors import EconomicsError
from .kernel import GrowthKernel
from .stand import STEP_MONTHS, Stand, ba_weighted_mean_diameter, basal_area
from .thinning import ManagementSchedule, Regime
from .valuation import MarketModel, harvest_time_per_m3, relative_value_increment_profile, stand_volume

TRAJECTORY_HEADER = ("step", "age_months", "ba_weighted_diameter_mm", "volume_m3_ha", "K_eur_ha", "event")
SNAPSHOT_HEADER = ("step", "species", "diameter_class_midpoint_mm", "stems_per_ha", "quality")

SCHEMAS = {
    "f1_return_vs_rotation": ("stand", "regime", "rotation_steps", "rotation_age_months", "r_expected"),
    "f2_diameter_trajectory": ("stand", "regime", "step", "age_months", "ba_weighted_diameter_mm"),
    "f3_capitalization_vs_rotation": ("stand", "regime", "rotation_age_months", "K_mean_eur_ha"),
    "f4_diameter_vs_volume": ("stand", "regime", "ba_weighted_diameter_mm", "volume_m3_ha"),
    "f5_terminal_quality_by_class": ("stand", "regime", "species", "diameter_class_midpoint_mm", "stems_per_ha",
                                     "quality"),
    "f7_value_increment_profile": ("stand", "species", "diameter_class_midpoint_mm", "relative_increment_per_yr"),
    "f12_harvest_time_curve": ("operation", "trunk_volume_m3", "minutes_per_m3"),
}


@dataclass(frozen=True)
class Run:
    """One optimized (or prescribed) schedule of one stand under one regime."""

    stand_id: str
    stand: Stand
    regime: Regime
    schedule: ManagementSchedule


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_dataset(path: str | Path, name: str, rows: Iterable[Sequence], manifest_hash: str) -> None:
    schema = SCHEMAS[name]
    buf = io.StringIO()
    buf.write(f"# {name} manifest={manifest_hash}\n")
    buf.write(f"# schema: {','.join(schema)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(schema)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_dataset(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    """Comment lines and the rows of a dataset written by :func:`write_dataset`."""
    lines = Path(path).read_text().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return comments, list(csv.DictReader(body))


# ---------------------------------------------------------------------------
# per-run quantities


def trajectory_rows(trace: EconomicTrace, market: MarketModel) -> list[tuple]:
    """Per-step trajectory: pre-harvest state at every step boundary, ``rotation + 1`` rows."""
    rows = []
    n = trace.rotation_steps
    for k, stand in enumerate(trace.stands):
        if k < n:
            K, event = trace.k_start[k], trace.events[k]
        else:
            K, event = trace.k_end[-1], "final"
        try:
            d = ba_weighted_mean_diameter(stand)
        except ValueError:
            d = math.nan
        rows.append((k, stand.age_months, d, stand_volume(market, stand), float(K), event))
    return rows


def trajectory_csv(trace: EconomicTrace, market: MarketModel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_HEADER)
    for row in trajectory_rows(trace, market):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def snapshots_csv(trace: EconomicTrace) -> str:
    """Long-format stand snapshots of the trajectory, for re-ingestion."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SNAPSHOT_HEADER)
    for k, stand in enumerate(trace.stands):
        for sp, mid, c in stand.cohorts():
            w.writerow([k, sp, repr(mid), repr(c.stems), repr(c.quality)])
    return buf.getvalue()


def stands_from_snapshots(text: str, template: Stand) -> list[Stand]:
    """Rebuild the trajectory stands written by :func:`snapshots_csv`."""
    grid = template.grid
    by_step: dict[int, dict] = {}
    for row in csv.DictReader(io.StringIO(text)):
        k = int(row["step"])
        st = by_step.setdefault(k, {"n": {}, "j": {}})
        sp = row["species"]
        i = grid.index_of(float(row["diameter_class_midpoint_mm"]))
        st["n"].setdefault(sp, np.zeros(grid.class_count))[i] = float(row["stems_per_ha"])
        st["j"].setdefault(sp, np.ones(grid.class_count))[i] = float(row["quality"])
    out = []
    for k in sorted(by_step):
        st = by_step[k]
        out.append(Stand(stems=st["n"], quality=st["j"], age_months=template.age_months + STEP_MONTHS * k,
                         site_index=template.site_index, grid=grid))
    return out


def return_vs_rotation(run: Run, kernel: GrowthKernel, market: MarketModel, max_rotation: int) -> list[tuple]:
    """Return rate of the run's thinnings for every admissible rotation."""
    sim = simulate(run.stand, run.schedule.thinnings, kernel, market, run.regime, max_rotation)
    first = run.schedule.thinnings[-1].step + 1 if run.schedule.thinnings else 1
    rows = []
    for rot in range(first, max_rotation + 1):
        try:
            r = return_rate_from_terms(*sim.step_terms(rot))
        except EconomicsError:
            continue
        rows.append((run.stand_id, run.regime.value, rot, run.stand.age_months + STEP_MONTHS * rot, r))
    return rows


def harvest_time_curve(market: MarketModel, volumes: np.ndarray | None = None) -> list[tuple]:
    if volumes is None:
        volumes = np.geomspace(0.02, 2.0, 41)
    rows = []
    for op, clearcut in (("thinning", False), ("clearcut", True)):
        rows += [(op, float(v), harvest_time_per_m3(market, float(v), clearcut)) for v in volumes]
    return rows


def log_log_slope(rows: Sequence[tuple], operation: str = "thinning") -> float:
    """Least-squares slope of log(time) against log(volume)."""
    pts = [(float(v), float(t)) for op, v, t in rows if op == operation]
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# the full report


def build_report(runs: Sequence[Run], kernel: GrowthKernel, market: MarketModel, max_rotation: int
                 ) -> dict[str, list[tuple]]:
    """All datasets for ``runs``; keys are dataset names."""
    data: dict[str, list[tuple]] = {name: [] for name in SCHEMAS}
    profiled = set()
    for run in runs:
        trace = build_trace(run.stand, run.schedule, kernel, market, run.regime)
        sid, reg = run.stand_id, run.regime.value
        data["f1_return_vs_rotation"] += return_vs_rotation(run, kernel, market, max_rotation)
        for k, stand in enumerate(trace.stands[:-1]):
            if basal_area(stand) > 0:
                data["f2_diameter_trajectory"].append((sid, reg, k, stand.age_months,
                                                       ba_weighted_mean_diameter(stand)))
        rot_age = run.stand.age_months + STEP_MONTHS * trace.rotation_steps
        data["f3_capitalization_vs_rotation"].append((sid, reg, rot_age, trace.mean_capitalization))
        final = trace.stands[-1]
        if basal_area(final) > 0:
            data["f4_diameter_vs_volume"].append((sid, reg, ba_weighted_mean_diameter(final),
                                                  stand_volume(market, final)))
        for sp, mid, c in final.cohorts():
            data["f5_terminal_quality_by_class"].append((sid, reg, sp, mid, c.stems, c.quality))
        if sid not in profiled:
            profiled.add(sid)
            for sp, rows in relative_value_increment_profile(market, run.stand, kernel).items():
                data["f7_value_increment_profile"] += [(sid, sp, mid, r) for mid, r in rows]
    data["f12_harvest_time_curve"] = harvest_time_curve(market)
    return data
