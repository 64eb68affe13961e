import math

import numpy as np
import pytest

from thinlab.economics import build_trace
from thinlab.optimizer import SearchConfig, optimize
from thinlab.report import (
    SCHEMAS,
    Run,
    build_report,
    harvest_time_curve,
    log_log_slope,
    read_dataset,
    snapshots_csv,
    stands_from_snapshots,
    trajectory_rows,
    write_dataset,
)
from thinlab.stand import ba_weighted_mean_diameter
from thinlab.thinning import ManagementSchedule, Regime
from thinlab.valuation import local_maxima

from conftest import make_kernel


@pytest.fixture(scope="module")
def quality_run(stand_a, kernel, market):
    search = SearchConfig(mode="quality", max_thinnings=1, thinning_steps=(1, 3), retention_step=0.25,
                          max_rotation_steps=12)
    res = optimize(stand_a, kernel, market, search)
    return Run("stand_A", stand_a, Regime.QUALITY, res.best_schedule)


@pytest.fixture(scope="module")
def report(quality_run, kernel, market):
    return build_report([quality_run], kernel, market, 14)


class TestHarvestCurve:
    def test_slope(self, market):
        rows = harvest_time_curve(market)
        for op in ("thinning", "clearcut"):
            assert abs(log_log_slope(rows, op) + 2 / 3) < 1e-9

    def test_clearcut_cheaper(self, market):
        rows = harvest_time_curve(market)
        thin = [t for op, _, t in rows if op == "thinning"]
        cc = [t for op, _, t in rows if op == "clearcut"]
        assert all(c < t for c, t in zip(cc, thin))


class TestDatasets:
    def test_all_present(self, report):
        assert set(report) == set(SCHEMAS)
        assert all(report[name] for name in SCHEMAS)

    def test_write_read(self, report, tmp_path):
        for name, rows in report.items():
            p = tmp_path / f"{name}.csv"
            write_dataset(p, name, rows, "abc123")
            comments, body = read_dataset(p)
            assert comments[0] == f"# {name} manifest=abc123"
            assert comments[1] == "# schema: " + ",".join(SCHEMAS[name])
            assert len(body) == len(rows) and list(body[0]) == list(SCHEMAS[name])

    def test_f12_from_file(self, report, tmp_path):
        p = tmp_path / "f12.csv"
        write_dataset(p, "f12_harvest_time_curve", report["f12_harvest_time_curve"], "h")
        rows = [(r["operation"], float(r["trunk_volume_m3"]), float(r["minutes_per_m3"])) for r in read_dataset(p)[1]]
        assert abs(log_log_slope(rows) + 2 / 3) < 1e-9

    def test_f7_two_peaks(self, report):
        rows = [(mid, r) for sid, sp, mid, r in report["f7_value_increment_profile"] if sp == "spruce"]
        assert len(local_maxima(rows)) == 2

    def test_f5_quality_localized(self, report, quality_run):
        first = quality_run.schedule.thinnings[0]
        flagged = [i for sp, q in first.quality.items() for i in np.flatnonzero(q & (first.retention[sp] < 1))]
        assert flagged
        smallest = min(quality_run.stand.grid.midpoints[i] for i in flagged)
        for _, _, sp, mid, n, j in report["f5_terminal_quality_by_class"]:
            if j > 1.0:
                assert mid >= smallest

    def test_f1_contains_optimum(self, report, quality_run, kernel, market):
        rot = quality_run.schedule.rotation_steps
        (r,) = [row[4] for row in report["f1_return_vs_rotation"] if row[2] == rot]
        assert r == max(row[4] for row in report["f1_return_vs_rotation"])


class TestTrajectory:
    def test_rows_and_constant_trajectory(self, stand_a, market):
        tr = build_trace(stand_a, ManagementSchedule((), 5), make_kernel(), market)
        rows = trajectory_rows(tr, market)
        assert len(rows) == 6
        assert len({row[2] for row in rows}) == 1 and len({row[3] for row in rows}) == 1
        assert rows[-1][5] == "final"

    def test_snapshot_roundtrip(self, quality_run, kernel, market):
        tr = build_trace(quality_run.stand, quality_run.schedule, kernel, market, quality_run.regime)
        back = stands_from_snapshots(snapshots_csv(tr), quality_run.stand)
        rows = trajectory_rows(tr, market)
        assert len(back) == len(rows)
        for row, stand in zip(rows, back):
            assert math.isclose(ba_weighted_mean_diameter(stand), row[2], rel_tol=1e-9)
