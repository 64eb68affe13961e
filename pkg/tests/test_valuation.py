import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from thinlab.errors import ConfigError
from thinlab.genstands import STEMS_PER_TREE
from thinlab.valuation import (
    SpeciesMarket,
    assortment_volumes,
    half_max_width,
    harvest_time_per_m3,
    load_market,
    local_maxima,
    market_from_dict,
    pulp_only,
    relative_value_increment_profile,
    sawlog_share,
    stand_capitalization,
    stand_volume,
    transition_peak,
    tree_roadside_value,
    tree_stumpage_value,
)

from conftest import GRID, flat_market, make_kernel, make_stand


def example_market(**changes):
    """One 300 mm spruce trunk holding 0.2 m^3 pulpwood and 0.3 m^3 sawlogs."""
    sp = SpeciesMarket(volume_a=0.5 / 30**2.5, volume_b=2.5, pulp_min_mm=70.0, sawlog_threshold_mm=250.0,
                       sawlog_ramp_mm=50.0, sawlog_share_max=0.6, price_pulp=17.0, price_saw=58.0)
    return flat_market(species={"spruce": sp}, **changes)


class TestAssortments:
    def test_example_split(self):
        v_pulp, v_saw = assortment_volumes(example_market(), "spruce", 300.0)
        assert v_pulp == pytest.approx(0.2, rel=1e-12) and v_saw == pytest.approx(0.3, rel=1e-12)

    def test_ramp_midpoint(self):
        m = flat_market()
        assert sawlog_share(m, "spruce", 200.0) == pytest.approx(0.4, rel=1e-12)
        assert sawlog_share(m, "spruce", 175.0) == 0.0 and sawlog_share(m, "spruce", 225.0) == 0.8

    def test_sub_commercial(self):
        assert assortment_volumes(flat_market(), "spruce", 62.5) == (0.0, 0.0)

    def test_spruce_ramp_steeper_than_birch(self, market):
        slope = {sp: market.get(sp).sawlog_share_max / market.get(sp).sawlog_ramp_mm for sp in ("spruce", "birch")}
        assert slope["spruce"] > slope["birch"]


class TestHarvestTime:
    def test_unit(self):
        assert harvest_time_per_m3(flat_market(harvest_time_thinning=1.0), 1.0) == 1.0

    def test_tenth(self):
        assert harvest_time_per_m3(flat_market(harvest_time_thinning=1.0), 0.1) == pytest.approx(10 ** (2 / 3),
                                                                                                 rel=1e-12)

    @given(st.floats(1e-4, 10.0))
    def test_doubling(self, v):
        m = flat_market()
        ratio = harvest_time_per_m3(m, 2 * v) / harvest_time_per_m3(m, v)
        assert ratio == pytest.approx(2 ** (-2 / 3), rel=1e-12)

    def test_clearcut_constant(self):
        m = flat_market(harvest_time_thinning=2.0, harvest_time_clearcut=1.5)
        assert harvest_time_per_m3(m, 1.0, clearcut=True) == 1.5

    @pytest.mark.parametrize("v", [0.0, -1.0])
    def test_non_commercial(self, v):
        with pytest.raises(ValueError, match="non-commercial trunk"):
            harvest_time_per_m3(flat_market(), v)


class TestRoadsideValue:
    def test_example(self):
        assert tree_roadside_value(example_market(), "spruce", 300.0, 1.2) == pytest.approx(24.28, rel=1e-12)

    def test_premium_only_at_clearcut(self):
        m = example_market(clearcut_premium=4.0)
        assert tree_roadside_value(m, "spruce", 300.0, 1.2, clearcut=True) == pytest.approx(
            24.28 + 0.3 * 1.2 * 4.0, rel=1e-12)
        assert tree_roadside_value(m, "spruce", 300.0, 1.2) == pytest.approx(24.28, rel=1e-12)

    def test_pulpwood_tree_ignores_quality(self):
        m = flat_market()
        assert tree_roadside_value(m, "spruce", 150.0, 1.0) == tree_roadside_value(m, "spruce", 150.0, 1.5)

    @given(st.floats(70.0, 600.0), st.floats(1.0, 1.5), st.booleans())
    def test_quality_derivative(self, d, j, cc):
        m = flat_market()
        _, v_saw = assortment_volumes(m, "spruce", d)
        slope = v_saw * (60.0 + (5.0 if cc else 0.0))
        base = tree_roadside_value(m, "spruce", d, 1.0, cc)
        assert tree_roadside_value(m, "spruce", d, j, cc) == pytest.approx(base + (j - 1) * slope, rel=1e-12)

    def test_monotone_in_diameter(self, market):
        for sp in market.species:
            values = [tree_roadside_value(market, sp, d) for d in np.arange(10.0, 700.0, 0.5)]
            assert all(b >= a for a, b in zip(values, values[1:]))


class TestStumpage:
    def test_sub_commercial_zero(self, market):
        assert tree_stumpage_value(market, "spruce", 50.0) == 0.0

    def test_below_roadside(self, market):
        for sp in market.species:
            for d in GRID.midpoints:
                if assortment_volumes(market, sp, d)[0] > 0:
                    assert tree_stumpage_value(market, sp, d) < tree_roadside_value(market, sp, d)

    def test_small_trees_negative(self, market):
        assert tree_stumpage_value(market, "spruce", 87.5) < 0

    def test_cost_mechanism(self, market):
        """Relative stumpage gain between small pulpwood classes beats the roadside gain."""
        d0, d1 = next((a, b) for a, b in zip(GRID.midpoints, GRID.midpoints[1:])
                      if tree_stumpage_value(market, "spruce", a) > 0)
        assert sawlog_share(market, "spruce", d1) == 0.0
        rel = {f: f(market, "spruce", d1) / f(market, "spruce", d0) for f in (tree_stumpage_value, tree_roadside_value)}
        assert rel[tree_stumpage_value] > rel[tree_roadside_value]


class TestCapitalization:
    def test_empty(self):
        s = make_stand({"spruce": {}})
        assert stand_capitalization(flat_market(), s) == 0.0
        assert stand_capitalization(flat_market(bare_land_value=500.0), s) == 500.0

    def test_flat_list(self, market, stand_a):
        brute = 0.0
        for sp, mid, c in stand_a.cohorts():
            trees = int(round(c.stems / STEMS_PER_TREE))
            for _ in range(trees):
                brute += max(tree_stumpage_value(market, sp, mid, c.quality), 0.0) * STEMS_PER_TREE
        assert stand_capitalization(market, stand_a) == pytest.approx(brute, rel=1e-9)

    @given(st.floats(0.0, 10.0))
    def test_linear_in_stems(self, factor):
        m = flat_market(bare_land_value=250.0)
        n = {"spruce": {4: 300.0, 9: 120.0}, "birch": {6: 80.0}}
        s1 = make_stand(n, {"spruce": {9: 1.3}})
        s2 = make_stand({sp: {i: v * factor for i, v in d.items()} for sp, d in n.items()}, {"spruce": {9: 1.3}})
        k1, k2 = stand_capitalization(m, s1) - 250.0, stand_capitalization(m, s2) - 250.0
        assert k2 == pytest.approx(factor * k1, rel=1e-12, abs=1e-9)

    def test_volume(self, market):
        s = make_stand({"spruce": {GRID.index_of(212.5): 100.0}})
        assert stand_volume(market, s) == pytest.approx(100 * sum(assortment_volumes(market, "spruce", 212.5)),
                                                        rel=1e-12)


class TestProfile:
    def test_no_growth_zero(self, market, stand_a):
        prof = relative_value_increment_profile(market, stand_a, make_kernel())
        assert prof and all(r == 0.0 for rows in prof.values() for _, r in rows)

    def test_two_peaks_spruce(self, market, kernel, fixture_stands):
        for _, s in fixture_stands:
            rows = relative_value_increment_profile(market, s, kernel)["spruce"]
            peaks = local_maxima(rows)
            assert len(peaks) == 2
            assert peaks[0] == rows[0][0]
            assert abs(peaks[1] - market.get("spruce").sawlog_threshold_mm) <= 2 * GRID.class_width

    def test_clearcut_exceeds_for_sawlog_classes(self, market, kernel, stand_a):
        plain = dict(relative_value_increment_profile(market, stand_a, kernel)["spruce"])
        cc = dict(relative_value_increment_profile(market, stand_a, kernel, clearcut=True)["spruce"])
        sawlog = [d for d in plain if sawlog_share(market, "spruce", d) > 0]
        assert sawlog and all(cc[d] > plain[d] for d in sawlog)

    def test_rejects_bad_dt(self, market, kernel, stand_a):
        with pytest.raises(ValueError):
            relative_value_increment_profile(market, stand_a, kernel, dt=0.0)

    def test_spruce_transition_sharper_than_birch(self, market, kernel, stand_a):
        _, w_spruce = transition_peak(market, stand_a, kernel, "spruce")
        _, w_birch = transition_peak(market, stand_a, kernel, "birch")
        assert w_spruce < w_birch

    def test_pulp_only_has_no_sawlog_premium(self, market):
        p = pulp_only(market)
        assert all(v.price_saw == v.price_pulp for v in p.species.values()) and p.clearcut_premium == 0.0


class TestPeakHelpers:
    def test_local_maxima(self):
        rows = list(zip([1.0, 2.0, 3.0, 4.0, 5.0], [3.0, 1.0, 2.0, 2.0, 0.0]))
        assert local_maxima(rows) == [1.0]

    def test_half_max_width_triangle(self):
        x = np.array([0.0, 1.0, 2.0, 1.0, 0.0])
        assert half_max_width(x, 2) == pytest.approx(2.0)

    def test_half_max_width_truncated(self):
        x = np.array([2.0, 2.0, 0.0])
        assert half_max_width(x, 0) == pytest.approx(1.5)


class TestConfig:
    def test_roundtrip(self, market, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps(market.to_dict()))
        assert load_market(p) == market

    @pytest.mark.parametrize("mutate, msg", [
        (lambda d: d["species"]["spruce"].pop("price_saw"), "species.spruce.price_saw"),
        (lambda d: d["species"]["birch"].__setitem__("volume_b", "x"), "species.birch.volume_b"),
        (lambda d: d["species"]["pine"].__setitem__("sawlog_share_max", 1.5), "species.pine"),
        (lambda d: d.__setitem__("machine_rate", -1.0), "machine_rate"),
        (lambda d: d.__setitem__("species", {}), "species"),
    ])
    def test_errors(self, market, mutate, msg):
        d = json.loads(json.dumps(market.to_dict()))
        mutate(d)
        with pytest.raises(ConfigError, match=msg):
            market_from_dict(d)

    def test_scaled(self, market):
        m2 = market.scaled(3.0)
        assert math.isclose(tree_stumpage_value(m2, "spruce", 262.5, 1.2),
                            3.0 * tree_stumpage_value(market, "spruce", 262.5, 1.2), rel_tol=1e-12)
