import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thinlab.errors import ConfigError
from thinlab.genstands import STEMS_PER_TREE
from thinlab.stand import (
    STEP_MONTHS,
    DiameterClassGrid,
    GrowthModel,
    Stand,
    ba_weighted_mean_diameter,
    basal_area,
    format_stand,
    grow_step,
    parse_stand,
    read_stand,
    write_stand,
)

from conftest import GRID, make_kernel, make_stand


def flat_tree_list(stand):
    """Expand a plot-based stand into individual trees (diameter mm, species)."""
    trees = []
    for sp, mid, c in stand.cohorts():
        count = c.stems / STEMS_PER_TREE
        assert math.isclose(count, round(count), abs_tol=1e-9)
        trees += [(sp, mid)] * int(round(count))
    return trees


class TestGrid:
    def test_defaults(self):
        g = DiameterClassGrid()
        assert g.midpoints[0] == 37.5 and g.midpoints[-1] == 512.5 and len(g.midpoints) == 20

    def test_strictly_increasing(self):
        assert np.all(np.diff(GRID.midpoints) == 25.0)

    @pytest.mark.parametrize("kw", [{"class_width": 0.0}, {"class_count": 1}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            DiameterClassGrid(**kw)

    def test_index_of(self):
        assert GRID.index_of(212.5) == 7
        with pytest.raises(ConfigError):
            GRID.index_of(200.0)


class TestBasalArea:
    def test_empty(self):
        assert basal_area(Stand.empty()) == 0.0

    def test_single_class(self):
        st_ = make_stand({"spruce": {GRID.index_of(187.5): 0.0}})
        assert basal_area(st_) == 0.0
        g = DiameterClassGrid(min_midpoint=200.0)
        one = make_stand({"spruce": {0: 1000.0}}, grid=g)
        assert basal_area(one) == pytest.approx(1000 * math.pi * 0.1**2, rel=1e-12)

    def test_matches_flat_tree_list(self, stand_a):
        trees = flat_tree_list(stand_a)
        brute = sum(math.pi * (d / 2000.0) ** 2 for _, d in trees) * STEMS_PER_TREE
        assert basal_area(stand_a) == pytest.approx(brute, rel=1e-9)

    def test_all_fixtures_match_flat_list(self, fixture_stands):
        for _, s in fixture_stands:
            trees = flat_tree_list(s)
            brute = math.fsum(math.pi * (d / 2000.0) ** 2 for _, d in trees) * STEMS_PER_TREE
            assert basal_area(s) == pytest.approx(brute, rel=1e-9)


class TestMeanDiameter:
    def test_single_class(self):
        g = DiameterClassGrid(min_midpoint=200.0)
        assert ba_weighted_mean_diameter(make_stand({"spruce": {0: 123.0}}, grid=g)) == pytest.approx(200.0)

    def test_symmetry(self):
        g = DiameterClassGrid(class_width=100.0, min_midpoint=100.0, class_count=3)
        # equal basal area: N100 * 100^2 == N300 * 300^2
        s = make_stand({"spruce": {0: 900.0, 2: 100.0}}, grid=g)
        assert ba_weighted_mean_diameter(s) == pytest.approx(200.0, rel=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError, match="no basal area"):
            ba_weighted_mean_diameter(Stand.empty())

    def test_matches_flat_tree_list(self, stand_a):
        trees = flat_tree_list(stand_a)
        w = [d**2 for _, d in trees]
        brute = sum(wi * d for wi, (_, d) in zip(w, trees)) / sum(w)
        assert ba_weighted_mean_diameter(stand_a) == pytest.approx(brute, rel=1e-9)


class TestGrowStep:
    def test_identity_step(self, stand_a):
        out = grow_step(stand_a, make_kernel())
        assert out.age_months == stand_a.age_months + STEP_MONTHS
        for sp in stand_a.species:
            np.testing.assert_array_equal(out.stems[sp], stand_a.stems[sp])
            np.testing.assert_array_equal(out.quality[sp], stand_a.quality[sp])

    def test_half_transfer(self):
        s = make_stand({"spruce": {3: 100.0}})
        out = grow_step(s, make_kernel(increment=(12.5, 0, 0, 0, 0)))
        assert out.stems["spruce"][3] == 50.0 and out.stems["spruce"][4] == 50.0

    def test_mixed_quality_transfer(self):
        s = make_stand({"spruce": {3: 20.0, 4: 10.0}}, {"spruce": {3: 1.2}})
        out = grow_step(s, make_kernel(increment=(12.5, 0, 0, 0, 0)))
        # class 4 gets 10 @ 1.2 from below, keeps 5 @ 1.0
        assert out.quality["spruce"][4] == pytest.approx((10 * 1.2 + 5 * 1.0) / 15, rel=1e-12)
        assert out.quality["spruce"][3] == pytest.approx(1.2, rel=1e-12)

    def test_top_class_absorbing(self):
        s = make_stand({"spruce": {19: 30.0, 18: 10.0}})
        out = grow_step(s, make_kernel(increment=(100, 0, 0, 0, 0)))
        assert out.stems["spruce"][19] == 40.0 and out.stems["spruce"].sum() == 40.0

    def test_ingrowth_enters_smallest_class_at_unit_quality(self):
        s = make_stand({"spruce": {0: 10.0}}, {"spruce": {0: 1.4}})
        out = grow_step(s, make_kernel(ingrowth=(10.0, 0.0)))
        assert out.stems["spruce"][0] == 20.0
        assert out.quality["spruce"][0] == pytest.approx(1.2, rel=1e-12)

    def test_survival_indexed_by_destination(self):
        # certain death below 100 mm only: trees leaving 87.5 for 112.5 survive
        k = make_kernel(increment=(25, 0, 0, 0, 0), mortality=(1000, -10.0, 0))
        s = make_stand({"spruce": {2: 100.0}})
        out = grow_step(s, k)
        assert out.stems["spruce"][3] == 100.0
        assert out.stems["spruce"][2] == 0.0

    def test_coupling_scales_increment(self):
        s = make_stand({"spruce": {3: 100.0}}, {"spruce": {3: 1.2}})
        k = make_kernel(increment=(10.0, 0, 0, 0, 0))
        plain = grow_step(s, k)
        coupled = grow_step(s, k, coupling_on=True)
        half = grow_step(s, k, coupling_on=True, coupling_strength=0.5)
        assert plain.stems["spruce"][4] == pytest.approx(40.0)
        assert coupled.stems["spruce"][4] == pytest.approx(48.0)
        assert half.stems["spruce"][4] == pytest.approx(44.0)

    def test_coupling_strength_bounds(self, stand_a, kernel):
        with pytest.raises(ConfigError):
            grow_step(stand_a, kernel, coupling_on=True, coupling_strength=1.5)

    def test_missing_species(self):
        s = make_stand({"larch": {3: 10.0}})
        with pytest.raises(ConfigError, match="larch"):
            grow_step(s, make_kernel())

    def test_batch_rows_match_single(self, stand_a, kernel):
        order = stand_a.species
        model = GrowthModel(kernel, order, GRID, stand_a.site_index, 1.0)
        n, j = stand_a.as_arrays(order)
        rng = np.random.default_rng(3)
        nb = n[None] * rng.random((5,) + n.shape)
        jb = 1 + 0.5 * rng.random((5,) + n.shape)
        bn, bj = model.grow(nb, jb)
        for b in range(5):
            sn, sj = model.grow(nb[b], jb[b])
            np.testing.assert_array_equal(bn[b], sn)
            np.testing.assert_array_equal(bj[b], sj)


stems_arrays = arrays(np.float64, 20, elements=st.floats(0.0, 500.0))
quality_arrays = arrays(np.float64, 20, elements=st.floats(1.0, 1.5))


class TestProperties:
    @given(stems_arrays, quality_arrays, st.floats(0.0, 40.0), st.floats(-2e-4, 0.0))
    def test_stem_conservation(self, n, j, c0, c2):
        s = make_stand({"spruce": n}, {"spruce": j})
        out = grow_step(s, make_kernel(increment=(c0, 0.05, c2, 0, 0)))
        assert math.isclose(out.total_stems(), s.total_stems(), rel_tol=1e-12, abs_tol=1e-12)

    @given(stems_arrays, quality_arrays)
    def test_quality_bounds_over_steps(self, n, j):
        s = make_stand({"spruce": n}, {"spruce": j})
        k = make_kernel(increment=(8, 0.02, 0, -0.1, 0), mortality=(-3, 0, 0.01), ingrowth=(20, 0.3))
        for _ in range(6):
            s = grow_step(s, k, coupling_on=True)
            q = s.quality["spruce"]
            assert np.all(q >= 1.0) and np.all(q <= 1.5 + 1e-12)
            assert np.all(s.stems["spruce"] >= 0.0)

    @given(stems_arrays)
    def test_age_strictly_increases(self, n):
        s = make_stand({"birch": n}, age_months=361)
        assert grow_step(s, make_kernel()).age_months == 391


class TestCsv:
    def test_roundtrip(self, stand_a, tmp_path):
        p = tmp_path / "s.csv"
        write_stand(stand_a, p)
        back = read_stand(p)
        assert back.age_months == stand_a.age_months and back.site_index == stand_a.site_index
        for sp in stand_a.species:
            np.testing.assert_array_equal(back.stems[sp], stand_a.stems[sp])
        assert format_stand(back) == format_stand(stand_a)

    @pytest.mark.parametrize("text, msg", [
        ("species,diameter_class_midpoint_mm,stems_per_ha,quality\nspruce,62.5,1,1\n", "missing '# age_months"),
        ("# age_months=400, site_index=20\nspruce,62.5,1,1\n", "header"),
        ("# age_months=400, site_index=20\nspecies,diameter_class_midpoint_mm,stems_per_ha,quality\n"
         "spruce,62.5,-1,1\n", "stems_per_ha"),
        ("# age_months=400, site_index=20\nspecies,diameter_class_midpoint_mm,stems_per_ha,quality\n"
         "spruce,60,1,1\n", "diameter_class_midpoint_mm"),
        ("# age_months=400, site_index=20\nspecies,diameter_class_midpoint_mm,stems_per_ha,quality\n"
         "spruce,62.5,1,0.5\n", "quality"),
        ("# age_months=400, site_index=20\nspecies,diameter_class_midpoint_mm,stems_per_ha,quality\n"
         "spruce,62.5,abc,1\n", "non-numeric"),
    ])
    def test_field_errors(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_stand(text)
