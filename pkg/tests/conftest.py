import numpy as np
import pytest
from hypothesis import settings

from thinlab.genstands import fixture_paths
from thinlab.kernel import GrowthKernel, SpeciesGrowth, default_kernel
from thinlab.stand import DiameterClassGrid, Stand, read_stand
from thinlab.valuation import MarketModel, SpeciesMarket, default_market

settings.register_profile("thinlab", deadline=None, max_examples=60)
settings.load_profile("thinlab")

GRID = DiameterClassGrid()
NEVER_DIES = (-1000.0, 0.0, 0.0)


def make_kernel(increment=(0.0, 0.0, 0.0, 0.0, 0.0), mortality=NEVER_DIES, ingrowth=(0.0, 0.0),
                species=("spruce", "birch", "pine")) -> GrowthKernel:
    sg = SpeciesGrowth(tuple(map(float, increment)), tuple(map(float, mortality)), tuple(map(float, ingrowth)))
    return GrowthKernel({sp: sg for sp in species})


def make_stand(stems: dict, quality: dict | None = None, age_months=420, site_index=20.0,
               grid=GRID) -> Stand:
    """Stand from {species: {class_index: stems}} (or full arrays)."""
    def full(v, fill):
        if isinstance(v, dict):
            a = np.full(grid.class_count, fill)
            for i, x in v.items():
                a[i] = x
            return a
        return np.asarray(v, dtype=float)

    n = {sp: full(v, 0.0) for sp, v in stems.items()}
    q = {sp: full((quality or {}).get(sp, {}), 1.0) for sp in stems}
    return Stand(stems=n, quality=q, age_months=age_months, site_index=site_index, grid=grid)


def flat_market(**changes) -> MarketModel:
    """One species-neutral market: easy hand computations."""
    sp = SpeciesMarket(volume_a=1e-4, volume_b=2.5, pulp_min_mm=70.0, sawlog_threshold_mm=200.0,
                       sawlog_ramp_mm=50.0, sawlog_share_max=0.8, price_pulp=30.0, price_saw=60.0)
    base = dict(species={"spruce": sp, "birch": sp, "pine": sp}, clearcut_premium=5.0, harvest_time_thinning=2.0,
                harvest_time_clearcut=1.5, machine_rate=2.0, regeneration_expense=1500.0, bare_land_value=0.0)
    base.update(changes)
    return MarketModel(**base)


@pytest.fixture(scope="session")
def kernel():
    return default_kernel()


@pytest.fixture(scope="session")
def market():
    return default_market()


@pytest.fixture(scope="session")
def fixture_stands():
    return [(p.name[:-4], read_stand(p)) for p in fixture_paths()]


@pytest.fixture(scope="session")
def stand_a(fixture_stands):
    return fixture_stands[0][1]


def tiny_instance(seed: int):
    """Random optimizer instance small enough for brute force (at most 200 candidates)."""
    from thinlab.optimizer import SearchConfig
    from thinlab.thinning import Regime

    rng = np.random.default_rng(seed)
    species = tuple(rng.choice(["spruce", "pine", "birch"], size=int(rng.integers(1, 3)), replace=False))
    stems = {}
    for k, sp in enumerate(species):
        stems[sp] = {int(rng.integers(4, 12)): float(rng.uniform(80, 600))}
        if k == 0 and rng.random() < 0.5:
            stems[sp][int(rng.integers(0, 2))] = float(rng.uniform(200, 1500))
    stand = make_stand(stems, age_months=int(rng.integers(300, 600)), site_index=float(rng.uniform(16, 26)))
    kern = make_kernel(increment=(25.0, 0, 0, 0, 0), mortality=(float(rng.uniform(-6, -3)), 0.0, 0.01),
                       species=species)
    horizon = int(rng.integers(4, 9))
    steps = tuple(sorted(rng.choice(horizon - 1, size=int(rng.integers(1, 3)), replace=False).tolist()))
    mode = Regime(str(rng.choice([m.value for m in Regime])))
    search = SearchConfig(mode=mode, max_thinnings=1, thinning_steps=steps, retention_step=0.5,
                          min_rotation_steps=horizon - 1, max_rotation_steps=horizon)
    return stand, kern, search


# one summary line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
