"""Search for thinning schedules and rotation ages that maximize the expected return rate.

One simulation to the longest admissible rotation yields the return rate
of every rotation at once, so rotation age costs nothing extra.  The search
then runs in two phases:

(a) every placement of up to ``max_thinnings`` thinning steps is scored
    with a small family of thinning-from-above seeds;
(b) per-class retentions are improved by coordinate descent on the most
    promising placements.  A placement whose option grid is small enough
    is enumerated outright instead.

Quality regimes start from the quality-free optimum and add quality
selection as extra options on the first thinning, so their optimum can
never fall below the quality-free one.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .economics import (
    Simulation,
    ThinningBatch,
    build_trace,
    expected_return_rate,
    return_rate_from_terms,
    simulate_batch,
)
from .errors import ConfigError, EconomicsError
from .kernel import GrowthKernel
from .quality import DEFAULT_HALF_WIDTH, DEFAULT_STRIP_ROAD_SURVIVAL
from .stand import Stand
from .thinning import ManagementSchedule, Regime, ThinningRule
from .valuation import MarketModel

SCREEN_RTOL = 1e-9
LOG_HEADER = ("schedule_hash", "rotation_steps", "r_expected")


@dataclass(frozen=True)
class SearchConfig:
    mode: Regime = Regime.NONE
    max_thinnings: int = 2
    thinning_steps: tuple[int, ...] | None = None  # None: every step before the longest rotation
    retention_step: float = 0.1
    min_rotation_steps: int = 1
    max_rotation_steps: int = 24
    tol: float = 1e-9
    max_sweeps: int = 8
    exhaustive_limit: int = 4096
    refine_top: int = 6
    quality_refine_top: int = 3
    min_stems: float = 1.0  # classes thinner than this (stems/ha, unthinned path) are not searched
    strip_road_survival: float = DEFAULT_STRIP_ROAD_SURVIVAL
    b: float = DEFAULT_HALF_WIDTH
    coupling_strength: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", Regime.parse(self.mode))
        if self.thinning_steps is not None:
            object.__setattr__(self, "thinning_steps", tuple(int(s) for s in self.thinning_steps))

    def validate(self) -> None:
        if not 0.0 < self.retention_step <= 0.5:
            raise ConfigError("retention_step must lie in (0, 0.5]")
        if self.min_rotation_steps < 1 or self.max_rotation_steps < self.min_rotation_steps:
            raise ConfigError("rotation range is empty")
        if self.max_thinnings < 0:
            raise ConfigError("max_thinnings must be non-negative")
        if self.thinning_steps is not None and any(s < 0 for s in self.thinning_steps):
            raise ConfigError("thinning steps must be non-negative")
        if not 0.0 < self.strip_road_survival <= 1.0:
            raise ConfigError("strip_road_survival must lie in (0, 1]")
        if not 0.0 < self.b < 1.0:
            raise ConfigError("b must lie in (0, 1)")
        if self.exhaustive_limit < 1 or self.refine_top < 1 or self.quality_refine_top < 0:
            raise ConfigError("search limits must be positive")

    def retention_levels(self) -> tuple[float, ...]:
        count = int(round(1.0 / self.retention_step))
        levels = {round(min(1.0, i * self.retention_step), 12) for i in range(count + 1)}
        levels.add(1.0)
        return tuple(sorted(levels))

    def candidate_steps(self) -> tuple[int, ...]:
        steps = self.thinning_steps
        if steps is None:
            steps = range(self.max_rotation_steps - 1)
        return tuple(sorted({s for s in steps if s < self.max_rotation_steps}))

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["mode"] = self.mode.value
        out["thinning_steps"] = list(self.thinning_steps) if self.thinning_steps is not None else None
        return out


# an option is (retention, quality flag)
Option = tuple[float, bool]


@dataclass(frozen=True)
class Coordinate:
    thinning: int  # index within the placement
    species: int
    cls: int


@dataclass(frozen=True)
class LogEntry:
    schedule_hash: str
    rotation_steps: int
    r_expected: float


@dataclass
class OptimResult:
    best_schedule: ManagementSchedule
    best_r: float
    regime: Regime
    log: list[LogEntry]
    species: tuple[str, ...]
    evaluations: int = 0
    wall_time: float = 0.0
    placements: dict = field(default_factory=dict)  # placement -> (r, schedule) best found there

    def log_csv(self) -> str:
        lines = [",".join(LOG_HEADER)]
        lines += [f"{e.schedule_hash},{e.rotation_steps},{e.r_expected!r}" for e in self.log]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        """Structured result; wall time is left out so the file is reproducible."""
        return {
            "regime": self.regime.value,
            "best_r": self.best_r,
            "rotation_steps": self.best_schedule.rotation_steps,
            "schedule_hash": schedule_hash(self.best_schedule),
            "schedule": self.best_schedule.to_dict(),
            "evaluations": self.evaluations,
            "log_entries": len(self.log),
        }


def schedule_key(schedule: ManagementSchedule) -> str:
    return json.dumps(schedule.to_dict(), sort_keys=True, separators=(",", ":"))


def schedule_hash(schedule: ManagementSchedule) -> str:
    return hashlib.sha256(schedule_key(schedule).encode()).hexdigest()[:16]


def rank_key(r: float, schedule: ManagementSchedule):
    """Sort key: higher rate, then shorter rotation, fewer thinnings, lexicographic schedule."""
    return (-r, schedule.rotation_steps, len(schedule.thinnings), schedule_key(schedule))


# ---------------------------------------------------------------------------
# search context


class _Context:
    def __init__(self, stand0: Stand, kernel: GrowthKernel, market: MarketModel, search: SearchConfig):
        search.validate()
        self.stand0 = stand0
        self.kernel = kernel
        self.market = market
        self.search = search
        self.order = stand0.species
        self.grid = stand0.grid
        self.shape = (len(self.order), self.grid.class_count)
        self.horizon = search.max_rotation_steps
        self.levels = search.retention_levels()
        self.plain_options: tuple[Option, ...] = tuple((s, False) for s in self.levels)
        a = search.strip_road_survival
        self.quality_options: tuple[Option, ...] = self.plain_options + tuple(
            (s, True) for s in self.levels if 0.0 < s <= a and s < 1.0
        )
        # occupancy of commercial classes along the unthinned path
        base = simulate_batch(stand0, [], kernel, market, Regime.NONE, self.horizon, keep_states=True)
        volume = market.value_table(self.order, self.grid, False).volume
        self.occupied = [(n >= search.min_stems) & (volume > 0.0) for n, _ in base.states]
        self.evaluations = 0

    def coordinates(self, placement: tuple[int, ...]) -> list[Coordinate]:
        out = []
        for t, step in enumerate(placement):
            occ = self.occupied[step]
            for k in range(self.shape[0]):
                for i in np.flatnonzero(occ[k]):
                    out.append(Coordinate(t, k, int(i)))
        return out

    def options(self, coord: Coordinate, quality: bool) -> tuple[Option, ...]:
        if quality and coord.thinning == 0:
            return self.quality_options
        return self.plain_options

    def rotations(self, placement: tuple[int, ...]) -> range:
        lo = max(self.search.min_rotation_steps, (placement[-1] + 1) if placement else 1)
        return range(lo, self.horizon + 1)

    def schedule(self, placement, coords, config, rotation) -> ManagementSchedule:
        s, q = _config_arrays(self.shape, len(placement), coords, [config])
        rules = []
        for t, step in enumerate(placement):
            if np.all(s[0, t] == 1.0):
                continue
            retention = {sp: s[0, t, k].copy() for k, sp in enumerate(self.order)}
            quality = {sp: q[0, t, k].copy() for k, sp in enumerate(self.order) if q[0, t, k].any()}
            rules.append(ThinningRule(step, retention, quality, self.search.strip_road_survival, self.search.b))
        return ManagementSchedule(tuple(rules), rotation)

    def evaluate(self, placement, coords, configs, mode) -> list[tuple[float, int]]:
        """Best (rate, rotation) for each configuration; ``-inf`` when no rotation is admissible."""
        rots = self.rotations(placement)
        if len(rots) == 0:
            return [(-math.inf, 0)] * len(configs)
        s, q = _config_arrays(self.shape, len(placement), coords, configs)
        batches = [
            ThinningBatch(step, s[:, t], q[:, t], self.search.strip_road_survival, self.search.b)
            for t, step in enumerate(placement)
        ]
        sim = simulate_batch(self.stand0, batches, self.kernel, self.market, mode, self.horizon,
                             self.search.coupling_strength)
        self.evaluations += len(configs)
        return best_rotations(sim, rots)


def _config_arrays(shape, n_thin, coords, configs):
    batch = len(configs)
    s = np.ones((batch, max(n_thin, 1)) + shape)
    q = np.zeros((batch, max(n_thin, 1)) + shape, dtype=bool)
    for b, config in enumerate(configs):
        for c, (ret, flag) in zip(coords, config):
            s[b, c.thinning, c.species, c.cls] = ret
            q[b, c.thinning, c.species, c.cls] = flag
    return s, q


def best_rotations(sim: Simulation, rotations: range) -> list[tuple[float, int]]:
    """Exact best return rate and rotation for every row of ``sim``.

    Rates are screened with cumulative sums, then recomputed exactly for
    the rotations within screening tolerance of the row maximum.
    """
    curve = sim.rate_curve(rotations.start)[:, : len(rotations)]
    out = []
    for row in range(curve.shape[0]):
        top = curve[row].max()
        if not math.isfinite(top):
            out.append((-math.inf, 0))
            continue
        near = np.flatnonzero(curve[row] >= top - SCREEN_RTOL * abs(top) - 1e-300)
        best = (-math.inf, 0)
        for idx in near:
            rot = rotations.start + int(idx)
            try:
                r = return_rate_from_terms(*sim.step_terms(rot, row))
            except EconomicsError:
                continue
            if r > best[0]:
                best = (r, rot)
        out.append(best)
    return out


# ---------------------------------------------------------------------------
# phase (b) per placement


@dataclass
class _PlacementSearch:
    ctx: _Context
    placement: tuple[int, ...]
    mode: Regime
    quality: bool
    coords: list[Coordinate] = field(default_factory=list)
    seen: dict = field(default_factory=dict)  # config -> (r, rotation)
    order: list = field(default_factory=list)  # configs in evaluation order

    def __post_init__(self):
        self.coords = self.ctx.coordinates(self.placement)

    def run(self, configs) -> list[tuple[float, int]]:
        fresh = [c for c in dict.fromkeys(configs) if c not in self.seen]
        if fresh:
            for c, res in zip(fresh, self.ctx.evaluate(self.placement, self.coords, fresh, self.mode)):
                self.seen[c] = res
                self.order.append(c)
        return [self.seen[c] for c in configs]

    def key(self, config):
        r, rot = self.seen[config]
        if rot == 0:
            return (math.inf,)
        return rank_key(r, self.ctx.schedule(self.placement, self.coords, config, rot))

    def option_count(self) -> int:
        return math.prod(len(self.ctx.options(c, self.quality)) for c in self.coords)

    def enumerate_all(self, chunk: int = 512):
        opts = [self.ctx.options(c, self.quality) for c in self.coords]
        it = itertools.product(*opts)
        while True:
            block = list(itertools.islice(it, chunk))
            if not block:
                break
            self.run(block)

    def seeds(self) -> list[tuple]:
        """Thinning from above: keep every class below a cut class, thin the classes above it."""
        one = (1.0, False)
        out = [tuple(one for _ in self.coords)]
        classes = sorted({c.cls for c in self.coords})
        for cut in classes:
            for keep in (0.0, 0.5):
                if keep not in self.ctx.levels:
                    continue
                out.append(tuple((keep, False) if c.cls >= cut else one for c in self.coords))
        return out

    def descend(self, start) -> tuple:
        current = start
        self.run([current])
        for _ in range(self.ctx.search.max_sweeps):
            before = self.seen[current][0]
            for i, c in enumerate(self.coords):
                trial = [current[:i] + (o,) + current[i + 1:] for o in self.ctx.options(c, self.quality)]
                self.run(trial)
                current = min(trial + [current], key=self.key)
            if self.seen[current][0] - before <= self.ctx.search.tol:
                break
        return current

    def best(self):
        config = min(self.order, key=self.key)
        r, rot = self.seen[config]
        return r, config, rot

    def log_entries(self) -> list[LogEntry]:
        out = []
        for c in self.order:
            r, rot = self.seen[c]
            if rot == 0:
                continue
            sched = self.ctx.schedule(self.placement, self.coords, c, rot)
            out.append(LogEntry(schedule_hash(sched), rot, r))
        return out


def placements(search: SearchConfig) -> list[tuple[int, ...]]:
    steps = search.candidate_steps()
    out: list[tuple[int, ...]] = [()]
    for m in range(1, search.max_thinnings + 1):
        out.extend(itertools.combinations(steps, m))
    return out


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("THINLAB_THREADS", "1")))
    except ValueError:
        raise ConfigError("THINLAB_THREADS must be an integer") from None


def _map(fn, items):
    n = _workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _plain_phase(ctx: _Context, mode: Regime) -> list[_PlacementSearch]:
    """Phases (a) and (b) without quality selection; returns one search per placement."""
    searches = [_PlacementSearch(ctx, p, mode, quality=False) for p in placements(ctx.search)]
    small = [s for s in searches if s.option_count() <= ctx.search.exhaustive_limit]
    large = [s for s in searches if s.option_count() > ctx.search.exhaustive_limit]
    _map(lambda s: s.enumerate_all(), small)
    _map(lambda s: s.run(s.seeds()), large)
    ranked = sorted(large, key=lambda s: s.key(s.best()[1]))
    _map(lambda s: s.descend(s.best()[1]), ranked[: ctx.search.refine_top])
    return searches


def optimize(stand0: Stand, kernel: GrowthKernel, market: MarketModel, search: SearchConfig) -> OptimResult:
    """Best schedule for ``search.mode``; deterministic, including the order of the log."""
    return _Optimizer(stand0, kernel, market, search).result(search.mode)


class _Optimizer:
    """Holds the quality-free search so several regimes can share it.

    Without quality flags every cohort keeps ``j = 1``, so all regimes
    evaluate such schedules bit-identically and the plain phase runs once.
    """

    def __init__(self, stand0, kernel, market, search: SearchConfig):
        self.t0 = time.perf_counter()
        self.ctx = _Context(stand0, kernel, market, search)
        self.plain = _plain_phase(self.ctx, Regime.NONE)
        self.plain_evaluations = self.ctx.evaluations
        self.plain_time = time.perf_counter() - self.t0

    def result(self, mode: Regime | str) -> OptimResult:
        mode = Regime.parse(mode)
        ctx, search = self.ctx, self.ctx.search
        t0 = time.perf_counter()
        before = ctx.evaluations
        searches = list(self.plain)
        if mode.quality_thinning and search.quality_refine_top > 0:
            ranked = sorted((s for s in self.plain if s.placement and s.order), key=lambda s: s.key(s.best()[1]))
            refined = []
            for plain in ranked[: search.quality_refine_top]:
                qs = _PlacementSearch(ctx, plain.placement, mode, quality=True)
                qs.seen.update(plain.seen)
                refined.append((qs, plain))
            if all(q.option_count() <= search.exhaustive_limit for q, _ in refined):
                _map(lambda x: x[0].enumerate_all(), refined)
            else:
                _map(lambda x: x[0].descend(x[1].best()[1]), refined)
            for qs, plain in refined:
                shared = set(plain.order)
                qs.order = [c for c in qs.order if c not in shared]
            searches += [q for q, _ in refined]

        log: list[LogEntry] = []
        best = None
        found = {}
        for s in searches:
            log.extend(s.log_entries())
            if not s.order:
                continue
            r, config, rot = s.best()
            if rot == 0:
                continue
            sched = ctx.schedule(s.placement, s.coords, config, rot)
            key = rank_key(r, sched)
            if s.placement not in found or key < rank_key(*found[s.placement]):
                found[s.placement] = (r, sched)
            if best is None or key < rank_key(*best):
                best = (r, sched)
        if best is None:
            raise ConfigError("no admissible schedule in the search space")
        evaluations = self.plain_evaluations + ctx.evaluations - before
        wall = self.plain_time + time.perf_counter() - t0
        return OptimResult(best[1], best[0], mode, log, ctx.order, evaluations, wall, found)


# ---------------------------------------------------------------------------
# brute force


def exhaustive(stand0: Stand, kernel: GrowthKernel, market: MarketModel, search: SearchConfig,
               limit: int = 100_000) -> OptimResult:
    """Enumerate every candidate of the search space through :func:`build_trace`.

    This is the slow, independent oracle for :func:`optimize`; it refuses
    spaces larger than ``limit`` candidates.
    """
    t0 = time.perf_counter()
    ctx = _Context(stand0, kernel, market, search)
    quality = search.mode.quality_thinning
    jobs = []
    total = 0
    for p in placements(search):
        coords = ctx.coordinates(p)
        opts = [ctx.options(c, quality) for c in coords]
        rots = ctx.rotations(p)
        total += math.prod(len(o) for o in opts) * len(rots)
        jobs.append((p, coords, opts, rots))
    if total > limit:
        raise ConfigError(f"search space of {total} candidates exceeds the exhaustive limit {limit}")
    log, best, count = [], None, 0
    for p, coords, opts, rots in jobs:
        for config in itertools.product(*opts):
            for rot in rots:
                sched = ctx.schedule(p, coords, config, rot)
                trace = build_trace(stand0, sched, kernel, market, search.mode, search.coupling_strength)
                count += 1
                try:
                    r = expected_return_rate(trace)
                except EconomicsError:
                    continue
                log.append(LogEntry(schedule_hash(sched), rot, r))
                if best is None or rank_key(r, sched) < rank_key(*best):
                    best = (r, sched)
    if best is None:
        raise ConfigError("no admissible schedule in the search space")
    return OptimResult(best[1], best[0], search.mode, log, ctx.order, count, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# regime comparison


@dataclass
class RegimeComparison:
    results: dict[Regime, OptimResult]

    def delta(self, mode: Regime | str) -> float:
        return self.results[Regime.parse(mode)].best_r - self.results[Regime.NONE].best_r

    def relative_delta(self, mode: Regime | str) -> float:
        base = self.results[Regime.NONE].best_r
        return self.delta(mode) / base if base else math.inf

    def first_differing_digit(self, mode: Regime | str) -> int | None:
        return first_differing_digit(self.results[Regime.NONE].best_r, self.results[Regime.parse(mode)].best_r)

    def to_dict(self) -> dict:
        out = {"regimes": {m.value: r.to_dict() for m, r in self.results.items()}}
        out["deltas"] = {
            m.value: {"delta_r": self.delta(m), "relative": self.relative_delta(m),
                      "first_differing_significant_digit": self.first_differing_digit(m)}
            for m in self.results if m is not Regime.NONE
        }
        return out


def first_differing_digit(x: float, y: float) -> int | None:
    """Position (1 = leading) of the first significant digit where ``x`` and ``y`` differ."""
    if x == y:
        return None
    ref = max(abs(x), abs(y))
    lead = math.floor(math.log10(ref))
    diff = abs(x - y)
    # digits agree up to the order of magnitude of the difference, up to carries
    pos = lead - math.floor(math.log10(diff)) + 1
    for p in range(1, pos + 1):
        scale = 10.0 ** (lead - p + 1)
        if math.floor(abs(x) / scale) != math.floor(abs(y) / scale) or (x < 0) != (y < 0):
            return p
    return pos


def compare_regimes(stand0: Stand, kernel: GrowthKernel, market: MarketModel, search: SearchConfig,
                    modes: Sequence[Regime | str] = tuple(Regime)) -> RegimeComparison:
    shared = _Optimizer(stand0, kernel, market, search)
    results = {}
    for m in modes:
        m = Regime.parse(m)
        results[m] = shared.result(m)
    if Regime.NONE not in results:
        raise ConfigError("regime comparison needs the none regime as baseline")
    return RegimeComparison(results)
