"""Rotation economics: capitalization trace and capital-weighted return rate.

Bookkeeping over one rotation of ``n`` 30-month steps (step ``k`` runs from
age ``a0 + 30k`` to ``a0 + 30(k+1)`` months):

* ``K_start[k]``  balance-sheet value (floored stumpage + bare land) before any thinning at step ``k``
* ``K_post[k]``   the same right after the thinning (equal to ``K_start`` without one)
* ``K_end[k]``    value at the end of the step; in the last step this uses clearcut pricing
* ``dkappa[k]``   operating result: thinning net cash + ``K_end`` - ``K_start``.  In the last
  step the end value is the clearcut net cash plus bare land, less the regeneration expense,
  after which capital is back to bare land.

The expected return rate is ``sum(dkappa) / sum(K_mean * dt)`` with ``K_mean`` the
trapezoidal mean of ``K_post`` and ``K_end`` within each step.  Sums use
:func:`math.fsum` so they do not depend on the order of the steps.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EconomicsError, ScheduleError
from .kernel import GrowthKernel
from .stand import STEP_MONTHS, STEP_YEARS, GrowthModel, Stand
from .thinning import HarvestRecord, ManagementSchedule, Regime, ThinningRule, harvest_record, thin_arrays
from .valuation import MarketModel

TRACE_HEADER = ("step", "age_months", "K_eur_ha", "dkappa_eur_ha", "event")


@dataclass
class Simulation:
    """Raw per-step quantities of stand trajectories under fixed thinnings.

    Arrays carry a leading batch axis (one row per candidate schedule).
    """

    k_std: np.ndarray  # standing value of S_k (pre-thinning), (B, n_steps + 1)
    k_post: np.ndarray  # (B, n_steps)
    cash: np.ndarray  # thinning net cash at step k, (B, n_steps)
    k_cc: np.ndarray  # clearcut capitalization of S_k, (B, n_steps + 1)
    cc_cash: np.ndarray  # clearcut net cash of S_k (not floored), (B, n_steps + 1)
    bare_land: float
    regeneration: float
    quality_step: np.ndarray  # step of the quality correction per row, -1 if none
    states: list | None = None  # (n, j) pre-thinning per step, row 0 only
    post_states: list | None = None
    removed: dict = field(default_factory=dict)  # step -> (removed stems, pre-event j), row 0 only

    @property
    def n_steps(self) -> int:
        return self.k_post.shape[1]

    def step_terms(self, rotation: int, row: int = 0) -> tuple[list[float], list[float]]:
        """Per-step ``dkappa`` and trapezoidal mean ``K`` for a clearcut after ``rotation`` steps."""
        if not 1 <= rotation <= self.n_steps:
            raise ScheduleError(f"rotation of {rotation} steps outside simulated horizon {self.n_steps}")
        last = rotation - 1
        ks, kp, c = self.k_std[row], self.k_post[row], self.cash[row]
        dk = (c[:last] + ks[1:rotation] - ks[:last]).tolist()
        km = (0.5 * (kp[:last] + ks[1:rotation])).tolist()
        dk.append(float(c[last] + (self.cc_cash[row, rotation] + self.bare_land) - ks[last] - self.regeneration))
        km.append(float(0.5 * (kp[last] + self.k_cc[row, rotation])))
        return dk, km

    def rate_curve(self, first: int = 1) -> np.ndarray:
        """Approximate return rate for every rotation ``first..n_steps`` (cumulative sums), (B, R).

        Used for screening only; exact values come from :meth:`step_terms`.
        """
        ks, kp, c = self.k_std, self.k_post, self.cash
        n = self.n_steps
        dk_std = c[:, : n - 1] + ks[:, 1:n] - ks[:, : n - 1]
        km_std = 0.5 * (kp[:, : n - 1] + ks[:, 1:n])
        zero = np.zeros((ks.shape[0], 1))
        pre_dk = np.concatenate([zero, np.cumsum(dk_std, axis=1)], axis=1)  # sum of first `last` terms
        pre_km = np.concatenate([zero, np.cumsum(km_std, axis=1)], axis=1)
        rot = np.arange(first, n + 1)
        last = rot - 1
        final_dk = c[:, last] + (self.cc_cash[:, rot] + self.bare_land) - ks[:, last] - self.regeneration
        final_km = 0.5 * (kp[:, last] + self.k_cc[:, rot])
        den = (pre_km[:, last] + final_km) * STEP_YEARS
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (pre_dk[:, last] + final_dk) / den
        return np.where(den > 0, r, -np.inf)


@dataclass(frozen=True, eq=False)
class ThinningBatch:
    """Retention and quality masks for ``B`` candidates at one step: arrays (B, species, classes)."""

    step: int
    retention: np.ndarray
    quality: np.ndarray
    strip_road_survival: float
    b: float


def batch_from_rules(rules: Sequence[ThinningRule], order: tuple[str, ...], grid) -> list[ThinningBatch]:
    steps = [r.step for r in rules]
    if len(set(steps)) != len(steps):
        raise ScheduleError("two thinnings at the same step")
    out = []
    for r in sorted(rules, key=lambda r: r.step):
        s, q = r.arrays(order, grid)
        out.append(ThinningBatch(int(r.step), s[None], q[None], r.strip_road_survival, r.b))
    return out


def simulate_batch(
    stand0: Stand,
    thinnings: Sequence[ThinningBatch],
    kernel: GrowthKernel,
    market: MarketModel,
    mode: Regime | str,
    n_steps: int,
    coupling_strength: float = 1.0,
    keep_states: bool = False,
) -> Simulation:
    """Grow ``stand0`` for ``n_steps`` steps under each candidate's thinnings; no rotation is imposed yet.

    The quality correction is applied only at the first thinning that
    removes commercial volume, and only when ``mode`` allows it.
    """
    mode = Regime.parse(mode)
    order = stand0.species
    grid = stand0.grid
    batch = thinnings[0].retention.shape[0] if thinnings else 1
    by_step = {t.step: t for t in thinnings}
    std = market.value_table(order, grid, False)
    cc = market.value_table(order, grid, True)
    model = GrowthModel(kernel, order, grid, stand0.site_index, coupling_strength if mode.growth_coupled else 0.0)
    size = len(order) * grid.class_count

    n0, j0 = stand0.as_arrays(order)
    n = np.repeat(n0[None], batch, axis=0)
    j = np.repeat(j0[None], batch, axis=0)
    k_std = np.empty((batch, n_steps + 1))
    k_post = np.empty((batch, n_steps))
    cash = np.zeros((batch, n_steps))
    k_cc = np.empty((batch, n_steps + 1))
    cc_cash = np.empty((batch, n_steps + 1))
    states = [] if keep_states else None
    post_states = [] if keep_states else None
    removed_log = {}
    quality_step = np.full(batch, -1)
    pending = np.full(batch, mode.quality_thinning)

    def total(x):
        return x.reshape(batch, size).sum(axis=1)

    for k in range(n_steps + 1):
        k_std[:, k] = total(n * np.maximum(std.base + j * std.saw, 0.0))
        per_tree_cc = cc.base + j * cc.saw
        cc_cash[:, k] = total(n * per_tree_cc)
        k_cc[:, k] = total(n * np.maximum(per_tree_cc, 0.0))
        if keep_states:
            states.append((n[0].copy(), j[0].copy()))
        if k == n_steps:
            break
        t = by_step.get(k)
        if t is not None:
            remaining = n * t.retention
            removed = n - remaining
            apply_q = np.zeros(batch, dtype=bool)
            if pending.any():
                apply_q = pending & (total(removed * std.volume) > 0.0)
                pending &= ~apply_q
                quality_step[apply_q] = k
            new_j = thin_arrays(n, j, t.retention, t.quality & apply_q[:, None, None],
                                t.strip_road_survival, t.b, True)[1]
            revenue = removed * (std.roadside_base + j * std.saw)
            cost = removed * (std.roadside_base - std.base)
            cash[:, k] = total(revenue - cost)
            if keep_states:
                removed_log[k] = (removed[0].copy(), j[0].copy())
            n, j = remaining, new_j
            k_post[:, k] = total(n * np.maximum(std.base + j * std.saw, 0.0))
        else:
            k_post[:, k] = k_std[:, k]
        if keep_states:
            post_states.append((n[0].copy(), j[0].copy()))
        n, j = model.grow(n, j)

    bare = market.bare_land_value
    return Simulation(
        k_std=k_std + bare,
        k_post=k_post + bare,
        cash=cash,
        k_cc=k_cc + bare,
        cc_cash=cc_cash,
        bare_land=bare,
        regeneration=market.regeneration_expense,
        quality_step=quality_step,
        states=states,
        post_states=post_states,
        removed=removed_log,
    )


def simulate(
    stand0: Stand,
    rules: Sequence[ThinningRule],
    kernel: GrowthKernel,
    market: MarketModel,
    mode: Regime | str,
    n_steps: int,
    coupling_strength: float = 1.0,
    keep_states: bool = False,
) -> Simulation:
    """Single-schedule form of :func:`simulate_batch`."""
    for r in rules:
        r.validate(stand0.grid)
    thinnings = batch_from_rules(rules, stand0.species, stand0.grid)
    return simulate_batch(stand0, thinnings, kernel, market, mode, n_steps, coupling_strength, keep_states)


@dataclass
class EconomicTrace:
    age_months: np.ndarray
    k_start: np.ndarray
    k_post: np.ndarray
    k_end: np.ndarray
    k_mean: np.ndarray
    dkappa: np.ndarray
    events: list[str]
    dt: float = STEP_YEARS
    harvests: dict = field(default_factory=dict)
    stands: list[Stand] = field(default_factory=list)
    regeneration_expense: float = 0.0
    quality_step: int | None = None

    def __post_init__(self):
        if len(self.k_mean) != len(self.dkappa):
            raise ValueError("k_mean and dkappa must have equal length")
        if np.any(np.asarray(self.k_mean) < 0):
            raise EconomicsError("capitalization must be non-negative")

    @classmethod
    def from_rates(cls, capital: Sequence[float], rate: Sequence[float], dt: float = STEP_YEARS) -> "EconomicTrace":
        """Piecewise-constant trace: capital ``K`` and operating result ``dkappa/dt`` per step."""
        k = np.asarray(capital, dtype=float)
        dk = np.asarray(rate, dtype=float) * dt
        ages = np.arange(len(k)) * (dt * 12.0)
        return cls(ages, k, k, k, k, dk, [""] * len(k), dt=dt)

    def shifted(self, offset: int) -> "EconomicTrace":
        """Cyclic shift of the per-step sequence (start the integration ``offset`` steps later)."""
        roll = lambda a: np.roll(np.asarray(a), -offset)
        return EconomicTrace(roll(self.age_months), roll(self.k_start), roll(self.k_post), roll(self.k_end),
                             roll(self.k_mean), roll(self.dkappa), list(roll(np.array(self.events, dtype=object))),
                             dt=self.dt)

    @property
    def rotation_steps(self) -> int:
        return len(self.dkappa)

    @property
    def mean_capitalization(self) -> float:
        return math.fsum(self.k_mean.tolist()) / len(self.k_mean)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for k in range(self.rotation_steps):
            w.writerow([k, int(self.age_months[k]), repr(float(self.k_mean[k])), repr(float(self.dkappa[k])),
                        self.events[k]])
        return buf.getvalue()


def build_trace(
    stand0: Stand,
    schedule: ManagementSchedule,
    kernel: GrowthKernel,
    market: MarketModel,
    mode: Regime | str = Regime.NONE,
    coupling_strength: float = 1.0,
) -> EconomicTrace:
    """Simulate one rotation of ``schedule`` and book its economic trace."""
    schedule.validate(stand0.grid)
    n = schedule.rotation_steps
    sim = simulate(stand0, schedule.thinnings, kernel, market, mode, n, coupling_strength, keep_states=True)
    return trace_from_simulation(stand0, sim, schedule, market)


def trace_from_simulation(stand0: Stand, sim: Simulation, schedule: ManagementSchedule,
                          market: MarketModel) -> EconomicTrace:
    n = schedule.rotation_steps
    dk, km = sim.step_terms(n)
    thin_steps = {r.step for r in schedule.thinnings}
    events = []
    for k in range(n):
        ev = []
        if k in thin_steps:
            ev.append("thinning")
        if k == n - 1:
            ev.append("clearcut")
        events.append("+".join(ev))
    k_end = np.append(sim.k_std[0, 1:n], sim.k_cc[0, n])
    order = stand0.species
    stands = [stand0.with_arrays(order, nn, jj, age_months=stand0.age_months + STEP_MONTHS * k)
              for k, (nn, jj) in enumerate(sim.states[: n + 1])] if sim.states else []
    grid = stand0.grid
    std = market.value_table(order, grid, False)
    harvests = {("thinning", k): harvest_record(order, rem, jj, std, market, grid)
                for k, (rem, jj) in sim.removed.items() if k < n}
    if sim.states:
        nn, jj = sim.states[n]
        harvests[("clearcut", n)] = harvest_record(order, nn, jj, market.value_table(order, grid, True), market, grid)
    qs = int(sim.quality_step[0])
    return EconomicTrace(
        age_months=stand0.age_months + STEP_MONTHS * np.arange(n),
        k_start=sim.k_std[0, :n].copy(),
        k_post=sim.k_post[0, :n].copy(),
        k_end=k_end,
        k_mean=np.array(km),
        dkappa=np.array(dk),
        events=events,
        dt=STEP_YEARS,
        harvests=harvests,
        stands=stands,
        regeneration_expense=sim.regeneration,
        quality_step=qs if 0 <= qs < n else None,
    )


def return_rate_from_terms(dk: Sequence[float], km: Sequence[float], dt: float = STEP_YEARS) -> float:
    denom = math.fsum(km) * dt
    if not denom > 0:
        raise EconomicsError("no capital at risk")
    return math.fsum(dk) / denom


def expected_return_rate(trace: EconomicTrace, substeps: int = 1) -> float:
    """Capital-weighted expected return rate over the rotation, 1/yr.

    ``substeps > 1`` integrates capital on a finer grid: within each step
    capital is interpolated geometrically (compound growth) from its value
    after any thinning to its end value, and the mean comes from the
    midpoint rule on ``substeps`` sub-intervals.  ``substeps = 1`` is the
    trapezoidal mean.
    """
    if substeps == 1:
        return return_rate_from_terms(trace.dkappa.tolist(), trace.k_mean.tolist(), trace.dt)
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    t = (np.arange(substeps) + 0.5) / substeps
    km = []
    for p, e in zip(trace.k_post, trace.k_end):
        path = p * (e / p) ** t if p > 0 and e > 0 else p + (e - p) * t
        km.append(float(np.mean(path)))
    return return_rate_from_terms(trace.dkappa.tolist(), km, trace.dt)


def bare_land_sensitivity(r_expected: float, k_expected: float, delta_b: float) -> float:
    """Ratio of the return rate after a bare-land value change ``delta_b`` to the original.

    Exact when the operating result does not depend on the bare land value.
    """
    if not k_expected > 0:
        raise EconomicsError("expected capitalization must be positive")
    if k_expected + delta_b <= 0:
        raise EconomicsError("bare land change leaves no capital")
    return 1.0 / (1.0 + delta_b / k_expected)
