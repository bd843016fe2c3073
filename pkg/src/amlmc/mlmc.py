"""Multilevel estimators and level schedules.

Level conventions: particle counts double per level, N_l = base_n * 2^l, and
the time step is tied to the particle count, h_l = T / N_l (equivalently
p_l = N_l Euler steps).  The epsilon-driven schedule for the time-discretized
antithetic estimator uses the closed forms

    L = ceil(log2(sqrt(2) / eps)),
    M_l = ceil(2 eps^-2 2^{L/2} (1 - 2^{-1/2})^{-1} 2^{-5l/2}),

which balance a squared bias of eps^2/2 at the top level against a variance
budget proportional to eps^2/2, given per-level correction variances of order
N_l^-2 and per-cloud costs of order N_l^3.  The discretization-free variant
has per-cloud cost N_l^2 instead, for which the balanced choice is
M_l = ceil(2 eps^-2 (L+1) 2^{-2l}).

Cost accounting is in interaction units: one mean-field evaluation round of an
n-particle system costs n^2, a p-step simulation costs n^2 p; sampling n
i.i.d. points costs n.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, UnsupportedInstanceError
from .measure import EmpiricalMeasure, Functional, evaluate, tree_mean, tree_sum
from .models import ModelSpec
from .paths import SeedKey, coarsen, draw_increments, draw_initials
from .simulate import (
    antithetic_triple_euler,
    antithetic_triple_exact,
    euler_terminal,
    evolve_euler,
    exact_linear_terminal,
)

_EULER_INV = math.exp(-1.0)


@dataclass(frozen=True)
class Level:
    ell: int
    n_particles: int
    h: float
    m_clouds: int
    p_steps: int = 0  # defaults to n_particles (h_l = T / N_l convention)

    def __post_init__(self):
        if self.p_steps == 0:
            object.__setattr__(self, "p_steps", self.n_particles)


@dataclass(frozen=True)
class LevelSchedule:
    """Per-level sizes (N_l, h_l, M_l) for l = 0..L."""

    levels: tuple
    T: float
    base_n: int = 1
    epsilon: Optional[float] = None

    def __post_init__(self):
        if not self.levels:
            raise ConfigurationError("schedule needs at least one level")
        if self.base_n < 1 or (self.base_n & (self.base_n - 1)) != 0:
            raise ConfigurationError("base_n must be a power of two")
        prev = None
        for ell, lv in enumerate(self.levels):
            if lv.ell != ell:
                raise ConfigurationError("levels must be consecutively indexed from 0")
            if lv.n_particles != self.base_n * 2**ell:
                raise ConfigurationError("particle counts must double per level")
            if not math.isclose(lv.h, self.T / lv.n_particles, rel_tol=1e-12):
                raise ConfigurationError("step size must equal T / N_l")
            if lv.m_clouds < 1:
                raise ConfigurationError("cloud counts must be positive")
            if prev is not None and lv.m_clouds > prev:
                raise ConfigurationError("cloud counts must be non-increasing in the level")
            prev = lv.m_clouds

    @property
    def L(self) -> int:
        return len(self.levels) - 1


def _check_epsilon(epsilon: float):
    if not (0.0 < epsilon < _EULER_INV):
        raise ConfigurationError(
            f"epsilon must lie in (0, e^-1 = {_EULER_INV:.6f}), got {epsilon}"
        )


def _top_level(epsilon: float) -> int:
    return math.ceil(math.log2(math.sqrt(2.0) / epsilon))


def schedule_from_epsilon(epsilon: float, T: float = 1.0) -> LevelSchedule:
    """Schedule for the time-discretized antithetic estimator at target RMSE epsilon."""
    _check_epsilon(epsilon)
    L = _top_level(epsilon)
    scale = 2.0 * epsilon**-2 * 2.0 ** (L / 2.0) / (1.0 - 2.0**-0.5)
    levels = tuple(
        Level(ell=ell, n_particles=2**ell, h=T / 2**ell,
              m_clouds=math.ceil(scale * 2.0 ** (-2.5 * ell)))
        for ell in range(L + 1)
    )
    return LevelSchedule(levels=levels, T=float(T), base_n=1, epsilon=float(epsilon))


def schedule_from_epsilon_exact(epsilon: float, T: float = 1.0) -> LevelSchedule:
    """Schedule for the discretization-free antithetic estimator at target RMSE epsilon.

    Same top level as the discretized variant; with per-cloud cost N_l^2 the
    variance-cost products are flat across levels, so every level receives an
    equal share of the eps^2/2 variance budget (the L+1 factor).
    """
    _check_epsilon(epsilon)
    L = _top_level(epsilon)
    scale = 2.0 * epsilon**-2 * (L + 1)
    levels = tuple(
        Level(ell=ell, n_particles=2**ell, h=T / 2**ell,
              m_clouds=math.ceil(scale * 2.0 ** (-2.0 * ell)))
        for ell in range(L + 1)
    )
    return LevelSchedule(levels=levels, T=float(T), base_n=1, epsilon=float(epsilon))


def manual_schedule(m_clouds: Sequence[int], T: float = 1.0, base_n: int = 1) -> LevelSchedule:
    """Schedule with explicit cloud counts; N_l = base_n 2^l, h_l = T / N_l."""
    levels = tuple(
        Level(ell=ell, n_particles=base_n * 2**ell, h=T / (base_n * 2**ell), m_clouds=int(m))
        for ell, m in enumerate(m_clouds)
    )
    return LevelSchedule(levels=levels, T=float(T), base_n=int(base_n), epsilon=None)


def charge_euler(level: Level) -> int:
    """Interaction units of one antithetic cloud at this level (Euler estimator)."""
    n = level.n_particles
    if level.ell == 0:
        return n * n * level.p_steps
    half = n // 2
    return n * n * level.p_steps + 2 * half * half * (level.p_steps // 2)


def charge_exact(level: Level) -> int:
    n = level.n_particles
    if level.ell == 0:
        return n * n
    half = n // 2
    return n * n + 2 * half * half


def charge_standard(level: Level) -> int:
    n = level.n_particles
    if level.ell == 0:
        return n * n * level.p_steps
    half = n // 2
    return n * n * level.p_steps + half * half * (level.p_steps // 2)


def charge_iid(level: Level) -> int:
    return level.n_particles


@dataclass(frozen=True)
class LevelStats:
    ell: int
    m_clouds: int
    mean: float
    variance: Optional[float]  # unbiased over clouds; None when M_l = 1


@dataclass(frozen=True)
class EstimatorReport:
    estimate: float
    per_level: tuple
    cost_interactions: int
    master_seed: int
    wall_time: float

    def level_means(self) -> list:
        return [ls.mean for ls in self.per_level]


def _run_levels(
    levels: Sequence[Level],
    correction: Callable[[Level, SeedKey], float],
    charge: Callable[[Level], int],
    seed: int,
    threads: int = 1,
) -> EstimatorReport:
    """Evaluate per-cloud corrections level by level with a deterministic reduction.

    Clouds are pure functions of their keys, so any worker count yields the
    same values; aggregation always happens in (level, cloud) order.
    """
    t0 = time.perf_counter()
    stats = []
    cost = 0
    for level in levels:
        keys = [SeedKey(master=seed, level=level.ell, cloud=theta)
                for theta in range(level.m_clouds)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                values = np.fromiter(
                    pool.map(lambda k: correction(level, k), keys),
                    dtype=np.float64, count=level.m_clouds,
                )
        else:
            values = np.fromiter(
                (correction(level, k) for k in keys), dtype=np.float64, count=level.m_clouds
            )
        mean = float(tree_mean(values))
        if level.m_clouds > 1:
            dev = values - mean
            var = float(tree_sum(dev * dev)) / (level.m_clouds - 1)
        else:
            var = None
        stats.append(LevelStats(ell=level.ell, m_clouds=level.m_clouds, mean=mean, variance=var))
        cost += level.m_clouds * charge(level)
    estimate = 0.0
    for ls in stats:
        estimate += ls.mean
    return EstimatorReport(
        estimate=estimate,
        per_level=tuple(stats),
        cost_interactions=cost,
        master_seed=int(seed),
        wall_time=time.perf_counter() - t0,
    )


def _antithetic_value(phi: Functional, fine, half1, half2) -> float:
    """Phi(fine) - (Phi(half1) + Phi(half2)) / 2, combined in this fixed form."""
    return evaluate(phi, fine) - 0.5 * (evaluate(phi, half1) + evaluate(phi, half2))


def run_ensemble(
    model: ModelSpec,
    phi: Functional,
    m_clouds: int,
    n: int,
    p: int,
    T: float,
    seed: int,
    threads: int = 1,
) -> EstimatorReport:
    """Single-level ensemble estimator: mean of Phi over independent Euler clouds."""
    if m_clouds < 1 or n < 1 or p < 1:
        raise ConfigurationError("ensemble sizes must be positive")
    level = Level(ell=0, n_particles=n, h=T / p, m_clouds=m_clouds, p_steps=p)

    def corr(lv: Level, key: SeedKey) -> float:
        return evaluate(phi, euler_terminal(model, n, p, T, key).measure())

    return _run_levels([level], corr, lambda lv: n * n * p, seed, threads)


def run_amlmc_iid(
    sampler,
    phi: Functional,
    schedule: LevelSchedule,
    seed: int,
    threads: int = 1,
) -> EstimatorReport:
    """Antithetic MLMC over i.i.d. samples from an initial law.

    Level 0 is the plain estimator; at level l the fine measure holds N_l
    i.i.d. draws and the antithetic pair is its first/second index halves.
    Cost is the number of samples drawn.
    """
    law = getattr(sampler, "initial_law", sampler)

    def corr(level: Level, key: SeedKey) -> float:
        n = level.n_particles
        x = draw_initials(law, n, key)
        if level.ell == 0:
            return evaluate(phi, EmpiricalMeasure(x))
        half = n // 2
        return _antithetic_value(
            phi, EmpiricalMeasure(x), EmpiricalMeasure(x[:half]), EmpiricalMeasure(x[half:])
        )

    return _run_levels(schedule.levels, corr, charge_iid, seed, threads)


def run_amlmc_particles_exact(
    model: ModelSpec,
    phi: Functional,
    schedule: LevelSchedule,
    seed: int,
    threads: int = 1,
) -> EstimatorReport:
    """Antithetic MLMC over exactly simulated linear particle systems."""
    if not model.linear:
        raise UnsupportedInstanceError("exact-particle estimator requires a linear model")

    def corr(level: Level, key: SeedKey) -> float:
        n = level.n_particles
        if level.ell == 0:
            cloud = exact_linear_terminal(model, n, schedule.T, key)
            return evaluate(phi, cloud.measure())
        if n % 2 != 0:
            raise ConfigurationError("antithetic levels need an even particle count")
        triple = antithetic_triple_exact(model, n // 2, schedule.T, key)
        return _antithetic_value(
            phi, triple.fine.measure(), triple.half1.measure(), triple.half2.measure()
        )

    return _run_levels(schedule.levels, corr, charge_exact, seed, threads)


def run_amlmc_particles_euler(
    model: ModelSpec,
    phi: Functional,
    schedule: LevelSchedule,
    seed: int,
    threads: int = 1,
) -> EstimatorReport:
    """Antithetic MLMC over Euler-discretized particle systems.

    Level l couples a fine system (N_l particles, step h_l) with two
    N_l/2-particle sub-systems at step 2 h_l; level 0 is a plain Euler cloud.
    """
    def corr(level: Level, key: SeedKey) -> float:
        n = level.n_particles
        if level.ell == 0:
            cloud = euler_terminal(model, n, level.p_steps, schedule.T, key)
            return evaluate(phi, cloud.measure())
        if n % 2 != 0:
            raise ConfigurationError("antithetic levels need an even particle count")
        triple = antithetic_triple_euler(model, n // 2, level.p_steps, schedule.T, key)
        return _antithetic_value(
            phi, triple.fine.measure(), triple.half1.measure(), triple.half2.measure()
        )

    return _run_levels(schedule.levels, corr, charge_euler, seed, threads)


def run_mlmc_standard(
    model: ModelSpec,
    phi: Functional,
    schedule: LevelSchedule,
    seed: int,
    threads: int = 1,
) -> EstimatorReport:
    """Classical (non-antithetic) MLMC baseline.

    The coarse system of a level-l correction is the first N_{l-1} particles
    under the coarsened increments, so fine and coarse stay coupled but no
    antithetic average is taken.
    """
    def corr(level: Level, key: SeedKey) -> float:
        n = level.n_particles
        if level.ell == 0:
            cloud = euler_terminal(model, n, level.p_steps, schedule.T, key)
            return evaluate(phi, cloud.measure())
        if n % 2 != 0:
            raise ConfigurationError("coupled levels need an even particle count")
        half = n // 2
        h = schedule.T / level.p_steps
        xi = draw_initials(model, n, key)
        table = draw_increments(n, level.p_steps, h, model.dim, key)
        fine = evolve_euler(model, xi, table)
        coarse = evolve_euler(model, xi[:half], coarsen(table).restrict(0, half))
        return evaluate(phi, EmpiricalMeasure(fine)) - evaluate(phi, EmpiricalMeasure(coarse))

    return _run_levels(schedule.levels, corr, charge_standard, seed, threads)
