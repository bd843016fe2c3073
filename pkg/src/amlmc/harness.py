"""Rate-verification experiments, log-log regression, config parsing, CSV output.

Every experiment is a pure function of (config, master seed): cloud draws are
addressed by key, aggregation is ordered, and CSV floats are serialized with
17 significant digits, so output bytes are identical across runs and worker
counts.
"""

from __future__ import annotations

import hashlib
import json
import math
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigurationError, DataError, UnsupportedInstanceError
from .measure import EmpiricalMeasure, Functional, evaluate, get_functional, tree_mean, w2_1d
from .models import ModelSpec, get_model
from .mlmc import (
    _antithetic_value,
    run_amlmc_iid,
    run_amlmc_particles_euler,
    run_amlmc_particles_exact,
    run_ensemble,
    schedule_from_epsilon,
    schedule_from_epsilon_exact,
)
from .paths import SeedKey, coarsen, draw_increments, draw_initials
from .simulate import (
    antithetic_triple_euler,
    coupled_pair,
    euler_terminal,
    evolve_euler,
    exact_linear_terminal_given,
)

EXPERIMENT_KINDS = (
    "iid-variance",
    "particle-variance",
    "weak-error",
    "strong-poc",
    "euler-strong",
    "complexity",
    "estimate",
)

# Pilot clouds for auto-scaling sample counts live on their own level indices
# so they never collide with measurement clouds.
_PILOT_LEVEL_OFFSET = 4096
_PILOT_CLOUDS = 50
_AUTO_M_CAP = 400_000


@dataclass(frozen=True)
class RateFit:
    """OLS fit of log y on log x."""

    slope: float
    intercept: float
    stderr_slope: float
    points: tuple


def fit_rate(points: Sequence) -> RateFit:
    """Fit log y = intercept + slope log x by ordinary least squares."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise DataError("rate fit needs at least 3 points")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(x <= 0) or np.any(y <= 0):
        raise DataError("rate fit needs positive x and y values")
    lx = np.log(x)
    ly = np.log(y)
    xc = lx - lx.mean()
    sxx = float(np.sum(xc * xc))
    if sxx == 0.0:
        raise DataError("rate fit needs at least two distinct x values")
    slope = float(np.sum(xc * ly) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    ssr = max(float(np.sum(resid * resid)), 0.0)
    stderr = math.sqrt(ssr / (len(pts) - 2) / sxx) if len(pts) > 2 else 0.0
    return RateFit(slope=slope, intercept=intercept, stderr_slope=stderr,
                   points=tuple(zip(lx.tolist(), ly.tolist())))


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: kind, model, functional, grid, sizes, horizon, seed.

    ``grid`` holds particle counts (variance/weak-error/POC kinds), Euler step
    counts (euler-strong), or epsilon targets (complexity), strictly
    increasing.  ``n_fixed`` is the particle count for euler-strong, ``p_ref``
    the reference/grid step count, ``n_seeds`` the number of master seeds for
    complexity RMSE, ``epsilon``/``estimator`` configure the estimate kind.
    """

    kind: str
    model: dict = field(default_factory=lambda: {"name": "mean_field_ou", "alpha": 1.0,
                                                 "sigma": math.sqrt(2.0)})
    functional: str = "second_moment"
    grid: tuple = ()
    m_per_point: int = 200
    horizon: float = 1.0
    seed: int = 0
    n_fixed: int = 64
    p_ref: int = 256
    n_seeds: int = 20
    epsilon: float = 0.1
    estimator: str = "euler"

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigurationError(
                f"unknown experiment kind {self.kind!r}; available: {EXPERIMENT_KINDS}"
            )
        grid = tuple(self.grid)
        object.__setattr__(self, "grid", grid)
        if self.kind != "estimate":
            if len(grid) == 0:
                raise ConfigurationError("experiment grid must be non-empty")
            if any(g <= 0 for g in grid):
                raise ConfigurationError("grid entries must be positive")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigurationError("grid must be strictly increasing")
        if self.m_per_point < 1:
            raise ConfigurationError("m_per_point must be positive")
        if self.horizon <= 0:
            raise ConfigurationError("horizon must be positive")
        if self.estimator not in ("euler", "exact", "iid"):
            raise ConfigurationError("estimator must be one of euler, exact, iid")

    def build_model(self) -> ModelSpec:
        params = dict(self.model)
        name = params.pop("name", None)
        if name is None:
            raise ConfigurationError("model section needs a 'name' key")
        try:
            return get_model(name, **params)
        except TypeError as exc:
            raise ConfigurationError(f"bad parameters for model {name!r}: {exc}") from None

    def build_functional(self) -> Functional:
        return get_functional(self.functional)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a mapping")
    allowed = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    if "kind" not in data:
        raise ConfigurationError("config needs a 'kind' key")
    return ExperimentConfig(**data)


def load_config(path) -> ExperimentConfig:
    with open(path, "r") as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data)


def default_config(kind: str, seed: int = 0) -> ExperimentConfig:
    """Shipped preset for each experiment kind (desk-scale grids)."""
    ou = {"name": "mean_field_ou", "alpha": 1.0, "sigma": math.sqrt(2.0),
          "init_mean": 0.0, "init_var": 1.0}
    presets = {
        "iid-variance": dict(model=ou, functional="cos_mean",
                             grid=tuple(2**k for k in range(4, 13)),
                             m_per_point=10_000, horizon=1.0),
        "particle-variance": dict(model=ou, functional="cos_mean",
                                  grid=tuple(2**k for k in range(3, 10)),
                                  m_per_point=1_000, horizon=1.0),
        "weak-error": dict(model=ou, functional="second_moment",
                           grid=tuple(2**k for k in range(3, 9)),
                           m_per_point=200, horizon=1.0),
        "strong-poc": dict(model=ou, functional="second_moment",
                           grid=tuple(2**k for k in range(3, 10)),
                           m_per_point=200, horizon=1.0, p_ref=256),
        "euler-strong": dict(model=ou, functional="second_moment",
                             grid=(8, 16, 32, 64, 128),
                             m_per_point=400, horizon=1.0, n_fixed=64, p_ref=1024),
        "complexity": dict(model=ou, functional="second_moment",
                           grid=(0.025, 0.05, 0.1, 0.2),
                           m_per_point=1, horizon=0.5, n_seeds=20),
        "estimate": dict(model=ou, functional="second_moment",
                         grid=(), epsilon=0.1, horizon=1.0, estimator="euler"),
    }
    try:
        kwargs = presets[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown experiment kind {kind!r}; available: {EXPERIMENT_KINDS}"
        ) from None
    return ExperimentConfig(kind=kind, seed=seed, **kwargs)


@dataclass(frozen=True)
class ExperimentResult:
    kind: str
    columns: tuple
    rows: tuple
    fits: dict
    flags: dict
    config: ExperimentConfig


def _ordered_map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _sample_variance(values: np.ndarray) -> float:
    mean = float(tree_mean(values))
    dev = values - mean
    return float(np.sum(dev * dev)) / (len(values) - 1)


def experiment_variance_decay(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Sample variance of the antithetic difference (and of the plain coupled
    difference as baseline) across the particle-count grid.

    ``iid-variance`` draws i.i.d. samples from the model's initial law;
    ``particle-variance`` simulates Euler particle systems at h = T / N.
    Expected log-log slopes: -2 antithetic, -1 standard.
    """
    if cfg.kind not in ("iid-variance", "particle-variance"):
        raise ConfigurationError(f"variance decay cannot run kind {cfg.kind!r}")
    model = cfg.build_model()
    phi = cfg.build_functional()
    T = cfg.horizon
    rows = []
    for i, n in enumerate(cfg.grid):
        n = int(n)
        if n < 2 or n % 2 != 0:
            raise ConfigurationError("variance grids need even particle counts >= 2")

        def one_cloud(theta: int) -> tuple:
            key = SeedKey(master=cfg.seed, level=i, cloud=theta)
            if cfg.kind == "iid-variance":
                x = draw_initials(model.initial_law, n, key)
                fine = EmpiricalMeasure(x)
                h1 = EmpiricalMeasure(x[: n // 2])
                h2 = EmpiricalMeasure(x[n // 2:])
            else:
                triple = antithetic_triple_euler(model, n // 2, n, T, key)
                fine = triple.fine.measure()
                h1 = triple.half1.measure()
                h2 = triple.half2.measure()
            anti = _antithetic_value(phi, fine, h1, h2)
            standard = evaluate(phi, fine) - evaluate(phi, h1)
            return anti, standard

        pairs = _ordered_map(one_cloud, range(cfg.m_per_point), threads)
        anti = np.array([p[0] for p in pairs])
        std = np.array([p[1] for p in pairs])
        rows.append((n, _sample_variance(anti), _sample_variance(std)))

    fits = {}
    flags = {"antithetic_all_zero": all(r[1] == 0.0 for r in rows)}
    if not flags["antithetic_all_zero"]:
        fits["antithetic"] = fit_rate([(r[0], r[1]) for r in rows])
    if not all(r[2] == 0.0 for r in rows):
        fits["standard"] = fit_rate([(r[0], r[2]) for r in rows])
    return ExperimentResult(
        kind=cfg.kind,
        columns=("n_particles", "var_antithetic", "var_standard"),
        rows=tuple(rows), fits=fits, flags=flags, config=cfg,
    )


def experiment_weak_error(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """|E Phi(mu^N_T) - Phi(mu_T)| against N with h = T / N; expected slope -1.

    Sample counts auto-scale from pilot runs of 50 clouds per grid point so the
    Monte Carlo half-width (3 stderr) stays below a third of the smallest
    expected bias on the grid; ``m_per_point`` acts as a floor.
    """
    if cfg.kind != "weak-error":
        raise ConfigurationError(f"weak-error cannot run kind {cfg.kind!r}")
    model = cfg.build_model()
    phi = cfg.build_functional()
    if model.analytic is None:
        raise UnsupportedInstanceError("weak-error experiment needs an analytic reference")
    T = cfg.horizon
    exact = model.analytic.phi_exact(phi, T)

    def phi_of_cloud(n: int, level: int, theta: int) -> float:
        key = SeedKey(master=cfg.seed, level=level, cloud=theta)
        return evaluate(phi, euler_terminal(model, n, n, T, key).measure())

    # pilot pass: variance per point and a bias scale from the smallest N
    pilot_vars = []
    pilot_means = []
    for i, n in enumerate(cfg.grid):
        vals = np.array(_ordered_map(
            lambda th: phi_of_cloud(int(n), _PILOT_LEVEL_OFFSET + i, th),
            range(_PILOT_CLOUDS), threads,
        ))
        pilot_vars.append(_sample_variance(vals))
        pilot_means.append(float(tree_mean(vals)))
    n_min, n_max = int(cfg.grid[0]), int(cfg.grid[-1])
    bias_scale = abs(pilot_means[0] - exact) * n_min
    b_min = max(bias_scale / n_max, 1e-12)

    rows = []
    for i, n in enumerate(cfg.grid):
        n = int(n)
        m = int(min(max(math.ceil(81.0 * pilot_vars[i] / b_min**2), cfg.m_per_point),
                    _AUTO_M_CAP))
        vals = np.array(_ordered_map(
            lambda th: phi_of_cloud(n, i, th), range(m), threads,
        ))
        mean = float(tree_mean(vals))
        stderr = math.sqrt(_sample_variance(vals) / m)
        rows.append((n, abs(mean - exact), stderr, m))

    fits = {"bias": fit_rate([(r[0], r[1]) for r in rows])}
    return ExperimentResult(
        kind=cfg.kind,
        columns=("n_particles", "bias_abs", "stderr", "m_used"),
        rows=tuple(rows), fits=fits, flags={}, config=cfg,
    )


def experiment_strong_poc(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Fourth-moment pathwise discrepancy between particles and their mean-field
    coupling, (1/N) sum_i E max_grid |X_i - Y_i|^4, against N; expected slope -2."""
    if cfg.kind != "strong-poc":
        raise ConfigurationError(f"strong-poc cannot run kind {cfg.kind!r}")
    model = cfg.build_model()
    T = cfg.horizon
    rows = []
    for i, n in enumerate(cfg.grid):
        n = int(n)

        def one_cloud(theta: int) -> float:
            key = SeedKey(master=cfg.seed, level=i, cloud=theta)
            return coupled_pair(model, n, cfg.p_ref, T, key).poc_fourth_moment

        vals = np.array(_ordered_map(one_cloud, range(cfg.m_per_point), threads))
        rows.append((n, float(tree_mean(vals))))
    flags = {"all_zero": all(r[1] == 0.0 for r in rows)}
    fits = {}
    if not flags["all_zero"]:
        fits["poc"] = fit_rate(rows)
    return ExperimentResult(
        kind=cfg.kind,
        columns=("n_particles", "poc_fourth_moment"),
        rows=tuple(rows), fits=fits, flags=flags, config=cfg,
    )


def experiment_euler_strong(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """E[W2(mu^Y_T, mu^Z_T)^2] against the Euler step h under shared noise;
    expected slope 2.

    For the linear model the reference is the exact terminal law conditioned on
    the same increment table; otherwise the reference is a p_ref-step Euler run
    whose table is coarsened down to each tested resolution.
    """
    if cfg.kind != "euler-strong":
        raise ConfigurationError(f"euler-strong cannot run kind {cfg.kind!r}")
    model = cfg.build_model()
    if not model.constant_sigma:
        raise UnsupportedInstanceError("Euler strong-rate experiment assumes constant sigma")
    T = cfg.horizon
    n = cfg.n_fixed
    steps = [int(p) for p in cfg.grid]
    if any(p < 1 for p in steps):
        raise ConfigurationError("step grid must be positive")

    if model.linear:
        def one_cloud(args) -> float:
            i, p, theta = args
            key = SeedKey(master=cfg.seed, level=i, cloud=theta)
            xi = draw_initials(model, n, key)
            table = draw_increments(n, p, T / p, model.dim, key)
            z = evolve_euler(model, xi, table)
            y = exact_linear_terminal_given(model, xi, table, key)
            return w2_1d(y.measure(), EmpiricalMeasure(z)) ** 2

        rows = []
        for i, p in enumerate(steps):
            vals = np.array(_ordered_map(
                lambda th: one_cloud((i, p, th)), range(cfg.m_per_point), threads,
            ))
            rows.append((T / p, float(tree_mean(vals))))
    else:
        p_ref = cfg.p_ref
        for p in steps:
            ratio = p_ref // p
            if p * ratio != p_ref or (ratio & (ratio - 1)) != 0:
                raise ConfigurationError(
                    "reference steps must be a power-of-two multiple of every grid entry"
                )

        def one_cloud(theta: int) -> list:
            key = SeedKey(master=cfg.seed, level=0, cloud=theta)
            xi = draw_initials(model, n, key)
            table = draw_increments(n, p_ref, T / p_ref, model.dim, key)
            y_ref = evolve_euler(model, xi, table)
            out = []
            chain = {p_ref: table}
            q = p_ref
            while q > min(steps):
                chain[q // 2] = coarsen(chain[q])
                q //= 2
            for p in steps:
                z = evolve_euler(model, xi, chain[p])
                out.append(w2_1d(EmpiricalMeasure(y_ref), EmpiricalMeasure(z)) ** 2)
            return out

        per_cloud = _ordered_map(one_cloud, range(cfg.m_per_point), threads)
        arr = np.array(per_cloud)  # (clouds, len(steps))
        rows = [(T / p, float(tree_mean(arr[:, j]))) for j, p in enumerate(steps)]

    rows.sort(key=lambda r: r[0])
    flags = {"all_zero": all(r[1] == 0.0 for r in rows)}
    fits = {}
    if not flags["all_zero"]:
        fits["w2_squared"] = fit_rate(rows)
    return ExperimentResult(
        kind=cfg.kind,
        columns=("h", "w2_squared_mean"),
        rows=tuple(rows), fits=fits, flags=flags, config=cfg,
    )


def experiment_complexity(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Cost and achieved RMSE of the epsilon-driven estimators across an epsilon grid.

    Emits the time-discretized antithetic estimator (expected cost slope -3),
    the discretization-free antithetic estimator (slope -2 up to log^2 factors)
    and the single-level ensemble baseline (slope -4); RMSE per point is taken
    across ``n_seeds`` independent master seeds against the analytic value.
    """
    if cfg.kind != "complexity":
        raise ConfigurationError(f"complexity cannot run kind {cfg.kind!r}")
    model = cfg.build_model()
    phi = cfg.build_functional()
    if model.analytic is None:
        raise UnsupportedInstanceError("complexity experiment needs an analytic reference")
    T = cfg.horizon
    exact = model.analytic.phi_exact(phi, T)
    epsilons = [float(e) for e in cfg.grid]

    def rmse(estimates: list) -> float:
        errs = np.array(estimates) - exact
        return float(np.sqrt(tree_mean(errs * errs)))

    rows = []
    for eps in epsilons:
        sched_euler = schedule_from_epsilon(eps, T)
        sched_exact = schedule_from_epsilon_exact(eps, T)
        n_top = sched_euler.levels[-1].n_particles
        m_ens = math.ceil(4.0 * eps**-2 / n_top)

        est_euler, est_exact, est_ens = [], [], []
        cost_euler = cost_exact = cost_ens = None
        for j in range(cfg.n_seeds):
            seed_j = cfg.seed + j
            rep = run_amlmc_particles_euler(model, phi, sched_euler, seed_j, threads)
            est_euler.append(rep.estimate)
            if cost_euler is None:
                cost_euler = rep.cost_interactions
            elif rep.cost_interactions != cost_euler:
                raise RuntimeError("schedule cost must be seed-independent")
            rep = run_amlmc_particles_exact(model, phi, sched_exact, seed_j, threads)
            est_exact.append(rep.estimate)
            cost_exact = rep.cost_interactions
            rep = run_ensemble(model, phi, m_ens, n_top, n_top, T, seed_j, threads)
            est_ens.append(rep.estimate)
            cost_ens = rep.cost_interactions
        rows.append((eps, cost_euler, rmse(est_euler), cost_exact, rmse(est_exact),
                     cost_ens, rmse(est_ens)))

    fits = {
        "cost_euler": fit_rate([(r[0], r[1]) for r in rows]),
        "cost_exact_per_log2": fit_rate(
            [(r[0], r[3] / math.log(r[0]) ** 2) for r in rows]
        ),
        "cost_ensemble": fit_rate([(r[0], r[5]) for r in rows]),
    }
    return ExperimentResult(
        kind=cfg.kind,
        columns=("epsilon", "cost_amlmc_euler", "rmse_amlmc_euler",
                 "cost_amlmc_exact", "rmse_amlmc_exact",
                 "cost_ensemble", "rmse_ensemble"),
        rows=tuple(rows), fits=fits, flags={}, config=cfg,
    )


def run_estimate(cfg: ExperimentConfig, threads: int = 1):
    """Single antithetic MLMC run from the config's epsilon target.

    Returns (report, schedule); the CSV emitted by the CLI holds the per-level
    statistics.
    """
    if cfg.kind != "estimate":
        raise ConfigurationError(f"run_estimate cannot run kind {cfg.kind!r}")
    model = cfg.build_model()
    phi = cfg.build_functional()
    if cfg.estimator == "euler":
        sched = schedule_from_epsilon(cfg.epsilon, cfg.horizon)
        report = run_amlmc_particles_euler(model, phi, sched, cfg.seed, threads)
    elif cfg.estimator == "exact":
        sched = schedule_from_epsilon_exact(cfg.epsilon, cfg.horizon)
        report = run_amlmc_particles_exact(model, phi, sched, cfg.seed, threads)
    else:
        sched = schedule_from_epsilon(cfg.epsilon, cfg.horizon)
        report = run_amlmc_iid(model.initial_law, phi, sched, cfg.seed, threads)
    return report, sched


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    dispatch = {
        "iid-variance": experiment_variance_decay,
        "particle-variance": experiment_variance_decay,
        "weak-error": experiment_weak_error,
        "strong-poc": experiment_strong_poc,
        "euler-strong": experiment_euler_strong,
        "complexity": experiment_complexity,
    }
    if cfg.kind == "estimate":
        raise ConfigurationError("use run_estimate for the estimate kind")
    return dispatch[cfg.kind](cfg, threads)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = yaml.safe_dump(cfg.as_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_result(result: ExperimentResult, out_dir) -> Path:
    """Write <kind>.csv plus a <kind>.meta.json companion; returns the CSV path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{result.kind}.csv"
    lines = [",".join(result.columns)]
    for row in result.rows:
        lines.append(",".join(_fmt(v) for v in row))
    csv_path.write_text("\n".join(lines) + "\n")

    meta = {
        "kind": result.kind,
        "config_sha256": config_hash(result.config),
        "seed": result.config.seed,
        "git_describe": _git_describe(),
        "flags": result.flags,
        "fits": {
            name: {"slope": f.slope, "intercept": f.intercept,
                   "stderr_slope": f.stderr_slope}
            for name, f in result.fits.items()
        },
    }
    (out / f"{result.kind}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path
