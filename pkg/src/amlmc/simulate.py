"""Particle-system evolution: Euler stepping, exact linear terminal laws,
antithetic fine/coarse triples, and the mean-field coupled system.

Coupling contract: an antithetic triple shares one set of initial draws and
one Brownian increment table.  The fine system evolves all 2N particles at
step h; each half evolves its N particles at step 2h under the coarsened
increments, interacting only within itself.  Because the halves are evolved by
the same kernel as any stand-alone cloud, each half is bit-identical to a
direct N-particle coarse simulation driven by the corresponding sub-blocks of
the shared draws; that identity is what makes the multilevel telescope exact
in expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalBlowupError, UnsupportedInstanceError
from .measure import EmpiricalMeasure
from .models import ModelSpec
from .paths import (
    CHANNEL_BRIDGE,
    CHANNEL_BROWNIAN,
    IncrementTable,
    SeedKey,
    coarsen,
    draw_increments,
    draw_initials,
    gaussian_block,
)


@dataclass(frozen=True)
class ParticleCloud:
    """Terminal states of one simulated particle system."""

    states: np.ndarray  # (n, d)
    t: float
    model_tag: str
    key: SeedKey

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states)


@dataclass(frozen=True)
class AntitheticTriple:
    fine: ParticleCloud
    half1: ParticleCloud
    half2: ParticleCloud


@dataclass(frozen=True)
class CoupledPair:
    """Interacting system Y and mean-field system X under identical draws."""

    y: ParticleCloud
    x: ParticleCloud
    poc_fourth_moment: float  # (1/N) sum_i max over grid points |X_i - Y_i|^4


def evolve_euler(model: ModelSpec, initials: np.ndarray, table: IncrementTable) -> np.ndarray:
    """Terminal states of the Euler scheme driven by the given increments.

    Drift and diffusion arguments (state and empirical measure) are frozen at
    the left grid point of each step.
    """
    states = np.array(initials, dtype=np.float64)
    if states.shape[0] != table.particles or states.shape[1] != table.dim:
        raise ConfigurationError("initials and increment table shapes disagree")
    h = table.h
    sig = model.sigma_const
    for k in range(table.steps):
        drift = model.drift_all(states, states)
        if model.constant_sigma:
            noise = table.dW[k] @ sig.T
        else:
            mu = EmpiricalMeasure(states)
            noise = np.stack(
                [model.diffusion(states[i], mu) @ table.dW[k, i] for i in range(states.shape[0])]
            )
        states = states + drift * h + noise
        if not np.all(np.isfinite(states)):
            raise NumericalBlowupError(step=k + 1, message=f"model {model.tag!r} blew up")
    return states


def euler_terminal(model: ModelSpec, n: int, p: int, T: float, key: SeedKey) -> ParticleCloud:
    """Simulate n particles with p Euler steps over [0, T] and return the terminal cloud.

    Cost model: n^2 p interaction units (each step evaluates the mean-field
    term for every particle against every atom).
    """
    if p < 1:
        raise ConfigurationError("p must be a positive integer")
    h = T / p
    xi = draw_initials(model, n, key)
    table = draw_increments(n, p, h, model.dim, key)
    states = evolve_euler(model, xi, table)
    return ParticleCloud(states=states, t=float(T), model_tag=model.tag, key=key)


def antithetic_triple_euler(
    model: ModelSpec, n: int, p: int, T: float, key: SeedKey
) -> AntitheticTriple:
    """Fine system of 2n particles at step h = T/p plus two coupled n-particle halves at 2h.

    All three share the same initial draws; the halves are driven by the
    coarsened fine increments, restricted to their own particle blocks, and
    each half interacts only within itself.
    """
    if p < 2 or p % 2 != 0:
        raise ConfigurationError("antithetic coupling requires an even number of fine steps")
    h = T / p
    xi = draw_initials(model, 2 * n, key)
    table = draw_increments(2 * n, p, h, model.dim, key)
    fine = evolve_euler(model, xi, table)
    ctab = coarsen(table)
    half1 = evolve_euler(model, xi[:n], ctab.restrict(0, n))
    half2 = evolve_euler(model, xi[n:], ctab.restrict(n, 2 * n))
    mk = lambda s: ParticleCloud(states=s, t=float(T), model_tag=model.tag, key=key)
    return AntitheticTriple(fine=mk(fine), half1=mk(half1), half2=mk(half2))


def _require_linear(model: ModelSpec):
    if not (model.linear and model.constant_sigma and model.dim == 1):
        raise UnsupportedInstanceError(
            "exact simulation is available only for the one-dimensional linear model"
        )


def _ou_kernels(alpha: float, T: float):
    """(c, v): first and second moments of the exponential kernel against dW.

    c = int_0^T e^{-a(T-s)} ds, v = int_0^T e^{-2a(T-s)} ds.
    """
    if alpha == 0.0:
        return T, T
    c = -math.expm1(-alpha * T) / alpha
    v = -math.expm1(-2.0 * alpha * T) / (2.0 * alpha)
    return c, v


def _linear_terminal_from_ab(
    xi: np.ndarray, A: np.ndarray, B: np.ndarray, alpha: float, sigma: float, T: float
) -> np.ndarray:
    """Terminal states of the linear interacting system from per-particle pairs.

    A_i plays the role of W^i_T and B_i of the exponentially weighted integral
    int_0^T e^{-alpha (T-s)} dW^i_s.  The empirical mean is a driftless linear
    SDE driven by the averaged noise and the deviations from the mean are
    decoupled mean-zero processes, so the terminal state reconstructs as
    mean + decayed deviation; every sub-system (any particle subset) uses
    exactly the same A_i, B_i, which is what couples the antithetic halves to
    the fine system.
    """
    if alpha == 0.0:
        # No interaction at all: each particle is xi_i + sigma W^i_T.  Written
        # this way the states of fine and half systems coincide exactly.
        return xi + sigma * A
    xbar = xi.mean()
    abar = A.mean()
    bbar = B.mean()
    decay = math.exp(-alpha * T)
    return xbar + sigma * abar + decay * (xi - xbar) + sigma * (B - bbar)


def _exact_pairs(n: int, key: SeedKey) -> tuple[np.ndarray, np.ndarray]:
    g = gaussian_block(key, CHANNEL_BROWNIAN, 2 * n).reshape(n, 2)
    return g[:, 0], g[:, 1]


def exact_linear_terminal(model: ModelSpec, n: int, T: float, key: SeedKey) -> ParticleCloud:
    """Exact-in-distribution terminal cloud of the linear interacting system.

    Consumes, per particle, one Gaussian for the terminal Brownian value and
    one for the residual of the weighted integral beside it (two per particle
    in total), addressed through the stream contract.  Cost model: n^2
    interaction units, one mean-field round without time stepping.
    """
    _require_linear(model)
    if n < 1:
        raise ConfigurationError("need at least one particle")
    alpha = model.params["alpha"]
    sigma = model.params["sigma"]
    xi = draw_initials(model, n, key)[:, 0]
    g1, g2 = _exact_pairs(n, key)
    c, v = _ou_kernels(alpha, T)
    A = math.sqrt(T) * g1
    resid_sd = math.sqrt(max(v - c * c / T, 0.0))
    B = (c / T) * A + resid_sd * g2
    states = _linear_terminal_from_ab(xi, A, B, alpha, sigma, T)
    return ParticleCloud(states=states[:, None], t=float(T), model_tag=model.tag, key=key)


def antithetic_triple_exact(model: ModelSpec, n: int, T: float, key: SeedKey) -> AntitheticTriple:
    """Exact analogue of the Euler triple: fine 2n system and two n halves.

    The shared per-particle pairs (A_i, B_i) carry all the Brownian
    functionals any sub-system needs, so each half equals the direct n-particle
    exact simulation under the same key, bit for bit.
    """
    _require_linear(model)
    if n < 1:
        raise ConfigurationError("need at least one particle per half")
    alpha = model.params["alpha"]
    sigma = model.params["sigma"]
    xi = draw_initials(model, 2 * n, key)[:, 0]
    g1, g2 = _exact_pairs(2 * n, key)
    c, v = _ou_kernels(alpha, T)
    A = math.sqrt(T) * g1
    resid_sd = math.sqrt(max(v - c * c / T, 0.0))
    B = (c / T) * A + resid_sd * g2

    def mk(lo: int, hi: int) -> ParticleCloud:
        states = _linear_terminal_from_ab(xi[lo:hi], A[lo:hi], B[lo:hi], alpha, sigma, T)
        return ParticleCloud(states=states[:, None], t=float(T), model_tag=model.tag, key=key)

    return AntitheticTriple(fine=mk(0, 2 * n), half1=mk(0, n), half2=mk(n, 2 * n))


def exact_linear_terminal_given(
    model: ModelSpec, initials: np.ndarray, table: IncrementTable, key: SeedKey
) -> ParticleCloud:
    """Exact linear terminal law coupled to an Euler increment table.

    Conditions the weighted integral B_i on the observed increments: the
    conditional mean is a step-weighted sum of the table entries and the
    conditional remainder is an independent Gaussian drawn from the bridge
    channel.  The result has the exact terminal law while sharing the Brownian
    path of any Euler run driven by the same table.
    """
    _require_linear(model)
    alpha = model.params["alpha"]
    sigma = model.params["sigma"]
    T = table.T
    p = table.steps
    h = table.h
    xi = np.asarray(initials, dtype=np.float64).reshape(-1)
    if xi.shape[0] != table.particles:
        raise ConfigurationError("initials and increment table shapes disagree")
    A = table.totals()[:, 0]
    if alpha == 0.0:
        states = xi + sigma * A
        return ParticleCloud(states=states[:, None], t=float(T), model_tag=model.tag, key=key)
    # I_k = int over step k of e^{-alpha (T - s)} ds
    k = np.arange(p)
    seg = np.exp(-alpha * h * (p - k - 1)) * (-math.expm1(-alpha * h)) / alpha
    b_cond = np.tensordot(seg / h, table.dW[:, :, 0], axes=(0, 0))
    _, v = _ou_kernels(alpha, T)
    resid_var = max(v - float(np.sum(seg * seg)) / h, 0.0)
    resid = gaussian_block(key, CHANNEL_BRIDGE, xi.shape[0])
    B = b_cond + math.sqrt(resid_var) * resid
    states = _linear_terminal_from_ab(xi, A, B, alpha, sigma, T)
    return ParticleCloud(states=states[:, None], t=float(T), model_tag=model.tag, key=key)


def coupled_pair(model: ModelSpec, n: int, p: int, T: float, key: SeedKey) -> CoupledPair:
    """Interacting system Y and its mean-field coupling X under identical draws.

    X follows the drift evaluated against the analytic law while Y sees the
    empirical measure; both use the same initial conditions and increments.
    The propagation-of-chaos statistic is the fourth-moment path discrepancy
    with the supremum approximated by the maximum over grid points.
    """
    if model.analytic is None:
        raise UnsupportedInstanceError(
            f"model {model.tag!r} has no analytic law; coupled_pair unavailable"
        )
    if not model.constant_sigma:
        raise UnsupportedInstanceError("coupled_pair supports constant diffusion only")
    if p < 1:
        raise ConfigurationError("p must be a positive integer")
    h = T / p
    xi = draw_initials(model, n, key)
    table = draw_increments(n, p, h, model.dim, key)
    sig = model.sigma_const
    y = xi.copy()
    x = xi.copy()
    max_sq = np.zeros(n)
    for k in range(table.steps):
        t_left = k * h
        noise = table.dW[k] @ sig.T
        y = y + model.drift_all(y, y) * h + noise
        x = x + model.analytic.drift_mean_field(x, t_left) * h + noise
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise NumericalBlowupError(step=k + 1, message=f"model {model.tag!r} blew up")
        np.maximum(max_sq, np.sum((x - y) ** 2, axis=1), out=max_sq)
    stat = float(np.mean(max_sq**2))
    mk = lambda s: ParticleCloud(states=s, t=float(T), model_tag=model.tag, key=key)
    return CoupledPair(y=mk(y), x=mk(x), poc_fourth_moment=stat)
