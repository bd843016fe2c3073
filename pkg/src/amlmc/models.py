"""Interacting-diffusion model definitions and analytic reference laws.

A model is a drift b(x, mu) and diffusion sigma(x, mu) pair together with an
initial law.  Two built-ins cover the acceptance experiments:

* ``mean_field_ou`` -- linear mean-reverting drift toward the empirical mean
  with constant diffusion.  Its limiting law is Gaussian with closed-form
  moments, giving exact references for moment functionals, and the particle
  system itself is exactly simulable (see ``simulate``).
* ``kuramoto`` -- bounded sine interaction drift with constant diffusion; all
  derivatives bounded, no analytic reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, UnsupportedInstanceError
from .measure import EmpiricalMeasure, Functional


@dataclass(frozen=True)
class InitialLaw:
    """Initial distribution sampled through the keyed stream contract.

    ``transform`` maps an (n, gaussians_per_draw) block of standard normals to
    (n, dim) draws and must act row-wise, so that sub-sampling particles
    commutes with sampling.
    """

    dim: int
    gaussians_per_draw: int
    transform: Callable[[np.ndarray], np.ndarray]
    moment12_finite: bool
    descriptor: str


def gaussian_law(mean: float = 0.0, var: float = 1.0, dim: int = 1) -> InitialLaw:
    if not (np.isfinite(mean) and np.isfinite(var) and var >= 0):
        raise ConfigurationError("Gaussian law needs finite mean and variance >= 0")
    std = math.sqrt(var)
    return InitialLaw(
        dim=dim,
        gaussians_per_draw=dim,
        transform=lambda g: mean + std * g,
        moment12_finite=True,
        descriptor=f"gaussian(mean={mean}, var={var})",
    )


def point_mass(value: float = 0.0, dim: int = 1) -> InitialLaw:
    if not np.isfinite(value):
        raise ConfigurationError("point mass location must be finite")
    return InitialLaw(
        dim=dim,
        gaussians_per_draw=dim,
        transform=lambda g: np.full_like(g, value),
        moment12_finite=True,
        descriptor=f"delta({value})",
    )


@dataclass(frozen=True)
class AnalyticReference:
    """Closed-form moments of the limiting law, where known.

    ``mean`` and ``variance`` are functions of time; ``drift_mean_field``
    evaluates b(x, mu_t) under the true law (vectorized over states), which is
    what the mean-field coupled system integrates.
    """

    mean: Callable[[float], float]
    variance: Callable[[float], float]
    drift_mean_field: Callable[[np.ndarray, float], np.ndarray]

    def phi_exact(self, phi: Functional, t: float) -> float:
        """Exact Phi(mu_t) for the built-in functional library."""
        m = self.mean(t)
        v = self.variance(t)
        table = {
            "linear_mean": m,
            "square_mean": m * m,
            "cos_mean": math.cos(m),
            "second_moment": m * m + v,
        }
        try:
            return float(table[phi.descriptor])
        except KeyError:
            raise UnsupportedInstanceError(
                f"no closed-form value for functional {phi.descriptor!r}"
            ) from None


@dataclass(frozen=True)
class ModelSpec:
    """Drift/diffusion pair with smoothness metadata and initial law.

    ``drift_all`` is the vectorized form used by the engine:
    drift_all(states, mu_points)[i] = b(states[i], empirical measure of
    mu_points).  ``linear`` marks models whose interacting particle system is
    exactly simulable without time discretization.
    """

    dim: int
    drift: Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]
    drift_all: Callable[[np.ndarray, np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]
    constant_sigma: bool
    sigma_const: Optional[np.ndarray]
    smoothness_class: int
    initial_law: InitialLaw
    analytic: Optional[AnalyticReference]
    linear: bool
    tag: str
    params: dict = field(default_factory=dict)


def drift_eval(model: ModelSpec, x, mu: EmpiricalMeasure) -> np.ndarray:
    """Evaluate b(x, mu).  One call touches all N atoms of mu (N interaction units)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (model.dim,):
        raise ConfigurationError(f"state must be a vector in R^{model.dim}")
    if mu.dim != model.dim:
        raise ConfigurationError(
            f"measure dimension {mu.dim} does not match model dimension {model.dim}"
        )
    out = np.atleast_1d(np.asarray(model.drift(x, mu), dtype=np.float64))
    if out.shape != (model.dim,):
        raise ConfigurationError("drift returned a vector of the wrong dimension")
    return out


def mean_field_ou(
    alpha: float,
    sigma: float,
    init_mean: float = 0.0,
    init_var: float = 1.0,
) -> ModelSpec:
    """Mean-reverting interaction b(x, mu) = -alpha (x - mean(mu)), constant sigma.

    The limiting law stays Gaussian: the mean is conserved (the drift averages
    to zero over the cloud) and the variance solves v' = -2 alpha v + sigma^2,
    i.e. v(t) = s + (v0 - s) exp(-2 alpha t) with s = sigma^2 / (2 alpha).
    alpha = 0 (pure diffusion, no interaction) is allowed as the degenerate
    case with v(t) = v0 + sigma^2 t.
    """
    for name, val in (("alpha", alpha), ("sigma", sigma), ("init_mean", init_mean),
                      ("init_var", init_var)):
        if not np.isfinite(val):
            raise ConfigurationError(f"{name} must be finite")
    if alpha < 0:
        raise ConfigurationError("alpha must be non-negative")
    if sigma < 0 or init_var < 0:
        raise ConfigurationError("sigma and init_var must be non-negative")

    alpha = float(alpha)
    sigma = float(sigma)

    def var(t: float) -> float:
        if alpha == 0.0:
            return init_var + sigma * sigma * t
        s = sigma * sigma / (2.0 * alpha)
        return s + (init_var - s) * math.exp(-2.0 * alpha * t)

    analytic = AnalyticReference(
        mean=lambda t: float(init_mean),
        variance=var,
        drift_mean_field=lambda states, t: -alpha * (states - init_mean),
    )

    def drift_all(states: np.ndarray, mu_points: np.ndarray) -> np.ndarray:
        return -alpha * (states - mu_points.mean(axis=0))

    return ModelSpec(
        dim=1,
        drift=lambda x, mu: -alpha * (x - mu.points.mean(axis=0)),
        drift_all=drift_all,
        diffusion=lambda x, mu: np.array([[sigma]]),
        constant_sigma=True,
        sigma_const=np.array([[sigma]]),
        smoothness_class=4,
        initial_law=gaussian_law(init_mean, init_var),
        analytic=analytic,
        linear=True,
        tag="mean_field_ou",
        params={"alpha": alpha, "sigma": sigma, "init_mean": float(init_mean),
                "init_var": float(init_var)},
    )


def kuramoto(K: float, sigma: float, init_var: float = 1.0) -> ModelSpec:
    """Sine-coupled oscillators b(x, mu) = K * integral of sin(y - x) dmu, constant sigma.

    The drift is bounded by |K| with all derivatives bounded.  The mean-field
    term factorizes, sin(y - x) = sin(y) cos(x) - cos(y) sin(x), so one pass
    over the cloud serves every particle (the cost model still charges N^2).
    """
    for name, val in (("K", K), ("sigma", sigma)):
        if not np.isfinite(val):
            raise ConfigurationError(f"{name} must be finite")
    if sigma < 0:
        raise ConfigurationError("sigma must be non-negative")

    K = float(K)
    sigma = float(sigma)

    def drift_all(states: np.ndarray, mu_points: np.ndarray) -> np.ndarray:
        s = np.sin(mu_points[:, 0]).mean()
        c = np.cos(mu_points[:, 0]).mean()
        x = states[:, 0]
        return (K * (s * np.cos(x) - c * np.sin(x)))[:, None]

    def drift(x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        return np.array([K * np.mean(np.sin(mu.points[:, 0] - x[0]))])

    return ModelSpec(
        dim=1,
        drift=drift,
        drift_all=drift_all,
        diffusion=lambda x, mu: np.array([[sigma]]),
        constant_sigma=True,
        sigma_const=np.array([[sigma]]),
        smoothness_class=4,
        initial_law=gaussian_law(0.0, init_var),
        analytic=None,
        linear=False,
        tag="kuramoto",
        params={"K": K, "sigma": sigma, "init_var": float(init_var)},
    )


MODELS = {
    "mean_field_ou": mean_field_ou,
    "kuramoto": kuramoto,
}


def get_model(name: str, **params) -> ModelSpec:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown model {name!r}; available: {sorted(MODELS)}"
        ) from None
    return factory(**params)
