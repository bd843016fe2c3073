"""Empirical measures on R^d, functionals of measure, and exact small-N Wasserstein-2.

An empirical measure here is always the uniform-weight point cloud
mu = (1/N) sum_i delta_{x_i}.  Functionals reduce per-point contributions with
a fixed binary tree (see ``tree_sum``) so that estimator output is reproducible
for any worker count and so that exact antithetic cancellations survive
floating-point arithmetic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigurationError, UnsupportedInstanceError

_BRUTE_FORCE_MAX = 8


def tree_sum(values: np.ndarray) -> np.ndarray:
    """Sum along axis 0 with a fixed adjacent-pair binary tree.

    The input is zero-padded to the next power of two, then adjacent pairs are
    combined until one value remains.  For a dyadic length 2N the root node
    combines exactly the sums of the two N-halves, so splitting an array at the
    midpoint and summing the parts reproduces the full sum bit-for-bit.  That
    identity is what makes antithetic corrections of linear functionals vanish
    exactly rather than to rounding error.
    """
    a = np.asarray(values, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        raise ConfigurationError("cannot reduce an empty array")
    size = 1 << (n - 1).bit_length()
    if size != n:
        pad = np.zeros((size - n,) + a.shape[1:], dtype=np.float64)
        a = np.concatenate([a, pad], axis=0)
    while a.shape[0] > 1:
        a = a[0::2] + a[1::2]
    return a[0]


def tree_mean(values: np.ndarray) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    return tree_sum(a) / a.shape[0]


class EmpiricalMeasure:
    """Uniform-weight atomic measure (1/N) sum of Dirac masses.

    ``points`` is an (N, d) read-only float array; weights are implicitly 1/N.
    A 1-d input array is interpreted as N points in d=1.
    """

    __slots__ = ("points", "dim")

    def __init__(self, points):
        pts = np.array(points, dtype=np.float64, copy=True)
        if pts.ndim == 0:
            pts = pts.reshape(1, 1)
        elif pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ConfigurationError(f"points must be (N, d), got shape {pts.shape}")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ConfigurationError("measure needs at least one point and one coordinate")
        if not np.all(np.isfinite(pts)):
            raise ConfigurationError("measure points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dim", pts.shape[1])

    def __setattr__(self, name, value):
        raise AttributeError("EmpiricalMeasure is immutable")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def second_moment(self) -> float:
        """Mean squared Euclidean norm of the points."""
        return float(tree_mean(np.sum(self.points * self.points, axis=1)))

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.n}, dim={self.dim})"


@dataclass(frozen=True)
class Functional:
    """A real-valued functional of probability measures.

    ``smoothness_class`` is declared regularity metadata (order of bounded
    derivatives in measure); it is documentation, not verified symbolically.
    ``dim`` restricts the accepted measure dimension (None = any).
    """

    evaluator: Callable[[EmpiricalMeasure], float]
    descriptor: str
    smoothness_class: int = 4
    dim: Optional[int] = None

    def __call__(self, mu: EmpiricalMeasure) -> float:
        return evaluate(self, mu)


def evaluate(phi: Functional, mu: EmpiricalMeasure) -> float:
    """Evaluate phi on mu, checking the dimension contract."""
    if phi.dim is not None and mu.dim != phi.dim:
        raise ConfigurationError(
            f"functional {phi.descriptor!r} expects dim {phi.dim}, measure has dim {mu.dim}"
        )
    return float(phi.evaluator(mu))


def linear_mean() -> Functional:
    """Phi(mu) = integral of x dmu (d=1). Linear: zero antithetic variance."""
    return Functional(
        evaluator=lambda mu: float(tree_mean(mu.points[:, 0])),
        descriptor="linear_mean",
        smoothness_class=4,
        dim=1,
    )


def cos_mean() -> Functional:
    """Phi(mu) = cos(integral of x dmu), the standard smooth nonlinear test case."""
    return Functional(
        evaluator=lambda mu: math.cos(float(tree_mean(mu.points[:, 0]))),
        descriptor="cos_mean",
        smoothness_class=4,
        dim=1,
    )


def square_mean() -> Functional:
    """Phi(mu) = (integral of x dmu)^2."""
    return Functional(
        evaluator=lambda mu: float(tree_mean(mu.points[:, 0])) ** 2,
        descriptor="square_mean",
        smoothness_class=4,
        dim=1,
    )


def second_moment() -> Functional:
    """Phi(mu) = integral of |x|^2 dmu (any dimension)."""
    return Functional(
        evaluator=lambda mu: mu.second_moment(),
        descriptor="second_moment",
        smoothness_class=4,
        dim=None,
    )


FUNCTIONALS = {
    "linear_mean": linear_mean,
    "cos_mean": cos_mean,
    "square_mean": square_mean,
    "second_moment": second_moment,
}


def get_functional(name: str) -> Functional:
    try:
        return FUNCTIONALS[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown functional {name!r}; available: {sorted(FUNCTIONALS)}"
        ) from None


def w2_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W2 between equal-size 1-d empirical measures via sorted matching.

    The monotone (sorted) coupling is optimal in one dimension, so
    W2^2 = (1/N) sum_i (x_(i) - y_(i))^2.
    """
    if mu.dim != 1 or nu.dim != 1:
        raise UnsupportedInstanceError("w2_1d requires one-dimensional measures")
    if mu.n != nu.n:
        raise UnsupportedInstanceError("w2_1d requires equal point counts")
    x = np.sort(mu.points[:, 0])
    y = np.sort(nu.points[:, 0])
    return float(np.sqrt(np.mean((x - y) ** 2)))


def w2_exact_small(mu: EmpiricalMeasure, nu: EmpiricalMeasure, cap: int = 10) -> float:
    """Exact W2 between equal-size uniform empirical measures at small N.

    Solves the optimal assignment under squared Euclidean cost: brute force
    over permutations up to N=8, the Hungarian algorithm above.  Intended as a
    test oracle, hence the size cap.
    """
    if mu.n != nu.n:
        raise UnsupportedInstanceError("w2_exact_small requires equal point counts")
    if mu.dim != nu.dim:
        raise UnsupportedInstanceError("w2_exact_small requires equal dimensions")
    n = mu.n
    if n > cap:
        raise UnsupportedInstanceError(f"N={n} above the exact-W2 cap {cap}")
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    cost = np.sum(diff * diff, axis=2)
    if n <= _BRUTE_FORCE_MAX:
        rows = np.arange(n)
        best = min(cost[rows, perm].sum() for perm in itertools.permutations(range(n)))
    else:
        rows, cols = linear_sum_assignment(cost)
        best = cost[rows, cols].sum()
    return float(np.sqrt(best / n))


def mix_with_atom(eta, m: EmpiricalMeasure, n: int) -> EmpiricalMeasure:
    """The N-point measure (1/N) delta_eta + ((N-1)/N) m, with m on N-1 points."""
    eta_arr = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    if m.n != n - 1:
        raise ConfigurationError(
            f"mixture needs m on {n - 1} points to form an {n}-point measure, got {m.n}"
        )
    if eta_arr.shape != (m.dim,):
        raise ConfigurationError(f"atom must be a vector in R^{m.dim}")
    return EmpiricalMeasure(np.vstack([eta_arr[None, :], m.points]))
