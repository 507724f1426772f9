"""Equilibrium distributions of the body-alignment kinetic operator.

The equilibria form a von Mises-type family on the rotation group,

    M_L(A) = exp(sigma(A . L) / d) / Z,

where ``L`` is the mean attitude, ``d`` the dimensionless noise, ``nu`` the
alignment rate, and ``sigma`` its antiderivative.  By left invariance every
quantity reduces to the angle marginal ``w(theta) ~ sin^2(theta/2) m(theta)``
with ``m(theta) = exp(sigma(1/2 + cos theta) / d)``, which is what the
normalizer, sampler, and flux constant below are built on.  The module also
evaluates the full collision operator on an axis-angle grid as a validation
oracle.

Densities are handled in log space throughout, so small ``d`` does not
overflow; the normalizer is also available as a logarithm for that regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from . import so3
from .errors import SingularMatrixError
from .so3grid import So3Grid, weighted_divergence

__all__ = [
    "NuSpec",
    "CustomNu",
    "EquilibriumParams",
    "ThetaDensityTable",
    "log_normalizer_Z",
    "normalizer_Z",
    "density",
    "sample",
    "flux_constant_c1",
    "matrix_mean",
    "collision_operator_Q",
    "QEvaluation",
    "default_quadrature",
]

# A . L lives in [-3/2, 3/2]; nu only ever gets evaluated there.
MU_RANGE = (-1.5, 1.5)


@dataclass(frozen=True)
class NuSpec:
    """Polynomial alignment rate ``nu(mu)`` with exact antiderivative.

    ``coefficients[i]`` multiplies ``mu**i``.  The antiderivative ``sigma``
    (fixed by ``sigma(0) = 0``) is taken term by term, so no numerical
    antiderivative error feeds the downstream constants.  ``nu`` must be
    positive on the reachable range of ``mu``; the all-zero spec is reserved
    for the uniform limiting case and must be requested explicitly.
    """

    coefficients: tuple[float, ...] = (1.0,)
    limit_uniform: bool = False

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        if self.limit_uniform:
            if any(c != 0.0 for c in coeffs):
                raise ValueError("uniform limiting spec must have zero coefficients")
            return
        grid = np.linspace(*MU_RANGE, 1000)
        values = self.nu(grid)
        if np.min(values) <= 0.0:
            raise ValueError(
                "nu must be positive on [-3/2, 3/2]; "
                f"min over the check grid is {np.min(values):.3e}"
            )

    @classmethod
    def constant(cls, value: float = 1.0) -> "NuSpec":
        return cls((float(value),))

    @classmethod
    def polynomial(cls, coefficients) -> "NuSpec":
        return cls(tuple(coefficients))

    @classmethod
    def uniform(cls) -> "NuSpec":
        """Limiting spec with ``nu = 0``: all densities become uniform."""
        return cls((0.0,), limit_uniform=True)

    @property
    def kind(self) -> str:
        if self.limit_uniform:
            return "uniform"
        return "constant" if len(self.coefficients) == 1 else "polynomial"

    def nu(self, mu):
        mu = np.asarray(mu, dtype=float)
        out = np.zeros_like(mu)
        for c in reversed(self.coefficients):
            out = out * mu + c
        return out

    __call__ = nu

    def sigma(self, mu):
        mu = np.asarray(mu, dtype=float)
        out = np.zeros_like(mu)
        for i in reversed(range(len(self.coefficients))):
            out = out * mu + self.coefficients[i] / (i + 1)
        return out * mu

    def nu_max(self) -> float:
        grid = np.linspace(*MU_RANGE, 1000)
        return float(np.max(np.abs(self.nu(grid))))

    def label(self) -> str:
        return "+".join(
            f"{c:g}*mu^{i}" if i else f"{c:g}" for i, c in enumerate(self.coefficients)
        )


@dataclass(frozen=True)
class CustomNu:
    """User-supplied alignment rate with a matching antiderivative."""

    nu_fn: Callable
    sigma_fn: Callable

    def nu(self, mu):
        return self.nu_fn(mu)

    __call__ = nu

    def sigma(self, mu):
        return self.sigma_fn(mu)

    def nu_max(self) -> float:
        grid = np.linspace(*MU_RANGE, 1000)
        return float(np.max(np.abs(np.asarray(self.nu_fn(grid)))))

    def label(self) -> str:
        return "custom"


@dataclass(frozen=True)
class EquilibriumParams:
    """Alignment rate and dimensionless noise defining one equilibrium family."""

    nu: NuSpec
    d: float

    def __post_init__(self):
        if not self.d > 0.0:
            raise ValueError(f"noise d must be positive, got {self.d}")

    def log_m(self, theta):
        """Log of the unnormalized angle factor ``m(theta)``."""
        theta = np.asarray(theta, dtype=float)
        return self.nu.sigma(0.5 + np.cos(theta)) / self.d

    def log_m_max(self) -> float:
        grid = np.linspace(0.0, np.pi, 2001)
        return float(np.max(self.log_m(grid)))

    def m_scaled(self, theta):
        """``m(theta)`` normalized by its maximum; safe for any ``d``."""
        return np.exp(self.log_m(theta) - self.log_m_max())


@lru_cache(maxsize=1)
def _theta_rule(n_nodes: int = 6144):
    return so3.composite_gauss_legendre(n_nodes, 0.0, np.pi)


def _theta_quad(fn) -> float:
    """Integral over the angle with a dense composite Gauss-Legendre rule.

    Deterministic and accurate to roughly machine precision for the smooth,
    possibly strongly concentrated integrands used here (peak widths stay
    above the panel width for d down to 1e-4).
    """
    nodes, weights = _theta_rule()
    return float(weights @ fn(nodes))


@lru_cache(maxsize=128)
def log_normalizer_Z(params: EquilibriumParams) -> float:
    """Logarithm of the normalizer, robust for strongly concentrated densities."""
    shift = params.log_m_max()
    integral = _theta_quad(
        lambda t: so3.haar_weight(t) * np.exp(params.log_m(t) - shift)
    )
    return shift + math.log(integral)


def normalizer_Z(params: EquilibriumParams) -> float:
    """Normalizer ``Z``; overflows to ``inf`` when ``log Z`` exceeds float range."""
    log_z = log_normalizer_Z(params)
    try:
        return math.exp(log_z)
    except OverflowError:
        return math.inf


def density(params: EquilibriumParams, mean_attitude, A):
    """Equilibrium density at ``A`` (batched over leading dimensions of ``A``).

    Satisfies ``density(p, L, A) == density(p, Id, L^T A)``.
    """
    mu = so3.inner(A, mean_attitude)
    return np.exp(params.nu.sigma(mu) / params.d - log_normalizer_Z(params))


@dataclass
class ThetaDensityTable:
    """Tabulated angle marginal with an inverse-CDF sampler.

    ``density`` is the normalized marginal ``w(theta)``; the inverse CDF is a
    monotone cubic through the strictly increasing part of the cumulative
    table.
    """

    theta: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    _inverse: PchipInterpolator = field(repr=False)

    @classmethod
    def build(cls, params: EquilibriumParams, n_nodes: int = 4096) -> "ThetaDensityTable":
        theta = np.linspace(0.0, np.pi, n_nodes + 1)
        log_w = 2.0 * np.log(np.maximum(np.sin(0.5 * theta), 1e-300)) + params.log_m(
            theta
        )
        w = np.exp(log_w - np.max(log_w))
        total = np.trapezoid(w, theta)
        w /= total
        cdf = integrate.cumulative_trapezoid(w, theta, initial=0.0)
        cdf /= cdf[-1]
        keep = np.concatenate(([True], np.diff(cdf) > 0.0))
        inverse = PchipInterpolator(cdf[keep], theta[keep], extrapolate=False)
        return cls(theta=theta, density=w, cdf=cdf, _inverse=inverse)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        lo, hi = self._inverse.x[0], self._inverse.x[-1]
        return np.asarray(self._inverse(np.clip(u, lo, hi)))

    def bin_probabilities(self, edges) -> np.ndarray:
        """Probability mass of the marginal between consecutive edges."""
        cdf_at = np.interp(edges, self.theta, self.cdf)
        return np.diff(cdf_at)

    def equal_probability_edges(self, n_bins: int) -> np.ndarray:
        u = np.linspace(0.0, 1.0, n_bins + 1)
        lo, hi = self._inverse.x[0], self._inverse.x[-1]
        edges = np.asarray(self._inverse(np.clip(u, lo, hi)))
        edges[0], edges[-1] = 0.0, np.pi
        return edges


@lru_cache(maxsize=32)
def _cached_table(params: EquilibriumParams, n_nodes: int) -> ThetaDensityTable:
    return ThetaDensityTable.build(params, n_nodes)


def sample(
    params: EquilibriumParams,
    mean_attitude,
    rng: np.random.Generator,
    size=None,
    table: ThetaDensityTable | None = None,
    method: str = "inverse_cdf",
):
    """Draw rotations from the equilibrium density around ``mean_attitude``.

    The angle comes from the tabulated marginal (or, as a cross-check mode,
    by rejection from the invariant angle marginal -- only sensible for
    moderate ``d``), the axis is uniform, and the result is
    ``mean_attitude @ exp(theta hat(n))``.
    """
    scalar = size is None
    n = 1 if scalar else int(size)
    if method == "inverse_cdf":
        if table is None:
            table = _cached_table(params, 4096)
        theta = table.draw(rng, n)
    elif method == "rejection":
        theta = _rejection_angles(params, rng, n)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    axes = so3.sphere_sample(rng, n)
    out = np.asarray(mean_attitude) @ so3.exp_body(theta[:, None] * axes)
    return out[0] if scalar else out


def _rejection_angles(params, rng, n, max_rounds: int = 10000):
    out = np.empty(n)
    filled = 0
    for _ in range(max_rounds):
        want = n - filled
        theta = so3._HAAR_TABLE.draw(rng, 2 * want + 16)
        accept = rng.random(theta.shape) < params.m_scaled(theta)
        got = theta[accept][:want]
        out[filled : filled + len(got)] = got
        filled += len(got)
        if filled == n:
            return out
    raise RuntimeError("rejection sampler failed to fill the request")


@lru_cache(maxsize=8)
def default_quadrature(n_theta: int = 256, n_sphere: int = 302) -> so3.So3Quadrature:
    return so3.So3Quadrature(n_theta, n_sphere)


def flux_constant_c1(params: EquilibriumParams) -> float:
    """Flux contraction factor: mean attitude times this is the matrix mean.

    ``(2/3) <1/2 + cos theta>`` under the angle marginal; always in (0, 1).
    """
    shift = params.log_m_max()

    def weight(t):
        return np.sin(0.5 * t) ** 2 * np.exp(params.log_m(t) - shift)

    num = _theta_quad(lambda t: (0.5 + np.cos(t)) * weight(t))
    den = _theta_quad(weight)
    return (2.0 / 3.0) * num / den


def matrix_mean(
    f,
    quadrature: so3.So3Quadrature | None = None,
    vectorized: bool = False,
) -> np.ndarray:
    """First matrix moment ``integral of A f(A)`` of a density on the group."""
    q = quadrature if quadrature is not None else default_quadrature()
    if vectorized:
        values = np.asarray(f(q.rotations), dtype=float)
    else:
        values = np.array([f(A) for A in q.rotations], dtype=float)
    return q.integrate_values(q.rotations * values[:, None, None])


@dataclass
class QEvaluation:
    """Collision operator sampled on an axis-angle grid.

    ``values[i, j, k]`` approximates ``Q(f)`` at ``mean_attitude @ B`` where
    ``B`` is the grid rotation; ``f_over_m`` is ``f / M`` at the same nodes
    (the quantity whose gradient drives the operator).
    """

    grid: So3Grid
    mean_attitude: np.ndarray
    values: np.ndarray
    f_values: np.ndarray
    f_over_m: np.ndarray

    def rotations(self) -> np.ndarray:
        """Physical rotations of the grid nodes, ``mean_attitude @ B``."""
        return self.mean_attitude @ self.grid.rotations()

    def mass(self) -> float:
        return self.grid.integrate(self.values)

    def entropy_production(self) -> float:
        """Discrete ``integral of Q(f) f / M``; non-positive by construction."""
        return self.grid.integrate(self.values * self.f_over_m)

    def integrate_against(self, g, vectorized: bool = False) -> float:
        """Integral of ``Q(f) g`` for a function ``g`` of the rotation."""
        R = self.rotations().reshape(-1, 3, 3)
        if vectorized:
            g_vals = np.asarray(g(R), dtype=float).reshape(self.grid.shape)
        else:
            g_vals = np.array([g(A) for A in R], dtype=float).reshape(self.grid.shape)
        return self.grid.integrate(self.values * g_vals)


def collision_operator_Q(
    f,
    params: EquilibriumParams,
    grid: So3Grid | None = None,
    quadrature: so3.So3Quadrature | None = None,
    vectorized: bool = False,
) -> QEvaluation:
    """Evaluate the collision operator ``d div(M grad(f / M))`` on a grid.

    The mean attitude is the polar factor of the matrix mean of ``f``; a
    matrix mean that is singular relative to the mass of ``f`` propagates
    :class:`SingularMatrixError` (the mass sets the scale -- a disordered
    density has a near-zero mean no matter how it is normalized).  The
    operator is evaluated in the frame of that attitude, where the
    equilibrium weight depends on the angle alone, using the conservative
    discretization of :mod:`bodyflock.so3grid`; mass conservation,
    self-adjointness, and the sign of the entropy production are inherited
    exactly from that form.
    """
    if grid is None:
        grid = So3Grid()
    q = quadrature if quadrature is not None else default_quadrature()
    if vectorized:
        node_values = np.asarray(f(q.rotations), dtype=float)
    else:
        node_values = np.array([f(A) for A in q.rotations], dtype=float)
    lam = q.integrate_values(q.rotations * node_values[:, None, None])
    mass = float(q.integrate_values(node_values))
    eps_det = max(
        1e-9 * float(np.linalg.norm(lam)) ** 3, 1e-12 * abs(mass) ** 3
    )
    mean_attitude = so3.polar_rotation(lam, eps_det=eps_det)

    R_body = grid.rotations()
    stacked = (mean_attitude @ R_body).reshape(-1, 3, 3)
    if vectorized:
        f_values = np.asarray(f(stacked), dtype=float).reshape(grid.shape)
    else:
        f_values = np.array([f(A) for A in stacked], dtype=float).reshape(grid.shape)

    m_cells = params.m_scaled(grid.theta)
    m_faces = params.m_scaled(grid.theta_faces)
    h = f_values / m_cells[:, None, None]
    values = params.d * weighted_divergence(grid, h, m_cells, m_faces)

    # f / M with the true normalization, for entropy-production reporting
    scale = math.exp(
        min(log_normalizer_Z(params) - params.log_m_max(), 700.0)
    )
    return QEvaluation(
        grid=grid,
        mean_attitude=mean_attitude,
        values=values,
        f_values=f_values,
        f_over_m=h * scale,
    )
