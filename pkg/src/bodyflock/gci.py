"""Collision-invariant profile solve and the macroscopic transport constants.

The non-conserved part of the macroscopic dynamics is closed by a family of
functions indexed by an antisymmetric matrix ``P``,

    psi(A) = (P . L^T A) * psi0_bar(L . A),

whose scalar profile reduces, in the angle variable, to the degenerate
Sturm-Liouville problem

    s^-2 (s^2 m (sin(t) f)')' - m sin(t) / (2 s^2) f = m sin(t),

with ``s = sin(t/2)``, ``m`` the equilibrium angle factor, and natural
endpoint behavior dictated by the vanishing weights.  :func:`solve_psi0`
discretizes the equivalent weak form

    -int m [ s^2 (sin f)'(sin g)' + sin(t)^2 f g / 2 ] dt
        = int sin(t)^2 s^2 m g dt    for all test g

with piecewise-linear elements on a uniform grid; the bilinear form is
symmetric negative definite, so the solve cannot fail for positive ``m``.
The profile is negative throughout, as the maximum principle requires.

:func:`coefficients` turns the profile into the transport constants

    c2 = <2 + 3 cos t> / 5,   c3 = d <1 / nu(1/2 + cos t)>,
    c4 = <1 - cos t> / 5,

where the average is taken against ``mtilde(t) sin^2(t/2)`` with
``mtilde = nu(1/2 + cos t) sin^2(t) m(t) psi0(t)``; the overall scale and
sign of the profile cancel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import spsolve

from . import parallel, so3
from .equilibria import EquilibriumParams, flux_constant_c1, log_normalizer_Z, normalizer_Z
from .errors import DegenerateWeightError, SolveFailureError
from .so3grid import So3Grid, weighted_divergence

__all__ = [
    "GciSolution",
    "CoeffSet",
    "solve_psi0",
    "strong_residual_norm",
    "coefficients",
    "gci_evaluate",
    "gci_residual",
    "sphere_moment_identity",
]


@dataclass
class GciSolution:
    """Scalar profile of the collision invariants on a uniform angle grid."""

    theta: np.ndarray
    values: np.ndarray
    params: EquilibriumParams
    _spline: CubicSpline | None = field(default=None, repr=False, compare=False)

    def interpolant(self) -> CubicSpline:
        """Cubic spline of the profile, clamped to zero slope at both ends.

        The profile extends to an even, 2 pi - periodic function of the
        angle, which forces vanishing derivatives at 0 and pi.
        """
        if self._spline is None:
            self._spline = CubicSpline(
                self.theta, self.values, bc_type=((1, 0.0), (1, 0.0))
            )
        return self._spline

    def profile(self, theta):
        """Profile evaluated at arbitrary angles (clamped to ``[0, pi]``)."""
        t = np.clip(np.asarray(theta, dtype=float), 0.0, np.pi)
        return self.interpolant()(t)

    def profile_mu(self, mu):
        """Profile as a function of the trace variable ``mu = 1/2 + cos(t)``."""
        t = np.arccos(np.clip(np.asarray(mu, dtype=float) - 0.5, -1.0, 1.0))
        return self.interpolant()(t)

    def weighted_norm_sq(self) -> float:
        """Grid estimate of ``int f^2 sin^2 t dt`` (finite for members of the
        natural weighted space)."""
        return float(
            np.trapezoid(self.values**2 * np.sin(self.theta) ** 2, self.theta)
        )


@dataclass
class CoeffSet:
    """Transport constants of the macroscopic system for one parameter set."""

    params: EquilibriumParams
    z: float
    log_z: float
    c1: float
    c2: float
    c3: float
    c4: float
    gci: GciSolution
    meta: dict

    def as_dict(self, n_profile_samples: int = 65) -> dict:
        stride = max(1, (len(self.gci.theta) - 1) // (n_profile_samples - 1))
        return {
            "nu": list(getattr(self.params.nu, "coefficients", ())),
            "d": self.params.d,
            "Z": self.z,
            "log_Z": self.log_z,
            "c1": self.c1,
            "c2": self.c2,
            "c3": self.c3,
            "c4": self.c4,
            "psi0_samples": {
                "theta": [float(t) for t in self.gci.theta[::stride]],
                "values": [float(v) for v in self.gci.values[::stride]],
            },
            "meta": dict(self.meta),
        }


_ELEMENT_NODES, _ELEMENT_WEIGHTS = np.polynomial.legendre.leggauss(4)


def solve_psi0(params: EquilibriumParams, n_nodes: int = 1024) -> GciSolution:
    """Galerkin solve of the profile equation with linear elements.

    Parameters
    ----------
    params : EquilibriumParams
    n_nodes : int
        Node count of the uniform grid on ``[0, pi]``; at least 64.

    Notes
    -----
    No essential boundary conditions are imposed: the weights ``sin^2(t/2)``
    and ``sin^2 t`` vanish at the endpoints, so the natural conditions are
    the correct ones.  The equilibrium factor enters only up to scale, hence
    the normalized ``m`` is used and no overflow can occur for small noise.
    """
    if n_nodes < 64:
        raise ValueError("n_nodes must be at least 64")
    theta = np.linspace(0.0, np.pi, n_nodes)
    h = theta[1] - theta[0]

    # 4-point Gauss points of every element, vectorized over elements
    mid = 0.5 * (theta[:-1] + theta[1:])
    tq = mid[:, None] + 0.5 * h * _ELEMENT_NODES[None, :]
    wq = 0.5 * h * _ELEMENT_WEIGHTS[None, :]

    m = params.m_scaled(tq)
    s2 = np.sin(0.5 * tq) ** 2
    sin2 = np.sin(tq) ** 2
    sin_t = np.sin(tq)
    cos_t = np.cos(tq)

    # local basis: left hat descends, right hat ascends on each element
    phi_left = (theta[1:, None] - tq) / h
    phi_right = (tq - theta[:-1, None]) / h
    dphi_left, dphi_right = -1.0 / h, 1.0 / h
    # derivative of sin(t) * phi for each local basis function
    g_left = cos_t * phi_left + sin_t * dphi_left
    g_right = cos_t * phi_right + sin_t * dphi_right

    def a_local(phi_i, g_i, phi_j, g_j):
        return -np.sum(m * wq * (s2 * g_i * g_j + 0.5 * sin2 * phi_i * phi_j), axis=1)

    a_ll = a_local(phi_left, g_left, phi_left, g_left)
    a_lr = a_local(phi_left, g_left, phi_right, g_right)
    a_rr = a_local(phi_right, g_right, phi_right, g_right)

    diag = np.zeros(n_nodes)
    diag[:-1] += a_ll
    diag[1:] += a_rr
    off = a_lr
    matrix = sparse.diags_array(
        [off, diag, off], offsets=[-1, 0, 1], format="csc"
    )

    load = np.zeros(n_nodes)
    b_left = np.sum(wq * sin2 * s2 * m * phi_left, axis=1)
    b_right = np.sum(wq * sin2 * s2 * m * phi_right, axis=1)
    load[:-1] += b_left
    load[1:] += b_right

    values = spsolve(matrix, load)
    if not np.all(np.isfinite(values)):
        raise SolveFailureError("profile solve produced non-finite values")
    residual = matrix @ values - load
    meta_norm = float(np.linalg.norm(residual)) / max(float(np.linalg.norm(load)), 1e-300)
    if meta_norm > 1e-10:
        raise SolveFailureError(f"profile solve did not converge: residual {meta_norm:.2e}")
    return GciSolution(theta=theta, values=values, params=params)


def strong_residual_norm(sol: GciSolution) -> float:
    """Weighted L2 norm of the strong-form equation residual at the nodes.

    Second-order finite differences of the solved profile are inserted into
    the strong form; the norm decays at second order under grid refinement.
    """
    theta = sol.theta
    h = theta[1] - theta[0]
    params = sol.params
    g = np.sin(theta) * sol.values
    faces = 0.5 * (theta[:-1] + theta[1:])
    coef = np.sin(0.5 * faces) ** 2 * params.m_scaled(faces)
    flux = coef * (g[1:] - g[:-1]) / h
    interior = slice(1, -1)
    t = theta[interior]
    s2 = np.sin(0.5 * t) ** 2
    div = (flux[1:] - flux[:-1]) / (h * s2)
    m_t = params.m_scaled(t)
    residual = div - m_t * np.sin(t) / (2.0 * s2) * sol.values[interior] - np.sin(t) * m_t
    weight = s2 * (2.0 / np.pi) * h
    return float(np.sqrt(np.sum(residual**2 * weight)))


def _average_grid(n_nodes: int = 2048):
    return so3.composite_gauss_legendre(n_nodes, 0.0, np.pi)


def coefficients(
    params: EquilibriumParams,
    sol: GciSolution | None = None,
    n_nodes: int = 1024,
    n_quad: int = 2048,
) -> CoeffSet:
    """Assemble the transport constants from a solved profile.

    ``c1`` comes from the equilibrium flux average; ``c2``, ``c3``, ``c4``
    are averages against ``mtilde sin^2(t/2)`` built from the profile.  For a
    constant rate ``nu`` the identity ``c3 = d`` holds to rounding because
    the inverse-rate factor is exactly one at every quadrature node.

    Raises
    ------
    DegenerateWeightError
        If the weight integrates to zero, which signals a broken profile.
    """
    if sol is None:
        sol = solve_psi0(params, n_nodes=n_nodes)
    elif sol.params != params:
        raise ValueError("profile was solved for different parameters")

    t, w = _average_grid(n_quad)
    mu = 0.5 + np.cos(t)
    nu_t = np.asarray(params.nu.nu(mu), dtype=float)
    mtilde = nu_t * np.sin(t) ** 2 * params.m_scaled(t) * sol.profile(t)
    weight = mtilde * np.sin(0.5 * t) ** 2

    den = float(w @ weight)
    scale = float(w @ np.abs(weight))
    if abs(den) <= 1e-14 * max(scale, 1e-300):
        raise DegenerateWeightError("weight mtilde sin^2(t/2) integrates to zero")

    def average(values):
        return float(w @ (values * weight)) / den

    c2 = 0.2 * average(2.0 + 3.0 * np.cos(t))
    c3 = params.d * average(1.0 / nu_t)
    c4 = 0.2 * average(1.0 - np.cos(t))

    meta = {
        "profile_nodes": len(sol.theta),
        "average_quadrature_nodes": len(t),
        "strong_residual": strong_residual_norm(sol),
        "profile_max": float(np.max(sol.values)),
        "profile_min": float(np.min(sol.values)),
    }
    return CoeffSet(
        params=params,
        z=normalizer_Z(params),
        log_z=log_normalizer_Z(params),
        c1=flux_constant_c1(params),
        c2=c2,
        c3=c3,
        c4=c4,
        gci=sol,
        meta=meta,
    )


def gci_evaluate(sol: GciSolution, mean_attitude, p_vec, A):
    """Collision invariant ``(P . L^T A) psi0_bar(L . A)`` for ``P = hat(p)``.

    Batched over leading dimensions of ``A``.  For ``L^T A`` with angle ``t``
    and axis ``n`` the value reduces to ``sin(t) psi0(t) (p . n)``.
    """
    A = np.asarray(A, dtype=float)
    mean_attitude = np.asarray(mean_attitude, dtype=float)
    B = np.swapaxes(mean_attitude, -1, -2) @ A
    p_term = so3.inner(so3.hat(p_vec), B)
    mu = so3.inner(np.broadcast_to(mean_attitude, A.shape), A)
    return p_term * sol.profile_mu(mu)


@dataclass
class GciResidual:
    """Discrete residual of the defining relation of the invariants."""

    norm: float
    relative: float
    grid: So3Grid


def gci_residual(
    sol: GciSolution,
    mean_attitude,
    p_vec,
    grid: So3Grid | None = None,
) -> GciResidual:
    """Residual of ``div(M grad psi) = (L P . A) M`` on an axis-angle grid.

    Both sides are evaluated in the frame of the mean attitude where the
    equilibrium factor depends on the angle alone; the left side uses the
    conservative discrete divergence, the right side is exact.  Returns the
    weighted L2 norm together with its value relative to the right side.
    The norm decays at second order when the profile grid and the evaluation
    grid are refined together.
    """
    if grid is None:
        grid = So3Grid()
    params = sol.params
    mean_attitude = np.asarray(mean_attitude, dtype=float)
    p_vec = np.asarray(p_vec, dtype=float)

    R_body = grid.rotations()
    psi_vals = gci_evaluate(
        sol, mean_attitude, p_vec, (mean_attitude @ R_body).reshape(-1, 3, 3)
    ).reshape(grid.shape)

    m_cells = params.m_scaled(grid.theta)
    m_faces = params.m_scaled(grid.theta_faces)
    lhs = weighted_divergence(grid, psi_vals, m_cells, m_faces)

    p_dot_n = np.einsum("jka,a->jk", grid.axes, p_vec)
    rhs = (np.sin(grid.theta) * m_cells)[:, None, None] * p_dot_n[None, :, :]

    res_norm = grid.norm(lhs - rhs)
    rhs_norm = grid.norm(rhs)
    return GciResidual(norm=res_norm, relative=res_norm / rhs_norm, grid=grid)


def sphere_moment_identity(
    L,
    n_samples: int = 10**7,
    rng: np.random.Generator | None = None,
    chunk: int = 10**6,
):
    """Monte-Carlo check of ``int (n . L n) (n x n) dn`` against its closed form.

    Returns ``(estimate, closed_form, standard_error)`` as 3x3 arrays; the
    closed form is ``(L + L^T)/15 + tr(L) Id/15`` under the normalized sphere
    measure.  Chunks run on the configured worker count with one child
    stream per chunk, so the estimate is independent of the worker count.
    """
    L = np.asarray(L, dtype=float)
    if rng is None:
        rng = np.random.default_rng(0)
    sizes = [chunk] * (n_samples // chunk)
    if n_samples % chunk:
        sizes.append(n_samples % chunk)
    streams = rng.spawn(len(sizes))

    def accumulate(args):
        stream, m = args
        n = so3.sphere_sample(stream, m)
        q = np.einsum("ni,ij,nj->n", n, L, n)
        contrib = q[:, None, None] * (n[:, :, None] * n[:, None, :])
        return contrib.sum(axis=0), (contrib**2).sum(axis=0)

    parts = parallel.map_ordered(accumulate, zip(streams, sizes))
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    mean = total / n_samples
    var = total_sq / n_samples - mean**2
    stderr = np.sqrt(np.maximum(var, 0.0) / n_samples)
    closed = (L + L.T) / 15.0 + np.trace(L) * np.eye(3) / 15.0
    return mean, closed, stderr
