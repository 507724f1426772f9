"""Geometry of the 3-d rotation group.

Rotations are plain ``(3, 3)`` numpy arrays; most functions broadcast over
leading batch dimensions.  The module provides the axis-angle chart
(Rodrigues map and its inverse), the trace inner product ``A . B = tr(A^T B)/2``
and the tangent-space calculus built on it, the polar factor of a 3x3 matrix,
and the normalized invariant measure in axis-angle form together with
quadrature and sampling routines for it.

Conventions:

* ``hat(u)`` is the antisymmetric matrix with ``hat(u) @ v == cross(u, v)``.
* The angle of a rotation lives in ``[0, pi]``; ``tr(A) = 1 + 2 cos(theta)``.
* With the ``tr/2`` normalization the three matrices ``A @ hat(e_k)`` form an
  orthonormal basis of the tangent space at ``A``, and the marginal density
  of the angle under the invariant measure is
  ``haar_weight(theta) = (2/pi) sin^2(theta/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import parallel
from .errors import (
    DomainError,
    NegativeDeterminantError,
    NotAntisymmetricError,
    SingularMatrixError,
)

__all__ = [
    "AxisAngle",
    "TangentVector",
    "hat",
    "vee",
    "from_axis_angle",
    "exp_body",
    "to_axis_angle",
    "rotation_angle",
    "inner",
    "project_tangent",
    "polar_rotation",
    "polar_rotation_many",
    "is_rotation",
    "haar_weight",
    "SphereRule",
    "So3Quadrature",
    "so3_quadrature",
    "haar_sample",
    "sphere_sample",
    "grad_axis_angle",
    "laplacian_axis_angle",
    "geodesic_relax",
]

IDENTITY = np.eye(3)
E1, E2, E3 = IDENTITY

# Angle below which the rotation axis is reported as the canonical e1, and
# angle margin below pi where axis recovery switches to the eigenvector branch
# (the antisymmetric part of the matrix vanishes at pi).
_THETA_ZERO = 1e-12
_THETA_PI_SWITCH = 1e-4


class AxisAngle(NamedTuple):
    """Angle in ``[0, pi]`` and unit axis of a rotation."""

    theta: float
    axis: np.ndarray


@dataclass(frozen=True)
class TangentVector:
    """Tangent matrix at ``base``, stored through its body-frame coordinates.

    The actual tangent matrix is ``base @ hat(body)``; by construction
    ``base.T @ matrix`` is antisymmetric exactly.
    """

    base: np.ndarray
    body: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.base @ hat(self.body)


def hat(u) -> np.ndarray:
    """Map a 3-vector to the antisymmetric matrix acting as ``u x .``.

    Broadcasts over leading dimensions: ``(..., 3) -> (..., 3, 3)``.
    """
    u = np.asarray(u, dtype=float)
    m = np.zeros(u.shape[:-1] + (3, 3))
    m[..., 0, 1] = -u[..., 2]
    m[..., 0, 2] = u[..., 1]
    m[..., 1, 0] = u[..., 2]
    m[..., 1, 2] = -u[..., 0]
    m[..., 2, 0] = -u[..., 1]
    m[..., 2, 1] = u[..., 0]
    return m


def vee(m, tol: float = 1e-10) -> np.ndarray:
    """Inverse of :func:`hat` on antisymmetric matrices.

    Raises
    ------
    NotAntisymmetricError
        If ``|m + m^T| > tol * |m|`` in Frobenius norm.
    """
    m = np.asarray(m, dtype=float)
    defect = np.linalg.norm(m + np.swapaxes(m, -1, -2))
    if defect > tol * max(np.linalg.norm(m), 1e-300):
        raise NotAntisymmetricError(
            f"matrix is not antisymmetric: |m + m^T| = {defect:.3e}"
        )
    return _vee_unchecked(m)


def _vee_unchecked(m: np.ndarray) -> np.ndarray:
    a = 0.5 * (m - np.swapaxes(m, -1, -2))
    return np.stack([a[..., 2, 1], a[..., 0, 2], a[..., 1, 0]], axis=-1)


def exp_body(v) -> np.ndarray:
    """Rodrigues map of a rotation vector: ``exp(hat(v))``, batched.

    ``v`` has shape ``(..., 3)``; the angle is ``|v|`` and the axis ``v/|v|``.
    Small angles use the series for ``sin(t)/t`` and ``(1-cos t)/t^2`` so the
    map is smooth through zero.  Entries are assembled directly from
    ``(1 - b t^2) Id + a hat(v) + b v v^T`` -- this sits on the hot path of
    the particle stepper.
    """
    v = np.asarray(v, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    theta2 = x * x + y * y + z * z
    theta = np.sqrt(theta2)
    small = theta < 1e-6
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / theta)
        b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / theta2)
    c = 1.0 - b * theta2
    out = np.empty(v.shape[:-1] + (3, 3))
    out[..., 0, 0] = c + b * x * x
    out[..., 0, 1] = b * x * y - a * z
    out[..., 0, 2] = b * x * z + a * y
    out[..., 1, 0] = b * x * y + a * z
    out[..., 1, 1] = c + b * y * y
    out[..., 1, 2] = b * y * z - a * x
    out[..., 2, 0] = b * x * z - a * y
    out[..., 2, 1] = b * y * z + a * x
    out[..., 2, 2] = c + b * z * z
    return out


def from_axis_angle(theta, axis) -> np.ndarray:
    """Rotation of angle ``theta`` about the unit vector ``axis``.

    ``Id + sin(theta) hat(axis) + (1 - cos(theta)) hat(axis)^2``, equal to the
    matrix exponential of ``theta * hat(axis)``.
    """
    axis = np.asarray(axis, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n = hat(axis)
    return (
        IDENTITY
        + np.sin(theta)[..., None, None] * n
        + (1.0 - np.cos(theta))[..., None, None] * (n @ n)
    )


def rotation_angle(A) -> np.ndarray:
    """Angle in ``[0, pi]`` of one or many rotations, ``arccos((tr - 1)/2)``."""
    A = np.asarray(A, dtype=float)
    tr = np.einsum("...ii->...", A)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))


def to_axis_angle(A) -> AxisAngle:
    """Recover axis-angle parameters of a single rotation matrix.

    The axis comes from the antisymmetric part away from ``theta = pi`` and
    from the dominant eigenvector of the symmetric part near ``pi``, where the
    antisymmetric part vanishes.  At ``theta = 0`` the axis is reported as the
    canonical ``e1``; at ``theta = pi`` either orientation is valid.
    """
    A = np.asarray(A, dtype=float)
    theta = float(rotation_angle(A))
    if theta < _THETA_ZERO:
        return AxisAngle(0.0, E1.copy())
    if theta > np.pi - _THETA_PI_SWITCH:
        # symmetric part: (A + A^T)/2 = Id + (1 - cos)(n n^T - Id)
        sym = 0.5 * (A + A.T)
        outer = IDENTITY + (sym - IDENTITY) / (1.0 - np.cos(theta))
        w, vecs = np.linalg.eigh(outer)
        axis = vecs[:, np.argmax(w)]
        axis = axis / np.linalg.norm(axis)
        # orient along the (tiny) antisymmetric part when it is usable
        residual = _vee_unchecked(A)
        if np.dot(residual, axis) < 0.0:
            axis = -axis
        return AxisAngle(theta, axis)
    axis = _vee_unchecked(A) / np.sin(theta)
    return AxisAngle(theta, axis / np.linalg.norm(axis))


def inner(a, b) -> np.ndarray:
    """Trace inner product ``tr(a^T b) / 2``, batched over leading dims."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.5 * np.einsum("...ij,...ij->...", a, b)


def project_tangent(A, M) -> np.ndarray:
    """Orthogonal projection of a matrix onto the tangent space at ``A``.

    ``(M - A M^T A) / 2``; the result is ``A`` times an antisymmetric matrix
    and the complement ``M - P(M)`` is ``A`` times a symmetric one.
    """
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    return 0.5 * (M - A @ np.swapaxes(M, -1, -2) @ A)


def is_rotation(A, tol: float = 1e-10) -> bool:
    """Check orthogonality and unit determinant within ``tol``."""
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (3, 3):
        return False
    defect = np.max(np.abs(np.swapaxes(A, -1, -2) @ A - IDENTITY))
    return bool(defect <= tol and np.max(np.abs(np.linalg.det(A) - 1.0)) <= tol)


def _default_eps_det(M: np.ndarray) -> np.ndarray:
    return 1e-9 * np.linalg.norm(M, axis=(-2, -1)) ** 3


def polar_rotation(M, eps_det: float | None = None) -> np.ndarray:
    """Special-orthogonal polar factor ``M (sqrt(M^T M))^{-1}`` of a 3x3 matrix.

    Computed through the symmetric eigendecomposition of ``M^T M``.  Among all
    rotations the result maximizes ``inner(., M)``, i.e. it is the closest
    rotation in the trace metric.

    Parameters
    ----------
    M : (3, 3) array
        Matrix with positive determinant.
    eps_det : float, optional
        Determinant threshold below which the factor is considered undefined.
        Defaults to ``1e-9 * |M|_F^3``.

    Raises
    ------
    SingularMatrixError
        If ``|det M| <= eps_det``.
    NegativeDeterminantError
        If ``det M < -eps_det``; the orthogonal factor would have
        determinant -1 and the caller decides on a fallback.
    """
    M = np.asarray(M, dtype=float)
    det = float(np.linalg.det(M))
    eps = float(_default_eps_det(M)) if eps_det is None else float(eps_det)
    if abs(det) <= eps:
        raise SingularMatrixError(f"det(M) = {det:.3e} within {eps:.3e} of zero")
    if det < 0.0:
        raise NegativeDeterminantError(f"det(M) = {det:.3e} < 0")
    return _polar_positive(M)


def _polar_positive(M: np.ndarray) -> np.ndarray:
    """Polar factor for matrices with positive determinant, batched."""
    w, V = np.linalg.eigh(np.swapaxes(M, -1, -2) @ M)
    w = np.maximum(w, 1e-300)
    inv_sqrt = V @ np.swapaxes(V / np.sqrt(w)[..., None, :], -1, -2)
    return M @ inv_sqrt


def polar_rotation_many(M) -> np.ndarray:
    """Batched polar factor without determinant checks.

    Intended for re-orthonormalizing near-rotation matrices; callers must
    ensure ``det > 0`` themselves.
    """
    return _polar_positive(np.asarray(M, dtype=float))


def haar_weight(theta) -> np.ndarray:
    """Angle marginal ``(2/pi) sin^2(theta/2)`` of the invariant measure."""
    theta = np.asarray(theta, dtype=float)
    return (2.0 / np.pi) * np.sin(0.5 * theta) ** 2


def composite_gauss_legendre(n_nodes: int, a: float, b: float, panel_size: int = 8):
    """Composite Gauss-Legendre rule on ``[a, b]``.

    The interval is split into equal panels of ``panel_size`` nodes; the total
    node count is rounded up to a multiple of the panel size.
    """
    panels = max(1, -(-n_nodes // panel_size))
    x0, w0 = np.polynomial.legendre.leggauss(panel_size)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x0[None, :]).ravel()
    weights = (half[:, None] * w0[None, :]).ravel()
    return nodes, weights


class SphereRule:
    """Quadrature nodes and weights on the unit sphere.

    Product rule: Gauss-Legendre in the cosine of the polar angle times a
    uniform azimuthal grid.  Weights are normalized to a probability measure
    and the node set is antipodally symmetric (even azimuth count), so odd
    integrands vanish exactly.
    """

    def __init__(self, n_nodes: int = 302):
        n_polar = max(2, int(round(np.sqrt(n_nodes / 2.0))))
        n_az = max(4, -(-n_nodes // n_polar))
        if n_az % 2:
            n_az += 1
        cos_phi, w_phi = np.polynomial.legendre.leggauss(n_polar)
        sin_phi = np.sqrt(1.0 - cos_phi**2)
        psi = 2.0 * np.pi * np.arange(n_az) / n_az
        nodes = np.empty((n_polar * n_az, 3))
        nodes[:, 0] = np.outer(sin_phi, np.cos(psi)).ravel()
        nodes[:, 1] = np.outer(sin_phi, np.sin(psi)).ravel()
        nodes[:, 2] = np.outer(cos_phi, np.ones(n_az)).ravel()
        self.nodes = nodes
        self.weights = np.repeat(w_phi / (2.0 * n_az), n_az)

    def __len__(self) -> int:
        return len(self.weights)


class So3Quadrature:
    """Product quadrature for integrals over the rotation group.

    Composite Gauss-Legendre in the angle against ``haar_weight`` times a
    sphere rule in the axis.  ``rotations`` stacks every node as a rotation
    matrix so vectorized integrands can be evaluated in one call.
    """

    def __init__(self, n_theta: int = 256, n_sphere: int = 302):
        self.theta, w_theta = composite_gauss_legendre(n_theta, 0.0, np.pi)
        self.theta_weights = w_theta * haar_weight(self.theta)
        self.sphere = SphereRule(n_sphere)
        # combined flat arrays, theta-major
        self.weights = np.outer(self.theta_weights, self.sphere.weights).ravel()
        axes = np.broadcast_to(
            self.sphere.nodes[None, :, :],
            (len(self.theta), len(self.sphere), 3),
        )
        v = self.theta[:, None, None] * axes
        self._rotations = exp_body(v.reshape(-1, 3))

    @property
    def rotations(self) -> np.ndarray:
        """All quadrature nodes as a stack of rotation matrices, ``(N, 3, 3)``."""
        return self._rotations

    def integrate(self, f: Callable, vectorized: bool = False):
        """Integrate a scalar- or matrix-valued function of a rotation.

        With ``vectorized=True`` the function receives the full ``(N, 3, 3)``
        node stack and must return an array whose leading axis has length N.
        The scalar path maps node chunks over the configured worker count;
        the chunking is fixed, so results do not depend on it.
        """
        if vectorized:
            values = np.asarray(f(self._rotations), dtype=float)
        else:
            chunks = np.array_split(self._rotations, 8 * parallel.default_workers())
            parts = parallel.map_ordered(
                lambda block: [f(A) for A in block], chunks
            )
            values = np.array([v for part in parts for v in part], dtype=float)
        return np.tensordot(self.weights, values, axes=(0, 0))

    def integrate_values(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, values, axes=(0, 0))


def so3_quadrature(f, n_theta: int = 256, n_sphere: int = 302, vectorized: bool = False):
    """One-shot version of :meth:`So3Quadrature.integrate`."""
    return So3Quadrature(n_theta, n_sphere).integrate(f, vectorized=vectorized)


class _HaarAngleTable:
    """Inverse-CDF table for the angle marginal ``haar_weight``.

    The cumulative distribution is ``(theta - sin theta)/pi``; the inverse is
    tabulated once on a dense grid and then interpolated.
    """

    def __init__(self, n: int = 4096):
        self.theta = np.linspace(0.0, np.pi, n + 1)
        self.cdf = (self.theta - np.sin(self.theta)) / np.pi
        self.cdf[-1] = 1.0

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        u = rng.random(size)
        return np.interp(u, self.cdf, self.theta)


_HAAR_TABLE = _HaarAngleTable()


def sphere_sample(rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform unit vectors on the sphere, shape ``(size, 3)`` or ``(3,)``."""
    scalar = size is None
    n = 1 if scalar else int(size)
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v[0] if scalar else v


def haar_sample(rng: np.random.Generator, size=None) -> np.ndarray:
    """Rotations distributed under the invariant probability measure.

    The angle is drawn by inverse CDF from ``haar_weight`` and the axis
    uniformly on the sphere.  Returns ``(3, 3)`` or ``(size, 3, 3)``.
    """
    scalar = size is None
    n = 1 if scalar else int(size)
    theta = _HAAR_TABLE.draw(rng, n)
    axes = sphere_sample(rng, n)
    out = exp_body(theta[:, None] * axes)
    return out[0] if scalar else out


def _tangent_basis(n: np.ndarray):
    """Two unit vectors spanning the tangent plane of the sphere at ``n``."""
    k = np.argmin(np.abs(n))
    t1 = np.cross(n, IDENTITY[k])
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def _sphere_gradient_fd(fbar, theta, n, step):
    t1, t2 = _tangent_basis(n)
    g = np.zeros(3)
    for t in (t1, t2):
        plus = n * np.cos(step) + t * np.sin(step)
        minus = n * np.cos(step) - t * np.sin(step)
        g += (fbar(theta, plus) - fbar(theta, minus)) / (2.0 * step) * t
    return g


def _check_theta_domain(theta: float, margin: float = 1e-6) -> None:
    if not margin < theta < np.pi - margin:
        raise DomainError(f"theta = {theta!r} outside ({margin}, pi - {margin})")


def grad_axis_angle(
    fbar: Callable[[float, np.ndarray], float],
    dtheta: Callable[[float, np.ndarray], float] | None = None,
    sphere_grad: Callable[[float, np.ndarray], np.ndarray] | None = None,
    step: float = 1e-5,
) -> Callable[[float, np.ndarray], TangentVector]:
    """Gradient on the rotation group of a function given in axis-angle form.

    For ``f(A(theta, n)) = fbar(theta, n)`` the gradient at ``A`` is::

        d_theta(fbar) A hat(n)
          + A (cos(theta/2) hat(g) - sin(theta/2) hat(n x g)) / (2 sin(theta/2))

    with ``g`` the sphere gradient of ``fbar`` in ``n``.  The sign of the
    cross term is pinned by two independent identities: the chart derivative
    ``dA = 2 sin(theta/2) A (cos(theta/2) hat(dn) - sin(theta/2) hat(n x dn))``
    at fixed angle, and ``grad(A . B) = P_T(B)``; both are enforced in the
    test suite.  Derivatives default to central differences (this operator is
    test infrastructure, not a hot path); analytic callbacks can be supplied
    instead.

    Returns a callable ``(theta, n) -> TangentVector``; evaluations outside
    ``(1e-6, pi - 1e-6)`` raise :class:`DomainError`.
    """

    def gradient(theta: float, n: np.ndarray) -> TangentVector:
        _check_theta_domain(theta)
        n = np.asarray(n, dtype=float)
        if dtheta is not None:
            ft = dtheta(theta, n)
        else:
            h = min(step, 0.5 * theta, 0.5 * (np.pi - theta))
            ft = (fbar(theta + h, n) - fbar(theta - h, n)) / (2.0 * h)
        g = sphere_grad(theta, n) if sphere_grad is not None else _sphere_gradient_fd(
            fbar, theta, n, step
        )
        half = 0.5 * theta
        body = ft * n + (np.cos(half) * g - np.sin(half) * np.cross(n, g)) / (
            2.0 * np.sin(half)
        )
        return TangentVector(base=from_axis_angle(theta, n), body=body)

    return gradient


def laplacian_axis_angle(
    ftilde: Callable[[float, np.ndarray], float],
    step: float = 1e-4,
) -> Callable[[float, np.ndarray], float]:
    """Laplace-Beltrami operator in axis-angle form, by central differences.

    ``lap f = (s^-2) d_theta(s^2 d_theta f) + (4 s^2)^-1 lap_sphere f`` with
    ``s = sin(theta/2)``.  The sphere Laplacian is taken along two orthogonal
    great circles through ``n`` (second differences in normal coordinates).
    """

    def laplacian(theta: float, n: np.ndarray) -> float:
        _check_theta_domain(theta)
        n = np.asarray(n, dtype=float)
        h = min(step, 0.5 * theta, 0.5 * (np.pi - theta))
        f0 = ftilde(theta, n)
        fp = ftilde(theta + h, n)
        fm = ftilde(theta - h, n)
        d1 = (fp - fm) / (2.0 * h)
        d2 = (fp - 2.0 * f0 + fm) / (h * h)
        radial = d2 + d1 / np.tan(0.5 * theta)
        t1, t2 = _tangent_basis(n)
        lap_n = 0.0
        for t in (t1, t2):
            plus = n * np.cos(step) + t * np.sin(step)
            minus = n * np.cos(step) - t * np.sin(step)
            lap_n += (ftilde(theta, plus) - 2.0 * f0 + ftilde(theta, minus)) / (
                step * step
            )
        return radial + lap_n / (4.0 * np.sin(0.5 * theta) ** 2)

    return laplacian


def geodesic_relax(
    A0,
    B,
    nu: Callable[[float], float],
    t_end: float,
    dt: float,
):
    """Relaxation of an attitude toward a fixed target along the alignment flow.

    Integrates ``dA/dt = nu(inner(A, B)) P_{T_A}(B)`` with classical
    fourth-order Runge-Kutta and a polar re-projection after every step.  The
    trajectory stays on the geodesic through ``A0`` and ``B``: the axis of
    ``B^T A(t)`` is constant while its angle decays to zero (except from the
    antipodal angle, which is a stationary point).

    Returns
    -------
    times : (n_steps + 1,) array
    trajectory : (n_steps + 1, 3, 3) array
    """
    A = np.array(A0, dtype=float)
    B = np.asarray(B, dtype=float)
    n_steps = int(round(t_end / dt))
    times = dt * np.arange(n_steps + 1)
    out = np.empty((n_steps + 1, 3, 3))
    out[0] = A

    def rhs(R):
        return nu(float(inner(R, B))) * project_tangent(R, B)

    for k in range(n_steps):
        k1 = rhs(A)
        k2 = rhs(A + 0.5 * dt * k1)
        k3 = rhs(A + 0.5 * dt * k2)
        k4 = rhs(A + dt * k3)
        A = A + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        A = polar_rotation_many(A)
        out[k + 1] = A
    return times, out
