"""Macroscopic equations: density transport plus frame transport.

State per cell: a density ``rho`` and a right-handed orthonormal frame
``(omega, u, v)`` (direction of motion plus the two body axes).  The system
integrated here is

    d_t rho + c1 div(rho omega) = 0
    rho D_t omega + P_perp(c3 grad rho + c4 rho r) = 0
    rho D_t u - [u . (c3 grad rho + c4 rho r)] omega + c4 rho delta v = 0
    rho D_t v - [v . (c3 grad rho + c4 rho r)] omega - c4 rho delta u = 0

with ``D_t = d_t + c2 (omega . grad)`` and the intrinsic frame derivatives

    delta = [(omega.grad) u] . v + [(u.grad) v] . omega + [(v.grad) omega] . u
    r     = (div omega) omega + (div u) u + (div v) v.

Discretization: periodic lattice in 1, 2, or 3 dimensions; density fluxes
and convection are first-order upwind along the sign of ``omega`` per axis
(mass conservation is exact in the flux form), all other derivatives are
second-order central, and time stepping is the explicit midpoint rule.
After every step the frame is re-orthonormalized cell by cell through the
polar factor of the matrix with columns ``(omega, u, v)`` (Gram-Schmidt is
available behind a flag for comparison).  Cells whose density falls under a
floor have their frame frozen for the step and are counted -- the frame
equations divide by ``rho`` and carry no meaning in vacuum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import so3

__all__ = [
    "FrameField",
    "SohbCoeffs",
    "SohbParams",
    "PdeStepInfo",
    "PdeRun",
    "frame_derivatives",
    "step",
    "run",
]


@dataclass(frozen=True)
class SohbCoeffs:
    """Plain container for the four transport constants."""

    c1: float
    c2: float
    c3: float
    c4: float

    @classmethod
    def from_object(cls, obj) -> "SohbCoeffs":
        return cls(
            c1=float(obj.c1), c2=float(obj.c2), c3=float(obj.c3), c4=float(obj.c4)
        )


@dataclass
class FrameField:
    """Density and frame on a periodic lattice.

    Grid axes map to the first ``ndim`` space directions; vector components
    always live in full 3-space on the trailing axis.
    """

    dx: float
    rho: np.ndarray
    omega: np.ndarray
    u: np.ndarray
    v: np.ndarray
    time: float = 0.0

    @property
    def ndim(self) -> int:
        return self.rho.ndim

    @property
    def shape(self):
        return self.rho.shape

    @classmethod
    def uniform(cls, shape, dx: float, rho0: float = 1.0, frame=None) -> "FrameField":
        """Constant state; ``frame`` is a rotation whose columns seed the field."""
        frame = np.eye(3) if frame is None else np.asarray(frame, dtype=float)
        shape = tuple(shape)
        full = shape + (3,)
        return cls(
            dx=dx,
            rho=np.full(shape, float(rho0)),
            omega=np.broadcast_to(frame[:, 0], full).copy(),
            u=np.broadcast_to(frame[:, 1], full).copy(),
            v=np.broadcast_to(frame[:, 2], full).copy(),
        )

    @classmethod
    def from_twist(
        cls, shape, dx: float, rho, twist, base=None
    ) -> "FrameField":
        """Field with frame ``exp(hat(b(x))) base`` and prescribed density.

        ``twist`` maps the lattice coordinates (arrays of shape ``grid``) to
        the local rotation vector ``b``; ``rho`` may be a constant or a
        callable of the same coordinates.
        """
        shape = tuple(shape)
        base = np.eye(3) if base is None else np.asarray(base, dtype=float)
        axes = [dx * np.arange(n) for n in shape]
        coords = np.meshgrid(*axes, indexing="ij")
        b = np.asarray(twist(*coords), dtype=float)
        rotations = so3.exp_body(b) @ base
        rho_values = (
            np.full(shape, float(rho))
            if np.isscalar(rho)
            else np.asarray(rho(*coords), dtype=float)
        )
        return cls(
            dx=dx,
            rho=rho_values,
            omega=rotations[..., :, 0],
            u=rotations[..., :, 1],
            v=rotations[..., :, 2],
        )

    def frame_matrices(self) -> np.ndarray:
        """Per-cell matrices with columns ``(omega, u, v)``."""
        return np.stack([self.omega, self.u, self.v], axis=-1)

    def orthonormality_defect(self) -> float:
        f = self.frame_matrices()
        gram = np.swapaxes(f, -1, -2) @ f
        return float(np.max(np.abs(gram - np.eye(3))))

    def min_handedness(self) -> float:
        """Minimum of ``omega . (u x v)`` over cells (1 for a right-handed frame)."""
        return float(np.min(np.einsum("...i,...i->...", self.omega, np.cross(self.u, self.v))))

    def total_mass(self) -> float:
        return float(np.sum(self.rho) * self.dx**self.ndim)

    def copy(self) -> "FrameField":
        return FrameField(
            dx=self.dx,
            rho=self.rho.copy(),
            omega=self.omega.copy(),
            u=self.u.copy(),
            v=self.v.copy(),
            time=self.time,
        )


@dataclass(frozen=True)
class SohbParams:
    """Grid spacing, time step (or CFL number), and the transport constants."""

    coeffs: SohbCoeffs
    dx: float
    dt: float | None = None
    cfl: float = 0.4
    rho_floor_frac: float = 1e-8
    reorthonormalize: str = "polar"

    def __post_init__(self):
        if self.reorthonormalize not in ("polar", "gram-schmidt"):
            raise ValueError(f"unknown re-orthonormalization {self.reorthonormalize!r}")
        speed = max(abs(self.coeffs.c1), abs(self.coeffs.c2), 1e-300)
        limit = self.cfl * self.dx / speed
        if self.dt is not None and self.dt > limit * (1.0 + 1e-12):
            raise ValueError(
                f"dt = {self.dt} violates the CFL bound {limit:.3e}"
            )

    def resolved_dt(self) -> float:
        if self.dt is not None:
            return self.dt
        speed = max(abs(self.coeffs.c1), abs(self.coeffs.c2), 1e-300)
        return self.cfl * self.dx / speed


def _central(q: np.ndarray, axis: int, dx: float) -> np.ndarray:
    return (np.roll(q, -1, axis=axis) - np.roll(q, 1, axis=axis)) / (2.0 * dx)


def _grad_scalar(q: np.ndarray, dx: float, ndim: int) -> np.ndarray:
    out = np.zeros(q.shape + (3,))
    for axis in range(ndim):
        out[..., axis] = _central(q, axis, dx)
    return out


def _divergence(q: np.ndarray, dx: float, ndim: int) -> np.ndarray:
    out = np.zeros(q.shape[:-1])
    for axis in range(ndim):
        out += _central(q[..., axis], axis, dx)
    return out


def _directional(w: np.ndarray, q: np.ndarray, dx: float, ndim: int) -> np.ndarray:
    """Central ``(w . grad) q`` for a vector field ``q``."""
    out = np.zeros_like(q)
    for axis in range(ndim):
        out += w[..., axis, None] * _central(q, axis, dx)
    return out


def _upwind_directional(w: np.ndarray, q: np.ndarray, dx: float, ndim: int) -> np.ndarray:
    """First-order upwind ``(w . grad) q`` along the sign of ``w`` per axis."""
    out = np.zeros_like(q)
    for axis in range(ndim):
        wa = w[..., axis, None]
        forward = (np.roll(q, -1, axis=axis) - q) / dx
        backward = (q - np.roll(q, 1, axis=axis)) / dx
        out += wa * np.where(wa > 0.0, backward, forward)
    return out


def frame_derivatives(field: FrameField) -> tuple[np.ndarray, np.ndarray]:
    """Intrinsic first-order derivatives ``(delta, r)`` of the frame field.

    Second-order central differences on the periodic lattice; for a frame
    written as ``exp(hat(b(x)))`` times a constant rotation these converge to
    the divergence and curl of ``b`` where ``b`` vanishes.
    """
    dx, ndim = field.dx, field.ndim
    om, u, v = field.omega, field.u, field.v
    delta = (
        np.einsum("...i,...i->...", _directional(om, u, dx, ndim), v)
        + np.einsum("...i,...i->...", _directional(u, v, dx, ndim), om)
        + np.einsum("...i,...i->...", _directional(v, om, dx, ndim), u)
    )
    r = (
        _divergence(om, dx, ndim)[..., None] * om
        + _divergence(u, dx, ndim)[..., None] * u
        + _divergence(v, dx, ndim)[..., None] * v
    )
    return delta, r


def _density_flux_divergence(field: FrameField, c1: float) -> np.ndarray:
    """Upwind conservative divergence of ``c1 rho omega``; telescopes exactly."""
    dx, ndim = field.dx, field.ndim
    out = np.zeros_like(field.rho)
    for axis in range(ndim):
        w_face = 0.5 * c1 * (
            field.omega[..., axis] + np.roll(field.omega[..., axis], -1, axis=axis)
        )
        upwind_rho = np.where(
            w_face > 0.0, field.rho, np.roll(field.rho, -1, axis=axis)
        )
        flux = w_face * upwind_rho
        out += (flux - np.roll(flux, 1, axis=axis)) / dx
    return out


def _tendencies(field: FrameField, p: SohbParams, rho_floor: float):
    """Time derivatives of all fields plus the vacuum mask of this stage."""
    c = p.coeffs
    dx, ndim = field.dx, field.ndim
    drho = -_density_flux_divergence(field, c.c1)

    delta, r = frame_derivatives(field)
    grad_rho = _grad_scalar(field.rho, dx, ndim)
    force = c.c3 * grad_rho + c.c4 * field.rho[..., None] * r

    vacuum = field.rho < rho_floor
    safe_rho = np.where(vacuum, 1.0, field.rho)[..., None]

    om, u, v = field.omega, field.u, field.v
    proj = force - np.einsum("...i,...i->...", force, om)[..., None] * om
    d_om = -c.c2 * _upwind_directional(om, om, dx, ndim) - proj / safe_rho
    d_u = (
        -c.c2 * _upwind_directional(om, u, dx, ndim)
        + (np.einsum("...i,...i->...", u, force) / safe_rho[..., 0])[..., None] * om
        - (c.c4 * delta)[..., None] * v
    )
    d_v = (
        -c.c2 * _upwind_directional(om, v, dx, ndim)
        + (np.einsum("...i,...i->...", v, force) / safe_rho[..., 0])[..., None] * om
        + (c.c4 * delta)[..., None] * u
    )
    for d in (d_om, d_u, d_v):
        d[vacuum] = 0.0
    return drho, d_om, d_u, d_v, vacuum


def _reorthonormalize(field: FrameField, how: str) -> None:
    frames = field.frame_matrices()
    if how == "polar":
        fixed = so3.polar_rotation_many(frames)
    else:  # gram-schmidt, in (omega, u, v) order
        om = frames[..., :, 0]
        om = om / np.linalg.norm(om, axis=-1, keepdims=True)
        u = frames[..., :, 1]
        u = u - np.einsum("...i,...i->...", u, om)[..., None] * om
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
        v = np.cross(om, u)
        fixed = np.stack([om, u, v], axis=-1)
    field.omega = np.ascontiguousarray(fixed[..., :, 0])
    field.u = np.ascontiguousarray(fixed[..., :, 1])
    field.v = np.ascontiguousarray(fixed[..., :, 2])


@dataclass
class PdeStepInfo:
    vacuum_count: int
    orthonormality_defect: float
    min_handedness: float


def step(field: FrameField, p: SohbParams) -> tuple[FrameField, PdeStepInfo]:
    """One explicit midpoint step; returns the new field and diagnostics.

    The density update uses the conservative flux divergence of the midpoint
    stage only, so total mass is conserved to rounding.  Vacuum cells (density
    under ``rho_floor_frac`` times the mean) keep their frame for the step.
    """
    dt = p.resolved_dt()
    rho_floor = p.rho_floor_frac * float(np.mean(field.rho))

    drho1, d_om1, d_u1, d_v1, vac1 = _tendencies(field, p, rho_floor)
    half = FrameField(
        dx=field.dx,
        rho=field.rho + 0.5 * dt * drho1,
        omega=field.omega + 0.5 * dt * d_om1,
        u=field.u + 0.5 * dt * d_u1,
        v=field.v + 0.5 * dt * d_v1,
        time=field.time + 0.5 * dt,
    )
    drho2, d_om2, d_u2, d_v2, vac2 = _tendencies(half, p, rho_floor)

    new = FrameField(
        dx=field.dx,
        rho=field.rho + dt * drho2,
        omega=field.omega + dt * d_om2,
        u=field.u + dt * d_u2,
        v=field.v + dt * d_v2,
        time=field.time + dt,
    )
    frozen = vac1 | vac2
    if np.any(frozen):
        new.omega[frozen] = field.omega[frozen]
        new.u[frozen] = field.u[frozen]
        new.v[frozen] = field.v[frozen]
    _reorthonormalize(new, p.reorthonormalize)
    info = PdeStepInfo(
        vacuum_count=int(np.count_nonzero(frozen)),
        orthonormality_defect=new.orthonormality_defect(),
        min_handedness=new.min_handedness(),
    )
    return new, info


@dataclass
class PdeRun:
    """Trajectory record with conservation and frame-quality diagnostics."""

    params: SohbParams
    times: np.ndarray
    mass: np.ndarray
    max_defect: float
    min_handedness: float
    vacuum_counts: np.ndarray
    snapshots: list[tuple[float, FrameField]]
    final: FrameField


def run(
    init: FrameField,
    p: SohbParams,
    t_end: float,
    snapshot_every: int | None = None,
) -> PdeRun:
    """Integrate from ``init`` to ``t_end`` recording mass and frame quality."""
    field = init.copy()
    dt = p.resolved_dt()
    n_steps = int(round(t_end / dt))
    times = [field.time]
    mass = [field.total_mass()]
    vacuum = [0]
    snapshots = [(field.time, field.copy())]
    worst_defect = field.orthonormality_defect()
    worst_handedness = field.min_handedness()
    for k in range(n_steps):
        field, info = step(field, p)
        times.append(field.time)
        mass.append(field.total_mass())
        vacuum.append(info.vacuum_count)
        worst_defect = max(worst_defect, info.orthonormality_defect)
        worst_handedness = min(worst_handedness, info.min_handedness)
        if snapshot_every is not None and (
            (k + 1) % snapshot_every == 0 or k + 1 == n_steps
        ):
            snapshots.append((field.time, field.copy()))
    return PdeRun(
        params=p,
        times=np.array(times),
        mass=np.array(mass),
        max_defect=worst_defect,
        min_handedness=worst_handedness,
        vacuum_counts=np.array(vacuum),
        snapshots=snapshots,
        final=field,
    )
