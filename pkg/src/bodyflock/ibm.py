"""Agent-based simulator: positions in a periodic box, attitudes on SO(3).

Each agent moves at constant speed along the first column of its attitude
matrix and relaxes that matrix toward the special-orthogonal polar factor of
the kernel-weighted average of its neighbours' attitudes, under isotropic
rotational noise.  One step, with every agent reading the pre-step state:

1. positions advance along the heading and wrap into the box;
2. the local average ``M_k`` is formed (cell lists when the kernel has
   compact support, dense sums otherwise) and its polar factor is the
   alignment target -- averages with non-positive determinant trigger the
   configured fallback and are counted;
3. the alignment drift is the tangent projection of the target, scaled by
   the rate ``nu`` evaluated at the target/attitude overlap, pulled to the
   body frame;
4. the attitude is updated by the exponential of the body increment
   ``dt * drift + sqrt(2 D dt) * xi`` with standard normal ``xi`` (this
   discretization has generator ``D lap`` for the noise-only dynamics under
   the trace/2 metric), followed by an orthogonality refresh.

Noise is drawn from counter-based streams keyed by ``(seed, step)`` with a
fixed agent order, so trajectories depend only on parameters and seed, never
on scheduling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special

from . import so3
from .equilibria import NuSpec
from .errors import NegativeDeterminantError, SingularMatrixError

__all__ = [
    "KernelSpec",
    "IbmParams",
    "ParticleEnsemble",
    "StepInfo",
    "OrderParameters",
    "IbmRun",
    "initial_ensemble",
    "local_average",
    "local_averages",
    "step",
    "order_parameters",
    "run",
]


@dataclass(frozen=True)
class KernelSpec:
    """Isotropic influence kernel, normalized to unit mass on the box.

    ``global`` weighs every agent equally (``1 / L^3``); ``tophat`` is an
    indicator of radius ``radius`` (requires ``2 radius <= L``); ``gaussian``
    uses the minimum-image wrapped Gaussian of width ``sigma``, normalized by
    the exact product-of-erf box integral.
    """

    kind: str = "global"
    radius: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if self.kind not in ("global", "tophat", "gaussian"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "tophat" and not (self.radius and self.radius > 0.0):
            raise ValueError("tophat kernel needs a positive radius")
        if self.kind == "gaussian" and not (self.sigma and self.sigma > 0.0):
            raise ValueError("gaussian kernel needs a positive sigma")

    @classmethod
    def global_(cls) -> "KernelSpec":
        return cls("global")

    @classmethod
    def tophat(cls, radius: float) -> "KernelSpec":
        return cls("tophat", radius=radius)

    @classmethod
    def gaussian(cls, sigma: float) -> "KernelSpec":
        return cls("gaussian", sigma=sigma)

    def support_radius(self, box_length: float) -> float | None:
        """Cutoff radius for neighbour search; None means dense sums."""
        return self.radius if self.kind == "tophat" else None

    def normalization(self, box_length: float) -> float:
        if self.kind == "global":
            return 1.0 / box_length**3
        if self.kind == "tophat":
            if 2.0 * self.radius > box_length:
                raise ValueError("tophat radius exceeds half the box length")
            return 3.0 / (4.0 * np.pi * self.radius**3)
        # wrapped gaussian: box integral of the product form is an erf product
        erf_factor = special.erf(box_length / (2.0 * np.sqrt(2.0) * self.sigma))
        return (2.0 * np.pi * self.sigma**2) ** -1.5 / erf_factor**3

    def weight(self, r, box_length: float):
        """Kernel value at (minimum-image) distance ``r``."""
        r = np.asarray(r, dtype=float)
        norm = self.normalization(box_length)
        if self.kind == "global":
            return np.full_like(r, norm)
        if self.kind == "tophat":
            return norm * (r <= self.radius)
        return norm * np.exp(-0.5 * (r / self.sigma) ** 2)

    def box_integral(self, box_length: float) -> float:
        """Integral of the kernel over the box (should be 1)."""
        if self.kind == "global":
            return 1.0
        if self.kind == "tophat":
            val, _ = integrate.quad(
                lambda r: 4.0 * np.pi * r**2 * float(self.weight(r, box_length)),
                0.0,
                self.radius,
            )
            return val
        # product structure: each axis integrates independently
        norm = self.normalization(box_length)
        axis, _ = integrate.quad(
            lambda x: np.exp(-0.5 * (x / self.sigma) ** 2),
            -0.5 * box_length,
            0.5 * box_length,
        )
        return norm * axis**3


@dataclass(frozen=True)
class IbmParams:
    """Full parameter set of one simulation."""

    n_agents: int
    box_length: float
    v0: float
    nu: NuSpec
    noise: float
    dt: float
    seed: int = 0
    kernel: KernelSpec = field(default_factory=KernelSpec.global_)
    det_fallback: str = "skip_drift"
    target: str = "polar"
    eps_det: float | None = None

    def __post_init__(self):
        if self.noise < 0.0:
            raise ValueError("noise intensity must be non-negative")
        if self.det_fallback not in ("skip_drift", "keep_previous"):
            raise ValueError(f"unknown det fallback {self.det_fallback!r}")
        if self.target not in ("polar", "matrix-mean"):
            raise ValueError(f"unknown alignment target {self.target!r}")
        if self.dt * self.nu.nu_max() > 0.2 + 1e-12:
            raise ValueError("dt * max(nu) exceeds the 0.2 stability guard")
        self.kernel.normalization(self.box_length)  # validates geometry


@dataclass
class ParticleEnsemble:
    """State of all agents: positions in the box, attitudes, current time."""

    positions: np.ndarray
    attitudes: np.ndarray
    time: float = 0.0

    @property
    def n_agents(self) -> int:
        return len(self.positions)

    def attitude_defect(self) -> float:
        """Worst orthogonality violation over the ensemble."""
        gram = np.swapaxes(self.attitudes, -1, -2) @ self.attitudes
        return float(np.max(np.abs(gram - np.eye(3))))

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.positions.copy(), self.attitudes.copy(), self.time
        )


@dataclass
class StepInfo:
    """Per-step diagnostics: alignment targets and fallback count."""

    targets: np.ndarray | None
    fallback_count: int


def initial_ensemble(
    params: IbmParams,
    init: str = "haar",
    path: str | Path | None = None,
) -> ParticleEnsemble:
    """Build the initial state: aligned, rotation-Haar, or from a snapshot file."""
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, 0xA11]))
    positions = rng.random((params.n_agents, 3)) * params.box_length
    if init == "aligned":
        attitudes = np.broadcast_to(np.eye(3), (params.n_agents, 3, 3)).copy()
    elif init == "haar":
        attitudes = so3.haar_sample(rng, params.n_agents)
    elif init == "custom":
        if path is None:
            raise ValueError("custom init needs a snapshot path")
        positions, attitudes = _load_snapshot(path)
        if len(positions) != params.n_agents:
            raise ValueError(
                f"snapshot holds {len(positions)} agents, expected {params.n_agents}"
            )
    else:
        raise ValueError(f"unknown init {init!r}")
    return ParticleEnsemble(positions=positions, attitudes=attitudes, time=0.0)


def _load_snapshot(path):
    payload = json.loads(Path(path).read_text())
    agents = payload["agents"] if isinstance(payload, dict) else payload
    positions = np.array([a["position"] for a in agents], dtype=float)
    attitudes = np.array(
        [np.reshape(a["rotation"], (3, 3)) for a in agents], dtype=float
    )
    return positions, attitudes


def _min_image(delta: np.ndarray, box_length: float) -> np.ndarray:
    return delta - box_length * np.round(delta / box_length)


def local_averages(ens: ParticleEnsemble, kernel: KernelSpec, box_length: float) -> np.ndarray:
    """Kernel-weighted attitude averages ``M_k`` for every agent, ``(N, 3, 3)``."""
    n = ens.n_agents
    if kernel.kind == "global":
        w = kernel.normalization(box_length)
        mean = ens.attitudes.mean(axis=0) * w
        return np.broadcast_to(mean, (n, 3, 3))
    if kernel.kind == "tophat":
        return _local_averages_celllist(ens, kernel, box_length)
    return _local_averages_dense(ens, kernel, box_length)


def _local_averages_dense(ens, kernel, box_length, chunk: int = 512):
    n = ens.n_agents
    out = np.empty((n, 3, 3))
    flat = ens.attitudes.reshape(n, 9)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        delta = _min_image(
            ens.positions[start:stop, None, :] - ens.positions[None, :, :], box_length
        )
        r = np.linalg.norm(delta, axis=-1)
        w = kernel.weight(r, box_length)
        out[start:stop] = (w @ flat).reshape(-1, 3, 3) / n
    return out


def _local_averages_celllist(ens, kernel, box_length):
    n = ens.n_agents
    radius = kernel.radius
    n_cells = max(1, int(np.floor(box_length / radius)))
    if n_cells < 3:
        # too few cells for a 27-stencil to beat the dense sum
        return _local_averages_dense(ens, kernel, box_length)
    cell_size = box_length / n_cells
    coords = np.floor(ens.positions / cell_size).astype(int) % n_cells
    flat_index = (coords[:, 0] * n_cells + coords[:, 1]) * n_cells + coords[:, 2]
    order = np.argsort(flat_index, kind="stable")
    sorted_index = flat_index[order]
    starts = np.searchsorted(sorted_index, np.arange(n_cells**3))
    ends = np.searchsorted(sorted_index, np.arange(n_cells**3), side="right")

    out = np.zeros((n, 3, 3))
    offsets = np.array(
        [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]
    )
    for cell in range(n_cells**3):
        members = order[starts[cell] : ends[cell]]
        if len(members) == 0:
            continue
        cz = cell % n_cells
        cy = (cell // n_cells) % n_cells
        cx = cell // (n_cells * n_cells)
        neighbour_cells = (
            ((cx + offsets[:, 0]) % n_cells) * n_cells + (cy + offsets[:, 1]) % n_cells
        ) * n_cells + (cz + offsets[:, 2]) % n_cells
        neighbour_cells = np.unique(neighbour_cells)
        cand = np.concatenate(
            [order[starts[c] : ends[c]] for c in neighbour_cells]
        )
        delta = _min_image(
            ens.positions[members, None, :] - ens.positions[None, cand, :], box_length
        )
        r = np.linalg.norm(delta, axis=-1)
        w = kernel.weight(r, box_length)
        out[members] = np.einsum("mc,cab->mab", w, ens.attitudes[cand]) / n
    return out


def local_average(
    ens: ParticleEnsemble, k: int, kernel: KernelSpec, box_length: float
) -> np.ndarray:
    """Average ``M_k`` seen by one agent (reference path, dense sum)."""
    delta = _min_image(ens.positions - ens.positions[k], box_length)
    w = kernel.weight(np.linalg.norm(delta, axis=-1), box_length)
    return np.einsum("c,cab->ab", w, ens.attitudes) / ens.n_agents


def _step_noise(seed: int, step_index: int, n: int) -> np.ndarray:
    bits = np.random.Philox(key=seed, counter=[0, 0, step_index, 0])
    return np.random.Generator(bits).standard_normal((n, 3))


# the per-step update is orthogonal to rounding, so defects only accumulate
# at the 1e-16 level; refreshing every few dozen steps keeps them there
_REFRESH_EVERY = 64


def _orthogonality_refresh(A: np.ndarray) -> np.ndarray:
    # one Newton-Schulz sweep: equals the polar factor up to O(defect^2)
    gram = np.swapaxes(A, -1, -2) @ A
    return A @ (1.5 * np.eye(3) - 0.5 * gram)


def _body_drift(attitudes: np.ndarray, rate: np.ndarray, toward: np.ndarray) -> np.ndarray:
    """Body-frame drift vector ``rate * vee(antisym(A^T toward))`` per agent."""
    if toward.ndim == 2:
        g = np.tensordot(attitudes, toward, axes=(1, 0))
    else:
        g = np.swapaxes(attitudes, -1, -2) @ toward
    out = np.empty((len(attitudes), 3))
    out[:, 0] = g[:, 2, 1] - g[:, 1, 2]
    out[:, 1] = g[:, 0, 2] - g[:, 2, 0]
    out[:, 2] = g[:, 1, 0] - g[:, 0, 1]
    out *= 0.5 * rate[:, None]
    return out


def step(
    ens: ParticleEnsemble,
    params: IbmParams,
    rng: np.random.Generator | None = None,
    prev_targets: np.ndarray | None = None,
) -> tuple[ParticleEnsemble, StepInfo]:
    """Advance the ensemble by one time step (synchronous update).

    With ``rng=None`` (the default) noise comes from the counter-based stream
    keyed by the parameter seed and the step index inferred from the ensemble
    time, making trajectories reproducible and schedule-independent;
    ``prev_targets`` feeds the ``keep_previous`` fallback.
    """
    n = ens.n_agents
    step_index = int(round(ens.time / params.dt))
    positions = ens.positions
    if params.v0 != 0.0:
        headings = ens.attitudes[:, :, 0]
        positions = (positions + params.dt * params.v0 * headings) % params.box_length

    # the global kernel shares one average across agents; keep that case on
    # a single polar decomposition
    shared = params.kernel.kind == "global"
    if shared:
        mean = ens.attitudes.mean(axis=0) * params.kernel.normalization(
            params.box_length
        )
        det = float(np.linalg.det(mean))
        eps = (
            params.eps_det
            if params.eps_det is not None
            else 1e-9 * float(np.linalg.norm(mean)) ** 3
        )
        if det > eps:
            target = so3.polar_rotation_many(mean)
            toward = target if params.target == "polar" else mean
            rate = np.asarray(params.nu.nu(so3.inner(target, ens.attitudes)))
            body = _body_drift(ens.attitudes, rate, toward)
            targets = np.broadcast_to(target, (n, 3, 3))
            fallback_count = 0
        else:
            targets = np.zeros((n, 3, 3))
            fallback_count = n
            body = np.zeros((n, 3))
            if params.det_fallback == "keep_previous" and prev_targets is not None:
                body = _drift_per_agent(ens, params, prev_targets, None)
                targets = prev_targets
    else:
        averages = local_averages(ens, params.kernel, params.box_length)
        dets = np.linalg.det(averages)
        eps = (
            params.eps_det
            if params.eps_det is not None
            else 1e-9 * np.linalg.norm(averages, axis=(-2, -1)) ** 3
        )
        valid = dets > eps
        fallback_count = int(n - np.count_nonzero(valid))
        targets = np.zeros((n, 3, 3))
        if np.any(valid):
            targets[valid] = so3.polar_rotation_many(averages[valid])
        if params.det_fallback == "keep_previous" and prev_targets is not None:
            targets[~valid] = prev_targets[~valid]
        body = _drift_per_agent(ens, params, targets, averages)

    if rng is None:
        xi = _step_noise(params.seed, step_index, n)
    else:
        xi = rng.standard_normal((n, 3))
    increment = params.dt * body + np.sqrt(2.0 * params.noise * params.dt) * xi
    attitudes = ens.attitudes @ so3.exp_body(increment)
    if step_index % _REFRESH_EVERY == 0:
        attitudes = _orthogonality_refresh(attitudes)

    new = ParticleEnsemble(
        positions=positions, attitudes=attitudes, time=ens.time + params.dt
    )
    return new, StepInfo(targets=targets, fallback_count=fallback_count)


def _drift_per_agent(ens, params, targets, averages):
    """Drift for heterogeneous targets; agents with a zero target sit still."""
    active = np.any(targets.reshape(len(targets), 9) != 0.0, axis=1)
    body = np.zeros((ens.n_agents, 3))
    if not np.any(active):
        return body
    A = ens.attitudes[active]
    T = targets[active]
    rate = np.asarray(params.nu.nu(so3.inner(T, A)))
    toward = T if params.target == "polar" or averages is None else averages[active]
    body[active] = _body_drift(A, rate, toward)
    return body


@dataclass
class OrderParameters:
    """Global alignment diagnostics of one ensemble."""

    mean_matrix: np.ndarray
    mean_attitude: np.ndarray | None
    c1_hat: float
    direction: np.ndarray | None

    @property
    def disordered(self) -> bool:
        return self.mean_attitude is None


def order_parameters(ens: ParticleEnsemble) -> OrderParameters:
    """Mean attitude matrix, its polar factor, and the scalar alignment order.

    The order is ``inner(mean, polar(mean)) / (3/2)``: one for a fully
    aligned ensemble, near zero for attitudes spread over the whole group.  A
    singular mean is reported as a disordered state with zero order.
    """
    lam = ens.attitudes.mean(axis=0)
    try:
        mean_attitude = so3.polar_rotation(lam)
    except (SingularMatrixError, NegativeDeterminantError):
        # mean matrix carries no usable alignment: disordered state
        return OrderParameters(lam, None, 0.0, None)
    c1_hat = float(so3.inner(lam, mean_attitude) / 1.5)
    return OrderParameters(lam, mean_attitude, c1_hat, mean_attitude[:, 0])


@dataclass
class IbmRun:
    """Trajectory record: order-parameter series plus optional snapshots."""

    params: IbmParams
    times: np.ndarray
    c1_hat: np.ndarray
    direction: np.ndarray
    fallback_counts: np.ndarray
    snapshots: list[tuple[float, ParticleEnsemble]]
    final: ParticleEnsemble


def run(
    params: IbmParams,
    init: str = "haar",
    t_end: float = 1.0,
    sample_every: int = 1,
    snapshot_every: int | None = None,
    init_path: str | Path | None = None,
) -> IbmRun:
    """Integrate from a fresh initial state and record diagnostics.

    ``sample_every`` controls the order-parameter cadence in steps;
    ``snapshot_every`` (optional) stores full ensemble copies.  Given equal
    parameters and seed the output is bit-identical between runs.
    """
    ens = initial_ensemble(params, init=init, path=init_path)
    n_steps = int(round(t_end / params.dt))
    times, orders, directions, fallbacks = [], [], [], []
    snapshots: list[tuple[float, ParticleEnsemble]] = []

    def record(e: ParticleEnsemble, fallback: int):
        op = order_parameters(e)
        times.append(e.time)
        orders.append(op.c1_hat)
        directions.append(
            op.direction if op.direction is not None else np.full(3, np.nan)
        )
        fallbacks.append(fallback)

    record(ens, 0)
    if snapshot_every is not None:
        snapshots.append((ens.time, ens.copy()))
    targets = None
    for k in range(n_steps):
        ens, info = step(ens, params, prev_targets=targets)
        targets = info.targets
        if (k + 1) % sample_every == 0 or k + 1 == n_steps:
            record(ens, info.fallback_count)
        if snapshot_every is not None and (
            (k + 1) % snapshot_every == 0 or k + 1 == n_steps
        ):
            snapshots.append((ens.time, ens.copy()))
    return IbmRun(
        params=params,
        times=np.array(times),
        c1_hat=np.array(orders),
        direction=np.array(directions),
        fallback_counts=np.array(fallbacks),
        snapshots=snapshots,
        final=ens,
    )
