"""Extended Kalman filter for cooperative RSS tracking.

The state is the anchor node's position and velocity, ``[p, v]`` with
``p`` 2D or 3D. Buddy nodes are not estimated; their positions follow from
the anchor through the rigid formation. The measurement vector stacks the
RSS of every (node, reference) pair, node-major::

    z = [rss_11 .. rss_1N, rss_21 .. rss_2N, ..., rss_M1 .. rss_MN]

NaN entries in a measurement vector mark readings that were not taken
(e.g. dropped as out-of-validity); those rows are skipped in the update.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .channel import PathLossModel, invert_rss, predict_rss, rss_slope
from .geometry import FormationSpec, formation_positions

MAX_INNOVATION_COND = 1e12
MIN_NODE_DISTANCE = 1e-6


class FilterError(RuntimeError):
    pass


class FilterDivergenceError(FilterError):
    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"filter diverged{where}: {message}")


class SingularGeometryError(FilterError):
    pass


class UnderdeterminedError(FilterError):
    pass


class InitFailureError(FilterError):
    pass


@dataclass
class FilterState:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.x.shape not in ((4,), (6,)) or self.p.shape != (self.x.size,) * 2:
            raise ValueError(f"inconsistent state shapes {self.x.shape} / {self.p.shape}")

    @property
    def dimension(self) -> int:
        return self.x.size // 2

    @property
    def position(self) -> np.ndarray:
        return self.x[: self.dimension]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[self.dimension :]


@dataclass(frozen=True)
class ProcessModel:
    ts: float
    f: np.ndarray
    q_w: np.ndarray


def transition_generator(dimension: int) -> np.ndarray:
    """Continuous-time constant-velocity generator ``[[0, I], [0, 0]]``."""
    a = np.zeros((2 * dimension, 2 * dimension))
    a[:dimension, dimension:] = np.eye(dimension)
    return a


def discretize(ts: float, q_spectral: Union[float, Sequence[float]] = 0.01, dimension: int = 2) -> ProcessModel:
    """Discrete constant-velocity model over one sampling period.

    The generator is nilpotent, so ``expm(A ts) = I + A ts`` with no
    truncation. Process noise enters on the velocity states only:
    ``q_w = ts * diag(0, .., 0, q_v...)``.
    """
    if not (ts > 0 and np.isfinite(ts)):
        raise ValueError(f"sampling period must be > 0, got {ts}")
    q = np.broadcast_to(np.asarray(q_spectral, dtype=float), (dimension,))
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValueError(f"process noise intensities must be >= 0, got {q_spectral}")
    f = np.eye(2 * dimension) + transition_generator(dimension) * ts
    q_w = np.diag(np.concatenate([np.zeros(dimension), ts * q]))
    return ProcessModel(ts, f, q_w)


@dataclass(frozen=True)
class MeasurementModel:
    references: np.ndarray
    formation: FormationSpec
    channel: PathLossModel
    q_e: Optional[np.ndarray] = None

    def __post_init__(self):
        refs = np.asarray(self.references, dtype=float)
        if refs.ndim != 2 or refs.shape[1] != self.formation.dimension or len(refs) < 1:
            raise ValueError(
                f"references must be (N, {self.formation.dimension}), got {refs.shape}"
            )
        object.__setattr__(self, "references", refs)
        size = self.n_measurements
        if self.q_e is None:
            q_e = np.eye(size) * self.channel.sigma**2
        else:
            q_e = np.broadcast_to(np.asarray(self.q_e, dtype=float), (size, size)).copy()
        if not np.allclose(q_e, q_e.T):
            raise ValueError("measurement noise covariance must be symmetric")
        object.__setattr__(self, "q_e", q_e)

    @property
    def n_references(self) -> int:
        return len(self.references)

    @property
    def n_nodes(self) -> int:
        return self.formation.n_nodes

    @property
    def n_measurements(self) -> int:
        return self.n_nodes * self.n_references

    @property
    def dimension(self) -> int:
        return self.formation.dimension


def node_reference_offsets(anchor, model: MeasurementModel) -> np.ndarray:
    """``f_i - X_j`` for every node and reference, shape (M, N, dim)."""
    nodes = formation_positions(anchor, model.formation)
    return nodes[:, None, :] - model.references[None, :, :]


def _distances(diff: np.ndarray) -> np.ndarray:
    dist = np.sqrt(np.einsum("mnk,mnk->mn", diff, diff))
    if np.any(dist < MIN_NODE_DISTANCE):
        m, n = np.argwhere(dist < MIN_NODE_DISTANCE)[0]
        raise SingularGeometryError(f"node {m + 1} coincides with reference {n + 1}")
    return dist


def linearize(position, model: MeasurementModel) -> tuple[np.ndarray, np.ndarray]:
    """Predicted stacked RSS and its position Jacobian, (M*N,) and (M*N, dim).

    Row (i, j) of the Jacobian is
    ``slope(d_ij) * (f_i - X_j)^T / d_ij @ df_i/dx_1`` with ``d_ij`` the
    Euclidean node-reference distance. For the log model the slope is
    ``-10 n log10(e) / d_ij``, so each row reduces to
    ``-10 n log10(e) (f_i - X_j)^T / d_ij**2``.
    """
    diff = node_reference_offsets(position, model)
    dist = _distances(diff)
    rss = predict_rss(model.channel, dist)
    # df_i/dx_1 is the identity for a rigid formation (see formation_jacobian)
    grad = (rss_slope(model.channel, dist) / dist)[:, :, None] * diff
    return rss.reshape(-1), grad.reshape(-1, model.dimension)


def predict_measurement(state: FilterState, model: MeasurementModel) -> np.ndarray:
    """Noiseless stacked RSS vector, length M*N."""
    dist = _distances(node_reference_offsets(state.position, model))
    return predict_rss(model.channel, dist).reshape(-1)


def measurement_jacobian(state: FilterState, model: MeasurementModel) -> np.ndarray:
    """Analytic (M*N, state_dim) Jacobian of :func:`predict_measurement`.

    Velocity columns are zero: RSS depends on position only.
    """
    dim = model.dimension
    _, grad = linearize(state.position, model)
    h = np.zeros((model.n_measurements, 2 * dim))
    h[:, :dim] = grad
    return h


def ekf_step(
    state: FilterState,
    process: ProcessModel,
    model: MeasurementModel,
    measurement,
    step: Optional[int] = None,
) -> FilterState:
    """One predict/update cycle; returns a new state.

    Raises :class:`FilterDivergenceError` when the innovation covariance is
    numerically singular (condition number above 1e12).
    """
    z = np.asarray(measurement, dtype=float)
    if z.shape != (model.n_measurements,):
        raise ValueError(f"measurement must have length {model.n_measurements}, got {z.shape}")
    dim = model.dimension

    x_prior = process.f @ state.x
    p_prior = process.f @ state.p @ process.f.T + process.q_w

    used = np.isfinite(z)
    all_used = bool(used.all())
    if not all_used and not used.any():
        return FilterState(x_prior, 0.5 * (p_prior + p_prior.T))

    h_pred, grad = linearize(x_prior[:dim], model)
    innovation = z - h_pred
    q_e = model.q_e
    if not all_used:
        grad, innovation, q_e = grad[used], innovation[used], q_e[np.ix_(used, used)]

    # H has zero velocity columns; only the position block of P is touched
    ph_t = p_prior[:, :dim] @ grad.T
    s = grad @ ph_t[:dim] + q_e
    s = 0.5 * (s + s.T)
    w = np.linalg.eigvalsh(s)
    if not (w[0] > 0 and w[-1] < MAX_INNOVATION_COND * w[0]):
        raise FilterDivergenceError(f"innovation covariance condition {w[-1] / w[0]:.3g}", step)
    k = np.linalg.solve(s, ph_t.T).T

    p_post = p_prior - k @ ph_t.T
    x_post = x_prior + k @ innovation
    return FilterState(x_post, 0.5 * (p_post + p_post.T))


@dataclass(frozen=True)
class KnownStart:
    position: Sequence[float]
    pos_var: float = 1.0
    vel_var: float = 0.25


@dataclass(frozen=True)
class CoarseMultilateration:
    pos_var: float = 1.0
    vel_var: float = 0.25
    max_iter: int = 50
    tol: float = 1e-8


InitPolicy = Union[KnownStart, CoarseMultilateration]


def _covariance(dim: int, pos_var: float, vel_var: float) -> np.ndarray:
    return np.diag([pos_var] * dim + [vel_var] * dim).astype(float)


def multilaterate(references: np.ndarray, ranges: np.ndarray, max_iter: int = 50, tol: float = 1e-8) -> np.ndarray:
    """Least-squares position from ranges to known references.

    Residuals are relative, ``(r_j - |x - X_j|) / r_j``, since RSS-derived
    range errors grow in proportion to range. A linearized solve (each
    equation minus the first) gives the start point for Gauss-Newton, which
    stops once the step or the relative cost change falls below ``tol``.
    """
    refs = np.asarray(references, dtype=float)
    r = np.asarray(ranges, dtype=float)
    n, dim = refs.shape
    if n < dim + 1:
        raise UnderdeterminedError(f"{n} references cannot fix a {dim}D position")
    if not (np.all(np.isfinite(r)) and np.all(r > 0)):
        raise InitFailureError("ranges must be finite and positive")

    a = 2 * (refs[1:] - refs[0])
    b = r[0] ** 2 - r[1:] ** 2 + np.sum(refs[1:] ** 2, axis=1) - np.sum(refs[0] ** 2)
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    if not np.all(np.isfinite(x)):
        x = refs.mean(axis=0)

    def residual(pos):
        return 1 - np.maximum(np.linalg.norm(pos - refs, axis=1), MIN_NODE_DISTANCE) / r

    res = residual(x)
    cost = res @ res
    for _ in range(max_iter):
        diff = x - refs
        dist = np.maximum(np.linalg.norm(diff, axis=1), MIN_NODE_DISTANCE)
        jac = diff / (dist * r)[:, None]
        dx, *_ = np.linalg.lstsq(jac, res, rcond=None)
        lin = res - jac @ dx
        predicted = cost - lin @ lin
        # Armijo backtracking against the linear model's predicted decrease
        step = 1.0
        for _ in range(30):
            trial = residual(x + step * dx)
            if cost - trial @ trial >= 0.25 * step * predicted:
                break
            step /= 2
        dx = step * dx
        x = x + dx
        res = residual(x)
        new_cost = res @ res
        if np.linalg.norm(dx) < tol or cost - new_cost <= tol * cost:
            return x
        cost = new_cost
    raise InitFailureError(f"Gauss-Newton did not converge in {max_iter} iterations")


def initialize(first_measurements, model: MeasurementModel, policy: InitPolicy) -> FilterState:
    dim = model.dimension
    if isinstance(policy, KnownStart):
        pos = np.asarray(policy.position, dtype=float)
        if pos.shape != (dim,):
            raise ValueError(f"start position must have {dim} components")
        return FilterState(np.concatenate([pos, np.zeros(dim)]), _covariance(dim, policy.pos_var, policy.vel_var))
    if isinstance(policy, CoarseMultilateration):
        z = np.asarray(first_measurements, dtype=float)[: model.n_references]
        used = np.isfinite(z)
        if used.sum() < dim + 1:
            raise UnderdeterminedError(
                f"{int(used.sum())} anchor readings cannot fix a {dim}D position"
            )
        ranges = np.array([invert_rss(model.channel, v) for v in z[used]])
        pos = multilaterate(model.references[used], ranges, policy.max_iter, policy.tol)
        return FilterState(np.concatenate([pos, np.zeros(dim)]), _covariance(dim, policy.pos_var, policy.vel_var))
    raise TypeError(f"unknown init policy {policy!r}")
