"""Scenario construction and Monte Carlo tracking runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import channel as ch
from .ekf import (
    CoarseMultilateration,
    FilterDivergenceError,
    FilterError,
    FilterState,
    InitPolicy,
    KnownStart,
    MeasurementModel,
    discretize,
    ekf_step,
    initialize,
)
from .geometry import Attitude, FormationSpec, formation_positions


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Line:
    start: Sequence[float]
    end: Sequence[float]
    duration: float

    @property
    def points(self) -> np.ndarray:
        return np.array([self.start, self.end], dtype=float)

    def __post_init__(self):
        _check_path(self.points, self.duration)


@dataclass(frozen=True)
class Waypoints:
    points: Sequence[Sequence[float]]
    duration: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        _check_path(pts, self.duration)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


TrajectorySpec = Union[Line, Waypoints]


def _check_path(points: np.ndarray, duration: float):
    if points.ndim != 2 or len(points) < 2 or points.shape[1] not in (2, 3):
        raise ScenarioError(f"trajectory needs >= 2 points of dimension 2 or 3, got {points.shape}")
    if not np.all(np.isfinite(points)):
        raise ScenarioError("trajectory points must be finite")
    if not (duration > 0 and math.isfinite(duration)):
        raise ScenarioError(f"trajectory duration must be > 0, got {duration}")
    if np.any(np.linalg.norm(np.diff(points, axis=0), axis=1) == 0):
        raise ScenarioError("consecutive trajectory points must be distinct")


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    position: np.ndarray
    velocity: np.ndarray


def sample_trajectory(spec: TrajectorySpec, ts: float) -> list[TrajectorySample]:
    """Positions at t = 0, ts, 2 ts, ..., duration (endpoint included).

    Speed is constant along the whole path, so every segment takes a time
    proportional to its length. A duration that is not a multiple of ``ts``
    gets one shorter final step so the endpoint is still hit exactly.
    """
    if not ts > 0:
        raise ScenarioError(f"ts must be > 0, got {ts}")
    pts = spec.points
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    knots = np.concatenate([[0.0], np.cumsum(seg_len)]) / seg_len.sum() * spec.duration
    seg_vel = seg / np.diff(knots)[:, None]

    n_steps = int(math.floor(spec.duration / ts + 1e-9))
    times = [k * ts for k in range(n_steps + 1)]
    if spec.duration - times[-1] > 1e-9 * spec.duration:
        times.append(spec.duration)

    out = []
    for t in times:
        i = min(int(np.searchsorted(knots, t, side="right")) - 1, len(seg) - 1)
        if t >= spec.duration:
            pos = pts[-1].copy()
        else:
            pos = pts[i] + seg_vel[i] * (t - knots[i])
        out.append(TrajectorySample(t, pos, seg_vel[i].copy()))
    return out


def error_distance(truth, estimate) -> float:
    """Euclidean distance between a true and an estimated position."""
    a = np.asarray(truth, dtype=float)
    b = np.asarray(estimate, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size not in (2, 3):
        raise ValueError(f"positions must both be 2D or 3D, got {a.shape} and {b.shape}")
    return math.sqrt(math.fsum((a - b) ** 2))


@dataclass(frozen=True)
class Scenario:
    references: np.ndarray
    trajectory: TrajectorySpec
    formation: FormationSpec
    channel: ch.PathLossModel
    ts: float = 0.1
    init: Optional[InitPolicy] = None
    q_spectral: Union[float, Sequence[float]] = 0.01
    drop_out_of_validity: bool = True
    q_e: Optional[np.ndarray] = None
    name: str = "custom"

    def __post_init__(self):
        refs = np.asarray(self.references, dtype=float)
        dim = self.formation.dimension
        if refs.ndim != 2 or refs.shape[1] != dim:
            raise ScenarioError(f"references must be (N, {dim}), got {refs.shape}")
        if len(refs) < dim + 1:
            raise ScenarioError(f"{dim}D scenarios need at least {dim + 1} references")
        if not np.all(np.isfinite(refs)):
            raise ScenarioError("reference positions must be finite")
        if self.trajectory.points.shape[1] != dim:
            raise ScenarioError("trajectory dimension does not match formation")
        if not (self.ts > 0 and math.isfinite(self.ts)):
            raise ScenarioError(f"ts must be > 0, got {self.ts}")
        object.__setattr__(self, "references", refs)

    @property
    def dimension(self) -> int:
        return self.formation.dimension

    @property
    def n_nodes(self) -> int:
        return self.formation.n_nodes

    def measurement_model(self) -> MeasurementModel:
        return MeasurementModel(self.references, self.formation, self.channel, self.q_e)


# ---------------------------------------------------------------------------
# Built-in layouts
# ---------------------------------------------------------------------------

CORRIDOR_REFERENCES = [
    (0, 0), (0, 5), (8, 0), (8, 5), (16, 0), (16, 5), (24, 0), (24, 5), (32, 0), (32, 5),
]
CUBE_REFERENCES = [(x, y, z) for x in (0, 8) for y in (0, 8) for z in (0, 8)]
# Anchor route through the cube interior (also in configs/cube3d_2mn.toml).
CUBE_WAYPOINTS = [
    (1.5, 1.5, 1.5), (4.0, 1.5, 2.5), (6.5, 2.5, 3.0), (6.5, 5.0, 4.0),
    (5.0, 6.5, 5.0), (2.5, 6.5, 5.5), (1.5, 4.5, 6.0),
]
EXP2D_REFERENCES = [(0, 0), (0, 3), (0, 6), (4.2, 0), (4.2, 3), (4.2, 6)]
EXP3D_REFERENCES = [(0, 0, 1), (0, 3, 1), (0, 6, 1), (4.2, 0, 1), (4.2, 3, 1), (4.2, 6, 1)]

BUILTIN_DURATION = 30.0

CHANNEL_PRESETS = {
    "log": ch.LogDistance(ch.FITTED_A, ch.FITTED_N, ch.FITTED_SIGMA),
    "log81": ch.LogDistanceClamped(ch.FITTED_A, ch.FITTED_N, ch.FITTED_SIGMA, d_max=8.1),
    "ieee": ch.Ieee802154(),
}

_LAYOUTS = {
    "corridor2d": (CORRIDOR_REFERENCES, Line((1, 3), (31, 3), BUILTIN_DURATION), (0, -0.5)),
    "cube3d": (CUBE_REFERENCES, Waypoints(CUBE_WAYPOINTS, BUILTIN_DURATION), (0, 0, 0.5)),
    "exp2d": (EXP2D_REFERENCES, Line((1, 1), (3, 5), BUILTIN_DURATION), (0, 0.5)),
    "exp3d": (EXP3D_REFERENCES, Line((1.8, 0, 1), (3.6, 0, 1), BUILTIN_DURATION), (0, 0, 0.5)),
}

BUILTIN_IDS = tuple(f"{layout}_{m}mn" for layout in _LAYOUTS for m in (1, 2))


def builtin_scenario(scenario_id: str, model: str = "log81") -> Scenario:
    """One of the built-in layouts, ``<layout>_<M>mn``, with a channel preset.

    ``model`` is one of ``log``, ``log81`` (log model trusted to 8.1 m) or
    ``ieee``.
    """
    if scenario_id not in BUILTIN_IDS:
        raise ScenarioError(f"unknown scenario {scenario_id!r}; valid ids: {', '.join(BUILTIN_IDS)}")
    if model not in CHANNEL_PRESETS:
        raise ScenarioError(f"unknown channel model {model!r}; valid: {', '.join(CHANNEL_PRESETS)}")
    layout, nodes = scenario_id.rsplit("_", 1)
    refs, trajectory, offset = _LAYOUTS[layout]
    dim = len(offset)
    if nodes == "2mn":
        formation = FormationSpec(np.array([offset], dtype=float), Attitude(), dim)
    else:
        formation = FormationSpec.single(dim)
    return Scenario(
        references=np.array(refs, dtype=float),
        trajectory=trajectory,
        formation=formation,
        channel=CHANNEL_PRESETS[model],
        init=KnownStart(trajectory.points[0], pos_var=0.25, vel_var=0.25),
        name=f"{scenario_id}:{model}",
    )


# ---------------------------------------------------------------------------
# Running trials
# ---------------------------------------------------------------------------


@dataclass
class ErrorReport:
    per_step_error: np.ndarray
    mean_error: float
    trial_means: list[float]
    grand_mean: float
    std: float
    metadata: dict = field(default_factory=dict)

    def summary(self) -> dict:
        """JSON-ready summary (the per-step series is left out)."""
        return {
            "grand_mean": self.grand_mean,
            "std": self.std,
            "trial_means": list(self.trial_means),
            "metadata": dict(self.metadata),
        }


TRACE_EXTRA = ("err_m", "p_trace")


def trace_header(dimension: int, n_nodes: int) -> list[str]:
    axes = "xyz"[:dimension]
    cols = ["t"] + [f"true_{a}" for a in axes] + [f"est_{a}" for a in axes] + list(TRACE_EXTRA)
    cols += [f"node{i + 1}_err_m" for i in range(1, n_nodes)]
    return cols


def synthesize_measurement(scenario: Scenario, nodes: np.ndarray, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Noisy stacked RSS for true node positions ``nodes`` (M, dim).

    Each node draws from its own stream so a node's noise does not depend on
    how many buddies it has.
    """
    dist = np.linalg.norm(nodes[:, None, :] - scenario.references[None, :, :], axis=2)
    sigma = scenario.channel.sigma
    noise = np.vstack([rng.normal(0.0, sigma, size=dist.shape[1]) for rng in rngs])
    z = ch.predict_rss(scenario.channel, dist) + noise
    if scenario.drop_out_of_validity:
        z = np.where(ch.in_validity(scenario.channel, dist), z, np.nan)
    return z.reshape(-1)


def synthesize_track(scenario: Scenario, nodes: np.ndarray, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Stacked RSS for a whole run, ``nodes`` of shape (K, M, dim) -> (K, M*N).

    Row k equals what :func:`synthesize_measurement` returns at step k when
    called step by step with the same generators.
    """
    dist = np.linalg.norm(nodes[:, :, None, :] - scenario.references[None, None], axis=3)
    k, m, n = dist.shape
    sigma = scenario.channel.sigma
    noise = np.stack([rng.normal(0.0, sigma, size=(k, n)) for rng in rngs], axis=1)
    z = ch.predict_rss(scenario.channel, dist) + noise
    if scenario.drop_out_of_validity:
        z = np.where(ch.in_validity(scenario.channel, dist), z, np.nan)
    return z.reshape(k, m * n)


def _node_rngs(seed: int, n_nodes: int) -> list[np.random.Generator]:
    return [np.random.default_rng([seed, i]) for i in range(n_nodes)]


def run_trial(scenario: Scenario, seed: int, trace: bool = False):
    """Track the scenario trajectory once.

    Returns ``(report, rows)`` where ``rows`` is the per-step trace (a list
    of lists matching :func:`trace_header`) or ``None``. Filter divergence
    propagates as :class:`FilterDivergenceError` carrying the step index.
    """
    samples = sample_trajectory(scenario.trajectory, scenario.ts)
    model = scenario.measurement_model()
    process = discretize(scenario.ts, scenario.q_spectral, scenario.dimension)
    rngs = _node_rngs(seed, scenario.n_nodes)
    policy = scenario.init or KnownStart(samples[0].position)

    errors = np.empty(len(samples))
    rows = [] if trace else None
    state: Optional[FilterState] = None
    truth = np.array([formation_positions(s.position, scenario.formation) for s in samples])
    z_all = synthesize_track(scenario, truth, rngs)
    for k, sample in enumerate(samples):
        nodes, z = truth[k], z_all[k]
        if state is None:
            state = initialize(z, model, policy)
        else:
            state = ekf_step(state, process, model, z, step=k)
        errors[k] = error_distance(sample.position, state.position)
        if trace:
            est_nodes = formation_positions(state.position, scenario.formation)
            buddy = [error_distance(nodes[i], est_nodes[i]) for i in range(1, len(nodes))]
            rows.append(
                [sample.t, *sample.position, *state.position, errors[k], float(np.trace(state.p)), *buddy]
            )

    mean = math.fsum(errors) / len(errors)
    report = ErrorReport(
        per_step_error=errors,
        mean_error=mean,
        trial_means=[mean],
        grand_mean=mean,
        std=0.0,
        metadata={"seed": seed, "trials": 1, "scenario": scenario.name, "nodes": scenario.n_nodes},
    )
    return report, rows


def aggregate(reports: Sequence[Optional[ErrorReport]], metadata: dict) -> ErrorReport:
    """Combine per-trial reports; ``None`` entries are diverged trials."""
    done = [r for r in reports if r is not None]
    means = [r.mean_error for r in done]
    if means:
        grand = math.fsum(means) / len(means)
        std = math.sqrt(math.fsum((m - grand) ** 2 for m in means) / (len(means) - 1)) if len(means) > 1 else 0.0
        per_step = np.mean([r.per_step_error for r in done], axis=0)
    else:
        grand, std, per_step = math.nan, math.nan, np.empty(0)
    meta = dict(metadata)
    meta["completed"] = len(done)
    meta["diverged"] = len(reports) - len(done)
    return ErrorReport(per_step, grand, means, grand, std, meta)


def run_monte_carlo(scenario: Scenario, trials: int, base_seed: int) -> ErrorReport:
    """Run ``trials`` independent trials with seeds ``base_seed + i``."""
    if trials < 1:
        raise ScenarioError(f"trials must be >= 1, got {trials}")
    reports: list[Optional[ErrorReport]] = []
    failures = {}
    for i in range(trials):
        try:
            reports.append(run_trial(scenario, base_seed + i)[0])
        except FilterDivergenceError as exc:
            reports.append(None)
            failures[str(i)] = f"diverged at step {exc.step}"
        except FilterError as exc:
            reports.append(None)
            failures[str(i)] = str(exc)
    meta = {
        "scenario": scenario.name,
        "base_seed": base_seed,
        "trials": trials,
        "nodes": scenario.n_nodes,
    }
    if failures:
        meta["failures"] = failures
    return aggregate(reports, meta)


def with_channel(scenario: Scenario, channel: ch.PathLossModel, name: Optional[str] = None) -> Scenario:
    return replace(scenario, channel=channel, name=name or scenario.name)


__all__ = [
    "BUILTIN_IDS",
    "CHANNEL_PRESETS",
    "CoarseMultilateration",
    "ErrorReport",
    "Line",
    "Scenario",
    "ScenarioError",
    "TrajectorySample",
    "Waypoints",
    "aggregate",
    "builtin_scenario",
    "error_distance",
    "run_monte_carlo",
    "run_trial",
    "sample_trajectory",
    "synthesize_measurement",
    "synthesize_track",
    "trace_header",
    "with_channel",
]
