"""Scenario files in TOML.

Layout (all lengths in meters, attitude in degrees)::

    name = "corridor"
    ts = 0.1
    trials = 200
    base_seed = 42
    q_spectral = 0.01             # scalar or one value per axis
    drop_out_of_validity = true
    q_e = 9.0                     # optional: measurement variance (dB^2)
    references = [[0, 0], [0, 5], [8, 0]]

    [trajectory]
    type = "line"                 # or "waypoints" with points = [[..], ..]
    start = [1, 3]
    end = [31, 3]
    duration = 30

    [formation]
    offsets = [[0, -0.5]]         # empty or missing for a single node
    attitude = { roll = 0, pitch = 0, yaw = 0 }

    [channel]
    type = "log_clamped"          # "log", "log_clamped" or "ieee802154"
    a = -37.342
    n = 1.9236
    sigma = 3.013
    d_max = 8.1

    [init]
    type = "known_start"          # or "multilateration"
    position = [1, 3]             # defaults to the trajectory start
    pos_var = 0.25
    vel_var = 0.25
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import channel as ch
from .ekf import CoarseMultilateration, KnownStart
from .geometry import Attitude, FormationSpec
from .sim import Line, Scenario, Waypoints


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    trials: Optional[int] = None
    base_seed: Optional[int] = None


_MISSING = object()


def _get(table: dict, key: str, prefix: str, default: Any = _MISSING):
    if key in table:
        return table[key]
    if default is _MISSING:
        raise ConfigError(prefix + key, "required key is missing")
    return default


def _number(table, key, prefix, default=_MISSING) -> float:
    value = _get(table, key, prefix, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(prefix + key, f"expected a number, got {value!r}")
    return float(value)


def _int(table, key, prefix, default=_MISSING):
    value = _get(table, key, prefix, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(prefix + key, f"expected an integer, got {value!r}")
    return value


def _points(value, key: str, dim: Optional[int] = None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a list of coordinates, got {value!r}") from None
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, dim or 2)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3) or (dim and arr.shape[1] != dim):
        want = f"{dim}D" if dim else "2D or 3D"
        raise ConfigError(key, f"expected a list of {want} coordinates, got shape {arr.shape}")
    return arr


def _vector(value, key: str, dim: int) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a coordinate, got {value!r}") from None
    if arr.shape != (dim,):
        raise ConfigError(key, f"expected {dim} components, got {value!r}")
    return arr


def _channel(table: dict) -> ch.PathLossModel:
    kind = _get(table, "type", "channel.")
    try:
        if kind == "ieee802154":
            return ch.Ieee802154(
                _number(table, "tx_power", "channel.", -0.1),
                _number(table, "sigma", "channel.", 2.3662),
            )
        if kind in ("log", "log_clamped"):
            a = _number(table, "a", "channel.")
            n = _number(table, "n", "channel.")
            sigma = _number(table, "sigma", "channel.", 0.0)
            if kind == "log":
                return ch.LogDistance(a, n, sigma)
            return ch.LogDistanceClamped(a, n, sigma, _number(table, "d_max", "channel.", 8.1))
    except ch.ChannelDomainError as exc:
        raise ConfigError("channel", str(exc)) from None
    raise ConfigError("channel.type", f"unknown model {kind!r} (log, log_clamped, ieee802154)")


def _trajectory(table: dict, dim: int):
    kind = _get(table, "type", "trajectory.")
    duration = _number(table, "duration", "trajectory.")
    try:
        if kind == "line":
            start = _vector(_get(table, "start", "trajectory."), "trajectory.start", dim)
            end = _vector(_get(table, "end", "trajectory."), "trajectory.end", dim)
            return Line(tuple(start), tuple(end), duration)
        if kind == "waypoints":
            pts = _points(_get(table, "points", "trajectory."), "trajectory.points", dim)
            return Waypoints(pts, duration)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("trajectory", str(exc)) from None
    raise ConfigError("trajectory.type", f"unknown trajectory {kind!r} (line, waypoints)")


def _formation(table: dict, dim: int) -> FormationSpec:
    offsets = _points(table.get("offsets", []), "formation.offsets", dim)
    att = table.get("attitude", {})
    if not isinstance(att, dict):
        raise ConfigError("formation.attitude", "expected a table with roll/pitch/yaw in degrees")
    unknown = set(att) - {"roll", "pitch", "yaw"}
    if unknown:
        raise ConfigError(f"formation.attitude.{sorted(unknown)[0]}", "unknown angle")
    attitude = Attitude.from_degrees(
        *(_number(att, k, "formation.attitude.", 0.0) for k in ("roll", "pitch", "yaw"))
    )
    try:
        return FormationSpec(offsets, attitude, dim)
    except ValueError as exc:
        raise ConfigError("formation", str(exc)) from None


def _init(table: dict, dim: int, start):
    kind = table.get("type", "known_start")
    pos_var = _number(table, "pos_var", "init.", 0.25)
    vel_var = _number(table, "vel_var", "init.", 0.25)
    if kind == "known_start":
        pos = _vector(table.get("position", list(start)), "init.position", dim)
        return KnownStart(tuple(pos), pos_var, vel_var)
    if kind == "multilateration":
        return CoarseMultilateration(pos_var, vel_var)
    raise ConfigError("init.type", f"unknown init policy {kind!r} (known_start, multilateration)")


def parse_config(data: dict, name: str = "custom") -> RunConfig:
    refs = _points(_get(data, "references", ""), "references")
    dim = refs.shape[1]
    for key in ("trajectory", "channel"):
        if not isinstance(_get(data, key, ""), dict):
            raise ConfigError(key, "expected a table")
    trajectory = _trajectory(data["trajectory"], dim)
    formation = _formation(data.get("formation", {}), dim)
    channel = _channel(data["channel"])
    init = _init(data.get("init", {}), dim, trajectory.points[0])

    q = _get(data, "q_spectral", "", 0.01)
    try:
        q_spectral = np.broadcast_to(np.asarray(q, dtype=float), (dim,))
    except (TypeError, ValueError):
        raise ConfigError("q_spectral", f"expected a number or {dim} numbers, got {q!r}") from None
    if np.any(q_spectral < 0):
        raise ConfigError("q_spectral", "must be >= 0")
    q_e = data.get("q_e")
    if q_e is not None:
        q_e_var = _number(data, "q_e", "")
        if q_e_var <= 0:
            raise ConfigError("q_e", "measurement variance must be > 0")
        n_meas = formation.n_nodes * len(refs)
        q_e = np.eye(n_meas) * q_e_var

    drop = _get(data, "drop_out_of_validity", "", True)
    if not isinstance(drop, bool):
        raise ConfigError("drop_out_of_validity", f"expected true/false, got {drop!r}")
    trials = _int(data, "trials", "", None)
    if trials is not None and trials < 1:
        raise ConfigError("trials", "must be >= 1")
    try:
        scenario = Scenario(
            references=refs,
            trajectory=trajectory,
            formation=formation,
            channel=channel,
            ts=_number(data, "ts", "", 0.1),
            init=init,
            q_spectral=tuple(q_spectral),
            drop_out_of_validity=drop,
            q_e=q_e,
            name=str(data.get("name", name)),
        )
    except ValueError as exc:
        raise ConfigError("scenario", str(exc)) from None
    return RunConfig(scenario, trials, _int(data, "base_seed", "", None))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid TOML: {exc}") from None
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from None
    return parse_config(data, name=path.stem)
