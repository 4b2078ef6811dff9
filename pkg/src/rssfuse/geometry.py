"""Rigid formation geometry for a group of mobile nodes.

Node 1 (the anchor) carries the estimated state. Every other node sits at a
fixed body-frame offset from it, rotated into the world frame by the
formation attitude (intrinsic Z-Y-X, i.e. yaw, then pitch, then roll).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Attitude:
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.roll, self.pitch, self.yaw)):
            raise GeometryError("attitude angles must be finite")

    @classmethod
    def from_degrees(cls, roll=0.0, pitch=0.0, yaw=0.0) -> "Attitude":
        return cls(math.radians(roll), math.radians(pitch), math.radians(yaw))


def rotation_matrix(attitude: Attitude) -> np.ndarray:
    """Body-to-world rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    cr, sr = math.cos(attitude.roll), math.sin(attitude.roll)
    cp, sp = math.cos(attitude.pitch), math.sin(attitude.pitch)
    cy, sy = math.cos(attitude.yaw), math.sin(attitude.yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


@dataclass(frozen=True)
class FormationSpec:
    """Offsets of nodes 2..M from the anchor, in the body frame (meters).

    An empty ``offsets`` array describes a lone anchor node (M = 1).
    In 2D only yaw is used; roll and pitch must be zero.
    """

    offsets: np.ndarray
    attitude: Attitude = field(default_factory=Attitude)
    dimension: int = 2

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise GeometryError(f"dimension must be 2 or 3, got {self.dimension}")
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1, self.dimension)
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)
        norms = np.linalg.norm(offsets, axis=1)
        if not np.all(np.isfinite(norms)) or np.any(norms <= 0):
            raise GeometryError("every offset must have finite, non-zero length")
        if self.dimension == 2 and (self.attitude.roll or self.attitude.pitch):
            raise GeometryError("2D formations accept yaw only")

    @property
    def n_nodes(self) -> int:
        return len(self.offsets) + 1

    @classmethod
    def single(cls, dimension: int) -> "FormationSpec":
        return cls(np.empty((0, dimension)), Attitude(), dimension)

    def world_offsets(self) -> np.ndarray:
        """Offsets rotated into the world frame, shape (M-1, dimension)."""
        return self._node_offsets[1:]

    @cached_property
    def _node_offsets(self) -> np.ndarray:
        # row 0 is the anchor's own zero offset
        rot = rotation_matrix(self.attitude)[: self.dimension, : self.dimension]
        out = np.vstack([np.zeros(self.dimension), self.offsets @ rot.T])
        out.setflags(write=False)
        return out


def formation_positions(anchor, spec: FormationSpec) -> np.ndarray:
    """World positions of all nodes, shape (M, dimension); row 0 is the anchor."""
    anchor = np.asarray(anchor, dtype=float)
    if anchor.shape != (spec.dimension,):
        raise GeometryError(
            f"anchor has shape {anchor.shape}, formation is {spec.dimension}D"
        )
    return anchor + spec._node_offsets


def formation_jacobian(spec: FormationSpec) -> np.ndarray:
    """d(node position)/d(anchor position) for every node, shape (M, dim, dim).

    Rigid offsets do not depend on the anchor, so every block is the
    identity. A curved (non-rigid) formation would return its own blocks
    here and the filter picks them up unchanged.
    """
    return np.broadcast_to(np.eye(spec.dimension), (spec.n_nodes, spec.dimension, spec.dimension))
