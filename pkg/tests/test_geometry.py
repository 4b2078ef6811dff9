import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rssfuse.geometry import (
    Attitude,
    FormationSpec,
    GeometryError,
    formation_jacobian,
    formation_positions,
    rotation_matrix,
)

angles = st.floats(-2 * math.pi, 2 * math.pi)
coords3 = st.lists(st.floats(-50, 50), min_size=3, max_size=3)


def test_zero_attitude_is_identity():
    np.testing.assert_array_equal(rotation_matrix(Attitude()), np.eye(3))


def test_quarter_yaw():
    r = rotation_matrix(Attitude(yaw=math.pi / 2))
    np.testing.assert_allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_rotation_order_is_zyx():
    roll, pitch, yaw = 0.3, -0.7, 1.9

    def rx(a):
        return np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])

    def ry(a):
        return np.array([[math.cos(a), 0, math.sin(a)], [0, 1, 0], [-math.sin(a), 0, math.cos(a)]])

    def rz(a):
        return np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])

    expected = rz(yaw) @ ry(pitch) @ rx(roll)
    np.testing.assert_allclose(rotation_matrix(Attitude(roll, pitch, yaw)), expected, atol=1e-15)


def test_random_rotations_orthonormal():
    rng = np.random.default_rng(11)
    for roll, pitch, yaw in rng.uniform(-math.pi, math.pi, (100, 3)):
        r = rotation_matrix(Attitude(roll, pitch, yaw))
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-12
        assert abs(np.linalg.det(r) - 1) < 1e-12


def test_attitude_degrees():
    att = Attitude.from_degrees(yaw=90)
    assert att.yaw == pytest.approx(math.pi / 2)


def test_attitude_rejects_nan():
    with pytest.raises(GeometryError):
        Attitude(roll=math.nan)


def test_experiment_3d_offset():
    spec = FormationSpec(np.array([[0, 0, 0.5]]), Attitude(), 3)
    pos = formation_positions([1.8, 0, 1], spec)
    np.testing.assert_allclose(pos, [[1.8, 0, 1], [1.8, 0, 1.5]])


def test_corridor_2d_offset():
    spec = FormationSpec(np.array([[0, -0.5]]), Attitude(), 2)
    pos = formation_positions([1, 3], spec)
    np.testing.assert_allclose(pos[1], [1, 2.5])


def test_half_turn():
    spec = FormationSpec(np.array([[0, 0.5, 0]]), Attitude(yaw=math.pi), 3)
    np.testing.assert_allclose(formation_positions([0, 0, 0], spec)[1], [0, -0.5, 0], atol=1e-15)


def test_2d_uses_yaw():
    spec = FormationSpec(np.array([[1.0, 0.0]]), Attitude(yaw=math.pi / 2), 2)
    np.testing.assert_allclose(formation_positions([0, 0], spec)[1], [0, 1], atol=1e-15)


def test_single_node():
    spec = FormationSpec.single(2)
    assert spec.n_nodes == 1
    np.testing.assert_array_equal(formation_positions([2, 3], spec), [[2, 3]])


@pytest.mark.parametrize(
    "offsets, attitude, dim",
    [
        ([[0, 0]], Attitude(), 2),
        ([[0, 0, 0]], Attitude(), 3),
        ([[1, math.inf]], Attitude(), 2),
        ([[1, 0]], Attitude(roll=0.1), 2),
        ([[1, 0]], Attitude(), 4),
    ],
)
def test_invalid_specs(offsets, attitude, dim):
    with pytest.raises(GeometryError):
        FormationSpec(np.array(offsets, dtype=float), attitude, dim)


def test_dimension_mismatch():
    spec = FormationSpec(np.array([[0, 0, 0.5]]), Attitude(), 3)
    with pytest.raises(GeometryError):
        formation_positions([1, 2], spec)


@given(coords3, angles, angles, angles, st.lists(coords3, min_size=1, max_size=4))
def test_rigidity_and_attitude_invariance(anchor, roll, pitch, yaw, offsets):
    offsets = np.array(offsets)
    if np.any(np.linalg.norm(offsets, axis=1) < 1e-3):
        return
    spec = FormationSpec(offsets, Attitude(roll, pitch, yaw), 3)
    pos = formation_positions(anchor, spec)
    np.testing.assert_array_equal(pos[0], anchor)
    ranges = np.linalg.norm(pos[1:] - pos[0], axis=1)
    np.testing.assert_allclose(ranges, np.linalg.norm(offsets, axis=1), atol=1e-9)
    # inter-node distances do not depend on attitude
    level = formation_positions(anchor, FormationSpec(offsets, Attitude(), 3))
    pair = lambda p: np.linalg.norm(p[:, None] - p[None], axis=2)
    np.testing.assert_allclose(pair(pos), pair(level), atol=1e-9)


@pytest.mark.parametrize("dim", [2, 3])
def test_jacobian_identity_blocks(dim):
    offsets = np.ones((2, dim)) * 0.5
    att = Attitude(0.2, 0.1, 0.7) if dim == 3 else Attitude(yaw=0.7)
    jac = formation_jacobian(FormationSpec(offsets, att, dim))
    assert jac.shape == (3, dim, dim)
    for block in jac:
        np.testing.assert_array_equal(block, np.eye(dim))


@pytest.mark.parametrize("dim", [2, 3])
def test_jacobian_matches_central_differences(dim):
    rng = np.random.default_rng(dim)
    att = Attitude(0.4, -0.3, 1.1) if dim == 3 else Attitude(yaw=1.1)
    spec = FormationSpec(rng.normal(size=(3, dim)), att, dim)
    jac = formation_jacobian(spec)
    anchor = rng.normal(size=dim) * 5
    h = 1e-6
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        fd = (formation_positions(anchor + e, spec) - formation_positions(anchor - e, spec)) / (2 * h)
        err = np.abs(fd - jac[:, :, k])
        assert np.max(err / np.maximum(np.abs(jac[:, :, k]), 1)) < 1e-6
