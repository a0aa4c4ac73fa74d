from __future__ import annotations

import numpy as np
import pytest
from conftest import random_rotations
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dexfit import rotations as rot
from dexfit.errors import DegenerateMatrix, NotARotation, UnknownConvention

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)


def test_axis_angle_examples():
    assert np.array_equal(rot.axis_angle_to_matrix([0, 0, 0]), np.eye(3))
    assert np.allclose(rot.axis_angle_to_matrix([np.pi, 0, 0]), np.diag([1, -1, -1]), atol=1e-15)
    quarter = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
    assert np.allclose(rot.axis_angle_to_matrix([0, 0, np.pi / 2]), quarter, atol=1e-15)


def test_log_examples():
    assert np.array_equal(rot.matrix_to_axis_angle(np.eye(3)), np.zeros(3))
    aa = rot.matrix_to_axis_angle(np.diag([1.0, -1.0, -1.0]))
    assert np.allclose(aa, [np.pi, 0, 0], atol=1e-12)
    # half turns come back with a positive leading component
    aa = rot.matrix_to_axis_angle(rot.axis_angle_to_matrix([0, -np.pi, 0]))
    assert np.allclose(aa, [0, np.pi, 0], atol=1e-7)


def test_log_rejects_non_rotations():
    with pytest.raises(NotARotation):
        rot.matrix_to_axis_angle(2 * np.eye(3))
    with pytest.raises(NotARotation):
        rot.matrix_to_axis_angle(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(NotARotation):
        rot.matrix_to_axis_angle(np.eye(3) + 0.02)


def test_round_trip_random():
    rng = np.random.default_rng(0)
    aa, R = random_rotations(rng, 2000, np.pi - 1e-3)
    assert np.max(np.abs(rot.matrix_to_axis_angle(R) - aa)) < 1e-9


def test_round_trip_small_angles():
    rng = np.random.default_rng(1)
    aa = rng.normal(size=(500, 3)) * 10.0 ** rng.uniform(-12, -3, (500, 1))
    assert np.max(np.abs(rot.matrix_to_axis_angle(rot.axis_angle_to_matrix(aa)) - aa)) < 1e-15


def test_near_half_turn_recomposes():
    rng = np.random.default_rng(2)
    axis = rng.normal(size=(200, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    R = rot.axis_angle_to_matrix(axis * (np.pi - 10.0 ** rng.uniform(-8, -2, 200))[:, None])
    back = rot.axis_angle_to_matrix(rot.matrix_to_axis_angle(R))
    assert np.max(np.abs(back - R)) < 1e-12


@given(vec3)
def test_inverse_is_transpose(v):
    assert np.allclose(rot.axis_angle_to_matrix(-v), rot.axis_angle_to_matrix(v).T, atol=1e-14)


@given(vec3)
def test_rodrigues_matches_series_exponential(v):
    # oracle: truncated power series of exp(hat(v))
    k = rot.hat(v)
    term, total = np.eye(3), np.eye(3)
    for n in range(1, 60):
        term = term @ k / n
        total = total + term
    assert np.allclose(rot.axis_angle_to_matrix(v), total, atol=1e-12)


@given(arrays(np.float64, 3, elements=st.floats(-20, 20)))
def test_canonicalize_keeps_rotation(v):
    c = rot.canonicalize_axis_angle(v)
    assert np.linalg.norm(c) <= np.pi + 1e-12
    assert np.allclose(rot.axis_angle_to_matrix(c), rot.axis_angle_to_matrix(v), atol=1e-10)


def test_projection_examples():
    rng = np.random.default_rng(3)
    _, R = random_rotations(rng, 50)
    assert np.allclose(rot.project_to_rotation(R), R, atol=1e-14)
    assert np.allclose(rot.project_to_rotation(2 * np.eye(3)), np.eye(3), atol=1e-15)


def test_projection_is_nearest():
    rng = np.random.default_rng(4)
    _, R = random_rotations(rng, 20)
    for r in R:
        m = r + 0.01 * rng.normal(size=(3, 3))
        p = rot.project_to_rotation(m)
        assert np.linalg.norm(p - r) < 0.05
        best = np.linalg.norm(m - p)
        # random search over nearby rotations never beats the projection
        cands = rot.axis_angle_to_matrix(rng.normal(0, 0.02, (500, 3))) @ p
        assert np.all(np.linalg.norm(m - cands, axis=(1, 2)) >= best - 1e-12)


def test_projection_reflection_and_degenerate():
    p = rot.project_to_rotation(np.diag([1.0, 1.0, -1.0]) + 1e-3 * np.eye(3))
    assert rot.is_rotation(p)
    with pytest.raises(DegenerateMatrix):
        rot.project_to_rotation(np.outer([1.0, 2.0, 3.0], [0.5, 0.1, 0.2]))
    with pytest.raises(DegenerateMatrix):
        rot.project_to_rotation(np.full((3, 3), np.nan))


@given(arrays(np.float64, (3, 3), elements=st.floats(-5, 5)))
def test_projection_output_is_rotation(m):
    try:
        p = rot.project_to_rotation(m)
    except DegenerateMatrix:
        return
    assert rot.orthogonality_defect(p) < 1e-10 and np.linalg.det(p) > 0


def test_orthogonality_defect():
    assert rot.orthogonality_defect(2 * np.eye(3)) == pytest.approx(27.0)
    rng = np.random.default_rng(5)
    _, R = random_rotations(rng, 10)
    assert np.max(rot.orthogonality_defect(R)) < 1e-28
    for m in rng.normal(size=(20, 3, 3)):
        total = 0.0
        for i in range(3):
            for j in range(3):
                e = sum(m[i, k] * m[j, k] for k in range(3)) - (1.0 if i == j else 0.0)
                total += e * e
        assert rot.orthogonality_defect(m) == pytest.approx(total, rel=1e-12)


@pytest.mark.parametrize("conv", ["XZY", "YZX", "ZYX", "XYZ", "YXZ", "ZXY"])
def test_euler_examples(conv):
    t = rot.matrix_to_euler(np.eye(3), conv)
    assert np.array_equal(t.angles, np.zeros(3)) and not t.gimbal
    first = rot.elementary_rotation(rot.parse_convention(conv)[0], np.pi / 2)
    assert np.allclose(rot.matrix_to_euler(first, conv).angles, [np.pi / 2, 0, 0], atol=1e-15)


@pytest.mark.parametrize("conv", ["XZY", "YZX", "ZYX", "XYZ"])
def test_euler_round_trip(conv):
    rng = np.random.default_rng(6)
    ang = rng.uniform(-np.pi, np.pi, (1000, 3))
    ang[:, 1] = rng.uniform(-np.pi / 2 + 0.01, np.pi / 2 - 0.01, 1000)
    R = rot.euler_to_matrix(ang, conv)
    t = rot.matrix_to_euler(R, conv)
    assert np.max(np.abs(t.angles - ang)) < 1e-9
    assert not np.any(t.gimbal)
    assert np.all(t.angles > -np.pi) and np.all(t.angles <= np.pi)


def test_euler_gimbal():
    for sign in (1.0, -1.0):
        R = rot.euler_to_matrix([0.3, sign * np.pi / 2, 0.4], "XZY")
        t = rot.matrix_to_euler(R, "XZY")
        assert t.gimbal
        assert t.angles[2] == 0.0
        assert np.allclose(rot.euler_to_matrix(t.angles, "XZY"), R, atol=1e-12)
    # inside the flag band but outside the lock band the triple stays exact
    R = rot.euler_to_matrix([0.3, np.pi / 2 - 1e-7, 0.4], "XZY")
    t = rot.matrix_to_euler(R, "XZY")
    assert t.gimbal
    assert np.allclose(rot.euler_to_matrix(t.angles, "XZY"), R, atol=1e-13)


def test_euler_conventions():
    with pytest.raises(UnknownConvention):
        rot.parse_convention("XXY")
    with pytest.raises(UnknownConvention):
        rot.matrix_to_euler(np.eye(3), "ABC")
    with pytest.raises(UnknownConvention):
        rot.euler_to_matrix(np.zeros(3), "XY")
    # intrinsic order: R = R_first @ R_second @ R_third
    a = np.array([0.1, 0.2, 0.3])
    R = rot.euler_to_matrix(a, "ZYX")
    manual = rot.elementary_rotation(2, 0.1) @ rot.elementary_rotation(1, 0.2) @ rot.elementary_rotation(0, 0.3)
    assert np.allclose(R, manual)


@given(vec3)
def test_mirror_is_reflection_conjugate(v):
    s = np.diag([-1.0, 1.0, 1.0])
    assert np.allclose(rot.axis_angle_to_matrix(rot.mirror_axis_angle(v)),
                       s @ rot.axis_angle_to_matrix(v) @ s, atol=1e-14)
    assert np.array_equal(rot.mirror_axis_angle(rot.mirror_axis_angle(v)), v)
