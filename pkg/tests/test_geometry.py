import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riscalib.geometry import (
    ArrayLayout,
    GeometryError,
    Pose,
    apply_geometry_error,
    element_positions,
    farfield_response,
    is_rotation,
    nearfield_response,
    rot_zyx,
)

angles = st.floats(-360, 360, allow_nan=False)
coords = st.floats(-50, 50, allow_nan=False)


def _axis(axis, deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    if axis == "z":
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def test_rot_zyx_identity():
    assert np.array_equal(rot_zyx(0, 0, 0), np.eye(3))


def test_rot_zyx_quarter_turn_about_z():
    np.testing.assert_allclose(rot_zyx(90, 0, 0) @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_rot_zyx_matches_independent_composition():
    ref = _axis("z", 0.2) @ _axis("y", 0.2) @ _axis("x", 0.2)
    assert np.max(np.abs(rot_zyx(0.2, 0.2, 0.2) - ref)) < 1e-12


@given(angles, angles, angles)
def test_rot_zyx_is_in_so3(z, y, x):
    R = rot_zyx(z, y, x)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1) < 1e-9


def test_pose_rejects_reflection():
    with pytest.raises(ValueError):
        Pose(np.zeros(3), np.diag([1.0, 1.0, -1.0]))


def test_zero_geometry_error_is_identity():
    pose = Pose(np.array([0.0, -5.0, 2.5]), rot_zyx(0, 0, -90))
    out = apply_geometry_error(pose, GeometryError(0.0, 0.0))
    assert np.array_equal(out.position, pose.position)
    np.testing.assert_allclose(out.orientation, pose.orientation, atol=0)


def test_position_error_offset_vector():
    pose = Pose(np.array([0.0, -5.0, 2.5]))
    out = apply_geometry_error(pose, GeometryError(0.02, 0.0))
    np.testing.assert_allclose(out.position - pose.position, [0.02, 0.02, 0.02], rtol=0, atol=1e-15)


def test_orientation_error_stays_proper():
    pose = Pose(np.zeros(3), rot_zyx(10, 20, 30))
    out = apply_geometry_error(pose, GeometryError(0.0, 0.2))
    assert is_rotation(out.orientation, 1e-9)
    np.testing.assert_allclose(out.orientation, rot_zyx(0.2, 0.2, 0.2) @ pose.orientation)


@given(coords, coords, coords, angles, angles, angles)
def test_zero_error_identity_property(x, y, z, a, b, c):
    pose = Pose(np.array([x, y, z]), rot_zyx(a, b, c))
    out = apply_geometry_error(pose, GeometryError())
    np.testing.assert_allclose(out.position, pose.position)
    np.testing.assert_allclose(out.orientation, pose.orientation, atol=1e-15)


def test_single_element_at_pose_position():
    pose = Pose(np.array([1.0, 2.0, 3.0]), rot_zyx(30, 10, 5))
    E = element_positions(ArrayLayout(1, 1, 0.01), pose)
    np.testing.assert_allclose(E, [[1.0, 2.0, 3.0]])


def test_two_elements_one_spacing_apart():
    E = element_positions(ArrayLayout(2, 1, 0.005), Pose(np.zeros(3), rot_zyx(40, -20, 70)))
    assert abs(np.linalg.norm(E[0] - E[1]) - 0.005) < 1e-15


def test_64x64_centroid():
    pose = Pose(np.array([0.0, -5.0, 2.5]), rot_zyx(0, 0, -90))
    E = element_positions(ArrayLayout(64, 64, 0.0053), pose)
    assert E.shape == (4096, 3)
    assert np.max(np.abs(E.mean(axis=0) - pose.position)) < 1e-12


@given(st.integers(2, 7), st.integers(2, 7), st.floats(1e-3, 0.5), angles, angles, angles)
@settings(max_examples=40)
def test_nearest_neighbour_distance_is_spacing(rows, cols, d, a, b, c):
    E = element_positions(ArrayLayout(rows, cols, d), Pose(np.zeros(3), rot_zyx(a, b, c)))
    D = np.linalg.norm(E[:, None] - E[None], axis=-1)
    np.fill_diagonal(D, np.inf)
    np.testing.assert_allclose(D.min(axis=1), d, rtol=1e-9)


def test_layout_rejects_zero_spacing():
    with pytest.raises(ValueError):
        ArrayLayout(2, 2, 0.0)


def test_equidistant_elements_give_constant_vector():
    # a ring of elements seen from its axis; the centroid reference adds one common phase
    phi = np.linspace(0, 2 * np.pi, 9)[:-1]
    E = np.column_stack([np.cos(phi), np.sin(phi), np.zeros(8)])
    a = nearfield_response(E, np.array([0.0, 0.0, 2.0]), 0.01)
    np.testing.assert_allclose(a, np.full(8, a[0]), atol=1e-12)
    expected = np.exp(-2j * np.pi * (np.sqrt(5.0) - 2.0) / 0.01)
    np.testing.assert_allclose(a[0], expected, atol=1e-9)


@given(coords, coords, st.floats(0.5, 30))
@settings(max_examples=50)
def test_nearfield_unit_modulus(x, y, z):
    E = element_positions(ArrayLayout(4, 5, 0.005), Pose(np.zeros(3)))
    a = nearfield_response(E, np.array([x, y, z]), 0.0107)
    np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)


@given(coords, coords, coords)
@settings(max_examples=50)
def test_nearfield_translation_invariant(tx, ty, tz):
    E = element_positions(ArrayLayout(4, 4, 0.005), Pose(np.zeros(3), rot_zyx(10, 20, 30)))
    src = np.array([0.3, -0.7, 2.0])
    t = np.array([tx, ty, tz])
    a = nearfield_response(E, src, 0.0107)
    b = nearfield_response(E + t, src + t, 0.0107)
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_far_source_matches_planar_wavefront():
    lam = 0.0107
    E = element_positions(ArrayLayout(8, 8, lam / 2), Pose(np.zeros(3)))
    u = np.array([0.0, 0.0, 1.0])
    a = nearfield_response(E, 1e6 * lam * u, lam)
    b = farfield_response(E, u, lam)
    assert np.max(np.abs(np.angle(a * b.conj()))) < 1e-3


def test_coincident_source_rejected():
    E = element_positions(ArrayLayout(2, 2, 0.01), Pose(np.zeros(3)))
    with pytest.raises(ValueError):
        nearfield_response(E, E[0], 0.01)
