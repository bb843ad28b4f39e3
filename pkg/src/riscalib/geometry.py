"""Poses, rotations, planar RIS layouts and element-level array responses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


def rot_x(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle_deg: float) -> np.ndarray:
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_zyx(gamma_z: float, gamma_y: float, gamma_x: float) -> np.ndarray:
    """Return ``R_z(gamma_z) @ R_y(gamma_y) @ R_x(gamma_x)``; angles in degrees."""
    return rot_z(gamma_z) @ rot_y(gamma_y) @ rot_x(gamma_x)


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)


@dataclass(frozen=True)
class Pose:
    """Position (m) and orientation of a node; local z is the facing direction."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        R = np.asarray(self.orientation, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("pose position must be finite")
        if not is_rotation(R):
            raise ValueError("pose orientation must be a proper rotation matrix")
        p.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", R)

    @property
    def normal(self) -> np.ndarray:
        return self.orientation[:, 2]


@dataclass(frozen=True)
class ArrayLayout:
    rows: int
    cols: int
    spacing: float

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ValueError("rows and cols must be positive")
        if not (np.isfinite(self.spacing) and self.spacing > 0):
            raise ValueError("spacing must be > 0")

    @property
    def n_elements(self) -> int:
        return int(self.rows) * int(self.cols)

    def local_positions(self) -> np.ndarray:
        """Element coordinates in the panel frame, centred on the origin (z = 0)."""
        r = (np.arange(self.rows) - (self.rows - 1) / 2.0) * self.spacing
        c = (np.arange(self.cols) - (self.cols - 1) / 2.0) * self.spacing
        X, Y = np.meshgrid(r, c, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])


@dataclass(frozen=True)
class GeometryError:
    err_pos: float = 0.0  # m, applied along [1, 1, 1]
    err_ori: float = 0.0  # degrees, applied about z, y and x

    def __post_init__(self):
        if not (np.isfinite(self.err_pos) and np.isfinite(self.err_ori)):
            raise ValueError("geometry errors must be finite")


def apply_geometry_error(pose: Pose, err: GeometryError) -> Pose:
    """Perturb a pose: shift by ``err_pos*[1,1,1]`` and left-multiply by ``rot_zyx(err_ori, ...)``."""
    Rv = rot_zyx(err.err_ori, err.err_ori, err.err_ori)
    return Pose(pose.position + err.err_pos * np.ones(3), Rv @ pose.orientation)


def element_positions(layout: ArrayLayout, pose: Pose) -> np.ndarray:
    """Global element coordinates, shape ``(rows*cols, 3)``; the grid centroid is ``pose.position``."""
    return pose.position + layout.local_positions() @ pose.orientation.T


def _distances(elements, points):
    diff = np.asarray(points, dtype=float)[..., None, :] - np.asarray(elements, dtype=float)
    return np.sqrt(np.einsum("...i,...i->...", diff, diff))


def nearfield_response(elements, source, wavelength: float) -> np.ndarray:
    """Spherical-wavefront response of ``elements`` to ``source``, phase-referenced to the centroid.

    ``source`` may be a single point ``(3,)`` or a batch ``(n, 3)``; the result then
    has shape ``(N,)`` or ``(n, N)``.
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    elements = np.asarray(elements, dtype=float)
    d = _distances(elements, source)
    if np.any(d <= 1e-12):
        raise ValueError("source coincides with an array element")
    centroid = elements.mean(axis=0)
    d_ref = _distances(centroid[None, :], source)
    return np.exp(-2j * np.pi * (d - d_ref) / wavelength)


def farfield_response(elements, direction, wavelength: float) -> np.ndarray:
    """Planar-wavefront steering vector for a unit ``direction`` pointing at the source."""
    elements = np.asarray(elements, dtype=float)
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    rel = elements - elements.mean(axis=0)
    return np.exp(2j * np.pi * (rel @ u) / wavelength)


def ula_positions(n: int, spacing: float, center, axis=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Uniform linear array along ``axis`` centred on ``center``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    offs = (np.arange(n) - (n - 1) / 2.0) * spacing
    return np.asarray(center, dtype=float) + offs[:, None] * axis
