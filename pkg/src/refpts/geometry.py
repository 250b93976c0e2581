"""Rigid SE(3) transforms for bringing sender detections into the ego frame."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

ORTHO_TOL = 1e-9
# calibration matrices further than this from SO(3) are rejected outright
REPAIR_TOL = 1e-3


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class Velocity2(NamedTuple):
    """Ground-plane velocity in m/s."""

    vx: float
    vy: float


class Size3(NamedTuple):
    length: float
    width: float
    height: float


def check_point(p: Point3) -> Point3:
    if not all(math.isfinite(c) for c in p):
        raise ValueError(f"non-finite point {p!r}")
    return p


def check_velocity(v: Velocity2) -> Velocity2:
    if not all(math.isfinite(c) for c in v):
        raise ValueError(f"non-finite velocity {v!r}")
    return v


def check_size(s: Size3) -> Size3:
    if not all(math.isfinite(c) and c > 0 for c in s):
        raise ValueError(f"size extents must be finite and positive, got {s!r}")
    return s


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    # polar decomposition: nearest orthonormal matrix in Frobenius norm
    u, _, vt = np.linalg.svd(r)
    q = u @ vt
    if np.linalg.det(q) < 0:
        u[:, -1] *= -1
        q = u @ vt
    return q


@dataclass(frozen=True, eq=False)
class TransformSE3:
    """Rigid transform ``p -> R p + t``.

    Rotations within ``REPAIR_TOL`` of SO(3) are snapped back onto it by polar
    decomposition; anything further off, or with negative determinant, raises
    ``ValueError``.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform contains non-finite entries")
        err = np.max(np.abs(r.T @ r - np.eye(3)))
        if err >= ORTHO_TOL:
            if err >= REPAIR_TOL:
                raise ValueError(f"rotation is not orthonormal (max error {err:.3g})")
            r = _orthonormalize(r)
        if np.linalg.det(r) <= 0:
            raise ValueError("rotation must have determinant +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> TransformSE3:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> TransformSE3:
        """Rotation of ``yaw`` radians about +z followed by ``translation``."""
        c, s = math.cos(yaw), math.sin(yaw)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(r, np.asarray(translation, dtype=float))

    @classmethod
    def from_matrix(cls, m) -> TransformSE3:
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 homogeneous matrix, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=ORTHO_TOL):
            raise ValueError("bottom row of a homogeneous transform must be [0 0 0 1]")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransformSE3):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self) -> int:
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def allclose(self, other: TransformSE3, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )


def transform_point(t: TransformSE3, p: Point3) -> Point3:
    x, y, z = t.rotation @ np.asarray(p, dtype=float) + t.translation
    return Point3(float(x), float(y), float(z))


def transform_points(t: TransformSE3, pts: np.ndarray) -> np.ndarray:
    """Vectorised :func:`transform_point` over an ``(N, 3)`` array."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    return pts @ t.rotation.T + t.translation


def transform_velocity(t: TransformSE3, v: Velocity2) -> Velocity2:
    # direction vector: rotate only, then drop the vertical component
    vx, vy, _ = t.rotation @ np.array([v[0], v[1], 0.0])
    return Velocity2(float(vx), float(vy))


def compose(a: TransformSE3, b: TransformSE3) -> TransformSE3:
    """Transform that applies ``b`` first, then ``a``."""
    return TransformSE3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(t: TransformSE3) -> TransformSE3:
    rt = t.rotation.T
    return TransformSE3(rt, -rt @ t.translation)
