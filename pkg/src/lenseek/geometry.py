"""Directions, hemisphere angles, rotations, and attitude transforms.

Angle conventions used throughout the toolkit:

* A :class:`Direction` is a unit 3-vector. Hemisphere operations require
  ``z >= 0``; ``+z`` is the sensor boresight ("zenith").
* :class:`HemisphereAngles` hold elevation ``theta`` in ``[0, pi/2]``
  (``pi/2`` = zenith) and azimuth ``phi`` in ``(-pi, pi]``, both radians.
* World-frame direction vectors use the same convention with ``z``
  measuring "downness" toward the ground, so a target straight below the
  sensor is the zenith direction. Positions elsewhere in the toolkit are
  ENU metres; the simulator flips the vertical sign when converting a
  position difference into a direction.

All functions are pure and all types immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

UNIT_TOL = 1e-9


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class Direction:
    """Unit 3-vector."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        n = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(n - 1.0) > 1e-6:
            raise DomainError(f"direction norm {n:.9f} is not 1")

    @classmethod
    def from_array(cls, v, normalize: bool = False) -> "Direction":
        v = np.asarray(v, dtype=float)
        if normalize:
            n = float(np.linalg.norm(v))
            if n == 0.0:
                raise DomainError("cannot normalize zero vector")
            v = v / n
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class HemisphereAngles:
    """Elevation/azimuth pair on the upper hemisphere, radians."""

    theta: float
    phi: float

    def __post_init__(self) -> None:
        if not (-UNIT_TOL <= self.theta <= math.pi / 2 + UNIT_TOL):
            raise DomainError(f"theta {self.theta} outside [0, pi/2]")
        if not (-math.pi - UNIT_TOL < self.phi <= math.pi + UNIT_TOL):
            raise DomainError(f"phi {self.phi} outside (-pi, pi]")

    @classmethod
    def from_degrees(cls, theta_deg: float, phi_deg: float) -> "HemisphereAngles":
        """Construct from degrees; azimuth is wrapped into (-180, 180]."""
        return cls(math.radians(theta_deg), wrap_angle(math.radians(phi_deg)))

    @property
    def theta_deg(self) -> float:
        return math.degrees(self.theta)

    @property
    def phi_deg(self) -> float:
        return math.degrees(self.phi)


@dataclass(frozen=True)
class Rotation:
    """Proper rotation (orthonormal, det +1)."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise DomainError("rotation matrix must be 3x3")
        if not np.allclose(m.T @ m, np.eye(3), atol=1e-9):
            raise DomainError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(m) - 1.0) > 1e-9:
            raise DomainError("rotation matrix determinant is not +1")
        object.__setattr__(self, "matrix", m)

    def apply(self, d: Direction) -> Direction:
        return Direction.from_array(self.matrix @ d.as_array(), normalize=True)

    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T)


@dataclass(frozen=True)
class Attitude:
    """Roll/pitch/yaw of the sensor body, radians (intrinsic ZYX order)."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self) -> None:
        for name in ("roll", "pitch"):
            v = getattr(self, name)
            if not (-math.pi - UNIT_TOL <= v <= math.pi + UNIT_TOL):
                raise DomainError(f"{name} {v} outside [-pi, pi]")
        if not (-math.pi - UNIT_TOL < self.yaw <= math.pi + UNIT_TOL):
            raise DomainError(f"yaw {self.yaw} outside (-pi, pi]")

    @classmethod
    def level(cls) -> "Attitude":
        return cls(0.0, 0.0, 0.0)


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def attitude_matrix(att: Attitude) -> np.ndarray:
    """Body-to-world matrix: Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    return rot_z(att.yaw) @ rot_y(att.pitch) @ rot_x(att.roll)


def dir_from_angles(a: HemisphereAngles) -> Direction:
    """Unit direction [cos(theta)cos(phi), cos(theta)sin(phi), sin(theta)]."""
    ct = math.cos(a.theta)
    return Direction(ct * math.cos(a.phi), ct * math.sin(a.phi), math.sin(a.theta))


def angles_from_dir(u: Direction) -> HemisphereAngles:
    """Inverse of :func:`dir_from_angles`; at the zenith phi is 0 by convention."""
    if u.z < -UNIT_TOL:
        raise DomainError(f"direction z={u.z} is below the hemisphere")
    theta = math.asin(min(1.0, max(0.0, u.z)))
    if abs(u.x) < UNIT_TOL and abs(u.y) < UNIT_TOL:
        return HemisphereAngles(theta, 0.0)
    return HemisphereAngles(theta, math.atan2(u.y, u.x))


def rotation_to(u: Direction) -> Rotation:
    """Rotation taking the zenith boresight onto ``u``.

    Constructed as Rz(phi) @ Ry(pi/2 - theta), which fixes the roll degree
    of freedom deterministically.
    """
    if u.z < -UNIT_TOL:
        raise DomainError("rotation_to requires a hemisphere direction")
    a = angles_from_dir(u)
    return Rotation(rot_z(a.phi) @ rot_y(math.pi / 2 - a.theta))


def body_to_world(d: Direction, att: Attitude) -> Direction:
    """Rotate a body-frame unit vector into the world frame."""
    return Direction.from_array(attitude_matrix(att) @ d.as_array(), normalize=True)


def world_to_body(d: Direction, att: Attitude) -> Direction:
    """Inverse of :func:`body_to_world`."""
    return Direction.from_array(attitude_matrix(att).T @ d.as_array(), normalize=True)


def projection_rate(est: Direction, truth: Direction) -> float:
    """Dot product of estimated and true unit directions, in [-1, 1]."""
    return float(
        min(1.0, max(-1.0, est.x * truth.x + est.y * truth.y + est.z * truth.z))
    )


def angular_distance(a: Direction, b: Direction) -> float:
    """Angle between two unit vectors, radians in [0, pi]."""
    return math.acos(projection_rate(a, b))
