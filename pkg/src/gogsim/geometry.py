"""Small rigid-body and planar helpers shared by the gripper, planner and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def rotation_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation matrix R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Tool pose: position in meters, orientation as roll/pitch/yaw in radians."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def rotation(self) -> np.ndarray:
        return rotation_rpy(self.roll, self.pitch, self.yaw)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.x, self.y, self.z, self.roll, self.pitch, self.yaw)

    @classmethod
    def from_seq(cls, values) -> "Pose":
        return cls(*(float(v) for v in values))

    def lerp(self, other: "Pose", s: float) -> "Pose":
        a = np.asarray(self.as_tuple())
        b = np.asarray(other.as_tuple())
        return Pose.from_seq(a + (b - a) * s)


@dataclass(frozen=True)
class Line2D:
    """Oriented line in the table plane.

    ``normal`` is a unit vector; points with positive signed distance lie on
    the normal side. For folds the normal points at the moving half.
    """

    point: tuple[float, float]
    normal: tuple[float, float]

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = float(np.hypot(n[0], n[1]))
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("line normal must be a non-zero vector")
        object.__setattr__(self, "normal", (float(n[0] / norm), float(n[1] / norm)))
        object.__setattr__(self, "point", (float(self.point[0]), float(self.point[1])))

    @property
    def direction(self) -> np.ndarray:
        return np.array([-self.normal[1], self.normal[0]])

    def signed_distance(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        n = np.asarray(self.normal)
        return (pts[..., 0] - self.point[0]) * n[0] + (pts[..., 1] - self.point[1]) * n[1]

    def reflect(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        d = self.signed_distance(pts)
        out = pts.copy()
        out[..., 0] = pts[..., 0] - 2.0 * d * self.normal[0]
        out[..., 1] = pts[..., 1] - 2.0 * d * self.normal[1]
        return out

    @classmethod
    def through(cls, p, q) -> "Line2D":
        """Line through two points; normal is the left-hand normal of p->q."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        d = q - p
        return cls(tuple(p), (-d[1], d[0]))

    @classmethod
    def parse(cls, text: str) -> "Line2D":
        """Parse ``"px,py,nx,ny"``."""
        parts = [float(v) for v in text.replace(" ", "").split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected 'px,py,nx,ny', got {text!r}")
        return cls((parts[0], parts[1]), (parts[2], parts[3]))


def unit2(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)[:2]
    n = float(np.hypot(v[0], v[1]))
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("direction must be a non-zero finite 2D vector")
    return v / n


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_polygon_halfplane(poly, line: Line2D, keep_positive: bool = False) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against one side of ``line``."""
    p = np.asarray(poly, dtype=float)
    sign = 1.0 if keep_positive else -1.0
    d = sign * line.signed_distance(p)
    out = []
    n = len(p)
    for k in range(n):
        a, b = p[k], p[(k + 1) % n]
        da, db = d[k], d[(k + 1) % n]
        if da >= 0:
            out.append(a)
        if (da >= 0) != (db >= 0):
            s = da / (da - db)
            out.append(a + s * (b - a))
    return np.array(out).reshape(-1, 2)
