"""Planar rigid-body geometry for curvature-bounded curves.

Conventions used throughout the package:

* headings are measured counterclockwise from the +x axis and wrapped to
  (-pi, pi],
* a positive curvature turns left (counterclockwise), so the turn-circle
  center sits on the left normal of the heading,
* arc angles are wrapped to [0, 2*pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

TWO_PI = 2.0 * math.pi


class DegenerateFrameError(Exception):
    """Raised when the two turn circles defining a frame coincide."""


def wrap_pi(angle):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), TWO_PI)


def wrap_2pi(angle):
    """Wrap an angle (scalar or array) to [0, 2*pi)."""
    return np.mod(np.asarray(angle, dtype=float), TWO_PI)


def heading_vector(angle):
    """Unit vector(s) (cos a, sin a), stacked on the last axis."""
    a = np.asarray(angle, dtype=float)
    return np.stack([np.cos(a), np.sin(a)], axis=-1)


def left_normal(angle):
    """Unit left normal(s) (-sin a, cos a), stacked on the last axis."""
    a = np.asarray(angle, dtype=float)
    return np.stack([-np.sin(a), np.cos(a)], axis=-1)


@dataclass(frozen=True)
class OrientedPoint:
    """A planar position with a heading.

    Attributes
    ----------
    x, y : float
        Position [m].
    heading : float
        Direction of travel [rad], wrapped to (-pi, pi] on construction.
    """

    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "heading", float(wrap_pi(self.heading)))

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.heading), math.sin(self.heading)])

    def turn_center(self, radius: float, winding: int) -> np.ndarray:
        """Center of the turn circle of given radius; winding +1 left, -1 right."""
        n = left_normal(self.heading)
        return self.pos + winding * radius * n

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading])

    @staticmethod
    def from_array(arr) -> "OrientedPoint":
        return OrientedPoint(arr[0], arr[1], arr[2])


@dataclass(frozen=True)
class RigidMotion:
    """Rotation by `rotation` followed by translation by `translation`."""

    rotation: float
    translation: tuple

    def __post_init__(self):
        object.__setattr__(self, "rotation", float(self.rotation))
        t = np.asarray(self.translation, dtype=float)
        object.__setattr__(self, "translation", (float(t[0]), float(t[1])))

    @staticmethod
    def identity() -> "RigidMotion":
        return RigidMotion(0.0, (0.0, 0.0))

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.array([[c, -s], [s, c]])

    def apply_point(self, point) -> np.ndarray:
        """Apply to one point (2,) or a stack of points (..., 2)."""
        p = np.asarray(point, dtype=float)
        return p @ self.matrix.T + np.asarray(self.translation)

    def apply_pose(self, pose: OrientedPoint) -> OrientedPoint:
        q = self.apply_point(pose.pos)
        return OrientedPoint(q[0], q[1], pose.heading + self.rotation)

    def compose(self, other: "RigidMotion") -> "RigidMotion":
        """Motion equivalent to applying `other` first, then self."""
        t = self.apply_point(np.asarray(other.translation))
        return RigidMotion(self.rotation + other.rotation, (t[0], t[1]))

    def inverse(self) -> "RigidMotion":
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        tx, ty = self.translation
        return RigidMotion(-self.rotation, (-(c * tx + s * ty), -(-s * tx + c * ty)))


def propagate(start: OrientedPoint, curvature: float, length: float) -> OrientedPoint:
    """Drive a constant-curvature segment of given arc length from a pose.

    Parameters
    ----------
    start : OrientedPoint
    curvature : float
        Signed curvature [1/m]; zero means a straight segment.
    length : float
        Nonnegative arc length [m].

    Returns
    -------
    OrientedPoint
        Pose after traversing the segment.
    """
    if length < 0:
        raise ValueError("segment length must be nonnegative")
    g = start.heading
    if curvature == 0.0:
        return OrientedPoint(start.x + length * math.cos(g),
                             start.y + length * math.sin(g), g)
    g1 = g + curvature * length
    x = start.x + (math.sin(g1) - math.sin(g)) / curvature
    y = start.y - (math.cos(g1) - math.cos(g)) / curvature
    return OrientedPoint(x, y, g1)


def propagate_arrays(x, y, heading, curvature, length):
    """Vectorized `propagate` on parallel arrays; returns (x, y, heading)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    g = np.asarray(heading, dtype=float)
    k = np.asarray(curvature, dtype=float)
    s = np.asarray(length, dtype=float)
    straight = np.abs(k) < 1e-14
    k_safe = np.where(straight, 1.0, k)
    g1 = g + k * s
    x_arc = x + (np.sin(g1) - np.sin(g)) / k_safe
    y_arc = y - (np.cos(g1) - np.cos(g)) / k_safe
    x_str = x + s * np.cos(g)
    y_str = y + s * np.sin(g)
    return (np.where(straight, x_str, x_arc),
            np.where(straight, y_str, y_arc),
            g1)


class SegmentKind(Enum):
    ARC = "arc"
    STRAIGHT = "straight"


@dataclass(frozen=True)
class CurveSegment:
    """One constant-curvature piece of a curve."""

    start: OrientedPoint
    curvature: float
    length: float

    def __post_init__(self):
        if self.length < -1e-12:
            raise ValueError("segment length must be nonnegative")
        object.__setattr__(self, "curvature", float(self.curvature))
        object.__setattr__(self, "length", float(max(self.length, 0.0)))

    @property
    def kind(self) -> SegmentKind:
        return SegmentKind.STRAIGHT if self.curvature == 0.0 else SegmentKind.ARC

    @property
    def end(self) -> OrientedPoint:
        return propagate(self.start, self.curvature, self.length)

    def sample(self, n: int) -> np.ndarray:
        """n points along the segment (including both ends), shape (n, 2)."""
        s = np.linspace(0.0, self.length, n)
        x, y, _ = propagate_arrays(self.start.x, self.start.y,
                                   self.start.heading, self.curvature, s)
        return np.stack([x, y], axis=-1)


class CurveWord:
    """A chained sequence of constant-curvature segments."""

    def __init__(self, segments):
        self.segments = tuple(segments)

    @staticmethod
    def from_controls(start: OrientedPoint, curvatures, lengths) -> "CurveWord":
        segs = []
        pose = start
        for k, s in zip(curvatures, lengths):
            seg = CurveSegment(pose, float(k), float(s))
            segs.append(seg)
            pose = seg.end
        return CurveWord(segs)

    @property
    def start(self) -> OrientedPoint:
        return self.segments[0].start

    @property
    def length(self) -> float:
        return float(sum(seg.length for seg in self.segments))

    def endpoint(self) -> OrientedPoint:
        return self.segments[-1].end if self.segments else None

    def curvatures(self) -> np.ndarray:
        return np.array([seg.curvature for seg in self.segments])

    def lengths(self) -> np.ndarray:
        return np.array([seg.length for seg in self.segments])

    def validate(self, tol: float = 1e-9) -> bool:
        """Check that consecutive segments chain continuously."""
        for a, b in zip(self.segments, self.segments[1:]):
            e = a.end
            if (abs(e.x - b.start.x) > tol or abs(e.y - b.start.y) > tol
                    or abs(wrap_pi(e.heading - b.start.heading)) > tol):
                return False
        return True

    def sample(self, n: int) -> np.ndarray:
        """About n points along the whole word, shape (>=2, 2)."""
        total = self.length
        if total <= 0:
            return np.array([self.start.pos])
        pts = []
        for seg in self.segments:
            m = max(2, int(round(n * seg.length / total)) + 1)
            pts.append(seg.sample(m))
        return np.vstack(pts)


def word_endpoint(start: OrientedPoint, curvatures, lengths) -> OrientedPoint:
    """Endpoint of a piecewise-constant-curvature word, by exact folding."""
    pose = start
    for k, s in zip(curvatures, lengths):
        pose = propagate(pose, float(k), float(s))
    return pose


def canonical_frame(start: OrientedPoint, end: OrientedPoint, radius: float):
    """Rigid motion into the frame whose x axis joins the two left turn circles.

    The departure left circle maps to (0, r) and the arrival left circle to
    (x, r) with x >= 0, so the common tangent below both circles is the x axis.

    Returns
    -------
    (T, startـf, end_f) where T is the world->frame motion and the poses are
    the transformed start/end.

    Raises
    ------
    DegenerateFrameError
        If the two left circle centers coincide (no unique axis direction).
    """
    c1 = start.turn_center(radius, +1)
    c2 = end.turn_center(radius, +1)
    d = c2 - c1
    dist = math.hypot(d[0], d[1])
    if dist < 1e-12 * max(radius, 1.0):
        raise DegenerateFrameError(
            "left turn circles coincide; no unique frame axis")
    axis = math.atan2(d[1], d[0])
    rot = RigidMotion(-axis, (0.0, 0.0))
    shift = rot.apply_point(c1)
    frame = RigidMotion(-axis, (-shift[0], -shift[1] + radius))
    return frame, frame.apply_pose(start), frame.apply_pose(end)


def frame_from_centers(c1, c2, radius: float) -> RigidMotion:
    """World->frame motion sending center c1 to (0, r) and c2 onto y = r, x > 0."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    d = c2 - c1
    dist = math.hypot(d[0], d[1])
    if dist < 1e-12 * max(radius, 1.0):
        raise DegenerateFrameError("turn circles coincide; no unique frame axis")
    axis = math.atan2(d[1], d[0])
    rot = RigidMotion(-axis, (0.0, 0.0))
    shift = rot.apply_point(c1)
    return RigidMotion(-axis, (-shift[0], -shift[1] + radius))
