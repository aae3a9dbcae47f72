"""Patch-versus-forbidden-region tests.

Circular forbidden regions are convex sets (their complements are not), so
the concave-constraint vertex shortcut cannot certify them; the exact
distance from the circle center to the rotated rectangle locates the deepest
intrusion point instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ForbiddenCircle:
    """Circular forbidden region (no-fly zone)."""

    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class IntrusionReport:
    """How deeply one patch cuts into one forbidden region."""

    patch_id: int
    region_id: int
    depth: float
    exceeded: bool


def circle_patch_depth(patch, circle) -> float:
    """Deepest intrusion of a rectangular patch into a circular region.

    Returns max(0, radius - d) where d is the Euclidean distance from the
    circle center to the patch rectangle (zero when the center lies inside),
    i.e. the penetration depth at the deepest patch point.
    """
    local = patch.to_world.inverse().apply_point(
        np.asarray(circle.center, float))
    dx = max(patch.x_min - local[0], 0.0, local[0] - patch.x_max)
    dy = max(patch.y_min - local[1], 0.0, local[1] - patch.y_max)
    d = float(np.hypot(dx, dy))
    return max(0.0, circle.radius - d)


def vertex_feasibility(patch, h) -> bool:
    """Certify h >= 0 on the whole patch by testing its four vertices.

    Valid for concave h (convex feasible set): the patch is the convex hull
    of its corners, so h >= 0 at all four corners implies h >= 0 everywhere
    on the patch.
    """
    corners = patch.corners_world()
    return bool(all(h(float(cx), float(cy)) >= 0.0 for cx, cy in corners))


def intrusion_reports(patches, circles, epsilon):
    """Depth of every patch against every circle, flagged against epsilon."""
    reports = []
    for pi, patch in enumerate(patches):
        for ci, circle in enumerate(circles):
            depth = circle_patch_depth(patch, circle)
            reports.append(IntrusionReport(patch_id=pi, region_id=ci,
                                           depth=depth,
                                           exceeded=depth > epsilon))
    return reports
