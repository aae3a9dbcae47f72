"""Rectangular patch covers of fixed-length curvature-bounded reach sets.

Given two oriented endpoints, a curve length ell and a curvature bound, the
set swept by all admissible curves is covered by up to four rectangles, one
per *scenario* (departure/arrival turn direction).  Each rectangle is
axis-aligned in its scenario frame: the frame whose x axis is the common
tangent below the departure and arrival turn circles of that scenario.

Within a scenario the extremal curves consist of at most five arcs and
straights.  All candidate classes are parametrized by the directions of
their straight segments (or by contact angles for all-arc words), and the
prescribed total length picks out a one-dimensional solution family whose
roots are found by bracketed bisection over dense parameter sweeps:

* three-turn tangent configurations, swept along the critical direction
  family (the two straights mirror each other about the bound direction),
  plus configurations pinned to a zero-length departure or arrival arc;
* four-component words where the middle turn touches the departure or the
  arrival circle directly;
* all-arc words with three, four or five turns, on contact-angle grids;
* exact-length matches of the shortest admissible words.

Every candidate is an admissible curve of the exact prescribed length, so
its coordinate extents can be pushed into the cover; the cover of the full
set follows because extremal curves of the set boundary belong to the
candidate classes, and every patch contains both endpoints (hence the
endpoint chord), which keeps the union simply connected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import dubins
from .geometry import (OrientedPoint, RigidMotion, TWO_PI, wrap_2pi, wrap_pi)
from .lengtheq import CaseInfeasibleError

_S_TOL = 1e-9          # relative slack for straight-length nonnegativity
_DET_TOL = 1e-9        # parallel-tangent cutoff

PROFILES = {
    "fast": dict(sweep=128, ccsc=128, cscsc_grid=0, ccccc_grid=20,
                 csccc_grid=16, pinned=64, zoom_levels=9, zoom_pts=13),
    "robust": dict(sweep=1024, ccsc=1024, cscsc_grid=96, ccccc_grid=64,
                   csccc_grid=56, pinned=512, zoom_levels=11, zoom_pts=17),
}


class InfeasibleQueryError(Exception):
    """Query length below the shortest admissible path or into cycle range."""

    def __init__(self, reason, message=""):
        self.reason = reason
        super().__init__(message or reason)


class Turn(Enum):
    LEFT = 1
    RIGHT = -1


class Scenario(Enum):
    """Departure/arrival turn-circle chirality."""

    LL = (1, 1)
    LR = (1, -1)
    RL = (-1, 1)
    RR = (-1, -1)

    @property
    def departure(self) -> Turn:
        return Turn(self.value[0])

    @property
    def arrival(self) -> Turn:
        return Turn(self.value[1])


@dataclass(frozen=True)
class EnvelopeQuery:
    """Fixed-length reach-set query between two oriented points."""

    start: OrientedPoint
    end: OrientedPoint
    length: float
    kappa_max: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("curve length must be positive")
        if self.kappa_max <= 0:
            raise ValueError("curvature bound must be positive")

    @property
    def radius(self) -> float:
        return 1.0 / self.kappa_max


@dataclass(frozen=True)
class Extents:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def inflated(self, margin: float) -> "Extents":
        return Extents(self.x_min - margin, self.x_max + margin,
                       self.y_min - margin, self.y_max + margin)


@dataclass
class RectPatch:
    """Axis-aligned rectangle in its construction frame, with world placement.

    `scenario` is None for covers not tied to a turn-direction scenario,
    such as the chord-aligned ellipse bound of the whole reach set.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    to_world: RigidMotion
    scenario: Scenario = None
    bound_sources: dict = field(default_factory=dict)

    @property
    def extents(self) -> Extents:
        return Extents(self.x_min, self.x_max, self.y_min, self.y_max)

    def corners_world(self) -> np.ndarray:
        local = np.array([[self.x_min, self.y_min], [self.x_max, self.y_min],
                          [self.x_max, self.y_max], [self.x_min, self.y_max]])
        return self.to_world.apply_point(local)

    def contains_world(self, points, inflate: float = 0.0) -> np.ndarray:
        """Boolean mask: world points inside the (inflated) rectangle."""
        local = self.to_world.inverse().apply_point(np.asarray(points, float))
        local = np.atleast_2d(local)
        return ((local[:, 0] >= self.x_min - inflate)
                & (local[:, 0] <= self.x_max + inflate)
                & (local[:, 1] >= self.y_min - inflate)
                & (local[:, 1] <= self.y_max + inflate))


# ---------------------------------------------------------------------------
# batched scenario rows
# ---------------------------------------------------------------------------

def _build_rows(starts, ends, ells, kappa_max, scenarios):
    """Flatten (interval, scenario) pairs into parallel parameter arrays.

    Frame convention per row: departure circle center at (0, r), arrival
    circle center at (x, r) with x >= 0; when the two centers coincide the
    start heading serves as the frame axis direction.
    """
    starts = np.atleast_2d(np.asarray(starts, float))
    ends = np.atleast_2d(np.asarray(ends, float))
    ells = np.atleast_1d(np.asarray(ells, float))
    m = starts.shape[0]
    r = 1.0 / kappa_max

    qi = np.repeat(np.arange(m), len(scenarios))
    sc = np.tile(np.arange(len(scenarios)), m)
    w1 = np.array([scenarios[k].value[0] for k in sc], dtype=float)
    w3 = np.array([scenarios[k].value[1] for k in sc], dtype=float)

    g1 = starts[qi, 2]
    g2 = ends[qi, 2]
    c1x = starts[qi, 0] - w1 * r * np.sin(g1)
    c1y = starts[qi, 1] + w1 * r * np.cos(g1)
    c2x = ends[qi, 0] - w3 * r * np.sin(g2)
    c2y = ends[qi, 1] + w3 * r * np.cos(g2)
    dx, dy = c2x - c1x, c2y - c1y
    dist = np.hypot(dx, dy)
    degenerate = dist < 1e-12 * max(r, 1.0)
    axis = np.where(degenerate, g1, np.arctan2(dy, np.where(degenerate, 1.0, dx)))
    axis = np.where(degenerate, g1, np.arctan2(dy, dx))

    cosr, sinr = np.cos(-axis), np.sin(-axis)
    # frame translation: c1 -> (0, r)
    tx = -(cosr * c1x - sinr * c1y)
    ty = r - (sinr * c1x + cosr * c1y)
    p1x = cosr * starts[qi, 0] - sinr * starts[qi, 1] + tx
    p1y = sinr * starts[qi, 0] + cosr * starts[qi, 1] + ty
    p2x = cosr * ends[qi, 0] - sinr * ends[qi, 1] + tx
    p2y = sinr * ends[qi, 0] + cosr * ends[qi, 1] + ty

    return {
        "query": qi, "scenario": sc,
        "w1": w1, "w3": w3,
        "x": dist, "phi1": g1 - axis, "phi2": g2 - axis,
        "r": np.full(qi.shape, r), "ell": ells[qi],
        "rot": -axis, "tx": tx, "ty": ty,
        "p1x": p1x, "p1y": p1y, "p2x": p2x, "p2y": p2y,
    }


def _take(rows, idx):
    return {k: v[idx] for k, v in rows.items()}


def _gate(rows_or_vals):
    return 1e-9 * np.maximum(rows_or_vals["ell"], rows_or_vals["r"])


# ---------------------------------------------------------------------------
# candidate-class evaluators
#
# Each evaluator maps expanded row parameters plus sweep parameters to the
# total curve length; with full=True it also returns the segment bundle
# (arcs and straights) the extents are folded from.
# ---------------------------------------------------------------------------

def _bundle_new():
    return {"arcs": [], "strs": []}


def _bundle_arc(bundle, cx, cy, r, psi0, w, sweep):
    bundle["arcs"].append((cx, cy, r, psi0, w, sweep))


def _bundle_str(bundle, x0, y0, x1, y1):
    bundle["strs"].append((x0, y0, x1, y1))


def _eval_cscsc(v, th1, th2, w2, full=False):
    r, x = v["r"], v["x"]
    w1, w3 = v["w1"], v["w3"]
    s1_, c1_ = np.sin(th1), np.cos(th1)
    s2_, c2_ = np.sin(th2), np.cos(th2)
    pax = w1 * r * s1_
    pay = r - w1 * r * c1_
    pbx = x + w3 * r * s2_
    pby = r - w3 * r * c2_
    vx = pbx - pax + w2 * r * (s1_ - s2_)
    vy = pby - pay + w2 * r * (c2_ - c1_)
    det = np.sin(th2 - th1)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = 1.0 / det
        s1 = (vx * s2_ - vy * c2_) * inv
        s2 = (c1_ * vy - s1_ * vx) * inv
        a1 = wrap_2pi(w1 * (th1 - v["phi1"]))
        a2 = wrap_2pi(w2 * (th2 - th1))
        a3 = wrap_2pi(w3 * (v["phi2"] - th2))
        L = r * (a1 + a2 + a3) + s1 + s2
        stol = _S_TOL * (r + v["ell"])
        ok = (np.abs(det) > _DET_TOL) & (s1 >= -stol) & (s2 >= -stol)
    if not full:
        return L, ok
    s1c = np.maximum(s1, 0.0)
    s2c = np.maximum(s2, 0.0)
    mx = pax + s1c * c1_ - w2 * r * s1_
    my = pay + s1c * s1_ + w2 * r * c1_
    b = _bundle_new()
    _bundle_arc(b, np.zeros_like(r), r, r, v["phi1"] - w1 * 0.5 * np.pi, w1, a1)
    _bundle_str(b, pax, pay, pax + s1c * c1_, pay + s1c * s1_)
    _bundle_arc(b, mx, my, r, th1 - w2 * 0.5 * np.pi, w2, a2)
    _bundle_str(b, pbx - s2c * c2_, pby - s2c * s2_, pbx, pby)
    _bundle_arc(b, x, r, r, th2 - w3 * 0.5 * np.pi, w3, a3)
    return L, ok, b


def _eval_ccsc(v, th1, full=False):
    """Middle turn touching the departure circle; one straight into arrival."""
    r, x = v["r"], v["x"]
    w1, w3 = v["w1"], v["w3"]
    w2 = -w1
    mx = 2.0 * w1 * r * np.sin(th1)
    my = r - 2.0 * w1 * r * np.cos(th1)
    relx, rely = x - mx, r - my
    d2 = np.hypot(relx, rely)
    alpha = np.arctan2(rely, relx)
    same = w3 == w2
    with np.errstate(invalid="ignore"):
        ratio = np.clip(2.0 * r / d2, -1.0, 1.0)
        th2 = np.where(same, alpha, alpha + w2 * np.arcsin(ratio))
        s2 = np.where(same, d2, np.sqrt(d2 * d2 - 4.0 * r * r))
    ok = np.where(same, d2 > _DET_TOL * r, d2 >= 2.0 * r)
    a1 = wrap_2pi(w1 * (th1 - v["phi1"]))
    a2 = wrap_2pi(w2 * (th2 - th1))
    a3 = wrap_2pi(w3 * (v["phi2"] - th2))
    L = r * (a1 + a2 + a3) + s2
    if not full:
        return L, ok
    exx = mx - w2 * r * (-np.sin(th2))
    exy = my - w2 * r * np.cos(th2)
    b = _bundle_new()
    _bundle_arc(b, np.zeros_like(r), r, r, v["phi1"] - w1 * 0.5 * np.pi, w1, a1)
    _bundle_arc(b, mx, my, r, th1 - w2 * 0.5 * np.pi, w2, a2)
    _bundle_str(b, exx, exy, exx + s2 * np.cos(th2), exy + s2 * np.sin(th2))
    _bundle_arc(b, x, r, r, th2 - w3 * 0.5 * np.pi, w3, a3)
    return L, ok, b


def _eval_cscc(v, psi, full=False):
    """One straight out of departure; middle turn touching the arrival circle."""
    r, x = v["r"], v["x"]
    w1, w3 = v["w1"], v["w3"]
    w2 = -w3
    mx = x + 2.0 * r * np.cos(psi)
    my = r + 2.0 * r * np.sin(psi)
    relx, rely = mx, my - r
    d1 = np.hypot(relx, rely)
    alpha = np.arctan2(rely, relx)
    same = w2 == w1
    with np.errstate(invalid="ignore"):
        ratio = np.clip(2.0 * r / d1, -1.0, 1.0)
        th1 = np.where(same, alpha, alpha + w1 * np.arcsin(ratio))
        s1 = np.where(same, d1, np.sqrt(d1 * d1 - 4.0 * r * r))
    ok = np.where(same, d1 > _DET_TOL * r, d1 >= 2.0 * r)
    thq = psi + w3 * 0.5 * np.pi
    a1 = wrap_2pi(w1 * (th1 - v["phi1"]))
    a2 = wrap_2pi(w2 * (thq - th1))
    a3 = wrap_2pi(w3 * (v["phi2"] - thq))
    L = r * (a1 + a2 + a3) + s1
    if not full:
        return L, ok
    pax = w1 * r * np.sin(th1)
    pay = r - w1 * r * np.cos(th1)
    b = _bundle_new()
    _bundle_arc(b, np.zeros_like(r), r, r, v["phi1"] - w1 * 0.5 * np.pi, w1, a1)
    _bundle_str(b, pax, pay, pax + s1 * np.cos(th1), pay + s1 * np.sin(th1))
    _bundle_arc(b, mx, my, r, th1 - w2 * 0.5 * np.pi, w2, a2)
    _bundle_arc(b, x, r, r, psi, w3, a3)
    return L, ok, b


def _eval_ccccc(v, th1, th2, branch, full=False):
    """Five-arc words; th1/th2 are contact angles at departure/arrival,
    th2 measured mirror-fashion from the -x direction."""
    r, x = v["r"], v["x"]
    w1 = v["w1"]
    w2 = -w1
    c2ax = 2.0 * r * np.cos(th1)
    c2ay = r + 2.0 * r * np.sin(th1)
    c4x = x - 2.0 * r * np.cos(th2)
    c4y = r + 2.0 * r * np.sin(th2)
    dxv, dyv = c4x - c2ax, c4y - c2ay
    dd = np.hypot(dxv, dyv)
    ok = (dd <= 4.0 * r) & (dd > _DET_TOL * r)
    with np.errstate(invalid="ignore", divide="ignore"):
        hh = np.sqrt(np.maximum(4.0 * r * r - 0.25 * dd * dd, 0.0))
        ux, uy = dxv / dd, dyv / dd
    c3x = 0.5 * (c2ax + c4x) - branch * hh * uy
    c3y = 0.5 * (c2ay + c4y) + branch * hh * ux
    h12 = th1 + w1 * 0.5 * np.pi
    a1 = wrap_2pi(w1 * (h12 - v["phi1"]))
    h23 = np.arctan2(c3y - c2ay, c3x - c2ax) + w2 * 0.5 * np.pi
    a2 = wrap_2pi(w2 * (h23 - h12))
    h34 = np.arctan2(c4y - c3y, c4x - c3x) + w1 * 0.5 * np.pi
    a3 = wrap_2pi(w1 * (h34 - h23))
    h45 = np.arctan2(r - c4y, x - c4x) + w2 * 0.5 * np.pi
    a4 = wrap_2pi(w2 * (h45 - h34))
    a5 = wrap_2pi(w1 * (v["phi2"] - h45))
    L = r * (a1 + a2 + a3 + a4 + a5)
    if not full:
        return L, ok
    b = _bundle_new()
    _bundle_arc(b, np.zeros_like(r), r, r, v["phi1"] - w1 * 0.5 * np.pi, w1, a1)
    _bundle_arc(b, c2ax, c2ay, r, h12 - w2 * 0.5 * np.pi, w2, a2)
    _bundle_arc(b, c3x, c3y, r, h23 - w1 * 0.5 * np.pi, w1, a3)
    _bundle_arc(b, c4x, c4y, r, h34 - w2 * 0.5 * np.pi, w2, a4)
    _bundle_arc(b, x, r, r, h45 - w1 * 0.5 * np.pi, w1, a5)
    return L, ok, b


def _eval_csccc(v, th1, psi, branch, full=False):
    """Departure arc, straight, then a three-arc chain into arrival."""
    r, x = v["r"], v["x"]
    w1, w3 = v["w1"], v["w3"]
    pax = w1 * r * np.sin(th1)
    pay = r - w1 * r * np.cos(th1)
    q0x = pax - w3 * r * np.sin(th1)
    q0y = pay + w3 * r * np.cos(th1)
    c4x = x + 2.0 * r * np.cos(psi)
    c4y = r + 2.0 * r * np.sin(psi)
    relx, rely = c4x - q0x, c4y - q0y
    u1c, u1s = np.cos(th1), np.sin(th1)
    proj = relx * u1c + rely * u1s
    perp = u1c * rely - u1s * relx
    disc = 4.0 * r * r - perp * perp
    with np.errstate(invalid="ignore"):
        t = proj + branch * np.sqrt(disc)
    ok = (disc >= 0.0) & (t >= -_S_TOL * (r + v["ell"]))
    mx = q0x + t * u1c
    my = q0y + t * u1s
    a1 = wrap_2pi(w1 * (th1 - v["phi1"]))
    h34 = np.arctan2(c4y - my, c4x - mx) + w3 * 0.5 * np.pi
    a3 = wrap_2pi(w3 * (h34 - th1))
    h45 = psi + np.pi - w3 * 0.5 * np.pi
    a4 = wrap_2pi(-w3 * (h45 - h34))
    a5 = wrap_2pi(w3 * (v["phi2"] - h45))
    L = r * (a1 + a3 + a4 + a5) + t
    if not full:
        return L, ok
    tc = np.maximum(t, 0.0)
    b = _bundle_new()
    _bundle_arc(b, np.zeros_like(r), r, r, v["phi1"] - w1 * 0.5 * np.pi, w1, a1)
    _bundle_str(b, pax, pay, pax + tc * u1c, pay + tc * u1s)
    _bundle_arc(b, mx, my, r, th1 - w3 * 0.5 * np.pi, w3, a3)
    _bundle_arc(b, c4x, c4y, r, h34 + w3 * 0.5 * np.pi, -w3, a4)
    _bundle_arc(b, x, r, r, psi, w3, a5)
    return L, ok, b


def _eval_cccsc(v, psi, th2, branch, full=False):
    """Three-arc chain out of departure, straight, then the arrival arc."""
    r, x = v["r"], v["x"]
    w1, w3 = v["w1"], v["w3"]
    pbx = x + w3 * r * np.sin(th2)
    pby = r - w3 * r * np.cos(th2)
    q0x = pbx - w1 * r * np.sin(th2)
    q0y = pby + w1 * r * np.cos(th2)
    c2ax = 2.0 * r * np.cos(psi)
    c2ay = r + 2.0 * r * np.sin(psi)
    relx, rely = c2ax - q0x, c2ay - q0y
    u2c, u2s = np.cos(th2), np.sin(th2)
    proj = relx * u2c + rely * u2s
    rel2 = relx * relx + rely * rely
    disc = proj * proj - rel2 + 4.0 * r * r
    with np.errstate(invalid="ignore"):
        t = -proj + branch * np.sqrt(disc)
    ok = (disc >= 0.0) & (t >= -_S_TOL * (r + v["ell"]))
    mx = q0x - t * u2c
    my = q0y - t * u2s
    h12 = psi + w1 * 0.5 * np.pi
    a1 = wrap_2pi(w1 * (h12 - v["phi1"]))
    h23 = np.arctan2(my - c2ay, mx - c2ax) - w1 * 0.5 * np.pi
    a2 = wrap_2pi(-w1 * (h23 - h12))
    a3 = wrap_2pi(w1 * (th2 - h23))
    a5 = wrap_2pi(w3 * (v["phi2"] - th2))
    L = r * (a1 + a2 + a3 + a5) + t
    if not full:
        return L, ok
    tc = np.maximum(t, 0.0)
    b = _bundle_new()
    _bundle_arc(b, np.zeros_like(r), r, r, v["phi1"] - w1 * 0.5 * np.pi, w1, a1)
    _bundle_arc(b, c2ax, c2ay, r, h12 + w1 * 0.5 * np.pi, -w1, a2)
    _bundle_arc(b, mx, my, r, h23 - w1 * 0.5 * np.pi, w1, a3)
    _bundle_str(b, pbx - tc * u2c, pby - tc * u2s, pbx, pby)
    _bundle_arc(b, x, r, r, th2 - w3 * 0.5 * np.pi, w3, a5)
    return L, ok, b


# ---------------------------------------------------------------------------
# extent folding
# ---------------------------------------------------------------------------

_CARDINALS = (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)


def _fold_extents(bundle, rot=None, tx=0.0, ty=0.0):
    """Coordinate extents of each config, measured after rotating by `rot`
    and translating by (tx, ty).  Returns (xmin, xmax, ymin, ymax) arrays."""
    big = np.inf
    xmin = ymin = None
    xmax = ymax = None

    def upd(px, py):
        nonlocal xmin, xmax, ymin, ymax
        if rot is not None:
            c, s = np.cos(rot), np.sin(rot)
            px, py = c * px - s * py, s * px + c * py
        px = px + tx
        py = py + ty
        if xmin is None:
            xmin = np.array(px, float, copy=True)
            xmax = np.array(px, float, copy=True)
            ymin = np.array(py, float, copy=True)
            ymax = np.array(py, float, copy=True)
        else:
            np.minimum(xmin, px, out=xmin)
            np.maximum(xmax, px, out=xmax)
            np.minimum(ymin, py, out=ymin)
            np.maximum(ymax, py, out=ymax)

    delta = 0.0 if rot is None else rot
    for (cx, cy, r, psi0, w, sweep) in bundle["arcs"]:
        p0 = psi0
        upd(cx + r * np.cos(p0), cy + r * np.sin(p0))
        p1 = psi0 + w * sweep
        upd(cx + r * np.cos(p1), cy + r * np.sin(p1))
        # cardinal directions crossed by the arc, measured post-rotation
        for gi, g in enumerate(_CARDINALS):
            hit = wrap_2pi(w * (g - delta - psi0)) <= sweep
            if rot is None:
                cxx, cyy = cx, cy
            else:
                c, s = np.cos(rot), np.sin(rot)
                cxx, cyy = c * cx - s * cy, s * cx + c * cy
            cxx = cxx + tx
            cyy = cyy + ty
            if gi == 0:
                np.maximum(xmax, np.where(hit, cxx + r, -big), out=xmax)
            elif gi == 1:
                np.maximum(ymax, np.where(hit, cyy + r, -big), out=ymax)
            elif gi == 2:
                np.minimum(xmin, np.where(hit, cxx - r, big), out=xmin)
            else:
                np.minimum(ymin, np.where(hit, cyy - r, big), out=ymin)
    for (x0, y0, x1, y1) in bundle["strs"]:
        upd(x0, y0)
        upd(x1, y1)
    return xmin, xmax, ymin, ymax


# ---------------------------------------------------------------------------
# root extraction along one-parameter families
# ---------------------------------------------------------------------------

def _residual_grid(fn, vals, tgrid):
    """Residual L - ell of `fn` on the cyclic grid; returns (R, T) array."""
    R = len(vals["ell"])
    T = len(tgrid)
    idx = np.repeat(np.arange(R), T)
    tt = np.tile(tgrid, R)
    L, ok = fn(_take(vals, idx), tt)
    S = np.where(ok, L - vals["ell"][idx], np.nan)
    return S.reshape(R, T)


def _refine_root_1d(feval, E, sa, n=17, secants=6):
    """Refine roots inside [0, 1]-parameterized brackets, vectorized.

    feval(idx, s) returns the residual at bracket parameter s for bracket
    idx (nan where the configuration is infeasible; infeasible samples
    count as the reference side, so the root estimate walks toward s=1).
    sa is the reference residual sign at s=0.  One fused scan narrows each
    bracket, then guarded secant steps alternating with bisection finish.
    Returns s in [0, 1].
    """
    if E == 0:
        return np.array([])
    grid = np.linspace(0.0, 1.0, n)
    ar = np.arange(E)
    F = feval(np.repeat(ar, n), np.tile(grid, E)).reshape(E, n)
    sg = np.where(np.isnan(F), sa[:, None], np.sign(F))
    flip = sg != sa[:, None]
    j = np.argmax(flip, axis=1)
    hasflip = flip[ar, j]
    jlo = np.maximum(j - 1, 0)
    lo = np.where(hasflip, grid[jlo], 1.0)
    hi = np.where(hasflip, grid[j], 1.0)
    fa = F[ar, jlo]
    fb = F[ar, j]
    for k in range(secants):
        den = fb - fa
        with np.errstate(invalid="ignore", divide="ignore"):
            sec = hi - fb * (hi - lo) / den
        mid = 0.5 * (lo + hi)
        take_sec = np.isfinite(sec) & (sec > lo) & (sec < hi) if k % 2 == 0 \
            else np.zeros(E, bool)
        tm = np.where(take_sec, sec, mid)
        fm = feval(ar, tm)
        same = np.isnan(fm) | (np.where(np.isnan(fm), sa, np.sign(fm)) == sa)
        lo = np.where(same, tm, lo)
        fa = np.where(same & np.isfinite(fm), fm, fa)
        hi = np.where(same, hi, tm)
        fb = np.where(same, fb, fm)
    den = fb - fa
    with np.errstate(invalid="ignore", divide="ignore"):
        slin = (lo * fb - hi * fa) / den
    usable = np.isfinite(slin) & (den != 0)
    s = np.where(usable, np.clip(slin, lo, hi), 0.5 * (lo + hi))
    return np.where(hasflip, s, 1.0)


def _bisect_edges(fn, vals, rows_e, ta, tb, sa):
    """Roots of fn(row, t) = ell on bracketing parameter edges."""
    v = _take(vals, rows_e)
    ell = v["ell"]

    def feval(idx, s):
        L, ok = fn(_take(v, idx), ta[idx] + s * (tb[idx] - ta[idx]))
        return np.where(ok, L - ell[idx], np.nan)

    s = _refine_root_1d(feval, rows_e.size, sa)
    return ta + s * (tb - ta)


def _zoom_min(fn, vv, a, b, levels=6, pts=13):
    """Vectorized minimization of the length residual by window zooming.

    Each level evaluates all offset samples in one fused call, recenters
    on the running best, and shrinks the window around it.
    """
    ell = vv["ell"]
    N = ell.size
    offs = np.linspace(-1.0, 1.0, pts)
    TI = np.repeat(np.arange(N), pts)
    vv_t = _take(vv, TI)
    ell_t = ell[TI]
    c = 0.5 * (a + b)
    w = 0.5 * (b - a)
    tbest = c.copy()
    fbest = np.full(N, np.inf)
    ar = np.arange(N)
    for _ in range(levels):
        tt = c[TI] + np.tile(offs, N) * w[TI]
        L, ok = fn(vv_t, tt)
        F = np.where(ok, L - ell_t, np.inf).reshape(N, pts)
        j = np.argmin(F, axis=1)
        better = F[ar, j] < fbest
        tbest = np.where(better, tt.reshape(N, pts)[ar, j], tbest)
        fbest = np.where(better, F[ar, j], fbest)
        c = tbest
        w = w * (2.2 / (pts - 1))
    return tbest, fbest


def _family_roots(fn, vals, tgrid):
    """All parameter values with fn length == ell, via cyclic sign scan,
    dip polishing at the per-row minimum, and bisection; gated on residual."""
    R = len(vals["ell"])
    if R == 0 or len(tgrid) == 0:
        return np.array([], int), np.array([])
    T = len(tgrid)
    step = TWO_PI / T
    S = _residual_grid(fn, vals, tgrid)

    rows_e = []
    ta_e = []
    tb_e = []
    sa_e = []
    sgn = np.sign(S)
    nxt = np.roll(sgn, -1, axis=1)
    crossing = np.isfinite(S) & np.isfinite(np.roll(S, -1, axis=1)) & (sgn * nxt < 0)
    rr, cc = np.nonzero(crossing)
    if rr.size:
        rows_e.append(rr)
        ta_e.append(tgrid[cc])
        tb_e.append(tgrid[cc] + step)
        sa_e.append(sgn[rr, cc])

    # Narrow dips could avoid a sign change: polish the per-row minimum.
    Sm = np.where(np.isfinite(S), S, np.inf)
    jmin = np.argmin(Sm, axis=1)
    prow = np.nonzero(np.isfinite(Sm[np.arange(R), jmin]))[0]
    if prow.size:
        vv = _take(vals, prow)
        tstar, fstar = _zoom_min(fn, vv, tgrid[jmin[prow]] - step,
                                 tgrid[jmin[prow]] + step)
        dip = fstar <= 0.0
        if np.any(dip):
            pr = prow[dip]
            ts = tstar[dip]
            rows_e.append(pr)
            ta_e.append(tgrid[jmin[pr]] - step)
            tb_e.append(ts)
            sa_e.append(np.ones(pr.size))
            rows_e.append(pr)
            ta_e.append(ts)
            tb_e.append(tgrid[jmin[pr]] + step)
            sa_e.append(-np.ones(pr.size))
        graze = (~dip) & (np.abs(fstar) <= _gate(vv))
        if np.any(graze):
            rows_e.append(prow[graze])
            ta_e.append(tstar[graze])
            tb_e.append(tstar[graze])
            sa_e.append(np.zeros(int(np.count_nonzero(graze))))

    if not rows_e:
        return np.array([], int), np.array([])
    rows_e = np.concatenate(rows_e)
    ta = np.concatenate(ta_e)
    tb = np.concatenate(tb_e)
    sa = np.concatenate(sa_e)
    troot = _bisect_edges(fn, vals, rows_e, ta, tb, sa)
    L, ok = fn(_take(vals, rows_e), troot)
    good = ok & (np.abs(L - vals["ell"][rows_e]) <= _gate(_take(vals, rows_e)))
    return rows_e[good], troot[good]


def _axis2_roots(fn2, vv, t1, seed, width, n2=9, secants=3):
    """th2 roots of L(t1, th2) = ell nearest each seed, within +-width.

    One fused scan locates the sign-change bracket closest to the seed per
    row; guarded secant steps refine it.  width may be scalar or per-row.
    Returns th2 (nan where the window holds no bracket).
    """
    ell = vv["ell"]
    N = t1.size
    width = np.broadcast_to(np.asarray(width, float), seed.shape)
    offs = np.linspace(-1.0, 1.0, n2)
    TI = np.repeat(np.arange(N), n2)
    tt = seed[TI] + np.tile(offs, N) * width[TI]
    L, ok = fn2(_take(vv, TI), t1[TI], tt)
    S = np.where(ok, L - ell[TI], np.nan).reshape(N, n2)
    sg = np.sign(S)
    cross = (sg[:, :-1] * sg[:, 1:] < 0) & np.isfinite(S[:, :-1]) \
        & np.isfinite(S[:, 1:])
    midoff = 0.5 * (offs[:-1] + offs[1:])
    dist = np.where(cross, np.abs(midoff)[None, :], np.inf)
    j = np.argmin(dist, axis=1)
    ar = np.arange(N)
    has = np.isfinite(dist[ar, j])
    lo = seed + offs[j] * width
    hi = seed + offs[j + 1] * width
    fa = S[ar, j]
    fb = S[ar, j + 1]
    sa = np.sign(fa)
    for k in range(secants):
        den = fb - fa
        with np.errstate(invalid="ignore", divide="ignore"):
            sec = hi - fb * (hi - lo) / den
        mid = 0.5 * (lo + hi)
        take_sec = np.isfinite(sec) & (sec > lo) & (sec < hi) if k % 2 == 0 \
            else np.zeros(N, bool)
        tm = np.where(has, np.where(take_sec, sec, mid), seed)
        L2, ok2 = fn2(vv, t1, tm)
        fm = np.where(ok2, L2 - ell, np.nan)
        same = np.isnan(fm) | (np.where(np.isnan(fm), sa, np.sign(fm)) == sa)
        lo = np.where(same, tm, lo)
        fa = np.where(same & np.isfinite(fm), fm, fa)
        hi = np.where(same, hi, tm)
        fb = np.where(same, fb, fm)
    den = fb - fa
    with np.errstate(invalid="ignore", divide="ignore"):
        tlin = (lo * fb - hi * fa) / den
    usable = np.isfinite(tlin) & (den != 0)
    troot = np.where(usable, np.clip(tlin, lo, hi), 0.5 * (lo + hi))
    return np.where(has, troot, np.nan)


def _manifold_extremes(fn2, vals, rows_e, t1, t2, h1, h2, base, levels, pts):
    """Polish per-row extremes of config extents along the 1-D manifold
    {(t1, t2) : L = ell} of a two-parameter class.

    base: (4, len(rows_e)) signed extents (-xmin, xmax, -ymin, ymax) of the
    sampled manifold configs; each finite (row, bound) pair becomes a polish
    target seeded at its best sample.  Each zoom level evaluates a fused
    batch of t1 offsets around the running best, re-solves th2 from the
    length equation near the previous root, scores every offset in one
    bundle evaluation, and shrinks the window around the argmax.  Returns
    flattened (rows_p, t1_p, t2_p) arrays of polished configs to absorb.
    """
    empty = (np.array([], int), np.array([]), np.array([]))
    if not len(rows_e):
        return empty
    rows_p, t1_c, t2_c, col_p = [], [], [], []
    uniq = np.unique(rows_e)
    for col in range(4):
        bv = base[col]
        for r in uniq:
            sel = np.nonzero(rows_e == r)[0]
            k = sel[np.argmax(bv[sel])]
            if np.isfinite(bv[k]):
                rows_p.append(r)
                t1_c.append(t1[k])
                t2_c.append(t2[k])
                col_p.append(col)
    if not rows_p:
        return empty
    rows_p = np.array(rows_p, int)
    col_p = np.array(col_p, int)
    t1_c = np.array(t1_c)
    t2_c = np.array(t2_c)
    P = rows_p.size
    vv = _take(vals, rows_p)

    offs = np.linspace(-1.0, 1.0, pts)
    ar = np.arange(P)
    f_c = np.full(P, -np.inf)
    t2_anchor = t2_c.copy()

    def score(t1_t, th2_t):
        """Evaluate tiles laid out row-major (P, K) in one fused call and
        update the running best.  Selection tolerates a modest length
        residual (the induced extent error is of the same order); the
        absorbed config is re-solved tightly afterwards."""
        nonlocal t1_c, t2_c, f_c
        K = t1_t.size // P
        TIx = np.repeat(ar, K)
        vvx = _take(vv, TIx)
        with np.errstate(invalid="ignore"):
            L, ok, b = fn2(vvx, t1_t, np.where(np.isfinite(th2_t), th2_t,
                                               t2_c[TIx]), full=True)
            xmin, xmax, ymin, ymax = _fold_extents(
                b, rot=vvx["delta"], tx=vvx["mtx"], ty=vvx["mty"])
            val4 = np.stack([-xmin, xmax, -ymin, ymax])
            f_t = val4[col_p[TIx], np.arange(P * K)]
            good = np.isfinite(th2_t) & ok & np.isfinite(f_t) \
                & (np.abs(L - vvx["ell"])
                   <= 1e-6 * np.maximum(vvx["ell"], vvx["r"]))
        f_t = np.where(good, f_t, -np.inf).reshape(P, K)
        j = np.argmax(f_t, axis=1)
        better = f_t[ar, j] > f_c
        t1_c = np.where(better, t1_t.reshape(P, K)[ar, j], t1_c)
        t2_c = np.where(better, th2_t.reshape(P, K)[ar, j], t2_c)
        f_c = np.where(better, f_t[ar, j], f_c)

    # first level: a continuation walk outward from the seed root tracks
    # the manifold branch through the seed even where th2 varies steeply
    # with t1; a second tile set re-solves every offset near the original
    # th2, covering branches that fold back through the seed level
    half = (pts - 1) // 2
    step = h1 / half
    t1_cols = [None] * pts
    th2_cols = [None] * pts
    t1_cols[half] = t1_c.copy()
    th2_cols[half] = t2_c.copy()
    pair = np.concatenate([ar, ar])
    vv_pair = _take(vv, pair)
    seed_lo, seed_hi = t2_c.copy(), t2_c.copy()
    for s in range(1, half + 1):
        t1_pair = np.concatenate([t1_c - s * step, t1_c + s * step])
        th2_pair = _axis2_roots(fn2, vv_pair, t1_pair,
                                np.concatenate([seed_lo, seed_hi]), 1.6 * h2)
        lo_r, hi_r = th2_pair[:P], th2_pair[P:]
        seed_lo = np.where(np.isfinite(lo_r), lo_r, seed_lo)
        seed_hi = np.where(np.isfinite(hi_r), hi_r, seed_hi)
        t1_cols[half - s] = t1_pair[:P]
        t1_cols[half + s] = t1_pair[P:]
        th2_cols[half - s] = lo_r
        th2_cols[half + s] = hi_r
    t1_walk = np.stack(t1_cols, axis=1)
    th2_walk = np.stack(th2_cols, axis=1)
    TI = np.repeat(ar, pts)
    vv_t = _take(vv, TI)
    th2_anch = _axis2_roots(fn2, vv_t, t1_walk.ravel(), t2_anchor[TI],
                            1.6 * h2)
    score(np.concatenate([t1_walk, t1_walk], axis=1).ravel(),
          np.concatenate([th2_walk, th2_anch.reshape(P, pts)],
                         axis=1).ravel())

    # remaining levels: zoom around the running best, with a parallel tile
    # set still seeded at the original th2
    w = h1 * 2.2 / (pts - 1)
    w2 = 1.6 * h2 * 0.6
    TI2 = np.repeat(ar, 2 * pts)
    vv2 = _take(vv, TI2)
    for _ in range(1, levels):
        t1_lvl = t1_c[:, None] + offs[None, :] * w
        t1_two = np.concatenate([t1_lvl, t1_lvl], axis=1).ravel()
        seed_two = np.concatenate(
            [np.repeat(t2_c[:, None], pts, 1),
             np.repeat(t2_anchor[:, None], pts, 1)], axis=1).ravel()
        wid_two = np.concatenate(
            [np.full((P, pts), w2), np.full((P, pts), 1.6 * h2)],
            axis=1).ravel()
        th2_two = _axis2_roots(fn2, vv2, t1_two, seed_two, wid_two)
        score(t1_two, th2_two)
        w *= 2.2 / (pts - 1)
        w2 *= 0.6
    # tighten th2 at the final centers so absorption gates pass
    th2_f = _axis2_roots(fn2, vv, t1_c, t2_c,
                         np.full(P, max(w2, 0.05 * h2)), secants=8)
    t2_c = np.where(np.isfinite(th2_f), th2_f, t2_c)
    good = np.isfinite(f_c)
    return rows_p[good], t1_c[good], t2_c[good]


def _grid2d_roots(fn2, vals, g1, g2):
    """Roots of fn2(row, t1, t2) = ell on the edges of a cyclic 2-D grid."""
    R = len(vals["ell"])
    if R == 0:
        return (np.array([], int),) + (np.array([]),) * 2
    T1, T2 = len(g1), len(g2)
    idx = np.repeat(np.arange(R), T1 * T2)
    t1 = np.tile(np.repeat(g1, T2), R)
    t2 = np.tile(np.tile(g2, T1), R)
    L, ok = fn2(_take(vals, idx), t1, t2)
    S = np.where(ok, L - vals["ell"][idx], np.nan).reshape(R, T1, T2)
    sgn = np.sign(S)

    out_r, out_a1, out_b1, out_a2, out_b2, out_sa = [], [], [], [], [], []
    for axis, (TT, gg, other) in ((1, (T1, g1, g2)), (2, (T2, g2, g1))):
        nxt = np.roll(sgn, -1, axis=axis)
        cross = np.isfinite(S) & np.isfinite(np.roll(S, -1, axis=axis)) & (sgn * nxt < 0)
        rr, i1, i2 = np.nonzero(cross)
        if not rr.size:
            continue
        step = TWO_PI / TT
        if axis == 1:
            out_a1.append(g1[i1]); out_b1.append(g1[i1] + step)
            out_a2.append(g2[i2]); out_b2.append(g2[i2])
        else:
            out_a1.append(g1[i1]); out_b1.append(g1[i1])
            out_a2.append(g2[i2]); out_b2.append(g2[i2] + step)
        out_r.append(rr)
        out_sa.append(sgn[rr, i1, i2])
    if not out_r:
        return (np.array([], int),) + (np.array([]),) * 2
    rows_e = np.concatenate(out_r)
    a1 = np.concatenate(out_a1); b1 = np.concatenate(out_b1)
    a2 = np.concatenate(out_a2); b2 = np.concatenate(out_b2)
    sa = np.concatenate(out_sa)
    v = _take(vals, rows_e)
    ell = v["ell"]

    def feval(idx, s):
        L, ok = fn2(_take(v, idx), a1[idx] + s * (b1[idx] - a1[idx]),
                    a2[idx] + s * (b2[idx] - a2[idx]))
        return np.where(ok, L - ell[idx], np.nan)

    s = _refine_root_1d(feval, rows_e.size, sa)
    t1 = a1 + s * (b1 - a1)
    t2 = a2 + s * (b2 - a2)
    L, ok = fn2(v, t1, t2)
    good = ok & (np.abs(L - ell) <= _gate(v))
    return rows_e[good], t1[good], t2[good]


# ---------------------------------------------------------------------------
# candidate families
# ---------------------------------------------------------------------------

def _fam_cscsc_crit(w2, vertical):
    """Three-turn tangent configs whose straights mirror about the bound
    direction; vertical=True targets y bounds, False targets x bounds."""
    off = 0.0 if vertical else -np.pi

    def fn(v, t, full=False):
        return _eval_cscsc(v, t, -2.0 * v["delta"] + off - t, w2, full)
    return fn


def _fam_cscsc_pin1(w2):
    def fn(v, t, full=False):
        return _eval_cscsc(v, v["phi1"], t, w2, full)
    return fn


def _fam_cscsc_pin2(w2):
    def fn(v, t, full=False):
        return _eval_cscsc(v, t, v["phi2"], w2, full)
    return fn


def _fam_ccccc_pin1(branch):
    def fn(v, t, full=False):
        return _eval_ccccc(v, v["phi1"] - v["w1"] * 0.5 * np.pi, t, branch, full)
    return fn


def _fam_ccccc_pin2(branch):
    def fn(v, t, full=False):
        return _eval_ccccc(v, t, -v["w1"] * 0.5 * np.pi - v["phi2"], branch, full)
    return fn


def _fam_csccc_pin(branch):
    def fn(v, t, full=False):
        return _eval_csccc(v, v["phi1"], t, branch, full)
    return fn


def _fam_cccsc_pin(branch):
    def fn(v, t, full=False):
        return _eval_cccsc(v, t, v["phi2"], branch, full)
    return fn


def _ccc_configs(vals):
    """Three-arc words: zero-dimensional candidates, kept if length matches."""
    r, x = vals["r"], vals["x"]
    w1 = vals["w1"]
    rows_all, bundles = [], []
    feas = (vals["w1"] == vals["w3"]) & (x <= 4.0 * r) & (x > _DET_TOL * r)
    idx = np.nonzero(feas)[0]
    if not idx.size:
        return rows_all, bundles
    v = _take(vals, idx)
    r, x, w1 = v["r"], v["x"], v["w1"]
    hh = np.sqrt(np.maximum(4.0 * r * r - 0.25 * x * x, 0.0))
    for branch in (1.0, -1.0):
        mx = 0.5 * x
        my = r + branch * hh
        w2 = -w1
        tha = np.arctan2(my - r, mx) + w1 * 0.5 * np.pi
        a1 = wrap_2pi(w1 * (tha - v["phi1"]))
        thb = np.arctan2(r - my, x - mx) + w2 * 0.5 * np.pi
        a2 = wrap_2pi(w2 * (thb - tha))
        a3 = wrap_2pi(w1 * (v["phi2"] - thb))
        L = r * (a1 + a2 + a3)
        good = np.abs(L - v["ell"]) <= _gate(v)
        if not np.any(good):
            continue
        g = np.nonzero(good)[0]
        vv = _take(v, g)
        b = _bundle_new()
        _bundle_arc(b, np.zeros_like(vv["r"]), vv["r"], vv["r"],
                    vv["phi1"] - vv["w1"] * 0.5 * np.pi, vv["w1"], a1[g])
        _bundle_arc(b, mx[g], my[g], vv["r"], tha[g] + vv["w1"] * 0.5 * np.pi,
                    -vv["w1"], a2[g])
        _bundle_arc(b, vv["x"], vv["r"], vv["r"],
                    thb[g] - vv["w1"] * 0.5 * np.pi, vv["w1"], a3[g])
        rows_all.append(idx[g])
        bundles.append(b)
    return rows_all, bundles


def _word_configs(vals):
    """Shortest-word families: any admissible word whose length equals ell."""
    rows_all, bundles = [], []
    for i in range(len(vals["ell"])):
        r = vals["r"][i]
        start = OrientedPoint(vals["p1x"][i], vals["p1y"][i], wrap_pi(vals["phi1"][i]))
        end = OrientedPoint(vals["p2x"][i], vals["p2y"][i], wrap_pi(vals["phi2"][i]))
        gate = 1e-9 * max(vals["ell"][i], r)
        try:
            words = dubins.dubins_words(start, end, 1.0 / r)
        except Exception:
            continue
        for name, word in words:
            if abs(word.length - vals["ell"][i]) > gate:
                continue
            segs = [s for s in word.segments if s.length > 1e-12 * r]
            w1 = np.sign(segs[0].curvature) if segs and segs[0].curvature else 0.0
            w3 = np.sign(segs[-1].curvature) if segs and segs[-1].curvature else 0.0
            if w1 and w1 != vals["w1"][i]:
                continue
            if w3 and w3 != vals["w3"][i]:
                continue
            b = _bundle_new()
            for seg in word.segments:
                if seg.kind.name == "STRAIGHT":
                    e = seg.end
                    _bundle_str(b, np.atleast_1d(seg.start.x), np.atleast_1d(seg.start.y),
                                np.atleast_1d(e.x), np.atleast_1d(e.y))
                else:
                    w = 1.0 if seg.curvature > 0 else -1.0
                    c = seg.start.turn_center(r, w)
                    _bundle_arc(b, np.atleast_1d(c[0]), np.atleast_1d(c[1]),
                                np.atleast_1d(r),
                                np.atleast_1d(seg.start.heading - w * 0.5 * np.pi),
                                np.atleast_1d(w), np.atleast_1d(seg.length / r))
            rows_all.append(np.array([i]))
            bundles.append(b)
    return rows_all, bundles


def _ellipse_bbox(vals):
    """Axis bounds of {p : |p - A| + |p - B| <= ell} in measurement coords."""
    c, s = np.cos(vals["delta"]), np.sin(vals["delta"])
    ax = c * vals["p1x"] - s * vals["p1y"] + vals["mtx"]
    ay = s * vals["p1x"] + c * vals["p1y"] + vals["mty"]
    bx = c * vals["p2x"] - s * vals["p2y"] + vals["mtx"]
    by = s * vals["p2x"] + c * vals["p2y"] + vals["mty"]
    mx, my = 0.5 * (ax + bx), 0.5 * (ay + by)
    cc = 0.5 * np.hypot(bx - ax, by - ay)
    aa = 0.5 * vals["ell"]
    bb = np.sqrt(np.maximum(aa * aa - cc * cc, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(cc > 0, 0.5 * (bx - ax) / cc, 1.0)
        uy = np.where(cc > 0, 0.5 * (by - ay) / cc, 0.0)
    hx = np.hypot(aa * ux, bb * uy)
    hy = np.hypot(aa * uy, bb * ux)
    return mx - hx, mx + hx, my - hy, my + hy


def _chord_boxes(starts, ends, lengths):
    """Chord-aligned bounding boxes of {p : |p - s| + |p - e| <= ell}.

    Returns (phi, d, a, b): frame angle, chord length, and box half
    extents.  In the frame rotated by phi with the start point at the
    origin the set lies inside x in [d/2 - a, d/2 + a], y in [-b, b].
    """
    starts = np.atleast_2d(np.asarray(starts, float))
    ends = np.atleast_2d(np.asarray(ends, float))
    dx = ends[:, 0] - starts[:, 0]
    dy = ends[:, 1] - starts[:, 1]
    d = np.hypot(dx, dy)
    phi = np.where(d > 0, np.arctan2(dy, dx), starts[:, 2])
    a = 0.5 * np.asarray(lengths, float)
    b = np.sqrt(np.maximum(a * a - 0.25 * d * d, 0.0))
    return phi, d, a, b


def _pose3(p):
    return np.asarray(p.as_array() if hasattr(p, "as_array") else p, float)


def chord_ellipse_patch(start, end, length, margin=0.0) -> RectPatch:
    """Chord-aligned rectangle bounding the whole reach set of one query.

    Any point p of an admissible curve satisfies |p - start| + |p - end|
    <= length, so the swept set lies in the ellipse with the endpoints as
    foci and major axis `length`; this returns the bounding box of that
    ellipse, aligned with the endpoint chord.  The bound holds for every
    admissible length, including lengths long enough to fit full turning
    cycles, and does not depend on the curvature bound.
    """
    s3 = _pose3(start)
    e3 = _pose3(end)
    phi, d, a, b = _chord_boxes(s3[None, :], e3[None, :],
                                np.array([float(length)]))
    phi, d, a, b = float(phi[0]), float(d[0]), float(a[0]), float(b[0])
    src = dict.fromkeys(("x_min", "x_max", "y_min", "y_max"), "chord_ellipse")
    return RectPatch(
        x_min=0.5 * d - a - margin, x_max=0.5 * d + a + margin,
        y_min=-b - margin, y_max=b + margin,
        to_world=RigidMotion(phi, (s3[0], s3[1])),
        scenario=None, bound_sources=src)


_FOUR_INIT = np.array([np.inf, -np.inf, np.inf, -np.inf])


def _collect_extents(vals, profile):
    """Run every candidate family on the given rows; fold per-row extents.

    Returns (ext (R,4) [xmin,xmax,ymin,ymax], found (R,), sources (R,4) str).
    """
    R = len(vals["ell"])
    prof = PROFILES[profile]
    per_family = {}

    def add_family(name, rows_e, bundle=None, xts=None):
        if len(rows_e) == 0:
            return
        if xts is None:
            xts = _fold_extents(
                bundle, rot=vals["delta"][rows_e],
                tx=vals["mtx"][rows_e], ty=vals["mty"][rows_e])
        xmin, xmax, ymin, ymax = xts
        E = per_family.setdefault(name, np.tile(_FOUR_INIT, (R, 1)))
        np.minimum.at(E[:, 0], rows_e, xmin)
        np.maximum.at(E[:, 1], rows_e, xmax)
        np.minimum.at(E[:, 2], rows_e, ymin)
        np.maximum.at(E[:, 3], rows_e, ymax)

    def run_1d(name, fn, mask_idx, T):
        if len(mask_idx) == 0 or T == 0:
            return
        sub = _take(vals, mask_idx)
        tgrid = np.linspace(0.0, TWO_PI, T, endpoint=False)
        ridx, troot = _family_roots(fn, sub, tgrid)
        if not ridx.size:
            return
        out = fn(_take(sub, ridx), troot, full=True)
        add_family(name, mask_idx[ridx], out[2])

    def run_2d(name, fn2, mask_idx, T):
        if len(mask_idx) == 0 or T == 0:
            return
        sub = _take(vals, mask_idx)
        g = np.linspace(0.0, TWO_PI, T, endpoint=False)
        ridx, t1, t2 = _grid2d_roots(fn2, sub, g, g)
        if not ridx.size:
            return
        cand = _take(sub, ridx)
        L0, ok0, b0 = fn2(cand, t1, t2, full=True)
        xts = _fold_extents(b0, rot=cand["delta"], tx=cand["mtx"],
                            ty=cand["mty"])
        add_family(name, mask_idx[ridx], xts=xts)
        # the solution set is a curve: polish each bound's extreme along it
        base = np.where(ok0[None, :],
                        np.stack([-xts[0], xts[1], -xts[2], xts[3]]), -np.inf)
        h = TWO_PI / T
        prow, pt1, pt2 = _manifold_extremes(
            fn2, sub, ridx, t1, t2, h, h, base,
            prof["zoom_levels"], prof["zoom_pts"])
        if prow.size:
            vv = _take(sub, prow)
            L, ok, b = fn2(vv, pt1, pt2, full=True)
            pxts = _fold_extents(b, rot=vv["delta"], tx=vv["mtx"],
                                 ty=vv["mty"])
            keep = ok & (np.abs(L - vv["ell"]) <= _gate(vv))
            masked = (np.where(keep, pxts[0], np.inf),
                      np.where(keep, pxts[1], -np.inf),
                      np.where(keep, pxts[2], np.inf),
                      np.where(keep, pxts[3], -np.inf))
            add_family(name + "_pol", mask_idx[prow], xts=masked)

    all_idx = np.arange(R)
    sym_idx = np.nonzero(vals["w1"] == vals["w3"])[0]
    T = prof["sweep"]

    for w2 in (1.0, -1.0):
        tag = "p" if w2 > 0 else "n"
        run_1d("cscsc_ycrit_" + tag, _fam_cscsc_crit(w2, True), all_idx, T)
        run_1d("cscsc_xcrit_" + tag, _fam_cscsc_crit(w2, False), all_idx, T)
        run_1d("cscsc_pin1_" + tag, _fam_cscsc_pin1(w2), all_idx, T)
        run_1d("cscsc_pin2_" + tag, _fam_cscsc_pin2(w2), all_idx, T)
    run_1d("ccsc", lambda v, t, full=False: _eval_ccsc(v, t, full),
           all_idx, prof["ccsc"])
    run_1d("cscc", lambda v, t, full=False: _eval_cscc(v, t, full),
           all_idx, prof["ccsc"])

    for br in (1.0, -1.0):
        tag = "p" if br > 0 else "n"
        run_1d("ccccc_pin1_" + tag, _fam_ccccc_pin1(br), sym_idx, prof["pinned"])
        run_1d("ccccc_pin2_" + tag, _fam_ccccc_pin2(br), sym_idx, prof["pinned"])
        run_1d("csccc_pin_" + tag, _fam_csccc_pin(br), all_idx, prof["pinned"])
        run_1d("cccsc_pin_" + tag, _fam_cccsc_pin(br), all_idx, prof["pinned"])

        def mk2(f, b):
            return lambda v, t1, t2, full=False: f(v, t1, t2, b, full)

        run_2d("ccccc_grid_" + tag, mk2(_eval_ccccc, br), sym_idx,
               prof["ccccc_grid"])
        run_2d("csccc_grid_" + tag, mk2(_eval_csccc, br), all_idx,
               prof["csccc_grid"])
        run_2d("cccsc_grid_" + tag, mk2(_eval_cccsc, br), all_idx,
               prof["csccc_grid"])
    if prof["cscsc_grid"]:
        for w2 in (1.0, -1.0):
            tag = "p" if w2 > 0 else "n"

            def mkc(w):
                return lambda v, t1, t2, full=False: _eval_cscsc(v, t1, t2, w, full)

            run_2d("cscsc_grid_" + tag, mkc(w2), all_idx, prof["cscsc_grid"])

    for rows_e, bundle in zip(*_ccc_configs(vals)):
        add_family("ccc", rows_e, bundle)
    for rows_e, bundle in zip(*_word_configs(vals)):
        add_family("word", rows_e, bundle)

    ext = np.tile(_FOUR_INIT, (R, 1))
    sources = np.full((R, 4), "", dtype=object)
    for name, E in per_family.items():
        for col, better in ((0, np.less), (1, np.greater),
                            (2, np.less), (3, np.greater)):
            upd = better(E[:, col], ext[:, col])
            ext[upd, col] = E[upd, col]
            sources[upd, col] = name
    found = np.isfinite(ext[:, 0])
    return ext, found, sources


# ---------------------------------------------------------------------------
# scenario feasibility and assembly
# ---------------------------------------------------------------------------

_SCENARIOS = (Scenario.LL, Scenario.LR, Scenario.RL, Scenario.RR)


def _finalize_extents(vals, ext, found, sources):
    """Clamp family extents with endpoints and the chord-sum ellipse bound."""
    c, s = np.cos(vals["delta"]), np.sin(vals["delta"])
    for px, py in ((vals["p1x"], vals["p1y"]), (vals["p2x"], vals["p2y"])):
        qx = c * px - s * py + vals["mtx"]
        qy = s * px + c * py + vals["mty"]
        upd = qx < ext[:, 0]
        ext[upd, 0] = qx[upd]
        sources[upd, 0] = "endpoint"
        upd = qx > ext[:, 1]
        ext[upd, 1] = qx[upd]
        sources[upd, 1] = "endpoint"
        upd = qy < ext[:, 2]
        ext[upd, 2] = qy[upd]
        sources[upd, 2] = "endpoint"
        upd = qy > ext[:, 3]
        ext[upd, 3] = qy[upd]
        sources[upd, 3] = "endpoint"
    exmin, exmax, eymin, eymax = _ellipse_bbox(vals)
    nf = ~found
    # rows with no located family configs fall back to the ellipse bound
    for col, arr in ((0, exmin), (1, exmax), (2, eymin), (3, eymax)):
        ext[nf, col] = arr[nf]
        sources[nf, col] = "chord_ellipse"
    ext[:, 0] = np.maximum(ext[:, 0], exmin)
    ext[:, 1] = np.minimum(ext[:, 1], exmax)
    ext[:, 2] = np.maximum(ext[:, 2], eymin)
    ext[:, 3] = np.minimum(ext[:, 3], eymax)
    return ext, sources


def _dedup_patches(patches, tol):
    """Drop any patch whose corners all lie inside another (larger) patch."""
    order = sorted(range(len(patches)),
                   key=lambda i: -((patches[i].x_max - patches[i].x_min)
                                   * (patches[i].y_max - patches[i].y_min)))
    kept = []
    for i in order:
        p = patches[i]
        contained = False
        for q in kept:
            if np.all(q.contains_world(p.corners_world(), inflate=tol)):
                contained = True
                break
        if not contained:
            kept.append(p)
    order = list(Scenario)
    kept.sort(key=lambda p: order.index(p.scenario)
              if p.scenario is not None else len(order))
    return kept


def build_patches_batch(starts, ends, lengths, kappa_max, effort="fast",
                        margin=None):
    """Patch covers for a batch of fixed-length reach queries.

    Parameters
    ----------
    starts, ends : (M, 3) arrays of (x, y, heading).
    lengths : (M,) prescribed curve lengths.
    kappa_max : curvature bound shared by the batch.
    effort : "fast" or "robust" candidate-search profile.
    margin : optional patch inflation; defaults to 1e-9 * length.

    Returns
    -------
    list of dicts, one per query: {"status": "ok", "patches": [...]} or
    {"status": "too_short"|"too_long", "min_length": float}.
    """
    starts = np.atleast_2d(np.asarray(starts, float))
    ends = np.atleast_2d(np.asarray(ends, float))
    lengths = np.atleast_1d(np.asarray(lengths, float))
    m = starts.shape[0]
    r = 1.0 / kappa_max

    dmin = dubins.dubins_min_length_batch(starts, ends, kappa_max)
    gate = 1e-9 * np.maximum(lengths, r)
    too_short = lengths < dmin - gate
    too_long = lengths >= dmin + TWO_PI * r
    ok_q = ~(too_short | too_long)

    results = [None] * m
    for i in np.nonzero(too_short)[0]:
        results[i] = {"status": "too_short", "min_length": float(dmin[i])}
    for i in np.nonzero(too_long)[0]:
        results[i] = {"status": "too_long", "min_length": float(dmin[i])}
    qidx = np.nonzero(ok_q)[0]
    if not qidx.size:
        return results

    rows = _build_rows(starts[qidx], ends[qidx], lengths[qidx], kappa_max,
                       _SCENARIOS)
    R = len(rows["ell"])
    rows["delta"] = np.zeros(R)
    rows["mtx"] = np.zeros(R)
    rows["mty"] = np.zeros(R)

    ext, found, sources = _collect_extents(rows, effort)
    ext, sources = _finalize_extents(rows, ext, found, sources)

    # a scenario with no admissible configurations hosts no extremal curves
    # and is skipped; if nothing was found anywhere (length barely above the
    # minimum and every solution manifold is tiny), fall back to the sound
    # chord-sum ellipse boxes placed by _finalize_extents.
    any_found = np.zeros(len(qidx), bool)
    np.logical_or.at(any_found, rows["query"], found)
    emit = found | ~any_found[rows["query"]]

    # Scenario frames follow the two turn circles, which for near-straight
    # queries of opposite chirality sit almost perpendicular to the chord;
    # an axis-aligned box there overstates a sliver of a reach set by the
    # projection slop.  Whenever the chord-aligned ellipse bound gives a
    # smaller box, report that box instead: both contain the scenario set.
    cphi, cd, ca, cb = _chord_boxes(starts[qidx], ends[qidx], lengths[qidx])

    per_query = {int(q): [] for q in qidx}
    for j in np.nonzero(emit)[0]:
        ql = rows["query"][j]
        q = int(qidx[ql])
        ell = rows["ell"][j]
        pad = (1e-9 * ell) if margin is None else margin
        area_fam = (ext[j, 1] - ext[j, 0]) * (ext[j, 3] - ext[j, 2])
        if 4.0 * ca[ql] * cb[ql] < area_fam:
            patch = RectPatch(
                x_min=float(0.5 * cd[ql] - ca[ql] - pad),
                x_max=float(0.5 * cd[ql] + ca[ql] + pad),
                y_min=float(-cb[ql] - pad), y_max=float(cb[ql] + pad),
                to_world=RigidMotion(float(cphi[ql]),
                                     (float(starts[q, 0]),
                                      float(starts[q, 1]))),
                scenario=_SCENARIOS[rows["scenario"][j]],
                bound_sources=dict.fromkeys(
                    ("x_min", "x_max", "y_min", "y_max"), "chord_ellipse"))
        else:
            frame = RigidMotion(float(rows["rot"][j]),
                                (float(rows["tx"][j]), float(rows["ty"][j])))
            patch = RectPatch(
                x_min=float(ext[j, 0] - pad), x_max=float(ext[j, 1] + pad),
                y_min=float(ext[j, 2] - pad), y_max=float(ext[j, 3] + pad),
                to_world=frame.inverse(),
                scenario=_SCENARIOS[rows["scenario"][j]],
                bound_sources={"x_min": sources[j, 0],
                               "x_max": sources[j, 1],
                               "y_min": sources[j, 2],
                               "y_max": sources[j, 3]})
        per_query[q].append(patch)

    for q in qidx:
        q = int(q)
        ell = float(lengths[q])
        tol = 1e-9 * (ell + r)
        results[q] = {"status": "ok",
                      "patches": _dedup_patches(per_query[q], tol)}
    return results


def build_patches(query: EnvelopeQuery, effort="robust", margin=None):
    """Rectangular patch cover of a single fixed-length reach query."""
    res = build_patches_batch(
        np.array([query.start.as_array()]), np.array([query.end.as_array()]),
        np.array([query.length]), query.kappa_max, effort=effort,
        margin=margin)[0]
    if res["status"] != "ok":
        raise InfeasibleQueryError(res["status"],
                                   "query length %.6g vs shortest %.6g"
                                   % (query.length, res["min_length"]))
    return res["patches"]


# ---------------------------------------------------------------------------
# directional bound queries (measured in the canonical frame)
# ---------------------------------------------------------------------------

def _canonical_motion(query: EnvelopeQuery) -> RigidMotion:
    """World -> canonical frame: left turn circles at (0, r) and (x, r);
    falls back to the start heading as axis when the centers coincide."""
    from .geometry import canonical_frame, DegenerateFrameError
    r = query.radius
    try:
        motion, _, _ = canonical_frame(query.start, query.end, r)
        return motion
    except DegenerateFrameError:
        c1 = query.start.turn_center(r, 1.0)
        rot = -query.start.heading
        cr, sr = np.cos(rot), np.sin(rot)
        return RigidMotion(rot, (-(cr * c1[0] - sr * c1[1]),
                                 r - (sr * c1[0] + cr * c1[1])))


def _single_scenario_vals(query: EnvelopeQuery, scenario: Scenario,
                          measure="canonical"):
    dmin = dubins.dubins_min_length(query.start, query.end, query.kappa_max)
    r = query.radius
    gate = 1e-9 * max(query.length, r)
    if query.length < dmin - gate:
        raise InfeasibleQueryError("too_short",
                                   "length %.6g below shortest %.6g"
                                   % (query.length, dmin))
    if query.length >= dmin + TWO_PI * r:
        raise InfeasibleQueryError("too_long",
                                   "length %.6g admits full turn cycles"
                                   % query.length)

    rows = _build_rows(np.array([query.start.as_array()]),
                       np.array([query.end.as_array()]),
                       np.array([query.length]), query.kappa_max, (scenario,))
    if measure == "scenario":
        rows["delta"] = np.zeros(1)
        rows["mtx"] = np.zeros(1)
        rows["mty"] = np.zeros(1)
    else:
        frame = RigidMotion(float(rows["rot"][0]),
                            (float(rows["tx"][0]), float(rows["ty"][0])))
        motion = _canonical_motion(query).compose(frame.inverse())
        rows["delta"] = np.array([motion.rotation])
        rows["mtx"] = np.array([motion.translation[0]])
        rows["mty"] = np.array([motion.translation[1]])
    return rows


def _directional_extents(query, scenario, effort, measure):
    vals = _single_scenario_vals(query, scenario, measure)
    ext, found, sources = _collect_extents(vals, effort)
    ext, sources = _finalize_extents(vals, ext, found, sources)
    return ext[0], sources[0]


def upmost_bound(query: EnvelopeQuery, scenario: Scenario,
                 effort="robust") -> float:
    """Largest canonical-frame y reached by any admissible curve of the
    scenario family."""
    ext, _ = _directional_extents(query, scenario, effort, "canonical")
    return float(ext[3])


def bottommost_bound(query: EnvelopeQuery, scenario: Scenario,
                     effort="robust") -> float:
    """Smallest canonical-frame y reached by the scenario family."""
    ext, _ = _directional_extents(query, scenario, effort, "canonical")
    return float(ext[2])


def horizontal_bounds(query: EnvelopeQuery, scenario: Scenario,
                      effort="robust"):
    """Canonical-frame x range (x_min, x_max) reached by the family."""
    ext, _ = _directional_extents(query, scenario, effort, "canonical")
    return float(ext[0]), float(ext[1])


def middle_circle_bounds_ccccc(query: EnvelopeQuery, scenario: Scenario,
                               effort="robust") -> Extents:
    """Canonical-frame extents of five-arc words: the middle turn circle
    (its center band widened by one radius) united with the word extents."""
    if scenario.value[0] != scenario.value[1]:
        raise CaseInfeasibleError(
            "five-arc words need matching departure/arrival chirality")
    vals = _single_scenario_vals(query, scenario, "canonical")
    prof = PROFILES[effort]
    ext = _FOUR_INIT.copy()
    got = False
    delta = vals["delta"][:1]
    mtx, mty = vals["mtx"][:1], vals["mty"][:1]

    def absorb(bundle, ridx):
        nonlocal ext, got
        if not len(ridx):
            return
        xmin, xmax, ymin, ymax = _fold_extents(
            bundle, rot=vals["delta"][ridx], tx=vals["mtx"][ridx],
            ty=vals["mty"][ridx])
        ext[0] = min(ext[0], xmin.min())
        ext[1] = max(ext[1], xmax.max())
        ext[2] = min(ext[2], ymin.min())
        ext[3] = max(ext[3], ymax.max())
        c3x, c3y, c3r = bundle["arcs"][2][0], bundle["arcs"][2][1], bundle["arcs"][2][2]
        c, s = np.cos(vals["delta"][ridx]), np.sin(vals["delta"][ridx])
        qx = c * c3x - s * c3y + vals["mtx"][ridx]
        qy = s * c3x + c * c3y + vals["mty"][ridx]
        ext[0] = min(ext[0], (qx - c3r).min())
        ext[1] = max(ext[1], (qx + c3r).max())
        ext[2] = min(ext[2], (qy - c3r).min())
        ext[3] = max(ext[3], (qy + c3r).max())
        got = True

    g = np.linspace(0.0, TWO_PI, max(prof["ccccc_grid"], 24), endpoint=False)
    tline = np.linspace(0.0, TWO_PI, max(prof["pinned"], 64), endpoint=False)
    for br in (1.0, -1.0):
        def fn2(v, t1, t2, full=False, b=br):
            return _eval_ccccc(v, t1, t2, b, full)

        ridx, t1, t2 = _grid2d_roots(fn2, vals, g, g)
        if ridx.size:
            out = fn2(_take(vals, ridx), t1, t2, full=True)
            absorb(out[2], ridx)
        for fam in (_fam_ccccc_pin1(br), _fam_ccccc_pin2(br)):
            ridx, troot = _family_roots(fam, vals, tline)
            if ridx.size:
                out = fam(_take(vals, ridx), troot, full=True)
                absorb(out[2], ridx)
    if not got:
        raise CaseInfeasibleError(
            "no five-arc word attains the prescribed length")
    return Extents(float(ext[0]), float(ext[1]), float(ext[2]), float(ext[3]))
