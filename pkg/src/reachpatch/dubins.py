"""Shortest curvature-bounded paths between oriented points.

Candidate words are built geometrically (tangent constructions between turn
circles), then kept only if propagating them actually reproduces the target
pose; the shortest survivor is the answer. This makes the word formulas
self-checking instead of trusting case analysis.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import (CurveWord, OrientedPoint, TWO_PI, propagate_arrays,
                       wrap_2pi, wrap_pi)

# Word enumeration order; ties in length are broken by this order.
WORD_NAMES = ("LSL", "RSR", "LSR", "RSL", "LRL", "RLR")

# Internal candidate list: CCC words have two middle-circle placements.
_CANDIDATES = (
    ("LSL", (1, 0, 1)),
    ("RSR", (-1, 0, -1)),
    ("LSR", (1, 0, -1)),
    ("RSL", (-1, 0, 1)),
    ("LRL", (1, -1, 1)),
    ("LRL", (1, -1, 1)),
    ("RLR", (-1, 1, -1)),
    ("RLR", (-1, 1, -1)),
)

_ANGLE_TOL = 1e-9


def _normalized(start, end, kappa):
    """Scale to unit turn radius and rotate the chord onto the +x axis."""
    sx, sy, sg = start
    ex, ey, eg = end
    dx = (ex - sx) * kappa
    dy = (ey - sy) * kappa
    d = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    alpha = sg - theta
    beta = eg - theta
    return d, alpha, beta


def _candidate_params(d, alpha, beta):
    """Normalized (t, p, q) for the eight candidates; infeasible -> nan.

    Arrays broadcast; returns three arrays of shape (8,) + shape(d).
    """
    d = np.asarray(d, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    shp = np.broadcast_shapes(d.shape, alpha.shape, beta.shape)
    t = np.full((8,) + shp, np.nan)
    p = np.full((8,) + shp, np.nan)
    q = np.full((8,) + shp, np.nan)

    sa, ca = np.sin(alpha), np.cos(alpha)
    sb, cb = np.sin(beta), np.cos(beta)

    with np.errstate(invalid="ignore", divide="ignore"):
        # LSL: left circles at (-sa, ca) and (d - sb, cb).
        dx, dy = d - sb + sa, cb - ca
        psi = np.arctan2(dy, dx)
        t[0] = wrap_2pi(psi - alpha)
        p[0] = np.hypot(dx, dy)
        q[0] = wrap_2pi(beta - psi)

        # RSR: right circles at (sa, -ca) and (d + sb, -cb).
        dx, dy = d + sb - sa, -cb + ca
        psi = np.arctan2(dy, dx)
        t[1] = wrap_2pi(alpha - psi)
        p[1] = np.hypot(dx, dy)
        q[1] = wrap_2pi(psi - beta)

        # LSR: left start circle, right goal circle; inner tangent.
        dx, dy = d + sb + sa, -cb - ca
        dd = np.hypot(dx, dy)
        ok = dd >= 2.0
        ratio = np.where(ok, np.clip(2.0 / np.where(dd > 0, dd, np.inf), -1, 1), np.nan)
        psi = np.arctan2(dy, dx) + np.arcsin(ratio)
        t[2] = wrap_2pi(psi - alpha)
        p[2] = np.sqrt(np.where(ok, dd * dd - 4.0, np.nan))
        q[2] = wrap_2pi(psi - beta)

        # RSL: mirror of LSR.
        dx, dy = d - sb - sa, cb + ca
        dd = np.hypot(dx, dy)
        ok = dd >= 2.0
        ratio = np.where(ok, np.clip(2.0 / np.where(dd > 0, dd, np.inf), -1, 1), np.nan)
        psi = np.arctan2(dy, dx) - np.arcsin(ratio)
        t[3] = wrap_2pi(alpha - psi)
        p[3] = np.sqrt(np.where(ok, dd * dd - 4.0, np.nan))
        q[3] = wrap_2pi(beta - psi)

        # LRL: middle right circle tangent to both left circles (2 placements).
        csx, csy = -sa, ca
        cgx, cgy = d - sb, cb
        dx, dy = cgx - csx, cgy - csy
        dd = np.hypot(dx, dy)
        ok = (dd <= 4.0) & (dd > 0)
        h = np.sqrt(np.where(ok, 4.0 - 0.25 * dd * dd, np.nan))
        ux, uy = dx / np.where(dd > 0, dd, np.inf), dy / np.where(dd > 0, dd, np.inf)
        for slot, sign in ((4, 1.0), (5, -1.0)):
            cmx = csx + 0.5 * dx - sign * h * uy
            cmy = csy + 0.5 * dy + sign * h * ux
            h1 = np.arctan2((csy + cmy) * 0.5 - csy, (csx + cmx) * 0.5 - csx) + 0.5 * np.pi
            h2 = np.arctan2((cgy + cmy) * 0.5 - cgy, (cgx + cmx) * 0.5 - cgx) + 0.5 * np.pi
            t[slot] = wrap_2pi(h1 - alpha)
            p[slot] = wrap_2pi(h1 - h2)
            q[slot] = wrap_2pi(beta - h2)

        # RLR: middle left circle tangent to both right circles (2 placements).
        csx, csy = sa, -ca
        cgx, cgy = d + sb, -cb
        dx, dy = cgx - csx, cgy - csy
        dd = np.hypot(dx, dy)
        ok = (dd <= 4.0) & (dd > 0)
        h = np.sqrt(np.where(ok, 4.0 - 0.25 * dd * dd, np.nan))
        ux, uy = dx / np.where(dd > 0, dd, np.inf), dy / np.where(dd > 0, dd, np.inf)
        for slot, sign in ((6, 1.0), (7, -1.0)):
            cmx = csx + 0.5 * dx - sign * h * uy
            cmy = csy + 0.5 * dy + sign * h * ux
            h1 = np.arctan2((csy + cmy) * 0.5 - csy, (csx + cmx) * 0.5 - csx) - 0.5 * np.pi
            h2 = np.arctan2((cgy + cmy) * 0.5 - cgy, (cgx + cmx) * 0.5 - cgx) - 0.5 * np.pi
            t[slot] = wrap_2pi(alpha - h1)
            p[slot] = wrap_2pi(h2 - h1)
            q[slot] = wrap_2pi(h2 - beta)

    return t, p, q


def _verify_mask(d, alpha, beta, t, p, q, tol=1e-6):
    """Keep candidates whose propagated endpoint matches (d, 0, beta)."""
    shp = t.shape
    x = np.zeros(shp)
    y = np.zeros(shp)
    g = np.broadcast_to(np.asarray(alpha, dtype=float), shp).copy()
    signs = np.array([c[1] for c in _CANDIDATES], dtype=float)
    signs = signs.reshape((8, 3) + (1,) * (len(shp) - 1))
    lengths = np.stack([t, p, q])
    with np.errstate(invalid="ignore"):
        for i in range(3):
            x, y, g = propagate_arrays(x, y, g, signs[:, i], lengths[i])
        err_pos = np.hypot(x - d, y)
        err_ang = np.abs(wrap_pi(g - beta))
        ok = np.isfinite(t) & np.isfinite(p) & np.isfinite(q)
        ok &= (err_pos <= tol) & (err_ang <= tol)
    return ok


def dubins_candidates(d, alpha, beta):
    """Normalized lengths of all verified candidates, shape (8,) + shape(d).

    Returns (totals, t, p, q); infeasible candidates hold +inf total.
    """
    t, p, q = _candidate_params(d, alpha, beta)
    ok = _verify_mask(d, alpha, beta, t, p, q)
    totals = np.where(ok, t + p + q, np.inf)
    return totals, t, p, q


def _filter_mask(t, q, first_turn, last_turn):
    """Mask of candidates whose first/last turn matches the requested winding."""
    first = np.array([c[1][0] for c in _CANDIDATES]).reshape((8,) + (1,) * (t.ndim - 1))
    last = np.array([c[1][2] for c in _CANDIDATES]).reshape((8,) + (1,) * (t.ndim - 1))
    mask = np.ones(t.shape, dtype=bool)
    if first_turn is not None:
        mask &= (first == first_turn) | (t < _ANGLE_TOL) | (t > TWO_PI - _ANGLE_TOL)
    if last_turn is not None:
        mask &= (last == last_turn) | (q < _ANGLE_TOL) | (q > TWO_PI - _ANGLE_TOL)
    return mask


def dubins_min_length(start: OrientedPoint, end: OrientedPoint, kappa_max: float,
                      first_turn=None, last_turn=None) -> float:
    """Length of the shortest admissible path, optionally with prescribed
    departure/arrival turn direction (+1 left, -1 right)."""
    d, alpha, beta = _normalized(start.as_array(), end.as_array(), kappa_max)
    totals, t, p, q = dubins_candidates(d, alpha, beta)
    totals = np.where(_filter_mask(t, q, first_turn, last_turn), totals, np.inf)
    best = float(np.min(totals))
    return best / kappa_max


def dubins_min_length_batch(start_arr, end_arr, kappa_max,
                            first_turn=None, last_turn=None):
    """Vectorized `dubins_min_length` over stacked poses (M, 3)."""
    start_arr = np.asarray(start_arr, dtype=float)
    end_arr = np.asarray(end_arr, dtype=float)
    d, alpha, beta = _normalized(start_arr.T, end_arr.T, kappa_max)
    totals, t, p, q = dubins_candidates(d, alpha, beta)
    totals = np.where(_filter_mask(t, q, first_turn, last_turn), totals, np.inf)
    return np.min(totals, axis=0) / kappa_max


def dubins_candidate_segments(start_arr, end_arr, kappa_max):
    """Per-candidate turn directions and segment lengths for stacked poses.

    Returns (signs, totals, lengths): signs is (8, 3) with the turn
    direction of each segment (+1 left, -1 right, 0 straight), totals is
    (8, M) world path lengths with +inf marking infeasible candidates, and
    lengths is (8, 3, M) world segment lengths.
    """
    start_arr = np.asarray(start_arr, dtype=float)
    end_arr = np.asarray(end_arr, dtype=float)
    d, alpha, beta = _normalized(start_arr.T, end_arr.T, kappa_max)
    totals, t, p, q = dubins_candidates(d, alpha, beta)
    signs = np.array([c[1] for c in _CANDIDATES], dtype=float)
    lengths = np.stack([t, p, q], axis=1) / kappa_max
    return signs, totals / kappa_max, lengths


def dubins_words(start: OrientedPoint, end: OrientedPoint, kappa_max: float):
    """All verified candidate words, as a list of (name, CurveWord)."""
    d, alpha, beta = _normalized(start.as_array(), end.as_array(), kappa_max)
    totals, t, p, q = dubins_candidates(d, alpha, beta)
    r = 1.0 / kappa_max
    out = []
    for i, (name, signs) in enumerate(_CANDIDATES):
        if not np.isfinite(totals[i]):
            continue
        lengths = np.array([t[i], p[i], q[i]]) * r
        curvs = [s * kappa_max for s in signs]
        word = CurveWord.from_controls(start, curvs, lengths)
        word.word_name = name
        out.append((name, word))
    return out


def dubins_shortest(start: OrientedPoint, end: OrientedPoint,
                    kappa_max: float) -> CurveWord:
    """Shortest admissible word; ties broken by word enumeration order."""
    words = dubins_words(start, end, kappa_max)
    if not words:
        raise RuntimeError("no feasible word found (degenerate query)")
    best = None
    best_len = np.inf
    for name, word in words:
        L = word.length
        if L < best_len - 1e-15:
            best, best_len = word, L
    return best
