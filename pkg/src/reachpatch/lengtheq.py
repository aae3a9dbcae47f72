"""Length equations for symmetric three-turn boundary curves.

Both equations describe a curve that leaves the departure turn circle, runs
along a tangent to a middle turn circle centered on the vertical bisector at
height h, and returns by the mirrored tangent to the arrival circle.  With
the two outer circle centers at (0, r) and (x, r), the total length is a
function of h alone; the boundary height of the reachable set is read off
the root of ``length(h) - ell``.

The "opposite" equation takes the middle turn against the outer two (inner
tangents, the bound-tracking circle is crossed on its far side); the "same"
equation takes all three turns alike (outer tangents).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import TWO_PI, wrap_2pi


class CaseInfeasibleError(Exception):
    """The length equation has no root on the requested branch."""


class NoConvergenceError(Exception):
    """Root iteration failed to meet the residual gate."""


@dataclass(frozen=True)
class LengthEquationCase:
    """Inputs of a symmetric length equation.

    Attributes
    ----------
    x : float
        Distance between departure and arrival circle centers [m].
    phi1, phi2 : float
        Frame headings at departure and arrival [rad].
    r : float
        Turn radius [m].
    ell : float
        Prescribed curve length [m].
    """

    x: float
    phi1: float
    phi2: float
    r: float
    ell: float

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("turn radius must be positive")
        if self.x < 0:
            raise ValueError("center distance must be nonnegative")
        if self.ell <= 0:
            raise ValueError("length must be positive")


def residual_opposite(h, case: LengthEquationCase):
    """Residual f(h) of the opposite-winding equation; nan outside the domain.

    f(h) = 2*sqrt(x^2/4 + (h-r)^2 - 4r^2)
           + r*(2*lam + ((lam - phi1) mod 2pi) + ((lam + phi2) mod 2pi)) - ell
    with lam = asin(2r / sqrt(x^2/4 + (h-r)^2)) + atan2(2(h-r), x).
    """
    h = np.asarray(h, dtype=float)
    x, r = case.x, case.r
    d2 = 0.25 * x * x + (h - r) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.sqrt(d2)
        s2 = d2 - 4.0 * r * r
        lam = np.arcsin(np.clip(2.0 * r / d, -1.0, 1.0)) + np.arctan2(2.0 * (h - r), x)
        f = (2.0 * np.sqrt(np.where(s2 >= 0, s2, np.nan))
             + r * (2.0 * lam + wrap_2pi(lam - case.phi1) + wrap_2pi(lam + case.phi2))
             - case.ell)
    return f


def residual_opposite_prime(h, case: LengthEquationCase):
    """Derivative of `residual_opposite` (away from wrap discontinuities)."""
    h = np.asarray(h, dtype=float)
    x, r = case.x, case.r
    d2 = 0.25 * x * x + (h - r) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.sqrt(d2)
        s = np.sqrt(d2 - 4.0 * r * r)
        lam_p = (-2.0 * r * (h - r) / (d2 * s)
                 + 2.0 * x / (x * x + 4.0 * (h - r) ** 2))
        return 2.0 * (h - r) / s + 4.0 * r * lam_p


def residual_same(h, case: LengthEquationCase):
    """Residual f(h) of the same-winding equation.

    f(h) = 2*sqrt(x^2/4 + (h-r)^2)
           + r*((2pi - 2*lam) + ((lam - phi1) mod 2pi) + ((lam + phi2) mod 2pi)) - ell
    with lam = atan2(2(h-r), x).
    """
    h = np.asarray(h, dtype=float)
    x, r = case.x, case.r
    d = np.sqrt(0.25 * x * x + (h - r) ** 2)
    lam = np.arctan2(2.0 * (h - r), x)
    return (2.0 * d
            + r * ((TWO_PI - 2.0 * lam) + wrap_2pi(lam - case.phi1)
                   + wrap_2pi(lam + case.phi2))
            - case.ell)


def residual_same_prime(h, case: LengthEquationCase):
    h = np.asarray(h, dtype=float)
    x, r = case.x, case.r
    d = np.sqrt(0.25 * x * x + (h - r) ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(d > 0, 2.0 * (h - r) / d, 0.0)


def _brackets(f, lo, hi, n):
    """Sign-change brackets of f on [lo, hi] scanned at n points."""
    hs = np.linspace(lo, hi, n)
    vals = f(hs)
    out = []
    for i in range(n - 1):
        a, b = vals[i], vals[i + 1]
        if not (np.isfinite(a) and np.isfinite(b)):
            continue
        if a == 0.0:
            out.append((hs[i], hs[i]))
        elif a * b < 0.0:
            out.append((hs[i], hs[i + 1]))
    if np.isfinite(vals[-1]) and vals[-1] == 0.0:
        out.append((hs[-1], hs[-1]))
    return out


def _rtsafe(f, fp, lo, hi, h0, gate, max_iter=200):
    """Newton iteration safeguarded by the bracket [lo, hi]."""
    flo = float(f(lo))
    fhi = float(f(hi))
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo > 0.0:
        lo, hi = hi, lo  # keep f(lo) < 0 < f(hi)
    h = h0 if min(lo, hi) <= h0 <= max(lo, hi) else 0.5 * (lo + hi)
    step = abs(hi - lo)
    for _ in range(max_iter):
        fh = float(f(h))
        if fh == 0.0:
            return h
        if fh < 0.0:
            lo = h
        else:
            hi = h
        if abs(hi - lo) <= 4e-16 * max(1.0, abs(h)):
            break
        dfh = float(fp(h))
        use_bisect = True
        if np.isfinite(dfh) and dfh != 0.0:
            hn = h - fh / dfh
            if min(lo, hi) < hn < max(lo, hi) and abs(hn - h) < 0.5 * step:
                step = abs(hn - h)
                h = hn
                use_bisect = False
        if use_bisect:
            step = 0.5 * abs(hi - lo)
            h = 0.5 * (lo + hi)
    fh = float(f(h))
    if abs(fh) <= gate:
        return h
    raise NoConvergenceError("length-equation iteration exhausted")


def _solve(case, residual, prime, branch, scan_points=64):
    gate = 1e-9 * max(case.ell, case.r)
    # The branch restricts the domain: the bound-tracking circle sits above
    # (upper) or below (lower) the line through the outer circle centers.
    if branch == "upper":
        lo, hi = case.r, case.ell + 2.0 * case.r
    else:
        lo, hi = -case.ell, case.r
    f = lambda h: residual(h, case)
    fp = lambda h: prime(h, case)
    brs = _brackets(f, lo, hi, scan_points)
    if not brs:
        raise CaseInfeasibleError("no sign change on the scan interval")
    order = brs[::-1] if branch == "upper" else brs
    h0 = case.r + 0.25 * case.ell if branch == "upper" else case.r - 0.25 * case.ell
    last_err = None
    for a, b in order:
        if a == b:
            return float(a)
        try:
            return float(_rtsafe(f, fp, a, b, h0, gate))
        except NoConvergenceError as e:
            # Sign change caused by a wrap discontinuity, not a root; try next.
            last_err = e
    raise last_err


def solve_length_eq_opposite(case: LengthEquationCase, branch: str = "upper") -> float:
    """Root h of the opposite-winding length equation.

    ``branch="upper"`` returns the largest root on the scan interval (the
    bound-tracking circle above the frame axis), ``"lower"`` the smallest.

    Raises
    ------
    CaseInfeasibleError
        No root: the inner-tangent geometry does not reach the prescribed
        length (closed-region regime when x < 4r).
    NoConvergenceError
        Iteration failed the residual gate 1e-9*max(ell, r).
    """
    if branch not in ("upper", "lower"):
        raise ValueError("branch must be 'upper' or 'lower'")
    return _solve(case, residual_opposite, residual_opposite_prime, branch)


def solve_length_eq_same(case: LengthEquationCase, branch: str = "upper") -> float:
    """Root h of the same-winding length equation (see solve_length_eq_opposite)."""
    if branch not in ("upper", "lower"):
        raise ValueError("branch must be 'upper' or 'lower'")
    return _solve(case, residual_same, residual_same_prime, branch)
