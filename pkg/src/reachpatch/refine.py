"""Constraint-aware mesh refinement.

Between adjacent collocation nodes the continuous trajectory can wander
anywhere inside a fixed-length bounded-curvature reach set, so feasibility
at the nodes alone does not rule out inter-sample violations.  Each pass
covers every interval's reach set with rectangular patches, measures how
deeply the cover cuts into the expanded forbidden regions, and bisects the
offending intervals at their exact midpoints.  Halving an interval halves
the arc length available for excursions, so a per-interval bisection cap
of ceil(log2(V * dt / eps)) guarantees every pass sequence terminates.

Two drivers are provided: an outer loop that re-solves the discretized
problem to convergence between passes, and an interleaved loop that runs
one pass after every convexification step and terminates jointly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .collision import ForbiddenCircle, intrusion_reports
from .dubins import dubins_min_length_batch
from .envelope import (build_patches_batch, chord_ellipse_patch,
                       EnvelopeQuery, _chord_boxes)
from .geometry import OrientedPoint
from .scp import MaxIterationExceeded, scp_loop
from .transcription import (interpolate_onto, Mesh, NodeTrajectory,
                            ProblemDef)


class BudgetExceeded(RuntimeError):
    """A bisection would exceed the per-interval cap.

    Raised when the tolerance is inconsistent with the vehicle speed and
    the mesh cannot be refined further; carries the offending interval,
    the bisection depth it requested, and the cap that blocked it.
    """

    def __init__(self, message, interval=None, depth=None, cap=None):
        super().__init__(message)
        self.interval = interval
        self.depth = depth
        self.cap = cap


@dataclass(frozen=True)
class RefineBudget:
    """Bisection allowance anchored to the mesh the run started from.

    Every interval of any later mesh descends from one base interval by
    exact midpoint bisections, so its depth is recoverable from the width
    ratio alone.  An interval of duration dt may be bisected at most
    ceil(log2(V * dt / eps)) times: beyond that the reachable excursion
    V * dt / 2**depth is below eps and cannot intrude deeper than eps.
    """

    base_tau: tuple

    def locate(self, tau_lo: float, tau_hi: float):
        """Base-interval index and bisection depth of [tau_lo, tau_hi]."""
        base = np.asarray(self.base_tau)
        mid = 0.5 * (tau_lo + tau_hi)
        k = int(np.clip(np.searchsorted(base, mid) - 1, 0, len(base) - 2))
        width0 = base[k + 1] - base[k]
        depth = int(round(math.log2(width0 / (tau_hi - tau_lo))))
        return k, depth

    def caps(self, speed: float, sigma: float, epsilon: float) -> np.ndarray:
        """Per-base-interval bisection caps at the current time span."""
        dt0 = sigma * np.diff(np.asarray(self.base_tau)) / 2.0
        ratio = np.maximum(speed * dt0 / epsilon, 1.0)
        return np.ceil(np.log2(ratio) - 1e-12).astype(int)

    def split_counts(self, mesh: Mesh) -> np.ndarray:
        """Deepest bisection reached under each base interval."""
        tau = np.asarray(mesh.tau)
        counts = np.zeros(len(self.base_tau) - 1, int)
        for j in range(len(tau) - 1):
            k, depth = self.locate(tau[j], tau[j + 1])
            counts[k] = max(counts[k], depth)
        return counts


@dataclass
class RefinePass:
    """Outcome of one sweep over the mesh intervals."""

    intervals_checked: int
    intervals_split: list            # interval indices on the checked mesh
    new_mesh: Mesh
    reports: list                    # per interval: list of IntrusionReport
    deferred_intervals: list = field(default_factory=list)
    patches: list = field(default_factory=list)   # per interval: RectPatch list

    def __post_init__(self):
        grown = len(self.new_mesh) - (self.intervals_checked + 1)
        if grown != len(set(self.intervals_split)):
            raise ValueError("each split must insert exactly one midpoint")


def interval_query(traj: NodeTrajectory, mesh: Mesh, j: int,
                   problem: ProblemDef) -> EnvelopeQuery:
    """Reach-set query spanning mesh interval j of the discrete solution.

    The heading state gives the tangent direction at both nodes directly;
    constant speed makes the prescribed arc length V * dt_j with dt_j the
    physical duration of the interval, and the lateral-acceleration bound
    caps curvature at u_max / V^2.
    """
    if not 0 <= j < len(mesh) - 1:
        raise IndexError("interval %d outside mesh with %d intervals"
                         % (j, len(mesh) - 1))
    dt = traj.sigma * mesh.delta[j] / 2.0
    return EnvelopeQuery(start=OrientedPoint(*traj.states[j]),
                         end=OrientedPoint(*traj.states[j + 1]),
                         length=problem.speed * dt,
                         kappa_max=problem.kappa_max)


def _endpoint_feasibility(traj, circles):
    """Per-node worst violation of the expanded regions, as a boolean mask.

    A node deeper inside an expanded region than the slack the solver is
    allowed at convergence cannot be rescued by bisection, only by the
    path constraint itself, so its intervals are deferred rather than
    split.
    """
    pos = traj.states[:, :2]
    ok = np.ones(len(pos), bool)
    for circle in circles:
        cx, cy = circle.center
        tol = max(1e-5, 1e-9 * circle.radius)
        ok &= np.hypot(pos[:, 0] - cx, pos[:, 1] - cy) >= circle.radius - tol
    return ok


def _chord_box_depths(starts, phi, chord, half_len, half_wid, pad, circles):
    """Worst intrusion of each chord-aligned ellipse box into any circle."""
    n = len(phi)
    if not circles:
        return np.zeros(n)
    cen = np.array([c.center for c in circles], float)
    rad = np.array([c.radius for c in circles], float)
    dx = cen[None, :, 0] - starts[:, None, 0]
    dy = cen[None, :, 1] - starts[:, None, 1]
    cph, sph = np.cos(phi)[:, None], np.sin(phi)[:, None]
    cx = cph * dx + sph * dy
    cy = -sph * dx + cph * dy
    x_lo = (0.5 * chord - half_len - pad)[:, None]
    x_hi = (0.5 * chord + half_len + pad)[:, None]
    y_hi = (half_wid + pad)[:, None]
    off_x = np.maximum(np.maximum(x_lo - cx, cx - x_hi), 0.0)
    off_y = np.maximum(np.abs(cy) - y_hi, 0.0)
    depth = np.maximum(rad[None, :] - np.hypot(off_x, off_y), 0.0)
    return depth.max(axis=1)


def refine_pass(traj: NodeTrajectory, mesh: Mesh, problem: ProblemDef,
                epsilon: float = None, budget: RefineBudget = None,
                effort: str = "fast") -> RefinePass:
    """One sweep: cover every interval, test, bisect the offenders.

    Every interval is first tested against the chord-aligned ellipse bound
    of its reach set, which is cheap, sound for any admissible length, and
    tight wherever the interval is close to its shortest admissible path.
    Intervals whose ellipse box stays within epsilon of every expanded
    region are certified by that single patch; only the remainder get the
    full scenario cover, built in one batch.  An interval is split when
    any of its patches intrudes an expanded region deeper than epsilon.

    Unconverged iterates need two concessions.  A node still inside an
    expanded region defers its intervals (no bisection can cure an
    infeasible endpoint).  A prescribed arc length a hair below the
    shortest admissible path signals node poses not yet consistent with
    the dynamics; the interval is covered at the minimum length instead,
    which at convergence differs by defect-level slop only.  Queries long
    enough to admit full loops are certified by the ellipse bound when it
    clears and split otherwise, since halving genuinely cures those.
    When a budget is supplied, a split that would exceed the cap raises
    BudgetExceeded.
    """
    eps = problem.epsilon if epsilon is None else epsilon
    n_int = len(mesh) - 1
    rad = 1.0 / problem.kappa_max
    lengths = problem.speed * traj.sigma * mesh.delta / 2.0
    starts, ends = traj.states[:-1], traj.states[1:]
    circles = [ForbiddenCircle(tuple(c), r + eps)
               for c, r in zip(problem.nfz_centers, problem.nfz_radii)]
    node_ok = _endpoint_feasibility(traj, circles)
    pair_ok = node_ok[:-1] & node_ok[1:]

    dmin = dubins_min_length_batch(starts, ends, problem.kappa_max)
    gate = 1e-9 * np.maximum(lengths, rad)
    too_short = lengths < dmin - gate
    too_long = lengths >= dmin + 2.0 * math.pi * rad
    hard_short = too_short & ~pair_ok
    eff = np.where(too_short & pair_ok,
                   dmin + 2e-9 * np.maximum(dmin, rad), lengths)

    pad = 1e-9 * eff
    phi, chord, half_len, half_wid = _chord_boxes(starts, ends, eff)
    box_depth = _chord_box_depths(starts, phi, chord, half_len, half_wid,
                                  pad, circles)
    screened = ~hard_short & (box_depth <= eps)

    build_idx = np.nonzero(~hard_short & ~screened & ~too_long)[0]
    results = {}
    if build_idx.size:
        sub = build_patches_batch(starts[build_idx], ends[build_idx],
                                  eff[build_idx], problem.kappa_max,
                                  effort=effort)
        results = dict(zip(build_idx.tolist(), sub))

    split, reports, deferred, patches = [], [], [], []
    for j in range(n_int):
        if hard_short[j]:
            reports.append([])
            patches.append([])
            deferred.append(j)
            continue
        if screened[j]:
            patch = chord_ellipse_patch(starts[j], ends[j], float(eff[j]),
                                        margin=float(pad[j]))
            reports.append(intrusion_reports([patch], circles, eps))
            patches.append([patch])
            continue
        if too_long[j]:
            reports.append([])
            patches.append([])
            (split if pair_ok[j] else deferred).append(j)
            continue
        res = results[j]
        if res["status"] != "ok":
            reports.append([])
            patches.append([])
            if pair_ok[j] and res["status"] == "too_long":
                split.append(j)
            else:
                deferred.append(j)
            continue
        reps = intrusion_reports(res["patches"], circles, eps)
        reports.append(reps)
        patches.append(res["patches"])
        if any(r.exceeded for r in reps):
            if pair_ok[j]:
                split.append(j)
            else:
                deferred.append(j)

    if budget is not None and split:
        caps = budget.caps(problem.speed, traj.sigma, eps)
        for j in split:
            k, depth = budget.locate(mesh.tau[j], mesh.tau[j + 1])
            if depth + 1 > caps[k]:
                raise BudgetExceeded(
                    "interval %d requests bisection depth %d but base "
                    "interval %d allows %d; epsilon %.3g is inconsistent "
                    "with speed %.3g" % (j, depth + 1, k, caps[k], eps,
                                         problem.speed),
                    interval=j, depth=depth + 1, cap=int(caps[k]))

    new_mesh = mesh.with_midpoints(split) if split else mesh
    return RefinePass(intervals_checked=n_int, intervals_split=split,
                      new_mesh=new_mesh, reports=reports,
                      deferred_intervals=deferred, patches=patches)


@dataclass
class OuterRound:
    """One solve-then-refine round of the outer driver."""

    traj: NodeTrajectory
    mesh: Mesh
    refine: RefinePass


def _scp_oracle(problem, mesh, guess):
    """Default discretized-problem solver: convexification to convergence."""
    return scp_loop(problem, mesh, guess=guess)[-1].traj


def run_algorithm1(problem: ProblemDef, mesh0: Mesh, epsilon: float = None,
                   nlp_solver_hook=None, max_outer: int = 30):
    """Refine-after-converge driver.

    Solves the discretized problem to convergence on the current mesh,
    runs one refinement pass, reinterpolates the solution onto the grown
    mesh as the next warm start, and stops the first time a pass splits
    nothing.  Returns (trajectory, mesh, rounds).
    """
    eps = problem.epsilon if epsilon is None else epsilon
    solver = _scp_oracle if nlp_solver_hook is None else nlp_solver_hook
    budget = RefineBudget(mesh0.tau)
    mesh, guess, rounds = mesh0, None, []
    for _ in range(max_outer):
        traj = solver(problem, mesh, guess)
        rp = refine_pass(traj, mesh, problem, eps, budget=budget)
        rounds.append(OuterRound(traj=traj, mesh=mesh, refine=rp))
        if not rp.intervals_split:
            return traj, mesh, rounds
        guess = interpolate_onto(traj, mesh, rp.new_mesh)
        mesh = rp.new_mesh
    raise MaxIterationExceeded(
        "outer refinement did not settle in %d rounds" % max_outer, rounds)


def run_algorithm2(problem: ProblemDef, mesh0: Mesh,
                   guess: NodeTrajectory = None, epsilon: float = None,
                   eps_trc: tuple = None, max_iter: int = 100,
                   refine: bool = True):
    """Interleaved driver: one refinement pass per convexification step.

    The pass runs on each fresh iterate before the convergence test, so
    the loop terminates only when the step is small and the final pass
    split nothing.  Disabling refinement reproduces the plain loop
    exactly.  Returns (final iterate, final mesh, (iterates, passes))
    where passes records (iteration, RefinePass) for every pass run.
    """
    if eps_trc is not None:
        problem = replace(problem, eps_trc=tuple(eps_trc))
    eps = problem.epsilon if epsilon is None else epsilon
    budget = RefineBudget(mesh0.tau)
    passes = []

    def hook(traj, mesh):
        rp = refine_pass(traj, mesh, problem, eps, budget=budget)
        passes.append((len(passes) + 1, rp))
        return rp.new_mesh if rp.intervals_split else None

    iterates = scp_loop(problem, mesh0, guess=guess,
                        refine_hook=hook if refine else None,
                        max_iter=max_iter)
    final = iterates[-1]
    return final, final.mesh, (iterates, passes)
