"""Sequential convex programming for the turn-rate-limited aircraft problem.

Each iteration linearizes the dynamics and no-fly-zone constraints about the
previous iterate, assembles a sparse convex QP over the stacked node states,
controls, and time span, and solves it under a fixed componentwise trust
region.  A refinement hook may grow the mesh between iterations; the loop
terminates only when the iterate stops moving AND no interval was refined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .qp import QpInstance, QpStatus, solve_qp
from .transcription import (DimensionMismatch, Mesh, NodeTrajectory,
                            ProblemDef, interpolate_onto, straight_line_guess,
                            trapezoid_defects)

W_SLACK = 1e5          # exact-penalty weight on constraint slack variables
SLACK_TOL = 1e-6       # max admissible slack at convergence
SIGMA_FLOOR = 1e-6     # keeps the time span positive in every subproblem
CONV_SHRINK = 0.01     # termination threshold as a fraction of the trust region


class NonConverged(RuntimeError):
    """The loop terminated without a constraint-satisfying iterate."""


class MaxIterationExceeded(NonConverged):
    """Iteration cap hit; carries the iterate history produced so far."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class SubproblemInfeasible(RuntimeError):
    """A convex subproblem had no solution (possible with slacks disabled)."""


@dataclass
class LinearizedModel:
    """First-order model of dynamics and path constraints at one iterate.

    The state Jacobian keeps the analytic sparsity of constant-speed
    planar flight: only d(xdot)/dgamma and d(ydot)/dgamma are nonzero.
    """

    A: np.ndarray          # (N, 3, 3) state Jacobians
    B: np.ndarray          # (3,) control map, constant across nodes
    b: np.ndarray          # (N, 3) offsets, A z_k + b = f(z_k, 0)
    f_prev: np.ndarray     # (N, 3) nonlinear dynamics at the iterate
    nfz_coeff: np.ndarray  # (N, m, 2) halfplane gradients
    nfz_const: np.ndarray  # (N, m) halfplane offsets
    z_prev: np.ndarray     # (N, 3) linearization states
    sigma: float           # previous time span


def linearize_nfz(traj: NodeTrajectory, problem: ProblemDef):
    """Per-node halfplanes from the quadratic clearance functions.

    For each node position p_k and zone (c, R) expanded to R + epsilon,
    h(p) = |p - c|^2 - (R + eps)^2 is linearized at p_k; the halfplane
    coeff . p + const >= 0 under-approximates h >= 0 (h is convex), so it
    is valid even when the node currently sits inside the zone.
    """
    pos = traj.states[:, :2]
    n = pos.shape[0]
    centers = np.asarray(problem.nfz_centers, float).reshape(-1, 2)
    radii = np.asarray(problem.nfz_radii, float)
    m = radii.size
    if m == 0:
        return np.zeros((n, 0, 2)), np.zeros((n, 0))
    dvec = pos[:, None, :] - centers[None, :, :]
    hval = (dvec ** 2).sum(-1) - (radii + problem.epsilon) ** 2
    coeff = 2.0 * dvec
    const = hval - (coeff * pos[:, None, :]).sum(-1)
    return coeff, const


def linearize_dynamics(traj: NodeTrajectory,
                       problem: ProblemDef) -> LinearizedModel:
    """Jacobians, offsets, and halfplanes about the given iterate.

    The offset satisfies A z_k + b = f(z_k, 0) exactly, so the linear model
    reproduces the nonlinear dynamics at the linearization point.
    """
    g = traj.states[:, 2]
    n = g.size
    V = problem.speed
    A = np.zeros((n, 3, 3))
    A[:, 0, 2] = -V * np.sin(g)
    A[:, 1, 2] = V * np.cos(g)
    B = np.array([0.0, 0.0, 1.0 / V])
    f_free = problem.dynamics(traj.states, np.zeros(n))
    b = f_free - np.einsum("nij,nj->ni", A, traj.states)
    f_prev = problem.dynamics(traj.states, traj.controls)
    coeff, const = linearize_nfz(traj, problem)
    return LinearizedModel(A=A, B=B, b=b, f_prev=f_prev, nfz_coeff=coeff,
                           nfz_const=const, z_prev=traj.states.copy(),
                           sigma=traj.sigma)


def _variable_layout(n_nodes: int, n_nfz: int, use_slacks: bool):
    """Column offsets of (states, controls, sigma, slacks) in the stack.

    Slack variables comprise one relaxation per imposed halfplane plus a
    signed pair per defect row (virtual controls); the latter make every
    subproblem feasible by construction, since the previous iterate plus
    its own defect residuals always satisfies all constraints.
    """
    iu0 = 3 * n_nodes
    isig = 4 * n_nodes
    n_hp = (n_nodes - 1) * n_nfz if use_slacks else 0
    ivirt0 = isig + 1 + n_hp
    n_virt = 6 * (n_nodes - 1) if use_slacks else 0
    return iu0, isig, isig + 1, ivirt0, ivirt0 + n_virt


def split_solution(x: np.ndarray, n_nodes: int, n_nfz: int,
                   use_slacks: bool = True):
    """Unstack a subproblem solution into (states, controls, sigma, slacks).

    The slack block concatenates halfplane relaxations and the virtual
    control magnitudes; all entries must vanish at a usable solution.
    """
    iu0, isig, isl0, _, _ = _variable_layout(n_nodes, n_nfz, use_slacks)
    states = x[:iu0].reshape(n_nodes, 3)
    controls = x[iu0:isig]
    sigma = float(x[isig])
    slacks = x[isl0:]
    return states, controls, sigma, slacks


def assemble_subproblem(model: LinearizedModel, mesh: Mesh,
                        problem: ProblemDef,
                        use_slacks: bool = True) -> QpInstance:
    """Sparse QP over stacked (z_1..z_N, u_1..u_N, sigma [, slacks]).

    Cost: (sigma_prev / 2) * trapezoid weights * u^2 plus a linear
    exact-penalty term on the slacks.  Equalities: linearized trapezoid
    defects (the bilinear sigma*f term expanded to first order about the
    iterate), relaxed by signed virtual controls when slacks are enabled,
    and the boundary poses.  Inequalities: control bounds, per-node
    halfplanes at every node but the last, componentwise trust regions on
    z and sigma, and sigma > 0.
    """
    n = model.A.shape[0]
    if len(mesh) != n:
        raise DimensionMismatch("model nodes do not match the mesh")
    m = model.nfz_coeff.shape[1]
    iu0, isig, isl0, ivirt0, nvar = _variable_layout(n, m, use_slacks)
    sig_k = model.sigma
    w = mesh.quad_weights()

    P = sp.diags(np.concatenate([np.zeros(3 * n), sig_k * w,
                                 np.zeros(nvar - isig)]), format="csc")
    q = np.zeros(nvar)
    if use_slacks:
        q[isl0:] = W_SLACK

    # equalities: 3 defect rows per interval plus 6 boundary rows
    rows, cols, vals = [], [], []
    b_eq = np.zeros(3 * (n - 1) + 6)

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    delta = mesh.delta
    for j in range(n - 1):
        c4 = delta[j] / 4.0
        fsum = model.f_prev[j] + model.f_prev[j + 1]
        for i in range(3):
            r = 3 * j + i
            put(r, 3 * j + i, -1.0)
            put(r, 3 * (j + 1) + i, 1.0)
            for cc in range(3):
                aj = model.A[j, i, cc]
                if aj:
                    put(r, 3 * j + cc, -c4 * sig_k * aj)
                an = model.A[j + 1, i, cc]
                if an:
                    put(r, 3 * (j + 1) + cc, -c4 * sig_k * an)
            if model.B[i]:
                put(r, iu0 + j, -c4 * sig_k * model.B[i])
                put(r, iu0 + j + 1, -c4 * sig_k * model.B[i])
            put(r, isig, -c4 * fsum[i])
            if use_slacks:
                put(r, ivirt0 + 2 * r, 1.0)
                put(r, ivirt0 + 2 * r + 1, -1.0)
            b_eq[r] = c4 * sig_k * (model.b[j, i] + model.b[j + 1, i]) \
                - c4 * sig_k * fsum[i]
    r0 = 3 * (n - 1)
    start = problem.start.as_array()
    goal = problem.goal.as_array()
    for i in range(3):
        put(r0 + i, i, 1.0)
        b_eq[r0 + i] = start[i]
        put(r0 + 3 + i, 3 * (n - 1) + i, 1.0)
        b_eq[r0 + 3 + i] = goal[i]
    A_eq = sp.coo_matrix((vals, (rows, cols)),
                         shape=(b_eq.size, nvar)).tocsc()

    # inequalities G x <= g
    rows, cols, vals, g_rhs = [], [], [], []

    def row(entries, rhs):
        r = len(g_rhs)
        for c, v in entries:
            rows.append(r)
            cols.append(c)
            vals.append(v)
        g_rhs.append(rhs)

    for j in range(n):
        row([(iu0 + j, 1.0)], problem.u_max)
        row([(iu0 + j, -1.0)], problem.u_max)
    eps = np.asarray(problem.eps_trc, float)
    for j in range(n):
        for i in range(3):
            zk = model.z_prev[j, i]
            row([(3 * j + i, 1.0)], zk + eps[i])
            row([(3 * j + i, -1.0)], eps[i] - zk)
    row([(isig, 1.0)], sig_k + problem.sigma_trc)
    row([(isig, -1.0)], problem.sigma_trc - sig_k)
    row([(isig, -1.0)], -SIGMA_FLOOR)
    # halfplane rows are normalized by the gradient norm so their constants
    # (and slacks) are in meters, commensurate with the other rows
    for j in range(n - 1):
        for i in range(m):
            nrm = max(float(np.hypot(*model.nfz_coeff[j, i])), 1e-12)
            ent = [(3 * j, -model.nfz_coeff[j, i, 0] / nrm),
                   (3 * j + 1, -model.nfz_coeff[j, i, 1] / nrm)]
            if use_slacks:
                ent.append((isl0 + j * m + i, -1.0))
            row(ent, model.nfz_const[j, i] / nrm)
    for k in range(isl0, nvar):
        row([(k, -1.0)], 0.0)
    G = sp.coo_matrix((vals, (rows, cols)), shape=(len(g_rhs), nvar)).tocsc()
    return QpInstance(P=P, q=q, A_eq=A_eq, b_eq=b_eq, G=G,
                      g=np.asarray(g_rhs))


@dataclass
class ScpIterate:
    """One accepted iterate with its mesh and movement diagnostics."""

    traj: NodeTrajectory
    mesh: Mesh
    k: int
    metric: float          # inf-norm of the state change this iteration
    slack_max: float
    refined: bool

    def __post_init__(self):
        if self.metric < 0:
            raise ValueError("convergence metric must be nonnegative")


def _warm_start(traj, model, mesh, problem, use_slacks):
    """Stacked start point; with slacks on it satisfies every constraint."""
    m = model.nfz_coeff.shape[1]
    x0 = np.concatenate([traj.states.ravel(), traj.controls, [traj.sigma]])
    if use_slacks:
        if m:
            nrm = np.maximum(np.linalg.norm(model.nfz_coeff[:-1], axis=2),
                             1e-12)
            viol = -(np.einsum("jmc,jc->jm", model.nfz_coeff[:-1],
                               traj.states[:-1, :2])
                     + model.nfz_const[:-1]) / nrm
            x0 = np.concatenate([x0, np.maximum(viol, 0.0).ravel()])
        d = trapezoid_defects(traj, mesh, problem.dynamics).ravel()
        virt = np.stack([np.maximum(-d, 0.0), np.maximum(d, 0.0)],
                        axis=1).ravel()
        x0 = np.concatenate([x0, virt])
    return x0


def scp_loop(problem: ProblemDef, mesh: Mesh, guess: NodeTrajectory = None,
             refine_hook=None, max_iter: int = 100, use_slacks: bool = True,
             qp_tol: float = 1e-6, conv_tol=None):
    """Run successive convexification to the joint termination criterion.

    Terminates when no interval was refined this iteration AND the state
    change is componentwise below conv_tol (default: CONV_SHRINK times the
    trust region, so accepted steps are deep inside it and the linearized
    constraints hold to matching accuracy at the fixed point).

    refine_hook(traj, mesh) may return a grown Mesh (or None to decline);
    when it grows the mesh, the fresh iterate is reinterpolated onto it and
    the iteration does not count as converged.  Returns the list of
    ScpIterate records; raises MaxIterationExceeded (history attached),
    SubproblemInfeasible, or NonConverged when slacks remain active at the
    would-be fixed point.
    """
    traj = guess.copy() if guess is not None else \
        straight_line_guess(problem, mesh)
    if traj.states.shape[0] != len(mesh):
        raise DimensionMismatch("guess length does not match the mesh")
    conv = np.asarray(conv_tol, float) if conv_tol is not None else \
        np.asarray(problem.eps_trc, float) * CONV_SHRINK
    history = []
    for k in range(1, max_iter + 1):
        model = linearize_dynamics(traj, problem)
        inst = assemble_subproblem(model, mesh, problem, use_slacks)
        sol = solve_qp(inst, tol=qp_tol,
                       x0=_warm_start(traj, model, mesh, problem, use_slacks))
        if sol.status == QpStatus.INFEASIBLE:
            raise SubproblemInfeasible("subproblem infeasible at iteration"
                                       " %d" % k)
        if sol.status == QpStatus.MAX_ITER and \
                max(sol.residuals.values()) > 1e3 * qp_tol:
            raise SubproblemInfeasible("subproblem solver stalled at"
                                       " iteration %d" % k)
        n = len(mesh)
        m = model.nfz_coeff.shape[1]
        states, controls, sigma, slacks = split_solution(
            sol.x, n, m, use_slacks)
        dz = np.abs(states - traj.states)
        metric = float(dz.max())
        settled = bool(np.all(dz < conv[None, :]))
        slack_max = float(slacks.max()) if slacks.size else 0.0
        new_traj = NodeTrajectory(states, controls, traj.t0, traj.t0 + sigma)

        refined = False
        if refine_hook is not None:
            grown = refine_hook(new_traj, mesh)
            if grown is not None and len(grown) > len(mesh):
                new_traj = interpolate_onto(new_traj, mesh, grown)
                mesh = grown
                refined = True
        history.append(ScpIterate(traj=new_traj.copy(), mesh=mesh, k=k,
                                  metric=metric, slack_max=slack_max,
                                  refined=refined))
        traj = new_traj
        if settled and not refined:
            if slack_max > SLACK_TOL:
                raise NonConverged("converged with active no-fly-zone "
                                   "slack %.3e" % slack_max)
            return history
    raise MaxIterationExceeded("no convergence in %d iterations" % max_iter,
                               history)
