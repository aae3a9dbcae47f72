"""Trapezoidal direct collocation on a scaled-time mesh.

States, controls, and path constraints live at mesh nodes tau_1..tau_N in
[-1, +1]; the final time enters through the half-span sigma = tf - t0 so the
mesh itself never changes units.  Defect constraints use the trapezoid rule
per interval and the cost is the matching trapezoid quadrature of the
control energy integrand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import OrientedPoint


class DimensionMismatch(ValueError):
    """Trajectory arrays do not match the mesh."""


@dataclass(frozen=True)
class Mesh:
    """Strictly increasing scaled-time nodes with exact endpoints -1, +1."""

    tau: tuple

    def __post_init__(self):
        t = np.asarray(self.tau, float)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("mesh needs at least two nodes")
        if t[0] != -1.0 or t[-1] != 1.0:
            raise ValueError("mesh endpoints must be exactly -1 and +1")
        if not np.all(np.diff(t) > 0):
            raise ValueError("mesh nodes must be strictly increasing")
        object.__setattr__(self, "tau", tuple(float(v) for v in t))

    @staticmethod
    def uniform(n_nodes: int) -> "Mesh":
        return Mesh(tuple(np.linspace(-1.0, 1.0, n_nodes)))

    def __len__(self) -> int:
        return len(self.tau)

    @property
    def delta(self) -> np.ndarray:
        """Interval lengths dtau_j, shape (N-1,)."""
        return np.diff(np.asarray(self.tau))

    def with_midpoints(self, intervals, dedup_tol: float = 1e-12) -> "Mesh":
        """New mesh with the midpoint of each listed interval inserted."""
        t = np.asarray(self.tau)
        mids = [0.5 * (t[j] + t[j + 1]) for j in sorted(set(intervals))]
        merged = np.sort(np.concatenate([t, np.asarray(mids, float)]))
        keep = np.concatenate([[True], np.diff(merged) > dedup_tol])
        out = merged[keep]
        out[0], out[-1] = -1.0, 1.0
        return Mesh(tuple(out))

    def quad_weights(self) -> np.ndarray:
        """Trapezoid quadrature weights per node (without the sigma/2 factor)."""
        d = self.delta
        w = np.zeros(len(self.tau))
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
        return w


@dataclass
class NodeTrajectory:
    """Per-node states and controls plus the time span they cover."""

    states: np.ndarray       # (N, 3): x [m], y [m], gamma [rad]
    controls: np.ndarray     # (N,): lateral acceleration [m/s^2]
    t0: float = 0.0
    tf: float = 1.0

    def __post_init__(self):
        self.states = np.asarray(self.states, float)
        self.controls = np.asarray(self.controls, float)
        if self.states.ndim != 2 or self.states.shape[1] != 3:
            raise DimensionMismatch("states must be (N, 3)")
        if self.controls.shape != (self.states.shape[0],):
            raise DimensionMismatch("controls must be (N,)")
        if not self.tf > self.t0:
            raise ValueError("tf must exceed t0")

    @property
    def sigma(self) -> float:
        """Time span tf - t0 scaling the dynamics on [-1, 1]."""
        return self.tf - self.t0

    def copy(self) -> "NodeTrajectory":
        return NodeTrajectory(self.states.copy(), self.controls.copy(),
                              self.t0, self.tf)


@dataclass(frozen=True)
class ProblemDef:
    """Constant-speed planar flight between fixed poses among circular
    no-fly zones, minimizing control energy."""

    speed: float
    u_max: float
    start: OrientedPoint
    goal: OrientedPoint
    nfz_centers: tuple = ()
    nfz_radii: tuple = ()
    epsilon: float = 50.0
    eps_trc: tuple = (2000.0, 2000.0, 0.5)
    sigma_trc: float = 60.0
    tf_guess: float = 300.0

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError("speed must be positive")
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")
        if len(self.nfz_centers) != len(self.nfz_radii):
            raise ValueError("NFZ centers and radii must pair up")
        if any(not r > 0 for r in self.nfz_radii):
            raise ValueError("NFZ radii must be positive")
        for pose, name in ((self.start, "start"), (self.goal, "goal")):
            for (cx, cy), r in zip(self.nfz_centers, self.nfz_radii):
                if np.hypot(pose.x - cx, pose.y - cy) < r + self.epsilon:
                    raise ValueError(
                        "%s pose lies inside an expanded no-fly zone" % name)

    @property
    def kappa_max(self) -> float:
        """Curvature bound u_max / V^2 implied by the control bound."""
        return self.u_max / self.speed ** 2

    def dynamics(self, z, u):
        """Continuous dynamics f(z, u) = (V cos g, V sin g, u / V)."""
        g = z[..., 2]
        V = self.speed
        return np.stack([V * np.cos(g), V * np.sin(g),
                         np.asarray(u, float) / V], axis=-1)


def trapezoid_defects(traj: NodeTrajectory, mesh: Mesh,
                      dynamics) -> np.ndarray:
    """Trapezoid-rule defect vectors d_j per interval, shape (N-1, 3).

    d_j = (z_{j+1} - z_j) - (sigma/2)(dtau_j/2)[f(z_j,u_j) + f(z_{j+1},u_{j+1})];
    a dynamically feasible discrete trajectory has max |d_j| at the
    feasibility tolerance.
    """
    if len(mesh) != traj.states.shape[0]:
        raise DimensionMismatch("trajectory length does not match the mesh")
    f = dynamics
    fz = f(traj.states, traj.controls)
    d = mesh.delta[:, None]
    lhs = traj.states[1:] - traj.states[:-1]
    rhs = (traj.sigma / 2.0) * (d / 2.0) * (fz[:-1] + fz[1:])
    return lhs - rhs


def discrete_cost(traj: NodeTrajectory, mesh: Mesh) -> float:
    """Trapezoid quadrature of the control energy integral of u^2 dt."""
    if len(mesh) != traj.states.shape[0]:
        raise DimensionMismatch("trajectory length does not match the mesh")
    w = mesh.quad_weights()
    return float((traj.sigma / 2.0) * np.sum(w * traj.controls ** 2))


def interpolate_onto(traj: NodeTrajectory, old_mesh: Mesh,
                     new_mesh: Mesh) -> NodeTrajectory:
    """Piecewise-linear reinterpolation of states and controls in tau."""
    if len(old_mesh) != traj.states.shape[0]:
        raise DimensionMismatch("trajectory length does not match old mesh")
    t_old = np.asarray(old_mesh.tau)
    t_new = np.asarray(new_mesh.tau)
    states = np.stack([np.interp(t_new, t_old, traj.states[:, i])
                       for i in range(3)], axis=1)
    controls = np.interp(t_new, t_old, traj.controls)
    return NodeTrajectory(states, controls, traj.t0, traj.tf)


def straight_line_guess(problem: ProblemDef, mesh: Mesh) -> NodeTrajectory:
    """Linear interpolation between the boundary poses with zero control."""
    n = len(mesh)
    t = (np.asarray(mesh.tau) + 1.0) / 2.0
    states = np.zeros((n, 3))
    states[:, 0] = problem.start.x + t * (problem.goal.x - problem.start.x)
    states[:, 1] = problem.start.y + t * (problem.goal.y - problem.start.y)
    states[:, 2] = problem.start.heading + t * (
        problem.goal.heading - problem.start.heading)
    return NodeTrajectory(states, np.zeros(n), 0.0, problem.tf_guess)
