"""Sparse convex QP solver.

    minimize    0.5 x^T P x + q^T x
    subject to  A_eq x = b_eq,  G x <= g

Primal-dual interior point with Mehrotra predictor-corrector steps, Ruiz
equilibration, a regularized reduced KKT factorization, and an active-set
polish of the final iterate.  The contract is the KKT residual bound at the
reported point, not the algorithm: status OPTIMAL means scaled primal, dual,
and complementarity residuals are all below tol.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class QpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class QpInstance:
    """One convex QP; P must be symmetric positive semidefinite."""

    P: object
    q: np.ndarray
    A_eq: object = None
    b_eq: object = None
    G: object = None
    g: object = None

    def blocks(self):
        """Validated sparse blocks (P, q, A, b, G, h) with consistent dims."""
        q = np.asarray(self.q, float).ravel()
        n = q.size
        P = sp.csc_matrix(self.P)
        if P.shape != (n, n):
            raise ValueError("P must be n x n")
        sym_err = abs(P - P.T).max() if P.nnz else 0.0
        if sym_err > 1e-12 * max(1.0, abs(P).max()):
            raise ValueError("P must be symmetric")
        P = (P + P.T) * 0.5
        if self.A_eq is not None and np.size(self.b_eq):
            A = sp.csc_matrix(self.A_eq)
            b = np.asarray(self.b_eq, float).ravel()
        else:
            A = sp.csc_matrix((0, n))
            b = np.zeros(0)
        if self.G is not None and np.size(self.g):
            G = sp.csc_matrix(self.G)
            h = np.asarray(self.g, float).ravel()
        else:
            G = sp.csc_matrix((0, n))
            h = np.zeros(0)
        if A.shape != (b.size, n) or G.shape != (h.size, n):
            raise ValueError("constraint blocks have inconsistent shapes")
        return P, q, A, b, G, h


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray            # equality duals
    z: np.ndarray            # inequality duals (>= 0)
    status: QpStatus
    residuals: dict
    objective: float
    iterations: int


def _ruiz(P, A, G, iters=10):
    """Diagonal equilibration of the stacked KKT data."""
    n, me, mi = P.shape[0], A.shape[0], G.shape[0]
    dx = np.ones(n)
    de = np.ones(me)
    di = np.ones(mi)
    for _ in range(iters):
        M = sp.vstack([P, A, G]).tocsc()
        col = np.sqrt(np.maximum(abs(M).max(axis=0).toarray().ravel(), 1e-8))
        dx /= col
        P = sp.diags(1 / col) @ P @ sp.diags(1 / col)
        A = A @ sp.diags(1 / col)
        G = G @ sp.diags(1 / col)
        if me:
            rowe = np.sqrt(np.maximum(abs(A).max(axis=1).toarray().ravel(),
                                      1e-8))
            de /= rowe
            A = sp.diags(1 / rowe) @ A
        if mi:
            rowi = np.sqrt(np.maximum(abs(G).max(axis=1).toarray().ravel(),
                                      1e-8))
            di /= rowi
            G = sp.diags(1 / rowi) @ G
    return P.tocsc(), A.tocsc(), G.tocsc(), dx, de, di


def _kkt_residuals(P, q, A, b, G, h, x, y, z):
    """Relative KKT residuals of the original problem at (x, y, z)."""
    rd = P @ x + q + A.T @ y + G.T @ z
    rp = A @ x - b if b.size else np.zeros(0)
    ri = np.maximum(G @ x - h, 0.0) if h.size else np.zeros(0)
    comp = np.abs(z * (G @ x - h)) if h.size else np.zeros(0)
    obj = 0.5 * float(x @ (P @ x)) + float(q @ x)
    den_d = 1.0 + max(np.abs(q).max(initial=0.0),
                      np.abs(P @ x).max(initial=0.0))
    den_p = 1.0 + max(np.abs(b).max(initial=0.0), np.abs(h).max(initial=0.0))
    return {
        "primal": float(max(rp.size and np.abs(rp).max() or 0.0,
                            ri.size and ri.max() or 0.0) / den_p),
        "dual": float(np.abs(rd).max(initial=0.0) / den_d),
        "comp": float(comp.max(initial=0.0) / (1.0 + abs(obj))),
    }, obj


def _max_step(v, dv, frac=1.0):
    """Largest step in [0, 1] keeping v + a*dv >= (1-frac)*v elementwise."""
    neg = dv < 0
    if not neg.any():
        return 1.0
    return min(1.0, frac * float(np.min(-v[neg] / dv[neg])))


def _refined_solve(K_fact, rhs, K_true=None, rounds=3):
    """splu solve with iterative refinement against the unregularized matrix."""
    if K_true is None:
        K_true = K_fact
    lu = splu(K_fact)
    sol = lu.solve(rhs)
    for _ in range(rounds):
        sol += lu.solve(rhs - K_true @ sol)
    return sol


def _polish(P, q, A, b, G, h, x, z):
    """Resolve with the apparent active set pinned as equalities.

    Returns (x, y, z) or None when the active-set guess does not produce a
    consistent KKT point after a few add/drop corrections.
    """
    n, me, mi = P.shape[0], b.size, h.size
    slack = h - G @ x
    act = np.flatnonzero(z >= slack)
    feas_tol = 1e-9 * (1.0 + np.abs(h).max(initial=0.0))
    for _ in range(6):
        ma = act.size
        E = sp.vstack([A, G[act]]).tocsc() if (me or ma) else None
        m = me + ma
        if m:
            K = sp.bmat([[P + 1e-12 * sp.eye(n), E.T],
                         [E, -1e-12 * sp.eye(m)]], format="csc")
            K_true = sp.bmat([[P, E.T], [E, sp.csc_matrix((m, m))]],
                             format="csc")
            rhs = np.concatenate([-q, b, h[act]])
        else:
            K = (P + 1e-12 * sp.eye(n)).tocsc()
            K_true = P
            rhs = -q
        try:
            sol = _refined_solve(K, rhs, K_true)
        except RuntimeError:
            return None
        xp, yp, zap = sol[:n], sol[n:n + me], sol[n + me:]
        viol = G @ xp - h if mi else np.zeros(0)
        drop = act[zap < -feas_tol]
        inact = np.setdiff1d(np.arange(mi), act, assume_unique=False)
        add = inact[viol[inact] > feas_tol] if inact.size else inact
        if drop.size == 0 and add.size == 0:
            zp = np.zeros(mi)
            zp[act] = np.maximum(zap, 0.0)
            return xp, yp, zp
        act = np.setdiff1d(np.union1d(act, add), drop)
    return None


def solve_qp(instance: QpInstance, tol: float = 1e-6, max_iter: int = 200,
             x0=None) -> QpSolution:
    """Solve one QP; see the module docstring for the convention."""
    P0, q0, A0, b0, G0, h0 = instance.blocks()
    n, me, mi = P0.shape[0], A0.shape[0], G0.shape[0]

    # quick certificate for inconsistent equality constraints
    if me:
        lsq = np.linalg.lstsq(A0.toarray(), b0, rcond=None)
        if np.abs(A0 @ lsq[0] - b0).max() > 1e-8 * (1 + np.abs(b0).max()):
            res, obj = _kkt_residuals(P0, q0, A0, b0, G0, h0,
                                      np.zeros(n), np.zeros(me), np.zeros(mi))
            return QpSolution(np.zeros(n), np.zeros(me), np.zeros(mi),
                              QpStatus.INFEASIBLE, res, obj, 0)

    P, A, G, dx, de, di = _ruiz(P0.copy(), A0.copy(), G0.copy())
    q = dx * q0
    b = de * b0 if me else b0
    h = di * h0 if mi else h0
    # cost scaling keeps penalty-sized q entries from swamping the duals
    cobj = 1.0 / max(1.0, np.abs(q).max(initial=0.0),
                     float(abs(P).max()) if P.nnz else 0.0)
    P = (P * cobj).tocsc()
    q = q * cobj
    reg = 1e-9

    if mi == 0:
        m = me
        if m:
            K = sp.bmat([[P + reg * sp.eye(n), A.T],
                         [A, -reg * sp.eye(m)]], format="csc")
            K_true = sp.bmat([[P, A.T], [A, sp.csc_matrix((m, m))]],
                             format="csc")
            rhs = np.concatenate([-q, b])
        else:
            K = (P + reg * sp.eye(n)).tocsc()
            K_true = P
            rhs = -q
        sol = _refined_solve(K, rhs, K_true)
        x, y, z = dx * sol[:n], de * sol[n:] / cobj, np.zeros(0)
        res, obj = _kkt_residuals(P0, q0, A0, b0, G0, h0, x, y, z)
        ok = max(res.values()) <= tol
        return QpSolution(x, y, z,
                          QpStatus.OPTIMAL if ok else QpStatus.MAX_ITER,
                          res, obj, 1)

    # Mehrotra-style strictly interior start
    y = np.zeros(me)
    if x0 is not None:
        x = np.asarray(x0, float) / dx
    else:
        H0 = (P + G.T @ G + reg * sp.eye(n)).tocsc()
        if me:
            K0 = sp.bmat([[H0, A.T], [A, -reg * sp.eye(me)]], format="csc")
            sol = splu(K0).solve(np.concatenate([-q + G.T @ h, b]))
            x, y = sol[:n], sol[n:]
        else:
            x = splu(H0).solve(-q + G.T @ h)
    s0 = h - G @ x
    z0 = -s0
    dp = max(0.0, -1.5 * float(s0.min(initial=0.0)))
    dd = max(0.0, -1.5 * float(z0.min(initial=0.0)))
    s_h = s0 + dp
    z_h = z0 + dd
    gap = float(s_h @ z_h)
    s = s_h + (0.5 * gap / max(float(z_h.sum()), 1e-10) if gap > 0 else 1.0)
    z = z_h + (0.5 * gap / max(float(s_h.sum()), 1e-10) if gap > 0 else 1.0)
    s = np.maximum(s, 1e-8)
    z = np.maximum(z, 1e-8)

    status = QpStatus.MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        rd = P @ x + q + (A.T @ y if me else 0.0) + G.T @ z
        rp = A @ x - b if me else np.zeros(0)
        rg = G @ x + s - h
        mu = float(s @ z) / mi

        x_u, y_u, z_u = dx * x, de * y / cobj, di * z / cobj
        res, obj = _kkt_residuals(P0, q0, A0, b0, G0, h0, x_u, y_u, z_u)
        if max(res.values()) <= 0.1 * tol:
            status = QpStatus.OPTIMAL
            break
        if (np.abs(y).max(initial=0.0) > 1e13 or z.max(initial=0.0) > 1e13) \
                and res["primal"] > 100 * tol:
            status = QpStatus.INFEASIBLE
            break

        W = np.minimum(z / s, 1e16)
        H_true = (P + G.T @ sp.diags(W) @ G).tocsc()
        if me:
            K = sp.bmat([[H_true + reg * sp.eye(n), A.T],
                         [A, -reg * sp.eye(me)]], format="csc")
            K_true = sp.bmat([[H_true, A.T],
                              [A, sp.csc_matrix((me, me))]], format="csc")
        else:
            K = (H_true + reg * sp.eye(n)).tocsc()
            K_true = H_true
        try:
            lu = splu(K)
        except RuntimeError:
            reg *= 100
            continue

        def newton(rc):
            rhs1 = -rd + G.T @ ((rc - z * rg) / s)
            rhs = np.concatenate([rhs1, -rp]) if me else rhs1
            step = lu.solve(rhs)
            for _ in range(2):
                step += lu.solve(rhs - K_true @ step)
            dxv, dyv = step[:n], step[n:]
            dsv = -rg - G @ dxv
            dzv = (-rc - z * dsv) / s
            return dxv, dyv, dsv, dzv

        # affine predictor (single step length; the quadratic term couples
        # primal and dual blocks, so split steps can diverge)
        dx_a, dy_a, ds_a, dz_a = newton(s * z)
        a_aff = min(_max_step(s, ds_a), _max_step(z, dz_a))
        mu_aff = float((s + a_aff * ds_a) @ (z + a_aff * dz_a)) / mi
        sigma = (max(mu_aff, 0.0) / mu) ** 3 if mu > 0 else 0.0

        # corrector
        dx_c, dy_c, ds_c, dz_c = newton(s * z + ds_a * dz_a - sigma * mu)
        a = min(_max_step(s, ds_c, 0.995), _max_step(z, dz_c, 0.995))
        x = x + a * dx_c
        s = s + a * ds_c
        y = y + a * dy_c
        z = z + a * dz_c

    x_u, y_u, z_u = dx * x, de * y / cobj, di * z / cobj
    res, obj = _kkt_residuals(P0, q0, A0, b0, G0, h0, x_u, y_u, z_u)

    if status != QpStatus.INFEASIBLE:
        polished = _polish(P0, q0, A0, b0, G0, h0, x_u, z_u)
        if polished is not None:
            res_p, obj_p = _kkt_residuals(P0, q0, A0, b0, G0, h0, *polished)
            if max(res_p.values()) <= max(max(res.values()), tol):
                x_u, y_u, z_u = polished
                res, obj = res_p, obj_p
        if max(res.values()) <= tol:
            status = QpStatus.OPTIMAL
        elif status == QpStatus.OPTIMAL:
            status = QpStatus.MAX_ITER
    return QpSolution(x_u, y_u, z_u, status, res, obj, it)
