"""Brute-force verification machinery, independent of the envelope formulas.

Three tools: a rejection/shooting sampler that draws admissible fixed-length
curves between two oriented points, a cover auditor that checks sampled
curves against a rectangular patch union, and a dense fixed-step integrator
that re-propagates a converged trajectory to measure true obstacle
clearances between mesh nodes.

Only closed-form arc propagation from the geometry module is used here, so
the oracle cannot share a bug with the envelope bound construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import OrientedPoint, propagate, propagate_arrays, wrap_pi
from .dubins import dubins_candidate_segments, dubins_shortest


class SamplingExhausted(Exception):
    """Acceptance rate collapsed; the query is near-degenerate."""


@dataclass(frozen=True)
class SampledCurve:
    """Piecewise-constant-curvature curve accepted by the shooting sampler."""

    curvatures: tuple
    lengths: tuple
    position_error: float
    heading_error: float

    @property
    def total_length(self) -> float:
        return float(sum(self.lengths))

    def sample_points(self, start: OrientedPoint, spacing: float) -> np.ndarray:
        """Polyline along the curve at the given arclength spacing."""
        s_grid = np.arange(0.0, self.total_length + 0.5 * spacing, spacing)
        s_grid = np.minimum(s_grid, self.total_length)
        return _points_at(start, np.array(self.curvatures),
                          np.array(self.lengths), s_grid)


def _points_at(start, kappas, lengths, s_grid):
    """Positions along a piecewise-arc curve at prescribed arclengths."""
    ends = np.cumsum(lengths)
    begins = ends - lengths
    x = np.full(s_grid.shape, start.x)
    y = np.full(s_grid.shape, start.y)
    g = np.full(s_grid.shape, start.heading)
    px, py, pg = start.x, start.y, start.heading
    for k in range(len(lengths)):
        inside = s_grid >= begins[k] - 1e-15
        ds = np.clip(s_grid - begins[k], 0.0, lengths[k])
        nx, ny, ng = propagate_arrays(px, py, pg, kappas[k], ds[inside])
        x[inside], y[inside], g[inside] = nx, ny, ng
        px, py, pg = propagate_arrays(px, py, pg, kappas[k], lengths[k])
    return np.stack([x, y], axis=1)


def _propagate_batch(start, kappas, lengths):
    """Endpoints of a batch of 5-piece curves; kappas/lengths are (B, P)."""
    x = np.full(kappas.shape[0], start.x)
    y = np.full(kappas.shape[0], start.y)
    g = np.full(kappas.shape[0], start.heading)
    for k in range(kappas.shape[1]):
        x, y, g = propagate_arrays(x, y, g, kappas[:, k], lengths[:, k])
    return x, y, g


def _assemble(draw_k, draw_l, u4, u5, k5, ell):
    """Piece lengths with the first pieces rescaled so the total is ell."""
    tail = u4 + u5
    head = np.maximum(ell - tail, 0.0)
    base = draw_l[:, :-2].sum(axis=1)
    scale = np.where(base > 0, head / np.where(base > 0, base, 1.0), 0.0)
    lengths = np.concatenate(
        [draw_l[:, :-2] * scale[:, None], u4[:, None], u5[:, None]], axis=1)
    kappas = draw_k.copy()
    kappas[:, -1] = k5
    return kappas, lengths


def sample_feasible_curves(query, n_pieces=5, n_samples=200,
                           endpoint_tol=None, seed=0):
    """Draw admissible curves of the prescribed length between the query
    endpoints by shooting: random piece curvatures and lengths, with the
    last two piece lengths and the final curvature Newton-corrected to hit
    the end pose.  Returns up to n_samples accepted curves.

    endpoint_tol is the accepted position error (default 1e-6 * length);
    heading error is accepted below 1e-6 rad.
    """
    ell = query.length
    km = query.kappa_max
    start, end = query.start, query.end
    if endpoint_tol is None:
        endpoint_tol = 1e-6 * ell
    rng = np.random.default_rng(seed)

    seeds_k, seeds_l = _word_seeds(query, n_pieces)
    accepted = []
    attempts = 0
    batch = 512
    max_attempts = max(int(2e6), 40 * n_samples)
    while len(accepted) < n_samples and attempts < max_attempts:
        B = batch
        draw_k = rng.uniform(-km, km, size=(B, n_pieces))
        raw = rng.exponential(1.0, size=(B, n_pieces))
        draw_l = ell * raw / raw.sum(axis=1, keepdims=True)
        n_exact = min(len(seeds_k), 4)
        if n_exact:
            draw_k[:n_exact] = seeds_k[:n_exact]
            draw_l[:n_exact] = seeds_l[:n_exact]
        n_seed = min(B // 4, 64) if len(seeds_k) else 0
        if n_seed:
            pick = rng.integers(0, len(seeds_k), size=n_seed)
            jit_k = rng.normal(0.0, 0.05 * km, size=(n_seed, n_pieces))
            jit_l = rng.normal(1.0, 0.05, size=(n_seed, n_pieces))
            sl = slice(n_exact, n_exact + n_seed)
            draw_k[sl] = np.clip(seeds_k[pick] + jit_k, -km, km)
            draw_l[sl] = np.abs(seeds_l[pick] * jit_l) + 1e-9 * ell
            draw_l[sl] *= ell / draw_l[sl].sum(axis=1, keepdims=True)
        attempts += B

        u4 = draw_l[:, -2].copy()
        u5 = draw_l[:, -1].copy()
        k5 = draw_k[:, -1].copy()
        alive = np.ones(B, bool)
        steps = (1e-7 * ell, 1e-7 * ell, 1e-7 * km)
        for _ in range(30):
            kap, lng = _assemble(draw_k, draw_l, u4, u5, k5, ell)
            x, y, g = _propagate_batch(start, kap, lng)
            rx = x - end.x
            ry = y - end.y
            rg = wrap_pi(g - end.heading)
            done = (np.hypot(rx, ry) <= 0.1 * endpoint_tol) & (np.abs(rg) <= 1e-7)
            alive &= ~done
            if not alive.any():
                break
            res = np.stack([rx, ry, ell * rg], axis=1)
            J = np.empty((B, 3, 3))
            for j, h in enumerate(steps):
                du = [0.0, 0.0, 0.0]
                du[j] = h
                kap2, lng2 = _assemble(draw_k, draw_l, u4 + du[0], u5 + du[1],
                                       k5 + du[2], ell)
                x2, y2, g2 = _propagate_batch(start, kap2, lng2)
                J[:, 0, j] = (x2 - x) / h
                J[:, 1, j] = (y2 - y) / h
                J[:, 2, j] = ell * wrap_pi(g2 - g) / h
            ok = alive & (np.abs(np.linalg.det(J)) > 1e-10 * ell ** 2)
            if ok.any():
                step = np.linalg.solve(J[ok], res[ok][:, :, None])[:, :, 0]
                nrm = np.abs(step[:, 0]) + np.abs(step[:, 1])
                damp = np.minimum(1.0, 0.4 * ell / np.maximum(nrm, 1e-300))
                # reflect at zero instead of clamping, and cap the tail at
                # the total length, so rows cannot jam on the boundary
                u4n = np.abs(u4[ok] - damp * step[:, 0])
                u5n = np.abs(u5[ok] - damp * step[:, 1])
                tail = u4n + u5n
                shrink = np.minimum(1.0, ell / np.maximum(tail, 1e-300))
                u4[ok] = u4n * shrink
                u5[ok] = u5n * shrink
                k5[ok] = np.clip(k5[ok] - damp * step[:, 2], -km, km)
            alive = ok

        kap, lng = _assemble(draw_k, draw_l, u4, u5, k5, ell)
        x, y, g = _propagate_batch(start, kap, lng)
        perr = np.hypot(x - end.x, y - end.y)
        herr = np.abs(wrap_pi(g - end.heading))
        good = ((perr <= endpoint_tol) & (herr <= 1e-6)
                & (np.abs(k5) <= km * (1 + 1e-12))
                & (u4 >= 0) & (u5 >= 0)
                & (np.abs(lng.sum(axis=1) - ell) <= 1e-12 * max(ell, 1.0)))
        for i in np.nonzero(good)[0]:
            accepted.append(SampledCurve(
                curvatures=tuple(np.clip(kap[i], -km, km)),
                lengths=tuple(lng[i]),
                position_error=float(perr[i]),
                heading_error=float(herr[i])))
            if len(accepted) >= n_samples:
                break
        if len(accepted) < n_samples:
            C = 256
            attempts += C
            accepted.extend(
                _closure_batch(query, rng, C, n_pieces, endpoint_tol))
        if attempts >= max_attempts and not accepted:
            raise SamplingExhausted(
                "acceptance rate below 1e-6 after %d attempts" % attempts)
    if not accepted:
        raise SamplingExhausted("no admissible curve found in %d attempts"
                                % attempts)
    return accepted[:n_samples]


def _word_seeds(query, n_pieces):
    """Shortest-word control sequences padded to n_pieces, used to seed the
    sampler near the family boundary where rejection alone undersamples."""
    try:
        word = dubins_shortest(query.start, query.end, query.kappa_max)
    except Exception:
        return np.zeros((0, n_pieces)), np.zeros((0, n_pieces))
    kap = [s.curvature for s in word.segments]
    lng = [s.length for s in word.segments]
    while len(kap) < n_pieces:
        kap.append(0.0)
        lng.append(1e-6 * query.length)
    kap = np.array(kap[:n_pieces])
    lng = np.array(lng[:n_pieces])
    lng *= query.length / lng.sum()
    variants = [(kap, lng)]
    # spread residual length over the padded pieces as gentle arcs
    extra = query.length - word.length
    if extra > 1e-9 * query.length:
        for sgn in (1.0, -1.0):
            k2 = kap.copy()
            l2 = lng.copy()
            k2[-1] = sgn * query.kappa_max
            l2[-1] += 0.5 * extra
            l2 *= query.length / l2.sum()
            variants.append((k2, l2))
    ks = np.stack([v[0] for v in variants])
    ls = np.stack([v[1] for v in variants])
    return ks, ls


def _closure_batch(query, rng, B, n_pieces, endpoint_tol):
    """Random two-piece prefixes closed by a candidate-word connection.

    For prefix scale t in [0, 1] the length surplus of closing with word w
    is g_w(t) = t * ell + len_w(pose(t)) - ell.  Each candidate word's
    length is continuous on its feasibility domain, so scanning t for sign
    changes of g_w per word and bisecting inside a bracket yields curves of
    exactly the query length.  (The pointwise shortest-word length is
    discontinuous where a word family vanishes, so bisecting the minimum
    instead can converge onto a jump with no root.)
    """
    ell = query.length
    km = query.kappa_max
    start, end = query.start, query.end
    if n_pieces < 5:
        return []
    k1 = rng.uniform(-km, km, size=B)
    k2 = rng.uniform(-km, km, size=B)
    a = rng.uniform(0.05, 0.95, size=B)
    s1 = a * ell
    s2 = ell - s1
    end_row = np.array([end.x, end.y, end.heading])
    word_signs = None

    def eval_words(t, rows):
        nonlocal word_signs
        x, y, g = propagate_arrays(start.x, start.y, start.heading,
                                   k1[rows], t * s1[rows])
        x, y, g = propagate_arrays(x, y, g, k2[rows], t * s2[rows])
        poses = np.stack([x, y, g], axis=1)
        word_signs, totals, lengths = dubins_candidate_segments(
            poses, np.broadcast_to(end_row, (len(rows), 3)), km)
        return t * ell + totals - ell, lengths

    rows_all = np.arange(B)
    n_grid = 48
    tgrid = np.linspace(0.0, 1.0, n_grid + 1)
    prev, _ = eval_words(np.zeros(B), rows_all)
    lo = np.zeros((8, B))
    hi = np.zeros((8, B))
    flo = np.zeros((8, B))
    found = np.zeros((8, B), bool)
    for k in range(1, n_grid + 1):
        cur, _ = eval_words(np.full(B, tgrid[k]), rows_all)
        new = (~found & np.isfinite(prev) & np.isfinite(cur)
               & (np.sign(prev) != np.sign(cur)))
        lo[new] = tgrid[k - 1]
        hi[new] = tgrid[k]
        flo[new] = np.sign(prev[new])
        found |= new
        prev = cur
    wi, ri = np.nonzero(found)
    if not len(wi):
        return []
    order = rng.permutation(len(wi))
    wi, ri = wi[order], ri[order]
    lo = lo[found][order]
    hi = hi[found][order]
    f_lo = flo[found][order]
    cols = np.arange(len(wi))
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        gm, _ = eval_words(mid, ri)
        g_mid = gm[wi, cols]
        # an infeasible midpoint counts as the far side of the bracket
        sign_mid = np.where(np.isfinite(g_mid), np.sign(g_mid), -f_lo)
        same = sign_mid == f_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    t = 0.5 * (lo + hi)

    gfin, seg_len = eval_words(t, ri)
    resid = gfin[wi, cols]
    usable = np.isfinite(resid) & (np.abs(resid) <= 1e-9 * ell)
    out = []
    for j in np.nonzero(usable)[0]:
        i = ri[j]
        w = wi[j]
        kap = [float(k1[i]), float(k2[i])] + [s * km for s in word_signs[w]]
        lng = [float(t[j] * s1[i]), float(t[j] * s2[i])] + [
            float(seg_len[w, q, j]) for q in range(3)]
        while len(kap) < n_pieces:
            kap.append(0.0)
            lng.append(0.0)
        big = int(np.argmax(lng))
        lng[big] -= sum(lng) - ell   # absorb the bisection residual
        if lng[big] < 0:
            continue
        pose = start
        for kk, ss in zip(kap, lng):
            pose = propagate(pose, kk, ss)
        perr = float(np.hypot(pose.x - end.x, pose.y - end.y))
        herr = float(abs(wrap_pi(pose.heading - end.heading)))
        if perr <= endpoint_tol and herr <= 1e-6:
            out.append(SampledCurve(curvatures=tuple(kap),
                                    lengths=tuple(lng),
                                    position_error=perr,
                                    heading_error=herr))
        if len(out) >= B:
            break
    return out


def audit_patch_cover(query, patches, curves, inflate=0.0):
    """Check every discretized curve point against the patch union.

    Points are spaced length/1000 apart along each curve.  Returns a report
    dict with violation records (curve index, arclength, point, distance to
    the nearest patch) and the worst such distance.
    """
    ell = query.length
    spacing = ell / 1000.0
    stacks, owner, arcs = [], [], []
    for ci, curve in enumerate(curves):
        pts = curve.sample_points(query.start, spacing)
        stacks.append(pts)
        owner.append(np.full(len(pts), ci))
        arcs.append(np.minimum(np.arange(len(pts)) * spacing,
                               curve.total_length))
    pts = np.concatenate(stacks) if stacks else np.zeros((0, 2))
    owner = np.concatenate(owner) if owner else np.zeros(0, int)
    arcs = np.concatenate(arcs) if arcs else np.zeros(0)
    inside = np.zeros(len(pts), bool)
    remain = np.arange(len(pts))
    for p in patches:
        hit = p.contains_world(pts[remain], inflate=inflate)
        inside[remain[hit]] = True
        remain = remain[~hit]
        if not len(remain):
            break
    viol = []
    worst = 0.0
    for bi in np.nonzero(~inside)[0]:
        d = min(_rect_distance(p, pts[bi]) for p in patches)
        worst = max(worst, d)
        viol.append({"curve": int(owner[bi]), "arclength": float(arcs[bi]),
                     "point": (float(pts[bi, 0]), float(pts[bi, 1])),
                     "distance": float(d)})
    return {"n_curves": len(curves), "n_points": int(len(pts)),
            "violations": viol, "worst_distance": worst,
            "ok": not viol}


def _rect_distance(patch, point):
    """Euclidean distance from a world point to one rectangle."""
    local = patch.to_world.inverse().apply_point(np.asarray(point, float))
    lx, ly = float(local[0]), float(local[1])
    dx = max(patch.x_min - lx, 0.0, lx - patch.x_max)
    dy = max(patch.y_min - ly, 0.0, ly - patch.y_max)
    return float(np.hypot(dx, dy))


def propagate_dense(traj, mesh, problem, steps_per_interval=1000):
    """Re-integrate the continuous dynamics through a converged trajectory.

    Fourth-order fixed-step integration of planar constant-speed flight
    (x' = V cos gamma, y' = V sin gamma, gamma' = u / V) with the control
    interpolated linearly in normalized time between mesh nodes.  Returns a
    dict with the dense states and the signed clearance profile for every
    obstacle disc in the problem.
    """
    tau = np.asarray(mesh.tau, float)
    states = np.asarray(traj.states, float)
    controls = np.asarray(traj.controls, float)
    sigma = float(traj.sigma)
    V = problem.speed

    dense_states = [states[0]]
    dense_tau = [tau[0]]
    for j in range(len(tau) - 1):
        h = (tau[j + 1] - tau[j]) / steps_per_interval
        z = np.array(dense_states[-1], float)
        u0, u1 = controls[j], controls[j + 1]
        t0 = tau[j]

        def uat(t):
            a = (t - tau[j]) / (tau[j + 1] - tau[j])
            return (1.0 - a) * u0 + a * u1

        def f(z, t):
            return 0.5 * sigma * np.array([
                V * np.cos(z[2]), V * np.sin(z[2]), uat(t) / V])

        for k in range(steps_per_interval):
            t = t0 + k * h
            k1 = f(z, t)
            k2 = f(z + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(z + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(z + h * k3, t + h)
            z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            dense_states.append(z.copy())
            dense_tau.append(t + h)
    dense_states = np.array(dense_states)
    dense_tau = np.array(dense_tau)

    centers = np.asarray(problem.nfz_centers, float).reshape(-1, 2)
    radii = np.asarray(problem.nfz_radii, float).reshape(-1)
    if len(radii):
        d = np.hypot(dense_states[None, :, 0] - centers[:, 0, None],
                     dense_states[None, :, 1] - centers[:, 1, None])
        clearance = d - radii[:, None]
        min_clear = clearance.min(axis=1)
    else:
        clearance = np.zeros((0, len(dense_tau)))
        min_clear = np.zeros(0)
    return {"states": dense_states, "tau": dense_tau,
            "clearance": clearance, "min_clearance": min_clear}
