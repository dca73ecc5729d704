"""Vectorised numpy implementation of the path kernel.

Used when the compiled extension is unavailable (or ``SKB_BACKEND=python``).
Consumes random numbers in exactly the same order as the compiled kernel, so
both produce the same paths up to last-ulp differences in libm.

Step scheme, per path:

* walk-on-spheres jump of radius ``dist`` (distance to the nearest active
  surface) while ``dist > wos_mult * sqrt(h)`` and no fixed horizon is set;
  the jump time is an exact exit-time draw;
* otherwise an Euler step of size ``h``. Crossings of rings, of the universe
  sphere and of the mixing hyperplane are found on the segment (quadratic
  roots) or, with both ends on one side, by the Brownian-bridge crossing
  probability ``exp(-2 a b / dt)``; events are handled in segment order.
"""
import numpy as np

from .. import rng
from .config import CAP, EXIT, NORMAL, RULE
from .exit_time import sample_exit_time


def _contained(cfg, thr, refn, refzero, z, j):
    r = cfg.radii[j]
    c = np.where(refzero, 0.0, np.einsum("ij,ij->i", refn, z) / r)
    beta = thr[j]
    if cfg.orientation == NORMAL:
        return (beta <= -1.0) | (c > beta)
    return (beta >= 1.0) | (c < beta)


def _barrier_distance(cfg, radii, thr, refn, refzero, x, rx):
    """Distance from each row of ``x`` to the stopping part of every ring, ``(n, nr)``."""
    a = rx[:, None]
    r = radii[None, :]
    ok = (rx > 0) & ~refzero
    safe = np.where(rx > 0, rx, 1.0)
    par = np.einsum("ij,ij->i", refn, x)
    # sine from the perpendicular part: acos is ill-conditioned near +-1
    perp = np.linalg.norm(x - par[:, None] * refn, axis=1)
    cphi = np.clip(np.where(ok, par / safe, 0.0), -1.0, 1.0)[:, None]
    sphi = np.clip(np.where(ok, perp / safe, 1.0), 0.0, 1.0)[:, None]
    beta = thr[None, :]
    if cfg.orientation == NORMAL:
        full, empty, inside = beta <= -1.0, beta >= 1.0, cphi > beta
    else:
        full, empty, inside = beta >= 1.0, beta <= -1.0, cphi < beta
    # with no reference direction every point has cosine 0
    rz = refzero[:, None]
    full = full | (rz & inside)
    empty = empty | (rz & ~inside)
    bc = np.clip(beta, -1.0, 1.0)
    cdiff = cphi * bc + sphi * np.sqrt(1.0 - bc * bc)
    edge = np.sqrt(np.maximum(a * a + r * r - 2.0 * a * r * cdiff, 0.0))
    radial = np.abs(a - r)
    out = np.where(full | inside, radial, edge)
    return np.where(empty, np.inf, out)


def run_paths(cfg, starts, refs, path_ids, record=False):
    starts = np.ascontiguousarray(starts, dtype=np.float64)
    n, d = starts.shape
    radii, thr, pn = cfg.arrays()
    nr = radii.size
    K = rng.block_size(d)
    m2 = 2 * ((d + 1) // 2)
    keys = rng.path_keys(cfg.seed, rng.STEPS, path_ids)
    refs = np.asarray(refs, dtype=np.float64)
    rn = np.linalg.norm(refs, axis=1)
    refzero = rn == 0
    refn = np.where(refzero[:, None], 0.0, refs / np.where(refzero, 1.0, rn)[:, None])

    R = cfg.universe
    sqh = np.sqrt(cfg.h)
    eps = cfg.wos_mult * sqh
    finite_h = np.isfinite(cfg.horizon)

    x = starts.copy()
    t = np.zeros(n)
    step = np.zeros(n, dtype=np.int64)
    anc, pending = cfg.anchor_array()
    armed = np.full(n, not pending)
    delayed = np.full(n, pending)
    anchor = np.tile(anc, (n, 1))
    phit = np.zeros(n, dtype=bool)
    ptime = np.full(n, np.nan)
    stop = np.full((n, d), np.nan)
    tau = np.full(n, np.nan)
    cause = np.full(n, -1, dtype=np.int8)
    active = np.ones(n, dtype=bool)
    polys = [[(0.0, starts[i].copy())] for i in range(n)] if record else None

    def finish(rows, pts, times, why):
        stop[rows] = pts
        tau[rows] = times
        cause[rows] = why
        active[rows] = False
        if record:
            for i, p, tt in zip(rows, pts, times):
                if not np.array_equal(polys[i][-1][1], p) or polys[i][-1][0] != tt:
                    polys[i].append((float(tt), p.copy()))

    if finite_h and cfg.horizon <= 0:
        finish(np.arange(n), x.copy(), np.zeros(n), RULE)

    while active.any():
        idx = np.nonzero(active)[0]
        capped = step[idx] >= cfg.max_steps
        if capped.any():
            rows = idx[capped]
            finish(rows, x[rows].copy(), t[rows].copy(), CAP)
            idx = idx[~capped]
            if idx.size == 0:
                break
        # re-arm once the path has left the ball around the delayed hit
        un = idx[~armed[idx]]
        if un.size:
            far = np.linalg.norm(x[un] - anchor[un], axis=1) >= cfg.delay_radius - eps
            armed[un[far]] = True

        xi = x[idx]
        rx = np.linalg.norm(xi, axis=1)
        dist = R - rx
        arm = armed[idx]
        if nr:
            dr = np.min(_barrier_distance(cfg, radii, thr, refn[idx], refzero[idx], xi, rx), axis=1)
        else:
            dr = np.full(idx.size, np.inf)
        da = cfg.delay_radius - np.linalg.norm(xi - anchor[idx], axis=1)
        dist = np.minimum(dist, np.where(arm, dr, da))
        if cfg.plane_active:
            dp = np.abs(xi @ pn - cfg.plane_offset)
            dist = np.minimum(dist, np.where(phit[idx], np.inf, dp))

        base = step[idx] * K
        wos = (dist > eps) if not finite_h else np.zeros(idx.size, dtype=bool)

        if wos.any():
            rows = idx[wos]
            k = keys[rows]
            b = base[wos]
            g = rng.normals(k, b, d)
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            rho = dist[wos]
            x[rows] = x[rows] + rho[:, None] * g
            t[rows] = t[rows] + rho * rho * sample_exit_time(rng.uniforms(k, b + m2), d)
            step[rows] += 1
            if record:
                for i in rows:
                    polys[i].append((float(t[i]), x[i].copy()))

        eu = ~wos
        if not eu.any():
            continue
        rows = idx[eu]
        ne = rows.size
        k = keys[rows]
        b = base[eu]
        x0 = x[rows]
        t0 = t[rows]
        if finite_h:
            last = t0 + cfg.h >= cfg.horizon
            dt = np.where(last, cfg.horizon - t0, cfg.h)
        else:
            last = np.zeros(ne, dtype=bool)
            dt = np.full(ne, cfg.h)
        dt = np.maximum(dt, 0.0)
        xn = x0 + np.sqrt(dt)[:, None] * rng.normals(k, b, d)
        delta = xn - x0
        A = np.einsum("ij,ij->i", delta, delta)
        B = np.einsum("ij,ij->i", x0, delta)
        r0 = rx[eu]
        r1 = np.linalg.norm(xn, axis=1)
        u_in = rng.uniforms(k, b + m2 + 1)
        u_out = rng.uniforms(k, b + m2 + 2)
        u_pl = rng.uniforms(k, b + m2 + 3)
        u_coin = rng.uniforms(k, b + m2 + 4)

        ncol = 3 + 2 * nr
        S = np.full((ne, ncol), np.inf)
        safeA = np.where(A > 0, A, 1.0)
        # universe sphere
        out = r1 >= R
        C = r0 * r0 - R * R
        sq = np.sqrt(np.maximum(B * B - A * C, 0.0))
        s_geo = np.clip((-B + sq) / safeA, 0.0, 1.0)
        a_ = R - r0
        b_ = R - r1
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            p_br = np.exp(-2.0 * a_ * b_ / dt)
            s_br = a_ / (a_ + b_)
        S[:, 0] = np.where(out, s_geo, np.where(u_out < p_br, s_br, np.inf))
        # mixing hyperplane
        if cfg.plane_active:
            g0 = x0 @ pn - cfg.plane_offset
            g1 = xn @ pn - cfg.plane_offset
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                cross = g0 * g1 <= 0
                s_c = np.where(g0 != g1, g0 / (g0 - g1), 0.0)
                p_p = np.exp(-2.0 * np.abs(g0) * np.abs(g1) / dt)
                s_b = np.abs(g0) / (np.abs(g0) + np.abs(g1))
            sp = np.where(cross, s_c, np.where(u_pl < p_p, s_b, np.inf))
            S[:, 1] = np.where(phit[rows], np.inf, sp)
        # rings
        arm_e = armed[rows]
        jn = np.zeros(ne, dtype=np.int64)
        if nr:
            Cj = r0[:, None] ** 2 - radii[None, :] ** 2
            disc = B[:, None] ** 2 - A[:, None] * Cj
            ok = (disc >= 0) & (A[:, None] > 0)
            sq = np.sqrt(np.where(ok, disc, 0.0))
            s1 = (-B[:, None] - sq) / safeA[:, None]
            s2 = (-B[:, None] + sq) / safeA[:, None]
            v1 = ok & (s1 >= 0) & (s1 <= 1) & arm_e[:, None]
            v2 = ok & (s2 >= 0) & (s2 <= 1) & arm_e[:, None]
            S[:, 2:2 + 2 * nr:2] = np.where(v1, s1, np.inf)
            S[:, 3:3 + 2 * nr:2] = np.where(v2, s2, np.inf)
            jn = np.argmin(np.abs(r0[:, None] - radii[None, :]), axis=1)
            ar = np.arange(ne)
            noroot = ~(v1[ar, jn] | v2[ar, jn])
            f0 = r0 - radii[jn]
            f1 = r1 - radii[jn]
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                p_r = np.exp(-2.0 * np.abs(f0) * np.abs(f1) / dt)
                s_r = np.abs(f0) / (np.abs(f0) + np.abs(f1))
            br = arm_e & noroot & (f0 * f1 > 0) & (u_in < p_r)
            S[:, ncol - 1] = np.where(br, s_r, np.inf)

        alive = np.ones(ne, dtype=bool)
        ar = np.arange(ne)
        for _ in range(ncol):
            Sm = np.where(alive[:, None], S, np.inf)
            col = np.argmin(Sm, axis=1)
            s = Sm[ar, col]
            ev = np.isfinite(s)
            if not ev.any():
                break
            S[ar[ev], col[ev]] = np.inf
            e = ar[ev]
            ce = col[ev]
            se = s[ev]
            p = x0[e] + se[:, None] * delta[e]
            te = t0[e] + se * dt[e]
            # universe exit
            sel = ce == 0
            if sel.any():
                ii = e[sel]
                pp = p[sel]
                z = pp * (R / np.linalg.norm(pp, axis=1))[:, None]
                finish(rows[ii], z, te[sel], EXIT)
                alive[ii] = False
            sel = ce == 1
            if sel.any():
                ii = e[sel]
                gi = rows[ii]
                fresh = ~phit[gi]
                pp = p[sel]
                pp = pp - (pp @ pn - cfg.plane_offset)[:, None] * pn[None, :]
                phit[gi[fresh]] = True
                ptime[gi[fresh]] = te[sel][fresh]
                if record:
                    for gidx, q, tt in zip(gi[fresh], pp[fresh], te[sel][fresh]):
                        polys[gidx].append((float(tt), q.copy()))
            sel = ce >= 2
            if sel.any():
                ii = e[sel]
                gi = rows[ii]
                j = np.where(ce[sel] == ncol - 1, jn[ii], (ce[sel] - 2) // 2)
                live = armed[gi]
                ii, gi, j = ii[live], gi[live], j[live]
                pp = p[sel][live]
                tt = te[sel][live]
                if ii.size:
                    z = pp * (radii[j] / np.linalg.norm(pp, axis=1))[:, None]
                    inside = _contained(cfg, thr, refn[gi], refzero[gi], z, j)
                    defer = inside & (cfg.delay_prob > 0) & ~delayed[gi] & (u_coin[ii] < cfg.delay_prob)
                    if defer.any():
                        gd = gi[defer]
                        delayed[gd] = True
                        armed[gd] = False
                        anchor[gd] = z[defer]
                    halt = inside & ~defer
                    if halt.any():
                        finish(gi[halt], z[halt], tt[halt], RULE)
                        alive[ii[halt]] = False
                    if record:
                        for q, gidx, zz, tq in zip(~halt, gi, z, tt):
                            if q:
                                polys[gidx].append((float(tq), zz.copy()))

        go = alive
        if go.any():
            gi = rows[go]
            x[gi] = xn[go]
            t[gi] = np.where(last[go], cfg.horizon, t0[go] + dt[go])
            step[gi] += 1
            if record:
                for i in gi:
                    polys[i].append((float(t[i]), x[i].copy()))
            fin = last[go]
            if fin.any():
                gf = gi[fin]
                finish(gf, x[gf].copy(), t[gf].copy(), RULE)

    result = dict(stop=stop, tau=tau, cause=cause, steps=step, plane_hit=phit, plane_time=ptime)
    if record:
        result["polylines"] = [(np.array([q[0] for q in pl]), np.array([q[1] for q in pl])) for pl in polys]
    return result


def record_path(cfg, start, ref, path_id):
    out = run_paths(cfg, np.atleast_2d(start), np.atleast_2d(ref), np.array([path_id]), record=True)
    return out["polylines"][0]
