# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path kernel; same algorithm and random-number layout as ``_fallback``."""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, log, exp, cos, sin, acos, fabs, floor, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef unsigned long long u64

cdef u64 GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV53 = 1.0 / 9007199254740992.0
cdef double TWO_PI = 6.283185307179586

DEF MAXD = 16
DEF MAXCOL = 520


cdef inline u64 mix(u64 z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double unif(u64 key, long long counter) noexcept nogil:
    cdef u64 z = mix(key + (<u64>counter + 1) * GOLDEN)
    return <double>(z >> 11) * INV53


cdef inline void gauss(u64 key, long long c0, int d, double* out) noexcept nogil:
    cdef int k, pairs = (d + 1) // 2
    cdef double u1, u2, rad, th
    for k in range(pairs):
        u1 = unif(key, c0 + 2 * k)
        u2 = unif(key, c0 + 2 * k + 1)
        rad = sqrt(-2.0 * log(1.0 - u1))
        th = TWO_PI * u2
        out[2 * k] = rad * cos(th)
        if 2 * k + 1 < MAXD:
            out[2 * k + 1] = rad * sin(th)


cdef inline double exit_time(double u, const double* q, int m, double a1, double lam) noexcept nogil:
    cdef double p = u * m
    cdef long long i = <long long>floor(p)
    if i < m - 1:
        return q[i] + (p - i) * (q[i + 1] - q[i])
    return log(a1 / (1.0 - u if 1.0 - u > 1e-300 else 1e-300)) / lam


cdef struct Params:
    int d
    int nr
    const double* radii
    const double* thr
    int orient
    double R
    double h
    double horizon
    int finite_h
    double eps
    long long max_steps
    double delay_prob
    double delay_radius
    int plane_on
    const double* pn
    double poff
    const double* q
    int nq
    double a1
    double lam
    int K
    int m2
    int pending
    const double* anc


cdef struct Out:
    double tau
    int cause
    long long steps
    int phit
    double ptime


cdef inline double dot(const double* a, const double* b, int d) noexcept nogil:
    cdef int i
    cdef double s = 0.0
    for i in range(d):
        s += a[i] * b[i]
    return s


cdef inline void rec(double* rt, double* rx, long long cap, long long* nrec, int d,
                     double t, const double* p) noexcept nogil:
    cdef int i
    if rt == NULL:
        return
    if nrec[0] < cap:
        rt[nrec[0]] = t
        for i in range(d):
            rx[nrec[0] * d + i] = p[i]
    nrec[0] += 1


cdef int contained(const Params* P, const double* refn, int refzero, const double* z, int j) noexcept nogil:
    cdef double c = 0.0
    cdef double beta = P.thr[j]
    if not refzero:
        c = dot(refn, z, P.d) / P.radii[j]
    if P.orient == 1:
        return beta <= -1.0 or c > beta
    return beta >= 1.0 or c < beta


cdef double barrier_distance(const Params* P, const double* refn, int refzero,
                             const double* x, double a) noexcept nogil:
    cdef int i, j, full, empty, inside
    cdef double cphi = 0.0, sphi = 1.0, par, perp = 0.0, beta, r, dmin = INFINITY, dj, bc, e, v
    if a > 0.0 and not refzero:
        par = dot(refn, x, P.d)
        for i in range(P.d):
            v = x[i] - par * refn[i]
            perp += v * v
        cphi = par / a
        sphi = sqrt(perp) / a
    if cphi > 1.0:
        cphi = 1.0
    if cphi < -1.0:
        cphi = -1.0
    if sphi > 1.0:
        sphi = 1.0
    for j in range(P.nr):
        beta = P.thr[j]
        r = P.radii[j]
        if P.orient == 1:
            full = beta <= -1.0
            empty = beta >= 1.0
            inside = cphi > beta
        else:
            full = beta >= 1.0
            empty = beta <= -1.0
            inside = cphi < beta
        if refzero:
            full = full or inside
            empty = empty or not inside
        if empty:
            continue
        if full or inside:
            dj = fabs(a - r)
        else:
            bc = beta if beta > -1.0 else -1.0
            if bc > 1.0:
                bc = 1.0
            e = a * a + r * r - 2.0 * a * r * (cphi * bc + sphi * sqrt(1.0 - bc * bc))
            dj = sqrt(e if e > 0.0 else 0.0)
        if dj < dmin:
            dmin = dj
    return dmin


cdef void walk(const Params* P, const double* start, const double* ref, u64 key,
               double* stop, Out* o, double* rt, double* rx, long long cap, long long* nrec) noexcept nogil:
    cdef int d = P.d, nr = P.nr, i, j, jn, col, best, ncol
    cdef double x[MAXD]
    cdef double xn[MAXD]
    cdef double dl[MAXD]
    cdef double g[MAXD]
    cdef double anchor[MAXD]
    cdef double refn[MAXD]
    cdef double pp[MAXD]
    cdef double S[MAXCOL]
    cdef double t = 0.0, rxn, r1, dist, dr, da, dp, rho, nrm, dt, A, B, C, disc, sq, s1, s2
    cdef double a_, b_, pr, u_in, u_out, u_pl, u_coin, g0, g1, f0, f1, s, te, sc, pdot, best_s
    cdef long long step = 0, base
    cdef int armed = 1, delayed = 0, phit = 0, refzero, last, alive, v1, v2, halt
    cdef double ptime = -1.0

    nrm = sqrt(dot(ref, ref, d))
    refzero = nrm == 0.0
    if P.pending:
        armed = 0
        delayed = 1
    for i in range(d):
        x[i] = start[i]
        anchor[i] = P.anc[i]
        refn[i] = 0.0 if refzero else ref[i] / nrm
    rec(rt, rx, cap, nrec, d, 0.0, x)
    o.phit = 0
    o.ptime = -1.0
    if P.finite_h and P.horizon <= 0.0:
        for i in range(d):
            stop[i] = x[i]
        o.tau = 0.0
        o.cause = 0
        o.steps = 0
        return
    ncol = 3 + 2 * nr
    while True:
        if step >= P.max_steps:
            for i in range(d):
                stop[i] = x[i]
            o.tau = t
            o.cause = 2
            break
        if not armed:
            s = 0.0
            for i in range(d):
                s += (x[i] - anchor[i]) * (x[i] - anchor[i])
            if sqrt(s) >= P.delay_radius - P.eps:
                armed = 1
        rxn = sqrt(dot(x, x, d))
        dist = P.R - rxn
        if armed:
            dr = barrier_distance(P, refn, refzero, x, rxn)
        else:
            s = 0.0
            for i in range(d):
                s += (x[i] - anchor[i]) * (x[i] - anchor[i])
            dr = P.delay_radius - sqrt(s)
        if dr < dist:
            dist = dr
        if P.plane_on and not phit:
            dp = fabs(dot(x, P.pn, d) - P.poff)
            if dp < dist:
                dist = dp
        base = step * P.K

        if not P.finite_h and dist > P.eps:
            gauss(key, base, d, g)
            nrm = sqrt(dot(g, g, d))
            for i in range(d):
                x[i] = x[i] + dist * (g[i] / nrm)
            t = t + dist * dist * exit_time(unif(key, base + P.m2), P.q, P.nq, P.a1, P.lam)
            step += 1
            rec(rt, rx, cap, nrec, d, t, x)
            continue

        last = 0
        dt = P.h
        if P.finite_h and t + P.h >= P.horizon:
            last = 1
            dt = P.horizon - t
        if dt < 0.0:
            dt = 0.0
        gauss(key, base, d, g)
        sq = sqrt(dt)
        for i in range(d):
            xn[i] = x[i] + sq * g[i]
            dl[i] = xn[i] - x[i]
        A = dot(dl, dl, d)
        B = dot(x, dl, d)
        r1 = sqrt(dot(xn, xn, d))
        u_in = unif(key, base + P.m2 + 1)
        u_out = unif(key, base + P.m2 + 2)
        u_pl = unif(key, base + P.m2 + 3)
        u_coin = unif(key, base + P.m2 + 4)
        for col in range(ncol):
            S[col] = INFINITY
        # universe sphere
        if r1 >= P.R:
            C = rxn * rxn - P.R * P.R
            disc = B * B - A * C
            sq = sqrt(disc if disc > 0.0 else 0.0)
            s = (-B + sq) / (A if A > 0.0 else 1.0)
            if s < 0.0:
                s = 0.0
            if s > 1.0:
                s = 1.0
            S[0] = s
        else:
            a_ = P.R - rxn
            b_ = P.R - r1
            if u_out < exp(-2.0 * a_ * b_ / dt):
                S[0] = a_ / (a_ + b_)
        # mixing hyperplane
        if P.plane_on and not phit:
            g0 = dot(x, P.pn, d) - P.poff
            g1 = dot(xn, P.pn, d) - P.poff
            if g0 * g1 <= 0.0:
                S[1] = g0 / (g0 - g1) if g0 != g1 else 0.0
            elif u_pl < exp(-2.0 * fabs(g0) * fabs(g1) / dt):
                S[1] = fabs(g0) / (fabs(g0) + fabs(g1))
        # rings
        jn = 0
        if nr > 0:
            for j in range(nr):
                if fabs(rxn - P.radii[j]) < fabs(rxn - P.radii[jn]):
                    jn = j
            v1 = 0
            v2 = 0
            for j in range(nr):
                C = rxn * rxn - P.radii[j] * P.radii[j]
                disc = B * B - A * C
                if disc >= 0.0 and A > 0.0 and armed:
                    sq = sqrt(disc)
                    s1 = (-B - sq) / A
                    s2 = (-B + sq) / A
                    if s1 >= 0.0 and s1 <= 1.0:
                        S[2 + 2 * j] = s1
                        if j == jn:
                            v1 = 1
                    if s2 >= 0.0 and s2 <= 1.0:
                        S[3 + 2 * j] = s2
                        if j == jn:
                            v2 = 1
            if armed and not (v1 or v2):
                f0 = rxn - P.radii[jn]
                f1 = r1 - P.radii[jn]
                if f0 * f1 > 0.0 and u_in < exp(-2.0 * fabs(f0) * fabs(f1) / dt):
                    S[ncol - 1] = fabs(f0) / (fabs(f0) + fabs(f1))

        alive = 1
        while alive:
            best = -1
            best_s = INFINITY
            for col in range(ncol):
                if S[col] < best_s:
                    best_s = S[col]
                    best = col
            if best < 0:
                break
            s = best_s
            S[best] = INFINITY
            for i in range(d):
                pp[i] = x[i] + s * dl[i]
            te = t + s * dt
            if best == 0:
                nrm = sqrt(dot(pp, pp, d))
                for i in range(d):
                    stop[i] = pp[i] * (P.R / nrm)
                o.tau = te
                o.cause = 1
                rec(rt, rx, cap, nrec, d, te, stop)
                alive = 0
            elif best == 1:
                if not phit:
                    pdot = dot(pp, P.pn, d) - P.poff
                    for i in range(d):
                        pp[i] = pp[i] - pdot * P.pn[i]
                    phit = 1
                    ptime = te
                    rec(rt, rx, cap, nrec, d, te, pp)
            else:
                if not armed:
                    continue
                if best == ncol - 1:
                    j = jn
                else:
                    j = (best - 2) // 2
                nrm = sqrt(dot(pp, pp, d))
                for i in range(d):
                    g[i] = pp[i] * (P.radii[j] / nrm)
                if contained(P, refn, refzero, g, j):
                    halt = 1
                    if P.delay_prob > 0.0 and not delayed and u_coin < P.delay_prob:
                        halt = 0
                        delayed = 1
                        armed = 0
                        for i in range(d):
                            anchor[i] = g[i]
                    if halt:
                        for i in range(d):
                            stop[i] = g[i]
                        o.tau = te
                        o.cause = 0
                        rec(rt, rx, cap, nrec, d, te, stop)
                        alive = 0
                    else:
                        rec(rt, rx, cap, nrec, d, te, g)
                else:
                    rec(rt, rx, cap, nrec, d, te, g)
        if not alive:
            break
        for i in range(d):
            x[i] = xn[i]
        if last:
            t = P.horizon
        else:
            t = t + dt
        step += 1
        rec(rt, rx, cap, nrec, d, t, x)
        if last:
            for i in range(d):
                stop[i] = x[i]
            o.tau = t
            o.cause = 0
            break
    o.steps = step
    o.phit = phit
    o.ptime = ptime


cdef void fill(Params* P, object cfg, const double[::1] radii, const double[::1] thr, const double[::1] pn,
               const double[::1] q, double a1, double lam, const double[::1] anc, int pending):
    P.d = cfg.dim
    P.nr = radii.shape[0]
    P.radii = &radii[0] if P.nr > 0 else NULL
    P.thr = &thr[0] if P.nr > 0 else NULL
    P.orient = cfg.orientation
    P.R = cfg.universe
    P.h = cfg.h
    P.horizon = cfg.horizon
    P.finite_h = np.isfinite(cfg.horizon)
    P.eps = cfg.wos_mult * sqrt(cfg.h)
    P.max_steps = cfg.max_steps
    P.delay_prob = cfg.delay_prob
    P.delay_radius = cfg.delay_radius
    P.plane_on = cfg.plane_normal is not None
    P.pn = &pn[0]
    P.poff = cfg.plane_offset
    P.q = &q[0]
    P.nq = q.shape[0]
    P.a1 = a1
    P.lam = lam
    P.m2 = 2 * ((cfg.dim + 1) // 2)
    P.K = P.m2 + 5
    P.anc = &anc[0]
    P.pending = pending


def _check(cfg):
    if cfg.dim > MAXD:
        raise ValueError(f"compiled kernel supports d <= {MAXD}")
    if 3 + 2 * len(cfg.radii) > MAXCOL:
        raise ValueError("too many rings for the compiled kernel")


def run_paths(cfg, starts, refs, path_ids, record=False):
    from .exit_time import exit_time_table
    from .. import rng
    if record:
        pls = [record_path(cfg, starts[i], refs[i], path_ids[i]) for i in range(len(path_ids))]
        out = run_paths(cfg, starts, refs, path_ids)
        out["polylines"] = pls
        return out
    _check(cfg)
    cdef const double[:, ::1] st = np.ascontiguousarray(starts, dtype=np.float64)
    cdef const double[:, ::1] rf = np.ascontiguousarray(refs, dtype=np.float64)
    cdef Py_ssize_t n = st.shape[0], i
    keys_np = np.ascontiguousarray(rng.path_keys(cfg.seed, rng.STEPS, path_ids), dtype=np.uint64)
    cdef u64[::1] keys = keys_np
    radii_np, thr_np, pn_np = cfg.arrays()
    cdef const double[::1] radii = radii_np if radii_np.size else np.zeros(1)
    cdef const double[::1] thr = thr_np if thr_np.size else np.zeros(1)
    cdef const double[::1] pn = pn_np
    qt, a1, lam = exit_time_table(cfg.dim)
    cdef const double[::1] q = qt
    anc_np, pend = cfg.anchor_array()
    cdef const double[::1] anc = anc_np
    cdef Params P
    fill(&P, cfg, radii, thr, pn, q, a1, lam, anc, pend)
    P.nr = radii_np.size
    stop_np = np.empty((n, cfg.dim))
    tau_np = np.empty(n)
    cause_np = np.empty(n, dtype=np.int8)
    steps_np = np.empty(n, dtype=np.int64)
    phit_np = np.empty(n, dtype=bool)
    ptime_np = np.empty(n)
    cdef double[:, ::1] stop = stop_np
    cdef double[::1] tau = tau_np
    cdef signed char[::1] cause = cause_np
    cdef long long[::1] steps = steps_np
    cdef unsigned char[::1] phit = phit_np.view(np.uint8)
    cdef double[::1] ptime = ptime_np
    cdef Out* outs = <Out*>malloc(max(n, 1) * sizeof(Out))
    if outs == NULL:
        raise MemoryError()
    cdef int nthreads = max(1, int(cfg.threads))
    try:
        with nogil:
            for i in prange(n, num_threads=nthreads, schedule="dynamic", chunksize=64):
                walk(&P, &st[i, 0], &rf[i, 0], keys[i], &stop[i, 0], &outs[i], NULL, NULL, 0, NULL)
        for i in range(n):
            tau[i] = outs[i].tau
            cause[i] = outs[i].cause
            steps[i] = outs[i].steps
            phit[i] = outs[i].phit
            ptime[i] = outs[i].ptime
    finally:
        free(outs)
    ptime_np[~phit_np] = np.nan
    return dict(stop=stop_np, tau=tau_np, cause=cause_np, steps=steps_np,
                plane_hit=phit_np, plane_time=ptime_np)


def record_path(cfg, start, ref, path_id):
    """Full polyline ``(times, points)`` of one path."""
    from .exit_time import exit_time_table
    from .. import rng
    _check(cfg)
    st_np = np.ascontiguousarray(start, dtype=np.float64).reshape(-1)
    rf_np = np.ascontiguousarray(ref, dtype=np.float64).reshape(-1)
    cdef const double[::1] st = st_np
    cdef const double[::1] rf = rf_np
    cdef u64 key = int(rng.path_keys(cfg.seed, rng.STEPS, np.array([path_id]))[0])
    radii_np, thr_np, pn_np = cfg.arrays()
    cdef const double[::1] radii = radii_np if radii_np.size else np.zeros(1)
    cdef const double[::1] thr = thr_np if thr_np.size else np.zeros(1)
    cdef const double[::1] pn = pn_np
    qt, a1, lam = exit_time_table(cfg.dim)
    cdef const double[::1] q = qt
    anc_np, pend = cfg.anchor_array()
    cdef const double[::1] anc = anc_np
    cdef Params P
    fill(&P, cfg, radii, thr, pn, q, a1, lam, anc, pend)
    P.nr = radii_np.size
    cdef double[::1] stop = np.empty(cfg.dim)
    cdef Out o
    cdef long long cap = 4096, nrec = 0
    cdef double[::1] rt
    cdef double[::1] rx
    while True:
        rt_np = np.empty(cap)
        rx_np = np.empty(cap * cfg.dim)
        rt = rt_np
        rx = rx_np
        nrec = 0
        walk(&P, &st[0], &rf[0], key, &stop[0], &o, &rt[0], &rx[0], cap, &nrec)
        if nrec <= cap:
            return rt_np[:nrec].copy(), rx_np[:nrec * cfg.dim].reshape(nrec, cfg.dim).copy()
        cap = nrec
