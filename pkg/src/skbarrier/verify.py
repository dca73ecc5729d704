"""Sampled necessary conditions for optimality of a stopping rule.

* forbidden pairs: no path may cross the barrier patch generated by the stop
  point of another path with the same start before it stops itself;
* radial monotonicity: swapping "diffuse at y" and "stop at y'" between two
  paths (|y| = |y'|) never lowers the cost;
* R-equivalent cost comparison, common-mass stopping and a randomized
  subharmonic test-function oracle for the order check.
"""
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ._core import NORMAL, RULE
from .gain import CostSpec, cost
from .measures import (MeasureError, RadialMeasure, check_order, integrate, r_equivalent,
                       radial_w1, split_common_mass, symmetrize, DiscreteMeasure)

BUCKET_DEG = 2.0
BOOTSTRAP = 200


@dataclass(frozen=True)
class ViolationReport:
    checked: int
    violations: int
    rate: float
    worst_margin: float
    witnesses: tuple = ()
    coverage: Optional[float] = None
    notes: tuple = ()

    def __post_init__(self):
        if self.checked < 0 or self.violations < 0 or self.violations > self.checked:
            raise ValueError("inconsistent counts")
        expect = self.violations / self.checked if self.checked else 0.0
        if abs(self.rate - expect) > 1e-12:
            raise ValueError("rate must equal violations / checked")

    @classmethod
    def build(cls, checked, violations, worst, witnesses=(), coverage=None, notes=()):
        rate = violations / checked if checked else 0.0
        return cls(int(checked), int(violations), float(rate), float(worst), tuple(witnesses), coverage,
                   tuple(notes))

    def to_dict(self):
        d = asdict(self)
        d["witnesses"] = [_jsonable(w) for w in self.witnesses]
        d["notes"] = list(self.notes)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def witness_csv(self):
        """One row per witness, all geometry flattened into columns."""
        if not self.witnesses:
            return ""
        rows = [_flatten(_jsonable(w)) for w in self.witnesses]
        keys = list(rows[0].keys())
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
        return buf.getvalue()


def _jsonable(w):
    out = {}
    for k, v in w.items():
        if isinstance(v, np.ndarray):
            out[k] = [float(a) for a in v.reshape(-1)]
        elif isinstance(v, (np.floating, np.integer)):
            out[k] = v.item()
        else:
            out[k] = v
    return out


def _flatten(w):
    out = {}
    for k, v in w.items():
        if isinstance(v, list):
            for i, a in enumerate(v):
                out[f"{k}_{i}"] = repr(float(a))
        elif isinstance(v, float):
            out[k] = repr(v)
        else:
            out[k] = v
    return out


def _cos(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


# ----------------------------------------------------------------------------
# forbidden pairs

def _start_buckets(starts, bucket_deg):
    """Integer bucket label per start: same radius and direction cell."""
    r = np.round(np.linalg.norm(starts, axis=1), 9)
    w = math.radians(bucket_deg)
    if starts.shape[1] == 2:
        th = np.arctan2(starts[:, 1], starts[:, 0]) % (2 * math.pi)
        cell = np.floor(th / w)[:, None]
    else:
        u = starts / np.linalg.norm(starts, axis=1, keepdims=True)
        cell = np.floor(u / w)
    keys = np.column_stack([r, cell])
    _, lab = np.unique(keys, axis=0, return_inverse=True)
    return lab.reshape(-1)


def _crossings(times, pts, tau, radii):
    """Ring crossings strictly before ``tau``: list of (ring, time, point)."""
    out = []
    if pts.shape[0] < 2:
        return out
    a, b = pts[:-1], pts[1:]
    t0, t1 = times[:-1], times[1:]
    dl = b - a
    A = np.einsum("ij,ij->i", dl, dl)
    B = np.einsum("ij,ij->i", a, dl)
    aa = np.einsum("ij,ij->i", a, a)
    ok = A > 0
    sA = np.where(ok, A, 1.0)
    for j, r in enumerate(radii):
        disc = B * B - A * (aa - r * r)
        good = ok & (disc >= 0)
        sq = np.sqrt(np.where(good, disc, 0.0))
        for s in ((-B - sq) / sA, (-B + sq) / sA):
            sel = good & (s >= 0) & (s <= 1)
            if not sel.any():
                continue
            tt = t0[sel] + s[sel] * (t1[sel] - t0[sel])
            zz = a[sel] + s[sel, None] * dl[sel]
            keep = tt < tau - 1e-12
            for t, z in zip(tt[keep], zz[keep]):
                out.append((j, float(t), z))
    return out


def find_forbidden_pairs(ens, tol=1e-6, bucket_deg=BUCKET_DEG, max_witnesses=20):
    """Scan path pairs with a common start for barrier penetration.

    For a normal barrier, ``(f, g)`` is forbidden when ``g`` stops at ``y'`` on
    ring ``|y'|`` and ``f`` crossed that ring, before stopping, at a point
    ``z`` with ``cos(x, z) > cos(x, y') + tol``; reversed barriers flip the
    inequality. Counts are over ordered pairs ``f != g`` in one start bucket
    with ``g`` stopped by the rule.
    """
    if ens.polylines is None:
        raise ValueError("polylines absent: simulate with record=True")
    radii = np.array(ens.rule.ring_radii)
    sign = 1.0 if ens.rule.orientation == NORMAL else -1.0
    n = len(ens)
    if radii.size == 0 or n < 2:
        return ViolationReport.build(0, 0, 0.0, notes=("no barrier rings",))
    starts = np.asarray(ens.starts)
    stops = np.asarray(ens.stops)
    sr = np.linalg.norm(stops, axis=1)
    ring_of = np.abs(sr[:, None] - radii[None, :]).argmin(axis=1)
    on_ring = np.abs(sr - radii[ring_of]) <= 1e-9 * np.maximum(radii[ring_of], 1.0)
    common = np.asarray(getattr(ens, "common_stopped", np.zeros(n, dtype=bool)))
    is_g = (np.asarray(ens.causes) == RULE) & on_ring & ~common & (np.asarray(ens.tau) > 0)
    cg = np.full(n, np.nan)
    for i in np.nonzero(is_g)[0]:
        cg[i] = sign * _cos(starts[i], stops[i])

    # extreme signed cosine of crossings before stopping, per path and ring
    M = np.full((n, radii.size), -np.inf)
    Mz = {}
    for i in range(n):
        t, p = ens.polylines[i]
        for j, tt, z in _crossings(np.asarray(t), np.asarray(p), float(ens.tau[i]), radii):
            c = sign * _cos(starts[i], z)
            if c > M[i, j]:
                M[i, j] = c
                Mz[(i, j)] = (tt, z)

    lab = _start_buckets(starts, bucket_deg)
    checked = violations = 0
    worst = -math.inf
    wit = []
    for b in np.unique(lab):
        members = np.nonzero(lab == b)[0]
        gs = members[is_g[members]]
        checked += gs.size * members.size - gs.size
        if gs.size == 0:
            continue
        for j in np.unique(ring_of[gs]):
            gj = gs[ring_of[gs] == j]
            order = np.argsort(cg[gj], kind="stable")
            gj = gj[order]
            cj = cg[gj]
            for f in members:
                m = M[f, j]
                if not np.isfinite(m):
                    continue
                cnt = int(np.searchsorted(cj, m - tol, side="left"))
                if is_g[f] and ring_of[f] == j and cg[f] < m - tol:
                    cnt -= 1
                if cnt <= 0:
                    continue
                violations += cnt
                g0 = gj[0] if gj[0] != f else gj[1]
                margin = m - cg[g0]
                worst = max(worst, margin)
                if len(wit) < max_witnesses:
                    tt, z = Mz[(f, j)]
                    wit.append(dict(f=int(f), g=int(g0), ring_radius=float(radii[j]), f_start=starts[f].copy(),
                                    g_start=starts[g0].copy(), crossing=np.asarray(z).copy(), crossing_time=tt,
                                    g_stop=stops[g0].copy(), orientation=int(ens.rule.orientation),
                                    margin=float(margin)))
    return ViolationReport.build(checked, violations, worst if violations else 0.0, wit)


def witness_margin(w):
    """Recompute a forbidden-pair witness margin from its geometry alone."""
    sign = 1.0 if w["orientation"] == NORMAL else -1.0
    return sign * (_cos(np.asarray(w["f_start"]), np.asarray(w["crossing"]))
                   - _cos(np.asarray(w["g_start"]), np.asarray(w["g_stop"])))


# ----------------------------------------------------------------------------
# radial monotonicity

@dataclass
class _Harvest:
    """Continuation samples in the canonical frame (start on the positive x-axis)."""

    rx: float
    ring: int
    phi: list = field(default_factory=list)
    stops: list = field(default_factory=list)
    arange: list = field(default_factory=list)


def _canon(start):
    """Complex rotation taking ``start`` to the positive real axis."""
    s = complex(start[0], start[1])
    return abs(s), (s / abs(s)).conjugate()


def _harvest(ens, radii, bucket):
    """Group first non-stopping ring crossings by (start radius, ring, angle bucket)."""
    groups = {}
    for i in range(len(ens)):
        t, p = ens.polyline(i)
        t = np.asarray(t)
        p = np.asarray(p)
        rx, rot = _canon(ens.starts[i])
        first = {}
        for j, tt, z in _crossings(t, p, float(ens.tau[i]), radii):
            if tt > 0 and (j not in first or tt < first[j][0]):
                first[j] = (tt, z)
        stop_ring = int(np.abs(np.linalg.norm(ens.stops[i]) - radii).argmin())
        if (ens.causes[i] == RULE and ens.tau[i] > 0 and stop_ring not in first
                and abs(np.linalg.norm(ens.stops[i]) - radii[stop_ring]) <= 1e-9 * max(radii[stop_ring], 1.0)):
            # stopped at its first crossing: the continuation law is a Dirac
            first[stop_ring] = (float(ens.tau[i]), np.asarray(ens.stops[i]))
        if not first:
            continue
        zc = (p[:, 0] + 1j * p[:, 1]) * rot
        stop = complex(*ens.stops[i][:2]) * rot
        for j, (tt, z) in first.items():
            y = complex(z[0], z[1]) * rot
            flip = np.angle(y) < 0
            yy = y.conjugate() if flip else y
            seg = zc[t >= tt]
            seg = np.concatenate([[y], seg]) if seg.size else np.array([y, stop])
            if flip:
                seg = seg.conjugate()
            ang = np.unwrap(np.angle(seg))
            phi = float(np.angle(yy))
            key = (round(rx, 9), j, int(phi // bucket))
            g = groups.setdefault(key, _Harvest(rx, j))
            g.phi.append(phi)
            g.stops.append(stop.conjugate() if flip else stop)
            g.arange.append((float(ang.min()), float(ang.max())))
    return groups


def _stop_classes(ens, radii, bucket):
    """Paths stopped by the rule on a ring, grouped by (start radius, ring, angle bucket)."""
    out = {}
    sr = np.linalg.norm(ens.stops, axis=1)
    common = np.asarray(getattr(ens, "common_stopped", np.zeros(len(ens), dtype=bool)))
    for i in np.nonzero((np.asarray(ens.causes) == RULE) & (np.asarray(ens.tau) > 0) & ~common)[0]:
        j = int(np.abs(sr[i] - radii).argmin())
        if abs(sr[i] - radii[j]) > 1e-9 * max(radii[j], 1.0):
            continue
        rx, rot = _canon(ens.starts[i])
        y = complex(*ens.stops[i][:2]) * rot
        th = abs(float(np.angle(y)))
        key = (round(rx, 9), j, int(th // bucket))
        out.setdefault(key, []).append(th)
    return out


def monotonicity_margin(x, y, psi, xp, yp, alpha):
    """``G(x, psi) - G(x', phi)`` with ``phi`` the rigid rotation of ``psi`` onto ``y'``.

    Points are 2-D arrays; ``psi`` is an ``(n, 2)`` sample of a law with
    barycenter ``y``. Zero for ``psi = delta_y`` whatever the geometry.
    """
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    y = np.asarray(y, dtype=float)
    yp = np.asarray(yp, dtype=float)
    a = math.atan2(yp[1], yp[0]) - math.atan2(y[1], y[0])
    Rm = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    phi = psi @ Rm.T
    g1 = cost(x, psi, alpha).mean() - float(cost(x, y, alpha))
    g2 = cost(xp, phi, alpha).mean() - float(cost(xp, yp, alpha))
    return float(g1 - g2)


def check_radial_monotonicity(ens, spec, reflections=2, tol=1e-9, bucket_deg=6.0, min_samples=30,
                              seed=0, bootstrap=BOOTSTRAP, max_witnesses=20):
    """Swap test of the radial monotonicity principle on harvested configurations.

    For every continuation group (paths from ``|x| = r`` crossing ring ``j``
    at angle ``phi`` from their start without stopping) and every class of
    paths stopped on the same ring at angle ``theta``, compares
    ``G(x, psi_y)`` with ``G(x', phi_y')`` over a competitor family built from
    ``psi_y``: rotation onto ``y'``, plus (``reflections >= 1``) its mirror
    across the line ``0y'`` and (``reflections >= 2``) the coin-mixed
    reflection across the line ``0x'`` applied after the first hit of that
    line. Minimization requires ``G(x, psi) <= min G(x', phi)``,
    maximization ``>= max``; violations must exceed ``tol`` plus three
    bootstrap standard deviations. Two-dimensional ensembles only.
    """
    if ens.dimension != 2:
        raise ValueError("radial monotonicity scan is implemented for d = 2")
    alpha = spec.alpha if isinstance(spec, CostSpec) else float(spec)
    minimize = spec.minimize if isinstance(spec, CostSpec) else True
    radii = np.array(ens.rule.ring_radii)
    if radii.size == 0:
        return ViolationReport.build(0, 0, 0.0, coverage=0.0, notes=("no barrier rings",))
    bucket = math.radians(bucket_deg)
    groups = _harvest(ens, radii, bucket)
    classes = _stop_classes(ens, radii, bucket)
    gen = np.random.default_rng(seed)
    checked = violations = 0
    worst = -math.inf
    wit = []
    usable = [k for k, g in groups.items() if len(g.stops) >= min_samples]
    total = sum(len(g.stops) for g in groups.values())
    covered = sum(len(groups[k].stops) for k in usable)
    for key in sorted(usable):
        g = groups[key]
        n = len(g.stops)
        phic = float(np.mean(g.phi))
        # rotate each sample so its own crossing point sits at the group centre
        shift = np.exp(1j * (phic - np.asarray(g.phi)))
        z = np.asarray(g.stops) * shift
        lo = np.array([a for a, _ in g.arange]) + (phic - np.asarray(g.phi))
        hi = np.array([b for _, b in g.arange]) + (phic - np.asarray(g.phi))
        rj = radii[g.ring]
        x = complex(g.rx, 0.0)
        y = rj * np.exp(1j * phic)
        counts = gen.multinomial(n, np.full(n, 1.0 / n), size=bootstrap) / n
        lhs = np.abs(x - z) ** alpha
        g_lhs = abs(x - y) ** alpha
        for ckey in sorted(classes):
            rxp, j, _ = ckey
            if j != g.ring:
                continue
            th = float(np.mean(classes[ckey]))
            xp = complex(rxp, 0.0)
            yp = rj * np.exp(1j * th)
            turn = np.exp(1j * (th - phic))
            comps = [("rotation", z * turn)]
            if reflections >= 1:
                u = yp / abs(yp)
                comps.append(("mirror-0y'", u * u * (z * turn).conjugate()))
            if reflections >= 2:
                # line 0x' is the real axis; paths whose angle range covers k*pi hit it
                d = th - phic
                hit = np.floor((hi + d) / math.pi) >= np.ceil((lo + d) / math.pi)
                zr = z * turn
                mixed = np.where(hit, zr.conjugate(), zr)
                comps.append(("reflect-mix-0x'", np.stack([zr, mixed])))
            best = None
            for name, pts in comps:
                if pts.ndim == 2:
                    rhs = 0.5 * (np.abs(xp - pts[0]) ** alpha + np.abs(xp - pts[1]) ** alpha)
                else:
                    rhs = np.abs(xp - pts) ** alpha
                diff = lhs - rhs
                m = float(diff.mean() - g_lhs + abs(xp - yp) ** alpha)
                sd = float(np.std(counts @ diff))
                score = m - 3.0 * sd if minimize else -m - 3.0 * sd
                if best is None or score > best[0]:
                    best = (score, m, sd, name)
            checked += 1
            score, m, sd, name = best
            if score > tol:
                violations += 1
                worst = max(worst, score)
                if len(wit) < max_witnesses:
                    wit.append(dict(x=np.array([x.real, x.imag]), y=np.array([y.real, y.imag]),
                                    x_prime=np.array([xp.real, xp.imag]), y_prime=np.array([yp.real, yp.imag]),
                                    ring_radius=float(rj), samples=n, competitor=name, margin=m,
                                    sigma=sd))
    coverage = covered / total if total else 0.0
    notes = () if usable else ("insufficient continuation samples",)
    return ViolationReport.build(checked, violations, worst if violations else 0.0, wit, coverage, notes)


# ----------------------------------------------------------------------------
# cost comparison and common mass

@dataclass(frozen=True)
class CostComparison:
    cost_a: float
    stderr_a: float
    cost_b: float
    stderr_b: float
    r_equiv: bool
    w1_start: float
    w1_stop: float
    paired_stderr: Optional[float] = None

    @property
    def z(self):
        """``(cost_b - cost_a)`` in standard errors of the difference.

        Uses the paired standard error when both ensembles share their starts
        and random keys (common random numbers), the joint one otherwise.
        """
        s = self.paired_stderr if self.paired_stderr is not None else math.hypot(self.stderr_a, self.stderr_b)
        return (self.cost_b - self.cost_a) / s if s > 0 else math.copysign(math.inf, self.cost_b - self.cost_a)

    def __iter__(self):
        return iter((self.cost_a, self.cost_b, self.r_equiv))


def _radial_sample(points, d):
    r = np.linalg.norm(points, axis=1)
    u, c = np.unique(np.round(r, 12), return_counts=True)
    return RadialMeasure(d, u, c / c.sum())


def compare_r_equivalent_costs(a, b, spec, tol=0.02):
    """Monte Carlo costs of two ensembles and whether they are R-equivalent.

    R-equivalence is judged on the empirical radial laws of starts and of
    stops, each within radial W1 ``tol`` (sampling noise rules out exact
    equality).
    """
    alpha = spec.alpha if isinstance(spec, CostSpec) else float(spec)
    d = a.dimension
    w_start = radial_w1(_radial_sample(a.starts, d), _radial_sample(b.starts, d))
    w_stop = radial_w1(_radial_sample(a.stops, d), _radial_sample(b.stops, d))
    ca, cb = a.cost_samples(alpha), b.cost_samples(alpha)
    se = lambda c: float(c.std(ddof=1) / math.sqrt(c.size)) if c.size > 1 else 0.0
    paired = None
    if (len(a) == len(b) and a.seed == b.seed and np.array_equal(a.path_ids, b.path_ids)
            and np.array_equal(a.starts, b.starts)):
        paired = se(cb - ca)
    return CostComparison(float(ca.mean()), se(ca), float(cb.mean()), se(cb),
                          bool(w_start <= tol and w_stop <= tol), float(w_start), float(w_stop), paired)


@dataclass(frozen=True)
class CommonMassReport:
    ok: bool
    common_mass: float
    routed_mass: float
    stopped_fraction: float
    stopped_stderr: float
    residual_common: float

    def __bool__(self):
        return self.ok


def check_common_mass_stop(mu, nu, spec, result, tol=1e-12):
    """Confirm ``mu ^ nu`` is stopped at time 0 and removed before solving.

    ``routed_mass`` (time-0 stop probabilities times the mu weights) must
    equal the common mass to ``tol``; the empirical fraction of paths stopped
    at time 0 must agree within three binomial standard errors.
    """
    alpha = spec.alpha if isinstance(spec, CostSpec) else float(spec)
    if not 0 < alpha <= 1:
        raise ValueError("the common-mass principle needs 0 < alpha <= 1")
    mu_bar, nu_bar, common = split_common_mass(mu, nu)
    _, _, again = split_common_mass(mu_bar, nu_bar)
    rule = result.rule
    routed = float(np.sum(mu.weights * rule.common_probability(mu.radii)))
    ens = result.ensemble
    if ens is not None and len(ens):
        frac = float(np.mean(ens.common_stopped))
        se = math.sqrt(max(common.mass * (1 - common.mass), 1e-300) / len(ens))
    else:
        frac, se = (1.0 if common.mass >= 1 - 1e-12 else 0.0), 0.0
    ok = abs(routed - common.mass) <= tol and again.mass <= tol
    if ens is not None and len(ens):
        ok = ok and abs(frac - common.mass) <= 3 * se + 1e-12
    return CommonMassReport(bool(ok), common.mass, routed, frac, se, again.mass)


# ----------------------------------------------------------------------------
# order oracle

def _isotropic(gen, d):
    q, _ = np.linalg.qr(gen.standard_normal((d, 2)))
    return q[:, 0] + 1j * q[:, 1]


def _draw_test_function(gen, d, scale):
    """Random positive mix of clamped kernels plus signed harmonic polynomials."""
    kern = []
    for _ in range(int(gen.integers(1, 4))):
        w = gen.standard_normal(d)
        w *= scale * gen.random() ** (1.0 / d) / np.linalg.norm(w)
        rho = scale * 10 ** gen.uniform(-2.5, -0.3)
        kern.append((w, rho, gen.exponential()))
    harm = []
    for _ in range(int(gen.integers(0, 3))):
        harm.append((_isotropic(gen, d), int(gen.integers(1, 5)), gen.choice([-1.0, 1.0]) * gen.exponential(),
                     bool(gen.integers(0, 2))))
    return kern, harm


def _evaluate(fn, pts, d):
    kern, harm = fn
    out = np.zeros(pts.shape[0])
    for w, rho, c in kern:
        m = np.maximum(np.linalg.norm(pts - w, axis=1), rho)
        out += c * (np.log(m) if d == 2 else -m ** (2.0 - d))
    for a, k, c, imag in harm:
        v = (pts @ a) ** k
        out += c * (v.imag if imag else v.real)
    return out


def order_oracle(mu, nu, samples=1000, seed=0, quad=None):
    """Random subharmonic test functions: flag ``int f dmu > int f dnu + tol``.

    The tolerance of each draw is ten times the gap between quadratures with
    ``quad`` and ``2*quad`` nodes (default 256 in the plane, 32 above), plus
    ``1e-9`` relative. A violation proves
    ``mu`` does not precede ``nu``; agreement with :func:`check_order` is
    reported in the notes.
    """
    if mu.dimension != nu.dimension:
        raise MeasureError("dimension mismatch")
    d = mu.dimension
    if quad is None:
        quad = 256 if d == 2 else 32
    gen = np.random.default_rng(seed)
    scale = 1.05 * max(mu.max_radius(), nu.max_radius(), 1e-9)
    violations = 0
    worst = -math.inf
    wit = []
    for k in range(int(samples)):
        fn = _draw_test_function(gen, d, scale)
        f = lambda p: _evaluate(fn, p, d)
        gap = []
        for n in (quad, 2 * quad):
            gap.append(integrate(mu, f, n) - integrate(nu, f, n))
        tol = 10 * abs(gap[1] - gap[0]) + 1e-9 * max(1.0, abs(gap[1]))
        m = gap[1]
        worst = max(worst, m)
        if m > tol:
            violations += 1
            if len(wit) < 10:
                wit.append(dict(index=k, margin=float(m), tol=float(tol),
                                centers=[[float(v) for v in w] for w, _, _ in fn[0]],
                                clamps=[float(r) for _, r, _ in fn[0]],
                                weights=[float(c) for _, _, c in fn[0]],
                                min_center_radius=float(min(np.linalg.norm(w) for w, _, _ in fn[0]))))
    ordered = check_order(mu, nu).ordered
    note = "consistent with check_order"
    if violations and ordered:
        note = "CONTRADICTS check_order (oracle found a violation on an ordered pair)"
    elif not violations and not ordered:
        note = "no violation sampled although check_order reports not ordered"
    return ViolationReport.build(samples, violations, worst, wit, notes=(note,))
