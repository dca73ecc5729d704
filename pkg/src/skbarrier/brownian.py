"""Brownian motion from a radial initial law, stopped by (randomized) rules.

Every path is a pure function of ``(seed, path index)``: starts come from the
``STARTS`` stream, increments from ``STEPS`` and decision coins from
``COINS``. Ensembles are therefore identical whatever the chunking or the
number of worker threads, and any single path can be replayed on its own.
"""
import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _core, rng
from ._core import CAP, CAUSES, EXIT, NORMAL, REVERSED, RULE, KernelConfig
from .measures import DiscreteMeasure, MeasureError, RadialMeasure, sample_starts, symmetrize

POLYLINE_WARN_POINTS = 1_000_000
KINDS = ("fixed-time", "sphere-hit", "barrier-hit", "composite")

# counters inside the COINS stream
_COIN_COMMON = 0
_COIN_MIRROR = 1


def _tuple(a):
    return tuple(float(v) for v in np.asarray(a, dtype=float).reshape(-1))


@dataclass(frozen=True)
class StoppingRule:
    """Adapted stopping policy, always truncated at the universe sphere.

    Parameters
    ----------
    kind : one of ``fixed-time``, ``sphere-hit``, ``barrier-hit``, ``composite``.
    horizon : stop at this time at the latest (``inf`` for none).
    ring_radii, thresholds, orientation : stop at the first crossing of ring
        ``j`` at a point ``z`` with ``cos(ref, z) > thresholds[j]`` (normal)
        or ``< thresholds[j]`` (reversed).
    reference : fixed direction for the angular test; ``None`` means the
        path's own start point.
    delay_prob, delay_radius : randomization; at the first contained hit the
        path continues with probability ``delay_prob`` and ignores the
        barrier until it is ``delay_radius`` away from that hit.
    anchor : a pending ignore-window centre (continuations of delayed rules).
    common_radii, common_probs : stop at time 0 with probability
        ``common_probs[k]`` when the start radius equals ``common_radii[k]``.
    mirror : ``(normal, offset, p)``; on first hitting that hyperplane keep the
        rule with probability ``p``, else use its mirror image.
    universe : radius of the confining ball (may instead come from the
        simulation parameters).
    """

    kind: str
    horizon: float = math.inf
    ring_radii: tuple = ()
    thresholds: tuple = ()
    orientation: int = NORMAL
    reference: Optional[tuple] = None
    delay_prob: float = 0.0
    delay_radius: float = 0.0
    anchor: Optional[tuple] = None
    common_radii: tuple = ()
    common_probs: tuple = ()
    mirror: Optional[tuple] = None
    universe: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}")
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("ring_radii", _tuple(self.ring_radii))
        set_("thresholds", _tuple(self.thresholds))
        set_("common_radii", _tuple(self.common_radii))
        set_("common_probs", _tuple(self.common_probs))
        if self.reference is not None:
            set_("reference", _tuple(self.reference))
        if self.anchor is not None:
            set_("anchor", _tuple(self.anchor))
        if len(self.ring_radii) != len(self.thresholds):
            raise ValueError("ring_radii and thresholds differ in length")
        if any(r <= 0 for r in self.ring_radii) or any(np.diff(self.ring_radii) <= 0):
            raise ValueError("ring radii must be positive and strictly increasing")
        if any(not -1.0 <= b <= 1.0 for b in self.thresholds):
            raise ValueError("thresholds must lie in [-1, 1]")
        if self.orientation not in (NORMAL, REVERSED):
            raise ValueError("orientation must be NORMAL (1) or REVERSED (-1)")
        if not self.horizon >= 0:
            raise ValueError("horizon must be nonnegative")
        if not 0.0 <= self.delay_prob <= 1.0:
            raise ValueError("delay_prob must lie in [0, 1]")
        if (self.delay_prob > 0 or self.anchor is not None) and not self.delay_radius > 0:
            raise ValueError("delayed rules need a positive delay_radius")
        if len(self.common_radii) != len(self.common_probs):
            raise ValueError("common_radii and common_probs differ in length")
        if any(not 0.0 <= p <= 1.0 for p in self.common_probs):
            raise ValueError("common stop probabilities must lie in [0, 1]")
        if self.mirror is not None:
            n, off, p = self.mirror
            n = np.asarray(n, dtype=float)
            if abs(np.linalg.norm(n) - 1.0) > 1e-9:
                raise ValueError("mirror normal must be a unit vector")
            if not 0.0 <= p <= 1.0:
                raise ValueError("mirror probability must lie in [0, 1]")
            set_("mirror", (_tuple(n), float(off), float(p)))
        if self.universe is not None and not self.universe > 0:
            raise ValueError("universe radius must be positive")

    @classmethod
    def fixed_time(cls, t, **kw):
        return cls("fixed-time", horizon=float(t), **kw)

    @classmethod
    def immediate(cls, **kw):
        return cls("fixed-time", horizon=0.0, **kw)

    @classmethod
    def sphere_hit(cls, radius, **kw):
        return cls("sphere-hit", ring_radii=(float(radius),), thresholds=(-1.0,), **kw)

    @classmethod
    def barrier_hit(cls, radii, thresholds, orientation=NORMAL, **kw):
        return cls("barrier-hit", ring_radii=radii, thresholds=thresholds, orientation=orientation, **kw)

    @property
    def is_immediate(self):
        return self.horizon == 0.0

    @property
    def randomized(self):
        """True when some decision depends on an independent coin."""
        coins = self.delay_prob > 0 or any(0 < p < 1 for p in self.common_probs)
        return coins or (self.mirror is not None and 0 < self.mirror[2] < 1)

    def common_probability(self, radius):
        """Time-0 stop probability for starts of the given radius."""
        r = np.asarray(radius, dtype=float)
        out = np.zeros(r.shape)
        for rk, pk in zip(self.common_radii, self.common_probs):
            out[np.abs(r - rk) <= 1e-9 * max(1.0, rk)] = pk
        return out


@dataclass(frozen=True)
class SimParams:
    """Simulation knobs. ``h`` is the Euler time step (default ``(R / 1000)^2``)."""

    paths: int
    h: Optional[float] = None
    universe: Optional[float] = None
    max_steps: int = 10_000
    wos_mult: float = 4.0
    threads: Optional[int] = None
    record: bool = False
    backend: Optional[str] = None

    def __post_init__(self):
        if int(self.paths) < 1:
            raise ValueError("path count must be positive")
        if self.h is not None and not self.h > 0:
            raise ValueError("step size h must be positive")
        if self.universe is not None and not self.universe > 0:
            raise ValueError("universe radius must be positive")
        if int(self.max_steps) < 1:
            raise ValueError("max_steps must be positive")

    def resolve(self, rule):
        """Return ``(universe, h)`` for this rule."""
        R = self.universe if self.universe is not None else rule.universe
        if R is None:
            raise ValueError("no universe radius given (rule or params)")
        if rule.universe is not None and self.universe is not None and rule.universe != self.universe:
            raise ValueError(f"universe radius conflict: rule {rule.universe} vs params {self.universe}")
        h = self.h if self.h is not None else (R / 1000.0) ** 2
        if self.h is None and math.isfinite(rule.horizon) and rule.horizon > 0:
            # keep fixed-time rules inside the step cap
            h = max(h, rule.horizon / (0.5 * self.max_steps))
        return float(R), float(h)


def worker_count(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("SKB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class StoppedPath:
    start: np.ndarray
    times: Optional[np.ndarray]
    points: Optional[np.ndarray]
    tau: float
    stop: np.ndarray
    cause: str


@dataclass(frozen=True)
class StoppedPathEnsemble:
    """Column-stored ensemble; polylines are kept only when recorded."""

    starts: np.ndarray
    stops: np.ndarray
    tau: np.ndarray
    causes: np.ndarray
    steps: np.ndarray
    seed: int
    rule: StoppingRule
    params: SimParams
    universe: float
    h: float
    path_ids: np.ndarray
    mirrored: np.ndarray
    plane_time: np.ndarray
    common_stopped: np.ndarray
    polylines: Optional[list] = None
    refs: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return self.starts.shape[0]

    @property
    def dimension(self):
        return self.starts.shape[1]

    def __getitem__(self, i):
        times, pts = self.polylines[i] if self.polylines is not None else (None, None)
        return StoppedPath(self.starts[i], times, pts, float(self.tau[i]), self.stops[i],
                           CAUSES[int(self.causes[i])])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def polyline(self, i):
        """Polyline of path ``i``, replayed from its keys if it was not recorded."""
        if self.polylines is not None:
            return self.polylines[i]
        return _replay(self, i)

    def cause_counts(self):
        return {CAUSES[c]: int(np.sum(self.causes == c)) for c in CAUSES}

    def cost_samples(self, alpha):
        return np.linalg.norm(self.stops - self.starts, axis=1) ** alpha

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.dimension
        w.writerow(["path_id"] + [f"start_x{k}" for k in range(d)] + [f"stop_x{k}" for k in range(d)] + ["tau", "cause"])
        for i in range(len(self)):
            w.writerow([int(self.path_ids[i])] + [repr(float(v)) for v in self.starts[i]]
                       + [repr(float(v)) for v in self.stops[i]] + [repr(float(self.tau[i])), CAUSES[int(self.causes[i])]])
        return buf.getvalue()

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def save_polylines(self, path):
        """Binary ``.npz`` dump of every polyline (replays unrecorded paths)."""
        lines = [self.polyline(i) for i in range(len(self))]
        total = sum(t.size for t, _ in lines)
        if total > POLYLINE_WARN_POINTS:
            warnings.warn(f"polyline dump holds {total} points", stacklevel=2)
        offsets = np.concatenate([[0], np.cumsum([t.size for t, _ in lines])])
        np.savez_compressed(path, offsets=offsets,
                            times=np.concatenate([t for t, _ in lines]),
                            points=np.concatenate([p for _, p in lines]))


def load_ensemble_csv(path):
    """Parse an ensemble CSV into ``(path_ids, starts, stops, tau, causes)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    d = sum(1 for h in head if h.startswith("start_x"))
    arr = np.array([[float(v) for v in r[1:-1]] for r in body]).reshape(len(body), 2 * d + 1)
    names = {v: k for k, v in CAUSES.items()}
    ids = np.array([int(r[0]) for r in body])
    return ids, arr[:, :d], arr[:, d:2 * d], arr[:, -1], np.array([names[r[-1]] for r in body])


def _kernel_config(rule, dim, R, h, seed, params):
    plane = None
    offset = 0.0
    if rule.mirror is not None and rule.mirror[2] < 1.0:
        plane = np.array(rule.mirror[0])
        offset = rule.mirror[1]
        if plane.size != dim:
            raise ValueError("mirror normal has the wrong dimension")
    if rule.ring_radii and rule.ring_radii[-1] >= R:
        raise ValueError("barrier rings must lie strictly inside the universe")
    return KernelConfig(
        dim=dim, radii=np.array(rule.ring_radii), thresholds=np.array(rule.thresholds),
        orientation=rule.orientation, universe=R, h=h, seed=int(seed), horizon=rule.horizon,
        wos_mult=params.wos_mult, max_steps=int(params.max_steps), delay_prob=rule.delay_prob,
        delay_radius=rule.delay_radius, plane_normal=plane, plane_offset=offset,
        threads=worker_count(params.threads),
        anchor=None if rule.anchor is None else np.array(rule.anchor))


def _reflect(p, normal, offset):
    n = np.asarray(normal)
    return p - 2.0 * (p @ n - offset)[..., None] * n


def simulate(starts, rule, params, seed, path_ids=None):
    """Run ``rule`` from the given start points; path ``i`` uses key ``path_ids[i]``."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n, d = starts.shape
    R, h = params.resolve(rule)
    if np.any(np.linalg.norm(starts, axis=1) >= R):
        raise MeasureError("start points must lie strictly inside the universe")
    ids = np.arange(n, dtype=np.int64) if path_ids is None else np.asarray(path_ids, dtype=np.int64)
    cfg = _kernel_config(rule, d, R, h, seed, params)
    refs = starts if rule.reference is None else np.tile(np.array(rule.reference), (n, 1))
    kern = _core.get_backend(params.backend)

    ckeys = rng.path_keys(seed, rng.COINS, ids)
    common = np.zeros(n, dtype=bool)
    if rule.common_radii:
        q = rule.common_probability(np.linalg.norm(starts, axis=1))
        common = rng.uniforms(ckeys, np.full(n, _COIN_COMMON)) < q

    stops = starts.copy()
    tau = np.zeros(n)
    causes = np.full(n, RULE, dtype=np.int8)
    steps = np.zeros(n, dtype=np.int64)
    ptime = np.full(n, np.nan)
    run = np.nonzero(~common)[0]
    polylines = [(np.zeros(1), starts[i:i + 1].copy()) for i in range(n)] if params.record else None
    if run.size:
        out = kern.run_paths(cfg, starts[run], refs[run], ids[run], record=params.record)
        stops[run] = out["stop"]
        tau[run] = out["tau"]
        causes[run] = out["cause"]
        steps[run] = out["steps"]
        ptime[run] = out["plane_time"]
        if params.record:
            for k, i in enumerate(run):
                polylines[i] = out["polylines"][k]

    mirrored = np.zeros(n, dtype=bool)
    if cfg.plane_active:
        p = rule.mirror[2]
        coin = rng.uniforms(ckeys, np.full(n, _COIN_MIRROR))
        mirrored = np.isfinite(ptime) & (coin >= p)
        normal, offset = np.array(rule.mirror[0]), rule.mirror[1]
        stops[mirrored] = _reflect(stops[mirrored], normal, offset)
        if params.record:
            for i in np.nonzero(mirrored)[0]:
                t, pts = polylines[i]
                pts = pts.copy()
                after = t > ptime[i]
                pts[after] = _reflect(pts[after], normal, offset)
                polylines[i] = (t, pts)
    for arr in (stops, tau, causes, steps, mirrored, ptime, starts, ids, common):
        arr.setflags(write=False)
    return StoppedPathEnsemble(starts, stops, tau, causes, steps, int(seed), rule, params, R, h, ids,
                               mirrored, ptime, common, polylines, refs)


def _replay(ens, i):
    if ens.common_stopped[i]:
        return np.zeros(1), ens.starts[i:i + 1].copy()
    cfg = _kernel_config(ens.rule, ens.dimension, ens.universe, ens.h, ens.seed, ens.params)
    kern = _core.get_backend(ens.params.backend)
    t, pts = kern.record_path(cfg, ens.starts[i], ens.refs[i], int(ens.path_ids[i]))
    if ens.mirrored[i]:
        pts = pts.copy()
        after = t > ens.plane_time[i]
        pts[after] = _reflect(pts[after], np.array(ens.rule.mirror[0]), ens.rule.mirror[1])
    return t, pts


def simulate_ensemble(mu, rule, params, seed):
    """Paths started from independent draws of ``mu`` and stopped by ``rule``."""
    if not isinstance(mu, RadialMeasure):
        raise TypeError("mu must be a RadialMeasure")
    if mu.mass <= 0:
        raise MeasureError("initial law has no mass")
    R, _ = params.resolve(rule)
    if mu.max_radius() >= R:
        raise MeasureError(f"support of mu reaches radius {mu.max_radius()} >= universe {R}")
    ids = np.arange(int(params.paths), dtype=np.int64)
    starts = sample_starts(mu, rng.path_keys(seed, rng.STARTS, ids))
    return simulate(starts, rule, params, seed, ids)


def stopped_law(ens):
    """Empirical law of the stop points and its radial projection."""
    if len(ens) == 0:
        raise MeasureError("empty ensemble")
    emp = DiscreteMeasure.empirical(ens.stops)
    return emp, symmetrize(emp)


def spherical_martingale_realize(x, radii, count, seed, universe=None):
    """``x + sum_i r_i X_i`` with ``X_i`` i.i.d. uniform on the unit sphere."""
    x = np.asarray(x, dtype=float).reshape(-1)
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    if universe is not None and np.linalg.norm(x) + sum(radii) >= universe:
        raise MeasureError("the nested balls leave the universe")
    if not radii:
        return DiscreteMeasure.dirac(x)
    d = x.size
    keys = rng.path_keys(seed, rng.STEPS, np.arange(int(count)))
    width = 2 * ((d + 1) // 2)
    pts = np.tile(x, (int(count), 1))
    for k, r in enumerate(radii):
        g = rng.normals(keys, np.full(int(count), k * width), d)
        pts += r * g / np.linalg.norm(g, axis=1, keepdims=True)
    return DiscreteMeasure.empirical(pts)


def reflect_and_mix(rule, normal, offset=0.0, p=0.5):
    """On first hitting the hyperplane ``<z, normal> = offset``, keep ``rule``
    with probability ``p`` and switch to its mirror image otherwise.

    The mirror image stops the reflected path at the time the original rule
    stops the unreflected one, so reflection across a hyperplane through the
    origin leaves every stop radius unchanged.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    if rule.mirror is not None:
        raise ValueError("rule already carries a reflect-and-mix stage")
    return replace(rule, mirror=(n, float(offset), float(p)))


def _ring_hits(rule, times, pts, ref, R):
    """Contained ring crossings along a polyline, in time order.

    Returns a list of ``(time, point)``; exits from the universe are reported
    with ``point = None``.
    """
    radii = np.array(rule.ring_radii)
    refn = None if ref is None or not np.any(ref) else ref / np.linalg.norm(ref)
    out = []

    def inside(z, j):
        c = 0.0 if refn is None else float(refn @ z) / radii[j]
        b = rule.thresholds[j]
        if rule.orientation == NORMAL:
            return b <= -1.0 or c > b
        return b >= 1.0 or c < b

    for k in range(len(times)):
        z = pts[k]
        r = np.linalg.norm(z)
        if r >= R * (1 - 1e-12):
            out.append((times[k], None))
        for j in np.nonzero(np.abs(r - radii) <= 1e-9 * np.maximum(radii, 1.0))[0]:
            if inside(z, j):
                out.append((times[k], z))
        if k + 1 == len(times):
            break
        a, b = pts[k], pts[k + 1]
        dl = b - a
        A = dl @ dl
        if A == 0:
            continue
        B = a @ dl
        for j, rj in enumerate(radii):
            disc = B * B - A * (a @ a - rj * rj)
            if disc < 0:
                continue
            for s in ((-B - math.sqrt(disc)) / A, (-B + math.sqrt(disc)) / A):
                if 1e-12 < s < 1 - 1e-12:
                    z = a + s * dl
                    if inside(z, j):
                        out.append((times[k] + s * (times[k + 1] - times[k]), z))
    out.sort(key=lambda e: e[0])
    return out


def conditional_rule(rule, stub, universe=None):
    """Rule governing the continuation after following ``stub`` to its end.

    ``stub`` is a :class:`StoppedPath` (its polyline is used) or a
    ``(times, points)`` pair starting at the original start point. If the rule
    has stopped with certainty on the stub, the result is the immediate rule;
    otherwise it is renormalised on survival.
    """
    if isinstance(stub, StoppedPath):
        times, pts = stub.times, stub.points
    else:
        times, pts = stub
    times = np.asarray(times, dtype=float).reshape(-1)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    s = float(times[-1] - times[0])
    R = universe if universe is not None else rule.universe
    done = StoppingRule.immediate(universe=rule.universe)
    if s >= rule.horizon:
        return done
    new = {}
    if math.isfinite(rule.horizon):
        new["horizon"] = rule.horizon - s
    if s > 0 and rule.common_radii:
        # surviving past time 0 means the time-0 coin said continue
        new["common_radii"], new["common_probs"] = (), ()
    if R is not None and np.any(np.linalg.norm(pts, axis=1) >= R * (1 - 1e-12)):
        return done
    if rule.mirror is not None and rule.mirror[2] < 1.0:
        n, off, _ = rule.mirror
        g = pts @ np.array(n) - off
        if np.any(g[:-1] * g[1:] <= 0) or np.any(g == 0):
            raise ValueError("conditioning a reflect-and-mix rule past its hyperplane is not supported")
    if rule.ring_radii:
        ref = np.array(rule.reference) if rule.reference is not None else pts[0]
        if rule.reference is None:
            new["reference"] = tuple(pts[0])
        armed = rule.anchor is None
        anchor = None if armed else np.array(rule.anchor)
        delayed = not armed
        hits = _ring_hits(rule, times - times[0], pts, ref, R if R is not None else math.inf)
        k = 0
        for i in range(len(times)):
            if not armed and np.linalg.norm(pts[i] - anchor) >= rule.delay_radius:
                armed = True
            while k < len(hits) and hits[k][0] <= times[i] - times[0]:
                tk, z = hits[k]
                k += 1
                if z is None:
                    return done
                if not armed:
                    continue
                if rule.delay_prob > 0 and not delayed:
                    delayed, armed, anchor = True, False, z
                    continue
                return done
        if delayed:
            new["delay_prob"] = 0.0
            new["anchor"] = None if armed else tuple(anchor)
            if armed:
                new["delay_radius"] = 0.0
    return replace(rule, **new)
