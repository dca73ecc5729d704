"""Largest subharmonic minorant by iterated spherical averaging.

Starting from ``f_0 = f`` the iteration

    f_n(x) = min over admissible r of  mean of f_{n-1} over the sphere S(x, r)

decreases to the largest subharmonic function below ``f``. Admissible radii
form a geometric ladder ``rho * 2^-k`` (plus ``r = 0``) with ``rho`` the
distance to the boundary less one grid cell.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

LADDER_DEPTH = 12
GRID_ANGLES = 64
RADIAL_NODES = 32


class DomainError(ValueError):
    """A sphere leaves the universe ball."""


@dataclass(frozen=True)
class GridFunction:
    """Values sampled on a grid over the ball of radius ``radius``.

    ``radial=True``: nodes ``linspace(0, radius, n)`` and ``dimension`` may be
    any d >= 2. Otherwise a square ``n x n`` grid over ``[-radius, radius]^2``.
    """

    values: np.ndarray
    radius: float
    dimension: int = 2
    radial: bool = False
    floor_clamped: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if self.radial:
            if v.ndim != 1 or v.size < 65:
                raise ValueError("radial grids need >= 65 nodes")
        else:
            if self.dimension != 2:
                raise ValueError("full grids are two-dimensional only")
            if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 33:
                raise ValueError("full grids need a square array with >= 33 nodes per axis")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite (clamp -inf first)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, f, radius=1.0, n=101, dimension=2, radial=False, floor=-1e6):
        """Sample ``f`` (taking an array of points ``(..., d)``) on a grid.

        ``-inf`` values are clamped to ``floor`` and flagged.
        """
        if radial:
            r = np.linspace(0.0, radius, n)
            pts = np.zeros((n, dimension))
            pts[:, 0] = r
        else:
            ax = np.linspace(-radius, radius, n)
            X, Y = np.meshgrid(ax, ax, indexing="ij")
            pts = np.stack([X, Y], axis=-1)
        vals = np.asarray(f(pts), dtype=float)
        clamped = bool(np.any(vals < floor))
        vals = np.maximum(vals, floor)
        return cls(vals, float(radius), dimension, radial, clamped)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def spacing(self):
        return (self.radius if self.radial else 2.0 * self.radius) / (self.n - 1)

    def nodes(self):
        if self.radial:
            return np.linspace(0.0, self.radius, self.n)
        ax = np.linspace(-self.radius, self.radius, self.n)
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def node_radius(self):
        if self.radial:
            return self.nodes()
        return np.linalg.norm(self.nodes(), axis=-1)

    def evaluate(self, pts):
        """Interpolate at points: linear in r (radial) or bilinear (2-D)."""
        pts = np.asarray(pts, dtype=float)
        if self.radial:
            r = np.linalg.norm(pts, axis=-1) if pts.ndim and pts.shape[-1] == self.dimension else pts
            return np.interp(r, self.nodes(), self.values)
        h = self.spacing
        u = (pts[..., 0] + self.radius) / h
        v = (pts[..., 1] + self.radius) / h
        i = np.clip(np.floor(u).astype(int), 0, self.n - 2)
        j = np.clip(np.floor(v).astype(int), 0, self.n - 2)
        fu = u - i
        fv = v - j
        F = self.values
        return ((1 - fu) * (1 - fv) * F[i, j] + fu * (1 - fv) * F[i + 1, j]
                + (1 - fu) * fv * F[i, j + 1] + fu * fv * F[i + 1, j + 1])


@dataclass(frozen=True)
class EnvelopeResult:
    function: GridFunction
    iterations: int
    converged: bool
    sup_changes: tuple
    monotone: bool


@dataclass(frozen=True)
class SubharmonicityReport:
    ok: bool
    worst_violation: float
    worst_node: Optional[tuple]

    def __bool__(self):
        return self.ok


def _radial_rule(d, n=RADIAL_NODES):
    # angle theta between the offset and the sphere point has density ~ sin^(d-2)
    x, w = np.polynomial.legendre.leggauss(n)
    th = 0.5 * np.pi * (x + 1.0)
    w = w * np.sin(th) ** (d - 2)
    return np.cos(th), w / w.sum()


def _circle(n=GRID_ANGLES):
    th = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([np.cos(th), np.sin(th)])


def spherical_average(f, x, r):
    """Mean of ``f`` over the sphere of center ``x`` and radius ``r``."""
    x = np.asarray(x, dtype=float)
    a = float(np.linalg.norm(x)) if x.ndim else abs(float(x))
    if a + r > f.radius + 1e-12:
        raise DomainError(f"ball B({a:.6g}, {r:.6g}) leaves the universe of radius {f.radius}")
    if f.radial:
        c, w = _radial_rule(f.dimension)
        return float(np.dot(w, f.evaluate(np.sqrt(np.maximum(a * a + r * r + 2 * a * r * c, 0.0)))))
    return float(np.mean(f.evaluate(x[None, :] + r * _circle())))


def _ladder(f):
    """Per-node admissible radii, shape ``(nodes..., K+1)``; 0 where inadmissible."""
    rho = f.radius - f.node_radius() - f.spacing
    k = 2.0 ** -np.arange(LADDER_DEPTH + 1)
    lad = np.maximum(rho, 0.0)[..., None] * k
    return lad


def _averages(f, values, lad):
    """Sphere means of ``values`` (same grid as ``f``) for every node and ladder radius."""
    g = replace(f, values=values)
    if f.radial:
        c, w = _radial_rule(f.dimension)
        a = f.nodes()[:, None, None]
        r = lad[:, :, None]
        dist = np.sqrt(np.maximum(a * a + r * r + 2 * a * r * c, 0.0))
        return g.evaluate(dist) @ w
    nodes = f.nodes()
    circ = _circle()
    pts = nodes[:, :, None, None, :] + lad[..., None, None] * circ
    return g.evaluate(pts).mean(axis=-1)


def envelope(f, max_iter=50, tol=1e-6):
    """Iterate sphere-mean infima until the sup change drops to ``tol``."""
    lad = _ladder(f)
    cur = f.values
    changes = []
    monotone = True
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        avg = _averages(f, cur, lad)
        # r = 0 is always admissible, so the update never increases a value
        nxt = np.minimum(cur, avg.min(axis=-1))
        monotone &= bool(np.all(nxt <= cur))
        change = float(np.max(np.abs(nxt - cur)))
        changes.append(change)
        cur = nxt
        if change <= tol:
            converged = True
            break
    return EnvelopeResult(replace(f, values=cur), it, converged, tuple(changes), monotone)


def is_subharmonic(f, tol=1e-9, mask=None):
    """Sub-mean-value test at every node (optionally masked) and ladder radius."""
    lad = _ladder(f)
    avg = _averages(f, f.values, lad)
    excess = f.values[..., None] - avg
    excess = np.where(lad > 0, excess, -np.inf)
    worst = excess.max(axis=-1)
    if mask is not None:
        worst = np.where(mask, worst, -np.inf)
    idx = np.unravel_index(int(np.argmax(worst)), worst.shape)
    w = float(worst[idx])
    if not np.isfinite(w):
        return SubharmonicityReport(True, 0.0, None)
    return SubharmonicityReport(w <= tol, max(w, 0.0), tuple(int(i) for i in idx))
