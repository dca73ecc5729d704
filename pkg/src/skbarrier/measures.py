"""Radial and discrete measures, the subharmonic order test and radial laws.

A radially symmetric measure on R^d is stored through its radial law: atoms
``(r_i, w_i)`` meaning mass ``w_i`` spread uniformly on the sphere of radius
``r_i``. Order between radial measures is decided by comparing Newtonian
potentials along a radius grid: for the kernel

    K(r, s) = -log max(r, s)      (d = 2)
    K(r, s) = max(r, s)^(2 - d)   (d >= 3)

``N_m(r) = sum_i w_i K(r, r_i)`` is minus the integral of the subharmonic
test function ``z -> log|z - w|`` (resp. ``-|z - w|^(2-d)``) with ``|w| = r``,
so ``mu`` precedes ``nu`` iff ``N_mu >= N_nu`` everywhere and masses agree.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MASS_TOL = 1e-9
_MERGE_TOL = 1e-12


class MeasureError(ValueError):
    """Raised when a measure violates one of its invariants."""


@dataclass(frozen=True)
class RadialMeasure:
    """Radial law of a rotation-invariant measure.

    Probability measures have total mass 1 (within 1e-9); the sub-probability
    pieces returned by :func:`split_common_mass` are also representable.
    """

    dimension: int
    radii: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if int(self.dimension) < 2:
            raise MeasureError(f"dimension must be >= 2, got {self.dimension}")
        if radii.shape != weights.shape:
            raise MeasureError("radii and weights differ in length")
        if np.any(radii < 0) or not np.all(np.isfinite(radii)):
            raise MeasureError("radii must be finite and nonnegative")
        if np.any(np.diff(radii) <= 0):
            raise MeasureError("radii must be strictly increasing")
        if np.any(weights <= 0):
            raise MeasureError("weights must be positive")
        if weights.sum() > 1.0 + MASS_TOL:
            raise MeasureError(f"total mass {weights.sum()!r} exceeds 1")
        radii.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "dimension", int(self.dimension))
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_atoms(cls, dimension, atoms, probability=True):
        """Build from ``(radius, weight)`` pairs, merging equal radii."""
        atoms = sorted((float(r), float(w)) for r, w in atoms if w > 0)
        radii, weights = [], []
        for r, w in atoms:
            if radii and abs(r - radii[-1]) <= _MERGE_TOL:
                weights[-1] += w
            else:
                radii.append(r)
                weights.append(w)
        m = cls(dimension, np.array(radii), np.array(weights))
        if probability and abs(m.mass - 1.0) > MASS_TOL:
            raise MeasureError(f"weights sum to {m.mass!r}, expected 1")
        return m

    @classmethod
    def sphere(cls, radius, dimension=2):
        """Uniform probability on the sphere of the given radius."""
        return cls(dimension, np.array([float(radius)]), np.array([1.0]))

    @classmethod
    def zero(cls, dimension):
        return cls(dimension, np.empty(0), np.empty(0))

    @property
    def mass(self):
        return float(self.weights.sum())

    @property
    def atoms(self):
        return list(zip(self.radii.tolist(), self.weights.tolist()))

    def is_probability(self):
        return abs(self.mass - 1.0) <= MASS_TOL

    def normalized(self):
        if self.mass <= 0:
            raise MeasureError("cannot normalise the zero measure")
        return RadialMeasure(self.dimension, self.radii, self.weights / self.mass)

    def second_moment(self):
        return float(np.dot(self.weights, self.radii ** 2))

    def max_radius(self):
        return float(self.radii[-1]) if self.radii.size else 0.0

    def cdf(self, r):
        r = np.asarray(r, dtype=float)
        cw = np.concatenate([[0.0], np.cumsum(self.weights)])
        return cw[np.searchsorted(self.radii, r, side="right")]

    def quantile_rings(self, max_rings=64):
        """Coarsen to at most ``max_rings`` atoms by quantile binning.

        Each bin of equal mass is replaced by one atom at its mass-weighted
        mean radius; measures already small enough are returned unchanged.
        """
        if self.radii.size <= max_rings:
            return self
        cw = np.cumsum(self.weights) / self.mass
        edges = np.linspace(0.0, 1.0, max_rings + 1)[1:-1]
        labels = np.searchsorted(edges, cw - 0.5 * self.weights / self.mass)
        atoms = []
        for k in np.unique(labels):
            sel = labels == k
            w = self.weights[sel].sum()
            atoms.append((float(np.dot(self.radii[sel], self.weights[sel]) / w), float(w)))
        return RadialMeasure.from_atoms(self.dimension, atoms, probability=False)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported measure on R^d."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.shape[0]:
            raise MeasureError("points and weights differ in length")
        if pts.shape[1] < 2:
            raise MeasureError("dimension must be >= 2")
        if np.any(w <= 0):
            raise MeasureError("weights must be positive")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise MeasureError(f"weights sum to {w.sum()!r}, expected 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empirical(cls, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))

    @classmethod
    def dirac(cls, point):
        return cls(np.atleast_2d(np.asarray(point, dtype=float)), np.array([1.0]))

    @property
    def dimension(self):
        return self.points.shape[1]

    def barycenter(self):
        return self.weights @ self.points


@dataclass(frozen=True)
class PotentialProfile:
    radii: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class OrderReport:
    ordered: bool
    witness_radius: Optional[float]
    margin: float
    reason: Optional[str] = None
    # kernels are centred at grid radii inside the universe only
    approximation: str = field(default="kernels centred on grid radii within the order grid")


def _kernel(r, s, d):
    """Radial Newton kernel, +inf where r = s = 0."""
    m = np.maximum(r, s)
    with np.errstate(divide="ignore"):
        if d == 2:
            return -np.log(m)
        return m ** (2.0 - d)


def radial_potential(m, r):
    """Potential ``N_m(r) = sum_i w_i K(r, r_i)``; may be ``+inf`` at r = 0."""
    r = np.asarray(r, dtype=float)
    if m.radii.size == 0:
        return np.zeros_like(r) if r.ndim else 0.0
    vals = _kernel(r[..., None], m.radii, m.dimension)
    out = np.where(np.isinf(vals), np.inf, vals * m.weights).sum(axis=-1)
    return out if out.ndim else float(out)


def potential_profile(m, grid):
    grid = np.asarray(grid, dtype=float)
    return PotentialProfile(grid, np.asarray(radial_potential(m, grid), dtype=float))


def default_order_grid(mu, nu, size=512):
    top = 1.05 * max(mu.max_radius(), nu.max_radius(), 1e-12)
    return np.linspace(0.0, top, size)


def check_order(mu, nu, grid=None, tol=1e-9):
    """Decide ``mu`` precedes ``nu`` in subharmonic order.

    Masses are compared first; then ``N_mu(r) >= N_nu(r) - tol*max(1, |N_nu|)``
    must hold at every grid radius. The witness is the first failing radius.
    """
    if mu.dimension != nu.dimension:
        raise MeasureError(f"dimension mismatch: {mu.dimension} vs {nu.dimension}")
    if abs(mu.mass - nu.mass) > MASS_TOL:
        return OrderReport(False, None, -abs(mu.mass - nu.mass), reason="mass")
    if grid is None:
        grid = default_order_grid(mu, nu)
    grid = np.asarray(grid, dtype=float)
    n_mu = np.asarray(radial_potential(mu, grid), dtype=float)
    n_nu = np.asarray(radial_potential(nu, grid), dtype=float)
    with np.errstate(invalid="ignore"):
        diff = np.where(np.isinf(n_mu) & np.isinf(n_nu), 0.0, n_mu - n_nu)
    slack = tol * np.maximum(1.0, np.where(np.isfinite(n_nu), np.abs(n_nu), 1.0))
    bad = np.nonzero(diff < -slack)[0]
    margin = float(np.min(diff)) if diff.size else 0.0
    if bad.size:
        return OrderReport(False, float(grid[bad[0]]), margin, reason="potential")
    return OrderReport(True, None, margin)


def split_common_mass(mu, nu):
    """Return ``(mu_bar, nu_bar, common)`` with ``common = mu ^ nu`` atomwise.

    Results are sub-probability measures and are not renormalised.
    """
    if mu.dimension != nu.dimension:
        raise MeasureError(f"dimension mismatch: {mu.dimension} vs {nu.dimension}")
    d = mu.dimension
    grid = np.union1d(mu.radii, nu.radii)
    wm = np.zeros_like(grid)
    wn = np.zeros_like(grid)
    wm[np.searchsorted(grid, mu.radii)] = mu.weights
    wn[np.searchsorted(grid, nu.radii)] = nu.weights
    common = np.minimum(wm, wn)

    def build(w):
        keep = w > 1e-15
        return RadialMeasure(d, grid[keep], w[keep])

    return build(wm - common), build(wn - common), build(common)


RADIUS_MERGE = 1e-12


def symmetrize(m):
    """Radial law of a discrete measure: atoms ``(|p_i|, w_i)`` merged by radius."""
    if isinstance(m, RadialMeasure):
        return m
    rad = np.linalg.norm(m.points, axis=1)
    order = np.argsort(rad, kind="stable")
    rs = rad[order]
    # radii equal up to round-off (stops on one ring) form one atom
    new = np.concatenate([[True], np.diff(rs) > RADIUS_MERGE * np.maximum(rs[1:], 1.0)])
    grp = np.cumsum(new) - 1
    uniq = rs[new]
    w = np.bincount(grp, weights=m.weights[order])
    keep = w > 0
    return RadialMeasure(m.dimension, uniq[keep], np.minimum(w[keep], 1.0))


def embed(m, direction=None):
    """Place each radial atom at ``r * direction`` (default first axis)."""
    d = m.dimension
    e = np.zeros(d)
    e[0] = 1.0
    if direction is not None:
        e = np.asarray(direction, dtype=float)
        e = e / np.linalg.norm(e)
    return DiscreteMeasure(np.outer(m.radii, e), m.weights / m.mass)


def radial_w1(a, b):
    """W1 distance between radial laws: integral of ``|F_a - F_b|``."""
    if a.dimension != b.dimension:
        raise MeasureError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    if abs(a.mass - b.mass) > 1e-6:
        raise MeasureError(f"unequal masses {a.mass!r} and {b.mass!r}")
    pts = np.union1d(a.radii, b.radii)
    if pts.size < 2:
        return 0.0
    gap = np.abs(a.cdf(pts[:-1]) - b.cdf(pts[:-1]))
    return float(np.dot(gap, np.diff(pts)))


def r_equivalent(a, b, tol=1e-9):
    """Same modulus pushforward, up to radial W1 ``tol``."""
    if a.dimension != b.dimension:
        raise MeasureError(f"dimension mismatch: {a.dimension} vs {b.dimension}")
    return radial_w1(symmetrize(a), symmetrize(b)) <= tol


def sample_radial(m, n, seed):
    """Draw ``n`` points from the rotation-invariant measure with radial law ``m``."""
    from . import rng

    keys = rng.path_keys(seed, rng.STARTS, np.arange(n))
    return sample_starts(m, keys)


def sample_starts(m, keys):
    """Start points for paths with the given keys (stream ``STARTS``)."""
    from . import rng

    keys = np.asarray(keys, dtype=np.uint64)
    u = rng.uniforms(keys, np.zeros(keys.shape[0], dtype=np.int64))
    cw = np.cumsum(m.weights) / m.mass
    idx = np.minimum(np.searchsorted(cw, u, side="right"), m.radii.size - 1)
    g = rng.normals(keys, np.ones(keys.shape[0], dtype=np.int64), m.dimension)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return m.radii[idx, None] * g


def sphere_rule(d, n):
    """Quadrature nodes/weights for the uniform measure on the unit sphere.

    Exact for polynomials of degree < n in d = 2 (trapezoid) and for
    degree < n in d = 3 (Gauss-Legendre in cos(theta) x trapezoid in phi).
    Higher dimensions fall back to a fixed normalised-Gaussian sample.
    """
    if d == 2:
        th = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(th), np.sin(th)]), np.full(n, 1.0 / n)
    if d == 3:
        x, w = np.polynomial.legendre.leggauss(n // 2 + 1)
        ph = 2.0 * np.pi * np.arange(n) / n
        st = np.sqrt(1.0 - x ** 2)
        pts = np.stack([np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)),
                        np.outer(x, np.ones(n))], axis=-1).reshape(-1, 3)
        ww = np.outer(w / 2.0, np.full(n, 1.0 / n)).reshape(-1)
        return pts, ww
    g = np.random.default_rng(12345).standard_normal((n * n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g, np.full(n * n, 1.0 / (n * n))


def integrate(m, f, n=128):
    """Integrate ``f`` (vectorised over rows of points) against ``m``."""
    if isinstance(m, DiscreteMeasure):
        return float(np.dot(m.weights, f(m.points)))
    pts, w = sphere_rule(m.dimension, n)
    total = 0.0
    for r, wr in zip(m.radii, m.weights):
        total += wr * float(np.dot(w, f(r * pts)))
    return total
