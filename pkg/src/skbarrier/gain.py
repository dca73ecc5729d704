"""Cost |x - y|^alpha, the gain function and its derivative kernel."""
from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure, MeasureError, symmetrize, radial_w1

SINGULAR_RADIUS = 1e-8
ALPHA_GAP = 1e-3


class SingularityError(ValueError):
    pass


@dataclass(frozen=True)
class CostSpec:
    alpha: float
    dimension: int = 2
    objective: str = "min"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.alpha == 2:
            raise ValueError("alpha = 2 is degenerate (every embedding has the same cost)")
        if self.objective not in ("min", "max"):
            raise ValueError(f"objective must be 'min' or 'max', got {self.objective!r}")
        if int(self.dimension) < 2:
            raise ValueError("dimension must be >= 2")

    @property
    def minimize(self):
        return self.objective == "min"

    def check_solvable(self):
        if abs(self.alpha - 2.0) < ALPHA_GAP:
            raise ValueError(f"|alpha - 2| < {ALPHA_GAP}: refusing to solve near the degenerate case")


@dataclass(frozen=True)
class GainReport:
    value: float
    gradient: np.ndarray
    method: str = "exact-sum"


def cost(x, y, alpha):
    """``|x - y|^alpha``, vectorised over leading axes."""
    if isinstance(alpha, CostSpec):
        alpha = alpha.alpha
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return np.linalg.norm(diff, axis=-1) ** alpha


def _grad_cost(x, z, alpha):
    """Gradient in x of |x - z|^alpha, rows of z."""
    diff = np.asarray(x, dtype=float) - np.asarray(z, dtype=float)
    n = np.linalg.norm(diff, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = alpha * n ** (alpha - 2.0) * diff
    return np.where(n > 0, g, 0.0)


def gain(x, psi, spec, center=None, tol=1e-6):
    """Increase of expected cost seen from ``x`` when a Dirac at ``y`` spreads to ``psi``.

    ``G(x, psi) = sum_z psi(z) |x - z|^a - |x - y|^a`` with ``y`` the barycenter
    of ``psi``; returns a :class:`GainReport` holding the value and the
    x-gradient.
    """
    alpha = spec.alpha if isinstance(spec, CostSpec) else float(spec)
    y = psi.barycenter()
    if center is not None and np.linalg.norm(y - np.asarray(center, dtype=float)) > tol:
        raise MeasureError(f"barycenter {y} differs from declared center {center}")
    if center is not None:
        y = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float)
    if psi.points.shape[0] == 1 and np.allclose(psi.points[0], y, rtol=0, atol=0):
        return GainReport(0.0, np.zeros_like(x))
    value = float(psi.weights @ cost(x, psi.points, alpha) - cost(x, y, alpha))
    grad = psi.weights @ _grad_cost(x, psi.points, alpha) - _grad_cost(x, y[None], alpha)[0]
    return GainReport(value, grad)


def pair_cost(x, psi, x2, y2, alpha):
    """``C(x -> psi : x2 -> y2) = int c(x, z) dpsi(z) + c(x2, y2)``."""
    return float(psi.weights @ cost(x, psi.points, alpha) + cost(x2, y2, alpha))


def h_kernel(z, spec):
    """Derivative of ``c(x, z)`` in ``x_d`` at ``x = 0``: ``-a |z|^(a-2) z_d``."""
    alpha = spec.alpha if isinstance(spec, CostSpec) else float(spec)
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z, axis=-1)
    if np.any(r < SINGULAR_RADIUS):
        raise SingularityError("h_kernel is singular at z = 0")
    return -alpha * r ** (alpha - 2.0) * z[..., -1]


def laplacian_h(z, spec):
    """``-a (a - 2) (a + d - 2) |z|^(a - 4) z_d``."""
    alpha = spec.alpha if isinstance(spec, CostSpec) else float(spec)
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    r = np.linalg.norm(z, axis=-1)
    if np.any(r < SINGULAR_RADIUS):
        raise SingularityError("laplacian_h is singular at z = 0")
    return -alpha * (alpha - 2.0) * (alpha + d - 2.0) * r ** (alpha - 4.0) * z[..., -1]


def gain_extremes(x, family, spec, tol=1e-6):
    """Exact min/max of the gain over a finite R-equivalence class.

    Returns ``(lower, argmin, upper, argmax)``. Every member must share the
    barycenter and the radial law of the first one.
    """
    if not family:
        raise MeasureError("empty family")
    y = family[0].barycenter()
    ref = symmetrize(family[0])
    for k, psi in enumerate(family[1:], 1):
        if np.linalg.norm(psi.barycenter() - y) > tol:
            raise MeasureError(f"member {k} has a different barycenter")
        if radial_w1(symmetrize(psi), ref) > tol:
            raise MeasureError(f"member {k} is not R-equivalent to member 0")
    values = np.array([gain(x, psi, spec, center=y).value for psi in family])
    lo, hi = int(np.argmin(values)), int(np.argmax(values))
    return float(values[lo]), lo, float(values[hi]), hi
