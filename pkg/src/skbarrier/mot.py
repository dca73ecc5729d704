"""Discretized subharmonic martingale transport on a polar grid.

Primal, over plans ``pi[x, y] >= 0`` between grid cells:

    minimize   sum c(x, y) pi[x, y]
    subject to row sums = mu cells, column sums = nu cells,
               sum_y pi[x, y] (phi_k(y) - phi_k(x)) >= 0   for every x, kernel k,
               sum_y pi[x, y] (y - x) = 0                  for every x.

The dual feasible set is ``beta(y) - alpha(x) + p(x, y) <= c(x, y)`` with
``p = sum_k lam_k (phi_k(y) - phi_k(x)) + eta . (y - x)`` and ``lam >= 0``.
A finite kernel family truncates the subharmonic cone, so the primal value
is a relaxation of the continuous problem.
"""
import csv
import functools
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, sparse

from .envelope import GridFunction, is_subharmonic
from .gain import CostSpec
from .measures import MeasureError, RadialMeasure

RESIDUAL_TOL = 1e-8
TOLS = 1e-7
DEFAULT_RADII = 12
DEFAULT_ANGLES = 24
SUBHARMONIC_GRID = 49
AC_CAVEAT = ("marginals are atomic radial laws; the LP discretizes the absolutely continuous case "
             "assumed by the plan characterization")


@dataclass(frozen=True)
class Grid:
    """Polar cells: radius 0 (if present) is one cell, other radii carry ``angles`` cells."""

    radii: np.ndarray
    angles: int
    universe: float
    mu_weights: np.ndarray
    nu_weights: np.ndarray
    n_base: int = DEFAULT_RADII
    dimension: int = 2

    def __post_init__(self):
        if self.dimension != 2:
            raise ValueError("the transport grid is two-dimensional")
        for name in ("mu_weights", "nu_weights"):
            w = getattr(self, name)
            if abs(w.sum() - 1.0) > 1e-9:
                raise MeasureError(f"{name} sum to {w.sum()!r}, expected 1")

    @property
    def centers(self):
        pts = []
        th = 2 * np.pi * np.arange(self.angles) / self.angles
        for r in self.radii:
            if r == 0:
                pts.append(np.zeros((1, 2)))
            else:
                pts.append(np.column_stack([r * np.cos(th), r * np.sin(th)]))
        return np.concatenate(pts)

    @property
    def size(self):
        return self.centers.shape[0]

    @property
    def support_radius(self):
        w = np.repeat([1 if r == 0 else self.angles for r in self.radii], 1)
        r = np.repeat(self.radii, w)
        live = (self.mu_weights > 0) | (self.nu_weights > 0)
        return float(r[live].max())

    @property
    def cell_radius(self):
        """Radial spacing of the base grid (the kernel clamping radius)."""
        return self.universe / self.n_base


def _cell_weights(m, radii, angles):
    w = []
    for r in radii:
        k = np.nonzero(np.abs(m.radii - r) <= 1e-12 * max(1.0, r))[0]
        mass = float(m.weights[k].sum()) if k.size else 0.0
        w.append(np.array([mass]) if r == 0 else np.full(angles, mass / angles))
    return np.concatenate(w)


def make_grid(mu, nu, universe=None, n_radii=DEFAULT_RADII, angles=DEFAULT_ANGLES):
    """Base radii ``(i + 1/2) R / n`` with the support radii of both marginals inserted."""
    if mu.dimension != 2 or nu.dimension != 2:
        raise ValueError("the transport grid is two-dimensional")
    R = float(universe) if universe is not None else 1.5 * max(mu.max_radius(), nu.max_radius())
    if max(mu.max_radius(), nu.max_radius()) >= R:
        raise MeasureError("marginal support must lie inside the universe")
    base = (np.arange(n_radii) + 0.5) * R / n_radii
    radii = np.union1d(base, np.concatenate([mu.radii, nu.radii]))
    keep = np.concatenate([[True], np.diff(radii) > 1e-12])
    radii = radii[keep]
    return Grid(radii, int(angles), R, _cell_weights(mu.normalized(), radii, angles),
                _cell_weights(nu.normalized(), radii, angles), int(n_radii))


@dataclass(frozen=True)
class TestFunction:
    kind: str  # "kernel" or "coordinate"
    values: np.ndarray
    center: Optional[np.ndarray] = None
    clamp: float = 0.0
    axis: Optional[int] = None


@dataclass(frozen=True)
class TestFunctionFamily:
    members: tuple
    subharmonic_tol: float = 0.0

    @property
    def kernels(self):
        return [m for m in self.members if m.kind == "kernel"]

    @property
    def coordinates(self):
        return [m for m in self.members if m.kind == "coordinate"]

    def __len__(self):
        return len(self.members)


def _halton(k, base):
    f, r = 1.0, 0.0
    while k > 0:
        f /= base
        r += f * (k % base)
        k //= base
    return r


def kernel_centers(count, radius):
    """Nested centre sequence: the origin, then Halton points in the disk of ``radius``."""
    out = [np.zeros(2)]
    k = 1
    while len(out) < count:
        rad = 0.95 * radius * math.sqrt(_halton(k, 2))
        th = 2 * math.pi * _halton(k, 3)
        out.append(np.array([rad * math.cos(th), rad * math.sin(th)]))
        k += 1
    return np.array(out[:count])


def clamped_log(points, center, clamp):
    return np.log(np.maximum(np.linalg.norm(np.asarray(points) - center, axis=-1), clamp))


@functools.lru_cache(maxsize=4096)
def _kernel_check(wx, wy, rho, universe):
    """(tolerance, worst excess) of the sub-mean-value test away from the clamp disk."""
    w = np.array([wx, wy])
    f = GridFunction.from_callable(lambda p: clamped_log(p, w, rho), universe, SUBHARMONIC_GRID)
    tol = f.spacing ** 2 / (4 * rho * rho)
    mask = np.linalg.norm(f.nodes() - w, axis=-1) >= 2 * rho
    return tol, is_subharmonic(f, tol=np.inf, mask=mask).worst_violation


def build_test_family(grid, centers, check=True):
    """``centers`` clamped log kernels plus the two coordinate functions.

    Centres lie in the disk spanned by the marginal supports: outside it a
    kernel is harmonic on every support cell and only adds harmonic-moment
    equalities that a finite angular grid cannot reproduce exactly.

    With ``check`` every kernel is sampled on a square grid over the
    universe and must pass the discrete sub-mean-value test away from its
    centre, to within the bilinear interpolation bound ``h^2 / (4 rho^2)``.
    """
    if int(centers) < 1:
        raise ValueError("need at least one kernel centre")
    rho = grid.cell_radius
    pts = grid.centers
    members = []
    tol = 0.0
    for w in kernel_centers(int(centers), grid.support_radius):
        if check:
            tol, worst = _kernel_check(float(w[0]), float(w[1]), float(rho), float(grid.universe))
            if worst > tol:
                raise AssertionError(f"kernel at {w} fails the discrete subharmonicity test by {worst}")
        members.append(TestFunction("kernel", clamped_log(pts, w, rho), w, rho))
    for i in range(2):
        members.append(TestFunction("coordinate", pts[:, i].copy(), axis=i))
    return TestFunctionFamily(tuple(members), tol)


@dataclass
class TransportPlan:
    status: str  # "optimal" | "infeasible" | "error"
    grid: Grid
    x_cells: np.ndarray
    y_cells: np.ndarray
    weights: Optional[np.ndarray]
    primal: float
    dual: float = math.nan
    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None
    residuals: dict = field(default_factory=dict)
    family_size: int = 0
    objective: str = "min"
    violated: Optional[dict] = None
    message: str = ""

    @property
    def feasible(self):
        return self.status == "optimal"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x_cell", "y_cell", "weight"])
        if self.weights is not None:
            for a, b in zip(*np.nonzero(self.weights > 0)):
                w.writerow([int(self.x_cells[a]), int(self.y_cells[b]), repr(float(self.weights[a, b]))])
        return buf.getvalue()

    def potential(self, rows, ys):
        """``p(x, y) = sum_k lam_k (phi_k(y) - phi_k(x)) + eta(x) . (y - x)``; ``rows`` index the support of mu."""
        pts = self.grid.centers
        F = self._kernel_values
        xs = self.x_cells[rows]
        out = np.zeros((len(rows), len(ys)))
        if F.shape[0]:
            out += np.einsum("ak,kab->ab", self.lam[rows], F[:, ys][:, None, :] - F[:, xs][:, :, None])
        return out + np.einsum("ai,abi->ab", self.eta[rows], pts[ys][None, :, :] - pts[xs][:, None, :])

    def full_dual(self, cost):
        """Extend alpha/beta to every grid cell keeping the dual constraint."""
        n = self.grid.size
        alpha = np.full(n, np.nan)
        beta = np.full(n, np.nan)
        alpha[self.x_cells] = self.alpha
        beta[self.y_cells] = self.beta
        rest = np.setdiff1d(np.arange(n), self.y_cells)
        if rest.size:
            rows = np.arange(self.x_cells.size)
            slack = cost[np.ix_(self.x_cells, rest)] - self.potential(rows, rest) + self.alpha[:, None]
            beta[rest] = slack.min(axis=0) if self.objective == "min" else slack.max(axis=0)
        rest = np.setdiff1d(np.arange(n), self.x_cells)
        if rest.size:
            gap = beta[None, :] - cost[rest, :]
            alpha[rest] = gap.max(axis=1) if self.objective == "min" else gap.min(axis=1)
        return alpha, beta


def cost_matrix(points, alpha):
    diff = points[:, None, :] - points[None, :, :]
    return np.linalg.norm(diff, axis=-1) ** alpha


def _assemble(grid, family, X, Y):
    """Constraint blocks over variables ``pi[a, b]`` (a over X, b over Y), row-major."""
    nx, ny = X.size, Y.size
    nv = nx * ny
    rows = sparse.kron(sparse.identity(nx), np.ones((1, ny)), format="csr")
    cols = sparse.kron(np.ones((1, nx)), sparse.identity(ny), format="csr")
    ker = family.kernels
    K = len(ker)
    F = np.array([m.values for m in ker]) if K else np.zeros((0, grid.size))
    # kernel rows: -(phi_k(y) - phi_k(x)) summed over y <= 0, one per (x, k)
    D = F[:, Y][:, None, :] - F[:, X][:, :, None]  # (K, nx, ny)
    data = -np.transpose(D, (1, 0, 2)).reshape(nx * K, ny)
    ri = np.repeat(np.arange(nx * K), ny)
    ci = (np.repeat(np.arange(nx), K)[:, None] * ny + np.arange(ny)[None, :]).reshape(-1)
    Aub = sparse.csr_matrix((data.reshape(-1), (ri, ci)), shape=(nx * K, nv))
    pts = grid.centers
    coords = []
    for i in range(2):
        d = pts[Y, i][None, :] - pts[X, i][:, None]
        coords.append(sparse.csr_matrix((d.reshape(-1), (np.repeat(np.arange(nx), ny),
                                                        np.arange(nv))), shape=(nx, nv)))
    return rows, cols, Aub, sparse.vstack(coords, format="csr"), D


def assemble_and_solve(mu, nu, spec, universe=None, n_radii=DEFAULT_RADII, angles=DEFAULT_ANGLES,
                       centers=16, grid=None, family=None, check_family=True):
    """Build the grid and test family, then solve the primal LP with HiGHS."""
    if mu.dimension != nu.dimension:
        raise MeasureError("dimension mismatch")
    if not isinstance(spec, CostSpec):
        raise TypeError("expected a CostSpec")
    spec.check_solvable()
    grid = grid or make_grid(mu, nu, universe, n_radii, angles)
    family = family or build_test_family(grid, centers, check=check_family)
    X = np.nonzero(grid.mu_weights > 0)[0]
    Y = np.nonzero(grid.nu_weights > 0)[0]
    nx, ny = X.size, Y.size
    C = cost_matrix(grid.centers, spec.alpha)
    c = C[np.ix_(X, Y)].reshape(-1)
    sgn = 1.0 if spec.minimize else -1.0
    rows, cols, Aub, Acoord, D = _assemble(grid, family, X, Y)
    Aeq = sparse.vstack([rows, cols, Acoord], format="csr")
    beq = np.concatenate([grid.mu_weights[X], grid.nu_weights[Y], np.zeros(2 * nx)])
    bub = np.zeros(Aub.shape[0])
    opts = dict(primal_feasibility_tolerance=TOLS, dual_feasibility_tolerance=TOLS)
    res = optimize.linprog(sgn * c, A_ub=Aub, b_ub=bub, A_eq=Aeq, b_eq=beq, bounds=(0, None),
                           method="highs", options=opts)
    base = dict(grid=grid, x_cells=X, y_cells=Y, family_size=len(family), objective=spec.objective)
    if res.status == 2:
        return TransportPlan("infeasible", weights=None, primal=math.nan,
                             violated=_diagnose(grid, family, X, Y, Aub, Aeq, beq), message=res.message, **base)
    if res.status != 0:
        return TransportPlan("error", weights=None, primal=math.nan, message=res.message, **base)
    pi = np.maximum(res.x, 0.0).reshape(nx, ny)
    primal = float(C[np.ix_(X, Y)].reshape(-1) @ pi.reshape(-1))
    K = len(family.kernels)
    # marginals are d(objective)/d(rhs); the objective was multiplied by sgn
    u = sgn * res.eqlin.marginals
    a_row, b_col, w_coord = u[:nx], u[nx:nx + ny], u[nx + ny:].reshape(2, nx).T
    lam = -sgn * res.ineqlin.marginals.reshape(nx, K) if K else np.zeros((nx, 0))
    # lam >= 0 (min) or <= 0 (max) makes sum_y pi p <= 0 resp. >= 0 for every admissible plan
    lam = sgn * np.maximum(sgn * lam, 0.0)
    alpha = -a_row
    beta = b_col.copy()
    pts = grid.centers
    P = (np.einsum("ak,kab->ab", lam, D) if K else 0.0) \
        + np.einsum("ai,abi->ab", w_coord, pts[Y][None, :, :] - pts[X][:, None, :])
    slack = beta[None, :] - alpha[:, None] + P - C[np.ix_(X, Y)]
    # certify: shift alpha so that every pair satisfies the dual constraint
    if spec.minimize:
        alpha = alpha + np.maximum(slack.max(axis=1), 0.0)
    else:
        alpha = alpha + np.minimum(slack.min(axis=1), 0.0)
    dual = float(beta @ grid.nu_weights[Y] - alpha @ grid.mu_weights[X])
    kres = np.einsum("ab,kab->ak", pi, D) if K else np.zeros((nx, 0))
    resid = dict(
        row=float(np.max(np.abs(pi.sum(axis=1) - grid.mu_weights[X]))),
        col=float(np.max(np.abs(pi.sum(axis=0) - grid.nu_weights[Y]))),
        kernel_min=float(kres.min()) if K else 0.0,
        coordinate=float(np.max(np.abs(Acoord @ pi.reshape(-1)))),
        dual_max_violation=float((sgn * (beta[None, :] - alpha[:, None] + P - C[np.ix_(X, Y)])).max()),
    )
    plan = TransportPlan("optimal", weights=pi, primal=primal, dual=dual, alpha=alpha, beta=beta, lam=lam,
                         eta=w_coord, residuals=resid, **base)
    plan._kernel_values = np.array([m.values for m in family.kernels]).reshape(K, grid.size)
    return plan


def _diagnose(grid, family, X, Y, Aub, Aeq, beq):
    """Elastic LP: add slack to every kernel row and report the most violated kernel."""
    nv = Aub.shape[1]
    m = Aub.shape[0]
    K = len(family.kernels)
    if K == 0:
        return dict(family="marginal/martingale", kernel=None)
    A_ub = sparse.hstack([Aub, -sparse.identity(m)], format="csr")
    A_eq = sparse.hstack([Aeq, sparse.csr_matrix((Aeq.shape[0], m))], format="csr")
    cost = np.concatenate([np.zeros(nv), np.ones(m)])
    res = optimize.linprog(cost, A_ub=A_ub, b_ub=np.zeros(m), A_eq=A_eq, b_eq=beq, bounds=(0, None),
                           method="highs")
    if res.status != 0:
        return dict(family="marginal/martingale", kernel=None, message=res.message)
    s = res.x[nv:].reshape(X.size, K).sum(axis=0)
    k = int(np.argmax(s))
    ker = family.kernels[k]
    return dict(family="kernel", kernel=k, center=[float(v) for v in ker.center], clamp=float(ker.clamp),
                total_slack=float(res.fun), kernel_slack=[float(v) for v in s])


def duality_report(plan, sep_estimate, rel_tol=0.10):
    """Primal, certified dual and Monte Carlo embedding value side by side."""
    sep, sep_se = (float(v) for v in sep_estimate)
    out = dict(status=plan.status, objective=plan.objective, family_size=plan.family_size,
               grid_radii=int(plan.grid.radii.size), grid_angles=int(plan.grid.angles),
               primal=plan.primal, dual=plan.dual, sep=sep, sep_stderr=sep_se,
               sep_ci=[sep - 1.96 * sep_se, sep + 1.96 * sep_se], residuals=dict(plan.residuals),
               caveat=AC_CAVEAT)
    if not plan.feasible:
        out.update(gap=math.nan, weak_duality=False, sep_consistent=False, violated=plan.violated)
        return out
    gap = plan.primal - plan.dual if plan.objective == "min" else plan.dual - plan.primal
    scale = max(abs(sep), 1e-12)
    out.update(gap=gap, weak_duality=bool(gap >= -1e-8),
               relative_difference=abs(plan.primal - sep) / scale,
               sep_consistent=bool(abs(plan.primal - sep) <= rel_tol * scale + 3 * sep_se))
    return out


def report_json(report):
    return json.dumps(report, indent=2, sort_keys=True, default=float)
