"""Rotation-equivariant hitting barriers and a stochastic solver for them.

A barrier is a list of rings ``|z| = r_j`` with cosine thresholds ``beta_j``.
For a path started at ``x`` the stopping set on ring ``j`` is

    normal:    cos(x, z) > beta_j      (the arc facing the start)
    reversed:  cos(x, z) < beta_j      (the arc turned away from it)

so rotating the start rotates the stopping set with it.
"""
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ._core import NORMAL, REVERSED, RULE
from .brownian import SimParams, StoppingRule, simulate, simulate_ensemble
from .gain import CostSpec
from .measures import MeasureError, RadialMeasure, check_order, radial_w1, split_common_mass, symmetrize

ORIENTATION_NAMES = {NORMAL: "normal", REVERSED: "reversed"}
DEFAULT_HALF_WIDTH = 1e-6
THETA_MIN = 1e-7


class OrderError(ValueError):
    """The marginals are not in subharmonic order."""

    def __init__(self, report):
        super().__init__(f"mu does not precede nu (witness radius {report.witness_radius})")
        self.report = report


def full_threshold(orientation):
    """Threshold that makes a ring stop everything."""
    return -1.0 if orientation == NORMAL else 1.0


@dataclass(frozen=True)
class Barrier:
    radii: np.ndarray
    thresholds: np.ndarray
    orientation: int
    universe: float
    half_width: float = DEFAULT_HALF_WIDTH

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        b = np.asarray(self.thresholds, dtype=float).reshape(-1)
        if r.shape != b.shape:
            raise ValueError("radii and thresholds differ in length")
        if np.any(r <= 0) or np.any(np.diff(r) <= 0):
            raise ValueError("radii must be positive and strictly increasing")
        if r.size and r[-1] >= self.universe:
            raise ValueError("rings must lie inside the universe")
        if np.any(b < -1) or np.any(b > 1):
            raise ValueError("thresholds must lie in [-1, 1]")
        if self.orientation not in (NORMAL, REVERSED):
            raise ValueError("orientation must be NORMAL or REVERSED")
        if self.orientation == NORMAL and b.size and b[-1] != -1.0:
            raise ValueError("a normal barrier must close its outermost ring (threshold -1)")
        r.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "thresholds", b)

    @property
    def orientation_name(self):
        return ORIENTATION_NAMES[self.orientation]

    def bands(self):
        """Half-width of the detection band around each ring."""
        hw = np.full(self.radii.size, float(self.half_width))
        if self.radii.size > 1:
            gaps = np.diff(self.radii) / 2.0
            hw[:-1] = np.maximum(hw[:-1], gaps)
            hw[1:] = np.maximum(hw[1:], gaps)
        return hw

    def threshold_at(self, radius):
        """Linear interpolation of the thresholds in radius (NaN outside every band)."""
        radius = np.asarray(radius, dtype=float)
        hw = self.bands()
        inband = np.zeros(radius.shape, dtype=bool)
        for r, w in zip(self.radii, hw):
            inband |= np.abs(radius - r) <= w
        beta = np.interp(radius, self.radii, self.thresholds)
        return np.where(inband, beta, np.nan)

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# orientation={self.orientation_name}\n")
        buf.write(f"# universe_radius={self.universe!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["radius", "beta"])
        for r, b in zip(self.radii, self.thresholds):
            w.writerow([repr(float(r)), repr(float(b))])
        return buf.getvalue()

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def load_csv(cls, path):
        meta, rows = {}, []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    meta[k.strip()] = v.strip()
                elif line and not line.startswith("radius"):
                    r, b = line.split(",")
                    rows.append((float(r), float(b)))
        names = {v: k for k, v in ORIENTATION_NAMES.items()}
        arr = np.array(rows).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], names[meta["orientation"]], float(meta["universe_radius"]))


def barrier_contains(b, x, z):
    """True iff ``z`` lies in the stopping set seen from start ``x``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    nx = np.linalg.norm(x)
    if nx == 0:
        raise ValueError("start direction undefined at x = 0")
    nz = np.linalg.norm(z, axis=-1)
    beta = b.threshold_at(nz)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (z @ x) / (nz * nx)
        # a full ring contains its antipode too, as in the path kernel
        if b.orientation == NORMAL:
            hit = (c > beta) | (beta <= -1.0)
        else:
            hit = (c < beta) | (beta >= 1.0)
    out = np.where(np.isnan(beta), False, hit)
    return bool(out) if out.ndim == 0 else out


def hitting_rule(b, reference=None):
    """First entry into the barrier, truncated at the universe sphere."""
    return StoppingRule.barrier_hit(b.radii, b.thresholds, b.orientation, universe=b.universe,
                                    reference=reference)


def select_orientation(spec):
    """Normal for (min, alpha < 2) and (max, alpha > 2); reversed otherwise."""
    if not isinstance(spec, CostSpec):
        raise TypeError("expected a CostSpec")
    small = spec.alpha < 2
    return NORMAL if small == spec.minimize else REVERSED


@dataclass(frozen=True)
class SolveDiagnostics:
    iterations: int
    w1: float
    cost: float
    cost_stderr: float
    cost_ci: tuple
    forbidden_rate: float
    converged: bool
    orientation: str
    common_mass: float
    leak: float
    rings: int
    history: tuple = field(default=(), repr=False)
    notes: tuple = ()

    def __post_init__(self):
        if self.w1 < 0:
            raise ValueError("mismatch must be nonnegative")
        if not (0.0 <= self.forbidden_rate <= 1.0 or math.isnan(self.forbidden_rate)):
            raise ValueError("forbidden-pair rate must lie in [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["cost_ci"] = list(self.cost_ci)
        d["history"] = [float(v) for v in self.history]
        d["notes"] = list(self.notes)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class SolveResult:
    """Barrier plus what is needed to reproduce its final ensemble."""

    barrier: Barrier
    diagnostics: SolveDiagnostics
    rule: StoppingRule
    ensemble: object = field(default=None, repr=False)


def _ring_masses(ens, radii, R):
    """Mass stopped on each ring and mass left over (exit or cap)."""
    n = len(ens)
    stopped = ens.causes == RULE
    r = np.linalg.norm(ens.stops[stopped], axis=1)
    j = np.abs(r[:, None] - radii[None, :]).argmin(axis=1)
    mass = np.bincount(j, minlength=radii.size) / n
    return mass, 1.0 - stopped.sum() / n


def _mismatch(mass, leak, radii, target, R, d):
    """Radial W1 of (ring masses + leak at R) against target, plus the leak penalty."""
    atoms = list(zip(radii, mass)) + ([(R, leak)] if leak > 0 else [])
    got = RadialMeasure.from_atoms(d, atoms, probability=False)
    tgt = RadialMeasure(d, radii, target)
    scale = got.mass
    w = radial_w1(RadialMeasure(d, got.radii, got.weights / scale), tgt) if scale > 0 else float(R)
    return w + leak * (R - radii[0])


def _arc_to_beta(u, orient):
    """Thresholds from log half-angles of the stopping arcs; exact at the closed end."""
    th = np.exp(u)
    beta = np.cos(th) if orient == NORMAL else -np.cos(th)
    beta[th >= math.pi] = full_threshold(orient)
    return np.clip(beta, -1.0, 1.0)


def _round_seed(seed, k):
    return (int(seed) * 1_000_003 + 7919 * (k + 1)) % 2**63


def common_stop_rule(mu, common):
    """Time-0 stop probabilities routing ``mu ^ nu`` to immediate stopping."""
    radii, probs = [], []
    for r, w in zip(common.radii, common.weights):
        k = int(np.argmin(np.abs(mu.radii - r)))
        radii.append(r)
        probs.append(min(1.0, w / mu.weights[k]))
    return tuple(radii), tuple(probs)


def solve_barrier(mu, nu, spec, params, seed, tol_w1=0.02, max_rounds=200, patience=3,
                  gamma0=0.5, max_rings=64, final_paths=None, check_pairs=2000):
    """Fit ring thresholds so the hitting law matches ``nu``.

    Robbins-Monro on the log half-angle ``u_j = log theta_j`` of the
    stopping arc (``beta = cos theta`` normal, ``-cos theta`` reversed):

        u_j <- clip(u_j - g_kj * (m_j - t_j) / t_j,  log THETA_MIN, log pi)

    with ``g_kj = gamma0 / (1 + k/10 + n_j)`` and ``n_j`` the number of sign
    changes of ring j's residual so far (Kesten's rule). In the plane the
    chance of hitting a short arc decays only like ``1 / log(1/length)``,
    so a linear step in beta cannot reach small targets. One fresh
    ensemble per round; the outermost ring is closed.
    Common mass is split off first and stopped at time 0.
    """
    spec.check_solvable()
    if mu.dimension != nu.dimension:
        raise MeasureError("dimension mismatch")
    report = check_order(mu, nu)
    if not report.ordered:
        raise OrderError(report)
    R, _ = params.resolve(StoppingRule.immediate())
    orient = select_orientation(spec)
    mu_bar, nu_bar, common = split_common_mass(mu, nu)
    d = mu.dimension
    notes = []
    common_radii, common_probs = common_stop_rule(mu, common)

    if mu_bar.mass <= 1e-12:
        b = Barrier(np.empty(0), np.empty(0), orient, R)
        rule = StoppingRule.immediate(universe=None)
        diag = SolveDiagnostics(0, 0.0, 0.0, 0.0, (0.0, 0.0), 0.0, True, ORIENTATION_NAMES[orient],
                                common.mass, 0.0, 0, (), ("marginals coincide: every path stops at time 0",))
        return SolveResult(b, diag, rule)
    if mu_bar.radii[0] == 0.0:
        raise MeasureError("the residual initial law charges the origin")
    if nu_bar.max_radius() >= R:
        raise MeasureError("target support reaches the universe sphere")

    tgt = nu_bar.normalized().quantile_rings(max_rings)
    if tgt.radii.size < nu_bar.radii.size:
        notes.append(f"target coarsened to {tgt.radii.size} quantile rings")
    radii = tgt.radii
    target = tgt.weights / tgt.mass
    u = np.full(radii.size, math.log(math.pi / 2))
    u[-1] = math.log(math.pi)
    beta = _arc_to_beta(u, orient)
    start_law = mu_bar.normalized()

    history = []
    flips = np.zeros(radii.size)
    last = np.zeros(radii.size)
    best = (math.inf, beta.copy())
    streak = 0
    converged = False
    k = 0
    for k in range(max_rounds):
        rule = StoppingRule.barrier_hit(radii, beta, orient)
        ens = simulate_ensemble(start_law, rule, params, _round_seed(seed, k))
        mass, leak = _ring_masses(ens, radii, R)
        mis = _mismatch(mass, leak, radii, target, R, d)
        history.append(mis)
        if mis < best[0]:
            best = (mis, beta.copy())
        streak = streak + 1 if mis <= tol_w1 else 0
        if streak >= patience:
            converged = True
            break
        resid = np.sign(mass - target)
        flips += (resid * last) < 0
        last = np.where(resid != 0, resid, last)
        gamma = gamma0 / (1.0 + k / 10.0 + flips)
        step = gamma * (mass - target) / target
        step[-1] = 0.0
        u = np.clip(u - step, math.log(THETA_MIN), math.log(math.pi))
        beta = _arc_to_beta(u, orient)
    if not converged:
        beta = best[1]
        notes.append("no convergence: returning the best iterate")
    b = Barrier(radii, beta, orient, R)
    final = StoppingRule.barrier_hit(radii, beta, orient, common_radii=common_radii,
                                     common_probs=common_probs)
    fp = SimParams(final_paths or params.paths, params.h, R, params.max_steps, params.wos_mult,
                   params.threads, False, params.backend)
    ens = simulate_ensemble(mu, final, fp, seed)
    _, stopped_rad = _stopped_radial(ens)
    w1_final = radial_w1(stopped_rad, nu.normalized())
    leak = float(np.mean(ens.causes != RULE))
    cost = ens.cost_samples(spec.alpha)
    est, se = float(cost.mean()), float(cost.std(ddof=1) / math.sqrt(cost.size)) if cost.size > 1 else 0.0
    rate = math.nan
    if check_pairs:
        from .verify import find_forbidden_pairs

        m = min(int(check_pairs), len(ens))
        sub = simulate(ens.starts[:m], final, SimParams(m, params.h, R, params.max_steps, params.wos_mult,
                                                         params.threads, True, params.backend),
                       seed, ens.path_ids[:m])
        rate = find_forbidden_pairs(sub, tol=1e-6).rate
    diag = SolveDiagnostics(k + 1, float(w1_final), est, se, (est - 1.96 * se, est + 1.96 * se), float(rate),
                            converged, ORIENTATION_NAMES[orient], common.mass, leak, int(radii.size),
                            tuple(history), tuple(notes))
    return SolveResult(b, diag, final, ens)


def _stopped_radial(ens):
    from .brownian import stopped_law

    return stopped_law(ens)


def evaluate_cost(rule, mu, spec, n, seed, params=None):
    """Monte Carlo estimate of ``E|B_0 - B_tau|^alpha`` and its standard error."""
    alpha = spec.alpha if isinstance(spec, CostSpec) else float(spec)
    if params is None:
        params = SimParams(n)
    elif params.paths != n:
        params = SimParams(n, params.h, params.universe, params.max_steps, params.wos_mult,
                           params.threads, False, params.backend)
    if rule.is_immediate:
        return 0.0, 0.0
    ens = simulate_ensemble(mu, rule, params, seed)
    c = ens.cost_samples(alpha)
    return float(c.mean()), float(c.std(ddof=1) / math.sqrt(c.size)) if c.size > 1 else 0.0
