"""Command-line entry point: check-order, envelope, solve, simulate, mot, verify, report.

Exit codes: 0 success, 1 usage or IO error, 2 order failure (or an
infeasible transport LP), 3 non-convergence or a verification threshold
exceeded. Configuration precedence: flags over ``--config`` JSON over
defaults; the resolved config is echoed and written to ``<out>/run_config.json``.
"""
import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as skio
from . import mot, plots
from ._core import RULE
from .barrier import (Barrier, OrderError, common_stop_rule, hitting_rule, solve_barrier)
from .brownian import SimParams, reflect_and_mix, simulate, simulate_ensemble, stopped_law
from .envelope import GridFunction, envelope, is_subharmonic
from .gain import ALPHA_GAP, CostSpec
from .measures import (DiscreteMeasure, MeasureError, RadialMeasure, check_order, default_order_grid,
                       potential_profile, radial_w1, split_common_mass, symmetrize)
from . import verify as V

COMMANDS = ("check-order", "envelope", "solve", "simulate", "mot", "verify", "report")
ENVELOPE_FUNCTIONS = {
    "neg-abs": lambda p: -np.linalg.norm(p, axis=-1),
    "abs2": lambda p: np.sum(np.asarray(p) ** 2, axis=-1),
    "zero": lambda p: np.zeros(np.asarray(p).shape[:-1]),
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    mu: Optional[str] = None
    nu: Optional[str] = None
    alpha: float = 1.0
    objective: str = "min"
    paths: int = 100_000
    step: Optional[float] = None
    seed: int = 0
    universe: Optional[float] = None
    grid_radii: int = mot.DEFAULT_RADII
    grid_angles: int = mot.DEFAULT_ANGLES
    centers: int = 16
    tol_w1: float = 0.02
    max_rounds: int = 200
    out: str = "out"
    function: str = "neg-abs"
    resolution: int = 101
    max_iter: int = 50
    env_tol: float = 1e-5
    barrier: Optional[str] = None
    run: Optional[str] = None
    check_paths: int = 20_000
    forbidden_max: float = 1e-3
    monotonicity_max: float = 1e-2

    def validate(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.objective not in ("min", "max"):
            raise UsageError("objective must be 'min' or 'max'")
        if not self.alpha > 0:
            raise UsageError("alpha must be positive")
        if self.command in ("solve", "simulate", "mot", "verify") and abs(self.alpha - 2.0) < ALPHA_GAP:
            raise UsageError(f"|alpha - 2| must be at least {ALPHA_GAP} for {self.command}")
        if self.command == "verify" and self.paths < 1000:
            raise UsageError("verify needs at least 1000 paths")
        if self.paths < 1:
            raise UsageError("paths must be positive")
        if self.step is not None and not self.step > 0:
            raise UsageError("step must be positive")
        if self.command in ("check-order", "solve", "mot", "verify") and not (self.mu and self.nu):
            raise UsageError(f"{self.command} needs --mu and --nu")
        if self.command == "simulate" and not self.mu:
            raise UsageError("simulate needs --mu")
        if self.command == "report" and not self.run:
            raise UsageError("report needs --run")
        if self.command == "envelope" and self.function not in ENVELOPE_FUNCTIONS:
            raise UsageError(f"function must be one of {sorted(ENVELOPE_FUNCTIONS)}")

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="skbarrier", description="Optimal Skorokhod embeddings between radial laws.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--mu")
    p.add_argument("--nu")
    p.add_argument("--alpha", type=float)
    p.add_argument("--objective", choices=("min", "max"))
    p.add_argument("--paths", type=int)
    p.add_argument("--step", type=float, help="Euler time step")
    p.add_argument("--seed", type=int)
    p.add_argument("--universe", type=float, help="radius of the universe ball")
    p.add_argument("--grid-radii", dest="grid_radii", type=int)
    p.add_argument("--grid-angles", dest="grid_angles", type=int)
    p.add_argument("--centers", type=int, help="kernel count of the LP test family")
    p.add_argument("--tol-w1", dest="tol_w1", type=float)
    p.add_argument("--max-rounds", dest="max_rounds", type=int)
    p.add_argument("--out")
    p.add_argument("--function", help="envelope input: neg-abs, abs2 or zero")
    p.add_argument("--resolution", type=int)
    p.add_argument("--barrier", help="barrier CSV for simulate")
    p.add_argument("--run", help="run directory for report")
    p.add_argument("--check-paths", dest="check_paths", type=int)
    return p


def resolve_config(argv):
    ns = build_parser().parse_args(argv)
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    data = {}
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
        extra = set(data) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        for k, v in data.items():
            setattr(cfg, k, v)
    for k, v in vars(ns).items():
        if k in known and v is not None:
            setattr(cfg, k, v)
    cfg.command = ns.command
    if cfg.command == "report" and cfg.run and not (ns.out or "out" in data):
        cfg.out = cfg.run
    cfg.validate()
    return cfg


# ----------------------------------------------------------------------------
# helpers

def _write(out, name, text):
    path = Path(out) / name
    path.write_text(text)
    return path


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not serializable: {type(v)}")


def _radial(path):
    m = skio.load_measure(path)
    return symmetrize(m) if isinstance(m, DiscreteMeasure) else m


def _measures(cfg):
    mu = _radial(cfg.mu)
    nu = _radial(cfg.nu) if cfg.nu else None
    return mu, nu


def _universe(cfg, *ms):
    if cfg.universe is not None:
        return float(cfg.universe)
    return 1.5 * max(m.max_radius() for m in ms if m is not None)


def _spec(cfg, d):
    return CostSpec(cfg.alpha, d, cfg.objective)


def _params(cfg, R, paths=None, record=False):
    return SimParams(paths or cfg.paths, cfg.step, R, record=record)


def _solve(cfg, mu, nu):
    R = _universe(cfg, mu, nu)
    return solve_barrier(mu, nu, _spec(cfg, mu.dimension), _params(cfg, R), cfg.seed,
                         tol_w1=cfg.tol_w1, max_rounds=cfg.max_rounds)


def _save_solve(cfg, mu, nu, res):
    out = cfg.out
    _write(out, "barrier.csv", res.barrier.to_csv())
    _write(out, "diagnostics.json", res.diagnostics.to_json() + "\n")
    skio.save_measure(mu, Path(out) / "mu.json")
    skio.save_measure(nu, Path(out) / "nu.json")
    if res.ensemble is not None:
        _, law = stopped_law(res.ensemble)
        skio.save_measure(law, Path(out) / "stopped_law.json")


# ----------------------------------------------------------------------------
# commands

def cmd_check_order(cfg):
    mu, nu = _measures(cfg)
    rep = check_order(mu, nu)
    grid = default_order_grid(mu, nu)
    _write(cfg.out, "potential_mu.csv", skio.profile_to_csv(potential_profile(mu, grid)))
    _write(cfg.out, "potential_nu.csv", skio.profile_to_csv(potential_profile(nu, grid)))
    body = dict(ordered=rep.ordered, witness_radius=rep.witness_radius, margin=rep.margin,
                reason=rep.reason, approximation=rep.approximation)
    if math.isinf(body["margin"]):
        body["margin"] = "inf" if body["margin"] > 0 else "-inf"
    text = _dump(body)
    _write(cfg.out, "order.json", text)
    print(text, end="")
    return 0 if rep.ordered else 2


def cmd_envelope(cfg):
    radius = float(cfg.universe) if cfg.universe is not None else 1.0
    f = GridFunction.from_callable(ENVELOPE_FUNCTIONS[cfg.function], radius, cfg.resolution, radial=True)
    res = envelope(f, max_iter=cfg.max_iter, tol=cfg.env_tol)
    _write(cfg.out, "input.csv", skio.grid_function_to_csv(f))
    _write(cfg.out, "envelope.csv", skio.grid_function_to_csv(res.function))
    sub = is_subharmonic(res.function, tol=max(cfg.env_tol, 1e-9))
    body = dict(function=cfg.function, iterations=res.iterations, converged=res.converged,
                monotone=res.monotone, sup_changes=list(res.sup_changes),
                subharmonic=sub.ok, worst_violation=sub.worst_violation)
    _write(cfg.out, "envelope.json", _dump(body))
    return 0 if res.converged else 3


def cmd_solve(cfg):
    mu, nu = _measures(cfg)
    try:
        res = _solve(cfg, mu, nu)
    except OrderError as exc:
        print(f"order failure: {exc}", file=sys.stderr)
        _write(cfg.out, "order.json", _dump(dict(ordered=False, witness_radius=exc.report.witness_radius)))
        return 2
    _save_solve(cfg, mu, nu, res)
    print(res.diagnostics.to_json())
    return 0 if res.diagnostics.converged else 3


def _load_barrier(cfg):
    path = Path(cfg.barrier) if cfg.barrier else Path(cfg.out) / "barrier.csv"
    if not path.exists():
        raise UsageError(f"barrier file {path} not found (run solve first or pass --barrier)")
    return Barrier.load_csv(path)


def cmd_simulate(cfg):
    mu, nu = _measures(cfg)
    b = _load_barrier(cfg)
    rule = hitting_rule(b)
    if nu is not None:
        radii, probs = common_stop_rule(mu, split_common_mass(mu, nu)[2])
        rule = replace(rule, common_radii=radii, common_probs=probs)
    ens = simulate_ensemble(mu, rule, _params(cfg, b.universe), cfg.seed)
    _write(cfg.out, "ensemble.csv", ens.to_csv())
    c = ens.cost_samples(cfg.alpha)
    n = len(ens)
    summary = dict(paths=n, tau_mean=float(ens.tau.mean()), tau_stderr=float(ens.tau.std(ddof=1) / math.sqrt(n)),
                   cost_mean=float(c.mean()), cost_stderr=float(c.std(ddof=1) / math.sqrt(n)),
                   causes={str(k): int(v) for k, v in sorted(ens.cause_counts().items())})
    if nu is not None:
        summary["w1_stopped_vs_nu"] = radial_w1(stopped_law(ens)[1], nu)
    _write(cfg.out, "summary.json", _dump(summary))
    return 0


def _sep_estimate(cfg, mu, nu):
    diag = Path(cfg.out) / "diagnostics.json"
    if diag.exists():
        d = json.loads(diag.read_text())
        return d["cost"], d["cost_stderr"]
    res = _solve(cfg, mu, nu)
    _save_solve(cfg, mu, nu, res)
    return res.diagnostics.cost, res.diagnostics.cost_stderr


def cmd_mot(cfg):
    mu, nu = _measures(cfg)
    spec = _spec(cfg, mu.dimension)
    plan = mot.assemble_and_solve(mu, nu, spec, universe=_universe(cfg, mu, nu), n_radii=cfg.grid_radii,
                                  angles=cfg.grid_angles, centers=cfg.centers)
    _write(cfg.out, "plan.csv", plan.to_csv())
    if not plan.feasible:
        rep = mot.duality_report(plan, (math.nan, 0.0))
        _write(cfg.out, "mot_report.json", mot.report_json(rep) + "\n")
        print(f"transport LP {plan.status}: {plan.violated}", file=sys.stderr)
        return 2 if plan.status == "infeasible" else 3
    rep = mot.duality_report(plan, _sep_estimate(cfg, mu, nu))
    _write(cfg.out, "mot_report.json", mot.report_json(rep) + "\n")
    return 0


def cmd_verify(cfg):
    mu, nu = _measures(cfg)
    spec = _spec(cfg, mu.dimension)
    try:
        res = _solve(cfg, mu, nu)
    except OrderError as exc:
        print(f"order failure: {exc}", file=sys.stderr)
        return 2
    _save_solve(cfg, mu, nu, res)
    R = res.barrier.universe
    checks = {}
    ok = True
    if res.ensemble is None:
        body = dict(checks={}, passed=True, notes=["marginals coincide: nothing to verify"])
        _write(cfg.out, "verify.json", _dump(body))
        return 0
    ens = res.ensemble
    m = min(cfg.check_paths, len(ens))
    sub = simulate(ens.starts[:m], res.rule, _params(cfg, R, m, record=True), cfg.seed, ens.path_ids[:m])
    fp = V.find_forbidden_pairs(sub)
    _write(cfg.out, "forbidden_witnesses.csv", fp.witness_csv())
    checks["forbidden_pairs"] = dict(report=fp.to_dict(), threshold=cfg.forbidden_max,
                                     passed=fp.rate <= cfg.forbidden_max)
    if mu.dimension == 2:
        mono = V.check_radial_monotonicity(sub, spec, seed=cfg.seed)
        _write(cfg.out, "monotonicity_witnesses.csv", mono.witness_csv())
        checks["radial_monotonicity"] = dict(report=mono.to_dict(), threshold=cfg.monotonicity_max,
                                             passed=mono.rate <= cfg.monotonicity_max)
    else:
        checks["radial_monotonicity"] = dict(skipped="implemented for d = 2 only", passed=True)
    normal = np.zeros(mu.dimension)
    normal[-1] = 1.0
    comp = simulate_ensemble(mu, reflect_and_mix(res.rule, normal), _params(cfg, R), cfg.seed)
    cc = V.compare_r_equivalent_costs(ens, comp, spec)
    better = cc.z >= -3.0 if spec.minimize else cc.z <= 3.0
    checks["r_equivalent_costs"] = dict(cost_barrier=cc.cost_a, stderr_barrier=cc.stderr_a,
                                        cost_competitor=cc.cost_b, stderr_competitor=cc.stderr_b,
                                        r_equiv=cc.r_equiv, z=cc.z, passed=bool(cc.r_equiv and better))
    if spec.alpha <= 1:
        cm = V.check_common_mass_stop(mu, nu, spec, res)
        checks["common_mass"] = dict(ok=cm.ok, common_mass=cm.common_mass, routed_mass=cm.routed_mass,
                                     stopped_fraction=cm.stopped_fraction, residual_common=cm.residual_common,
                                     passed=cm.ok)
    else:
        checks["common_mass"] = dict(skipped="requires alpha <= 1", passed=True)
    oracle = V.order_oracle(mu, nu, samples=200, seed=cfg.seed)
    checks["order_oracle"] = dict(report=oracle.to_dict(), passed=oracle.violations == 0)
    ok = all(c["passed"] for c in checks.values()) and res.diagnostics.converged
    body = dict(checks=checks, converged=res.diagnostics.converged, passed=ok)
    _write(cfg.out, "verify.json", _dump(body))
    print(_dump(dict(passed=ok, **{k: v["passed"] for k, v in checks.items()})), end="")
    return 0 if ok else 3


def cmd_report(cfg):
    run = Path(cfg.run)
    need = ["run_config.json", "barrier.csv", "diagnostics.json", "mu.json", "nu.json"]
    missing = [n for n in need if not (run / n).exists()]
    if missing:
        raise UsageError(f"run directory {run} lacks {missing}")
    b = Barrier.load_csv(run / "barrier.csv")
    mu, nu = skio.load_measure(run / "mu.json"), skio.load_measure(run / "nu.json")
    diag = json.loads((run / "diagnostics.json").read_text())
    laws, labels = [mu, nu], ["mu", "nu"]
    body = dict(run_config=json.loads((run / "run_config.json").read_text()), diagnostics=diag,
                barrier=dict(orientation=b.orientation_name, universe=b.universe,
                             rings=[[float(r), float(t)] for r, t in zip(b.radii, b.thresholds)]))
    if (run / "stopped_law.json").exists():
        law = skio.load_measure(run / "stopped_law.json")
        laws.append(law)
        labels.append("stopped")
        body["w1_stopped_vs_nu"] = radial_w1(law, nu)
    out = Path(cfg.out)
    _write(out, "report.json", _dump(body))
    _write(out, "barrier.svg", plots.barrier_svg(b))
    _write(out, "radial_laws.svg", plots.cdf_svg(laws, labels))
    return 0


HANDLERS = {"check-order": cmd_check_order, "envelope": cmd_envelope, "solve": cmd_solve,
            "simulate": cmd_simulate, "mot": cmd_mot, "verify": cmd_verify, "report": cmd_report}


def run(argv):
    try:
        cfg = resolve_config(argv)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        text = cfg.to_json() + "\n"
        print(text, end="")
        _write(out, "report_config.json" if cfg.command == "report" else "run_config.json", text)
        return HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, MeasureError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    sys.exit(run(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
