"""Acceptance criteria 1-9, one PASS/FAIL line each (shown even under capture)."""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from skbarrier._core import NORMAL, REVERSED, RULE
from skbarrier.barrier import select_orientation, solve_barrier
from skbarrier.brownian import (SimParams, StoppingRule, reflect_and_mix, simulate, simulate_ensemble,
                                stopped_law)
from skbarrier.cli import run as cli_run
from skbarrier.envelope import GridFunction, envelope
from skbarrier.gain import CostSpec, cost, h_kernel, laplacian_h
from skbarrier.measures import DiscreteMeasure, RadialMeasure, check_order, radial_w1, symmetrize
from skbarrier.mot import assemble_and_solve, duality_report
from skbarrier.verify import check_radial_monotonicity, compare_r_equivalent_costs, find_forbidden_pairs

SPHERE1 = RadialMeasure.sphere(1.0)
SPHERE2 = RadialMeasure.sphere(2.0)
SECTION1_NU = RadialMeasure.from_atoms(2, [(0.0, 0.5), (2.0, 0.5)])
TWO_RINGS = RadialMeasure.from_atoms(2, [(1.5, 0.5), (2.5, 0.5)])
PATHS = 100_000


def emit(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def sphere_cost_oracle(n=4096):
    # (3 / 2 pi) * integral of (5 - 4 cos t)^(-1/2) over a period, trapezoid rule
    t = 2 * math.pi * np.arange(n) / n
    return float(3 / (2 * math.pi) * np.sum((5 - 4 * np.cos(t)) ** -0.5) * 2 * math.pi / n)


@pytest.fixture(scope="module")
def sphere_solution():
    t = time.perf_counter()
    res = solve_barrier(SPHERE1, SPHERE2, CostSpec(1.0), SimParams(PATHS, universe=3.0), seed=2024)
    return res, time.perf_counter() - t


@pytest.fixture(scope="module")
def two_ring_solutions():
    p = SimParams(PATHS, universe=3.0)
    return {obj: solve_barrier(SPHERE1, TWO_RINGS, CostSpec(1.0, objective=obj), p, seed=7)
            for obj in ("min", "max")}


def test_criterion_1_section1_pair_is_not_ordered(capsys):
    t = time.perf_counter()
    rep = check_order(SPHERE1, SECTION1_NU)
    plan = assemble_and_solve(SPHERE1, SECTION1_NU, CostSpec(1.0))
    dt = time.perf_counter() - t
    ok = (not rep.ordered and rep.witness_radius == 0.0 and plan.status == "infeasible" and dt < 5.0)
    emit(capsys, 1, ok, f"ordered={rep.ordered} witness_r={rep.witness_radius}; LP {plan.status}, "
                        f"worst kernel centre {plan.violated and plan.violated['center']}; {dt:.1f} s")


def test_criterion_2_sphere_embedding(capsys, sphere_solution):
    res, dt = sphere_solution
    d = res.diagnostics
    ens = res.ensemble
    beta2 = float(res.barrier.threshold_at(2.0))
    tau_se = ens.tau.std(ddof=1) / math.sqrt(len(ens))
    oracle = sphere_cost_oracle()
    ok = (d.converged and beta2 <= -0.95 and d.w1 <= 0.02 and abs(ens.tau.mean() - 1.5) <= 3 * tau_se
          and abs(d.cost - oracle) <= 3 * d.cost_stderr and len(ens) == PATHS and dt < 60)
    emit(capsys, 2, ok, f"beta(2)={beta2:.3f} W1={d.w1:.4f} E tau={ens.tau.mean():.4f}+-{tau_se:.4f} "
                        f"cost={d.cost:.4f}+-{d.cost_stderr:.4f} oracle={oracle:.4f} rounds={d.iterations} "
                        f"{dt:.1f} s")


def test_criterion_3_gain_formulas(capsys):
    t = time.perf_counter()
    g = np.random.default_rng(3)
    worst_fd = worst_lap = 0.0
    exceptions = 0
    for d in (2, 3):
        z = g.uniform(-2, 2, size=(100, d))
        z[:, -1] = -np.abs(z[:, -1]) - 0.05
        for a in (0.5, 1.0, 1.5, 3.0, 4.0):
            e = np.zeros(d)
            e[-1] = 1e-5
            fd = (cost(e, z, a) - cost(-e, z, a)) / 2e-5
            hk = h_kernel(z, a)
            worst_fd = max(worst_fd, float(np.max(np.abs(fd - hk) / np.abs(hk))))
            s = 1e-3
            lap = -2 * d * hk
            for i in range(d):
                ei = np.zeros(d)
                ei[i] = s
                lap = lap + h_kernel(z + ei, a) + h_kernel(z - ei, a)
            lap = lap / (s * s)
            ex = laplacian_h(z, a)
            worst_lap = max(worst_lap, float(np.max(np.abs(lap - ex) / np.abs(ex))))
        pts = g.uniform(-3, 3, size=(1000, d))
        pts[:, -1] = -np.abs(pts[:, -1]) - 1e-3
        exceptions += sum(int(np.sum(laplacian_h(pts, a) >= 0)) for a in (0.5, 1.0, 1.5))
        exceptions += sum(int(np.sum(laplacian_h(pts, a) <= 0)) for a in (3.0, 4.0))
    dt = time.perf_counter() - t
    ok = worst_fd <= 1e-4 and worst_lap <= 1e-3 and exceptions == 0 and dt < 5
    emit(capsys, 3, ok, f"h vs FD rel {worst_fd:.1e}; Laplacian rel {worst_lap:.1e}; "
                        f"sign-law exceptions {exceptions}; {dt:.2f} s")


def test_criterion_4_envelope(capsys):
    t = time.perf_counter()
    f = GridFunction.from_callable(lambda p: -np.linalg.norm(p, axis=-1), 1.0, 101, radial=True)
    res = envelope(f, max_iter=50)
    err = float(np.max(np.abs(res.function.values + 1.0)))
    q = GridFunction.from_callable(lambda p: np.sum(np.asarray(p) ** 2, axis=-1), 1.0, 101, radial=True)
    tol = 1e-6
    fixed = envelope(q, tol=tol)
    dt = time.perf_counter() - t
    ok = (err <= 5e-2 and res.iterations <= 50 and res.monotone and fixed.monotone
          and max(fixed.sup_changes) <= tol and dt < 10)
    emit(capsys, 4, ok, f"sup|env(-|z|) + 1|={err:.4f} after {res.iterations} it; |z|^2 max change "
                        f"{max(fixed.sup_changes):.1e}; monotone={res.monotone}; {dt:.2f} s")


def test_criterion_5_monotonicity_verification(capsys, sphere_solution, two_ring_solutions):
    res, _ = sphere_solution
    t = time.perf_counter()
    ens = res.ensemble
    m = 20_000
    rec = SimParams(m, universe=3.0, record=True)
    sub = simulate(ens.starts[:m], res.rule, rec, ens.seed, ens.path_ids[:m])
    fp = find_forbidden_pairs(sub)
    mono = check_radial_monotonicity(sub, CostSpec(1.0))
    # the sphere barrier has a single closed ring, so add the two-ring solution and its swap
    p = SimParams(20_000, universe=3.0)
    lo = simulate_ensemble(SPHERE1, two_ring_solutions["min"].rule, p, seed=5)
    hi = simulate_ensemble(SPHERE1, two_ring_solutions["max"].rule, p, seed=5)
    mono_lo = check_radial_monotonicity(lo, CostSpec(1.0))
    mono_sw = check_radial_monotonicity(hi, CostSpec(1.0))

    delayed_rule = StoppingRule.sphere_hit(2.0, delay_prob=0.5, delay_radius=0.05)
    full = SimParams(PATHS, universe=3.0)
    base = simulate_ensemble(SPHERE1, StoppingRule.sphere_hit(2.0), full, seed=11)
    delayed = simulate_ensemble(SPHERE1, delayed_rule, full, seed=11)
    dsub = simulate(delayed.starts[:m], delayed_rule, rec, 11, delayed.path_ids[:m])
    fp_d = find_forbidden_pairs(dsub)
    cmp = compare_r_equivalent_costs(base, delayed, CostSpec(1.0))
    leak = float(np.mean(delayed.causes != RULE))
    dt = time.perf_counter() - t
    ok = (fp.rate <= 1e-3 and mono.rate <= 1e-2 and mono_lo.rate <= 1e-2 and mono_lo.checked > 0
          and mono_sw.rate > mono_lo.rate and fp_d.rate > 0.05 and cmp.r_equiv and cmp.z > 3 and dt < 120)
    emit(capsys, 5, ok, f"solved: forbidden {fp.rate:.1e} ({fp.checked} pairs), monotonicity {mono.rate:.1e} "
                        f"({mono.checked} configs); two-ring min {mono_lo.rate:.1e}/{mono_lo.checked} vs swapped "
                        f"{mono_sw.rate:.2f}; delayed: forbidden {fp_d.rate:.3f}, cost {cmp.cost_b:.4f} vs "
                        f"{cmp.cost_a:.4f} z={cmp.z:.1f} (paired), leak {leak:.4f}; {dt:.1f} s")


def test_criterion_6_weak_duality(capsys, sphere_solution):
    res, _ = sphere_solution
    t = time.perf_counter()
    gaps = []
    for mu, nu in ((SPHERE1, SPHERE2), (SPHERE1, TWO_RINGS),
                   (RadialMeasure.from_atoms(2, [(1.0, 0.5), (1.5, 0.5)]), TWO_RINGS)):
        plan = assemble_and_solve(mu, nu, CostSpec(1.0), centers=16)
        gaps.append(plan.primal - plan.dual)
    primals = {c: assemble_and_solve(SPHERE1, SPHERE2, CostSpec(1.0), centers=c) for c in (8, 16, 32)}
    for p in primals.values():
        gaps.append(p.primal - p.dual)
    rep = duality_report(primals[32], (res.diagnostics.cost, res.diagnostics.cost_stderr))
    vals = [primals[c].primal for c in (8, 16, 32)]
    dt = time.perf_counter() - t
    ok = (min(gaps) >= -1e-8 and all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
          and rep["relative_difference"] <= 0.10 and dt < 120)
    emit(capsys, 6, ok, f"min(primal - dual)={min(gaps):.1e}; primal 8/16/32 = "
                        f"{vals[0]:.4f}/{vals[1]:.4f}/{vals[2]:.4f}; SEP {res.diagnostics.cost:.4f}, "
                        f"rel diff {rep['relative_difference']:.3f}; {dt:.1f} s")


def test_criterion_7_reflection_construction(capsys):
    # x on the hyperplane z_2 = 0 (through the origin), diffusion centre y below it
    x = np.array([1.0, 0.0])
    y = np.array([0.5, -0.3])
    rule = StoppingRule.barrier_hit([1.5, 2.5], [0.3, -1.0])
    mix = reflect_and_mix(rule, [0.0, 1.0], 0.0, 0.5)
    p = SimParams(PATHS, universe=3.0)
    starts = np.tile(y, (PATHS, 1))
    orig = simulate(starts, rule, p, seed=21)
    mixed = simulate(starts, mix, p, seed=22)
    w1 = radial_w1(symmetrize(DiscreteMeasure.empirical(orig.stops)),
                   symmetrize(DiscreteMeasure.empirical(mixed.stops)))
    # d/dx_2 of the gain: mean of h(z - x) minus h(y - x)
    dg = h_kernel(mixed.stops - x, 1.0) - float(h_kernel(y - x, 1.0))
    est, se = float(dg.mean()), float(dg.std(ddof=1) / math.sqrt(PATHS))
    ok = w1 <= 0.02 and est + 3 * se < 0
    emit(capsys, 7, ok, f"radial W1(orig, mixed)={w1:.4f}; mirrored {mixed.mirrored.mean():.3f}; "
                        f"grad_u G = {est:.4f} +- {se:.4f} ({est / se:.1f} sigma)")


def test_criterion_8_orientation_table(capsys, two_ring_solutions):
    table = {(a, o): select_orientation(CostSpec(a, objective=o)) for a in (1.0, 3.0) for o in ("min", "max")}
    want = {(1.0, "min"): NORMAL, (1.0, "max"): REVERSED, (3.0, "min"): REVERSED, (3.0, "max"): NORMAL}
    stats = {}
    for obj, res in two_ring_solutions.items():
        e = res.ensemble
        r = np.linalg.norm(e.stops, axis=1)
        inner = np.isclose(r, 1.5)
        c = (np.einsum("ij,ij->i", e.starts, e.stops) / (np.linalg.norm(e.starts, axis=1) * r))[inner]
        stats[obj] = (float(c.mean()), float(c.std(ddof=1) / math.sqrt(c.size)), float(inner.mean()))
    (m1, s1, f1), (m2, s2, f2) = stats["min"], stats["max"]
    ok = (table == want and m1 - 3 * s1 > 0 and m2 + 3 * s2 < 0
          and all(r.diagnostics.converged for r in two_ring_solutions.values()))
    emit(capsys, 8, ok, f"table {'exact' if table == want else table}; inner-ring mean cos "
                        f"min {m1:+.3f}+-{s1:.3f} (mass {f1:.3f}), max {m2:+.3f}+-{s2:.3f} (mass {f2:.3f})")


def _snapshot(out):
    return {p.name: p.read_bytes() for p in sorted(Path(out).iterdir())
            if p.suffix in (".csv", ".json", ".svg")}


def test_criterion_9_reproducibility(capsys, tmp_path, monkeypatch):
    mu = tmp_path / "mu.json"
    nu = tmp_path / "nu.json"
    mu.write_text(json.dumps({"dimension": 2, "kind": "radial", "atoms": [{"r": 1.0, "w": 1.0}]}))
    nu.write_text(json.dumps({"dimension": 2, "kind": "radial",
                              "atoms": [{"r": 1.5, "w": 0.5}, {"r": 2.5, "w": 0.5}]}))
    out = tmp_path / "run"
    rep = tmp_path / "report"
    common = ["--mu", str(mu), "--nu", str(nu), "--paths", "20000", "--seed", "3", "--out", str(out)]
    pipeline = [["check-order"] + common, ["solve"] + common, ["simulate"] + common,
                ["mot"] + common + ["--centers", "8"], ["verify"] + common + ["--check-paths", "5000"],
                ["report", "--run", str(out), "--out", str(rep)]]
    snaps, codes = [], []
    for threads in ("1", "4", "1"):
        monkeypatch.setenv("SKB_THREADS", threads)
        codes.append([cli_run(cmd) for cmd in pipeline])
        snaps.append((_snapshot(out), _snapshot(rep)))
    same = all(s == snaps[0] for s in snaps[1:])
    diff = sorted(k for k in snaps[0][0] if snaps[0][0][k] != snaps[1][0].get(k))
    ok = same and all(c == codes[0] for c in codes) and codes[0] == [0] * len(pipeline)
    n = len(snaps[0][0]) + len(snaps[0][1])
    emit(capsys, 9, ok, f"{n} artifacts byte-identical over threads 1/4/1: {same}; exit codes {codes[0]}"
                        + (f"; differing {diff}" if diff else ""))
