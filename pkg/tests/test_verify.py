from types import SimpleNamespace

import numpy as np
import pytest

from skbarrier._core import RULE
from skbarrier.barrier import solve_barrier
from skbarrier.brownian import SimParams, StoppingRule, simulate_ensemble
from skbarrier.gain import CostSpec
from skbarrier.measures import RadialMeasure
from skbarrier.verify import (ViolationReport, check_common_mass_stop, check_radial_monotonicity,
                              compare_r_equivalent_costs, find_forbidden_pairs, monotonicity_margin,
                              order_oracle, witness_margin)


class Fake(SimpleNamespace):
    def __len__(self):
        return self.starts.shape[0]


def fake_ensemble(polylines, rule):
    stops = np.array([p[-1] for _, p in polylines])
    return Fake(
        polylines=polylines, rule=rule, starts=np.array([p[0] for _, p in polylines]), stops=stops,
        tau=np.array([t[-1] for t, _ in polylines]), causes=np.full(len(polylines), RULE),
        common_stopped=np.zeros(len(polylines), dtype=bool), dimension=2)


def test_hand_built_forbidden_pair():
    rule = StoppingRule.barrier_hit([1.5, 2.5], [-1.0, -1.0])
    x = np.array([1.0, 0.0])
    # g stops on ring 1.5 at a right angle; f crosses the same ring straight ahead and goes on
    g = (np.array([0.0, 1.0]), np.array([x, [0.0, 1.5]]))
    f = (np.array([0.0, 1.0, 2.0]), np.array([x, [1.6, 0.0], [2.5, 0.0]]))
    rep = find_forbidden_pairs(fake_ensemble([f, g], rule))
    assert rep.violations == 1 and rep.checked == 2
    w = rep.witnesses[0]
    assert w["f"] == 0 and w["g"] == 1
    assert witness_margin(w) == pytest.approx(1.0) == pytest.approx(rep.worst_margin)
    # f stopping at its first crossing is fine
    f_ok = (np.array([0.0, 1.0]), np.array([x, [1.5, 0.0]]))
    assert find_forbidden_pairs(fake_ensemble([f_ok, g], rule)).violations == 0


def test_violation_report_invariants():
    with pytest.raises(ValueError):
        ViolationReport(2, 3, 1.5, 0.0)
    with pytest.raises(ValueError):
        ViolationReport(4, 1, 0.5, 0.0)
    assert ViolationReport.build(0, 0, 0.0).rate == 0.0


@pytest.fixture(scope="module")
def sphere_rules():
    mu = RadialMeasure.sphere(1.0)
    p = SimParams(4000, universe=3.0, record=True)
    plain = simulate_ensemble(mu, StoppingRule.sphere_hit(2.0), p, seed=3)
    delayed = simulate_ensemble(mu, StoppingRule.sphere_hit(2.0, delay_prob=0.5, delay_radius=0.05), p, seed=3)
    return plain, delayed


def test_sphere_hit_has_no_forbidden_pairs_but_delay_does(sphere_rules):
    plain, delayed = sphere_rules
    assert find_forbidden_pairs(plain).violations == 0
    rep = find_forbidden_pairs(delayed)
    assert rep.rate > 0.05
    for w in rep.witnesses:
        assert witness_margin(w) == pytest.approx(w["margin"], abs=1e-12)


def test_delayed_rule_is_r_equivalent_but_costlier(sphere_rules):
    plain, delayed = sphere_rules
    cmp = compare_r_equivalent_costs(plain, delayed, CostSpec(1.0))
    assert cmp.r_equiv and cmp.paired_stderr is not None
    assert cmp.z > 3


def test_monotonicity_margin_vanishes_for_dirac():
    y, yp = np.array([1.5, 0.0]), np.array([0.0, 1.5])
    assert monotonicity_margin([1.0, 0.0], y, y[None], [-1.0, 0.0], yp, 1.0) == pytest.approx(0.0, abs=1e-15)


@pytest.fixture(scope="module")
def two_ring_solutions():
    mu = RadialMeasure.sphere(1.0)
    nu = RadialMeasure.from_atoms(2, [(1.5, 0.5), (2.5, 0.5)])
    p = SimParams(20000, universe=3.0)
    return {obj: solve_barrier(mu, nu, CostSpec(1.0, objective=obj), p, seed=1) for obj in ("min", "max")}


def test_monotonicity_holds_for_solution_and_fails_for_swapped_barrier(two_ring_solutions):
    mu = RadialMeasure.sphere(1.0)
    p = SimParams(5000, universe=3.0)
    lo = simulate_ensemble(mu, two_ring_solutions["min"].rule, p, seed=5)
    hi = simulate_ensemble(mu, two_ring_solutions["max"].rule, p, seed=5)
    good = check_radial_monotonicity(lo, CostSpec(1.0))
    bad = check_radial_monotonicity(hi, CostSpec(1.0))
    assert good.checked > 100 and good.coverage > 0.9
    assert good.rate <= 1e-2
    assert bad.rate > 0.05
    with pytest.raises(ValueError):
        check_radial_monotonicity(simulate_ensemble(RadialMeasure.sphere(1.0, 3), StoppingRule.sphere_hit(2.0),
                                                    SimParams(10, universe=3.0), 0), CostSpec(1.0))


def test_common_mass_is_routed_to_time_zero():
    mu = RadialMeasure.from_atoms(2, [(1.0, 0.5), (1.5, 0.5)])
    nu = RadialMeasure.from_atoms(2, [(1.5, 0.5), (2.5, 0.5)])
    res = solve_barrier(mu, nu, CostSpec(1.0), SimParams(20000, universe=3.0), seed=2)
    rep = check_common_mass_stop(mu, nu, CostSpec(1.0), res)
    assert rep and rep.common_mass == pytest.approx(0.5) and rep.routed_mass == pytest.approx(0.5)
    with pytest.raises(ValueError):
        check_common_mass_stop(mu, nu, CostSpec(3.0), res)


def test_order_oracle_agrees_with_potential_test(sphere1, sphere2, section1_nu):
    ok = order_oracle(sphere1, sphere2, samples=200, seed=1)
    assert ok.violations == 0 and ok.notes == ("consistent with check_order",)
    bad = order_oracle(sphere1, section1_nu, samples=200, seed=1)
    assert bad.violations > 0 and "consistent" in bad.notes[0]
