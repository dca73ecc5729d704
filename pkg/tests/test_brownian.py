import math

import numpy as np
import pytest

from conftest import poisson_cost_oracle
from skbarrier.brownian import (SimParams, StoppingRule, conditional_rule, load_ensemble_csv, reflect_and_mix,
                                simulate, simulate_ensemble, spherical_martingale_realize, stopped_law)
from skbarrier.measures import MeasureError, RadialMeasure


def params(n, **kw):
    kw.setdefault("universe", 3.0)
    return SimParams(n, **kw)


def test_sphere_hit_cost_matches_poisson_oracle(sphere1):
    ens = simulate_ensemble(sphere1, StoppingRule.sphere_hit(2.0), params(20000), seed=1)
    for alpha in (0.5, 1.0):
        c = ens.cost_samples(alpha)
        se = c.std(ddof=1) / math.sqrt(c.size)
        assert abs(c.mean() - poisson_cost_oracle(1.0, 2.0, alpha)) <= 4 * se
    assert np.allclose(np.linalg.norm(ens.stops, axis=1), 2.0)
    # E tau = (R^2 - r^2) / d
    se = ens.tau.std(ddof=1) / math.sqrt(len(ens))
    assert abs(ens.tau.mean() - 1.5) <= 4 * se


def test_fixed_time_second_moment(sphere1):
    t = 0.3
    ens = simulate_ensemble(sphere1, StoppingRule.fixed_time(t), params(20000, universe=10.0), seed=2)
    sq = ens.cost_samples(2.0)
    assert abs(sq.mean() - 2 * t) <= 4 * sq.std(ddof=1) / math.sqrt(sq.size)
    assert np.all(ens.tau == pytest.approx(t))


def test_universe_truncation_and_causes():
    mu = RadialMeasure.sphere(0.5)
    ens = simulate_ensemble(mu, StoppingRule.fixed_time(50.0), params(500, universe=1.0), seed=3)
    counts = ens.cost_samples(1.0)
    assert ens.cause_counts()["exit-O"] == 500
    assert np.allclose(np.linalg.norm(ens.stops, axis=1), 1.0)
    assert counts.shape == (500,)


def test_same_seed_same_paths_and_subsets_replay(sphere1):
    rule = StoppingRule.barrier_hit([1.5, 2.5], [0.4, -1.0])
    a = simulate_ensemble(sphere1, rule, params(300), seed=9)
    b = simulate_ensemble(sphere1, rule, params(300), seed=9)
    assert a.to_csv() == b.to_csv()
    sub = simulate(a.starts[100:110], rule, params(10), seed=9, path_ids=a.path_ids[100:110])
    assert np.array_equal(sub.stops, a.stops[100:110])
    c = simulate_ensemble(sphere1, rule, params(300), seed=10)
    assert not np.array_equal(a.stops, c.stops)


def test_recorded_polyline_equals_replay(sphere1):
    rule = StoppingRule.sphere_hit(2.0, delay_prob=0.5, delay_radius=0.1)
    rec = simulate_ensemble(sphere1, rule, params(20, record=True), seed=4)
    plain = simulate_ensemble(sphere1, rule, params(20), seed=4)
    for i in range(20):
        t1, p1 = rec.polyline(i)
        t2, p2 = plain.polyline(i)
        assert np.array_equal(t1, t2) and np.array_equal(p1, p2)
        assert np.array_equal(p1[-1], rec.stops[i])


def test_csv_round_trip(tmp_path, sphere1):
    ens = simulate_ensemble(sphere1, StoppingRule.sphere_hit(2.0), params(50), seed=5)
    f = tmp_path / "ens.csv"
    ens.save_csv(f)
    ids, starts, stops, tau, causes = load_ensemble_csv(f)
    assert np.array_equal(ids, ens.path_ids)
    assert np.array_equal(starts, ens.starts) and np.array_equal(stops, ens.stops)
    assert np.array_equal(tau, ens.tau) and np.array_equal(causes, ens.causes)


def test_reflect_and_mix_couples_through_the_coin(sphere1):
    # p = 0 and p = 1/2 share the plane-aware step sequence; only the coin differs
    rule = StoppingRule.barrier_hit([1.5, 2.5], [0.3, -1.0])
    half = simulate_ensemble(sphere1, reflect_and_mix(rule, [0.0, 1.0]), params(2000), seed=6)
    full = simulate_ensemble(sphere1, reflect_and_mix(rule, [0.0, 1.0], p=0.0), params(2000), seed=6)
    assert np.allclose(np.linalg.norm(half.stops, axis=1), np.linalg.norm(full.stops, axis=1))
    hit = np.isfinite(full.plane_time)
    assert np.array_equal(full.mirrored, hit)
    assert 0.4 < half.mirrored[hit].mean() < 0.6
    assert np.array_equal(half.stops[half.mirrored], full.stops[half.mirrored])
    kept = hit & ~half.mirrored
    assert np.allclose(half.stops[kept][:, 1], -full.stops[kept][:, 1])


def test_reflect_and_mix_keeps_radial_law(sphere1):
    rule = StoppingRule.barrier_hit([1.5, 2.5], [0.3, -1.0])
    a = np.isclose(np.linalg.norm(simulate_ensemble(sphere1, rule, params(4000), seed=6).stops, axis=1), 1.5)
    mix = simulate_ensemble(sphere1, reflect_and_mix(rule, [0.0, 1.0]), params(4000), seed=16)
    b = np.isclose(np.linalg.norm(mix.stops, axis=1), 1.5)
    p = 0.5 * (a.mean() + b.mean())
    assert abs(a.mean() - b.mean()) <= 4 * math.sqrt(2 * p * (1 - p) / 4000)


def test_conditional_rule():
    rule = StoppingRule.fixed_time(1.0)
    stub = (np.array([0.0, 0.25]), np.array([[1.0, 0.0], [1.1, 0.0]]))
    assert conditional_rule(rule, stub).horizon == pytest.approx(0.75)
    assert conditional_rule(rule, (np.array([0.0, 1.0]), stub[1])).is_immediate
    # the stub crossed the ring inside the stopping arc: stopped with certainty
    b = StoppingRule.barrier_hit([1.5], [0.0])
    crossed = (np.array([0.0, 0.1]), np.array([[1.0, 0.0], [1.7, 0.0]]))
    assert conditional_rule(b, crossed).is_immediate
    # a delayed rule that skipped its first hit keeps a pending anchor
    d = StoppingRule.barrier_hit([1.5], [0.0], delay_prob=1.0, delay_radius=0.5)
    c = conditional_rule(d, crossed)
    assert c.delay_prob == 0.0 and c.anchor == pytest.approx((1.5, 0.0))
    with pytest.raises(ValueError):
        conditional_rule(reflect_and_mix(b, [0.0, 1.0]),
                         (np.array([0.0, 0.1]), np.array([[1.0, 0.1], [1.0, -0.1]])))


def test_spherical_martingale_moments():
    x = np.array([0.5, -0.2])
    m = spherical_martingale_realize(x, [0.3, 0.4], 40000, seed=7)
    assert np.allclose(m.points.mean(axis=0), x, atol=0.01)
    sq = np.sum((m.points - x) ** 2, axis=1).mean()
    assert sq == pytest.approx(0.25, rel=0.01)
    with pytest.raises(MeasureError):
        spherical_martingale_realize(x, [2.0], 10, seed=0, universe=2.0)


def test_stopped_law_is_radial(sphere1):
    ens = simulate_ensemble(sphere1, StoppingRule.sphere_hit(2.0), params(100), seed=8)
    emp, rad = stopped_law(ens)
    assert rad.atoms == [(pytest.approx(2.0), pytest.approx(1.0))]


def test_rule_and_parameter_validation(sphere1):
    with pytest.raises(ValueError):
        StoppingRule.barrier_hit([2.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        StoppingRule.barrier_hit([1.0], [1.5])
    with pytest.raises(ValueError):
        StoppingRule.sphere_hit(1.0, delay_prob=0.5)
    with pytest.raises(ValueError):
        SimParams(0)
    with pytest.raises(ValueError):
        simulate_ensemble(sphere1, StoppingRule.sphere_hit(1.5, universe=2.0), params(10), 0)
    with pytest.raises(MeasureError):
        simulate_ensemble(RadialMeasure.sphere(3.0), StoppingRule.sphere_hit(1.0), params(10), 0)
