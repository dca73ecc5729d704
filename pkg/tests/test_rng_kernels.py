import numpy as np
import pytest

from skbarrier import _core, rng
from skbarrier._core.exit_time import exit_time_table, sample_exit_time, survival
from skbarrier.brownian import SimParams, StoppingRule, reflect_and_mix, simulate_ensemble
from skbarrier.measures import RadialMeasure

MASK = 2**64 - 1


def mix_int(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def key_int(seed, stream, path):
    g = 0x9E3779B97F4A7C15
    base = mix_int((seed * g + stream + 1) & MASK)
    return mix_int(base ^ (((path + 1) * g) & MASK))


def test_uniforms_match_integer_splitmix():
    ids = np.arange(20)
    keys = rng.path_keys(12345, rng.STEPS, ids)
    assert [int(k) for k in keys] == [key_int(12345, 0, i) for i in range(20)]
    u = rng.uniforms(keys, np.full(20, 7))
    g = 0x9E3779B97F4A7C15
    want = [(mix_int((key_int(12345, 0, i) + 8 * g) & MASK) >> 11) / 2.0**53 for i in range(20)]
    assert list(u) == want
    assert np.all((u >= 0) & (u < 1))


def test_normals_are_standard():
    keys = rng.path_keys(1, rng.STEPS, np.arange(200_000))
    g = rng.normals(keys, np.zeros(200_000, dtype=np.int64), 3)
    assert np.abs(g.mean(axis=0)).max() < 0.01
    assert np.abs(np.cov(g.T) - np.eye(3)).max() < 0.015


@pytest.mark.parametrize("d", [2, 3])
def test_exit_time_mean_from_center(d):
    # E T = 1/d for the unit ball started at the centre
    u = (np.arange(400_000) + 0.5) / 400_000
    assert sample_exit_time(u, d).mean() == pytest.approx(1.0 / d, rel=2e-3)
    q, a1, lam = exit_time_table(d)
    assert np.all(np.diff(q) >= 0)
    t = q[2048]
    assert 1 - survival(t, d)[0] == pytest.approx(0.5, abs=1e-3)


def _ens(rule, backend, n=2000, threads=1, mu=None, seed=5):
    mu = mu or RadialMeasure.sphere(1.0)
    return simulate_ensemble(mu, rule, SimParams(n, universe=3.0, threads=threads, backend=backend), seed)


RULES = {
    "sphere": StoppingRule.sphere_hit(2.0),
    "barrier": StoppingRule.barrier_hit([1.5, 2.5], [0.6, -1.0]),
    "reversed": StoppingRule.barrier_hit([1.5, 2.5], [-0.3, 1.0], orientation=_core.REVERSED),
    "fixed": StoppingRule.fixed_time(0.4),
    "delay": StoppingRule.sphere_hit(2.0, delay_prob=0.5, delay_radius=0.05),
    "mirror": reflect_and_mix(StoppingRule.barrier_hit([1.5, 2.5], [0.6, -1.0]), [0.0, 1.0]),
}


@pytest.mark.skipif(_core.BACKEND != "compiled", reason="compiled kernel not built")
@pytest.mark.parametrize("name", sorted(RULES))
def test_backends_agree(name):
    py = _ens(RULES[name], "python", n=400)
    cc = _ens(RULES[name], "compiled", n=400)
    assert np.max(np.abs(py.stops - cc.stops)) <= 1e-9
    assert np.max(np.abs(py.tau - cc.tau)) <= 1e-9
    assert np.array_equal(py.causes, cc.causes)


@pytest.mark.parametrize("name", ["barrier", "delay", "mirror"])
def test_thread_count_does_not_change_ensembles(name):
    a = _ens(RULES[name], None, threads=1)
    b = _ens(RULES[name], None, threads=4)
    assert a.to_csv() == b.to_csv()


def test_three_dimensional_reversed_barrier_runs_on_both_backends():
    rule = StoppingRule.barrier_hit([1.5], [0.2], orientation=_core.REVERSED)
    mu = RadialMeasure.sphere(1.0, 3)
    a = _ens(rule, "python", n=200, mu=mu)
    r = np.linalg.norm(a.stops, axis=1)
    assert np.all(np.isclose(r, 1.5) | np.isclose(r, 3.0))
    if _core.BACKEND == "compiled":
        b = _ens(rule, "compiled", n=200, mu=mu)
        assert np.max(np.abs(a.stops - b.stops)) <= 1e-9
