import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from beckerdoring.exceptions import IncompatibleSupports, InsufficientSamples, WindowTooShort
from beckerdoring.rng import uniforms
from beckerdoring.stats import (
    EmpiricalDistribution,
    ProductPoisson,
    fit_decay,
    ks_exponential,
    poisson_marginal_gof,
    tv_distance,
    tv_sampling_floor,
)


def test_tv_examples():
    p = EmpiricalDistribution.from_dict({0: 0.5, 1: 0.5})
    q = EmpiricalDistribution.from_dict({0: 0.25, 1: 0.75})
    assert tv_distance(p, p) == 0
    assert tv_distance(p, q) == pytest.approx(0.25)
    a = EmpiricalDistribution.from_dict({(1, 0): 1.0})
    b = EmpiricalDistribution.from_dict({(0, 1): 1.0})
    assert tv_distance(a, b) == 1


def test_tv_dimension_mismatch():
    with pytest.raises(IncompatibleSupports):
        tv_distance(EmpiricalDistribution.from_dict({(1, 0): 1.0}), ProductPoisson([1.0]))


def test_tv_against_poisson_is_exact():
    # brute-force sum over a box that holds essentially all mass
    q = ProductPoisson([0.7, 1.3])
    p = EmpiricalDistribution.from_dict({(0, 0): 0.2, (1, 1): 0.5, (3, 0): 0.3})
    grid = [(i, j) for i in range(40) for j in range(40)]
    qv = dict(zip(grid, q.pmf(grid)))
    pd = p.as_dict()
    brute = 0.5 * sum(abs(pd.get(s, 0) - qv[s]) for s in grid)
    assert tv_distance(p, q) == pytest.approx(brute, abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60))
@settings(max_examples=50, deadline=None)
def test_tv_bounds_and_symmetry(rows):
    p = EmpiricalDistribution.from_samples(np.array(rows))
    q = EmpiricalDistribution.from_samples(np.array(rows[::2]))
    d = tv_distance(p, q)
    assert 0 <= d <= 1 and d == pytest.approx(tv_distance(q, p))
    assert tv_distance(p, ProductPoisson([1.0, 2.0])) <= 1


def test_sampling_floor_shrinks():
    q = ProductPoisson([1.0, 0.5])
    small, _ = tv_sampling_floor(q, 100, reps=10, seed=1)
    big, _ = tv_sampling_floor(q, 10_000, reps=10, seed=1)
    assert big < small / 3


def test_ks_quantile_plugin():
    n = 1000
    x = -np.log(1 - (np.arange(1, n + 1) - 0.5) / n)
    r = ks_exponential(x, 1.0)
    assert r.passed and r.statistic == pytest.approx(0.5 / n, rel=1e-6)


def test_ks_degenerate_and_misspecified():
    assert not ks_exponential(np.full(100, 0.7), 1.0).passed
    u = uniforms(4, 0, np.arange(10_000))
    x = -np.log(u)
    r = ks_exponential(x, 2.0)
    assert not r.passed and r.statistic == pytest.approx(0.25, abs=0.02)
    assert ks_exponential(x, 1.0).passed
    with pytest.raises(InsufficientSamples):
        ks_exponential(x[:10], 1.0)


def test_ks_matches_scipy():
    x = -np.log(uniforms(2, 0, np.arange(500))) / 3
    r = ks_exponential(x, 3.0, alpha=0.05)
    ref = sps.kstest(x, "expon", args=(0, 1 / 3))
    assert r.statistic == ref.statistic
    assert r.threshold == pytest.approx(1.3581 / math.sqrt(500), rel=1e-3)


def test_fit_decay_exact_and_noisy():
    t = np.linspace(0, 5, 30)
    assert fit_decay(t, np.exp(-2 * t)).slope == pytest.approx(-2, abs=1e-12)
    noise = 1 + 0.01 * (uniforms(1, 0, np.arange(30)) - 0.5) * 2
    fit = fit_decay(t, 3 * np.exp(-0.5 * t) * noise)
    assert abs(fit.slope + 0.5) < 3 * fit.stderr + 1e-3
    with pytest.raises(WindowTooShort):
        fit_decay(t, np.full(30, 1e-9), floor=1e-6)


def test_fit_decay_uses_window():
    t = np.arange(20.0)
    v = np.exp(-t)
    v[12:] = 1e-3  # a noise floor
    fit = fit_decay(t, v, floor=2e-3)
    assert fit.window[1] <= 11 and fit.slope == pytest.approx(-1)


def _poisson(mean, n, seed):
    return sps.poisson.ppf(uniforms(seed, 0, np.arange(n)), mean).astype(int)


def test_gof_calibration():
    passes = sum(poisson_marginal_gof(_poisson(2.0, 2000, s), 2.0).passed for s in range(100))
    assert passes >= 95


def test_gof_power_and_edges():
    assert not poisson_marginal_gof(_poisson(2.0, 10_000, 1), 4.0).passed
    assert poisson_marginal_gof(np.zeros(300, int), 0.0).passed
    assert not poisson_marginal_gof(np.r_[np.zeros(299, int), 1], 0.0).passed
    with pytest.raises(InsufficientSamples):
        poisson_marginal_gof(np.zeros(50, int), 1.0)


def test_empirical_distribution_basics():
    d = EmpiricalDistribution.from_samples(np.array([[1, 0], [1, 0], [0, 2]]))
    assert d.prob((1, 0)) == pytest.approx(2 / 3)
    assert np.allclose(d.marginal_means(), [2 / 3, 2 / 3])
    assert d.dim == 2
    with pytest.raises(ValueError):
        EmpiricalDistribution.from_dict({0: 0.3})
