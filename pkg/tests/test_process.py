import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from beckerdoring import RateModel
from beckerdoring import analytics as an
from beckerdoring.process import (
    SystemState,
    check_tail_domination,
    conditioned_ensemble_fv,
    conditioned_ensemble_rejection,
    detailed_balance_check,
    domination_run,
    enumerate_states,
    first_exit,
    initial_states,
    label,
    qsd_generator_check,
    run_ensemble,
    sample_dominated_pair,
    sample_product_poisson,
    sample_product_poisson_batch,
    simulate,
    simulate_ensemble,
    simulate_particles,
    ssa_step,
    unlabel,
)
from beckerdoring.process.state import GROWTH, NUCLEATION, SHRINK
from beckerdoring.rng import Purpose, Stream

counts_st = st.dictionaries(st.integers(2, 40), st.integers(1, 6), max_size=8)


def test_total_rate_examples(const2):
    assert SystemState(const2, {2: 1}).total_rate == pytest.approx(7)
    assert SystemState(const2).total_rate == pytest.approx(4)


@given(counts_st)
def test_label_round_trip(counts):
    sizes = label(counts)
    assert sizes == sorted(sizes)
    assert unlabel(sizes) == counts


def test_label_example():
    assert label({2: 2, 4: 1}) == [2, 2, 4]


@given(counts_st, st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=200))
@settings(max_examples=40, deadline=None)
def test_fire_keeps_caches_consistent(counts, us):
    m = RateModel.metastable(alpha=0.5, z=1.5)
    s = SystemState(m, counts)
    for u in us:
        before = s.total_clusters
        kind = s.fire(u)
        delta = s.total_clusters - before
        assert delta == {NUCLEATION: 1, GROWTH: 0}.get(kind, delta)
        assert kind != SHRINK or delta in (0, -1)
        assert 0 not in s.counts.values()
    s.check_caches()


def test_event_frequencies_match_rates(const2):
    base = {2: 3, 3: 1, 5: 2}
    s0 = SystemState(const2, base)
    rates = {("nuc", 2): 4.0}
    for i, c in base.items():
        rates[("up", i)] = 2.0 * c
        rates[("down", i)] = 1.0 * c
    keys = sorted(rates)
    seen = dict.fromkeys(keys, 0)
    rng = Stream(77)
    n = 40_000
    for _ in range(n):
        s = s0.copy()
        _, ev = ssa_step(s, const2, rng)
        tag = {"nucleation": "nuc", "growth": "up", "shrink": "down"}[ev.kind]
        seen[(tag, ev.size if ev.size is not None else 2)] += 1
    tot = sum(rates.values())
    obs = np.array([seen[k] for k in keys])
    exp = np.array([rates[k] / tot * n for k in keys])
    assert stats.chisquare(obs, exp).pvalue > 1e-4


def test_holding_times_exponential(const2):
    s0 = SystemState(const2, {2: 1})
    rng = Stream(3)
    dts = [ssa_step(s0.copy(), const2, rng)[1].dt for _ in range(5000)]
    assert stats.kstest(dts, "expon", args=(0, 1 / 7)).pvalue > 1e-3


def test_simulate_zero_horizon(const2):
    s = SystemState(const2, {3: 2})
    rec = simulate(s, const2, 0.0, rng=Stream(1))
    assert rec.snapshots == [{3: 2}] and not rec.censored


def test_simulate_budget_censors(const2):
    rec = simulate(SystemState(const2), const2, 100.0, probes=[1.0, 100.0], rng=Stream(1), max_events=10)
    assert rec.censored and rec.events == 10


def test_means_follow_linear_ode(const2):
    # from the empty state the counts stay independent Poisson with means c(t)
    sizes, probes = [2, 3, 4, 6], [0.5, 2.0]
    counts, cens = simulate_ensemble(const2, None, 2.0, probes, 4000, seed=12, sizes=sizes)
    assert not cens.any()
    ode = an.integrate_linear_bd(const2, 300, 2.0, probes=probes, i_report=10)
    for k in range(2):
        for j, s in enumerate(sizes):
            c = ode.c[k, s - 2]
            mean = counts[:, k, j].mean()
            assert abs(mean - c) < 4 * math.sqrt(c / 4000)


def test_particles_agree_with_ssa(const2):
    reps = 3000
    tot_p = np.zeros(3)
    for r in range(reps):
        ps = simulate_particles([2, 3], const2, 1.0, Stream(5, r, Purpose.PARTICLES))
        c = ps.counts()
        tot_p += [c.get(i, 0) for i in (2, 3, 4)]
    counts, _ = simulate_ensemble(const2, {2: 1, 3: 1}, 1.0, [1.0], reps, seed=6, sizes=[2, 3, 4])
    m_ssa = counts[:, 0].mean(axis=0)
    sd = counts[:, 0].std(axis=0)
    assert np.all(np.abs(tot_p / reps - m_ssa) < 4 * sd * math.sqrt(2 / reps))


def test_particles_zero_horizon(const2):
    ps = simulate_particles([4, 2], const2, 0.0, Stream(1))
    assert ps.counts() == {2: 1, 4: 1}


def test_product_poisson_sampling(const2):
    assert sample_product_poisson(np.zeros(4), Stream(0)) == {}
    f = an.qsd_intensities(const2, 4)
    rows = sample_product_poisson_batch(f, 9, np.arange(20_000))
    assert np.all(np.abs(rows.mean(axis=0) - f.values) < 3 * np.sqrt(f.values / 20_000) + 1e-12)
    one = sample_product_poisson(f, Stream(9, 17, Purpose.INITIAL))
    assert one == {i + 2: int(c) for i, c in enumerate(rows[17]) if c}


def test_initial_state_forms(const2):
    assert initial_states(const2, "empty", 0, [0])[0].counts == {}
    assert initial_states(const2, {3: 2}, 0, [0, 1])[1].counts == {3: 2}
    got = initial_states(const2, lambda rng: {2: 1 + int(rng.random() > 2)}, 0, [5])
    assert got[0].counts == {2: 1}


def test_first_exit_from_qsd_is_exponential(const2):
    n = 3
    ens = run_ensemble(const2, n, an.qsd_intensities(const2, n), 3000, seed=21)
    jn = an.flux_Jn(const2, n)
    assert not ens.censored.any()
    assert stats.kstest(ens.tau, "expon", args=(0, 1 / jn)).pvalue > 1e-3


def test_ensemble_chunks_compose(const2):
    a = run_ensemble(const2, 4, None, 60, seed=2, probes=[0.3])
    b = run_ensemble(const2, 4, None, 25, seed=2, probes=[0.3]).merge(
        run_ensemble(const2, 4, None, 35, seed=2, probes=[0.3], first_replica=25))
    assert np.array_equal(a.tau, b.tau) and np.array_equal(a.snapshots, b.snapshots)


def test_first_exit_rejects_outside(const2):
    with pytest.raises(ValueError):
        first_exit(SystemState(const2, {6: 1}), const2, 5, rng=Stream(0))


def test_rejection_preserves_qsd(const2):
    n = 3
    f = an.qsd_intensities(const2, n)
    law = conditioned_ensemble_rejection(const2, n, f, 0.4, 6000, seed=31)
    means = law.marginal_means()
    assert np.all(np.abs(means - f.values) < 4 * np.sqrt(f.values / law.n_samples))


def test_rejection_at_time_zero_is_initial_law(const2):
    law = conditioned_ensemble_rejection(const2, 3, {2: 1}, 0.0, 300, seed=1)
    assert law.prob((1, 0)) == 1


def test_fleming_viot_rate_and_means(const2):
    n = 3
    laws, diag = conditioned_ensemble_fv(const2, n, None, [4.0, 12.0], 2000, seed=4, full_output=True)
    f = an.qsd_intensities(const2, n).values
    assert abs(diag.exit_rate(4.0, 12.0) - an.flux_Jn(const2, n)) < 0.1
    assert np.all(np.abs(laws[-1].marginal_means() - f) < 0.1)


def test_coupling_identical_start(const2):
    c = domination_run(const2, 5, {2: 1, 3: 1}, {2: 1, 3: 1}, Stream(3, 0, Purpose.COUPLING))
    assert c.tau_x == c.tau_y


def test_coupling_orders_exits(const2):
    f = an.qsd_intensities(const2, 4)
    for r in range(200):
        rng = Stream(8, r, Purpose.COUPLING)
        x, y = sample_dominated_pair(f.values * 0.5, f, rng)
        c = domination_run(const2, 4, x, y, rng)
        assert c.ordered_start and c.ordered


def test_tail_domination(const2):
    f = an.qsd_intensities(const2, 5)
    assert check_tail_domination(f.values * 0.3, f, 5).passed
    assert check_tail_domination(np.zeros(4), f, 5).passed
    assert not check_tail_domination(f.values * 2, f, 5).passed


def test_enumeration_count():
    assert sum(1 for _ in enumerate_states(4, 3)) == math.comb(3 + 3, 3)


@pytest.mark.parametrize("model", [RateModel.constant(z=2), RateModel.metastable(alpha=0.5, z=1.5),
                                   RateModel.constant(z=0.5)])
def test_qsd_solves_killed_generator(model):
    chk = qsd_generator_check(model, 4, 8)
    assert chk.passed(1e-12)
    bad = qsd_generator_check(model, 4, 8, jn=an.flux_Jn(model, 4) * 1.01)
    assert not bad.passed(1e-6)


def test_detailed_balance(const_half):
    assert detailed_balance_check(const_half, 4, 7).passed(1e-12)
