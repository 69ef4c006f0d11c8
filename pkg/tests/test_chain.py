import math

import numpy as np
import pytest

from beckerdoring import RateModel
from beckerdoring import analytics as an
from beckerdoring.chain import (
    ChainStatus,
    ClusterChainState,
    Outcome,
    estimate_absorption,
    run_until_exit,
    sample_exits,
    step,
)
from beckerdoring.exceptions import InvalidIndex
from beckerdoring.rng import Purpose, Stream
from beckerdoring.stats import ks_exponential


def test_step_moves_by_one(const2):
    rng = Stream(1)
    s = ClusterChainState(5)
    for _ in range(100):
        if s.status is not ChainStatus.ACTIVE:
            break
        nxt = step(const2, s, rng)
        assert abs(nxt.size - s.size) == 1 and nxt.time > s.time
        s = nxt


def test_step_rejects_absorbed(const2):
    with pytest.raises(ValueError):
        step(const2, ClusterChainState(1, status=ChainStatus.ABSORBED_AT_1), Stream(0))


def test_start_out_of_range(const2):
    with pytest.raises(InvalidIndex):
        run_until_exit(const2, 6, 5, Stream(0))
    with pytest.raises(InvalidIndex):
        sample_exits(const2, 1, 5, 10, 0)


def test_vectorized_matches_scalar(const2):
    b = sample_exits(const2, 3, 6, 300, seed=11)
    for r in range(300):
        s = run_until_exit(const2, 3, 6, Stream(11, r, Purpose.CHAIN))
        assert (s.outcome, s.time) == (Outcome(b.outcome[r]), b.time[r])


def test_replica_ranges_compose(const2):
    whole = sample_exits(const2, 2, 8, 100, seed=3)
    tail = sample_exits(const2, 2, 8, 40, seed=3, first_replica=60)
    assert np.array_equal(whole.time[60:], tail.time)


def test_censoring(const2):
    b = sample_exits(const2, 2, 50, 200, seed=1, t_cap=0.01)
    assert b.censored > 0
    assert np.all(b.time[b.outcome == Outcome.CENSORED] == 0.01)


@pytest.mark.parametrize("start,n,target", [(2, 2, 1 / 3), (3, 3, 1 / 7), (2, 60, 0.5)])
def test_absorption_estimates(const2, start, n, target):
    p, se = estimate_absorption(const2, start, n, 100_000, seed=2024)
    assert abs(p - target) < 3 * se


def test_subcritical_absorption_certain(const_half):
    p, _ = estimate_absorption(const_half, 4, 40, 5000, seed=9)
    assert p > 0.999


def test_exit_time_from_qsd_start_is_exponential(const2):
    # after a burn-in the surviving chain is close to its quasi-stationary law,
    # whose residual lifetime is exponential with rate gamma_n
    n = 4
    b = sample_exits(const2, 2, n, 200_000, seed=5)
    resid = b.time[b.time > 3.0] - 3.0
    lam = an.spectral_gap_truncated(const2, n)
    assert ks_exponential(resid, lam).passed


def test_survival_lower_bound(const2):
    n, i = 5, 3
    z = const2.z
    limit = an.flux_Jn(const2, n) * sum(1 / math.exp(const2.log_q(k) + (k + 1) * math.log(z))
                                        for k in range(i, n + 1))
    assert limit == pytest.approx(an.absorption_prob(const2, i, n))
    b = sample_exits(const2, i, n, 20_000, seed=8)
    for t in (0.5, 1.0, 2.0, 5.0, 50.0):
        # a cluster absorbed at size 1 never grows past n
        frac = np.mean((b.outcome == Outcome.DOWN) | (b.time > t))
        assert frac >= limit - 3 * math.sqrt(frac * (1 - frac) / 20_000)


def test_probe_positions(const2):
    b = sample_exits(const2, 4, 6, 50, seed=4, probes=[0.0, 0.3, 1e9])
    assert np.all(b.positions[:, 0] == 4)
    final = np.where(b.outcome == Outcome.DOWN, 1, 7)
    assert np.array_equal(b.positions[:, 2], final)
