import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from beckerdoring import RateModel
from beckerdoring import analytics as an
from beckerdoring.coefficients import rate_a, rate_b
from beckerdoring.exceptions import SubcriticalRegime, SubcriticalRequired

MODELS = [RateModel.constant(z=2.0), RateModel.constant(z=0.5), RateModel.metastable(alpha=0.5, z=1.5),
          RateModel.power_law(1, 1, 2, 1, z=3.0)]


def _first_step_absorption(model, n):
    """P(hit 1 before n+1) from each i in 2..n, by a dense linear solve."""
    z = model.z
    m = n - 1
    A = np.zeros((m, m))
    rhs = np.zeros(m)
    for k, i in enumerate(range(2, n + 1)):
        up, down = rate_a(model, i) * z, rate_b(model, i)
        A[k, k] = up + down
        if k > 0:
            A[k, k - 1] = -down
        else:
            rhs[k] = down
        if k < m - 1:
            A[k, k + 1] = -up
    return np.linalg.solve(A, rhs)


def test_flux_examples(const2, const_half):
    assert an.flux_Jn(const2, 2) == pytest.approx(8 / 3, rel=1e-14)
    assert an.flux_Jn(const2, 3) == pytest.approx(16 / 7, rel=1e-14)
    assert an.flux_Jn(const2, 200) == pytest.approx(2, rel=1e-12)
    assert an.flux_Jn(const_half, 2) == pytest.approx(1 / 12, rel=1e-14)
    assert an.flux_J(const2) == pytest.approx(2, rel=1e-12)
    assert an.flux_J(RateModel.constant(z=4)) == pytest.approx(12, rel=1e-12)
    with pytest.raises(SubcriticalRegime):
        an.flux_J(const_half)


def test_qsd_examples(const2):
    assert an.qsd_intensities(const2, 2)[2] == pytest.approx(4 / 3)
    f3 = an.qsd_intensities(const2, 3)
    assert f3[2] == pytest.approx(12 / 7) and f3[3] == pytest.approx(8 / 7)
    seq = [an.qsd_intensities(const2, n)[2] for n in (2, 3, 4, 40)]
    assert seq[2] == pytest.approx(28 / 15)
    assert all(a < b for a, b in zip(seq, seq[1:])) and seq[-1] == pytest.approx(2, rel=1e-10)


def test_stationary_examples(const2):
    assert np.allclose(an.stationary_intensities(const2, 30).values, 2, rtol=1e-12)
    assert np.allclose(an.stationary_intensities(RateModel.constant(z=4), 30).values, 4, rtol=1e-12)


def test_equilibrium_examples(const_half):
    c = an.equilibrium_intensities(const_half, 40)
    assert np.allclose(c.values, 0.5 ** np.arange(2, 41), rtol=1e-13)
    mass, _ = an.equilibrium_mass(const_half)
    assert mass == pytest.approx(0.5, rel=1e-10)
    with pytest.raises(SubcriticalRequired):
        an.equilibrium_mass(RateModel.constant(z=2))
    m = MODELS[2]
    assert an.equilibrium_intensities(m, 5)[2] == pytest.approx(rate_a(m, 1) / rate_b(m, 2) * m.z ** 2)


def test_absorption_examples(const2):
    assert an.absorption_prob(const2, 2, 2) == pytest.approx(1 / 3)
    assert an.absorption_prob(const2, 3, 3) == pytest.approx(1 / 7)
    assert an.absorption_prob(const2, 1, 5) == pytest.approx(1.0)
    assert an.absorption_prob_inf(const2, 2) == pytest.approx(0.5)
    assert an.absorption_prob_inf(const2, 3) == pytest.approx(0.25)
    assert an.absorption_prob_inf(const2, 1) == pytest.approx(1.0)


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("n", [2, 3, 7, 25])
def test_absorption_against_linear_solve(model, n):
    ref = _first_step_absorption(model, n)
    got = [an.absorption_prob(model, i, n) for i in range(2, n + 1)]
    assert np.allclose(got, ref, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("model", MODELS)
@given(n=st.integers(2, 60))
@settings(max_examples=20, deadline=None)
def test_flux_recurrence(model, n):
    f = an.qsd_intensities(model, n)
    jn = an.flux_Jn(model, n)
    z = model.z
    prev = z
    for i in range(1, n + 1):
        fi = z if i == 1 else f[i]
        nxt = f[i + 1] if i < n else 0.0
        lhs = rate_a(model, i) * z * fi - (rate_b(model, i + 1) * nxt if i < n else 0.0)
        assert lhs == pytest.approx(jn, rel=1e-10)
    assert f[n] == pytest.approx(jn / (rate_a(model, n) * z), rel=1e-12)


@pytest.mark.parametrize("model", MODELS)
def test_absorption_matches_intensity_ratio(model):
    n = 12
    f = an.qsd_intensities(model, n)
    for i in range(2, n + 1):
        ratio = f[i] / math.exp(model.log_q(i) + i * math.log(model.z))
        assert an.absorption_prob(model, i, n) == pytest.approx(ratio, rel=1e-12)


def test_jn_monotone_and_limit():
    for model in (MODELS[0], MODELS[2], MODELS[3]):
        j = an.flux_J(model)
        js = [an.flux_Jn(model, n) for n in range(2, 40)]
        assert all(a > b for a, b in zip(js, js[1:]))
        gaps = [abs(x - j) for x in js]
        assert all(a >= b for a, b in zip(gaps, gaps[1:]))
        assert an.absorption_prob(model, 3, 300) == pytest.approx(an.absorption_prob_inf(model, 3), rel=1e-8)


def test_h_norm(const2):
    assert an.h_norm(const2, np.zeros(5)) == 0
    assert an.h_norm(const2, {2: 1.0}) == pytest.approx(0.5)
    x = np.full(200, 2.0)
    assert an.h_norm(const2, x) == pytest.approx(math.sqrt(2), rel=1e-12)


def test_bound_constants(const2):
    bc = an.bound_constants(const2, 2)
    assert bc.K_n == pytest.approx(2)
    assert bc.M[2] == pytest.approx(3)
    assert bc.G_in == 1 and bc.H_in == 0
    assert bc.K is None and bc.R_in_n is not None


def test_truncated_gap_examples(const2):
    assert an.spectral_gap_truncated(const2, 2) == pytest.approx(3)
    assert an.spectral_gap_truncated(const2, 3) == pytest.approx(3 - math.sqrt(2))


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("n", [3, 8, 30])
def test_truncated_spectrum_against_dense(model, n):
    Q = an.absorbed_generator(model, n)
    inner = Q[1:n, 1:n] if Q.shape[0] == n + 1 else Q
    dense = np.sort(np.linalg.eigvals(_interior(model, n)).real)
    spec = np.sort(an.truncated_spectrum(model, n))
    assert np.allclose(spec, dense, rtol=1e-9, atol=1e-12)
    assert np.all(spec < 0)
    assert an.spectral_gap_truncated(model, n) == pytest.approx(-dense.max(), rel=1e-9)


def _interior(model, n):
    z = model.z
    m = n - 1
    A = np.zeros((m, m))
    for k, i in enumerate(range(2, n + 1)):
        A[k, k] = -(rate_a(model, i) * z + rate_b(model, i))
        if k > 0:
            A[k, k - 1] = rate_b(model, i)
        if k < m - 1:
            A[k, k + 1] = rate_a(model, i) * z
    return A


def test_gap_estimate(const2):
    with pytest.warns(UserWarning):
        est = an.spectral_gap_estimate(const2)
    lam = (math.sqrt(2) - 1) ** 2
    assert est.bracket[0] <= est.value <= est.bracket[1]
    assert est.value == pytest.approx(lam, rel=5e-3)
    assert est.monotone


def test_semigroup_oracle(const2):
    row0 = an.conditioned_semigroup_oracle(const2, 2, 2, 0.0)
    assert np.allclose(np.asarray(row0).ravel()[:3], [0, 1, 0])
    row = np.asarray(an.conditioned_semigroup_oracle(const2, 2, 2, 60.0)).ravel()
    assert row.sum() == pytest.approx(1, abs=1e-12)
    assert row[0] == pytest.approx(1 / 3, abs=1e-8) and row[-1] == pytest.approx(2 / 3, abs=1e-8)
    for n in (4, 9):
        row = np.asarray(an.conditioned_semigroup_oracle(const2, n, 3, 200.0)).ravel()
        assert row[0] == pytest.approx(an.absorption_prob(const2, 3, n), abs=1e-8)
        assert np.all(row >= -1e-14) and row.sum() == pytest.approx(1, abs=1e-12)


def test_oracle_agrees_with_generator(const2):
    Q = an.absorbed_generator(const2, 5)
    P = expm(Q * 0.7)
    row = np.asarray(an.conditioned_semigroup_oracle(const2, 5, 3, 0.7)).ravel()
    assert np.allclose(row, P[2], atol=1e-12)


def test_linear_ode(const2):
    traj = an.integrate_linear_bd(const2, 400, 60.0, probes=[0.0, 5.0, 60.0], i_report=20)
    assert np.all(traj.c[0] == 0)
    assert np.allclose(traj.c[-1][:19], 2, rtol=1e-3)
    gap = (math.sqrt(2) - 1) ** 2
    tt = an.integrate_linear_bd(const2, 400, 40.0, probes=np.linspace(10, 40, 16), i_report=20)
    slope = np.polyfit(tt.times, np.log(tt.h_distance), 1)[0]
    assert slope <= -gap + 0.05
