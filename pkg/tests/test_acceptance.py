"""Acceptance criteria, one test per criterion, each at its stated tolerance.

Every test runs the corresponding verification gate at full scale with the
default seed; the same gates back ``beckerdoring verify``.
"""
import time

from beckerdoring.acceptance import (
    AcceptanceConfig,
    gate_decay_inequality,
    gate_exit_law,
    gate_flux_algebra,
    gate_generator,
    gate_metastability,
    gate_qsd_invariance,
    gate_quasi_limit,
    gate_spot_values,
    gate_subcritical,
    gate_supercritical,
    gate_survival_bound,
)

CFG = AcceptanceConfig()


def _check(gate, budget_s=None):
    t0 = time.perf_counter()
    verdict = gate(CFG)
    elapsed = time.perf_counter() - t0
    if budget_s is not None:
        assert elapsed < budget_s, f"{verdict.test} took {elapsed:.2f}s (budget {budget_s}s)"
    assert verdict.passed, f"{verdict.test}: statistic {verdict.statistic} vs threshold {verdict.threshold}; {verdict.metadata}"


def test_01_flux_recurrence_holds_to_1e_10():
    _check(gate_flux_algebra, budget_s=1)


def test_02_closed_form_spot_values():
    _check(gate_spot_values, budget_s=1)


def test_03_exit_time_from_qsd_is_exponential():
    _check(gate_exit_law)


def test_04_qsd_is_invariant_under_conditioning():
    _check(gate_qsd_invariance)


def test_05_conditioned_law_converges_to_qsd():
    _check(gate_quasi_limit)


def test_06_survival_lower_bound():
    _check(gate_survival_bound)


def test_07_subcritical_relaxation_to_equilibrium():
    _check(gate_subcritical)


def test_08_supercritical_marginals_match_stationary_intensities():
    _check(gate_supercritical)


def test_09_generator_exactness_on_enumerated_states():
    _check(gate_generator, budget_s=1)


def test_10_conditioned_decay_inequality():
    _check(gate_decay_inequality, budget_s=10)


def test_11_metastability_sweep():
    _check(gate_metastability, budget_s=60)


def test_negative_control_corrupted_flux_is_caught():
    bad = AcceptanceConfig(corrupt_jn=1.001)
    assert not gate_generator(bad).passed
