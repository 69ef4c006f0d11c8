"""Closed-form fluxes, Poisson intensities, spectral gaps and bound constants.

Every series is evaluated from the log terms

    w_k = ln(1 / (a_k Q_k z^(k+1))),

whose reverse cumulative log-sums give the absorption probabilities of the
single-cluster chain.  Fluxes, intensity vectors and the constants of the
ergodicity bounds are all read off those tails, so identities such as
``f_i^n = Q_i z^i * P(absorbed at 1 from i)`` hold to rounding.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal, expm, solve_banded
from scipy.special import logsumexp

from .coefficients import (
    RateModel,
    Regime,
    check_hypotheses,
    regime,
    sup_inverse_ratio_from,
    sup_ratio_from,
)
from .exceptions import (
    HypothesisViolation,
    InvalidIndex,
    NoConvergence,
    ScaleExceeded,
    SubcriticalRegime,
    SubcriticalRequired,
    TruncationDominates,
)

__all__ = [
    "BoundConstants",
    "GapEstimate",
    "IntensityVector",
    "LinearBDTrajectory",
    "WeightedSeqView",
    "absorbed_generator",
    "absorption_prob",
    "absorption_prob_inf",
    "bound_constants",
    "conditioned_semigroup_oracle",
    "equilibrium_intensities",
    "equilibrium_mass",
    "flux_J",
    "flux_Jn",
    "g_in_poisson",
    "h_inner",
    "h_norm",
    "integrate_linear_bd",
    "qsd_intensities",
    "spectral_gap_estimate",
    "spectral_gap_truncated",
    "stationary_intensities",
    "truncated_spectrum",
]

ORACLE_MAX_N = 200
GAP_MAX_N = 10_000
SERIES_MAX_TERMS = 1 << 23


@dataclass(frozen=True)
class IntensityVector:
    """Poisson intensities indexed by cluster size, starting at size 2."""

    kind: str
    values: np.ndarray = field(repr=False)
    n: int | None = None
    truncation_info: dict | None = None

    @property
    def sizes(self):
        return np.arange(2, 2 + len(self.values))

    def __len__(self):
        return len(self.values)

    def __getitem__(self, size):
        if not 2 <= size < 2 + len(self.values):
            raise InvalidIndex(f"size {size} outside [2, {1 + len(self.values)}]")
        return float(self.values[size - 2])

    def as_dict(self):
        return {int(i): float(v) for i, v in zip(self.sizes, self.values)}


@dataclass(frozen=True)
class WeightedSeqView:
    """Finite real sequence indexed from cluster size ``start``."""

    entries: np.ndarray
    start: int = 2


def _lz(model):
    return math.log(model.z)


def _log_w(model, n):
    """w_k for k = 0..n (w_0 is nan)."""
    la, _, lq = model.log_tables(n)
    k = np.arange(n + 1)
    return -(la + lq + (k + 1) * _lz(model))


def _log_tails(w):
    """Reverse cumulative log-sum-exp: T[i] = ln sum_{k=i..n} e^{w_k}, for i >= 1."""
    t = np.full(w.shape, np.nan)
    t[1:] = np.logaddexp.accumulate(w[1:][::-1])[::-1]
    return t


def _log_c(model, n):
    """ln(Q_i z^i) for i = 0..n."""
    _, _, lq = model.log_tables(n)
    return lq + np.arange(n + 1) * _lz(model)


def _check_n(n):
    if int(n) != n or n < 2:
        raise InvalidIndex(f"truncation level n must be an integer >= 2, got {n}")
    return int(n)


@functools.lru_cache(maxsize=256)
def _finite_tails(model, n):
    return _log_tails(_log_w(model, n))


def flux_Jn(model: RateModel, n: int) -> float:
    """Exact exit flux J_n = (sum_{k=1..n} 1/(a_k Q_k z^(k+1)))^-1."""
    n = _check_n(n)
    jn = math.exp(-_finite_tails(model, n)[1])
    # the k = 1 term alone is 1/(a_1 z^2)
    assert jn <= model.a(1) * model.z**2 * (1 + 1e-12)
    return jn


def absorption_prob(model: RateModel, i: int, n: int) -> float:
    """Probability that the chain stopped at n+1 is absorbed at 1, starting from i."""
    n = _check_n(n)
    if i == 1:
        return 1.0
    if not 2 <= i <= n:
        raise InvalidIndex(f"start {i} outside [2, {n}]")
    t = _finite_tails(model, n)
    return math.exp(t[i] - t[1])


def qsd_intensities(model: RateModel, n: int) -> IntensityVector:
    """Intensities f_i^n, i = 2..n, of the product-Poisson quasi-stationary law."""
    n = _check_n(n)
    t = _finite_tails(model, n)
    logf = _log_c(model, n)[2:] + t[2:] - t[1]
    return IntensityVector("qsd", np.exp(logf), n=n)


def _require_supercritical(model):
    if regime(model) is not Regime.SUPERCRITICAL:
        raise SubcriticalRegime(
            f"z = {model.z} is below z_s: the series diverges and the flux J is zero"
        )


@functools.lru_cache(maxsize=256)
def _infinite_tails(model, i_max, rel_tol):
    """Tails T[1..i_max] of the convergent supercritical series.

    The series is cut at K once the geometric remainder bound
    w_K * rho / (1 - rho), rho = sup_{k > K} b_k/(a_k z), is below
    ``rel_tol`` relative to the smallest requested tail.
    """
    _require_supercritical(model)
    k_cut = max(2 * i_max, 64)
    while k_cut <= SERIES_MAX_TERMS:
        rho = sup_ratio_from(model, k_cut + 1) / model.z
        if rho < 1:
            w = _log_w(model, k_cut)
            t = _log_tails(w)
            rem = math.exp(w[k_cut] - t[i_max]) * rho / (1 - rho)
            if rem <= rel_tol:
                return t[: i_max + 1], k_cut, rem
        k_cut *= 2
    raise NoConvergence("supercritical series did not reach the requested tolerance")


def flux_J(model: RateModel, rel_tol: float = 1e-12, full_output: bool = False):
    """Stationary nucleation flux J (supercritical only).

    With ``full_output`` returns ``(J, info)`` where info records the
    truncation index and the relative remainder bound achieved.
    """
    t, k_cut, rem = _infinite_tails(model, 1, rel_tol)
    j = math.exp(-t[1])
    if full_output:
        return j, {"truncation": k_cut, "remainder_bound": rem}
    return j


def absorption_prob_inf(model: RateModel, i: int, rel_tol: float = 1e-12) -> float:
    """Probability of eventual absorption at 1 from i for the unstopped chain."""
    if i == 1:
        return 1.0
    if i < 1:
        raise InvalidIndex(f"start {i} must be >= 1")
    t, _, _ = _infinite_tails(model, int(i), rel_tol)
    return math.exp(t[i] - t[1])


def stationary_intensities(model: RateModel, i_max: int, rel_tol: float = 1e-12) -> IntensityVector:
    """Intensities f_i, i = 2..i_max, of the supercritical stationary marginals.

    Uses ``z^(k+1)`` in the tail sum, so that f_i = lim_n f_i^n and
    ``a_i z f_i - b_{i+1} f_{i+1} = J``.
    """
    i_max = _check_n(i_max)
    t, k_cut, rem = _infinite_tails(model, i_max, rel_tol)
    logf = _log_c(model, i_max)[2:] + t[2:] - t[1]
    info = {"tail_index": k_cut, "remainder_bound": rem, "tail_exponent": "k+1"}
    return IntensityVector("stationary", np.exp(logf), truncation_info=info)


def _eq_tail_bound(model, i_last, log_term_last, power=1.0):
    """Bound on sum_{i > i_last} (Q_i z^i)^power from the geometric ratio."""
    sigma = (model.z * sup_inverse_ratio_from(model, i_last)) ** power
    if not sigma < 1:
        return math.inf
    return math.exp(log_term_last) * sigma / (1 - sigma)


def equilibrium_intensities(model: RateModel, i_max: int) -> IntensityVector:
    """c_i^eq = Q_i z^i for i = 2..i_max, with the truncated mass and its tail bound."""
    i_max = _check_n(i_max)
    logc = _log_c(model, i_max)[2:]
    tail = math.inf
    if regime(model) is Regime.SUBCRITICAL:
        tail = _eq_tail_bound(model, i_max, logc[-1])
    info = {"partial_mass": float(np.exp(logsumexp(logc))), "tail_bound": tail}
    return IntensityVector("equilibrium", np.exp(logc), truncation_info=info)


@functools.lru_cache(maxsize=64)
def _eq_series(model, power, rel_tol):
    if regime(model) is not Regime.SUBCRITICAL:
        raise SubcriticalRequired("sum of Q_i z^i diverges unless z < z_s")
    n = 64
    while n <= SERIES_MAX_TERMS:
        logc = power * _log_c(model, n)[2:]
        total = math.exp(logsumexp(logc))
        bound = _eq_tail_bound(model, n, logc[-1], power)
        if bound <= rel_tol * total:
            return total, bound
        n *= 2
    raise NoConvergence("equilibrium series did not converge")


def equilibrium_mass(model: RateModel, rel_tol: float = 1e-12):
    """``(sum_{i>=2} Q_i z^i, remainder bound)``; subcritical only."""
    return _eq_series(model, 1.0, rel_tol)


def _entries(x):
    if isinstance(x, WeightedSeqView):
        if x.start != 2:
            return np.concatenate([np.zeros(x.start - 2), np.asarray(x.entries, float)])
        return np.asarray(x.entries, float)
    if isinstance(x, IntensityVector):
        return np.asarray(x.values, float)
    if isinstance(x, dict):
        out = np.zeros(max(x, default=1) - 1)
        for i, v in x.items():
            out[i - 2] = v
        return out
    return np.asarray(x, float)


def h_norm(model: RateModel, x) -> float:
    """Weighted norm sqrt(sum_i x_i^2 / (Q_i z^i)); ``x`` is indexed from size 2."""
    x = _entries(x)
    nz = np.nonzero(x)[0]
    if nz.size == 0:
        return 0.0
    logc = _log_c(model, x.size + 1)[2:]
    return math.exp(0.5 * logsumexp(2 * np.log(np.abs(x[nz])) - logc[nz]))


def h_inner(model: RateModel, x, y) -> float:
    x, y = _entries(x), _entries(y)
    m = min(x.size, y.size)
    if m == 0:
        return 0.0
    logc = _log_c(model, m + 1)[2:]
    return float(np.sum(x[:m] * y[:m] * np.exp(-logc)))


def g_in_poisson(model: RateModel, n: int, means) -> float:
    """Exact E[prod_i (f_i^n/(Q_i z^i))^C_i] for a product-Poisson initial law."""
    m = np.asarray(means, float)[: n - 1]
    p = np.array([absorption_prob(model, i, n) for i in range(2, 2 + m.size)])
    return math.exp(-float(np.sum(m * (1 - p))))


@dataclass(frozen=True)
class BoundConstants:
    n: int
    K_n: float
    M: dict
    H_in: float
    H_qsd: float
    G_in: float
    G_in_vacuous: bool
    G_in_poisson: float
    in_weighted_mass: float
    K: float | None = None
    R_in: float | None = None
    R_in_n: float | None = None
    f_h_norm: float | None = None

    def to_dict(self):
        d = dict(self.__dict__)
        d["M"] = {str(k): v for k, v in self.M.items()}
        return d


def bound_constants(model: RateModel, n: int, pi_in_means=None) -> BoundConstants:
    """Constants of the ergodicity and survival bounds at truncation n.

    ``pi_in_means`` are the initial marginal means E[C_i], indexed from size
    2; ``None`` stands for the empty initial state.  ``K``/``R_in`` are only
    filled in the subcritical regime, ``R_in_n`` only in the supercritical one.
    """
    n = _check_n(n)
    means = np.zeros(n - 1) if pi_in_means is None else np.asarray(pi_in_means, float)
    if np.any(means < 0):
        raise ValueError("initial means must be nonnegative")
    logc = _log_c(model, max(n, means.size + 1))
    c_n = logc[2: n + 1]
    k_n = math.exp(0.5 * logsumexp(c_n))
    t = _finite_tails(model, n)
    log_p = t[2: n + 1] - t[1]
    M = {i: math.exp(math.log(k_n) - 0.5 * c_n[i - 2] - log_p[i - 2]) for i in range(2, n + 1)}
    m_n = np.zeros(n - 1)
    m_n[: min(means.size, n - 1)] = means[: n - 1]
    sqrt_c = np.exp(0.5 * c_n)
    f_n = np.exp(c_n + log_p)
    h_in = float(np.sum(sqrt_c * m_n / f_n))
    h_qsd = float(np.sum(sqrt_c))
    g_lin = 1.0 - float(np.sum(m_n * (1 - np.exp(log_p))))
    g_poi = math.exp(-float(np.sum(m_n * (1 - np.exp(log_p)))))
    in_mass = float(np.sum(means * np.exp(-0.5 * logc[2: 2 + means.size])))
    kw = {}
    if regime(model) is Regime.SUBCRITICAL:
        mass, _ = equilibrium_mass(model)
        kw["K"] = math.sqrt(mass)
        kw["R_in"] = kw["K"] * (in_mass + _eq_series(model, 0.5, 1e-12)[0])
    else:
        f_norm = _stationary_h_norm(model)
        kw["f_h_norm"] = f_norm
        kw["R_in_n"] = k_n * in_mass + f_norm
    return BoundConstants(n, k_n, M, h_in, h_qsd, g_lin, g_lin <= 0, g_poi, in_mass, **kw)


@functools.lru_cache(maxsize=64)
def _stationary_h_norm(model, rel_tol=1e-12):
    """||f||_H; terms decay geometrically, summed until the last doubling adds < rel_tol."""
    i_max, prev = 64, None
    while i_max <= SERIES_MAX_TERMS:
        f = stationary_intensities(model, i_max)
        val = h_norm(model, f.values)
        if prev is not None and abs(val - prev) <= rel_tol * val:
            return val
        prev, i_max = val, 2 * i_max
    raise NoConvergence("||f||_H did not converge")


def _interior_tridiagonal(model, n):
    """Diagonal and off-diagonal of the symmetrized block (q_ij), i, j = 2..n."""
    la, lb, _ = model.log_tables(n + 1)
    lz = _lz(model)
    i = np.arange(2, n + 1)
    diag = -(np.exp(la[i] + lz) + np.exp(lb[i]))
    off = np.exp(0.5 * (la[i[:-1]] + lz + lb[i[:-1] + 1]))
    return diag, off


def truncated_spectrum(model: RateModel, n: int) -> np.ndarray:
    """All eigenvalues (ascending) of the interior block of the absorbed generator."""
    n = _check_n(n)
    diag, off = _interior_tridiagonal(model, n)
    return eigh_tridiagonal(diag, off, eigvals_only=True)


def spectral_gap_truncated(model: RateModel, n: int, max_n: int = GAP_MAX_N) -> float:
    """gamma_n: minus the largest eigenvalue of the interior block, states 2..n."""
    n = _check_n(n)
    if n > max_n:
        raise ScaleExceeded(f"n = {n} exceeds the configured maximum {max_n}")
    diag, off = _interior_tridiagonal(model, n)
    if n == 2:
        return float(-diag[0])
    top = eigh_tridiagonal(diag, off, eigvals_only=True, select="i",
                           select_range=(n - 2, n - 2))
    return float(-top[0])


@dataclass(frozen=True)
class GapEstimate:
    value: float
    bracket: tuple
    n: int
    schedule: tuple
    monotone: bool


def spectral_gap_estimate(model: RateModel, tol: float = 1e-3, n_start: int = 2,
                          max_n: int = GAP_MAX_N) -> GapEstimate:
    """Approximate the gap of the infinite chain by truncated gaps on a doubling schedule.

    Stops at the first N with |gamma_N - gamma_{N/2}| < tol * gamma_N and
    reports ``bracket = (gamma_N, gamma_{N/2})``.  The limit is not claimed
    to be the infinite-operator gap; ``monotone`` records whether the computed
    schedule decreased.
    """
    report = check_hypotheses(model)
    if not report.passed("H1"):
        raise HypothesisViolation("H1 fails: b_i/a_i has no positive finite limit")
    if not report.passed("H2"):
        warnings.warn("H2 fails for this model; the truncated gaps may not approach a positive limit",
                      stacklevel=2)
    sched = []
    n = _check_n(n_start)
    prev = spectral_gap_truncated(model, n, max_n)
    sched.append((n, prev))
    while True:
        n *= 2
        if n > max_n:
            raise NoConvergence(f"gap schedule did not settle to tol={tol} by n={max_n}")
        cur = spectral_gap_truncated(model, n, max_n)
        sched.append((n, cur))
        if abs(cur - prev) < tol * cur:
            mono = all(b[1] <= a[1] for a, b in zip(sched, sched[1:]))
            return GapEstimate(cur, (cur, prev), n, tuple(sched), mono)
        prev = cur


def absorbed_generator(model: RateModel, n: int) -> np.ndarray:
    """(n+1)x(n+1) generator on states 1..n+1 with 1 and n+1 absorbing."""
    n = _check_n(n)
    la, lb, _ = model.log_tables(n)
    g = np.zeros((n + 1, n + 1))
    for i in range(2, n + 1):
        up, down = math.exp(la[i]) * model.z, math.exp(lb[i])
        g[i - 1, i] = up
        g[i - 1, i - 2] = down
        g[i - 1, i - 1] = -(up + down)
    return g


def conditioned_semigroup_oracle(model: RateModel, n: int, i: int, t, max_n: int = ORACLE_MAX_N):
    """Row ``(p^n_{ij}(t))_{j=1..n+1}`` of the stopped chain by matrix exponential.

    ``t`` may be a scalar or a 1-d grid (then one row per time).
    """
    n = _check_n(n)
    if n > max_n:
        raise ScaleExceeded(f"matrix-exponential oracle is limited to n <= {max_n}")
    if not 2 <= i <= n:
        raise InvalidIndex(f"start {i} outside [2, {n}]")
    g = absorbed_generator(model, n)
    ts = np.atleast_1d(np.asarray(t, float))
    if np.any(ts < 0):
        raise ValueError("times must be nonnegative")
    rows = np.array([expm(g * s)[i - 1] for s in ts])
    return rows[0] if np.ndim(t) == 0 else rows


@dataclass(frozen=True)
class LinearBDTrajectory:
    times: np.ndarray
    c: np.ndarray = field(repr=False)
    target: IntensityVector = field(repr=False)
    h_distance: np.ndarray = field(repr=False)
    boundary_error: float = 0.0
    i_report: int = 0

    @property
    def sizes(self):
        return np.arange(2, 2 + self.c.shape[1])

    def at(self, size):
        return self.c[:, size - 2]


def integrate_linear_bd(model: RateModel, i_max: int, t_end: float, dt_control: float = 0.01,
                        probes=None, i_report: int | None = None,
                        trunc_tol: float = 1e-6) -> LinearBDTrajectory:
    """Integrate c' = A c + a_1 z^2 e_2 from c(0) = 0 on sizes 2..i_max.

    Crank-Nicolson with tridiagonal solves; sizes above ``i_max`` are cut
    (absorbing).  The cut is accepted when it moves the stationary point by
    at most ``trunc_tol`` (relative) on sizes ``2..i_report``; the H-distance
    to the stationary (or, subcritically, equilibrium) intensities is
    reported over the same sizes.
    """
    i_max = _check_n(i_max)
    i_report = i_max // 2 if i_report is None else int(i_report)
    if not 2 <= i_report <= i_max:
        raise InvalidIndex("i_report must lie in [2, i_max]")
    if regime(model) is Regime.SUPERCRITICAL:
        target = stationary_intensities(model, i_report)
    else:
        target = equilibrium_intensities(model, i_report)
    cut = qsd_intensities(model, i_max).values[: i_report - 1]
    boundary = float(np.max(np.abs(cut - target.values) / target.values))
    if boundary > trunc_tol:
        raise TruncationDominates(
            f"cut at {i_max} moves the stationary intensities by {boundary:.3g} on sizes <= {i_report}"
        )

    la, lb, _ = model.log_tables(i_max + 1)
    i = np.arange(2, i_max + 1)
    up = np.exp(la[i]) * model.z
    down = np.exp(lb[i])
    diag = -(up + down)
    sup = down[1:]          # b_{i+1} on row i
    sub = up[:-1]           # a_{i-1} z on row i
    src = np.zeros(i.size)
    src[0] = model.a(1) * model.z**2

    def apply(c):
        out = diag * c
        out[:-1] += sup * c[1:]
        out[1:] += sub * c[:-1]
        return out

    probes = np.array([t_end] if probes is None else probes, float)
    if np.any(np.diff(probes) <= 0) or probes[0] < 0 or probes[-1] > t_end:
        raise ValueError("probes must be strictly increasing within [0, t_end]")
    c = np.zeros(i.size)
    t = 0.0
    snaps = []
    for tp in probes:
        steps = int(math.ceil((tp - t) / dt_control - 1e-12)) if tp > t else 0
        if steps:
            h = (tp - t) / steps
            ab = np.zeros((3, i.size))
            ab[0, 1:] = -0.5 * h * sup
            ab[1] = 1 - 0.5 * h * diag
            ab[2, :-1] = -0.5 * h * sub
            for _ in range(steps):
                c = solve_banded((1, 1), ab, c + 0.5 * h * apply(c) + h * src)
        t = tp
        snaps.append(c.copy())
    snaps = np.array(snaps)
    dist = np.array([h_norm(model, s[: i_report - 1] - target.values) for s in snaps])
    return LinearBDTrajectory(probes, snaps, target, dist, boundary, i_report)
