"""Estimators of laws conditioned on survival in E_n, and the monotone coupling.

Two estimators of ``P(C(t) in . | tau_n > t)`` are provided.  Rejection
keeps the replicas that have not exited; it is unbiased but its survivor
count decays like ``exp(-J_n t)``.  Fleming-Viot keeps a fixed number of
particles by restarting an exited particle from the current state of
another one chosen uniformly; its bias vanishes as the ensemble grows.
"""
from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom, poisson

from ..coefficients import RateModel
from ..exceptions import AllExitedSimultaneously, TooFewSurvivors
from ..rng import Purpose, Stream
from ..stats import EmpiricalDistribution
from .ssa import DEFAULT_T_CAP, _intensity_values, initial_states, run_ensemble
from .state import EXIT, label, rates_for

__all__ = [
    "CoupledExit",
    "DominationPreconditionUnverified",
    "DominationReport",
    "FVDiagnostics",
    "check_tail_domination",
    "conditioned_ensemble_fv",
    "conditioned_ensemble_rejection",
    "domination_run",
    "sample_dominated_pair",
]

MIN_SURVIVORS = 200


class DominationPreconditionUnverified(UserWarning):
    pass


def _times(t):
    ts = np.atleast_1d(np.asarray(t, float))
    if np.any(ts < 0) or np.any(np.diff(ts) <= 0):
        raise ValueError("times must be nonnegative and strictly increasing")
    return ts, np.ndim(t) == 0


def conditioned_ensemble_rejection(model: RateModel, n: int, pi_in, t, replicas: int, seed: int,
                                   min_survivors: int = MIN_SURVIVORS, full_output: bool = False):
    """Law of (C_2..C_n)(t) among replicas with tau_n > t.

    ``t`` may be a grid; the result is then one law per time.  With
    ``full_output`` the underlying :class:`EnsembleResult` is returned too.
    """
    ts, scalar = _times(t)
    ens = run_ensemble(model, n, pi_in, replicas, seed, probes=ts, t_cap=float(ts[-1]))
    laws = []
    for k, tk in enumerate(ts):
        surv = ens.survivors(k)
        if surv.shape[0] < min_survivors:
            raise TooFewSurvivors(f"{surv.shape[0]} survivors at t = {tk:g} (need {min_survivors})")
        laws.append(EmpiricalDistribution.from_samples(surv))
    out = laws[0] if scalar else laws
    return (out, ens) if full_output else out


@dataclass(frozen=True)
class FVDiagnostics:
    particles: int
    exits: int
    exit_times: np.ndarray
    probes: np.ndarray

    def exit_rate(self, t_from: float = 0.0, t_to: float | None = None) -> float:
        """Exits per particle per unit time over ``[t_from, t_to]``."""
        t_to = float(self.probes[-1]) if t_to is None else t_to
        m = np.sum((self.exit_times >= t_from) & (self.exit_times <= t_to))
        return float(m) / (self.particles * (t_to - t_from))


def conditioned_ensemble_fv(model: RateModel, n: int, pi_in, t, particles: int, seed: int,
                            ensemble: int = 0, full_output: bool = False, min_particles: int = 100):
    """Fleming-Viot approximation of the law conditioned on tau_n > t.

    All randomness of the interaction comes from the stream
    (seed, ``ensemble``, ENSEMBLE); initial states use replica ids
    ``ensemble * particles + k``.
    """
    if particles < min_particles:
        raise ValueError(f"Fleming-Viot needs at least {min_particles} particles")
    ts, scalar = _times(t)
    ids = np.arange(ensemble * particles, (ensemble + 1) * particles)
    states = initial_states(model, pi_in, seed, ids)
    if any(s.max_size() > n for s in states):
        raise ValueError(f"initial law charges states outside E_{n}")
    rng = Stream(seed, ensemble, Purpose.ENSEMBLE)
    rand, log = rng.random, math.log
    heap = [(-log(rand()) / s.total_rate, k) for k, s in enumerate(states)]
    heapq.heapify(heap)
    exits, laws = [], []
    for tp in ts:
        while heap[0][0] <= tp:
            tk, k = heapq.heappop(heap)
            st = states[k]
            st.time = tk
            if st.fire(rand(), n) == EXIT:
                j = rng.randbelow(particles - 1)
                j += j >= k
                if states[j].max_size() > n:
                    raise AllExitedSimultaneously("resampling source is outside E_n")
                st.assign(states[j])
                exits.append(tk)
            heapq.heappush(heap, (tk - log(rand()) / st.total_rate, k))
        laws.append(EmpiricalDistribution.from_samples(np.array([s.vector(n) for s in states])))
    out = laws[0] if scalar else laws
    diag = FVDiagnostics(particles, len(exits), np.array(exits), ts)
    return (out, diag) if full_output else out


def sample_dominated_pair(x_means, y_means, rng: Stream):
    """Counts (x, y) with y ~ product Poisson(y_means) and x_i ~ Binomial(y_i, x_i/y_i means).

    Then x is product Poisson(x_means) and x_i <= y_i for every size.
    """
    m = _intensity_values(x_means)
    f = _intensity_values(y_means)
    if m.size > f.size or np.any(m > f[: m.size]):
        raise ValueError("x_means must be dominated entrywise by y_means")
    y = poisson.ppf([rng.random() for _ in range(f.size)], f).astype(np.int64)
    p = np.zeros(f.size)
    p[: m.size] = np.divide(m, f[: m.size], out=np.zeros(m.size), where=f[: m.size] > 0)
    x = binom.ppf([rng.random() for _ in range(f.size)], y, p).astype(np.int64)
    to_dict = lambda v: {i + 2: int(c) for i, c in enumerate(v) if c}
    return to_dict(x), to_dict(y)


@dataclass(frozen=True)
class CoupledExit:
    tau_x: float
    tau_y: float
    censored: bool
    ordered_start: bool

    @property
    def ordered(self):
        return self.tau_x >= self.tau_y


def domination_run(model: RateModel, n: int, x_init, y_init, rng: Stream,
                   t_cap: float = DEFAULT_T_CAP) -> CoupledExit:
    """Coupled exits of two populations with X(0) below Y(0) in the pairing order.

    Clusters are paired after sorting both populations by decreasing size;
    unmatched Y clusters get an absorbed partner.  Paired clusters jump
    independently while apart and together once equal, and new clusters
    are shared, so every X cluster stays below its partner and
    ``tau_x >= tau_y`` on every path.
    """
    xs = sorted(label(x_init), reverse=True)
    ys = sorted(label(y_init), reverse=True)
    ordered = len(xs) <= len(ys) and all(a <= b for a, b in zip(xs, ys))
    if not ordered:
        warnings.warn("initial states are not ordered by the pairing; tau ordering is not guaranteed",
                      DominationPreconditionUnverified, stacklevel=2)
    m = max(len(xs), len(ys))
    px = xs + [1] * (m - len(xs))
    py = ys + [1] * (m - len(ys))
    if max(px, default=0) > n or max(py, default=0) > n:
        raise ValueError(f"initial states must lie in E_{n}")
    r = rates_for(model)
    r.extend(n + 3)
    up, tot, nuc = r.up, r.tot, r.nucleation
    rand, log = rng.random, math.log
    t, tau_y, y_live = 0.0, math.inf, True
    while True:
        rates = []
        total = nuc
        for x, y in zip(px, py):
            if not y_live or x == y:
                w = tot[x] if x >= 2 else 0.0
            else:
                w = (tot[x] if x >= 2 else 0.0) + (tot[y] if y >= 2 else 0.0)
            rates.append(w)
            total += w
        t -= log(rand()) / total
        if t > t_cap:
            return CoupledExit(t_cap, min(tau_y, t_cap), True, ordered)
        u = rand() * total
        if u < nuc:
            px.append(2)
            py.append(2)
            continue
        u -= nuc
        k = 0
        while k < len(rates) - 1 and u >= rates[k]:
            u -= rates[k]
            k += 1
        x, y = px[k], py[k]
        if not y_live or x == y:
            step = 1 if u < up[x] else -1
            px[k] = x + step
            if y_live:
                py[k] = y + step
        else:
            wx = tot[x] if x >= 2 else 0.0
            if u < wx:
                px[k] = x + (1 if u < up[x] else -1)
            else:
                u -= wx
                py[k] = y + (1 if u < up[y] else -1)
        if y_live and py[k] > n:
            tau_y, y_live = t, False
        if px[k] > n:
            return CoupledExit(t, tau_y, False, ordered)


@dataclass(frozen=True)
class DominationReport:
    passed: bool
    worst_margin: float
    method: str
    k_max: int


def check_tail_domination(pi_in, qsd_means, n: int, samples=None, k_max: int | None = None) -> DominationReport:
    """Check P_in(sum_{j>=i} C_j >= k) <= P_qsd(same) on a grid of (i, k).

    With product-Poisson ``pi_in`` means the tail sums are Poisson and the
    comparison is exact.  With ``samples`` (rows of C_2..C_n) the empirical
    tails may exceed the QSD tails by three standard errors.
    """
    f = _intensity_values(qsd_means)[: n - 1]
    tails_q = np.cumsum(f[::-1])[::-1]
    if k_max is None:
        k_max = int(poisson.isf(1e-12, tails_q[0])) + 2
    ks = np.arange(1, k_max + 1)
    q_sf = poisson.sf(ks[None, :] - 1, tails_q[:, None])
    if samples is None:
        m = np.zeros(n - 1)
        mv = _intensity_values(pi_in)[: n - 1]
        m[: mv.size] = mv
        tails_m = np.cumsum(m[::-1])[::-1]
        p_sf = poisson.sf(ks[None, :] - 1, tails_m[:, None])
        margin = float(np.min(q_sf - p_sf))
        return DominationReport(margin >= -1e-12, margin, "exact-poisson", k_max)
    s = np.asarray(samples)
    tails_s = np.cumsum(s[:, ::-1], axis=1)[:, ::-1]
    p_sf = np.mean(tails_s[:, :, None] >= ks[None, None, :], axis=0)
    se = np.sqrt(np.maximum(p_sf * (1 - p_sf), 1.0 / s.shape[0]) / s.shape[0])
    margin = float(np.min(q_sf + 3 * se - p_sf))
    return DominationReport(margin >= 0, margin, "empirical", k_max)
