"""Empirical laws plus the distances and tests that turn ensembles into verdicts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .exceptions import (
    CensoredSamplesPresent,
    IncompatibleSupports,
    InsufficientSamples,
    WindowTooShort,
)
from .rng import Purpose, uniforms

__all__ = [
    "OVERFLOW",
    "EmpiricalDistribution",
    "GofResult",
    "KSResult",
    "ProductPoisson",
    "RateFit",
    "fit_decay",
    "ks_exponential",
    "poisson_marginal_gof",
    "tv_distance",
    "tv_sampling_floor",
]


class _Overflow:
    """Atom standing for every state outside a truncated support."""

    def __repr__(self):
        return "OVERFLOW"


OVERFLOW = _Overflow()


def _key(x):
    if isinstance(x, (tuple, list, np.ndarray)):
        return tuple(int(v) for v in x)
    return int(x)


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Finitely supported law; states are ints or tuples of ints."""

    support: tuple
    weights: np.ndarray
    n_samples: int
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if len(self.support) != w.size:
            raise ValueError("support and weights differ in length")
        if self.n_samples < 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector from at least one sample")

    @classmethod
    def from_samples(cls, samples):
        arr = np.asarray(samples)
        if arr.size == 0:
            raise InsufficientSamples("no samples")
        if arr.ndim == 1:
            vals, cnt = np.unique(arr, return_counts=True)
            support = tuple(int(v) for v in vals)
        else:
            vals, cnt = np.unique(arr, axis=0, return_counts=True)
            support = tuple(tuple(int(x) for x in row) for row in vals)
        n = int(cnt.sum())
        return cls(support, cnt / n, n, arr)

    @classmethod
    def from_dict(cls, probs, n_samples=1):
        support = tuple(_key(k) for k in probs)
        return cls(support, np.array([float(v) for v in probs.values()]), n_samples)

    @property
    def dim(self):
        first = self.support[0]
        return len(first) if isinstance(first, tuple) else 0

    def as_dict(self):
        return dict(zip(self.support, self.weights.tolist()))

    def prob(self, state):
        return self.as_dict().get(_key(state), 0.0)

    def marginal_means(self):
        pts = np.array(self.support, dtype=float)
        return self.weights @ pts if pts.ndim > 1 else float(self.weights @ pts)


@dataclass(frozen=True, eq=False)
class ProductPoisson:
    """Product of independent Poisson laws with the given means (one per coordinate)."""

    means: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(getattr(self.means, "values", self.means), float))

    @property
    def dim(self):
        return self.means.size

    def pmf(self, states):
        states = np.atleast_2d(np.asarray(states))
        return np.exp(np.sum(sps.poisson.logpmf(states, self.means[None, :]), axis=1))

    def sample(self, n_samples, seed, first=0):
        ids = np.arange(first, first + n_samples, dtype=np.uint64)
        u = uniforms(seed, ids[:, None], np.arange(self.dim, dtype=np.uint64)[None, :], Purpose.BOOTSTRAP)
        return sps.poisson.ppf(u, self.means[None, :]).astype(np.int64)


def tv_distance(p: EmpiricalDistribution, q, full_output: bool = False):
    """Total variation distance: half the L1 distance.

    Against a :class:`ProductPoisson` the complement of p's support is one
    OVERFLOW atom that carries q's remaining mass and none of p's, so the
    value is exact and the reported truncation bound is zero.
    """
    if isinstance(q, ProductPoisson):
        if p.dim != q.dim:
            raise IncompatibleSupports(f"state dimension {p.dim} vs {q.dim} Poisson coordinates")
        qv = q.pmf(np.array(p.support))
        folded = max(0.0, 1.0 - float(qv.sum()))
        val = 0.5 * (float(np.abs(p.weights - qv).sum()) + folded)
        info = {"overflow_mass": folded, "truncation_bound": 0.0}
    else:
        if p.dim != q.dim:
            raise IncompatibleSupports(f"state dimension {p.dim} vs {q.dim}")
        pd, qd = p.as_dict(), q.as_dict()
        val = 0.5 * math.fsum(abs(pd.get(s, 0.0) - qd.get(s, 0.0)) for s in set(pd) | set(qd))
        info = {"overflow_mass": 0.0, "truncation_bound": 0.0}
    val = min(max(val, 0.0), 1.0)
    return (val, info) if full_output else val


def tv_sampling_floor(q: ProductPoisson, n_samples: int, reps: int = 20, seed: int = 0):
    """Mean and sd of TV(empirical law of ``n_samples`` exact draws from q, q)."""
    vals = []
    for r in range(reps):
        draws = q.sample(n_samples, seed, first=r * n_samples)
        vals.append(tv_distance(EmpiricalDistribution.from_samples(draws), q))
    return float(np.mean(vals)), float(np.std(vals, ddof=1)) if reps > 1 else 0.0


@dataclass(frozen=True)
class KSResult:
    statistic: float
    threshold: float
    p_value: float
    passed: bool
    n: int


def ks_exponential(samples, rate: float, alpha: float = 0.01, censored=None) -> KSResult:
    """One-sample KS test of ``samples`` against Exp(rate).

    Passes when D is at most the asymptotic critical value
    ``K_{1-alpha} / sqrt(N)``.
    """
    x = np.asarray(samples, float)
    if censored is not None and np.any(censored):
        raise CensoredSamplesPresent(f"{int(np.sum(censored))} censored samples must be filtered first")
    if not np.all(np.isfinite(x)):
        raise CensoredSamplesPresent("non-finite exit times present")
    if x.size < 50:
        raise InsufficientSamples("KS test needs at least 50 samples")
    res = sps.kstest(x, "expon", args=(0.0, 1.0 / rate))
    crit = float(sps.kstwobign.isf(alpha)) / math.sqrt(x.size)
    return KSResult(float(res.statistic), crit, float(res.pvalue), bool(res.statistic <= crit), int(x.size))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    stderr: float
    window: tuple
    n_points: int


def fit_decay(times, values, floor: float = 0.0, ceiling: float = math.inf, min_points: int = 5) -> RateFit:
    """Least-squares line through ``(t, ln v)`` on the first run of points with floor < v <= ceiling."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    ok = (v > floor) & (v <= ceiling)
    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        raise WindowTooShort("no values above the floor")
    start = idx[0]
    stop = start
    while stop < v.size and ok[stop]:
        stop += 1
    if stop - start < min_points:
        raise WindowTooShort(f"only {stop - start} consecutive points in the window, need {min_points}")
    tw, yw = t[start:stop], np.log(v[start:stop])
    x = tw - tw.mean()
    sxx = float(x @ x)
    slope = float(x @ (yw - yw.mean())) / sxx
    intercept = float(yw.mean() - slope * tw.mean())
    resid = yw - (intercept + slope * tw)
    dof = tw.size - 2
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    return RateFit(slope, intercept, stderr, (float(tw[0]), float(tw[-1])), int(tw.size))


@dataclass(frozen=True)
class GofResult:
    statistic: float
    p_value: float
    dof: int
    passed: bool
    sample_mean: float
    mean_se: float
    dispersion: float
    dispersion_se: float
    bins: tuple


def _bins(mean, n, min_expected=5.0):
    """Bin edges over 0, 1, ... so every bin expects at least ``min_expected`` counts."""
    edges, acc, k = [0], 0.0, 0
    while True:
        acc += n * sps.poisson.pmf(k, mean)
        tail = n * sps.poisson.sf(k, mean)
        if acc >= min_expected and tail >= min_expected:
            edges.append(k + 1)
            acc = 0.0
        elif tail < min_expected:
            break
        k += 1
    return edges


def poisson_marginal_gof(counts, mean: float, alpha: float = 0.01) -> GofResult:
    """Chi-square goodness of fit of integer ``counts`` to Poisson(mean).

    Also reports the sample mean and index of dispersion with their
    standard errors (under the Poisson null).
    """
    c = np.asarray(counts, dtype=np.int64)
    n = c.size
    if n < 200:
        raise InsufficientSamples("Poisson goodness of fit needs at least 200 samples")
    m = float(c.mean())
    var = float(c.var(ddof=1))
    if mean == 0:
        ok = bool(np.all(c == 0))
        return GofResult(0.0 if ok else math.inf, 1.0 if ok else 0.0, 0, ok, m, 0.0,
                         math.nan, math.nan, ())
    edges = _bins(mean, n)
    if len(edges) < 2:
        # too few samples to split the support: compare the mean only
        z = (m - mean) / math.sqrt(mean / n)
        p = 2 * float(sps.norm.sf(abs(z)))
        return GofResult(z * z, p, 1, p >= alpha, m, math.sqrt(mean / n), var / m if m else math.nan,
                         math.sqrt(2.0 / (n - 1)), tuple(edges))
    obs, exp = [], []
    for lo, hi in zip(edges, edges[1:] + [None]):
        if hi is None:
            obs.append(int(np.sum(c >= lo)))
            exp.append(n * float(sps.poisson.sf(lo - 1, mean)))
        else:
            obs.append(int(np.sum((c >= lo) & (c < hi))))
            exp.append(n * float(sps.poisson.cdf(hi - 1, mean) - sps.poisson.cdf(lo - 1, mean)))
    res = sps.chisquare(obs, exp)
    dof = len(obs) - 1
    return GofResult(float(res.statistic), float(res.pvalue), dof, bool(res.pvalue >= alpha),
                     m, math.sqrt(mean / n), var / m if m else math.nan,
                     math.sqrt(2.0 / (n - 1)), tuple(edges))

