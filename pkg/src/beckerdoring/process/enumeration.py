"""Exact generator checks on small enumerated pieces of the state space E_n."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..analytics import equilibrium_intensities, flux_Jn, qsd_intensities
from ..coefficients import RateModel

__all__ = ["EnumerationCheck", "detailed_balance_check", "enumerate_states", "qsd_generator_check"]


def enumerate_states(n: int, max_total: int):
    """All (C_2, ..., C_n) with nonnegative entries summing to at most ``max_total``."""
    d = n - 1
    for total in range(max_total + 1):
        for cut in itertools.combinations(range(total + d - 1), d - 1):
            parts = np.diff((-1,) + cut + (total + d - 1,)) - 1
            yield tuple(int(p) for p in parts)


def _log_poisson(state, log_mu):
    c = np.asarray(state, float)
    return float(np.sum(c * log_mu - gammaln(c + 1))) - float(np.sum(np.exp(log_mu)))


@dataclass(frozen=True)
class EnumerationCheck:
    states_checked: int
    max_rel_residual: float
    worst_state: tuple | None

    def passed(self, tol):
        return self.max_rel_residual <= tol


def qsd_generator_check(model: RateModel, n: int, max_total: int, jn: float | None = None) -> EnumerationCheck:
    """Residual of A_n^* Pi_qsd + J_n Pi_qsd on states with total count <= max_total - 1.

    A_n is the generator killed at the first growth of an n-cluster; the
    residual at C is divided by the sum of absolute values of its terms.
    Those states have all their predecessors within the enumeration.
    ``jn`` overrides the eigenvalue (for negative controls).
    """
    f = qsd_intensities(model, n).values
    lmu = np.log(f)
    jn = flux_Jn(model, n) if jn is None else jn
    z = model.z
    up = np.array([0.0, 0.0] + [model.a(i) * z for i in range(2, n + 1)])
    down = np.array([0.0, 0.0] + [model.b(i) for i in range(2, n + 1)])
    nuc = model.a(1) * z * z
    logpi = lambda s: _log_poisson(s, lmu)
    worst, worst_state, count = 0.0, None, 0
    for st in enumerate_states(n, max_total - 1):
        c = list(st)
        p0 = math.exp(logpi(c))
        terms = []
        # outflow including killing by growth of an n-cluster
        out = nuc + sum((up[i] + down[i]) * c[i - 2] for i in range(2, n + 1))
        terms.append(-out * p0)
        if c[0] >= 1:
            prev = c.copy(); prev[0] -= 1
            terms.append(nuc * math.exp(logpi(prev)))
        prev = c.copy(); prev[0] += 1
        terms.append(down[2] * prev[0] * math.exp(logpi(prev)))
        for i in range(2, n):
            # growth i -> i+1 into c
            if c[i - 1] >= 1:
                prev = c.copy(); prev[i - 2] += 1; prev[i - 1] -= 1
                terms.append(up[i] * prev[i - 2] * math.exp(logpi(prev)))
            # shrink i+1 -> i into c
            if c[i - 2] >= 1:
                prev = c.copy(); prev[i - 2] -= 1; prev[i - 1] += 1
                terms.append(down[i + 1] * prev[i - 1] * math.exp(logpi(prev)))
        terms.append(jn * p0)
        scale = math.fsum(abs(x) for x in terms)
        rel = abs(math.fsum(terms)) / scale
        count += 1
        if rel > worst:
            worst, worst_state = rel, st
    return EnumerationCheck(count, worst, worst_state)


def detailed_balance_check(model: RateModel, n: int, max_total: int) -> EnumerationCheck:
    """Relative gap in a_i z C_i Pi(C) = b_{i+1}(C_{i+1}+1) Pi(C + Delta_i), i = 1..n-1.

    Pi is the product-Poisson measure with intensities Q_i z^i on sizes
    2..n and C_1 = z.  States C + Delta_i must stay within the enumeration.
    """
    lmu = np.log(equilibrium_intensities(model, n).values)
    z = model.z
    worst, worst_state, count = 0.0, None, 0
    for st in enumerate_states(n, max_total):
        c = list(st)
        for i in range(1, n):
            ci = z if i == 1 else c[i - 2]
            if i > 1 and ci == 0:
                continue
            nxt = c.copy()
            if i > 1:
                nxt[i - 2] -= 1
            nxt[i - 1] += 1
            if sum(nxt) > max_total:
                continue
            lhs = model.a(i) * z * ci * math.exp(_log_poisson(c, lmu))
            rhs = model.b(i + 1) * nxt[i - 1] * math.exp(_log_poisson(nxt, lmu))
            rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
            count += 1
            if rel > worst:
                worst, worst_state = rel, st
    return EnumerationCheck(count, worst, worst_state)
