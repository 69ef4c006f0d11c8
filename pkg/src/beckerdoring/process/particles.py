"""Particle description: every cluster is an independent copy of the chain X.

Initial clusters start at their labelled sizes; new clusters are activated
at the jumps of a Poisson process of rate ``a_1 z^2`` and start at size 2.
Absorbed clusters stay in the arrays with size 1 as a tombstone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..coefficients import RateModel
from ..rng import Stream
from .state import label, rates_for

__all__ = ["ParticleSystem", "simulate_particles"]


@dataclass
class ParticleSystem:
    sizes: np.ndarray
    activation: np.ndarray
    absorbed_at: np.ndarray
    n_in: int
    t_end: float
    probes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    probe_sizes: np.ndarray | None = None

    @property
    def n_total(self):
        """N(t_end): initial plus activated particles."""
        return self.sizes.size

    def counts(self, k=None):
        """Counts dict of live clusters at ``t_end`` or at probe ``k``."""
        s = self.sizes if k is None else self.probe_sizes[:, k]
        vals, cnt = np.unique(s[s >= 2], return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, cnt)}


def simulate_particles(init, model: RateModel, t_end: float, rng: Stream, probes=None) -> ParticleSystem:
    """Run the particle representation to ``t_end``.

    ``init`` is a label list of initial sizes or a state/counts mapping.
    Particles are simulated one after another from the same stream, which
    is legitimate because they are independent given their start.
    """
    sizes0 = list(init) if isinstance(init, (list, tuple, np.ndarray)) else label(init)
    if any(int(s) < 2 for s in sizes0):
        raise ValueError("initial particles must have size >= 2")
    probes = np.zeros(0) if probes is None else np.asarray(probes, float)
    r = rates_for(model)
    nuc = r.nucleation
    starts = [(int(s), 0.0) for s in sizes0]
    t = -math.log(rng.random()) / nuc
    while t <= t_end:
        starts.append((2, t))
        t -= math.log(rng.random()) / nuc

    m = len(starts)
    final = np.empty(m, dtype=np.int64)
    act = np.array([s[1] for s in starts])
    dead = np.full(m, math.inf)
    psizes = np.zeros((m, probes.size), dtype=np.int64)
    for k, (size, t) in enumerate(starts):
        pk = int(np.searchsorted(probes, t, side="left"))
        # probes before activation see no particle (size 0)
        while True:
            if size + 2 > len(r.up):
                r.extend(size + 2)
            up, tot = r.up[size], r.tot[size]
            t_next = t - math.log(rng.random()) / tot
            while pk < probes.size and probes[pk] < t_next and probes[pk] <= t_end:
                psizes[k, pk] = size
                pk += 1
            if t_next > t_end:
                break
            t = t_next
            size += 1 if rng.random() * tot < up else -1
            if size == 1:
                dead[k] = t
                psizes[k, pk:] = 1
                break
        final[k] = size
    return ParticleSystem(final, act, dead, len(sizes0), t_end, probes, psizes)
