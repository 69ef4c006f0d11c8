"""Population state C = (C_2, C_3, ...) with cached propensities.

Sizes are kept in a Fenwick tree weighted by ``(a_i z + b_i) C_i`` so one
uniform picks the reacting size in O(log max size); the same residual then
decides between growth and shrinkage of that size.
"""
from __future__ import annotations

import functools
import math

import numpy as np

from ..coefficients import RateModel

__all__ = ["NUCLEATION", "GROWTH", "SHRINK", "EXIT", "SystemState", "label", "unlabel"]

NUCLEATION, GROWTH, SHRINK, EXIT = 0, 1, 2, 3
_REBUILD_EVERY = 1 << 14


class _Rates:
    """Per-model rate lists ``up[i] = a_i z``, ``down[i] = b_i`` that grow on demand."""

    def __init__(self, model):
        self.model = model
        self.nucleation = model.a(1) * model.z**2
        self.up, self.down, self.tot = [], [], []
        self.extend(64)

    def extend(self, n):
        if n < len(self.up):
            return
        n = max(n, 2 * len(self.up))
        la, lb, _ = self.model.log_tables(n)
        up = np.exp(la) * self.model.z
        down = np.exp(lb)
        up[:2] = 0.0
        down[:2] = 0.0
        self.up, self.down, self.tot = up.tolist(), down.tolist(), (up + down).tolist()


@functools.lru_cache(maxsize=64)
def rates_for(model: RateModel) -> _Rates:
    return _Rates(model)


class SystemState:
    """Finite configuration of clusters of size >= 2 under a fixed model.

    ``counts`` never holds zero entries.  ``weighted_rate_up`` and
    ``weighted_rate_down`` cache the sums of ``a_i z C_i`` and ``b_i C_i``.
    """

    __slots__ = ("model", "counts", "total_clusters", "weighted_rate_up", "weighted_rate_down",
                 "time", "_r", "_tree", "_cap", "_top", "_updates")

    def __init__(self, model: RateModel, counts=None, time: float = 0.0):
        self.model = model
        self._r = rates_for(model)
        self.time = float(time)
        self.counts = {}
        for size, c in (counts or {}).items():
            size, c = int(size), int(c)
            if size < 2 or c < 0:
                raise ValueError(f"invalid entry C_{size} = {c}")
            if c:
                self.counts[size] = c
        top = max(self.counts, default=2)
        self._cap = 1 << max(4, (top - 1).bit_length())
        self._r.extend(self._cap + 2)
        self.recompute()

    @classmethod
    def empty(cls, model):
        return cls(model)

    def copy(self) -> "SystemState":
        new = SystemState.__new__(SystemState)
        new.model, new._r, new.time = self.model, self._r, self.time
        new.counts = dict(self.counts)
        new.total_clusters = self.total_clusters
        new.weighted_rate_up = self.weighted_rate_up
        new.weighted_rate_down = self.weighted_rate_down
        new._tree, new._cap, new._top = list(self._tree), self._cap, self._top
        new._updates = self._updates
        return new

    def assign(self, other: "SystemState"):
        """Overwrite this state's configuration with ``other``'s (time is kept)."""
        self.counts = dict(other.counts)
        self.total_clusters = other.total_clusters
        self.weighted_rate_up = other.weighted_rate_up
        self.weighted_rate_down = other.weighted_rate_down
        self._tree, self._cap, self._top = list(other._tree), other._cap, other._top
        self._updates = other._updates

    @property
    def nucleation_rate(self):
        return self._r.nucleation

    @property
    def total_rate(self):
        return self._r.nucleation + self.weighted_rate_up + self.weighted_rate_down

    def max_size(self):
        return max(self.counts, default=0)

    def vector(self, n):
        """Counts (C_2, ..., C_n) as a tuple."""
        get = self.counts.get
        return tuple(get(i, 0) for i in range(2, n + 1))

    def recompute(self):
        """Rebuild caches and the tree from ``counts``."""
        up, down, tot = self._r.up, self._r.down, self._r.tot
        self.total_clusters = sum(self.counts.values())
        self.weighted_rate_up = math.fsum(up[i] * c for i, c in self.counts.items())
        self.weighted_rate_down = math.fsum(down[i] * c for i, c in self.counts.items())
        cap = self._cap
        tree = [0.0] * (cap + 1)
        for i, c in self.counts.items():
            tree[i - 1] += tot[i] * c
        for p in range(1, cap + 1):
            q = p + (p & -p)
            if q <= cap:
                tree[q] += tree[p]
        self._tree = tree
        self._top = 1 << (cap.bit_length() - 1)
        self._updates = 0

    def check_caches(self, rtol=1e-9):
        """True when the incremental caches agree with a recomputation."""
        ref = self.copy()
        ref.recompute()
        ok = ref.total_clusters == self.total_clusters
        for a, b in ((ref.weighted_rate_up, self.weighted_rate_up),
                     (ref.weighted_rate_down, self.weighted_rate_down)):
            ok &= abs(a - b) <= rtol * max(abs(a), 1.0)
        return ok and all(c > 0 for c in self.counts.values())

    def add(self, size, delta=1):
        """Change C_size by ``delta`` and update caches."""
        c = self.counts.get(size, 0) + delta
        if c < 0:
            raise ValueError(f"C_{size} would become negative")
        if size - 1 > self._cap:
            while size - 1 > self._cap:
                self._cap *= 2
            self._r.extend(self._cap + 2)
            if c:
                self.counts[size] = c
            else:
                self.counts.pop(size, None)
            self.recompute()
            return
        if c:
            self.counts[size] = c
        else:
            del self.counts[size]
        r = self._r
        self.total_clusters += delta
        self.weighted_rate_up += delta * r.up[size]
        self.weighted_rate_down += delta * r.down[size]
        w = delta * r.tot[size]
        tree, cap, p = self._tree, self._cap, size - 1
        while p <= cap:
            tree[p] += w
            p += p & -p
        self._updates += 1
        if self._updates >= _REBUILD_EVERY:
            self.recompute()

    def _select(self, r):
        """Size whose cumulative weight bracket contains ``r``, and the residual."""
        tree, cap = self._tree, self._cap
        pos, step, rem = 0, self._top, r
        while step:
            nxt = pos + step
            if nxt <= cap and tree[nxt] <= rem:
                pos = nxt
                rem -= tree[nxt]
            step >>= 1
        size = pos + 2
        if size in self.counts:
            return size, rem
        # rounding drift in the tree: fall back to an exact scan
        tot = self._r.tot
        acc = 0.0
        occupied = sorted(self.counts)
        for size in occupied:
            w = tot[size] * self.counts[size]
            if r < acc + w:
                return size, r - acc
            acc += w
        size = occupied[-1]
        return size, tot[size] * self.counts[size] * (1 - 1e-12)

    def fire(self, u, n_exit=None):
        """Apply the event selected by uniform ``u``; returns its kind.

        With ``n_exit`` set, growth past ``n_exit`` is applied and reported
        as EXIT.
        """
        r = self._r
        x = u * (r.nucleation + self.weighted_rate_up + self.weighted_rate_down)
        if x < r.nucleation or not self.counts:
            self.add(2, 1)
            return NUCLEATION
        size, rem = self._select(x - r.nucleation)
        grow = rem < r.up[size] * self.counts[size]
        self.add(size, -1)
        if grow:
            self.add(size + 1, 1)
            return EXIT if n_exit is not None and size + 1 > n_exit else GROWTH
        if size > 2:
            self.add(size - 1, 1)
        return SHRINK

    def to_dict(self):
        return {"time": self.time, "counts": {str(k): v for k, v in sorted(self.counts.items())}}

    def __eq__(self, other):
        return isinstance(other, SystemState) and self.counts == other.counts

    def __repr__(self):
        return f"SystemState(t={self.time:.6g}, counts={dict(sorted(self.counts.items()))})"


def label(state) -> list:
    """Sizes of all clusters in nondecreasing order."""
    counts = state.counts if isinstance(state, SystemState) else state
    return [i for i in sorted(counts) for _ in range(counts[i])]


def unlabel(sizes, model: RateModel | None = None):
    """Inverse of :func:`label`: a counts dict, or a SystemState when ``model`` is given."""
    counts = {}
    for s in sizes:
        s = int(s)
        if s < 2:
            continue
        counts[s] = counts.get(s, 0) + 1
    return counts if model is None else SystemState(model, counts)
