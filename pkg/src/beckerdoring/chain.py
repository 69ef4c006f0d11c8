"""The single-cluster birth-death chain X and its version Y stopped above n.

A cluster of size ``i >= 2`` grows at rate ``a_i z`` and shrinks at rate
``b_i``; size 1 is absorbing.  Each jump consumes two uniforms from the
replica's stream: draw ``2k`` gives the holding time and draw ``2k+1`` the
direction.  The scalar routines and the vectorized :func:`sample_exits`
follow this layout, so they return identical samples for the same key.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .coefficients import RateModel
from .exceptions import InvalidIndex
from .rng import Purpose, Stream, uniform_pairs

__all__ = [
    "ChainStatus",
    "ClusterChainState",
    "ExitBatch",
    "ExitSample",
    "Outcome",
    "estimate_absorption",
    "run_until_exit",
    "sample_exits",
    "step",
]

DEFAULT_T_CAP = 1e7


class ChainStatus(str, enum.Enum):
    ACTIVE = "active"
    ABSORBED_AT_1 = "absorbed"
    EXITED_ABOVE = "exited"


class Outcome(enum.IntEnum):
    DOWN = 0
    UP = 1
    CENSORED = 2


@dataclass(frozen=True)
class ClusterChainState:
    size: int
    time: float = 0.0
    status: ChainStatus = ChainStatus.ACTIVE
    n: int | None = None

    def __post_init__(self):
        if (self.size == 1) != (self.status is ChainStatus.ABSORBED_AT_1):
            raise ValueError("size 1 must coincide with absorption")


@dataclass(frozen=True)
class ExitSample:
    outcome: Outcome
    time: float
    start: int
    jumps: int = 0


def _rates(model, size):
    up = model.a(size) * model.z
    return up, model.b(size)


def step(model: RateModel, state: ClusterChainState, rng: Stream) -> ClusterChainState:
    """One jump of X (or of Y when ``state.n`` is set)."""
    if state.status is not ChainStatus.ACTIVE or state.size < 2:
        raise ValueError(f"step requires an active state of size >= 2, got {state}")
    up, down = _rates(model, state.size)
    dt = -math.log(rng.random()) / (up + down)
    size = state.size + 1 if rng.random() * (up + down) < up else state.size - 1
    status = ChainStatus.ACTIVE
    if size == 1:
        status = ChainStatus.ABSORBED_AT_1
    elif state.n is not None and size > state.n:
        status = ChainStatus.EXITED_ABOVE
    return replace(state, size=size, time=state.time + dt, status=status)


def _check_start(start, n):
    if not 2 <= start <= n:
        raise InvalidIndex(f"start {start} outside [2, {n}]")


def run_until_exit(model: RateModel, start: int, n: int, rng: Stream,
                   t_cap: float = DEFAULT_T_CAP) -> ExitSample:
    """Simulate Y from ``start`` until it hits 1 (DOWN) or n+1 (UP).

    Runs longer than ``t_cap`` are returned as CENSORED at time ``t_cap``.
    """
    _check_start(start, n)
    up, down = _rate_table(model, n)
    size, t, jumps = start, 0.0, 0
    while True:
        tot = up[size] + down[size]
        t += -math.log(rng.random()) / tot
        if t > t_cap:
            return ExitSample(Outcome.CENSORED, t_cap, start, jumps)
        jumps += 1
        size += 1 if rng.random() * tot < up[size] else -1
        if size == 1:
            return ExitSample(Outcome.DOWN, t, start, jumps)
        if size > n:
            return ExitSample(Outcome.UP, t, start, jumps)


def _rate_table(model, n):
    la, lb, _ = model.log_tables(n + 1)
    up = (np.exp(la) * model.z).tolist()
    down = np.exp(lb).tolist()
    return up, down


@dataclass(frozen=True)
class ExitBatch:
    """Vectorized exit samples; ``positions[r, k]`` is Y at probe ``k``."""

    outcome: np.ndarray
    time: np.ndarray
    start: np.ndarray
    positions: np.ndarray | None = None

    @property
    def censored(self):
        return int(np.sum(self.outcome == Outcome.CENSORED))


def sample_exits(model: RateModel, start, n: int, replicas: int, seed: int,
                 t_cap: float = DEFAULT_T_CAP, probes=None, first_replica: int = 0) -> ExitBatch:
    """Exit samples for replicas ``first_replica .. first_replica+replicas-1``.

    Replica ``r`` reproduces ``run_until_exit`` driven by
    ``Stream(seed, r, Purpose.CHAIN)``.  ``start`` may be a scalar or one
    start per replica.  With ``probes`` the stopped position Y(t) is recorded
    (1 after absorption, n+1 after exit).
    """
    ids = np.arange(first_replica, first_replica + replicas, dtype=np.uint64)
    starts = np.broadcast_to(np.asarray(start, dtype=np.int64), (replicas,)).copy()
    if np.any(starts < 2) or np.any(starts > n):
        raise InvalidIndex(f"starts must lie in [2, {n}]")
    la, lb, _ = model.log_tables(n + 1)
    up = np.exp(la) * model.z
    tot = up + np.exp(lb)
    probes = None if probes is None else np.asarray(probes, float)
    pos = None
    if probes is not None:
        pos = np.empty((replicas, probes.size), dtype=np.int64)
        pos[:] = starts[:, None]

    size = starts.copy()
    t = np.zeros(replicas)
    outcome = np.full(replicas, -1, dtype=np.int64)
    active = np.arange(replicas)
    k = 0
    while active.size:
        s = size[active]
        rate = tot[s]
        u = uniform_pairs(seed, ids[active], k, Purpose.CHAIN)
        # libm log, as in the scalar path; numpy's vector log may differ by an ulp
        new_t = t[active] + (-np.fromiter(map(math.log, u[:, 0]), float, active.size) / rate)
        cens = new_t > t_cap
        moved = ~cens
        go_up = u[:, 1] * rate < up[s]
        new_s = np.where(go_up, s + 1, s - 1)
        if pos is not None:
            # Y keeps its old value on [t, new_t); record the jump for probes past new_t
            hit = moved[:, None] & (probes[None, :] >= new_t[:, None])
            pos[active] = np.where(hit, new_s[:, None], pos[active])
        t[active] = np.where(cens, t_cap, new_t)
        size[active] = np.where(moved, new_s, s)
        done_down = moved & (new_s == 1)
        done_up = moved & (new_s > n)
        outcome[active[cens]] = Outcome.CENSORED
        outcome[active[done_down]] = Outcome.DOWN
        outcome[active[done_up]] = Outcome.UP
        active = active[~(cens | done_down | done_up)]
        k += 1
    return ExitBatch(outcome, t, starts, pos)


def estimate_absorption(model: RateModel, start: int, n: int, replicas: int, seed: int,
                        t_cap: float = DEFAULT_T_CAP):
    """Monte Carlo estimate of P(absorbed at 1 before n+1) as ``(p_hat, stderr)``.

    Censored runs are excluded from both numerator and denominator.
    """
    if replicas < 100:
        raise ValueError("estimate_absorption needs at least 100 replicas")
    _check_start(start, n)
    batch = sample_exits(model, start, n, replicas, seed, t_cap)
    m = int(np.sum(batch.outcome != Outcome.CENSORED))
    p = float(np.sum(batch.outcome == Outcome.DOWN)) / m
    return p, math.sqrt(max(p * (1 - p), 0.0) / m)
