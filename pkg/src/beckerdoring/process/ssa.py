"""Exact event-by-event simulation of the population process.

Each event uses two uniforms from the replica's DYNAMICS stream: the first
for the holding time, the second for the event.  A run stopped at a probe
or at ``t_end`` discards the pending holding time, which leaves the law
unchanged because holding times are memoryless.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import poisson

from ..analytics import IntensityVector
from ..coefficients import RateModel, Reuter, check_reuter
from ..exceptions import ModelError
from ..rng import Purpose, Stream, uniforms
from .state import EXIT, GROWTH, NUCLEATION, SHRINK, SystemState

__all__ = [
    "EnsembleResult",
    "Event",
    "ExitRecord",
    "SimulationRecord",
    "first_exit",
    "initial_states",
    "run_ensemble",
    "sample_product_poisson",
    "sample_product_poisson_batch",
    "simulate",
    "simulate_ensemble",
    "ssa_step",
]

EVENT_NAMES = {NUCLEATION: "nucleation", GROWTH: "growth", SHRINK: "shrink", EXIT: "growth"}
DEFAULT_EVENT_BUDGET = 10**8
DEFAULT_T_CAP = 1e7


@dataclass(frozen=True)
class Event:
    kind: str
    size: int | None
    dt: float


def ssa_step(state: SystemState, model: RateModel, rng: Stream):
    """Advance ``state`` by one event in place; returns ``(state, Event)``."""
    if state.model is not model and state.model != model:
        raise ModelError("state was built for a different model")
    before = dict(state.counts)
    dt = -math.log(rng.random()) / state.total_rate
    state.time += dt
    kind = state.fire(rng.random())
    size = None
    if kind != NUCLEATION:
        # the size that reacted is the one that lost a cluster
        size = next(i for i, c in before.items() if state.counts.get(i, 0) < c)
    return state, Event(EVENT_NAMES[kind], size, dt)


def _advance(state, rng, t_stop, n_exit=None, budget=DEFAULT_EVENT_BUDGET):
    """Run until ``t_stop``, an exit past ``n_exit`` or ``budget`` events.

    Returns ``(reason, events)`` with reason in {"time", "exit", "budget"}.
    """
    rand, log, fire = rng.random, math.log, state.fire
    nuc = state._r.nucleation
    events = 0
    while events < budget:
        t = state.time - log(rand()) / (nuc + state.weighted_rate_up + state.weighted_rate_down)
        if t > t_stop:
            state.time = t_stop
            return "time", events
        state.time = t
        events += 1
        if fire(rand(), n_exit) == EXIT:
            return "exit", events
    return "budget", events


@dataclass
class SimulationRecord:
    probes: np.ndarray
    snapshots: list
    events: int
    censored: bool
    final: SystemState = field(repr=False)


def simulate(state0: SystemState, model: RateModel, t_end: float, probes=None, rng: Stream | None = None,
             max_events: int = DEFAULT_EVENT_BUDGET, check_explosion: bool = True) -> SimulationRecord:
    """Simulate from ``state0`` (copied) to ``t_end``; snapshot counts at ``probes``.

    A run that exhausts ``max_events`` is marked censored and its remaining
    snapshots are omitted.
    """
    if check_explosion and check_reuter(model) is not Reuter.NON_EXPLOSIVE:
        raise ModelError("non-explosion could not be certified for this model")
    probes = np.array([t_end] if probes is None else probes, float)
    if probes.size and (np.any(np.diff(probes) <= 0) or probes[-1] > t_end or probes[0] < state0.time):
        raise ValueError("probes must increase strictly within [start time, t_end]")
    st = state0.copy()
    snaps, total, budget = [], 0, max_events
    for tp in probes:
        reason, ev = _advance(st, rng, tp, None, budget - total)
        total += ev
        if reason == "budget":
            return SimulationRecord(probes, snaps, total, True, st)
        snaps.append(dict(st.counts))
    if not probes.size or probes[-1] < t_end:
        reason, ev = _advance(st, rng, t_end, None, budget - total)
        total += ev
        if reason == "budget":
            return SimulationRecord(probes, snaps, total, True, st)
    return SimulationRecord(probes, snaps, total, False, st)


@dataclass(frozen=True)
class ExitRecord:
    tau: float
    censored: bool
    events: int
    snapshots: tuple = ()


def first_exit(state0: SystemState, model: RateModel, n: int, t_cap: float = DEFAULT_T_CAP,
               rng: Stream | None = None, probes=None) -> ExitRecord:
    """First time a cluster reaches size n+1, started from ``state0`` in E_n.

    ``probes`` (times below ``t_cap``) collect (C_2..C_n) while the run
    survives; probes after the exit are recorded as None.
    """
    if state0.max_size() > n:
        raise ValueError(f"initial state has a cluster above n = {n}")
    st = state0.copy()
    t0 = st.time
    snaps, total = [], 0
    for tp in () if probes is None else probes:
        reason, ev = _advance(st, rng, t0 + tp, n)
        total += ev
        if reason == "exit":
            snaps.extend([None] * (len(probes) - len(snaps)))
            return ExitRecord(st.time - t0, False, total, tuple(snaps))
        snaps.append(st.vector(n))
    reason, ev = _advance(st, rng, t0 + t_cap, n)
    total += ev
    return ExitRecord(st.time - t0, reason != "exit", total, tuple(snaps))


def _intensity_values(intensities):
    if isinstance(intensities, IntensityVector):
        return np.asarray(intensities.values, float)
    vals = np.asarray(intensities, float)
    if vals.ndim != 1 or np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("intensities must be a finite nonnegative vector indexed from size 2")
    return vals


def sample_product_poisson(intensities, rng: Stream, model: RateModel | None = None):
    """Independent Poisson counts per size (inversion of one uniform per size).

    Returns a SystemState when ``model`` is given, otherwise a counts dict.
    """
    mu = _intensity_values(intensities)
    u = np.array([rng.random() for _ in range(mu.size)])
    draws = poisson.ppf(u, mu).astype(np.int64)
    counts = {i + 2: int(c) for i, c in enumerate(draws) if c}
    return counts if model is None else SystemState(model, counts)


def sample_product_poisson_batch(intensities, seed: int, replicas, purpose=Purpose.INITIAL) -> np.ndarray:
    """Rows of Poisson counts; row r equals ``sample_product_poisson`` on stream (seed, r)."""
    mu = _intensity_values(intensities)
    replicas = np.asarray(replicas, dtype=np.uint64)
    u = uniforms(seed, replicas[:, None], np.arange(mu.size, dtype=np.uint64)[None, :], purpose)
    return poisson.ppf(u, mu[None, :]).astype(np.int64)


def initial_states(model: RateModel, pi_in, seed: int, replicas) -> list:
    """Initial SystemStates for the given replica ids.

    ``pi_in`` is ``None``/"empty", an intensity vector (product Poisson),
    a counts dict (deterministic start) or a callable ``f(stream) -> dict``.
    """
    replicas = np.asarray(replicas, dtype=np.uint64)
    if pi_in is None or (isinstance(pi_in, str) and pi_in == "empty"):
        return [SystemState(model) for _ in replicas]
    if isinstance(pi_in, SystemState):
        pi_in = pi_in.counts
    if isinstance(pi_in, dict):
        return [SystemState(model, pi_in) for _ in replicas]
    if callable(pi_in):
        return [SystemState(model, pi_in(Stream(seed, int(r), Purpose.INITIAL))) for r in replicas]
    rows = sample_product_poisson_batch(pi_in, seed, replicas)
    out = []
    for row in rows:
        nz = np.nonzero(row)[0]
        out.append(SystemState(model, {int(i) + 2: int(row[i]) for i in nz}))
    return out


@dataclass
class EnsembleResult:
    """Per-replica exit times and probe snapshots of an ensemble.

    ``snapshots[r, k]`` holds (C_2..C_n) at probe ``k`` or -1 entries when
    replica ``r`` had already exited.  Censored runs keep ``tau = t_cap``.
    """

    tau: np.ndarray
    censored: np.ndarray
    probes: np.ndarray
    snapshots: np.ndarray | None
    metadata: dict

    @property
    def replicas(self):
        return self.tau.size

    def survivors(self, k):
        """Snapshots at probe ``k`` of the replicas still inside E_n."""
        alive = self.snapshots[:, k, 0] >= 0
        return self.snapshots[alive, k]

    def merge(self, other: "EnsembleResult") -> "EnsembleResult":
        if not np.array_equal(self.probes, other.probes):
            raise ValueError("cannot merge ensembles with different probes")
        snaps = None
        if self.snapshots is not None:
            snaps = np.concatenate([self.snapshots, other.snapshots])
        meta = dict(self.metadata)
        meta["replicas"] = self.replicas + other.replicas
        return EnsembleResult(np.concatenate([self.tau, other.tau]),
                              np.concatenate([self.censored, other.censored]),
                              self.probes, snaps, meta)


def run_ensemble(model: RateModel, n: int, pi_in, replicas: int, seed: int, probes=None,
                 t_cap: float = DEFAULT_T_CAP, first_replica: int = 0, batch: int = 2048) -> EnsembleResult:
    """First-exit runs for replicas ``first_replica..first_replica+replicas-1``."""
    probes = np.array([] if probes is None else probes, float)
    if probes.size and (np.any(np.diff(probes) <= 0) or probes[0] < 0 or probes[-1] > t_cap):
        raise ValueError("probes must increase strictly within [0, t_cap]")
    tau = np.empty(replicas)
    cens = np.zeros(replicas, dtype=bool)
    snaps = np.full((replicas, probes.size, n - 1), -1, dtype=np.int32) if probes.size else None
    for lo in range(0, replicas, batch):
        ids = np.arange(first_replica + lo, first_replica + min(lo + batch, replicas))
        states = initial_states(model, pi_in, seed, ids)
        streams = Stream.batch(seed, ids, Purpose.DYNAMICS, prefetch=32)
        for j, (st, rng) in enumerate(zip(states, streams)):
            rec = first_exit(st, model, n, t_cap, rng, probes if probes.size else None)
            tau[lo + j], cens[lo + j] = rec.tau, rec.censored
            for k, v in enumerate(rec.snapshots):
                if v is not None:
                    snaps[lo + j, k] = v
    meta = {"model": model.to_dict(), "n": n, "seed": seed, "replicas": replicas,
            "first_replica": first_replica, "t_cap": t_cap}
    return EnsembleResult(tau, cens, probes, snaps, meta)


def simulate_ensemble(model: RateModel, pi_in, t_end: float, probes, replicas: int, seed: int,
                      sizes, first_replica: int = 0, max_events: int = DEFAULT_EVENT_BUDGET,
                      batch: int = 2048):
    """Counts of the given ``sizes`` at each probe for independent replicas.

    Returns ``(counts, censored)`` with ``counts`` of shape
    (replicas, probes, len(sizes)); censored replicas keep -1 after the
    probe where their event budget ran out.
    """
    if check_reuter(model) is not Reuter.NON_EXPLOSIVE:
        raise ModelError("non-explosion could not be certified for this model")
    probes = np.asarray(probes, float)
    sizes = [int(s) for s in sizes]
    out = np.full((replicas, probes.size, len(sizes)), -1, dtype=np.int64)
    cens = np.zeros(replicas, dtype=bool)
    for lo in range(0, replicas, batch):
        ids = np.arange(first_replica + lo, first_replica + min(lo + batch, replicas))
        states = initial_states(model, pi_in, seed, ids)
        streams = Stream.batch(seed, ids, Purpose.DYNAMICS, prefetch=32)
        for j, (st, rng) in enumerate(zip(states, streams)):
            rec = simulate(st, model, t_end, probes, rng, max_events, check_explosion=False)
            for k, snap in enumerate(rec.snapshots):
                out[lo + j, k] = [snap.get(s, 0) for s in sizes]
            cens[lo + j] = rec.censored
    return out, cens
