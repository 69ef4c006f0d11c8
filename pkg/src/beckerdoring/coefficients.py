"""Rate-coefficient families for the Becker-Döring network and their derived constants.

A cluster of size ``i`` grows at rate ``a_i z`` and shrinks at rate ``b_i``;
new 2-clusters appear at rate ``a_1 z^2``.  Everything downstream works with
``ln Q_i`` where ``Q_1 = 1`` and ``Q_{i+1} = Q_i a_i / b_{i+1}``, because
``Q_i z^i`` over- or underflows long before the cluster sizes of interest.
"""
from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import logsumexp

from .exceptions import (
    CriticalZ,
    HypothesisViolation,
    IndexBeyondTable,
    InvalidIndex,
    ModelError,
    NoConvergence,
    NoNucleus,
    NonMonotone,
)

__all__ = [
    "Family",
    "HypothesisReport",
    "ModelConstants",
    "RateModel",
    "Regime",
    "Reuter",
    "Status",
    "check_hypotheses",
    "check_reuter",
    "critical_size",
    "log_q_prefactor",
    "model_constants",
    "rate_a",
    "rate_b",
    "regime",
    "saturation",
    "sup_inverse_ratio_from",
    "sup_ratio_from",
]

CRITICAL_RTOL = 1e-12


class Family(str, enum.Enum):
    CONSTANT = "constant"
    POWER_LAW = "powerlaw"
    METASTABLE = "metastable"
    TABULATED = "tabulated"


class Regime(str, enum.Enum):
    SUBCRITICAL = "subcritical"
    SUPERCRITICAL = "supercritical"


class Reuter(str, enum.Enum):
    NON_EXPLOSIVE = "non-explosive"
    UNDETERMINED = "undetermined"


class Status(str, enum.Enum):
    ANALYTIC_PASS = "analytic-pass"
    EMPIRICAL_PASS = "empirical-pass"
    FAIL = "fail"


_PARAMS = {
    Family.CONSTANT: ("a", "b"),
    Family.POWER_LAW: ("A", "alpha", "B", "beta"),
    Family.METASTABLE: ("A", "alpha", "zs", "q", "gamma"),
    Family.TABULATED: ("a", "b", "tail"),
}
_ALIASES = {"z_s": "zs", "α": "alpha", "β": "beta", "γ": "gamma"}
_TAILS = ("hold", "error")


class _Tables:
    """Log-rate tables indexed by cluster size, grown on demand under a lock."""

    def __init__(self, model):
        self._model = model
        self._lock = threading.Lock()
        self.n = 0
        self.log_a = np.empty(0)
        self.log_b = np.empty(0)
        self.log_q = np.empty(0)

    def ensure(self, n):
        if n <= self.n:
            return self
        with self._lock:
            if n <= self.n:
                return self
            new_n = max(n, 2 * self.n, 64)
            limit = self._model._table_limit()
            if limit is not None:
                if n > limit:
                    raise IndexBeyondTable(
                        f"size {n} exceeds the tabulated range (max {limit}) and tail='error'"
                    )
                new_n = min(new_n, limit)
            idx = np.arange(new_n + 1, dtype=float)
            log_a, log_b = self._model._log_rates_at(idx)
            log_q = np.full(new_n + 1, np.nan)
            log_q[1] = 0.0
            # sequential accumulation keeps log_q[i+1] == log_q[i] + step[i] exactly
            steps = log_a[1:new_n] - log_b[2:new_n + 1]
            log_q[2:] = np.add.accumulate(np.concatenate(([0.0], steps)))[1:]
            self.log_a, self.log_b, self.log_q = log_a, log_b, log_q
            self.n = new_n
        return self


@dataclass(frozen=True)
class RateModel:
    """Coefficient family plus monomer concentration.

    Build instances with the family constructors (:meth:`constant`,
    :meth:`power_law`, :meth:`metastable`, :meth:`tabulated`) or from the JSON
    form with :meth:`from_dict`.  Instances are immutable and hashable; log-rate
    tables are precomputed up to ``i_max_hint`` so a model can be shared
    between threads.
    """

    family: Family
    params: tuple
    z: float
    i_max_hint: int = 1024
    _tables: _Tables = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if isinstance(self.params, Mapping):
            object.__setattr__(self, "params", _freeze_params(self.family, self.params))
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "i_max_hint", int(self.i_max_hint))
        self._validate()
        object.__setattr__(self, "_tables", _Tables(self))
        hint = self.i_max_hint
        limit = self._table_limit()
        if limit is not None:
            hint = min(hint, limit)
        self._tables.ensure(hint)
        zs = _saturation_or_none(self)
        if zs is not None and abs(self.z - zs[0]) <= CRITICAL_RTOL * zs[0]:
            raise CriticalZ(
                f"z = {self.z} equals the saturation concentration z_s = {zs[0]}; "
                "the critical case is not supported"
            )

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, a=1.0, b=1.0, *, z, i_max_hint=1024):
        return cls(Family.CONSTANT, {"a": a, "b": b}, z, i_max_hint)

    @classmethod
    def power_law(cls, A, alpha, B, beta, *, z, i_max_hint=1024):
        return cls(Family.POWER_LAW, {"A": A, "alpha": alpha, "B": B, "beta": beta}, z, i_max_hint)

    @classmethod
    def metastable(cls, A=1.0, alpha=0.0, zs=1.0, q=1.0, gamma=0.5, *, z, i_max_hint=1024):
        return cls(
            Family.METASTABLE,
            {"A": A, "alpha": alpha, "zs": zs, "q": q, "gamma": gamma},
            z,
            i_max_hint,
        )

    @classmethod
    def tabulated(cls, a, b, *, z, tail="hold", i_max_hint=1024):
        """``a[0]`` is a_1 and ``b[0]`` is b_2."""
        return cls(Family.TABULATED, {"a": a, "b": b, "tail": tail}, z, i_max_hint)

    @classmethod
    def from_dict(cls, spec):
        try:
            family = Family(str(spec["family"]).lower().replace("_", "").replace("-", ""))
        except (KeyError, ValueError) as exc:
            raise ModelError(f"unknown or missing model family: {spec.get('family')!r}") from exc
        if "z" not in spec:
            raise ModelError("model specification needs a monomer concentration 'z'")
        return cls(family, dict(spec.get("params", {})), spec["z"], spec.get("i_max_hint", 1024))

    def to_dict(self):
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params}
        return {"family": self.family.value, "params": params, "z": self.z,
                "i_max_hint": self.i_max_hint}

    def __reduce__(self):
        # the rate-table cache holds a lock; rebuild it on unpickling
        return (RateModel.from_dict, (self.to_dict(),))

    def with_z(self, z):
        return RateModel(self.family, self.params, z, self.i_max_hint)

    @property
    def p(self):
        """Parameters as a plain dict."""
        return dict(self.params)

    # -- validation -------------------------------------------------------
    def _validate(self):
        p = self.p
        if not (math.isfinite(self.z) and self.z > 0):
            raise ModelError(f"z must be a positive real, got {self.z}")
        if self.i_max_hint < 2:
            raise ModelError("i_max_hint must be at least 2")
        if self.family is Family.TABULATED:
            a, b = np.asarray(p["a"], float), np.asarray(p["b"], float)
            if a.size < 1 or b.size < 1:
                raise ModelError("tabulated model needs at least a_1 and b_2")
            if not (np.all(np.isfinite(a)) and np.all(a > 0)):
                raise ModelError("tabulated a_i must be positive")
            if not (np.all(np.isfinite(b)) and np.all(b > 0)):
                raise ModelError("tabulated b_i must be positive")
            if p["tail"] not in _TAILS:
                raise ModelError(f"tail rule must be one of {_TAILS}, got {p['tail']!r}")
            return
        for name in _PARAMS[self.family]:
            v = p[name]
            if not math.isfinite(v):
                raise ModelError(f"parameter {name} must be finite")
        for name in ("a", "b", "A", "B", "zs", "q"):
            if name in p and not p[name] > 0:
                raise ModelError(f"parameter {name} must be positive, got {p[name]}")
        if self.family is Family.METASTABLE and not 0 < p["gamma"] < 1:
            raise ModelError(f"metastable family needs gamma in (0, 1), got {p['gamma']}")

    def _table_limit(self):
        """Largest size with both rates defined, or None when unbounded."""
        if self.family is Family.TABULATED and self.p["tail"] == "error":
            p = self.p
            return min(len(p["a"]), len(p["b"]) + 1)
        return None

    # -- rates ------------------------------------------------------------
    def _log_rates_at(self, idx):
        """Vectorized (ln a_i, ln b_i) for float sizes ``idx``; ln b at i < 2 is nan."""
        p = self.p
        idx = np.asarray(idx, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            li = np.log(idx)
            if self.family is Family.CONSTANT:
                log_a = np.full(idx.shape, math.log(p["a"]))
                log_b = np.full(idx.shape, math.log(p["b"]))
            elif self.family is Family.POWER_LAW:
                log_a = math.log(p["A"]) + p["alpha"] * li
                log_b = math.log(p["B"]) + p["beta"] * li
            elif self.family is Family.METASTABLE:
                log_a = math.log(p["A"]) + p["alpha"] * li
                log_b = log_a + math.log(p["zs"]) + p["q"] * idx ** (-p["gamma"])
            else:
                a = np.log(np.asarray(p["a"], float))
                b = np.log(np.asarray(p["b"], float))
                ii = idx.astype(np.int64)
                log_a = a[np.clip(ii - 1, 0, a.size - 1)]
                log_b = b[np.clip(ii - 2, 0, b.size - 1)]
        log_b = np.where(idx < 2, np.nan, log_b)
        log_a = np.where(idx < 1, np.nan, log_a)
        return log_a, log_b

    def _check_scalar(self, i, need_b):
        if isinstance(i, bool) or int(i) != i:
            raise InvalidIndex(f"cluster size must be an integer, got {i!r}")
        i = int(i)
        if i < (2 if need_b else 1):
            raise InvalidIndex(f"{'b' if need_b else 'a'}_i is undefined for i = {i}")
        if self.family is Family.TABULATED and self.p["tail"] == "error":
            size = len(self.p["b"]) + 1 if need_b else len(self.p["a"])
            if i > size:
                raise IndexBeyondTable(f"size {i} is beyond the table and tail='error'")
        return i

    def a(self, i):
        i = self._check_scalar(i, False)
        p = self.p
        if self.family is Family.CONSTANT:
            return p["a"]
        if self.family is Family.TABULATED:
            return p["a"][min(i, len(p["a"])) - 1]
        return p["A"] * i ** p["alpha"]

    def b(self, i):
        i = self._check_scalar(i, True)
        p = self.p
        if self.family is Family.CONSTANT:
            return p["b"]
        if self.family is Family.TABULATED:
            return p["b"][min(i, len(p["b"]) + 1) - 2]
        if self.family is Family.POWER_LAW:
            return p["B"] * i ** p["beta"]
        return p["A"] * i ** p["alpha"] * p["zs"] * math.exp(p["q"] * i ** (-p["gamma"]))

    def log_tables(self, n):
        """(ln a, ln b, ln Q) arrays indexed by size ``0..n`` (views, do not mutate)."""
        t = self._tables.ensure(n)
        return t.log_a[: n + 1], t.log_b[: n + 1], t.log_q[: n + 1]

    def log_q(self, i):
        i = self._check_scalar(i, False)
        return float(self._tables.ensure(i).log_q[i])


def _freeze_params(family, params):
    params = {_ALIASES.get(k, k): v for k, v in params.items()}
    names = _PARAMS[family]
    if family is Family.TABULATED:
        params.setdefault("tail", "hold")
    if family is Family.METASTABLE:
        params.setdefault("A", 1.0)
    missing = [n for n in names if n not in params]
    if missing:
        raise ModelError(f"{family.value} family is missing parameters {missing}")
    extra = sorted(set(params) - set(names))
    if extra:
        raise ModelError(f"{family.value} family got unexpected parameters {extra}")
    frozen = []
    for n in names:
        v = params[n]
        if isinstance(v, (list, tuple, np.ndarray)):
            v = tuple(float(x) for x in v)
        elif n != "tail":
            v = float(v)
        frozen.append((n, v))
    return tuple(frozen)


def rate_a(model: RateModel, i: int) -> float:
    """Growth coefficient a_i (the attachment rate is ``a_i * z``)."""
    return model.a(i)


def rate_b(model: RateModel, i: int) -> float:
    """Shrink rate b_i, defined for i >= 2."""
    return model.b(i)


def log_q_prefactor(model: RateModel, i: int) -> float:
    """ln Q_i, accumulated in log space from ln a and ln b."""
    return model.log_q(i)


def _saturation_or_none(model):
    try:
        return saturation(model)
    except HypothesisViolation:
        return None


def saturation(model: RateModel):
    """Return ``(z_s, exact)`` where z_s is the limit of b_i/a_i.

    Raises
    ------
    HypothesisViolation
        When the limit is 0 or infinite (power laws with unequal exponents).
    """
    p = model.p
    if model.family is Family.CONSTANT:
        return p["b"] / p["a"], True
    if model.family is Family.POWER_LAW:
        if p["alpha"] != p["beta"]:
            side = "infinite" if p["beta"] > p["alpha"] else "zero"
            raise HypothesisViolation(
                f"b_i/a_i = (B/A) i^(beta-alpha) has {side} limit; a positive finite z_s requires alpha == beta"
            )
        return p["B"] / p["A"], True
    if model.family is Family.METASTABLE:
        return p["zs"], True
    a, b = p["a"], p["b"]
    if p["tail"] == "hold":
        return b[-1] / a[-1], False
    last = min(len(a), len(b) + 1)
    return b[last - 2] / a[last - 1], False


def regime(model: RateModel) -> Regime:
    zs, _ = saturation(model)
    return Regime.SUBCRITICAL if model.z < zs else Regime.SUPERCRITICAL


@dataclass(frozen=True)
class ModelConstants:
    zs: float
    zs_exact: bool
    regime: Regime
    log_q: np.ndarray = field(repr=False)
    n_star: int | None = None


def model_constants(model: RateModel) -> ModelConstants:
    zs, exact = saturation(model)
    reg = regime(model)
    n_star = None
    if reg is Regime.SUPERCRITICAL:
        try:
            n_star = critical_size(model)
        except (NoNucleus, NonMonotone):
            n_star = None
    n = model.i_max_hint
    if model._table_limit() is not None:
        n = min(n, model._table_limit())
    log_q = model.log_tables(n)[2].copy()
    log_q.setflags(write=False)
    return ModelConstants(zs, exact, reg, log_q, n_star)


def sup_ratio_from(model: RateModel, k: int) -> float:
    """Upper bound on ``sup_{j >= k} b_j / a_j`` (``inf`` when unbounded)."""
    p = model.p
    k = max(int(k), 2)
    if model.family is Family.CONSTANT:
        return p["b"] / p["a"]
    if model.family is Family.POWER_LAW:
        if p["beta"] > p["alpha"]:
            return math.inf
        return p["B"] / p["A"] * k ** (p["beta"] - p["alpha"])
    if model.family is Family.METASTABLE:
        return p["zs"] * math.exp(p["q"] * k ** (-p["gamma"]))
    return _tabulated_sup(model, k, lambda la, lb, i: lb[i] - la[i])


def sup_inverse_ratio_from(model: RateModel, k: int) -> float:
    """Upper bound on ``sup_{j >= k} a_j / b_{j+1}`` (``inf`` when unbounded)."""
    p = model.p
    k = max(int(k), 1)
    if model.family is Family.CONSTANT:
        return p["a"] / p["b"]
    if model.family is Family.POWER_LAW:
        alpha, beta = p["alpha"], p["beta"]
        if alpha > beta:
            return math.inf
        # j^alpha / (j+1)^beta = j^(alpha-beta) * (j/(j+1))^beta
        return p["A"] / p["B"] * k ** (alpha - beta) * max(1.0, (k / (k + 1)) ** beta)
    if model.family is Family.METASTABLE:
        return max(1.0, (k / (k + 1)) ** p["alpha"]) / p["zs"]
    return _tabulated_sup(model, k, lambda la, lb, i: la[i] - lb[i + 1])


def _tabulated_sup(model, k, log_term):
    p = model.p
    last = max(len(p["a"]), len(p["b"]) + 1) + 1
    if p["tail"] == "error":
        return math.inf
    la, lb, _ = model.log_tables(max(last, k) + 1)
    vals = [log_term(la, lb, i) for i in range(k, max(last, k) + 1)]
    return float(math.exp(max(vals)))


def check_reuter(model: RateModel, n_terms: int = 2000, blowup: float = 1e8) -> Reuter:
    """Certify non-explosion of the single-cluster chain.

    Evaluates partial sums of the Reuter series in log space; a partial sum
    above ``blowup`` certifies divergence.  Otherwise a model whose ratio
    b_i/a_i has an analytic positive limit is non-explosive for any
    z != z_s, because one of the two factors of the series diverges.
    """
    zs = _saturation_or_none(model)
    if zs is not None and abs(model.z - zs[0]) <= CRITICAL_RTOL * zs[0]:
        raise CriticalZ("Reuter criterion is not evaluated at z = z_s")
    n = int(n_terms)
    if model._table_limit() is not None:
        n = min(n, model._table_limit())
    if n >= 2:
        la, _, lq = model.log_tables(n)
        lz = math.log(model.z)
        k = np.arange(n + 1)
        w = -(la[2:] + lq[2:] + (k[2:] + 1) * lz)
        tails = np.logaddexp.accumulate(w[::-1])[::-1]
        outer = lq[2:] + k[2:] * lz + tails
        if logsumexp(outer) > math.log(blowup):
            return Reuter.NON_EXPLOSIVE
    if zs is not None and zs[1]:
        return Reuter.NON_EXPLOSIVE
    return Reuter.UNDETERMINED


@dataclass(frozen=True)
class HypothesisReport:
    status: dict
    witness: dict
    i_range: tuple

    def passed(self, name):
        return self.status[name] is not Status.FAIL

    def to_dict(self):
        return {k: {"status": v.value, "witness": self.witness.get(k)}
                for k, v in self.status.items()}


def check_hypotheses(model: RateModel, i_range=(2, 200)) -> HypothesisReport:
    """Status of the standing hypotheses H1, H2 and H3 for ``model``.

    Built-in families are decided analytically from their parameters.
    Tabulated models get finite-range ratio checks over ``i_range`` that
    certify only the checked range.
    """
    lo, hi = int(i_range[0]), int(i_range[1])
    if lo < 2 or hi <= lo + 3:
        raise InvalidIndex("i_range must be an interval [lo, hi] with 2 <= lo and hi > lo + 3")
    p = model.p
    A, F = Status.ANALYTIC_PASS, Status.FAIL
    st, wit = {}, {}
    if model.family is Family.CONSTANT:
        st["H1"], st["H2"], st["H3"] = A, F, F
        wit["H2"] = hi     # a_i stays bounded
        wit["H3"] = lo     # b_i/a_i equals z_s exactly
    elif model.family is Family.POWER_LAW:
        alpha, beta = p["alpha"], p["beta"]
        st["H1"] = A if alpha == beta else F
        if alpha != beta:
            wit["H1"] = hi
        st["H2"] = A if 0 < alpha <= 1 else F
        if st["H2"] is F:
            wit["H2"] = hi
        st["H3"] = F
        wit["H3"] = lo
    elif model.family is Family.METASTABLE:
        alpha = p["alpha"]
        st["H1"] = A
        st["H2"] = A if 0 < alpha <= 1 else F
        if st["H2"] is F:
            wit["H2"] = hi
        st["H3"] = A if 0 <= alpha < 1 else F
        if st["H3"] is F:
            wit["H3"] = hi
    else:
        st, wit = _empirical_hypotheses(model, lo, hi)
    return HypothesisReport(st, wit, (lo, hi))


def _empirical_hypotheses(model, lo, hi):
    E, F = Status.EMPIRICAL_PASS, Status.FAIL
    la, lb, _ = model.log_tables(hi + 1)
    i = np.arange(lo, hi + 1)
    ratio = np.exp(lb[i] - la[i])
    b_step = np.exp(lb[i[:-1] + 1] - lb[i[:-1]]) - 1.0
    a_step = np.exp(la[i[:-1] + 1] - la[i[:-1]]) - 1.0
    a = np.exp(la[i])
    st, wit = {}, {}
    quarter = max(len(i) // 4, 2)
    tail = ratio[-quarter:]
    dev = np.abs(tail / tail[-1] - 1.0)
    if dev.max() < 0.05 and np.abs(b_step[-quarter:]).max() < 0.05:
        st["H1"] = E
    else:
        st["H1"] = F
        wit["H1"] = int(i[-quarter:][np.argmax(dev)])
    half = len(i) // 2
    growth = a / i
    scaled_b = np.abs(b_step) * i[:-1]
    scaled_a = np.abs(a_step) * i[:-1]
    bad = None
    if growth[half:].max() > 2.0 * growth[:half].max():
        bad = int(i[half:][np.argmax(growth[half:])])
    elif not a[-1] > a[0]:
        bad = int(i[-1])
    elif scaled_b[half:].max() > 2.0 * scaled_b[:half].max() + 1e-12:
        bad = int(i[half:-1][np.argmax(scaled_b[half:])])
    elif scaled_a[half:].max() > 2.0 * scaled_a[:half].max() + 1e-12:
        bad = int(i[half:-1][np.argmax(scaled_a[half:])])
    st["H2"] = E if bad is None else F
    if bad is not None:
        wit["H2"] = bad
    drops = np.diff(ratio)
    if np.all(drops < 0):
        st["H3"] = E
    else:
        st["H3"] = F
        wit["H3"] = int(i[np.argmax(drops >= 0)])
    return st, wit


def critical_size(model: RateModel, max_size: int = 2**40) -> int:
    """The nucleus size n* with ``b_{n*+1}/a_{n*+1} < z < b_{n*}/a_{n*}``.

    Found by doubling then bisection on the (checked) decreasing ratio.

    Raises
    ------
    NoNucleus
        When z <= z_s, or when z >= b_2/a_2 (``exc.n_star == 1`` then).
    NonMonotone
        When a decrease of b_i/a_i is contradicted at a probed index.
    """
    zs, _ = saturation(model)
    z = model.z
    if z <= zs:
        raise NoNucleus(f"no nucleus size for z = {z} <= z_s = {zs}")

    def ratio(i):
        return model.b(i) / model.a(i)

    if model.family is Family.TABULATED:
        limit = max(len(model.p["a"]), len(model.p["b"]) + 1)
        la, lb, _ = model.log_tables(limit)
        r = np.exp(lb[2:limit + 1] - la[2:limit + 1])
        up = np.nonzero(np.diff(r) >= 0)[0]
        if up.size and r[up[0] + 1] >= z:
            raise NonMonotone(f"b_i/a_i is not decreasing at i = {int(up[0]) + 2}")
    r_lo = ratio(2)
    if z >= r_lo:
        raise NoNucleus(f"z = {z} >= b_2/a_2 = {r_lo}: every cluster tends to grow", n_star=1)
    lo, hi = 2, 4
    r_hi = ratio(hi)
    while r_hi >= z:
        if not r_hi < r_lo:
            raise NonMonotone(f"b_i/a_i is not decreasing between {lo} and {hi}")
        lo, r_lo = hi, r_hi
        hi *= 2
        if hi > max_size:
            raise NoConvergence(f"ratio b_i/a_i stays above z up to size {max_size}")
        r_hi = ratio(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        r_mid = ratio(mid)
        if not r_hi <= r_mid <= r_lo:
            raise NonMonotone(f"b_i/a_i is not decreasing around i = {mid}")
        if r_mid > z:
            lo, r_lo = mid, r_mid
        elif r_mid < z:
            hi, r_hi = mid, r_mid
        else:
            raise NoNucleus(f"z coincides with b_i/a_i at i = {mid}; no strict bracket")
    if not ratio(lo + 1) < z < ratio(lo):
        raise NonMonotone(f"bracket check failed at n* = {lo}")
    return lo
