"""Command-line front end: ``python -m beckerdoring <command> --config cfg.json``.

Exit codes: 0 success, 1 configuration error, 2 model hypothesis violation
(including z at the saturation value), 3 a verification gate failed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from . import analytics as an
from .acceptance import GATES, AcceptanceConfig, _jsonable, run_gates
from .chain import Outcome, sample_exits
from .coefficients import (
    Family,
    RateModel,
    Regime,
    check_hypotheses,
    check_reuter,
    critical_size,
    regime,
    saturation,
)
from .exceptions import (
    BDError,
    ConfigError,
    CriticalZ,
    HypothesisViolation,
    ModelError,
    NoConvergence,
    NoNucleus,
    NonMonotone,
    SubcriticalRequired,
    TruncationDominates,
)
from .process import (
    conditioned_ensemble_fv,
    run_ensemble,
    simulate_ensemble,
)
from .stats import EmpiricalDistribution, ProductPoisson, tv_distance, tv_sampling_floor

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_GATE = 0, 1, 2, 3


# -- configuration ------------------------------------------------------------

def load_config(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def _get(block, key, kind, default=None, where=""):
    if key not in block:
        if default is None:
            raise ConfigError(f"missing field '{where}{key}'")
        return default
    val = block[key]
    try:
        if kind is int:
            if isinstance(val, bool) or float(val) != int(val):
                raise ValueError
            return int(val)
        if kind is float:
            return float(val)
        if kind is list:
            if not isinstance(val, list):
                raise ValueError
            return val
        return kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{where}{key}' must be of type {kind.__name__}, got {val!r}") from None


def _seed(cfg, args):
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (config field 'seed' or --seed)")
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"field 'seed' must be an unsigned 64-bit integer, got {seed!r}") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("field 'seed' must be an unsigned 64-bit integer")
    return seed


def _model(cfg):
    spec = cfg.get("model")
    if not isinstance(spec, dict):
        raise ConfigError("missing object field 'model'")
    try:
        return RateModel.from_dict(spec)
    except (CriticalZ, HypothesisViolation):
        raise
    except (ModelError, KeyError, TypeError) as exc:
        raise ConfigError(f"field 'model': {exc}") from exc


def _probes(block, where):
    probes = np.asarray(_get(block, "probes", list, where=where), float)
    if probes.size == 0 or np.any(np.diff(probes) <= 0) or probes[0] < 0:
        raise ConfigError(f"field '{where}probes' must be a strictly increasing list of times >= 0")
    return probes


def _replicas(block, args, default, where):
    r = args.replicas if args.replicas is not None else _get(block, "replicas", int, default, where)
    if r < 1:
        raise ConfigError(f"field '{where}replicas' must be >= 1")
    return r


def _digest(cfg, command, seed):
    canon = json.dumps({"command": command, "config": cfg, "seed": seed}, sort_keys=True,
                       separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


class Output:
    """Writes JSON and CSV files stamped with the version and config digest."""

    def __init__(self, out_dir, command, digest):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = {"command": command, "version": __version__, "config_sha256": digest}

    def json(self, name, payload):
        doc = {"meta": self.meta, **_jsonable(payload)}
        path = self.dir / name
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        return path

    def csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write(f"# beckerdoring {__version__} config_sha256={self.meta['config_sha256']}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        path = self.dir / name
        path.write_text(buf.getvalue())
        return path


def _chunks(replicas, threads):
    k = max(1, min(threads, replicas))
    edges = [replicas * j // k for j in range(k + 1)]
    return [(lo, hi - lo) for lo, hi in zip(edges, edges[1:])]


def _fan_out(fn, replicas, threads):
    """Call ``fn(first_replica=, replicas=)`` on contiguous chunks, in order.

    Replica streams are keyed by id, so the merged result does not depend
    on how the range is split.
    """
    chunks = _chunks(replicas, threads)
    if len(chunks) == 1:
        return [fn(first_replica=0, replicas=replicas)]
    with ProcessPoolExecutor(len(chunks)) as pool:
        futs = [pool.submit(fn, first_replica=lo, replicas=m) for lo, m in chunks]
        return [f.result() for f in futs]


def _sized(values, start=2):
    return {"sizes": list(range(start, start + len(values))), "values": list(map(float, values))}


# -- commands -------------------------------------------------------------------

def cmd_analyze(cfg, args):
    model = _model(cfg)
    block = cfg.get("analyze", {})
    n_max = _get(block, "n_max", int, 20, "analyze.")
    n = _get(block, "n", int, min(5, n_max), "analyze.")
    i_max = _get(block, "i_max", int, n_max, "analyze.")
    if n_max < 2 or n < 2 or i_max < 2:
        raise ConfigError("analyze.n, analyze.n_max and analyze.i_max must be >= 2")
    zs, exact = saturation(model)
    reg = regime(model)
    report = {
        "model": model.to_dict(), "zs": zs, "zs_exact": exact, "regime": reg.value,
        "hypotheses": check_hypotheses(model).to_dict(), "reuter": check_reuter(model).value,
    }
    try:
        report["n_star"] = critical_size(model)
    except (NoNucleus, NonMonotone) as exc:
        report["n_star"] = getattr(exc, "n_star", None)
        report["n_star_note"] = str(exc)
    ns = list(range(2, n_max + 1))
    report["Jn"] = {"n": ns, "values": [an.flux_Jn(model, k) for k in ns]}
    report["gamma_n"] = {"n": ns, "values": [an.spectral_gap_truncated(model, k) for k in ns]}
    report["fn"] = {"n": n, **_sized(an.qsd_intensities(model, n).values)}
    report["c_eq"] = _sized(an.equilibrium_intensities(model, i_max).values)
    if reg is Regime.SUPERCRITICAL:
        j, info = an.flux_J(model, full_output=True)
        report["J"] = j
        report["J_truncation"] = info
        report["f"] = _sized(an.stationary_intensities(model, i_max).values)
    else:
        report["J"] = None
        report["f"] = None
    try:
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gap = an.spectral_gap_estimate(model)
        report["lambda_bracket"] = {"value": gap.value, "bracket": list(gap.bracket), "n": gap.n,
                                    "monotone": gap.monotone}
    except (NoConvergence, HypothesisViolation) as exc:
        report["lambda_bracket"] = {"error": str(exc)}
    means = block.get("pi_in_means")
    bc = an.bound_constants(model, n, None if means is None else np.asarray(means, float))
    report["constants"] = {
        "n": n, "K": bc.K, "Kn": bc.K_n, "M": bc.M, "H_in": bc.H_in, "H_qsd": bc.H_qsd,
        "G_in": bc.G_in, "G_in_vacuous": bc.G_in_vacuous, "G_in_poisson": bc.G_in_poisson,
        "R_in": bc.R_in, "R_in_n": bc.R_in_n,
    }
    out = Output(args.out, "analyze", _digest(cfg, "analyze", None))
    path = out.json("analyze.json", report)
    print(path)
    return EXIT_OK


def _initial(model, spec, where):
    if spec in (None, "empty"):
        return None
    if spec == "poisson:eq":
        if regime(model) is not Regime.SUBCRITICAL:
            raise ConfigError(f"field '{where}initial': poisson:eq needs z < z_s")
        i_max = 64
        while an.equilibrium_intensities(model, i_max).truncation_info["tail_bound"] > 1e-12:
            i_max *= 2
        return an.equilibrium_intensities(model, i_max)
    if isinstance(spec, str) and spec.startswith("poisson:qsd"):
        try:
            n = int(spec.split(":")[2])
        except (IndexError, ValueError):
            raise ConfigError(f"field '{where}initial' must look like 'poisson:qsd:<n>'") from None
        return an.qsd_intensities(model, n)
    if isinstance(spec, dict):
        try:
            return {int(k): int(v) for k, v in spec.items()}
        except ValueError:
            raise ConfigError(f"field '{where}initial' counts must map sizes to integers") from None
    raise ConfigError(f"field '{where}initial' must be 'empty', 'poisson:eq', 'poisson:qsd:<n>' or counts")


def cmd_simulate(cfg, args):
    model = _model(cfg)
    seed = _seed(cfg, args)
    block = cfg.get("simulate", {})
    where = "simulate."
    probes = _probes(block, where)
    t_end = _get(block, "t_end", float, float(probes[-1]), where)
    if probes[-1] > t_end:
        raise ConfigError("simulate.probes must not exceed simulate.t_end")
    reps = _replicas(block, args, 100, where)
    sizes = [int(s) for s in _get(block, "sizes", list, list(range(2, 11)), where)]
    init = _initial(model, block.get("initial", "empty"), where)
    parts = _fan_out(partial(simulate_ensemble, model, init, t_end, probes, seed=seed, sizes=sizes),
                     reps, args.threads)
    counts = np.concatenate([p[0] for p in parts])
    cens = np.concatenate([p[1] for p in parts])
    rows = [(r, repr(float(t)), s, int(counts[r, k, j]))
            for r in range(reps) for k, t in enumerate(probes) for j, s in enumerate(sizes)]
    digest = _digest(cfg, "simulate", seed)
    out = Output(args.out, "simulate", digest)
    out.csv("simulate.csv", ["replica", "probe_time", "size", "count"], rows)
    ok = ~cens
    summary = {"replicas": reps, "censored": int(cens.sum()), "probes": probes, "sizes": sizes,
               "means": counts[ok].mean(axis=0) if ok.any() else None}
    if init is None:
        try:
            ode = an.integrate_linear_bd(model, max(200, 4 * max(sizes)), t_end, probes=probes,
                                         i_report=max(sizes) + 1)
            summary["ode_means"] = ode.c[:, [s - 2 for s in sizes]]
        except (TruncationDominates, SubcriticalRequired) as exc:
            summary["ode_means"] = None
            summary["ode_note"] = str(exc)
    if regime(model) is Regime.SUPERCRITICAL:
        summary["stationary"] = an.stationary_intensities(model, max(sizes)).values[[s - 2 for s in sizes]]
    else:
        summary["equilibrium"] = an.equilibrium_intensities(model, max(sizes)).values[[s - 2 for s in sizes]]
    print(out.json("simulate.json", summary))
    return EXIT_OK


def cmd_exit_times(cfg, args):
    model = _model(cfg)
    seed = _seed(cfg, args)
    block = cfg.get("exit_times", {})
    where = "exit_times."
    n = _get(block, "n", int, where=where)
    start = _get(block, "start", int, 2, where)
    if not 2 <= start <= n:
        raise ConfigError("exit_times.start must lie in [2, n]")
    reps = _replicas(block, args, 1000, where)
    t_cap = _get(block, "t_cap", float, 1e7, where)
    batch = sample_exits(model, start, n, reps, seed, t_cap)
    names = {Outcome.DOWN: "down", Outcome.UP: "up", Outcome.CENSORED: "censored"}
    rows = [(r, start, n, names[Outcome(int(o))], repr(float(t)))
            for r, (o, t) in enumerate(zip(batch.outcome, batch.time))]
    out = Output(args.out, "exit-times", _digest(cfg, "exit-times", seed))
    out.csv("exit_times.csv", ["replica", "start", "n", "outcome", "time"], rows)
    done = batch.outcome != Outcome.CENSORED
    sidecar = {
        "J_n": an.flux_Jn(model, n), "absorption_prob": an.absorption_prob(model, start, n),
        "empirical_down_fraction": float(np.mean(batch.outcome[done] == Outcome.DOWN)) if done.any() else None,
        "censored": batch.censored, "replicas": reps, "t_cap": t_cap,
    }
    print(out.json("exit_times.json", sidecar))
    return EXIT_OK


def cmd_qsd(cfg, args):
    model = _model(cfg)
    seed = _seed(cfg, args)
    block = cfg.get("qsd", {})
    where = "qsd."
    n = _get(block, "n", int, where=where)
    times = _probes({"probes": block.get("times")} if "times" in block else {}, where + "times/")
    estimator = _get(block, "estimator", str, "rejection", where)
    init = _initial(model, block.get("initial", "empty"), where)
    f = an.qsd_intensities(model, n)
    q = ProductPoisson(f.values)
    out = Output(args.out, "qsd", _digest(cfg, "qsd", seed))
    summary = {"n": n, "estimator": estimator, "J_n": an.flux_Jn(model, n),
               "gamma_n": an.spectral_gap_truncated(model, n), "f_n": f.values, "times": times}
    snaps_rows, per_time = [], []
    if estimator == "rejection":
        reps = _replicas(block, args, 10_000, where)
        parts = _fan_out(partial(run_ensemble, model, n, init, seed=seed, probes=times,
                                 t_cap=float(times[-1])), reps, args.threads)
        ens = parts[0]
        for p in parts[1:]:
            ens = ens.merge(p)
        out.csv("qsd_exits.csv", ["replica", "tau_n", "censored"],
                [(r, repr(float(t)), int(c)) for r, (t, c) in enumerate(zip(ens.tau, ens.censored))])
        for k, t in enumerate(times):
            surv = ens.survivors(k)
            per_time.append(surv)
            alive = np.nonzero(ens.snapshots[:, k, 0] >= 0)[0]
            for r in alive:
                snaps_rows.extend((int(r), repr(float(t)), i + 2, int(ens.snapshots[r, k, i])) for i in range(n - 1))
    elif estimator == "fv":
        particles = _get(block, "particles", int, 1000, where)
        laws, diag = conditioned_ensemble_fv(model, n, init, times, particles, seed, full_output=True)
        for k, (t, law) in enumerate(zip(times, laws)):
            per_time.append(law.samples)
            for r, row in enumerate(law.samples):
                snaps_rows.extend((r, repr(float(t)), i + 2, int(row[i])) for i in range(n - 1))
        summary["fv_exits"] = diag.exits
        summary["fv_exit_rate"] = diag.exit_rate(float(times[0]), float(times[-1])) if times[-1] > times[0] else None
    else:
        raise ConfigError("field 'qsd.estimator' must be 'rejection' or 'fv'")
    out.csv("qsd_snapshots.csv", ["replica", "probe_time", "size", "count"], snaps_rows)
    summary["survivors"] = [int(s.shape[0]) for s in per_time]
    summary["means"] = [s.mean(axis=0) if s.shape[0] else None for s in per_time]
    summary["tv_to_qsd"] = [tv_distance(EmpiricalDistribution.from_samples(s), q) if s.shape[0] else None
                            for s in per_time]
    # TV of an exact QSD sample of the same size, for scale
    summary["tv_floor"] = [list(tv_sampling_floor(q, int(s.shape[0]), reps=10, seed=seed)) if s.shape[0] else None
                           for s in per_time]
    print(out.json("qsd.json", summary))
    return EXIT_OK


METASTABILITY_COLUMNS = ("z", "n_star", "J_nstar", "gamma_nstar", "window_ratio")


def cmd_metastability(cfg, args):
    model = _model(cfg)
    if model.family is not Family.METASTABLE:
        raise ConfigError("metastability needs a model of family 'metastable'")
    block = cfg.get("metastability", {})
    where = "metastability."
    zs_ = [float(z) for z in _get(block, "z_sweep", list, where=where)]
    times = [float(t) for t in _get(block, "times", list, [1.0, 10.0, 100.0], where)]
    if any(b >= a for a, b in zip(zs_, zs_[1:])):
        raise ConfigError("metastability.z_sweep must be strictly decreasing")
    sat, _ = saturation(model)
    means = block.get("initial_means")
    rows = []
    for z in zs_:
        if z <= sat or abs(z - sat) <= 1e-12 * sat:
            raise CriticalZ(f"sweep value z = {z} does not stay above z_s = {sat}")
        mz = model.with_z(z)
        ns = critical_size(mz)
        jn = an.flux_Jn(mz, ns)
        gam = an.spectral_gap_truncated(mz, ns)
        bc = an.bound_constants(mz, ns, None if means is None else np.asarray(means, float))
        g = bc.G_in
        row = [repr(z), ns, repr(jn), repr(gam), repr(gam / jn)]
        for t in times:
            row.append(repr(g * math.exp(-jn * t)))
        for t in times:
            pref = (bc.H_in / g if g > 0 else math.inf) + bc.H_qsd
            row.append(repr(pref * bc.K_n * math.exp((jn - gam) * t)))
        rows.append(row)
    header = list(METASTABILITY_COLUMNS) + [f"survival_bound_t={t:g}" for t in times] \
        + [f"tv_bound_t={t:g}" for t in times]
    out = Output(args.out, "metastability", _digest(cfg, "metastability", None))
    print(out.csv("metastability.csv", header, rows))
    return EXIT_OK


def cmd_verify(cfg, args):
    seed = _seed(cfg, args)
    block = cfg.get("verify", {})
    scale = args.scale if args.scale is not None else _get(block, "scale", float, 1.0, "verify.")
    only = args.only.split(",") if args.only else block.get("only")
    unknown = [o for o in only or () if o not in GATES]
    if unknown:
        raise ConfigError(f"unknown gate(s) {unknown}; choose from {sorted(GATES)}")
    acfg = AcceptanceConfig(seed=seed, scale=scale, corrupt_jn=args.corrupt_jn)
    verdicts = run_gates(acfg, only)
    docs = []
    for v in verdicts:
        runtime = v.metadata.pop("runtime_s", None)
        print(f"{'PASS' if v.passed else 'FAIL'} {v.test} statistic={v.statistic:.6g} "
              f"threshold={v.threshold:.6g} ({runtime:.1f}s)", file=sys.stderr)
        docs.append(v.to_dict())
    digest = _digest({**cfg, "scale": scale, "only": only, "corrupt_jn": args.corrupt_jn}, "verify", seed)
    out = Output(args.out, "verify", digest)
    print(out.json("verdicts.json", {"verdicts": docs, "all_passed": all(v.passed for v in verdicts)}))
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_GATE


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "exit-times": cmd_exit_times,
    "qsd": cmd_qsd,
    "metastability": cmd_metastability,
    "verify": cmd_verify,
}


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    common.add_argument("--out", default="results", help="output directory (default: results)")
    common.add_argument("--replicas", type=int, help="replica count (overrides the config)")
    common.add_argument("--threads", type=_positive, default=1,
                        help="parallelism hint; never changes results")
    parser = argparse.ArgumentParser(prog="beckerdoring", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "verify":
            p.add_argument("--only", help="comma-separated gate names")
            p.add_argument("--scale", type=float, help="replica-count multiplier")
            p.add_argument("--corrupt-jn", type=float, default=1.0, help=argparse.SUPPRESS)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CriticalZ, HypothesisViolation) as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except BDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
