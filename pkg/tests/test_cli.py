import json
import subprocess
import sys

import pytest

from beckerdoring import __version__
from beckerdoring.cli import main

CONST2 = {"family": "constant", "params": {"a": 1, "b": 1}, "z": 2}
META = {"family": "metastable", "params": {"alpha": 0, "zs": 1, "q": 1, "gamma": 0.5}, "z": 1.5}


def _cfg(tmp_path, **blocks):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(blocks))
    return str(path)


def _run(tmp_path, *argv):
    return main(list(argv) + ["--out", str(tmp_path / "out")])


def _read(tmp_path, name):
    return (tmp_path / "out" / name).read_text()


def test_analyze_constant(tmp_path):
    assert _run(tmp_path, "analyze", "--config", _cfg(tmp_path, model=CONST2)) == 0
    doc = json.loads(_read(tmp_path, "analyze.json"))
    assert doc["J"] == pytest.approx(2)
    assert doc["Jn"]["n"][0] == 2 and doc["Jn"]["values"][0] == pytest.approx(8 / 3)
    assert doc["fn"]["sizes"][0] == 2
    assert doc["meta"]["version"] == __version__ and len(doc["meta"]["config_sha256"]) == 64
    for key in ("zs", "regime", "n_star", "f", "c_eq", "gamma_n", "lambda_bracket", "constants"):
        assert key in doc
    assert {"K", "Kn", "M", "H_in", "H_qsd", "G_in"} <= set(doc["constants"])


def test_analyze_f22(tmp_path):
    cfg = _cfg(tmp_path, model=CONST2, analyze={"n": 2, "n_max": 4})
    assert _run(tmp_path, "analyze", "--config", cfg) == 0
    doc = json.loads(_read(tmp_path, "analyze.json"))
    assert doc["fn"]["values"][0] == pytest.approx(4 / 3)


def test_analyze_metastable_nucleus(tmp_path):
    assert _run(tmp_path, "analyze", "--config", _cfg(tmp_path, model=META)) == 0
    assert json.loads(_read(tmp_path, "analyze.json"))["n_star"] == 6


def test_critical_z_exit_code(tmp_path, capsys):
    cfg = _cfg(tmp_path, model={**CONST2, "z": 1})
    assert _run(tmp_path, "analyze", "--config", cfg) == 2
    assert "critical" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": {"family": "constant"\n "z": 2}}')
    assert _run(tmp_path, "analyze", "--config", str(bad)) == 1
    assert "line 2" in capsys.readouterr().err
    cfg = _cfg(tmp_path, model=CONST2, exit_times={"n": "five"})
    assert _run(tmp_path, "exit-times", "--config", cfg, "--seed", "1") == 1
    assert "exit_times.n" in capsys.readouterr().err


def test_seed_is_required(tmp_path, capsys):
    cfg = _cfg(tmp_path, model=CONST2, exit_times={"n": 3})
    assert _run(tmp_path, "exit-times", "--config", cfg) == 1
    assert "seed" in capsys.readouterr().err


def test_probe_grid_must_increase(tmp_path):
    cfg = _cfg(tmp_path, model=CONST2, seed=1, simulate={"probes": [1.0, 0.5]})
    assert _run(tmp_path, "simulate", "--config", cfg) == 1


def test_exit_times_outputs(tmp_path):
    cfg = _cfg(tmp_path, model=CONST2, seed=5, exit_times={"n": 2, "start": 2, "replicas": 400})
    assert _run(tmp_path, "exit-times", "--config", cfg) == 0
    lines = _read(tmp_path, "exit_times.csv").splitlines()
    assert lines[0].startswith(f"# beckerdoring {__version__} config_sha256=")
    assert lines[1] == "replica,start,n,outcome,time" and len(lines) == 402
    side = json.loads(_read(tmp_path, "exit_times.json"))
    assert side["absorption_prob"] == pytest.approx(1 / 3)
    assert side["J_n"] == pytest.approx(8 / 3)


def test_outputs_reproducible_across_threads(tmp_path):
    cfg = _cfg(tmp_path, model=CONST2, seed=9,
               simulate={"probes": [0.5, 1.0], "replicas": 40, "sizes": [2, 3]},
               qsd={"n": 3, "times": [0.5, 1.0], "replicas": 300})
    out = {}
    for threads in ("1", "3"):
        d = tmp_path / threads
        for cmd in ("simulate", "qsd"):
            assert main([cmd, "--config", cfg, "--out", str(d), "--threads", threads]) == 0
        out[threads] = {p.name: p.read_bytes() for p in d.iterdir()}
    assert out["1"] == out["3"] and len(out["1"]) == 5


def test_replicas_flag_overrides(tmp_path):
    cfg = _cfg(tmp_path, model=CONST2, seed=1, exit_times={"n": 3, "replicas": 10})
    assert _run(tmp_path, "exit-times", "--config", cfg, "--replicas", "25") == 0
    assert len(_read(tmp_path, "exit_times.csv").splitlines()) == 27


def test_qsd_fleming_viot(tmp_path):
    cfg = _cfg(tmp_path, model=CONST2, seed=2,
               qsd={"n": 3, "times": [1.0, 3.0], "estimator": "fv", "particles": 200,
                    "initial": "poisson:qsd:3"})
    assert _run(tmp_path, "qsd", "--config", cfg) == 0
    doc = json.loads(_read(tmp_path, "qsd.json"))
    assert doc["survivors"] == [200, 200] and doc["fv_exit_rate"] > 0


def test_metastability_sweep(tmp_path):
    cfg = _cfg(tmp_path, model=META, metastability={"z_sweep": [1.5, 1.3, 1.2, 1.1], "times": [1, 10]})
    assert _run(tmp_path, "metastability", "--config", cfg) == 0
    lines = _read(tmp_path, "metastability.csv").splitlines()
    header = lines[1].split(",")
    assert header[:5] == ["z", "n_star", "J_nstar", "gamma_nstar", "window_ratio"]
    rows = [dict(zip(header, line.split(","))) for line in lines[2:]]
    nstar = [int(r["n_star"]) for r in rows]
    jn = [float(r["J_nstar"]) for r in rows]
    ratio = [float(r["window_ratio"]) for r in rows]
    assert nstar == sorted(nstar)
    assert all(a > b for a, b in zip(jn, jn[1:]))
    assert all(a < b for a, b in zip(ratio, ratio[1:]))


def test_metastability_rejects_saturation(tmp_path):
    cfg = _cfg(tmp_path, model=META, metastability={"z_sweep": [1.5, 1.0]})
    assert _run(tmp_path, "metastability", "--config", cfg) == 2
    cfg = _cfg(tmp_path, model=META, metastability={"z_sweep": [1.2, 1.3]})
    assert _run(tmp_path, "metastability", "--config", cfg) == 1


def test_verify_single_gate(tmp_path):
    assert _run(tmp_path, "verify", "--seed", "20240517", "--only", "exit-law") == 0
    doc = json.loads(_read(tmp_path, "verdicts.json"))
    assert [v["test"] for v in doc["verdicts"]] == ["exit-law"]
    assert doc["verdicts"][0]["pass"] is True


def test_verify_corrupted_flux_fails(tmp_path):
    code = _run(tmp_path, "verify", "--seed", "1", "--only", "generator,flux-algebra", "--corrupt-jn", "1.001")
    assert code == 3
    doc = json.loads(_read(tmp_path, "verdicts.json"))
    assert not doc["all_passed"]


def test_verify_unknown_gate(tmp_path):
    assert _run(tmp_path, "verify", "--seed", "1", "--only", "nope") == 1


def test_module_entry_point(tmp_path):
    cfg = _cfg(tmp_path, model=CONST2)
    res = subprocess.run([sys.executable, "-m", "beckerdoring", "analyze", "--config", cfg,
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0 and (tmp_path / "o" / "analyze.json").exists()
