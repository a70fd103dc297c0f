import hashlib
import json

import numpy as np
import pytest

import qgraph.runner as runner
from qgraph.cli import main
from qgraph.propagator import SolveError
from qgraph.runner import ConfigError, ExperimentConfig, bundled_configs, run_experiment, verify


def _tree(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_bundled_configs_listed():
    names = bundled_configs()
    for n in ("tiny-v2", "smoke-v6", "mean-s-v10", "two-point-v20", "ericson-v30"):
        assert n in names
        ExperimentConfig.load(n)


def test_config_errors_carry_path(tmp_path):
    cfg = ExperimentConfig.load("tiny-v2").to_dict()
    cfg["graph"]["num_vertices"] = "two"
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.load(p)
    assert "graph" in exc.value.path and "num_vertices" in exc.value.path
    with pytest.raises(ConfigError):
        ExperimentConfig.load("no-such-config")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"name": "x"})


def test_overrides():
    cfg = ExperimentConfig.load("smoke-v6")
    c2 = cfg.with_overrides(seed=5, samples=40)
    assert c2.correlators["n_samples"] == 40
    assert c2.graph["seed"] == cfg.graph["seed"] + 5
    assert cfg.correlators["n_samples"] != 40  # original untouched


def test_run_tiny_is_reproducible(tmp_path):
    a = run_experiment("tiny-v2", tmp_path / "a")
    b = run_experiment("tiny-v2", tmp_path / "b", workers=2)
    assert _tree(a) == _tree(b)
    man = json.loads((a / "manifest.json").read_text())
    assert man["status"] == "complete"
    for name, digest in man["files"].items():
        assert hashlib.sha256((a / name).read_bytes()).hexdigest() == digest
    rep = json.loads((a / "report.json").read_text())
    assert {c["check"] for c in rep["checks"]} >= {"swap", "unitarity"}
    assert rep["passed"]


def test_partial_manifest_on_failure(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise SolveError("forced failure", 0.0)

    monkeypatch.setattr(runner, "estimate_correlators", boom)
    with pytest.raises(SolveError):
        run_experiment("tiny-v2", tmp_path / "r")
    man = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert man["status"] == "partial"
    assert "forced failure" in man["error"]
    assert "graph.json" in man["files"]


@pytest.mark.parametrize("suite", ["unitarity", "gap", "trajectories"])
def test_verify_suites_pass(suite):
    rep = verify(suite, samples=20 if suite == "unitarity" else None)
    assert rep.passed, rep.text()


def test_verify_unknown_suite():
    with pytest.raises(ValueError):
        verify("nope")


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["configs"]) == 0
    assert "tiny-v2" in capsys.readouterr().out
    assert main(["generate", "--config", "tiny-v2", "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g" / "graph.json").exists()
    assert main(["smatrix", "--config", "tiny-v2", "--dump", "--out", str(tmp_path / "s")]) == 0
    rec = json.loads((tmp_path / "s" / "smatrix.json").read_text())
    s = np.array(rec["s_re"]) + 1j * np.array(rec["s_im"])
    np.testing.assert_allclose(s.conj().T @ s, np.eye(2), atol=1e-12)
    assert (tmp_path / "s" / "system_sigma.bin").exists()
    assert main(["predict", "--config", "smoke-v6", "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "predictions.csv").read_text().startswith("name,")
    assert main(["diagnose", "--config", "smoke-v6", "--out", str(tmp_path / "d")]) == 0
    assert main(["verify", "gap"]) == 0
    assert main(["run", "--config", "tiny-v2", "--out", str(tmp_path / "r")]) == 0
    assert main(["correlate", "--config", "tiny-v2", "--out", str(tmp_path / "c")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert main(["run", "--config", str(bad)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["verify", "nope"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_cli_reports_failure(tmp_path, monkeypatch):
    monkeypatch.setattr(runner, "_run_check", lambda c, s, cfg: {"check": c, "passed": False})
    assert main(["run", "--config", "tiny-v2", "--out", str(tmp_path / "r")]) == 1
