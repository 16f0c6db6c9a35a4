import csv
import io
import json
import subprocess
import sys

import pytest

from shieldsynth.cli import REPORT_FIELDS, load_artifact, main, resolve_seed
from shieldsynth.dynamics import IntervalBox, load_spec, save_spec
from shieldsynth.benchmarks import benchmark


@pytest.fixture(scope="module")
def artifact(tmp_path_factory):
    out = tmp_path_factory.mktemp("verify")
    assert main(["verify", "--spec", "Pendulum", "--seed", "0", "--out", str(out)]) == 0
    return out / "Pendulum-artifact.json"


def test_verify_writes_report_and_artifact(artifact):
    report = json.loads((artifact.parent / "Pendulum-report.json").read_text())
    assert report["verified"] is True and report["L_opt"] == 500
    assert set(REPORT_FIELDS) <= set(report)
    spec, family, selector = load_artifact(artifact)
    assert spec.name == "Pendulum" and len(selector) == 5 and len(family) == 10


def test_verify_csv(tmp_path):
    assert main(["verify", "--spec", "Pendulum", "--format", "csv", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "Pendulum-report.csv")))
    assert len(rows) == 1 and rows[0]["verified"] == "True"
    assert list(rows[0]) == list(REPORT_FIELDS)


def test_verify_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["verify", "--spec", "Cartpole", "--seed", "3", "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "Cartpole-artifact.json").read_text()
    b = (tmp_path / "b" / "Cartpole-artifact.json").read_text()
    assert a == b


def test_unverifiable_exit_code(tmp_path, capsys):
    spec = benchmark("Pendulum")
    spec = spec.replace(safe_box=IntervalBox(spec.init_box.lo - 1e-3, spec.init_box.hi + 1e-3))
    path = tmp_path / "tight.json"
    save_spec(spec, path)
    code = main(["verify", "--spec", str(path), "--regen-limit", "0", "--family-size", "2", "--budget", "4"])
    assert code == 2
    report = json.loads(capsys.readouterr().out)
    assert report["verified"] is False and report["regenerations"] == 0
    assert not list(tmp_path.glob("*artifact*"))


def test_recheck(artifact, capsys, tmp_path):
    assert main(["recheck", "--artifact", str(artifact)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["verified"] is True and out["L"] == 500
    # tamper with the safe box: the certificate no longer holds
    d = json.loads(artifact.read_text())
    d["spec"]["safe_box"] = IntervalBox.symmetric(0.32, 2).to_dict()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    assert main(["recheck", "--artifact", str(bad), "--format", "csv"]) == 2
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert rows[0]["verified"] == "False"


def test_stack(tmp_path):
    assert main(["stack", "--base", "Pendulum", "--depth", "4", "--seed", "1", "--out", str(tmp_path)]) == 0
    spec = load_spec(tmp_path / "4-Pendulum.json")
    assert spec.n == 8 and spec.m == 4
    assert spec.to_dict() == benchmark("4-Pendulum", perturb_seed=1).to_dict()
    assert main(["stack", "--base", "Pendulum", "--depth", "0"]) == 1
    assert main(["stack", "--base", "Nope", "--depth", "2"]) == 1


def test_bench(tmp_path):
    assert main(["bench", "Pendulum", "2-Pendulum", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    assert [r["benchmark"] for r in rows] == ["Pendulum", "2-Pendulum"]
    assert all(r["verified"] == "True" for r in rows)


def test_simulate(artifact, tmp_path, capsys):
    code = main(["simulate", "--artifact", str(artifact), "--controller", "adversarial", "--episodes", "200",
                 "--log-episodes", "1", "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "Pendulum-simulate.json").read_text())
    assert summary["violating_episodes"] == 0 and summary["episodes"] == 200
    assert (tmp_path / "Pendulum-adversarial-log.csv").exists()
    assert main(["simulate", "--artifact", str(artifact), "--unshielded", "--episodes", "200"]) == 0
    assert json.loads(capsys.readouterr().out)["violating_episodes"] > 0
    assert main(["simulate", "--artifact", str(artifact), "--episodes", "0"]) == 1


def test_errors(capsys):
    assert main(["verify", "--spec", "NoSuchThing"]) == 1
    assert "neither" in capsys.readouterr().err
    assert main(["recheck", "--artifact", "/nonexistent/a.json"]) == 1
    with pytest.raises(SystemExit):
        main(["verify"])


def test_seed_resolution(monkeypatch):
    monkeypatch.delenv("SHIELDSYNTH_SEED", raising=False)
    assert resolve_seed(None) == 0
    monkeypatch.setenv("SHIELDSYNTH_SEED", "17")
    assert resolve_seed(None) == 17 and resolve_seed(4) == 4


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "shieldsynth.cli", "-v", "recheck", "--artifact", "/nope.json"],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "error" in proc.stderr


def test_recheck_in_fresh_process(artifact):
    proc = subprocess.run([sys.executable, "-m", "shieldsynth.cli", "recheck", "--artifact", str(artifact)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    out = json.loads(proc.stdout)
    assert out["verified"] is True and out["L"] == out["M"] == 500


def test_bench_timeout_and_order(tmp_path):
    assert main(["bench", "Cartpole", "Pendulum", "--timeout-secs", "0", "--format", "json",
                 "--out", str(tmp_path)]) == 2
    rows = json.loads((tmp_path / "bench.json").read_text())
    assert [r["benchmark"] for r in rows] == ["Cartpole", "Pendulum"]
    assert not any(r["verified"] for r in rows)
