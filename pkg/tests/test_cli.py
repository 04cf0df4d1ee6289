from __future__ import annotations

import json

import pytest
import yaml

from nonlocal_diffusion import cli
from nonlocal_diffusion.errors import PropertyViolation

TINY = {
    "domain": {"kind": "half-line-exterior", "radius": 1.0},
    "operator": {"name": "ou"},
    "measure": {"atoms": [{"weight": 1.0, "point": [2.0]}]},
    "numerics": {"h": 0.05, "tau": 0.01, "dt": 0.01, "particles": 400},
    "task": {"times": [0.1, 0.2], "burn_in": 0.5, "horizon": 1.0, "segments": 2, "initial": "indicator",
             "box": [[1.5], [2.5]], "x0": [2.0], "x1": [3.0]},
    "seed": 5,
}


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return p


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.mark.parametrize("command", ["grid", "solve", "evolve", "lyapunov", "invariant", "simulate", "verify"])
def test_commands_succeed(tiny, tmp_path, command):
    out = tmp_path / command
    assert _run(command, "--config", tiny, "--out", out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["command"] == command
    for name in manifest["files"]:
        text = (out / name).read_text()
        if name.endswith(".csv"):
            assert text.startswith("# producer=")
        elif name.endswith(".json"):
            assert "producer" in json.loads(text)


def test_compare_reports_table(tiny, tmp_path):
    code = _run("compare", "--config", tiny, "--out", tmp_path)
    report = json.loads((tmp_path / "compare.json").read_text())
    assert code == (0 if report["passed"] else 1)
    assert len(report["rows"]) == 10 and (tmp_path / "compare.csv").exists()


def test_negative_lambda_exit_2(tmp_path, capsys):
    bad = {**TINY, "task": {"lambda": -1}}
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(bad))
    assert _run("solve", "--config", p, "--out", tmp_path / "o") == 2
    assert "lambda" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert _run("grid", "--config", tmp_path / "nope.yaml", "--out", tmp_path / "o") == 2


def test_numerical_failure_exit_3(tmp_path, capsys):
    cfg = {**TINY, "operator": {"name": "brownian"}, "numerics": {"h": 0.1, "max_n": 4}, "task": {"lambda": 1e-4}}
    p = tmp_path / "bm.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert _run("solve", "--config", p, "--out", tmp_path / "o") == 3
    assert "increments" in capsys.readouterr().err


def test_property_failure_exit_1(tiny, tmp_path, monkeypatch):
    monkeypatch.setitem(cli.COMMANDS, "grid", lambda ctx, out: {"passed": False})
    assert _run("grid", "--config", tiny, "--out", tmp_path / "a") == 1

    def boom(ctx, out):
        raise PropertyViolation("not positive")

    monkeypatch.setitem(cli.COMMANDS, "grid", boom)
    assert _run("grid", "--config", tiny, "--out", tmp_path / "b") == 1


def test_seed_override_and_determinism(tiny, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out in (a, b):
        assert _run("simulate", "--config", tiny, "--out", out, "--seed", 9) == 0
    assert _run("simulate", "--config", tiny, "--out", c, "--seed", 9, "--jobs", 2) == 0
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["files"] == mb["files"] and ma["seed"] == 9
    for name in ma["files"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert yaml.safe_load((a / "config.yaml").read_text())["seed"] == 9
    ja, jc = (json.loads((d / "simulate.json").read_text()) for d in (a, c))
    assert ja["estimates"] == jc["estimates"] and ja["occupation"] == jc["occupation"]


def test_preset_flag(tmp_path):
    assert _run("grid", "--preset", "ou2d", "--out", tmp_path) == 0


def test_parser_rejects_both_sources(tiny):
    with pytest.raises(SystemExit):
        _run("grid", "--config", tiny, "--preset", "ou1d")
