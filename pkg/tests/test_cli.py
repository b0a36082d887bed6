import csv
import json
import os
import subprocess
import sys

import pytest

from percolab import cli

ESTIMATOR_OPS = {
    "theta", "chi", "pc", "duality", "tail", "correlation-length", "nu-beta", "scaling-relations",
    "selfdual", "rsw", "cardy", "exploration", "box-dimension",
    "gradient", "fpp", "fpp-shape", "contact", "oriented", "oriented-pc", "invasion", "invasion-hit",
}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, cfg, *extra, out="out"):
    code = cli.main(["run", write(tmp_path, cfg), "--out", str(tmp_path / out), *extra])
    report = tmp_path / out / "report.json"
    return code, (json.loads(report.read_text()) if report.exists() else None)


def test_list_is_json_and_complete(capsys):
    assert cli.main(["list"]) == 0
    catalog = json.loads(capsys.readouterr().out)
    assert {"cardy", "pc", "fpp-shape"} <= set(catalog)
    assert set(catalog) == ESTIMATOR_OPS
    assert len(catalog) == len(ESTIMATOR_OPS)
    for entry in catalog.values():
        assert {"summary", "fields", "params"} <= set(entry)


def test_invalid_p_names_field(tmp_path, capsys):
    code, _ = run(tmp_path, {"experiment": "theta", "seed": 1, "p": 1.5})
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["field"] == "p"
    assert "p" in err["message"]


@pytest.mark.parametrize("cfg,field", [
    ({"experiment": "theta", "p": 0.5}, "seed"),
    ({"experiment": "nope", "seed": 1}, "experiment"),
    ({"experiment": "theta", "seed": 1, "colour": 3}, "colour"),
    ({"experiment": "theta", "seed": 1, "lambda": 1.0}, "lambda"),
    ({"experiment": "theta", "seed": 1, "L": []}, "L"),
    ({"experiment": "theta", "seed": 1, "mode": "edge"}, "mode"),
    ({"experiment": "theta", "seed": 1, "lattice": {"kind": "cubic"}}, "lattice.kind"),
    ({"experiment": "theta", "seed": 1, "n_samples": 0}, "n_samples"),
    ({"experiment": "cardy", "seed": 1, "x": [0.0]}, "x"),
    ({"experiment": "pc", "seed": 1, "params": {"bogus": 1}}, "params.bogus"),
    ({"experiment": "theta", "seed": -4}, "seed"),
])
def test_validation_errors(tmp_path, capsys, cfg, field):
    code, _ = run(tmp_path, cfg)
    assert code == 2
    assert json.loads(capsys.readouterr().err)["field"] == field


def test_bad_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["run", str(path)]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "config"


def test_unwritable_output_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = cli.main(["run", write(tmp_path, {"experiment": "scaling-relations", "seed": 1}),
                     "--out", str(blocker / "sub")])
    assert code == 2
    assert json.loads(capsys.readouterr().err)["field"] == "output_dir"


def test_selfdual_report(tmp_path):
    code, rep = run(tmp_path, {"experiment": "selfdual", "seed": 11, "L": [16], "n_samples": 10000}, "--assert")
    assert code == 0
    assert set(rep) == {"config", "estimates", "curves", "meta"}
    (e,) = rep["estimates"]
    assert abs(e["value"] - 0.5) <= 3 * e["stderr"]
    assert rep["meta"]["version"] == cli.__version__
    assert rep["meta"]["samples"] == 10000
    with open(tmp_path / "out" / rep["curves"][0]["file"]) as fh:
        assert next(csv.reader(fh)) == ["n", "crossing", "stderr"]


def test_rerun_is_byte_identical(tmp_path):
    cfg = {"experiment": "chi", "seed": 5, "p": [0.3, 0.45], "L": [16], "n_samples": 300}
    _, a = run(tmp_path, cfg, out="a")
    _, b = run(tmp_path, cfg, "--workers", "2", out="b")
    assert json.dumps(a["estimates"]) == json.dumps(b["estimates"])
    assert (tmp_path / "a" / "chi.csv").read_bytes() == (tmp_path / "b" / "chi.csv").read_bytes()


def test_assert_exit_code(tmp_path):
    line = {"experiment": "box-dimension", "seed": 1, "L": [64], "params": {"control": "line", "tolerance": 1e-9}}
    code, rep = run(tmp_path, line, "--assert")
    assert code == 0
    assert rep["meta"]["passed"] is True
    strict = {"experiment": "box-dimension", "seed": 1, "L": [64], "n_samples": 1, "params": {"tolerance": 0.0}}
    code, rep = run(tmp_path, strict, "--assert")
    assert code == 3
    assert rep["meta"]["passed"] is False


def test_failed_check_without_assert_exits_zero(tmp_path):
    cfg = {"experiment": "box-dimension", "seed": 1, "L": [64], "n_samples": 1, "params": {"tolerance": 0.0}}
    code, rep = run(tmp_path, cfg)
    assert code == 0
    assert rep["meta"]["checks"][0]["passed"] is False


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = {"experiment": "scaling-relations", "seed": 1, "output_dir": str(tmp_path / "from_cfg")}
    path = write(tmp_path, cfg)
    monkeypatch.setenv(cli.ENV_OUTPUT, str(tmp_path / "from_env"))
    assert cli.main(["run", path]) == 0
    assert (tmp_path / "from_env" / "report.json").exists()
    assert cli.main(["run", path, "--out", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "report.json").exists()
    monkeypatch.delenv(cli.ENV_OUTPUT)
    assert cli.main(["run", path]) == 0
    assert (tmp_path / "from_cfg" / "report.json").exists()


def test_scaling_relations_experiment(tmp_path):
    code, rep = run(tmp_path, {"experiment": "scaling-relations", "seed": 0,
                               "params": {"set": "2d", "exponents": {"beta": 0.2388888888888889}}})
    assert code == 0
    res = {e["name"]: e["value"] for e in rep["estimates"]}
    assert res["2-alpha = gamma+2beta"] == pytest.approx(-0.2)
    assert rep["meta"]["passed"] is False


def test_config_echo_has_defaults(tmp_path):
    _, rep = run(tmp_path, {"experiment": "theta", "seed": 2, "n_samples": 20, "L": [8]})
    assert rep["config"]["lattice"] == {"kind": "square"}
    assert rep["config"]["mode"] == "bond"
    assert rep["config"]["seed"] == 2


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "percolab.cli", "list"], capture_output=True, text=True,
                         env={**os.environ})
    assert res.returncode == 0
    assert "selfdual" in json.loads(res.stdout)
