import json
import os

import pytest

from clusterlclt import cli
from clusterlclt._parallel import WORKERS_ENV


def _poly_config(path, nodes):
    cfg = {
        "model": {"dimension": 1, "k": 1, "coupling": {"kind": "nearest_neighbor", "J": 1.0},
                  "measure": {"kind": "polynomial", "coefficients": [0, 0, 0.5, 0, 0.1], "A": 0.25},
                  "boundary": {"kind": "free"}, "beta": 0.5, "quadrature": {"nodes": nodes}},
        "command": {"name": "verify-all",
                    "checks": [{"check": "lclt", "t_max": 20, "t_step": 0.02, "x_grid": [-3, 3, 13]}]},
        "seed": 0,
    }
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(autouse=True)
def _restore_workers():
    old = os.environ.get(WORKERS_ENV)
    yield
    if old is None:
        os.environ.pop(WORKERS_ENV, None)
    else:
        os.environ[WORKERS_ENV] = old


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "run_log.txt"}


def test_verify_all_gaussian(tmp_path, capsys):
    assert cli.main(["verify-all", "--config", "gaussian_exact.json", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 3
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["passed"] is True and man["seed"] == 0
    assert set(man["files"]) <= set(os.listdir(tmp_path))


def test_ursell_k3(capsys):
    assert cli.main(["ursell", "k3.txt"]) == 0
    assert capsys.readouterr().out.split() == ["direct", "2", "penrose", "2"]


def test_malformed_config_writes_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": {"dimension": 1,, }')
    out = tmp_path / "out"
    assert cli.main(["verify-all", "--config", str(bad), "--out", str(out)]) == 2
    assert "line 1" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_key_value_is_config_error(tmp_path):
    cfg = json.loads((cli.resolve_path("gaussian_exact.json")).read_text())
    cfg["command"]["checks"].append({"check": "no_such_check"})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    assert cli.main(["verify-all", "--config", str(p), "--out", str(out)]) == 2
    assert not out.exists()


def test_workers_do_not_change_outputs(tmp_path):
    a, b = tmp_path / "w1", tmp_path / "w4"
    assert cli.main(["--workers", "1", "verify-all", "--config", "ising_expansion.json", "--out", str(a)]) in (0, 1)
    assert cli.main(["--workers", "4", "verify-all", "--config", "ising_expansion.json", "--out", str(b)]) in (0, 1)
    assert _files(a) == _files(b)


def test_compare_identical_and_quadrature_change(tmp_path, capsys):
    runs = {}
    for n in (32, 64):
        runs[n] = tmp_path / f"o{n}"
        cli.main(["verify-all", "--config", _poly_config(tmp_path / f"q{n}.json", n), "--out", str(runs[n])])
    again = tmp_path / "o64b"
    cli.main(["verify-all", "--config", str(tmp_path / "q64.json"), "--out", str(again)])
    capsys.readouterr()
    assert cli.main(["compare", str(runs[64] / "manifest.json"), str(again / "manifest.json")]) == 0
    assert json.loads(capsys.readouterr().out)["differences"] == []
    assert cli.main(["compare", str(runs[32] / "manifest.json"), str(runs[64] / "manifest.json")]) == 1
    fields = [d["field"] for d in json.loads(capsys.readouterr().out)["differences"]]
    assert any("lclt_sup_error" in f for f in fields)


def test_csv_headers(tmp_path):
    cli.main(["gibbs", "--config", "gaussian_exact.json", "--out", str(tmp_path), "--t-max", "10",
              "--t-step", "0.05", "--x-max", "2", "--x-step", "0.5"])
    lines = (tmp_path / "density.csv").read_text().splitlines()
    assert lines[0].startswith("# config_digest") and lines[1].startswith("# seed")
    assert "x,p,gauss,abs_err" in lines


def test_bounds_command(tmp_path):
    rc = cli.main(["bounds", "--config", "powerlaw_dilution.json", "--out", str(tmp_path), "--epsilon", "0.1"])
    man = json.loads((tmp_path / "manifest.json").read_text())
    by_name = {r["name"]: r for r in man["results"]}
    # undiluted power law at beta = 1 is outside the Gruber-Kunz regime; dilution recovers it
    assert rc == 1 and not by_name["gruber_kunz_margin"]["passed"]
    assert by_name["dilution_r_epsilon"]["passed"] and (tmp_path / "certificate.json").exists()
