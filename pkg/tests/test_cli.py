import json

import pytest

from varode.cli import RunConfig, main


def run(capsys, *argv):
    code = main(list(argv))
    return code, json.loads(capsys.readouterr().out)


def test_el(capsys):
    code, out = run(capsys, "el", "--lagrangian", "y3^(1/3)", "--n", "3")
    assert code == 0
    assert out["F"] == "5*y4*y5/y3 - (40/9)*y4^3/y3^2"
    assert out["weighted_degree"]["passed"]


def test_parse_error_exit_code(capsys):
    code, out = run(capsys, "el", "--lagrangian", "y3^", "--n", "3")
    assert code == 2 and "offset" in out["error"]


def test_degenerate_exit_code(capsys):
    code, out = run(capsys, "el", "--lagrangian", "x*y3", "--n", "3")
    assert code == 3


def test_integration_failure_exit_code(capsys):
    code, out = run(capsys, "invariants", "--lagrangian", "y3^(1/3)", "--n", "3", "--init", "0,0,0,0,1,1")
    assert code == 4 and "error" in out


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        RunConfig("invariants", tol=-1.0)


def test_classify_output_is_deterministic(capsys, tmp_path):
    args = ["classify", "--lagrangian", "y3^2 + y0^2", "--n", "3", "--seed", "5"]
    a = run(capsys, *args, "--json", str(tmp_path / "a.json"))
    b = run(capsys, *args, "--json", str(tmp_path / "b.json"))
    assert a == b and a[1]["verdict"] == "not_maximally_symmetric"
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_seed_environment_fallback(capsys, monkeypatch):
    monkeypatch.setenv("VARODE_SEED", "9")
    _, a = run(capsys, "invariants", "--ode", "y6 = y0", "--order", "6", "--solutions", "1")
    _, b = run(capsys, "invariants", "--ode", "y0", "--order", "6", "--solutions", "1", "--seed", "9")
    assert a == b
    assert abs(a["sup"]["W6"] - 30240) < 1e-3


def test_invariants_csv(capsys, tmp_path):
    path = tmp_path / "w.csv"
    code, out = run(capsys, "invariants", "--lagrangian", "y3^2", "--n", "3", "--solutions", "2",
                    "--grid", "0:1:16", "--csv", str(path))
    assert code == 0 and len(out["csv"]) == 2
    raw = (tmp_path / "w.0.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "x,W3,W4,W5,W6" and len(lines) == 17


def test_syzygy(capsys):
    code, out = run(capsys, "syzygy", "--lagrangian", "y3^4", "--n", "3")
    assert code == 0 and out["status"] == "zero" and out["residual"] == "0"


def test_selfdual(capsys):
    code, out = run(capsys, "selfdual", "--lagrangian", "y3^4 + y1*y3^2", "--n", "3", "--solutions", "2")
    assert code == 0 and out["all_selfdual"]


def test_selfdual_negative(capsys):
    code, out = run(capsys, "selfdual", "--ode", "y6 = y5", "--order", "6", "--solutions", "1")
    assert code == 0 and not out["all_selfdual"]


def test_geometry(capsys):
    code, out = run(capsys, "geometry", "--lagrangian", "y3^2", "--n", "3", "--grid", "0:0.5:17")
    assert code == 0
    assert out["growth_vector"] == [2, 3, 5, 6] and out["class"] == 3
    assert out["omega"] == {"0,5": "-2", "1,4": "2", "2,3": "-2"}
    assert out["legendre_pushforward"]["ok"] and out["jacobi_vs_lin_match"]


def test_short_grid_rejected(capsys):
    code, out = run(capsys, "invariants", "--lagrangian", "y3^2", "--n", "3", "--grid", "0:1:5")
    assert code == 2 and "16" in out["error"]
