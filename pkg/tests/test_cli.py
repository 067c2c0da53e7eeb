import json

import numpy as np
import pytest

from rbmkit import cli, io


def run(*args):
    return cli.main([str(a) for a in args])


def test_read_matrix_errors_carry_line_numbers(tmp_path):
    f = tmp_path / "m.csv"
    f.write_text("# header\n0,0.5\n0.5,oops\n")
    with pytest.raises(io.InputError, match=r"m.csv:3"):
        io.read_matrix_csv(f)
    f.write_text("0,0.5\n0.5\n")
    with pytest.raises(io.InputError, match=r":2:"):
        io.read_matrix_csv(f)
    f.write_text("0,0.5\n")
    with pytest.raises(io.InputError, match="square"):
        io.read_matrix_csv(f)


def test_matrix_and_rows_round_trip(tmp_path):
    A = np.random.default_rng(0).random((3, 3)) / 7
    io.write_matrix_csv(A, tmp_path / "A.csv")
    assert np.array_equal(io.read_matrix_csv(tmp_path / "A.csv"), A)
    rows = [{"a": 0.1, "b": 1 / 3, "c": "x"}]
    p = io.write_rows(rows, tmp_path / "r", "csv")
    assert float(io.read_rows(p)[0]["b"]) == 1 / 3
    p = io.write_rows(rows, tmp_path / "r", "json")
    assert io.read_rows(p) == rows


def test_config_formats(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("# comment\nd = 4\ngen = atlas\n")
    assert io.load_config(f) == (None, {"d": "4", "gen": "atlas"})
    f.write_text("d 4\n")
    with pytest.raises(io.InputError, match=":1:"):
        io.load_config(f)
    f.write_text('{"d": 4}')
    assert io.load_config(f) == (None, {"d": 4})


def test_validate_exit_codes(tmp_path, capsys):
    assert run("validate", "--gen", "atlas", "--d", 5, "--out", tmp_path / "a") == 0
    assert run("validate", "--gen", "asym_atlas:0.6667", "--d", 10, "--df", "true",
               "--out", tmp_path / "b") == 0
    assert "DF.alpha = 0.49" in capsys.readouterr().out
    assert run("validate", "--gen", "atlas", "--d", 10, "--df", "true", "--out", tmp_path / "c") == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("0,0.5\n0.5,x\n")
    assert run("validate", "--gen", f"custom:{bad}", "--out", tmp_path / "d") == 1
    assert "bad.csv:2" in capsys.readouterr().err
    rec = tmp_path / "rec.csv"
    rec.write_text("0,1\n1,0\n")
    assert run("validate", "--gen", f"custom:{rec}", "--out", tmp_path / "e") == 1


def test_validate_inconclusive_when_power_cap_too_small(tmp_path):
    P = tmp_path / "slow.csv"
    # shift chain leaking 1e-10 at its end: no power certificate within 3 steps and
    # a spectral radius too close to 1 to decide
    A = np.eye(5, k=1)
    A[4, 4] = 1 - 1e-10
    io.write_matrix_csv(A, P)
    assert run("validate", "--gen", f"custom:{P}", "--cap", 3, "--out", tmp_path) == 2


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as e:
        run("simulate", "--bogus", 1)
    assert e.value.code == 64
    with pytest.raises(SystemExit) as e:
        run("nosuch")
    assert e.value.code == 64
    cfg = tmp_path / "c.cfg"
    cfg.write_text("dt = 0.01\nfoo = 1\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 64
    assert run("simulate", "--dt", "abc", "--out", tmp_path) == 64
    assert run("simulate", "--format", "xml", "--out", tmp_path) == 64
    assert run("couple", "--mode", "mirror", "--gen", "identity", "--out", tmp_path) == 64


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("d = 2\npaths = 7\nT = 0.1\n")
    out = tmp_path / "o"
    assert run("simulate", "--config", cfg, "--paths", 5, "--out", out) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["config"]["d"] == 2 and m["config"]["paths"] == 5 and m["config"]["T"] == 0.1
    assert m["version"] == "0.1.0" and m["subcommand"] == "simulate"
    assert "elapsed" in (out / "simulate.log").read_text()


def test_manifest_round_trip_is_bitwise(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("couple", "--gen", "atlas", "--d", 3, "--T", 1, "--paths", 30, "--seed", 3,
               "--epochs", "true", "--out", a) == 0
    assert run("couple", "--config", a / "manifest.json", "--out", b) == 0
    for name in ("distance.csv", "epochs.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert run("simulate", "--config", a / "manifest.json", "--out", b) == 64


def test_rates_presets(tmp_path, capsys):
    assert run("rates", "--preset", "atlas", "--out", tmp_path) == 0
    summ = io.read_rows(tmp_path / "rates_atlas_summary.csv")[0]
    assert abs(float(summ["slope"]) - 6) < 0.3
    rows = io.read_rows(tmp_path / "rates_atlas.csv")
    vals = [float(v) for v in rows[0]["bound_at_t"].split(";") if v != "nan"]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert run("rates", "--preset", "model", "--gen", "asym_atlas:3/4", "--d", 4,
               "--free", "D2=2", "--format", "json", "--out", tmp_path) == 0
    rec = json.loads((tmp_path / "rates_trel.json").read_text())[0]
    assert rec["kappa"] == 2.0 and rec["trel_wasthm"] > 0
    assert run("rates", "--preset", "atlas", "--free", "zz=1", "--out", tmp_path) == 64


def test_simulate_writes_moments_and_paths(tmp_path):
    assert run("simulate", "--gen", "identity", "--d", 1, "--mu", -1, "--sigma", 1, "--T", 1,
               "--dt", 0.1, "--paths", 20, "--paths-csv", 2, "--out", tmp_path) == 0
    rows = io.read_rows(tmp_path / "moments.csv")
    assert list(rows[0]) == ["t", "coord", "mean", "var", "n"]
    assert (tmp_path / "path_1.csv").exists()


def test_couple_distance_decreases(tmp_path):
    assert run("couple", "--gen", "atlas", "--d", 3, "--xB", "e1", "--T", 5, "--paths", 200,
               "--out", tmp_path) == 0
    rows = io.read_rows(tmp_path / "distance.csv")
    assert float(rows[-1]["l1"]) < float(rows[0]["l1"]) == 1.0


def test_couple_mirror(tmp_path):
    assert run("couple", "--gen", "atlas", "--d", 1, "--mode", "mirror", "--i", 0,
               "--yA", "0,1", "--yB", "0.1,1", "--dt", 0.001, "--T", 1, "--paths", 50,
               "--out", tmp_path) == 0
    assert float(io.read_rows(tmp_path / "mirror_summary.csv")[0]["coupling_probability"]) > 0.5


def test_stattest_rows(tmp_path):
    code = run("stattest", "--gen", "atlas", "--d", 2, "--T", 10, "--paths", 2000,
               "--out", tmp_path)
    rows = io.read_rows(tmp_path / "stattest.csv")
    assert len(rows) == 2 and {r["pass"] for r in rows} <= {"True", "False"}
    assert code == (0 if all(r["pass"] == "True" for r in rows) else 1)


def test_doa_scenarios(tmp_path):
    assert run("doa", "--out", tmp_path) == 0
    rows = {r["condition"]: r["verdict"] for r in io.read_rows(tmp_path / "doa_verdicts.csv")}
    assert rows == {"star": "failing", "d1": "pass", "d2": "pass", "d3": "pass"}
    cfg = tmp_path / "nu.cfg"
    cfg.write_text('scenario = nu_t\ninitial.kind = product-exp\n'
                   'initial.params = {"rates": 1}\ntarget = pi_a:0\nk_watch = 2\n'
                   'horizon = 1\nm_obs = 10\npaths = 100\n')
    assert run("doa", "--config", cfg, "--out", tmp_path) == 0
    assert len(io.read_rows(tmp_path / "nu_t.csv")) == 22
