import csv
import json

import pytest

from zibrsaem.cli import main, parse_reduced, read_config_file, resolve, ConfigError
from zibrsaem.csvio import InputError, emit_csv, ingest_csv
from zibrsaem.simulate import SETTING2, SimConfig, generate

FAST = ["--k1", "30", "--k2", "20", "--chains", "2", "--is-samples", "100", "--seed", "3"]


def write(path, text):
    path.write_text(text)
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    d = generate(SimConfig(SETTING2, n_individuals=30, t_per_individual=5, seed=1))
    path = tmp_path_factory.mktemp("data") / "sim.csv"
    emit_csv(d, path)
    return path


# ---------------------------------------------------------------- csv

def test_ingest_two_subjects(tmp_path):
    f = write(tmp_path / "d.csv", "subject,time,y,x1\nA,2,0.5,1\nA,1,0,1\nB,1,0.25,0\nB,2,0,0\n")
    d = ingest_csv(f)
    assert d.N == 2 and d.counts.tolist() == [2, 2]
    assert d.ids == ("A", "B") and d.y.tolist() == [0.0, 0.5, 0.25, 0.0]
    assert d.x_names == ("x1",) and d.z_names == ("x1",)


def test_ingest_column_selection(tmp_path):
    f = write(tmp_path / "d.csv", "subject,time,y,u,v\ns,1,0.5,1,2\n")
    d = ingest_csv(f, x_cols=["v"], z_cols=[])
    assert d.x.tolist() == [[2.0]] and d.r == 0
    with pytest.raises(InputError, match="unknown"):
        ingest_csv(f, x_cols=["w"])


@pytest.mark.parametrize("body, line, pattern", [
    ("s,1,0.1,0\ns,2,0.2,0\ns,3,0.3,0\ns,4,0.4,0\ns,5,0.5,0\ns,6,1.0,0\n", 7, "outside"),
    ("s,1,-0.1,0\n", 2, "outside"),
    ("s,1,0.1,0\ns,1,0.2,0\n", 3, "duplicate time"),
    ("s,1,0.1,abc\n", 2, "non-numeric"),
    ("s,1,0.1\n", 2, "fields"),
])
def test_ingest_errors_cite_line(tmp_path, body, line, pattern):
    f = write(tmp_path / "bad.csv", "subject,time,y,x\n" + body)
    with pytest.raises(InputError, match=pattern) as info:
        ingest_csv(f)
    assert info.value.line == line and f"line {line}" in str(info.value)


def test_ingest_header_required(tmp_path):
    with pytest.raises(InputError):
        ingest_csv(write(tmp_path / "h.csv", "id,t,y\n1,1,0.1\n"))
    with pytest.raises(InputError):
        ingest_csv(write(tmp_path / "e.csv", ""))


def test_round_trip_is_byte_identical(tmp_path, sim_csv):
    text = sim_csv.read_text()
    assert emit_csv(ingest_csv(sim_csv)) == text
    f = write(tmp_path / "c.csv", "subject,time,y,g,h\nb,1.0,0.0,1.0,0.5\nb,2.0,0.3,1.0,0.5\n"
                                  "a,1.0,0.125,0.0,-2.0\n")
    assert emit_csv(ingest_csv(f)) == f.read_text()


# ---------------------------------------------------------------- config

def test_config_file_and_flag_precedence(tmp_path):
    f = write(tmp_path / "run.cfg", "# settings\nk1 = 40\nseed = 5\nx-cols = a,b\nout = o\n")
    cfg = resolve("bench", read_config_file(f), dict(k1=60, replicates=2))
    assert cfg["k1"] == 60 and cfg["seed"] == 5 and cfg["x_cols"] == ["a", "b"]
    with pytest.raises(ConfigError, match="seed"):
        resolve("bench", {}, dict(out="o", replicates=1))
    with pytest.raises(ConfigError, match="unknown"):
        resolve("fit", {"bogus": 1}, {})


def test_parse_reduced():
    assert parse_reduced("x=;z=", ["t"], ["t"]) == ([], [])
    assert parse_reduced("z=t", ["t", "u"], ["t", "u"]) == (["t", "u"], ["t"])
    with pytest.raises(ConfigError):
        parse_reduced("x=w", ["t"], ["t"])


# ---------------------------------------------------------------- commands

def test_fit_writes_artifacts_and_replays(tmp_path, sim_csv):
    out = tmp_path / "fit"
    assert main(["fit", str(sim_csv), "--out", str(out)] + FAST) == 0
    est = rows(out / "estimates.csv")
    assert [r["parameter"] for r in est][:3] == ["a", "b", "alpha_treat"]
    assert set(est[0]) == {"parameter", "estimate", "se", "wald_p", "seed", "config_hash"}
    assert all(r["seed"] == "3" for r in est)
    ll = rows(out / "loglik.csv")[0]
    assert float(ll["loglik"]) < 0 and float(ll["mc_se"]) > 0
    assert len(rows(out / "trace.csv")) == 50
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and set(man["artifacts"]) == {"estimates.csv", "loglik.csv",
                                                           "trace.csv"}
    out2 = tmp_path / "replay"
    assert main(["fit", "--config", str(out / "manifest.json"), "--out", str(out2)]) == 0
    for name in ("estimates.csv", "loglik.csv", "trace.csv"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes()


def test_lrt_identical_models_gives_zero(tmp_path, sim_csv):
    out = tmp_path / "lrt"
    assert main(["lrt", str(sim_csv), "--reduced", "x=treat;z=treat", "--out", str(out)]
                + FAST) == 0
    r = rows(out / "lrt.csv")[0]
    assert float(r["statistic"]) == 0.0 and float(r["p_value"]) == 1.0


def test_lrt_nested_models(tmp_path, sim_csv):
    out = tmp_path / "lrt2"
    assert main(["lrt", str(sim_csv), "--reduced", "x=;z=", "--out", str(out)] + FAST) == 0
    r = rows(out / "lrt.csv")[0]
    assert r["df"] == "2" and 0.0 <= float(r["p_value"]) <= 1.0
    assert (out / "reduced_estimates.csv").exists()


def test_wald_without_usable_information_fails_cleanly(tmp_path, sim_csv):
    # this short run ends with an information matrix that is not positive definite
    out = tmp_path / "wald_short"
    assert main(["wald", str(sim_csv), "--out", str(out)] + FAST) == 4
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "FitError" and "positive definite" in err["message"]


def test_wald_command(tmp_path, sim_csv):
    out = tmp_path / "wald"
    # short runs do not always give a positive definite information matrix; seed 1 does
    args = ["--k1", "150", "--k2", "100", "--chains", "3", "--is-samples", "100", "--seed", "1"]
    assert main(["wald", str(sim_csv), "--out", str(out)] + args) == 0
    w = rows(out / "wald.csv")
    assert [r["parameter"] for r in w] == ["alpha_treat", "beta_treat"]
    assert all(float(r["p_bh"]) >= float(r["p_value"]) for r in w)


def test_simulate_command(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--scenario", "appendixA", "--individuals", "10", "--seed", "4",
                 "--out", str(out)]) == 0
    d = ingest_csv(out / "data.csv")
    assert d.N == 10 and d.n_obs == 80
    truth = {r["parameter"]: float(r["value"]) for r in rows(out / "truth.csv")}
    assert truth["phi"] == 6.4


def test_bench_command_emits_metrics(tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--scenario", "setting2", "--replicates", "5", "--individuals", "10",
                 "--k1", "10", "--k2", "10", "--seed", "1", "--out", str(out)]) == 0
    names = [r["parameter"] for r in rows(out / "metrics.csv")]
    assert names == ["a", "b", "alpha_treat", "beta_treat", "phi", "sigma1", "sigma2"]
    assert "rmse" in capsys.readouterr().out
    assert (out / "records.jsonl").read_text().count("\n") == 5


def test_errors_give_record_and_exit_code(tmp_path, capsys):
    bad = write(tmp_path / "bad.csv", "subject,time,y,x\ns,1,1.0,0\n")
    out = tmp_path / "err"
    assert main(["fit", str(bad), "--seed", "1", "--out", str(out)]) == 3
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "InputError" and rec["line"] == 2
    assert json.loads((out / "error.json").read_text())["exit_code"] == 3
    assert main(["fit", str(bad), "--out", str(out)]) == 2
    assert main(["fit", str(tmp_path / "missing.csv"), "--seed", "1", "--out", str(out)]) == 1


def test_help_exits_cleanly():
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
