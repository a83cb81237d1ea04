import csv
import io
import json
import math

import pytest

from ipwmeta.cli import main

CLOP = "data/clopidogrel.csv"


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_json_golden(capsys, clopidogrel_path):
    code, out, _ = run_cli(capsys, "analyze", "--data", str(clopidogrel_path),
                           "--family", "logistic1", "--ci", "asymptotic",
                           "--exp", "--baseline-dl", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert doc["schema"] == 1
    assert doc["dataset"]["n_published"] == 12
    assert doc["dataset"]["s_total"] == 15
    dl_row, ipw_row = doc["rows"]
    assert dl_row["method"] == "DL"
    assert dl_row["estimate"] == pytest.approx(0.622, abs=0.01)
    assert dl_row["ci_lo"] == pytest.approx(0.441, abs=0.01)
    assert dl_row["ci_hi"] == pytest.approx(0.877, abs=0.01)
    assert ipw_row["estimate"] == pytest.approx(0.666, abs=0.01)
    assert ipw_row["beta"][0] == pytest.approx(1.018, abs=0.01)
    assert ipw_row["converged"] is True
    assert doc["solver_diagnostics"][0]["family"] == "logistic1"


def test_analyze_json_csv_same_numbers(capsys, clopidogrel_path):
    args = ("analyze", "--data", str(clopidogrel_path), "--family", "logistic1",
            "--ci", "both", "--boot-b", "200", "--seed", "7", "--baseline-dl")
    code, out_json, _ = run_cli(capsys, *args, "--format", "json")
    assert code == 0
    code, out_csv, _ = run_cli(capsys, *args, "--format", "csv")
    assert code == 0
    rows_json = json.loads(out_json)["rows"]
    rows_csv = list(csv.DictReader(io.StringIO(out_csv)))
    assert len(rows_json) == len(rows_csv) == 3
    for rj, rc in zip(rows_json, rows_csv):
        for key in ("estimate", "ci_lo", "ci_hi", "tau2"):
            if rj[key] is None:
                assert rc[key] == ""
            else:
                assert float(rc[key]) == rj[key]


def test_analyze_seed_determinism(capsys, clopidogrel_path):
    args = ("analyze", "--data", str(clopidogrel_path), "--family", "logistic1",
            "--ci", "bootstrap", "--boot-b", "150", "--seed", "5",
            "--format", "json")
    _, out1, _ = run_cli(capsys, *args)
    _, out2, _ = run_cli(capsys, *args)
    assert out1 == out2
    _, out3, _ = run_cli(capsys, "analyze", "--data", str(clopidogrel_path),
                         "--family", "logistic1", "--ci", "bootstrap",
                         "--boot-b", "150", "--seed", "6", "--format", "json")
    assert out1 != out3


def test_analyze_exp_is_endpointwise(capsys, clopidogrel_path):
    args = ("analyze", "--data", str(clopidogrel_path), "--family", "logistic1",
            "--ci", "asymptotic", "--format", "json")
    _, raw, _ = run_cli(capsys, *args)
    _, exp, _ = run_cli(capsys, *args, "--exp")
    r, e = json.loads(raw)["rows"][0], json.loads(exp)["rows"][0]
    assert e["estimate"] == pytest.approx(math.exp(r["estimate"]), rel=1e-12)
    assert e["ci_lo"] == pytest.approx(math.exp(r["ci_lo"]), rel=1e-12)
    assert e["ci_hi"] == pytest.approx(math.exp(r["ci_hi"]), rel=1e-12)
    # p-values stay on the log scale
    assert e["p_value"] == r["p_value"]


def test_analyze_all_families_m0_reduction(capsys, tmp_path):
    p = tmp_path / "m0.csv"
    p.write_text("id,effect,se,n_total,published\n"
                 "a,-0.5,0.3,100,1\nb,-0.2,0.4,60,1\nc,0.1,0.5,40,1\n")
    code, out, _ = run_cli(capsys, "analyze", "--data", str(p), "--family",
                           "all", "--ci", "asymptotic", "--baseline-dl",
                           "--format", "json")
    assert code == 0
    doc = json.loads(out)
    dl_row = doc["rows"][0]
    for row in doc["rows"][1:]:
        if row["family"] in ("logistic1", "mlogistic1"):
            assert row["estimate"] == pytest.approx(dl_row["estimate"], abs=1e-12)
            assert row["tau2"] == pytest.approx(dl_row["tau2"], abs=1e-12)
        else:
            # two-parameter fits push pi -> 1; logistic2 saturates only at
            # the box bound so the match is approximate there
            assert row["estimate"] == pytest.approx(dl_row["estimate"], abs=1e-6)


def test_analyze_nonconverged_row_flag_exit_zero(capsys, clopidogrel_path):
    code, out, _ = run_cli(capsys, "analyze", "--data", str(clopidogrel_path),
                           "--family", "probit2", "--ci", "asymptotic",
                           "--format", "json")
    assert code == 0
    row = json.loads(out)["rows"][0]
    assert row["converged"] is False


def test_exit_code_data_error(capsys):
    code, _, err = run_cli(capsys, "analyze", "--data", "nope.csv",
                           "--family", "logistic1")
    assert code == 3
    assert json.loads(err)["error"] == "data"


def test_exit_code_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["analyze", "--data", CLOP, "--family", "cauchy9"])
    assert exc.value.code == 2


def test_exit_code_numeric_failure(capsys, tmp_path):
    # rootless estimating equation (all published effects maximally
    # significant) surfaces as a machine-readable numeric error
    p = tmp_path / "hopeless.csv"
    p.write_text("id,effect,se,n_total,published\n"
                 "a,-60.0,1.0,100,1\nb,-55.0,1.0,80,1\nu,,,50,0\n")
    code, _, err = run_cli(capsys, "analyze", "--data", str(p),
                           "--family", "logistic1")
    assert code == 4
    assert json.loads(err)["error"] == "numeric"


def test_selection_curve_constant_when_no_selection(capsys, tmp_path):
    p = tmp_path / "m0.csv"
    p.write_text("id,effect,se,n_total,published\n"
                 "a,-0.5,0.3,100,1\nb,-0.2,0.4,60,1\n")
    code, out, _ = run_cli(capsys, "selection-curve", "--data", str(p),
                           "--family", "logistic1", "--t-range=-2:2:0.5")
    assert code == 0
    lines = [l for l in out.splitlines() if l and not l.startswith("#")]
    assert lines[0] == "t,pi"
    vals = [float(l.split(",")[1]) for l in lines[1:]]
    assert vals == [1.0] * len(vals)


def test_selection_curve_matches_fitted_probit(capsys, clopidogrel_path):
    from scipy.special import ndtr
    code, out, _ = run_cli(capsys, "selection-curve", "--data",
                           str(clopidogrel_path), "--family", "probit2",
                           "--t-range=-1:1:0.25")
    assert code == 0
    header = {}
    rows = []
    for line in out.splitlines():
        if line.startswith("#"):
            key, val = line[1:].strip().split("=", 1)
            header[key] = val
        elif line and line != "t,pi":
            t, pi = line.split(",")
            rows.append((float(t), float(pi)))
    b0, b1 = json.loads(header["beta_hat"])
    for t, pi in rows:
        assert pi == pytest.approx(float(ndtr(b0 + b1 * t)), rel=1e-10)


def test_selection_curve_out_file(tmp_path, capsys, clopidogrel_path):
    dest = tmp_path / "curve.csv"
    code, out, _ = run_cli(capsys, "selection-curve", "--data",
                           str(clopidogrel_path), "--family", "logistic1",
                           "--t-range=-1:1:1", "--out", str(dest))
    assert code == 0 and out == ""
    assert dest.read_text().startswith("# family=logistic1")


def test_simulate_inline_deterministic(capsys):
    args = ("simulate", "--tau", "0.15", "--s-total", "25", "--true-family",
            "logistic1", "--true-beta", "2", "--replicates", "4", "--seed",
            "9", "--methods", "dl:asymptotic,ipw:logistic1:none",
            "--threads", "1")
    code, out1, err = run_cli(capsys, *args)
    assert code == 0
    assert "replicate 4/4" in err
    code, out2, _ = run_cli(capsys, *args)
    assert out1 == out2
    rows = list(csv.DictReader(io.StringIO(out1)))
    assert {r["method"] for r in rows} == {"dl", "ipw"}
    assert {r["parameter"] for r in rows} == {"mu", "tau2"}


def test_simulate_config_file_equivalent(capsys, tmp_path):
    doc = {"mu": -0.5, "tau": 0.15, "s_total": 25,
           "selection": {"family": "logistic1", "beta": [2.0]},
           "seed": 9, "n_replicates": 4,
           "methods": [{"method": "dl", "ci": "asymptotic"},
                       {"method": "ipw", "family": "logistic1", "ci": "none"}]}
    cfg_path = tmp_path / "scenario.json"
    cfg_path.write_text(json.dumps(doc))
    out_path = tmp_path / "metrics.csv"
    code, _, _ = run_cli(capsys, "simulate", "--config", str(cfg_path),
                         "--out", str(out_path), "--threads", "1")
    assert code == 0
    code, inline_out, _ = run_cli(capsys, "simulate", "--tau", "0.15",
                                  "--s-total", "25", "--true-family",
                                  "logistic1", "--true-beta", "2",
                                  "--replicates", "4", "--seed", "9",
                                  "--methods", "dl:asymptotic,ipw:logistic1:none",
                                  "--threads", "1")
    assert out_path.read_text() == inline_out


def test_simulate_bad_config_usage_error(capsys, tmp_path):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps({"tau": 0.1}))
    code, _, err = run_cli(capsys, "simulate", "--config", str(cfg_path))
    assert code == 2
    assert "invalid scenario config" in err


def test_simulate_missing_inline_flags(capsys):
    code, _, err = run_cli(capsys, "simulate", "--tau", "0.1")
    assert code == 2
    assert "--s-total" in err
