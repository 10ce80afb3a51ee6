"""End-to-end command-line runs, in process via main(argv)."""
import json
import math

import numpy as np
import pytest

from nmixtime.cli import main
from nmixtime.likelihood import total_loglik
from nmixtime.datafiles import load_dataset
from nmixtime.model import Family, ObservationProcess


def write_json(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def sim_config(tmp_path, **overrides):
    config = {
        "model": "CountT",
        "sites": 40,
        "occasions": 2,
        "search_time": 1.0,
        "lambda": 2.0,
        "rate": 0.8,
        "seed": 7,
    }
    config.update(overrides)
    return write_json(tmp_path / "config.json", config)


def test_simulate_fit_loglik_validate_pipeline(tmp_path, capsys):
    cfg = sim_config(tmp_path)
    data = tmp_path / "data"
    assert main(["simulate", "--config", cfg, "--out", str(data)]) == 0
    assert (data / "counts.csv").exists()
    assert (data / "times.csv").exists()
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["outputs"]["counts"] == "counts.csv"
    assert len(manifest["config_digest"]) == 64

    fit_out = tmp_path / "fit.json"
    code = main([
        "fit", "--data", str(data), "--model", "CountT", "--out", str(fit_out)
    ])
    assert code == 0
    fit_payload = json.loads(fit_out.read_text())
    assert fit_payload["model"] == "CountT:M"
    assert fit_payload["converged"] is True
    assert len(fit_payload["se"]) == 2
    assert all(math.isfinite(s) for s in fit_payload["se"])
    est = fit_payload["estimates"]
    assert abs(est["log_lambda"] - math.log(2.0)) < 1.0
    assert abs(est["log_rate"] - math.log(0.8)) < 1.0

    params = write_json(tmp_path / "params.json", {"lambda": 2.0, "rate": 0.8})
    capsys.readouterr()
    assert main([
        "loglik", "--data", str(data), "--model", "CountT",
        "--params", params, "--constants",
    ]) == 0
    ll_payload = json.loads(capsys.readouterr().out)
    assert ll_payload["constants_included"] is True
    assert len(ll_payload["per_site"]) == 40
    ds = load_dataset(
        data / "counts.csv", data / "times.csv",
        family=Family.COUNT_T, process=ObservationProcess.BINOMIAL_COUNT,
    )
    from nmixtime.datafiles import params_from_dict
    direct = total_loglik(
        ds, params_from_dict({"lambda": 2.0, "rate": 0.8}), include_constants=True
    )
    assert ll_payload["total"] == pytest.approx(direct.total, abs=1e-12)
    # the fitted parameters cannot score below the truth
    assert fit_payload["loglik"] >= ll_payload["total"] - 1e-8

    val_out = tmp_path / "val.json"
    assert main([
        "validate", "--data", str(data), "--model", "CountT",
        "--params", params, "--tol", "1e-8", "--out", str(val_out),
    ]) == 0
    report = json.loads(val_out.read_text())
    assert report["within_tolerance"] is True
    assert report["max_abs_diff"] < 1e-8


def test_resimulation_is_byte_identical(tmp_path):
    cfg = sim_config(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "counts.csv").read_bytes() == (b / "counts.csv").read_bytes()
    assert (a / "times.csv").read_bytes() == (b / "times.csv").read_bytes()
    assert main(["simulate", "--config", cfg, "--out", str(c), "--seed", "8"]) == 0
    assert (a / "counts.csv").read_bytes() != (c / "counts.csv").read_bytes()


def test_simulate_poisson_prefix_model(tmp_path, capsys):
    cfg = sim_config(tmp_path, model="PCountT1", occasions=3)
    data = tmp_path / "data"
    assert main(["simulate", "--config", cfg, "--out", str(data)]) == 0
    out = capsys.readouterr().out
    assert "PCountT1" in out
    assert (data / "times.csv").exists()
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["outputs"]["times"] == "times.csv"


def test_simulate_missing_config_key(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"model": "Count", "sites": 5})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "d")]) == 2
    assert "missing 'occasions'" in capsys.readouterr().err


def test_simulate_unknown_model(tmp_path, capsys):
    cfg = sim_config(tmp_path, model="CountX")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "d")]) == 2
    assert "unknown model" in capsys.readouterr().err


def test_model_process_conflict(tmp_path, capsys):
    cfg = sim_config(tmp_path, model="PCount", process="binomial")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "d")]) == 2
    assert "implies the poisson process" in capsys.readouterr().err


def test_fit_wrong_columns_exits_config(tmp_path, capsys):
    bad = tmp_path / "counts.csv"
    bad.write_text("site,occasion,count\n1,1,2\n")
    assert main(["fit", "--counts", str(bad), "--model", "Count"]) == 2
    assert "missing column" in capsys.readouterr().err


def test_fit_requires_data_or_counts(capsys):
    assert main(["fit", "--model", "Count"]) == 2
    assert "--data DIR or --counts FILE" in capsys.readouterr().err


def test_fit_invalid_data_exits_config(tmp_path, capsys):
    bad = tmp_path / "counts.csv"
    bad.write_text(
        "site,occasion,search_time,count\n1,1,1.0,2\n2,1,1.0,-1\n"
    )
    assert main(["fit", "--counts", str(bad), "--model", "Count"]) == 2
    assert "invalid data" in capsys.readouterr().err


def test_single_visit_binary_fit_flags_and_exits_3(tmp_path, capsys):
    cfg = sim_config(
        tmp_path, model="Binary", sites=80, occasions=1, **{"lambda": 2.0, "rate": 1.0}
    )
    data = tmp_path / "data"
    assert main(["simulate", "--config", cfg, "--out", str(data)]) == 0
    fit_out = tmp_path / "fit.json"
    code = main([
        "fit", "--data", str(data), "--model", "Binary",
        "--multistart", "2", "--out", str(fit_out),
    ])
    assert code == 3
    payload = json.loads(fit_out.read_text())
    assert math.isinf(payload["hessian_condition"])
    assert any("condition" in m for m in payload["messages"])


def test_validate_nmax_below_support_exits_4(tmp_path, capsys):
    cfg = sim_config(tmp_path, model="Count", sites=30, occasions=2, **{"lambda": 3.0})
    data = tmp_path / "data"
    assert main(["simulate", "--config", cfg, "--out", str(data)]) == 0
    params = write_json(tmp_path / "p.json", {"lambda": 3.0, "rate": 0.8})
    code = main([
        "validate", "--data", str(data), "--model", "Count",
        "--params", params, "--nmax", "1",
    ])
    assert code == 4
    assert "oracle failed" in capsys.readouterr().err


def test_validate_impossible_tolerance_exits_4(tmp_path, capsys):
    cfg = sim_config(tmp_path)
    data = tmp_path / "data"
    assert main(["simulate", "--config", cfg, "--out", str(data)]) == 0
    params = write_json(tmp_path / "p.json", {"lambda": 2.0, "rate": 0.8})
    capsys.readouterr()
    code = main([
        "validate", "--data", str(data), "--model", "CountT",
        "--params", params, "--tol", "0",
    ])
    report = json.loads(capsys.readouterr().out)
    if report["max_abs_diff"] == 0.0:
        assert code == 0
    else:
        assert code == 4
        assert report["within_tolerance"] is False


def test_params_exclusivity_error(tmp_path, capsys):
    cfg = sim_config(tmp_path)
    data = tmp_path / "data"
    assert main(["simulate", "--config", cfg, "--out", str(data)]) == 0
    params = write_json(
        tmp_path / "p.json", {"lambda": 2.0, "log_lambda": 0.7, "rate": 0.8}
    )
    code = main([
        "loglik", "--data", str(data), "--model", "CountT", "--params", params
    ])
    assert code == 2
    assert "exactly one of" in capsys.readouterr().err


def test_loglik_poisson_times_note_in_validate(tmp_path, capsys):
    cfg = sim_config(tmp_path, model="PCountT", sites=25)
    data = tmp_path / "data"
    assert main(["simulate", "--config", cfg, "--out", str(data)]) == 0
    params = write_json(tmp_path / "p.json", {"lambda": 2.0, "rate": 0.8})
    capsys.readouterr()
    assert main([
        "validate", "--data", str(data), "--model", "PCountT", "--params", params
    ]) == 0
    report = json.loads(capsys.readouterr().out)
    assert any("uninformative" in note for note in report["notes"])
