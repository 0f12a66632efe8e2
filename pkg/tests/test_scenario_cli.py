"""Scenario schema round-trips and the command-line pipeline."""

import json
import os

import numpy as np
import pytest

from lqmfg import UsageError
from lqmfg.cli import main, run
from lqmfg.scenario import (ScenarioConfig, build_candidates, parse_scenario,
                            preset, serialize_scenario)


def write_config(tmp_path, cfg_dict, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg_dict))
    return str(path)


def closed_form_dict(**model_over):
    d = preset("netsec-closed-form").to_dict()
    d["model"].update(model_over)
    return d


# --------------------------------------------------------------- scenarios

def test_presets_round_trip_identically():
    for name in ("netsec-closed-form", "netsec-numeric"):
        cfg = preset(name)
        again = parse_scenario(serialize_scenario(cfg))
        assert again == cfg
        assert parse_scenario(serialize_scenario(again)) == again


def test_preset_models_build_and_validate():
    import lqmfg
    for name in ("netsec-closed-form", "netsec-numeric"):
        cfg = preset(name)
        model = cfg.model.build(cfg.solver.steps)
        assert model.n == 1 and model.k == 1
        assert lqmfg.validate(model).all_passed
    closed = preset("netsec-closed-form")
    assert closed.model.coefficients["Q"].values == ((3.0,),)
    assert closed.experiment.kind == "solve"
    numeric = preset("netsec-numeric")
    assert numeric.experiment.kind == "simulate"
    assert numeric.experiment.N == 50


def test_unknown_preset_lists_available_names():
    with pytest.raises(UsageError) as err:
        preset("does-not-exist")
    message = str(err.value)
    assert "netsec-closed-form" in message and "netsec-numeric" in message


def test_schedule_coefficient_round_trips():
    d = closed_form_dict(steps=4,
                         A={"schedule": [[[0.1 * j]] for j in range(5)]})
    cfg = parse_scenario(json.dumps(d))
    assert cfg.model.coefficients["A"].kind == "schedule"
    assert parse_scenario(serialize_scenario(cfg)) == cfg
    model = cfg.model.build()
    assert model.A[3][0, 0] == pytest.approx(0.3)


def test_parse_reports_json_position():
    with pytest.raises(UsageError) as err:
        parse_scenario('{"model": \n  broken}')
    assert "line 2" in str(err.value)


def test_unknown_keys_are_named():
    d = closed_form_dict()
    d["model"]["turbo"] = 1
    with pytest.raises(UsageError) as err:
        parse_scenario(json.dumps(d))
    assert "turbo" in str(err.value)
    d2 = preset("netsec-closed-form").to_dict()
    d2["extra_block"] = {}
    with pytest.raises(UsageError) as err2:
        parse_scenario(json.dumps(d2))
    assert "extra_block" in str(err2.value)


def test_schedule_must_cover_every_node():
    d = closed_form_dict(steps=4, A={"schedule": [[[1.0]]] * 3})
    with pytest.raises(UsageError):
        parse_scenario(json.dumps(d))


def test_steps_override_conflicts_with_explicit_schedule():
    d = closed_form_dict(steps=4,
                         A={"schedule": [[[1.0]]] * 5})
    cfg = parse_scenario(json.dumps(d))
    cfg.model.build()  # fine on its own grid
    with pytest.raises(UsageError):
        cfg.model.build(steps_override=8)


def test_wrong_format_version_rejected():
    d = closed_form_dict()
    d["format_version"] = 99
    with pytest.raises(UsageError):
        parse_scenario(json.dumps(d))


def test_candidate_family_from_config():
    block_cfg = {"gain_scales": [0.5, 1.0, 2.0], "include_zero": True,
                 "offsets": [0.25]}
    d = closed_form_dict()
    d["experiment"]["candidates"] = block_cfg
    cfg = parse_scenario(json.dumps(d))
    family = build_candidates(cfg.experiment.candidates)
    names = [c.name for c in family]
    # theta = 1 duplicates the equilibrium policy and is not repeated
    assert names == ["self", "gain_scale_0.5", "gain_scale_2",
                     "zero_control", "offset_+0.25"]
    assert build_candidates(None) == tuple(
        __import__("lqmfg").default_candidate_family())


# --------------------------------------------------------------------- CLI

def test_cli_solve_writes_expected_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["--preset", "netsec-closed-form", "--out", str(out),
                 "--steps", "200"])
    assert code == 0
    printed = capsys.readouterr().out.splitlines()
    names = sorted(os.path.basename(p) for p in printed)
    assert names == ["netsec-closed-form_manifest.json",
                     "netsec-closed-form_riccati.csv",
                     "netsec-closed-form_solve_report.json"]
    data = np.genfromtxt(out / "netsec-closed-form_riccati.csv",
                         delimiter=",", names=True)
    assert data.shape == (201,)
    t = data["t"]
    exact = (3.0 - np.exp(4.0 * (t - 1.0))) / (1.0 + np.exp(4.0 * (t - 1.0)))
    assert np.max(np.abs(data["P_1_1"] - exact)) < 1e-6
    assert np.max(np.abs(data["Phi_1"])) == 0.0
    manifest = json.loads((out / "netsec-closed-form_manifest.json").read_text())
    assert manifest["config"]["solver"]["steps"] == 200
    assert manifest["kind"] == "solve"


def test_cli_quiet_suppresses_listing(tmp_path, capsys):
    code = main(["--preset", "netsec-closed-form", "--out", str(tmp_path),
                 "--steps", "50", "--quiet"])
    assert code == 0
    assert capsys.readouterr().out == ""


def test_cli_manifest_config_reproduces_the_run(tmp_path):
    out = tmp_path / "first"
    main(["--preset", "netsec-closed-form", "--out", str(out),
          "--steps", "80", "--quiet"])
    manifest = json.loads((out / "netsec-closed-form_manifest.json").read_text())
    echo = ScenarioConfig.from_dict(manifest["config"])
    run(echo, quiet=True)  # identical artifacts land in the same directory
    again = json.loads((out / "netsec-closed-form_manifest.json").read_text())
    assert again["config"] == manifest["config"]


def test_cli_usage_errors_exit_2_with_record(tmp_path, capsys):
    code = main(["--preset", "nope", "--out", str(tmp_path)])
    assert code == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["exit_code"] == 2
    assert record["error"] == "UsageError"
    assert "netsec-numeric" in record["message"]


def test_cli_flag_errors_exit_2(capsys):
    assert main([]) == 2                       # a scenario source is required
    assert main(["--config", "a", "--preset", "b"]) == 2  # mutually exclusive
    capsys.readouterr()


def test_cli_missing_config_file_exits_2(tmp_path, capsys):
    code = main(["--config", str(tmp_path / "absent.json")])
    assert code == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "UsageError"


def test_cli_validation_failure_exits_3_and_writes_nothing(tmp_path, capsys):
    d = closed_form_dict(Q=-1.0)
    d["output"] = {"directory": str(tmp_path / "out"), "prefix": "bad"}
    code = main(["--config", write_config(tmp_path, d), "--quiet"])
    assert code == 3
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "ValidationError"
    assert "Q" in record["message"]
    out = tmp_path / "out"
    assert not out.exists() or list(out.iterdir()) == []


def test_cli_numerical_failure_exits_4_and_writes_nothing(tmp_path, capsys):
    d = closed_form_dict(A=100.0, steps=4)
    d["solver"]["p_method"] = "direct"
    d["solver"]["gamma_method"] = "direct"
    d["output"] = {"directory": str(tmp_path / "out"), "prefix": "boom"}
    code = main(["--config", write_config(tmp_path, d), "--quiet"])
    assert code == 4
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "DivergenceError"
    out = tmp_path / "out"
    assert not out.exists() or list(out.iterdir()) == []


def test_cli_short_rate_ladder_exits_2(tmp_path, capsys):
    d = closed_form_dict(steps=30)
    d["experiment"] = {"kind": "rate_state", "seed": 3, "N": None,
                       "Ns": [4, 8, 16], "S": 4, "candidates": None}
    d["output"] = {"directory": str(tmp_path / "out"), "prefix": "r"}
    code = main(["--config", write_config(tmp_path, d), "--quiet"])
    assert code == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["exit_code"] == 2


def test_cli_rate_kind_writes_fit_and_table(tmp_path):
    d = closed_form_dict(steps=30)
    d["experiment"] = {"kind": "rate_cost", "seed": 3, "N": None,
                       "Ns": [2, 4, 8, 16], "S": 4, "candidates": None}
    d["output"] = {"directory": str(tmp_path / "out"), "prefix": "r"}
    assert main(["--config", write_config(tmp_path, d), "--quiet"]) == 0
    rep = json.loads((tmp_path / "out" / "r_rate_cost.json").read_text())
    assert rep["Ns"] == [2, 4, 8, 16]
    assert len(rep["values"]) == 4
    table = np.genfromtxt(tmp_path / "out" / "r_rate_cost.csv",
                          delimiter=",", names=True)
    assert list(table["N"]) == [2.0, 4.0, 8.0, 16.0]
    np.testing.assert_allclose(table["cost_gap"], rep["values"], rtol=1e-15)


def test_cli_deviation_kind(tmp_path):
    d = closed_form_dict(steps=30)
    d["experiment"] = {"kind": "deviation", "seed": 5, "N": 4, "Ns": None,
                       "S": 4, "candidates": {"gain_scales": [0.0, 2.0],
                                              "include_zero": False,
                                              "offsets": []}}
    d["output"] = {"directory": str(tmp_path / "out"), "prefix": "d"}
    assert main(["--config", write_config(tmp_path, d), "--quiet"]) == 0
    rep = json.loads((tmp_path / "out" / "d_deviation.json").read_text())
    assert [c["name"] for c in rep["candidates"]] == \
        ["self", "gain_scale_0", "gain_scale_2"]
    assert rep["candidates"][0]["gain"] == 0.0
    assert rep["max_gain"] <= 0.0 + 1e-15 or rep["max_gain"] == 0.0


def test_cli_pi_precondition_violation_is_recorded_not_fatal(tmp_path):
    d = closed_form_dict(beta=0.4)
    d["model"]["steps"] = 40
    d["solver"]["gamma_method"] = "both"
    d["output"] = {"directory": str(tmp_path / "out"), "prefix": "pi"}
    assert main(["--config", write_config(tmp_path, d), "--quiet"]) == 0
    report = json.loads((tmp_path / "out" / "pi_solve_report.json").read_text())
    cross = report["cross_check"]
    assert cross["pi_error"] is not None and "beta" in cross["pi_error"]
    assert cross["pi"] is None
    assert cross["gamma_agreement"] is None
    assert (tmp_path / "out" / "pi_riccati.csv").exists()


def test_cli_seed_and_steps_overrides_change_artifacts(tmp_path):
    d = preset("netsec-numeric").to_dict()
    d["model"]["steps"] = 40
    d["experiment"]["N"] = 2
    d["solver"]["p_method"] = "direct"
    d["solver"]["gamma_method"] = "direct"
    d["output"] = {"directory": str(tmp_path / "a"), "prefix": "x"}
    cfg_path = write_config(tmp_path, d)
    assert main(["--config", cfg_path, "--quiet"]) == 0
    base_mf = (tmp_path / "a" / "x_meanfield.csv").read_bytes()
    base_manifest = json.loads((tmp_path / "a" / "x_manifest.json").read_text())
    assert base_manifest["seed"] == 20250801

    assert main(["--config", cfg_path, "--out", str(tmp_path / "b"),
                 "--seed", "99", "--quiet"]) == 0
    other_mf = (tmp_path / "b" / "x_meanfield.csv").read_bytes()
    other_manifest = json.loads((tmp_path / "b" / "x_manifest.json").read_text())
    assert other_manifest["seed"] == 99
    assert other_mf != base_mf  # different common-noise draws

    assert main(["--config", cfg_path, "--out", str(tmp_path / "c"),
                 "--steps", "20", "--quiet"]) == 0
    rows = (tmp_path / "c" / "x_riccati.csv").read_text().strip().splitlines()
    assert len(rows) == 22  # header + 21 nodes


def test_cli_reruns_are_byte_identical(tmp_path):
    d = preset("netsec-numeric").to_dict()
    d["model"]["steps"] = 50
    d["experiment"]["N"] = 3
    d["output"] = {"directory": str(tmp_path / "out"), "prefix": "rep"}
    cfg_path = write_config(tmp_path, d)
    assert main(["--config", cfg_path, "--quiet"]) == 0
    out = tmp_path / "out"
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["--config", cfg_path, "--quiet"]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert sorted(first) == sorted(second)
    for name in first:
        if name.endswith("manifest.json"):
            a = json.loads(first[name])
            b = json.loads(second[name])
            a.pop("wall_time_s"), b.pop("wall_time_s")
            assert a == b
        else:
            assert first[name] == second[name], name
    assert not [p for p in out.iterdir() if p.name.endswith(".tmp")]
