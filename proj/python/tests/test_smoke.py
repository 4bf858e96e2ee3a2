import math
import pathlib

import pytest

import dfcvr

ROOT = pathlib.Path(__file__).resolve().parents[2]
FEEDER = {"network": {"dir": str(ROOT / "data" / "ieee33")}, "pipeline": {"stage1_node_limit": 5}}


def test_zip_identity():
    coeffs = [0.96, -1.17, 1.21, 6.28, -10.16, 4.88]
    p, q = dfcvr.zip_eval(1.0, 1.0, 1.0, coeffs)
    assert math.isclose(p, 1.0, abs_tol=1e-12)
    assert math.isclose(q, 1.0, abs_tol=1e-12)
    lp, lq = dfcvr.zip_eval(1.0, 1.0, 1.0, coeffs, linearized=True)
    assert (lp, lq) == (p, q)


def test_config_defaults_and_errors():
    cfg = dfcvr.resolved_config(None)
    assert cfg["trainer"]["k_max"] == 50
    assert cfg["sweep"]["svg_mvar"] == [0.2, 0.4, 0.6]
    with pytest.raises(dfcvr.ConfigError):
        dfcvr.resolved_config({"trainer": {"not_a_key": 1}})
    bundled = dfcvr.resolved_config(ROOT / "configs" / "ieee33.json")
    assert pathlib.Path(bundled["network"]["dir"]).is_dir()


def test_synth_train_and_run_day(tmp_path):
    csv = tmp_path / "data.csv"
    cfg = dict(FEEDER, data={"days": 3, "noise": 0.05})
    dfcvr.synth(csv, cfg)
    summary = dfcvr.dataset_summary(csv)
    assert summary["records"] == 72
    assert len(summary["sites"]) == 5
    assert summary["test_days"] == [2]

    model = dfcvr.train_mse(csv, cfg)
    assert model == dfcvr.train_mse(csv, cfg)

    day = dfcvr.run_day(csv, "oracle", 2, config=cfg)
    assert day["schema"] == "dfcvr.day/1"
    assert all(q == 0.0 for row in day["pv_q_pu"] for q in row)
    assert len(day["v_pu"]) == 33

    base = dfcvr.run_day(csv, "base", 2, model=model, config=cfg)
    assert base["metrics"]["substation_energy_pu"] > 0.0
    with pytest.raises(dfcvr.ConfigError):
        dfcvr.run_day(csv, "base", 2, config=cfg)


def test_data_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("Year,Month\n2020,1\n")
    with pytest.raises(dfcvr.DataError):
        dfcvr.dataset_summary(bad)
    with pytest.raises(dfcvr.DataError):
        dfcvr.validate_report({"schema": "dfcvr.report/1"})
