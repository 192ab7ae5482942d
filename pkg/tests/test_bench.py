import json

import numpy as np
import pytest

from l2calib import bench
from l2calib.bench import StudyConfig, _covers, run_coverage_study, run_mse_study, run_rmspe_table
from l2calib.errors import OptError, StudyError


def test_config_validation():
    with pytest.raises(ValueError):
        StudyConfig(replicates=0)
    with pytest.raises(ValueError):
        StudyConfig(study="TOY_9D")
    with pytest.raises(ValueError):
        StudyConfig(direct=False)
    assert StudyConfig(with_emulator=True).methods == bench.DIRECT + bench.EMULATED


def test_single_replicate():
    res = run_mse_study(StudyConfig(replicates=1, seed=3))
    assert res.n_ok == 1
    for m in res.methods:
        assert res.squared_errors(m).shape == (1, 1)
        assert np.all(res.mse(m) >= 0)
    assert res.wall_clock > 0


def test_reproducible_per_seed():
    cfg = StudyConfig(study="TOY_3D", replicates=3, seed=5, starts=3)
    a, b = run_mse_study(cfg), run_mse_study(cfg)
    for m in a.methods:
        assert np.array_equal(a.estimates[m], b.estimates[m])
    c = run_mse_study(StudyConfig(study="TOY_3D", replicates=3, seed=6, starts=3))
    assert not np.array_equal(a.estimates["L2"], c.estimates["L2"])


def test_zero_width_intervals_cover_nothing():
    theta = np.array([0.2, -0.1])
    assert _covers(theta, np.zeros((2, 2)), np.array([0.25, 0.0]), 0.95).sum() == 0
    assert _covers(theta, np.eye(2), np.array([0.25, 0.0]), 0.95).tolist() == [1, 1]


def test_coverage_bounded_by_replicates():
    cov = run_coverage_study(StudyConfig(replicates=4, seed=1, starts=3))
    assert set(cov) == {"L2"}
    assert 0 <= cov["L2"][0] <= 4


def test_failed_replicates(monkeypatch):
    real = bench.run_replicate

    def flaky(cfg, index, *args):
        if index in fail:
            raise OptError("forced")
        return real(cfg, index, *args)

    monkeypatch.setattr(bench, "run_replicate", flaky)
    cfg = StudyConfig(replicates=10, seed=2, starts=2)
    fail = {4}
    res = run_mse_study(cfg)
    assert res.n_ok == 9 and res.failures[0]["replicate"] == 4
    fail = {1, 4}
    with pytest.raises(StudyError):
        run_mse_study(cfg)


def test_csv_and_json_outputs(tmp_path):
    res = run_mse_study(StudyConfig(replicates=2, seed=0, starts=2, coverage=True))
    res.write_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "method,coordinate,mse,coverage" and len(lines) == 4
    res.write_json(tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["replicates_ok"] == 2 and set(doc["mse"]) == {"L2", "LS", "MLE"}
    assert doc["config"]["study"] == "TOY_1D"


def test_rmspe_single_setting():
    rows = run_rmspe_table("TOY_1D", [(20, 10)], seed=0, test_points=500, starts=2)
    assert len(rows) == 1
    assert set(rows[0]) == {"m", "a", "rmspe", "fit_seconds", "predict_seconds"}
    assert rows[0]["rmspe"] > 0


def test_worker_count_does_not_change_results():
    cfg = StudyConfig(replicates=3, seed=8, starts=2)
    a = run_mse_study(cfg, workers=1)
    b = run_mse_study(cfg, workers=2)
    for m in a.methods:
        assert np.array_equal(a.estimates[m], b.estimates[m])
