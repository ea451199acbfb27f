import csv
import math

import numpy as np
import pytest

from swarmloc.geometry import SINGULAR_PENALTY
from swarmloc.harness import (
    ErrorStats,
    ExperimentSpec,
    MetricSeries,
    aggregate_series,
    bin_series,
    cost_audit,
    dop_over_distance,
    emit_csv,
    metrics_from_traces,
    position_error_stats,
    read_series_csv,
    read_stats_csv,
    run_experiment,
)
from swarmloc.simengine import ScenarioConfig, Trace


def static_trace(points, steps=5, step_dist=0.0):
    N = len(points)
    tr = Trace.blank({}, steps, N)
    tr.times[:] = np.arange(steps) * 0.05
    tr.alive[:] = True
    for i, (x, y) in enumerate(points):
        tr.truth[:, i, :2] = (x, y)
        tr.est[:, i, :2] = (x, y)
        tr.distance[:, i] = np.arange(steps) * step_dist
    return tr


def test_square_stationary_series_is_flat_at_corner_dop():
    tr = static_trace([(0, 0), (1, 0), (1, 1), (0, 1)])
    s = dop_over_distance(tr)
    # corner of a unit square: LOS rows (1,0), (0,1), (s,s)
    assert len(s) == 1
    assert s.mean[0] == pytest.approx(math.sqrt(1.5), abs=1e-12)
    assert s.std[0] == pytest.approx(0.0, abs=1e-12)


def test_collinear_stationary_series_at_penalty():
    s = dop_over_distance(static_trace([(0, 0), (1, 0), (2, 0), (3, 0)]))
    np.testing.assert_array_equal(s.mean, [SINGULAR_PENALTY])


@pytest.mark.parametrize("steps, step_dist, width", [(41, 0.0125, 0.25), (101, 0.01, 0.25), (11, 0.3, 0.5)])
def test_series_length_matches_binning(steps, step_dist, width):
    tr = static_trace([(0, 0), (1, 0), (1, 1), (0, 1)], steps, step_dist)
    total = 4 * (steps - 1) * step_dist
    s = dop_over_distance(tr, width)
    assert len(s) <= math.ceil(total / width - 1e-12)
    assert np.all(np.diff(s.x) > 0)


def test_bin_series_arithmetic():
    s = bin_series([0.0, 0.1, 0.3, 0.6, 0.74], [1.0, 3.0, 5.0, 7.0, 9.0], 0.25)
    np.testing.assert_allclose(s.x, [0.0, 0.25, 0.5])
    np.testing.assert_allclose(s.mean, [2.0, 5.0, 8.0])
    np.testing.assert_allclose(s.std, [1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        bin_series([], [], 0.25)


def test_constructed_error_stats():
    tr = static_trace([(0, 0), (1, 0), (1, 1)], steps=10)
    tr.est[:, :, 0] += 0.1
    st = position_error_stats(tr)
    np.testing.assert_allclose(st.mean_error, 0.1)
    np.testing.assert_allclose(st.max_error, 0.1)
    assert st.swarm_mean == pytest.approx(0.1) and st.swarm_max == pytest.approx(0.1)


def test_dead_robot_excluded_from_metrics():
    tr = static_trace([(0, 0), (1, 0), (1, 1), (0, 1)], steps=10)
    tr.alive[5:, 3] = False
    tr.est[5:, 3, 0] += 10.0
    st = position_error_stats(tr)
    assert st.max_error.max() == 0.0


def test_max_error_at_least_mean():
    tr = static_trace([(0, 0), (1, 0), (1, 1)], steps=50)
    tr.est[:, :, :2] += np.random.default_rng(0).normal(0, 0.1, (50, 3, 2))
    st = position_error_stats(tr)
    assert np.all(st.max_error >= st.mean_error)


def test_aggregate_is_plain_mean():
    a = MetricSeries([0.0, 0.25, 0.5], [1.0, 2.0, 3.0], [0, 0, 0])
    b = MetricSeries([0.0, 0.25], [3.0, 5.0], [0, 0])
    agg = aggregate_series([a, b])
    np.testing.assert_allclose(agg.x, [0, 0.25, 0.5])
    assert abs(agg.mean[0] - 2.0) < 1e-12 and abs(agg.mean[1] - 3.5) < 1e-12 and agg.mean[2] == 3.0
    np.testing.assert_allclose(agg.std, [1.0, 1.5, 0.0])


def test_csv_schema(tmp_path):
    p = emit_csv(MetricSeries([], [], []), tmp_path / "e.csv")
    assert p.read_text() == "distance_m,mean,std\n"
    s = MetricSeries([0.0, 0.25], [1 / 3, 2e-7], [0.1234567891234, 0.0])
    text = emit_csv(s, tmp_path / "s.csv").read_text()
    assert text.splitlines()[0] == "distance_m,mean,std"
    assert "0.333333333" in text and "\r" not in text
    back = read_series_csv(tmp_path / "s.csv")
    np.testing.assert_allclose(back.mean, s.mean, rtol=1e-8)
    st = ErrorStats([2, 0], np.array([0.5, 0.25]), np.array([1.0, 0.75]))
    rows = list(csv.reader(emit_csv(st, tmp_path / "st.csv").open()))
    assert rows[0] == ["robot_id", "mean_error_m", "max_error_m"]
    back = read_stats_csv(tmp_path / "st.csv")
    assert back.robot_ids == [2, 0]
    np.testing.assert_allclose(back.max_error, [1.0, 0.75], atol=1e-9)


def test_csv_io_error_has_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        emit_csv(MetricSeries([], [], []), tmp_path / "missing" / "x.csv")


def small_spec(tmp_path, **kw):
    base = ScenarioConfig(duration=8.0, record_candidates=True)
    return ExperimentSpec(base, trials=2, out_dir=tmp_path, **kw)


def test_experiment_bookkeeping(tmp_path):
    summary = run_experiment(small_spec(tmp_path))
    assert len(list((tmp_path / "traces").glob("*.jsonl"))) == 4
    for v in ("proposed", "naive"):
        assert (tmp_path / f"{v}_dop_over_distance.csv").exists()
        assert (tmp_path / f"{v}_position_error.csv").exists()
        assert len(summary.results(v)) == 2
    assert summary.manifest["seeds"] == [0, 1]
    assert all(t["status"] == "ok" for t in summary.manifest["trials"])
    for r in summary.results("proposed"):
        audit = cost_audit(r.trace)
        assert audit["candidates"] > 0 and audit["max_abs_error"] <= 1e-12


def test_experiment_rerun_is_byte_identical(tmp_path):
    run_experiment(small_spec(tmp_path / "a"))
    run_experiment(small_spec(tmp_path / "b"))
    for name in ("proposed_dop_over_distance.csv", "naive_position_error.csv", "trials.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_aggregate_matches_trials(tmp_path):
    summary = run_experiment(small_spec(tmp_path))
    per = [r.dop for r in summary.results("naive")]
    agg = summary.dop["naive"]
    for x, m in zip(agg.x, agg.mean):
        vals = [s.mean[np.isclose(s.x, x)][0] for s in per if np.any(np.isclose(s.x, x))]
        assert abs(m - np.mean(vals)) <= 1e-12


def test_failed_trial_recorded(tmp_path, monkeypatch):
    import swarmloc.harness as h

    real = h.run_scenario

    def flaky(cfg):
        if cfg.seed == 1 and cfg.planner_type == "naive":
            raise RuntimeError("boom")
        return real(cfg)

    monkeypatch.setattr(h, "run_scenario", flaky)
    summary = run_experiment(small_spec(tmp_path))
    failed = [t for t in summary.manifest["trials"] if t["status"] == "failed"]
    assert failed == [{"variant": "naive", "seed": 1, "status": "failed", "error": "RuntimeError: boom"}]
    assert (tmp_path / "naive_dop_over_distance.csv").exists()


def test_metrics_recomputed_from_traces(tmp_path):
    run_experiment(small_spec(tmp_path / "exp"))
    metrics_from_traces(tmp_path / "exp" / "traces", tmp_path / "re")
    for name in ("proposed_dop_over_distance.csv", "naive_position_error.csv"):
        assert (tmp_path / "re" / name).read_bytes() == (tmp_path / "exp" / name).read_bytes()


def test_experiment_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(ScenarioConfig(), trials=2, seeds=[1, 1])
    with pytest.raises(ValueError):
        ExperimentSpec(ScenarioConfig(), trials=0)
    with pytest.raises(ValueError):
        ExperimentSpec(ScenarioConfig(), trials=1, variants=["random"])
