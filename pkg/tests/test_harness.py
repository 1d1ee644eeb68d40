import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadlearn.dynamics import Disturbance
from quadlearn.errors import CorruptFile, EmptyLog, EmptySeries, ZeroBaseline
from quadlearn.harness import (
    METRICS_COLUMNS,
    ExperimentSpec,
    MetricsReport,
    add_improvements,
    compare,
    error_variance,
    euclidean_error_series,
    export_csv,
    export_plot_data,
    improvement_ratio,
    mae,
    max_abs_error,
    quartiles,
    read_log_csv,
    repeat_runs,
    repeat_stats,
    run_experiment,
)
from quadlearn.loops import LOG_COLUMNS, TIMING_COLUMNS, FlightLog
from quadlearn.trajectories import TrajectorySpec

SHORT = TrajectorySpec("circle", "xy", 1.0, 1.0, duration=2.0)


def synthetic_log(ref, pos, settling=None):
    n = len(ref)
    cols = {c: np.zeros(n) for c in LOG_COLUMNS + TIMING_COLUMNS}
    cols["t"] = np.arange(n) * 0.01
    if settling is not None:
        cols["settling"] = np.asarray(settling, dtype=float)
    for i, ax in enumerate("xyz"):
        cols[f"ref_{ax}"] = np.asarray(ref, dtype=float)[:, i]
        cols[f"pos_{ax}"] = np.asarray(pos, dtype=float)[:, i]
    return FlightLog(cols)


def test_perfect_tracking_and_345():
    ref = np.tile([1.0, 2.0, 3.0], (50, 1))
    assert not euclidean_error_series(synthetic_log(ref, ref))[1].any()
    _, err = euclidean_error_series(synthetic_log(ref, ref - [0.3, 0.4, 0.0]))
    np.testing.assert_allclose(err, 0.5, atol=1e-15)
    assert mae(err) == pytest.approx(0.5)


def test_settling_rows_excluded():
    ref = np.zeros((10, 3))
    pos = np.zeros((10, 3))
    pos[:4, 0] = 100.0
    t, err = euclidean_error_series(synthetic_log(ref, pos, [1] * 4 + [0] * 6))
    assert len(t) == 6 and not err.any() and t[0] == pytest.approx(0.04)


def test_random_log_matches_per_row_recomputation():
    rng = np.random.default_rng(0)
    ref, pos = rng.normal(size=(200, 3)), rng.normal(size=(200, 3))
    _, err = euclidean_error_series(synthetic_log(ref, pos))
    for i in range(200):
        d = [ref[i][k] - pos[i][k] for k in range(3)]
        assert err[i] == pytest.approx(math.sqrt(sum(v * v for v in d)), abs=1e-15)


def test_empty_inputs():
    with pytest.raises(EmptyLog):
        euclidean_error_series(FlightLog.empty())
    with pytest.raises(EmptySeries):
        mae([])


def test_mae_examples_and_bounds():
    assert mae([0.0, 1.0] * 50) == 0.5
    assert mae((np.arange(3), np.array([0.5, 0.5, 0.5]))) == 0.5
    assert max_abs_error([0.1, -0.7, 0.2]) == 0.7
    assert error_variance([1.0, 1.0]) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=50))
def test_mae_never_exceeds_max(values):
    assert mae(values) <= max_abs_error(values) + 1e-12


def test_improvement_ratio():
    assert improvement_ratio(0.097, 0.241) == pytest.approx(0.598, abs=5e-4)
    assert improvement_ratio(0.250, 0.833) == pytest.approx(0.700, abs=5e-4)
    assert improvement_ratio(0.3, 0.3) == 0.0
    with pytest.raises(ZeroBaseline):
        improvement_ratio(0.1, 0.0)


def test_quartiles_match_sorting_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        v = sorted(rng.uniform(0, 1, 5).tolist())
        # with five samples the quartiles fall exactly on order statistics
        assert quartiles(v) == pytest.approx(tuple(v))
    assert quartiles([0.3]) == (0.3,) * 5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=30))
def test_quartiles_ordered(values):
    q = quartiles(values)
    assert all(a <= b for a, b in zip(q, q[1:]))


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("lqr", SHORT)
    with pytest.raises(ValueError):
        ExperimentSpec("dnn0", SHORT)


def test_repetitions_without_noise_are_identical():
    runs = repeat_runs(ExperimentSpec("pid", SHORT), repetitions=3, base_seed=4)
    assert [r.seed for r in runs] == [4, 5, 6]
    report = MetricsReport.from_runs(runs)
    assert report.maes[0] == report.maes[1] == report.maes[2]
    assert report.quartiles[0] == report.quartiles[4]


def test_noisy_repetitions_differ_and_single_run_quartiles():
    noisy = ExperimentSpec("pid", SHORT, disturbance=Disturbance(pos_noise_std=0.01, vel_noise_std=0.02))
    report = repeat_stats(noisy, repetitions=5)
    assert len(set(report.maes)) > 1
    assert report.quartiles == pytest.approx(tuple(sorted(report.maes)))
    one = repeat_stats(noisy, repetitions=1)
    assert len(set(one.quartiles)) == 1
    with pytest.raises(ValueError):
        repeat_runs(noisy, repetitions=0)


def test_threaded_runs_match_serial():
    noisy = ExperimentSpec("pid", SHORT, disturbance=Disturbance(pos_noise_std=0.01))
    a = repeat_runs(noisy, 3, jobs=1)
    b = repeat_runs(noisy, 3, jobs=3)
    for x, y in zip(a, b):
        assert np.array_equal(x.log.pos, y.log.pos)


def test_log_csv_round_trip(tmp_path):
    flown = run_experiment(ExperimentSpec("pid", SHORT), seed=0).log
    export_csv(flown, tmp_path / "log.csv")
    back = read_log_csv(tmp_path / "log.csv")
    for c in LOG_COLUMNS + TIMING_COLUMNS:
        assert np.array_equal(back[c], flown[c])
    export_csv(flown, tmp_path / "again.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == (tmp_path / "again.csv").read_text().splitlines()[0]


def test_empty_log_writes_header_only(tmp_path):
    export_csv(FlightLog.empty(), tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines == [",".join(LOG_COLUMNS + TIMING_COLUMNS)]
    assert len(read_log_csv(tmp_path / "e.csv")) == 0
    (tmp_path / "bad.csv").write_text("x,y\n")
    with pytest.raises(CorruptFile):
        read_log_csv(tmp_path / "bad.csv")


def test_metrics_table_and_bundle(tmp_path):
    specs = [ExperimentSpec("pid", SHORT, name="a"), ExperimentSpec("pid", SHORT, name="b")]
    result = compare(specs, repetitions=2)
    assert len(result.runs) == 4 and not result.failed
    export_csv([r.metrics_row() for r in result.runs], tmp_path / "m.csv")
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == METRICS_COLUMNS and len(rows) == 4
    assert float(rows[0]["mae"]) == result.reports[0].maes[0]

    logs = {"one": result.runs[0].log, "two": result.runs[2].log, "three": result.runs[3].log}
    export_plot_data(logs, tmp_path / "p.csv")
    with open(tmp_path / "p.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == len(result.runs[0].log)
    for n in logs:
        assert all(row[f"{n}_err"] != "" for row in table)


def cell(controller, maes, trajectory="fast"):
    return MetricsReport(trajectory, controller, maes, quartiles(maes), 0.0, 0.0, 0.0, 0.0)


def test_improvements_filled_from_medians():
    reports = [cell("pid", [0.9, 1.0, 1.1]), cell("dnn0", [0.8]), cell("dnn", [0.5, 0.4, 0.6]), cell("dnn", [1.0], "other")]
    add_improvements(reports)
    pid, dnn0, dnn, other = reports
    assert dnn.improvements == pytest.approx({"pid": 0.5, "dnn0": 0.375})
    assert dnn0.improvements == pytest.approx({"pid": 0.2})
    assert "pid" not in pid.improvements and not other.improvements
