"""Experiment matrices, tracking metrics and CSV exports."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dynamics import NO_DISTURBANCE, Disturbance, Plant
from .errors import CorruptFile, EmptyLog, EmptySeries, ZeroBaseline
from .fuzzy import FuzzyParams
from .loops import (
    LOG_COLUMNS,
    TIMING_COLUMNS,
    FlightLog,
    NetworkController,
    OnlineConfig,
    PidController,
    fly,
    run_online,
)
from .network import ControllerModel
from .pid import PidGains
from .trainer import TrainerConfig
from .trajectories import TrajectorySpec

log = logging.getLogger(__name__)

CONTROLLERS = ("pid", "dnn0", "dnn")
METRICS_COLUMNS = ("trajectory", "controller", "run", "mae", "max_err", "var", "q1", "median", "q3", "mean_step_us")
SUMMARY_COLUMNS = (
    "trajectory", "controller", "runs", "failed",
    "mae_min", "mae_q1", "mae_median", "mae_q3", "mae_max",
    "mean_step_us", "max_step_us", "improvement_vs_pid", "improvement_vs_dnn0",
)  # fmt: skip


# ---------------------------------------------------------------- metrics


def euclidean_error_series(flight: FlightLog) -> tuple[np.ndarray, np.ndarray]:
    """(t, |p* - p|) over the rows after the settling segment."""
    if len(flight) == 0:
        raise EmptyLog("flight log has no rows")
    keep = flight.steady
    err = np.linalg.norm(flight.ref_pos - flight.pos, axis=1)
    return flight["t"][keep], err[keep]


def _values(series) -> np.ndarray:
    if isinstance(series, tuple) and len(series) == 2:
        series = series[1]
    v = np.asarray(series, dtype=float).ravel()
    if v.size == 0:
        raise EmptySeries("error series is empty")
    return v


def mae(series) -> float:
    """Mean of an error series; accepts the (t, err) pair or the errors alone."""
    return float(np.mean(_values(series)))


def max_abs_error(series) -> float:
    return float(np.max(np.abs(_values(series))))


def error_variance(series) -> float:
    return float(np.var(_values(series)))


def improvement_ratio(mae_candidate: float, mae_baseline: float) -> float:
    """Fractional MAE reduction of the candidate relative to the baseline."""
    if not mae_baseline > 0:
        raise ZeroBaseline(f"baseline MAE must be positive, got {mae_baseline}")
    return (mae_baseline - mae_candidate) / mae_baseline


def quartiles(values: Iterable[float]) -> tuple[float, float, float, float, float]:
    """(min, Q1, median, Q3, max) with linear interpolation between order statistics."""
    v = _values(list(values))
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return tuple(float(x) for x in q)  # type: ignore[return-value]


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ExperimentSpec:
    """One controller on one trajectory; ``model`` is required for dnn0/dnn."""

    controller: str
    trajectory: TrajectorySpec
    plant: Plant = field(default_factory=Plant)
    pid: PidGains = field(default_factory=PidGains)
    model: ControllerModel | None = None
    fuzzy: FuzzyParams = field(default_factory=FuzzyParams)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    disturbance: Disturbance = NO_DISTURBANCE
    name: str = ""

    def __post_init__(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; choose from {CONTROLLERS}")
        if self.controller != "pid" and self.model is None:
            raise ValueError(f"controller {self.controller!r} needs a model")

    @property
    def label(self) -> str:
        return self.name or self.trajectory.kind


@dataclass
class RunResult:
    trajectory: str
    controller: str
    run: int
    seed: int
    log: FlightLog
    model: ControllerModel | None = None

    @property
    def failed(self) -> bool:
        return self.log.aborted is not None

    def metrics_row(self) -> dict:
        row: dict = {"trajectory": self.trajectory, "controller": self.controller, "run": self.run}
        steps = self.log["step_us"]
        try:
            _, err = euclidean_error_series(self.log)
            _, q1, med, q3, _ = quartiles(err)
            row.update(mae=mae(err), max_err=max_abs_error(err), var=error_variance(err), q1=q1, median=med, q3=q3)
        except (EmptyLog, EmptySeries):
            row.update({k: math.nan for k in ("mae", "max_err", "var", "q1", "median", "q3")})
        row["mean_step_us"] = float(steps.mean()) if steps.size else math.nan
        return row


def run_experiment(spec: ExperimentSpec, seed: int, run: int = 0) -> RunResult:
    """Fly ``spec`` once; ``seed`` drives the sensor noise only."""
    if spec.controller == "pid":
        ctrl = PidController(spec.pid, spec.plant.control_dt)
        flown, final = fly(spec.plant, ctrl, spec.trajectory, spec.disturbance, seed), None
    elif spec.controller == "dnn0":
        ctrl = NetworkController(spec.model)
        flown, final = fly(spec.plant, ctrl, spec.trajectory, spec.disturbance, seed), None
    else:
        flown, final = run_online(
            spec.plant, spec.model, spec.trajectory, spec.fuzzy, spec.online, spec.trainer, spec.disturbance, seed
        )
    return RunResult(spec.label, spec.controller, run, seed, flown, final)


@dataclass
class MetricsReport:
    """Across-run statistics for one (trajectory, controller) cell."""

    trajectory: str
    controller: str
    maes: list[float]
    quartiles: tuple[float, float, float, float, float]
    max_err: float
    variance: float
    mean_step_us: float
    max_step_us: float
    failed_runs: int = 0
    improvements: dict[str, float] = field(default_factory=dict)

    @property
    def mae(self) -> float:
        """Median MAE across runs."""
        return self.quartiles[2]

    @property
    def partial(self) -> bool:
        return self.failed_runs > 0

    @classmethod
    def from_runs(cls, runs: Sequence[RunResult]) -> "MetricsReport":
        if not runs:
            raise EmptySeries("no runs to aggregate")
        maes, errs, steps = [], [], []
        for r in runs:
            _, err = euclidean_error_series(r.log)
            maes.append(mae(err))
            errs.append(err)
            steps.append(r.log["step_us"])
        allerr = np.concatenate(errs)
        allsteps = np.concatenate(steps)
        return cls(
            runs[0].trajectory,
            runs[0].controller,
            maes,
            quartiles(maes),
            max_abs_error(allerr),
            error_variance(allerr),
            float(allsteps.mean()),
            float(allsteps.max()),
            sum(r.failed for r in runs),
        )

    def summary_row(self) -> dict:
        q = self.quartiles
        return {
            "trajectory": self.trajectory,
            "controller": self.controller,
            "runs": len(self.maes),
            "failed": self.failed_runs,
            "mae_min": q[0],
            "mae_q1": q[1],
            "mae_median": q[2],
            "mae_q3": q[3],
            "mae_max": q[4],
            "mean_step_us": self.mean_step_us,
            "max_step_us": self.max_step_us,
            "improvement_vs_pid": self.improvements.get("pid", math.nan),
            "improvement_vs_dnn0": self.improvements.get("dnn0", math.nan),
        }


def repeat_runs(spec: ExperimentSpec, repetitions: int = 5, base_seed: int = 0, jobs: int = 1) -> list[RunResult]:
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    seeds = [base_seed + i for i in range(repetitions)]
    if jobs <= 1:
        return [run_experiment(spec, s, i) for i, s in enumerate(seeds)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda a: run_experiment(spec, a[1], a[0]), enumerate(seeds)))


def repeat_stats(spec: ExperimentSpec, repetitions: int = 5, base_seed: int = 0, jobs: int = 1) -> MetricsReport:
    """Run ``spec`` with seeds base..base+r-1 and aggregate the per-run MAEs.

    Aborted runs still contribute their partial logs and are counted in
    ``failed_runs``.
    """
    runs = repeat_runs(spec, repetitions, base_seed, jobs)
    report = MetricsReport.from_runs(runs)
    if report.partial:
        log.warning("%s/%s: %d of %d runs aborted", spec.label, spec.controller, report.failed_runs, repetitions)
    return report


def add_improvements(reports: Sequence[MetricsReport], baselines: Sequence[str] = ("pid", "dnn0")) -> None:
    """Fill ``improvements`` of every report from the medians of its trajectory's baselines."""
    by_key = {(r.trajectory, r.controller): r for r in reports}
    for r in reports:
        for b in baselines:
            base = by_key.get((r.trajectory, b))
            if base is not None and b != r.controller:
                r.improvements[b] = improvement_ratio(r.mae, base.mae)


@dataclass
class Comparison:
    reports: list[MetricsReport]
    runs: list[RunResult]

    @property
    def failed(self) -> bool:
        return any(r.partial for r in self.reports)


def compare(
    specs: Sequence[ExperimentSpec], repetitions: int = 5, base_seed: int = 0, jobs: int = 1
) -> Comparison:
    """Run every spec ``repetitions`` times; independent runs go to a thread pool."""
    tasks = [(s, base_seed + i, i) for s in specs for i in range(repetitions)]
    if jobs <= 1:
        results = [run_experiment(*t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda t: run_experiment(*t), tasks))
    reports = []
    for k, s in enumerate(specs):
        reports.append(MetricsReport.from_runs(results[k * repetitions : (k + 1) * repetitions]))
    add_improvements(reports)
    return Comparison(reports, results)


# ---------------------------------------------------------------- export


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def export_csv(obj, path: str | Path) -> Path:
    """Write a FlightLog, a list of metrics rows, or a list of MetricsReport to CSV."""
    path = Path(path)
    if isinstance(obj, FlightLog):
        cols = LOG_COLUMNS + TIMING_COLUMNS
        rows = [[_fmt(obj.columns[c][i]) for c in cols] for i in range(len(obj))]
        _write(path, cols, rows)
    elif obj and isinstance(obj[0], MetricsReport):
        _write(path, SUMMARY_COLUMNS, [[_fmt(r.summary_row()[c]) for c in SUMMARY_COLUMNS] for r in obj])
    else:
        _write(path, METRICS_COLUMNS, [[_fmt(r[c]) for c in METRICS_COLUMNS] for r in obj])
    return path


def _write(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_log_csv(path: str | Path) -> FlightLog:
    cols = LOG_COLUMNS + TIMING_COLUMNS
    try:
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = tuple(next(r))
            if header != cols:
                raise CorruptFile(f"{path}: unexpected flight-log header")
            data = [[float(v) for v in row] for row in r]
    except (StopIteration, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    arr = np.array(data, dtype=float).reshape(-1, len(cols))
    return FlightLog({c: arr[:, i].copy() for i, c in enumerate(cols)})


def export_plot_data(logs: Mapping[str, FlightLog], path: str | Path) -> Path:
    """Wide CSV with reference and actual paths plus the error per controller.

    Rows follow the longest log; a shorter (aborted) log leaves empty cells.
    """
    if not logs:
        raise ValueError("no logs to export")
    names = list(logs)
    longest = max(logs.values(), key=len)
    header = ["t", "settling", "ref_x", "ref_y", "ref_z"]
    for n in names:
        header += [f"{n}_x", f"{n}_y", f"{n}_z", f"{n}_err"]
    ref = longest.ref_pos
    paths = {n: (lg.pos, np.linalg.norm(lg.ref_pos - lg.pos, axis=1)) for n, lg in logs.items()}
    rows = []
    for i in range(len(longest)):
        row = [_fmt(longest["t"][i]), _fmt(longest["settling"][i])]
        row += [_fmt(v) for v in ref[i]]
        for n in names:
            pos, err = paths[n]
            if i < len(pos):
                row += [_fmt(v) for v in pos[i]] + [_fmt(err[i])]
            else:
                row += [""] * 4
        rows.append(row)
    _write(Path(path), header, rows)
    return Path(path)


def with_disturbance(spec: ExperimentSpec, dist: Disturbance) -> ExperimentSpec:
    return replace(spec, disturbance=dist)
