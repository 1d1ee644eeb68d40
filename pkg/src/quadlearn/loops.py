"""Flight simulation plus the offline (collect + pretrain) and online learning loops."""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from . import network as nn
from .dynamics import (
    NO_DISTURBANCE,
    Disturbance,
    HighLevelCommand,
    Plant,
    clamp_command,
    make_state,
    measure,
)
from .errors import CorruptFile, EmptyBatch, GimbalLock, NonFinite, Unstable
from .fuzzy import FuzzyParams, fuzzy_mapping
from .pid import PidGains, PidState, axes_to_command, pid_step
from .trainer import TrainerConfig, budget_clock, train_quasi_newton
from .trajectories import (
    ReferencePoint,
    TrajectorySpec,
    error_rate,
    new_window,
    push_window,
    reference,
    tracking_error,
)

log = logging.getLogger(__name__)

DATASET_COLUMNS = ("axis", "e_k", "e_k1", "e_k2", "de_k", "de_k1", "de_k2", "target")

LOG_COLUMNS = (
    "t", "settling",
    "ref_x", "ref_y", "ref_z", "pos_x", "pos_y", "pos_z",
    "ref_vx", "ref_vy", "ref_vz", "vel_x", "vel_y", "vel_z",
    "cmd_pitch", "cmd_roll", "cmd_vz",
    "du_x", "du_y", "du_z",
    "e_x", "e_y", "e_z", "de_x", "de_y", "de_z",
    "clamp", "guard",
)  # fmt: skip
# step_us is thread CPU time (preemption by other processes excluded);
# step_wall_us is elapsed wall time over the same span.
TIMING_COLUMNS = ("step_us", "step_wall_us")


# ---------------------------------------------------------------- flight log


@dataclass
class FlightLog:
    """Column store of one flight at the control rate.

    ``aborted`` names the failure that cut the flight short, if any.
    """

    columns: dict[str, np.ndarray]
    aborted: str | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.columns["t"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def block(self, *names: str) -> np.ndarray:
        return np.column_stack([self.columns[n] for n in names]) if len(self) else np.zeros((0, len(names)))

    @property
    def ref_pos(self) -> np.ndarray:
        return self.block("ref_x", "ref_y", "ref_z")

    @property
    def pos(self) -> np.ndarray:
        return self.block("pos_x", "pos_y", "pos_z")

    @property
    def steady(self) -> np.ndarray:
        return self.columns["settling"] == 0

    @classmethod
    def empty(cls) -> "FlightLog":
        return cls({c: np.zeros(0) for c in LOG_COLUMNS + TIMING_COLUMNS})


class _LogBuilder:
    def __init__(self) -> None:
        self.rows: list[list[float]] = []

    def add(self, *values) -> None:
        row: list[float] = []
        for v in values:
            if isinstance(v, (np.ndarray, tuple, list)):
                row.extend(float(x) for x in v)
            else:
                row.append(float(v))
        self.rows.append(row)

    def build(self, aborted: str | None, meta: dict[str, Any]) -> FlightLog:
        names = LOG_COLUMNS + TIMING_COLUMNS
        if not self.rows:
            return FlightLog({c: np.zeros(0) for c in names}, aborted, meta)
        arr = np.array(self.rows)
        return FlightLog({c: arr[:, i].copy() for i, c in enumerate(names)}, aborted, meta)


# ---------------------------------------------------------------- controllers


class Controller(Protocol):
    name: str

    def update(self, e: np.ndarray, de: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
        """Return (axis outputs, corrections, guard flag) for one control step."""


def command_limits(plant: Plant) -> np.ndarray:
    g = plant.inner
    return np.array([g.tilt_limit, g.tilt_limit, g.vz_limit])


def assemble_command(u: np.ndarray, plant: Plant) -> HighLevelCommand:
    return clamp_command(axes_to_command(u), plant.inner.tilt_limit, plant.inner.vz_limit)


class PidController:
    name = "pid"

    def __init__(self, gains: PidGains, dt: float):
        self.gains = gains
        self.dt = dt
        self.state = PidState()

    def update(self, e, de):
        u, self.state = pid_step(self.gains, self.state, e, de, self.dt)
        return u, np.zeros(3), False


class NetworkController:
    """Frozen pre-trained networks (DNN0)."""

    name = "dnn0"

    def __init__(self, model: nn.ControllerModel):
        self.model = model
        self.windows = new_window(3)

    def update(self, e, de):
        self.windows = push_window(self.windows, e, de)
        return self.model.outputs(self.windows), np.zeros(3), False


@dataclass(frozen=True)
class OnlineConfig:
    buffer_capacity: int = 50
    cadence: int = 1
    divergence_threshold: float = 2.0
    apply_correction: bool = False
    anti_windup: bool = True

    def __post_init__(self) -> None:
        if self.buffer_capacity < 1 or self.cadence < 1:
            raise ValueError("buffer capacity and cadence must be >= 1")
        if self.divergence_threshold <= 0:
            raise ValueError("divergence threshold must be positive")


class ReplayBuffer:
    """FIFO ring of the most recent (features, target) pairs for one axis."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._x: deque[np.ndarray] = deque(maxlen=capacity)
        self._y: deque[float] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._x)

    def append(self, features: np.ndarray, target: float) -> None:
        self._x.append(np.array(features, dtype=float))
        self._y.append(float(target))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self._x), np.array(self._y)


@dataclass
class StepDiagnostics:
    outputs: np.ndarray
    corrections: np.ndarray
    trained: bool = False
    statuses: tuple[str, ...] = ()
    guard: bool = False
    train_us: float = 0.0


class OnlineLearner(NetworkController):
    """Networks that keep training in flight on fuzzy-corrected targets.

    Holds a private copy of the model; the caller's model is never mutated.
    """

    name = "dnn"

    def __init__(
        self,
        model: nn.ControllerModel,
        fuzzy: FuzzyParams,
        online: OnlineConfig,
        trainer: TrainerConfig,
        limits: np.ndarray | None = None,
    ):
        super().__init__(model.copy())
        self.limits = np.full(3, np.inf) if limits is None else np.asarray(limits, dtype=float)
        self.fuzzy = fuzzy
        self.online = online
        self.trainer = trainer
        self.buffers = [ReplayBuffer(online.buffer_capacity) for _ in range(3)]
        self.steps = 0
        self.frozen = False
        self.last: StepDiagnostics | None = None

    def update(self, e, de):
        d = self.step(e, de)
        applied = d.outputs + d.corrections if self.online.apply_correction else d.outputs
        return applied, d.corrections, d.guard

    def step(self, e: np.ndarray, de: np.ndarray) -> StepDiagnostics:
        start = budget_clock()
        e = np.asarray(e, dtype=float)
        de = np.asarray(de, dtype=float)
        self.windows = push_window(self.windows, e, de)
        u = self.model.outputs(self.windows)
        du = fuzzy_mapping(e, de, self.fuzzy)
        if self.online.anti_windup:
            # an axis already at its command limit is not pushed further out
            du = np.where((np.abs(u) >= self.limits) & (du * u > 0), 0.0, du)
        # raw (unclamped) output so that alpha = 0 leaves the loss exactly zero
        for buf, w, target in zip(self.buffers, self.windows, u + du):
            buf.append(w, target)
        self.steps += 1

        if not self.frozen and np.max(np.abs(e)) > self.online.divergence_threshold:
            self.frozen = True
            log.warning("divergence guard tripped at step %d (|e|=%.3f m); weights frozen", self.steps, np.max(np.abs(e)))

        diag = StepDiagnostics(u, du, guard=self.frozen)
        if not self.frozen and self.steps % self.online.cadence == 0:
            t0 = time.perf_counter()
            statuses = []
            for net, buf in zip(self.model.nets, self.buffers):
                X, y = buf.arrays()
                res = train_quasi_newton(net.params, net.arch, net.scaling, X, y, self.trainer, online=True, start=start)
                if res.status != "non_finite":
                    net.params = res.x
                statuses.append(res.status)
            diag.trained = True
            diag.statuses = tuple(statuses)
            diag.train_us = (time.perf_counter() - t0) * 1e6
        self.last = diag
        return diag


def online_step(
    learner: OnlineLearner, ref: ReferencePoint, y: np.ndarray, plant: Plant
) -> tuple[HighLevelCommand, StepDiagnostics]:
    """One pass of the in-flight loop: errors, forward pass, correction, update."""
    e = tracking_error(ref, y)
    de = error_rate(ref, y)
    u, _, _ = learner.update(e, de)
    return assemble_command(u, plant), learner.last


# ---------------------------------------------------------------- flights


def fly(
    plant: Plant,
    controller,
    trajectory: TrajectorySpec,
    dist: Disturbance = NO_DISTURBANCE,
    seed: int | None = None,
    recorder=None,
) -> FlightLog:
    """Simulate one flight: a hover settling segment, then the trajectory.

    The controller sees noisy measurements at the control rate; metrics use
    the true state. Gimbal lock ends the flight and is reported in
    ``FlightLog.aborted`` with the rows flown so far. A zero-duration
    trajectory is not flown at all (no settling hover either).
    """
    dist.check_mass(plant.params.m)
    meta = {"controller": controller.name, "trajectory": trajectory.kind, "seed": seed}
    if trajectory.duration == 0:
        return _LogBuilder().build(None, meta)
    settle = plant.settle_time
    dt = plant.control_dt
    n_steps = int(round((settle + trajectory.duration) / dt))
    rng = np.random.default_rng(dist.seed if seed is None else seed)
    use_rng = rng if (dist.pos_noise_std > 0 or dist.vel_noise_std > 0) else None

    state = make_state(position=reference(trajectory, 0.0, settle).position)
    out = _LogBuilder()
    aborted = None
    for k in range(n_steps):
        t = k * dt
        ref = reference(trajectory, t, settle)
        ym = measure(state, dist, use_rng)
        e = tracking_error(ref, ym)
        de = error_rate(ref, ym)
        c0, t0 = time.thread_time(), time.perf_counter()
        u, du, guard = controller.update(e, de)
        cmd = assemble_command(u, plant)
        step_wall_us = (time.perf_counter() - t0) * 1e6
        step_us = (time.thread_time() - c0) * 1e6
        if recorder is not None:
            recorder(t >= settle, controller, u)
        try:
            new_state, clamped = plant.advance(state, cmd, dist, t)
        except (GimbalLock, NonFinite) as exc:
            aborted = type(exc).__name__
            log.warning("flight aborted at t=%.2f s: %s", t, exc)
            new_state, clamped = state, True
        out.add(
            t, t < settle, ref.position, state[0:3], ref.velocity, state[6:9],
            cmd[:3], du, e, de, clamped, guard, step_us, step_wall_us,
        )  # fmt: skip
        if aborted:
            break
        state = new_state
    return out.build(aborted, meta)


# ---------------------------------------------------------------- offline phase


@dataclass
class Dataset:
    """Per-axis training samples: X has shape (3, N, 6), y has shape (3, N)."""

    X: np.ndarray
    y: np.ndarray
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 3 or self.X.shape[0] != 3 or self.y.shape != self.X.shape[:2]:
            raise ValueError("dataset must hold equal-size sample sets for three axes")

    def __len__(self) -> int:
        return self.y.shape[1]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DATASET_COLUMNS)
            for a, name in enumerate(nn.AXES):
                for x, t in zip(self.X[a], self.y[a]):
                    w.writerow([name, *map(repr, x.tolist()), repr(float(t))])

    @classmethod
    def read_csv(cls, path: str | Path) -> "Dataset":
        rows: dict[str, list[list[float]]] = {a: [] for a in nn.AXES}
        try:
            with open(path, newline="") as fh:
                r = csv.reader(fh)
                header = next(r)
                if tuple(header) != DATASET_COLUMNS:
                    raise CorruptFile(f"unexpected dataset header {header}")
                for row in r:
                    rows[row[0]].append([float(v) for v in row[1:]])
        except (StopIteration, KeyError, ValueError, IndexError) as exc:
            raise CorruptFile(f"{path}: {exc}") from exc
        arrs = [np.array(rows[a]).reshape(-1, 7) for a in nn.AXES]
        if len({len(a) for a in arrs}) != 1:
            raise CorruptFile("per-axis sample counts differ")
        return cls(np.stack([a[:, :6] for a in arrs]), np.stack([a[:, 6] for a in arrs]), {"source": str(path)})


def collect_offline(
    plant: Plant,
    gains: PidGains,
    trajectories: Sequence[TrajectorySpec],
    n_samples: int,
    seed: int = 0,
    dist: Disturbance = NO_DISTURBANCE,
) -> Dataset:
    """PID flights over the listed trajectories, cycled until ``n_samples``
    post-settling control steps are recorded. Targets are the per-axis PID
    outputs (x -> pitch*, y -> -roll*, z -> vz*)."""
    if n_samples < 1 or not trajectories:
        raise ValueError("need a positive sample count and at least one trajectory")
    feats: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    windows = {"w": new_window(3)}

    def recorder(record: bool, ctrl, u) -> None:
        if record:
            feats.append(windows["w"].copy())
            targets.append(np.array(u, dtype=float))

    flight = 0
    while len(targets) < n_samples:
        spec = trajectories[flight % len(trajectories)]
        ctrl = _WindowedPid(gains, plant.control_dt, windows)
        flight_seed = seed + flight
        flown = fly(plant, ctrl, spec, dist, flight_seed, recorder)
        if flown.aborted:
            raise Unstable(f"PID flight {flight} on {spec.kind}/{spec.plane} aborted: {flown.aborted}")
        flight += 1
        if flight > 10_000:
            raise Unstable("trajectories produce no post-settling samples")
    X = np.stack(feats[:n_samples], axis=1)
    y = np.stack(targets[:n_samples], axis=1)
    prov = {
        "controller": "pid",
        "seed": seed,
        "n_samples": n_samples,
        "flights": flight,
        "trajectories": [vars(s) for s in trajectories],
    }
    return Dataset(X, y, prov)


class _WindowedPid(PidController):
    """PID that also maintains the feature windows the networks will see."""

    def __init__(self, gains, dt, shared: dict):
        super().__init__(gains, dt)
        self.shared = shared
        shared["w"] = new_window(3)

    def update(self, e, de):
        self.shared["w"] = push_window(self.shared["w"], e, de)
        return super().update(e, de)


@dataclass
class TrainingReport:
    axes: list[dict[str, Any]]

    @property
    def holdout_nse(self) -> list[float]:
        return [a["holdout_nse"] for a in self.axes]

    @property
    def fallback(self) -> bool:
        return any(a["fallback"] for a in self.axes)

    @property
    def failed(self) -> bool:
        return any(a["status"] == "non_finite" for a in self.axes)


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_hold = int(round(n * fraction))
    if n - n_hold < 1:
        n_hold = 0
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def pretrain(
    dataset: Dataset,
    arch: nn.Architecture,
    config: TrainerConfig,
) -> tuple[nn.ControllerModel, TrainingReport]:
    """Fit scaling, random-search init and BFGS for each axis network."""
    if len(dataset) == 0:
        raise EmptyBatch("empty dataset")
    train_idx, hold_idx = split_indices(len(dataset), config.holdout_fraction, config.seed)
    nets, reports = [], []
    for a, name in enumerate(nn.AXES):
        X, y = dataset.X[a], dataset.y[a]
        Xt, yt = X[train_idx], y[train_idx]
        scaling = nn.ScalingParams.fit(Xt, yt)
        p0 = nn.init_random_search(arch, scaling, Xt, yt, config.n_candidates, config.seed + a)
        res = train_quasi_newton(p0, arch, scaling, Xt, yt, config)
        net = nn.AxisNetwork(arch, scaling, res.x)
        if len(hold_idx):
            hold = nn.loss_nse(net.predict(X[hold_idx]), y[hold_idx])
            _, hold_fb = nn.nse_denominator(y[hold_idx])
        else:
            hold, hold_fb = math.nan, False
        _, fb = nn.nse_denominator(yt)
        reports.append(
            {
                "axis": name,
                "status": res.status,
                "iterations": res.iterations,
                "train_nse": res.f,
                "holdout_nse": hold,
                "fallback": fb or hold_fb,
                "history": res.history,
            }
        )
        log.info("axis %s: %s after %d iterations, holdout NSE %.4g", name, res.status, res.iterations, hold)
        nets.append(net)
    meta = {"phase": "pretrained", "dataset": dataset.provenance, "trainer": vars(config)}
    return nn.ControllerModel(nets, meta), TrainingReport(reports)


# ---------------------------------------------------------------- online phase


def run_online(
    plant: Plant,
    model: nn.ControllerModel,
    trajectory: TrajectorySpec,
    fuzzy: FuzzyParams,
    online: OnlineConfig,
    trainer: TrainerConfig,
    dist: Disturbance = NO_DISTURBANCE,
    seed: int | None = None,
) -> tuple[FlightLog, nn.ControllerModel]:
    """Fly with in-flight training; returns the log and the post-trained model."""
    learner = OnlineLearner(model, fuzzy, online, trainer, command_limits(plant))
    flown = fly(plant, learner, trajectory, dist, seed)
    final = learner.model
    final.metadata = {**model.metadata, "phase": "online", "online_steps": learner.steps, "guard": learner.frozen}
    flown.meta["guard"] = learner.frozen
    return flown, final
