import numpy as np
import pytest

from quadlearn.dynamics import Disturbance, Plant
from quadlearn.errors import CorruptFile, EmptyLog
from quadlearn.fuzzy import FuzzyParams, fuzzy_mapping
from quadlearn.harness import euclidean_error_series
from quadlearn.loops import (
    TIMING_COLUMNS,
    Dataset,
    NetworkController,
    OnlineConfig,
    OnlineLearner,
    PidController,
    ReplayBuffer,
    collect_offline,
    fly,
    online_step,
    pretrain,
    run_online,
    split_indices,
)
from quadlearn.network import Architecture, ScalingParams, new_model
from quadlearn.pid import PidGains
from quadlearn.trainer import TrainerConfig
from quadlearn.trajectories import ReferencePoint, TrajectorySpec

SHORT = TrajectorySpec("circle", "xy", 1.0, 1.0, duration=3.0)
NOISY = Disturbance(pos_noise_std=0.002, vel_noise_std=0.005)
BIG_BUDGET = TrainerConfig(online_budget_ms=1e4)


@pytest.fixture(scope="module")
def model():
    data = collect_offline(Plant(), PidGains(), [SHORT], 600, seed=2)
    m, _ = pretrain(data, Architecture(), TrainerConfig(max_iter=40, n_candidates=5))
    return m


def same_flight(a, b):
    return all(np.array_equal(a[c], b[c]) for c in a.columns if c not in TIMING_COLUMNS)


def test_collect_row_count_and_determinism(tmp_path):
    d1 = collect_offline(Plant(), PidGains(), [SHORT], 100, seed=5)
    assert d1.X.shape == (3, 100, 6) and d1.y.shape == (3, 100)
    assert np.isfinite(d1.X).all() and np.isfinite(d1.y).all()
    d2 = collect_offline(Plant(), PidGains(), [SHORT], 100, seed=5)
    d1.write_csv(tmp_path / "a.csv")
    d2.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_collect_cycles_trajectories():
    d = collect_offline(Plant(), PidGains(), [SHORT], 450, seed=0)
    assert d.provenance["flights"] == 2 and len(d) == 450


def test_hover_segment_gives_zero_pid_output():
    seen = []
    fly(Plant(), PidController(PidGains(), 0.01), SHORT, recorder=lambda rec, c, u: seen.append((rec, np.array(u))))
    settling = np.array([u for rec, u in seen if not rec])
    assert len(settling) == 300
    assert np.abs(settling).max() < 1e-9


def test_dataset_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    d = Dataset(rng.normal(size=(3, 7, 6)), rng.normal(size=(3, 7)))
    d.write_csv(tmp_path / "d.csv")
    back = Dataset.read_csv(tmp_path / "d.csv")
    assert np.array_equal(back.X, d.X) and np.array_equal(back.y, d.y)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(CorruptFile):
        Dataset.read_csv(tmp_path / "bad.csv")
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 5, 6)), np.zeros((2, 5)))


def test_split_partitions_rows():
    tr, ho = split_indices(100, 0.2, seed=3)
    assert len(ho) == 20 and sorted(np.concatenate([tr, ho]).tolist()) == list(range(100))


def test_linear_target_is_learned():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(3, 1500, 6))
    y = 2 * X[:, :, 0] + X[:, :, 3]
    _, report = pretrain(Dataset(X, y), Architecture(), TrainerConfig(max_iter=300, n_candidates=10))
    assert max(report.holdout_nse) < 1e-3
    assert not report.fallback


def test_constant_target_uses_fallback():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(3, 200, 6))
    m, report = pretrain(Dataset(X, np.full((3, 200), 0.3)), Architecture(), TrainerConfig(max_iter=200, n_candidates=3))
    assert report.fallback
    np.testing.assert_allclose(m.nets[0].predict(X[0]), 0.3, atol=1e-5)


def test_replay_buffer_fifo():
    b = ReplayBuffer(3)
    for k in range(5):
        b.append(np.full(6, k), k)
    X, y = b.arrays()
    assert len(b) == 3 and y.tolist() == [2, 3, 4] and X[0, 0] == 2
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_online_config_validation():
    for bad in (dict(buffer_capacity=0), dict(cadence=0), dict(divergence_threshold=0.0)):
        with pytest.raises(ValueError):
            OnlineConfig(**bad)


def test_zero_error_steps_leave_weights_alone(model):
    learner = OnlineLearner(model, FuzzyParams(), OnlineConfig(), BIG_BUDGET)
    for _ in range(20):
        d = learner.step(np.zeros(3), np.zeros(3))
        assert not d.corrections.any()
        for buf, u in zip(learner.buffers, d.outputs):
            assert buf.arrays()[1][-1] == u
    for a, b in zip(learner.model.nets, model.nets):
        assert np.array_equal(a.params, b.params)


def test_buffer_causality_and_targets(model):
    fz = FuzzyParams()
    learner = OnlineLearner(model, fz, OnlineConfig(buffer_capacity=5), BIG_BUDGET)
    rng = np.random.default_rng(3)
    for _ in range(12):
        e, de = rng.normal(scale=0.1, size=3), rng.normal(scale=0.1, size=3)
        before = [n.params.copy() for n in learner.model.nets]
        d = learner.step(e, de)
        for a, buf in enumerate(learner.buffers):
            X, y = buf.arrays()
            assert len(buf) <= 5
            # newest sample is this step's window, scored by the pre-update weights
            assert np.array_equal(X[-1], learner.windows[a])
            pre = new_model(model.nets[0].arch, [model.nets[a].scaling], [before[a]]).nets[0](X[-1])
            assert y[-1] == pre + fuzzy_mapping(e, de, fz)[a]
            assert d.outputs[a] == pre


def test_guard_freezes_weights(model):
    learner = OnlineLearner(model, FuzzyParams(), OnlineConfig(divergence_threshold=0.5), BIG_BUDGET)
    rng = np.random.default_rng(4)
    for _ in range(5):
        learner.step(rng.normal(scale=0.1, size=3), rng.normal(scale=0.1, size=3))
    d = learner.step(np.array([0.9, 0, 0]), np.zeros(3))
    assert d.guard and not d.trained
    frozen = [n.params.copy() for n in learner.model.nets]
    for _ in range(10):
        d = learner.step(rng.normal(scale=0.1, size=3), rng.normal(scale=0.1, size=3))
        assert d.guard
    for a, b in zip(learner.model.nets, frozen):
        assert np.array_equal(a.params, b)


def test_single_update_matches_hand_step():
    # linear net, zero weights: the first BFGS trial step lands exactly on the
    # single target, giving the minimum-norm solution t / (|x|^2 + 1) * [x, 1]
    arch = Architecture(6, (), 1)
    m = new_model(arch, [ScalingParams.identity()] * 3, [np.zeros(7)] * 3)
    fz = FuzzyParams(alpha=(0.1, 0.1, 0.1))
    learner = OnlineLearner(m, fz, OnlineConfig(), BIG_BUDGET)
    e, de = np.array([0.4, -0.2, 0.1]), np.array([0.3, 0.0, -0.5])
    learner.step(e, de)
    t = fuzzy_mapping(e, de, fz)
    for a in range(3):
        x = np.array([e[a], 0, 0, de[a], 0, 0, 1.0])
        np.testing.assert_allclose(learner.model.nets[a].params, t[a] / (x @ x) * x, atol=1e-15)


def test_anti_windup_blocks_outward_push(model):
    learner = OnlineLearner(model, FuzzyParams(alpha=(1, 1, 1)), OnlineConfig(), BIG_BUDGET, limits=np.zeros(3))
    d = learner.step(np.full(3, 0.5), np.full(3, 0.5))
    assert np.all(d.corrections * d.outputs <= 0)


def test_apply_correction_switch(model):
    fz = FuzzyParams(alpha=(0.1, 0.1, 0.1))
    e, de = np.full(3, 0.2), np.zeros(3)
    plain = OnlineLearner(model, fz, OnlineConfig(), BIG_BUDGET)
    u, du, _ = plain.update(e, de)
    assert np.array_equal(u, plain.last.outputs)
    both = OnlineLearner(model, fz, OnlineConfig(apply_correction=True), BIG_BUDGET)
    u2, du2, _ = both.update(e, de)
    assert np.array_equal(u2, both.last.outputs + du2)


def test_online_step_assembles_command(model):
    plant = Plant()
    learner = OnlineLearner(model, FuzzyParams(), OnlineConfig(), BIG_BUDGET)
    ref = ReferencePoint(np.array([0.1, 0.0, 1.0]), np.zeros(3))
    y = np.zeros(12)
    y[2] = 1.0
    cmd, diag = online_step(learner, ref, y, plant)
    assert cmd.pitch == pytest.approx(np.clip(diag.outputs[0], -0.5, 0.5))
    assert cmd.yaw == 0.0


def test_alpha_zero_is_a_fixed_point(model):
    zero = FuzzyParams(alpha=(0.0, 0.0, 0.0))
    online_log, final = run_online(Plant(), model, SHORT, zero, OnlineConfig(), TrainerConfig(), NOISY, seed=7)
    frozen_log = fly(Plant(), NetworkController(model), SHORT, NOISY, seed=7)
    assert same_flight(online_log, frozen_log)
    for a, b in zip(final.nets, model.nets):
        assert np.array_equal(a.params, b.params)


def test_online_run_returns_distinct_model(model):
    flown, final = run_online(Plant(), model, SHORT, FuzzyParams(), OnlineConfig(), TrainerConfig(), NOISY, seed=1)
    assert flown.aborted is None and final is not model
    assert final.metadata["phase"] == "online" and model.metadata["phase"] == "pretrained"
    assert any(not np.array_equal(a.params, b.params) for a, b in zip(final.nets, model.nets))
    assert np.all(np.diff(flown["t"]) == pytest.approx(0.01))


def test_zero_duration_trajectory(model):
    spec = TrajectorySpec("circle", "xy", 1.0, 1.0, duration=0.0)
    flown, final = run_online(Plant(), model, spec, FuzzyParams(), OnlineConfig(), TrainerConfig())
    assert len(flown) == 0 and flown.aborted is None
    with pytest.raises(EmptyLog):
        euclidean_error_series(flown)
    for a, b in zip(final.nets, model.nets):
        assert np.array_equal(a.params, b.params)
