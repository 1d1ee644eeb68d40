import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadlearn.dynamics import make_state
from quadlearn.errors import OutOfRange
from quadlearn.trajectories import (
    ReferencePoint,
    TrajectorySpec,
    error_rate,
    new_window,
    push_window,
    reference,
    sample,
    tracking_error,
)

CENTER = (0.3, -0.2, 1.0)


def flat(kind, size=1.0, speed=1.0, plane="xy", duration=40.0):
    return TrajectorySpec(kind, plane, size, speed, CENTER, duration, takeoff_altitude=0.0)


def test_spec_validation():
    for bad in (dict(kind="spiral"), dict(plane="xw"), dict(size=0.0), dict(speed=-1.0), dict(duration=-1.0)):
        with pytest.raises(ValueError):
            TrajectorySpec(**bad)


def test_circle_start_and_half_period():
    spec = flat("circle")
    p = sample(spec, 0.0)
    np.testing.assert_allclose(p.position, np.add(CENTER, (1, 0, 0)), atol=1e-15)
    np.testing.assert_allclose(p.velocity, (0, 1, 0), atol=1e-15)
    np.testing.assert_allclose(sample(spec, math.pi).position, np.add(CENTER, (-1, 0, 0)), atol=1e-12)


def test_takeoff_altitude_lifts_path():
    spec = TrajectorySpec("circle", "xy", 1.0, 1.0, (0, 0, 0), 10.0, takeoff_altitude=1.5)
    assert sample(spec, 0.0).position[2] == 1.5


def test_square_lap_time_and_first_corner():
    spec = flat("square", size=2.0)
    assert spec.period == 8.0
    start = sample(spec, 0.0).position
    np.testing.assert_allclose(sample(spec, 8.0).position, start, atol=1e-12)
    corner = sample(spec, 2.0)
    np.testing.assert_allclose(corner.position, np.add(CENTER, (1, -1, 0)), atol=1e-12)
    # right-continuous: the corner already carries the outgoing edge's velocity
    np.testing.assert_allclose(corner.velocity, (0, 1, 0), atol=1e-15)


def test_eight_extent_equals_size():
    spec = flat("eight", size=1.3, duration=100.0)
    t = np.linspace(0, spec.period, 200_001)
    dx = np.array([sample(spec, ti).position[0] - CENTER[0] for ti in t[::10]])
    assert np.max(np.abs(dx)) == pytest.approx(1.3, abs=1e-6)


def test_eight_peak_speed():
    spec = flat("eight", size=1.0, speed=1.0)
    t = np.linspace(0, spec.period, 5001)
    speeds = [np.linalg.norm(sample(spec, ti).velocity) for ti in t]
    assert max(speeds) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("plane,axes", [("xy", (0, 1)), ("xz", (0, 2)), ("yz", (1, 2))])
def test_planes(plane, axes):
    spec = flat("circle", plane=plane)
    p = sample(spec, 1.0).position - CENTER
    other = ({0, 1, 2} - set(axes)).pop()
    assert p[other] == 0.0
    assert p[axes[0]] == pytest.approx(math.cos(1.0)) and p[axes[1]] == pytest.approx(math.sin(1.0))


def test_out_of_range():
    spec = flat("circle", duration=5.0)
    with pytest.raises(OutOfRange):
        sample(spec, -1e-9)
    with pytest.raises(OutOfRange):
        sample(spec, 5.0 + 1e-9)


def test_reference_hovers_during_settling():
    spec = flat("circle")
    r = reference(spec, 1.0, settle=3.0)
    np.testing.assert_array_equal(r.position, sample(spec, 0.0).position)
    np.testing.assert_array_equal(r.velocity, np.zeros(3))
    np.testing.assert_array_equal(reference(spec, 4.0, 3.0).position, sample(spec, 1.0).position)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["circle", "square"]), st.floats(0.2, 3.0), st.floats(0.2, 3.0), st.floats(0.0, 1.0))
def test_speed_invariant(kind, size, speed, frac):
    spec = flat(kind, size, speed, duration=100.0)
    t = frac * spec.period
    if kind == "square":
        n = speed * t / size
        if abs(n - round(n)) < 1e-6:
            return
    assert np.linalg.norm(sample(spec, t).velocity) == pytest.approx(speed, abs=1e-9)


@pytest.mark.parametrize("kind", ["circle", "eight", "square"])
def test_closure(kind):
    spec = flat(kind, size=1.7, speed=0.9, duration=100.0)
    a, b = sample(spec, 0.0), sample(spec, spec.period)
    np.testing.assert_allclose(a.position, b.position, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["circle", "eight", "square"]), st.floats(0.0, 1.0))
def test_velocity_matches_central_difference(kind, frac):
    spec = flat(kind, size=1.0, speed=1.0, duration=100.0)
    h = 1e-6
    t = h + frac * (spec.period - 2 * h)
    if kind == "square":
        n = t / spec.size
        if abs(n - round(n)) < 1e-4:
            return
    fd = (sample(spec, t + h).position - sample(spec, t - h).position) / (2 * h)
    np.testing.assert_allclose(fd, sample(spec, t).velocity, atol=1e-6)


def test_tracking_error_and_rate():
    ref = ReferencePoint(np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]))
    s = make_state()
    np.testing.assert_array_equal(tracking_error(ref, s), [1, 2, 3])
    np.testing.assert_array_equal(error_rate(ref, s), [0.1, 0.2, 0.3])
    same = make_state(position=ref.position, velocity=ref.velocity)
    assert not tracking_error(ref, same).any() and not error_rate(ref, same).any()
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = make_state(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3), rng.normal(size=3))
        np.testing.assert_array_equal(tracking_error(ref, s), ref.position - s[0:3])
        np.testing.assert_array_equal(error_rate(ref, s), ref.velocity - s[6:9])


def test_window_fifo():
    w = new_window(None)
    for e, de in ((1, 0.1), (2, 0.2), (3, 0.3)):
        w = push_window(w, e, de)
    np.testing.assert_array_equal(w, [3, 2, 1, 0.3, 0.2, 0.1])
    np.testing.assert_array_equal(push_window(new_window(None), 5, 0), [5, 0, 0, 0, 0, 0])


def test_window_matches_list_oracle():
    rng = np.random.default_rng(9)
    w = new_window(3)
    es, des = [np.zeros(3)] * 3, [np.zeros(3)] * 3
    for _ in range(1000):
        e, de = rng.normal(size=3), rng.normal(size=3)
        w = push_window(w, e, de)
        es, des = [e] + es[:2], [de] + des[:2]
    expected = np.column_stack(es + des)
    np.testing.assert_array_equal(w, expected)
