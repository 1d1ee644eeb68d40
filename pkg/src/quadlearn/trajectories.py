"""Reference trajectories, tracking errors and the per-axis feature window."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dynamics import POS, VEL
from .errors import OutOfRange

KINDS = ("circle", "eight", "square")
PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


@dataclass(frozen=True)
class TrajectorySpec:
    """A closed reference path drawn in one coordinate plane.

    ``size`` is the radius for circle/eight and the side length for square.
    The path is centred at ``center`` lifted by ``takeoff_altitude``.
    For the eight, ``speed`` is the peak speed (reached at the crossing).
    """

    kind: str = "circle"
    plane: str = "xy"
    size: float = 1.0
    speed: float = 1.0
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    duration: float = 20.0
    takeoff_altitude: float = 1.5

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.plane not in PLANES:
            raise ValueError(f"unknown plane {self.plane!r}")
        if self.size <= 0 or self.speed <= 0:
            raise ValueError("size and speed must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")

    @property
    def origin(self) -> np.ndarray:
        c = np.array(self.center, dtype=float)
        c[2] += self.takeoff_altitude
        return c

    @property
    def omega(self) -> float:
        if self.kind == "circle":
            return self.speed / self.size
        if self.kind == "eight":
            return self.speed / (math.sqrt(2.0) * self.size)
        raise ValueError("square has no angular rate")

    @property
    def period(self) -> float:
        if self.kind == "square":
            return 4.0 * self.size / self.speed
        return 2.0 * math.pi / self.omega


class ReferencePoint(NamedTuple):
    position: np.ndarray
    velocity: np.ndarray


def _planar(spec: TrajectorySpec, t: float) -> tuple[float, float, float, float]:
    s = spec.size
    if spec.kind == "circle":
        w = spec.omega
        c, sn = math.cos(w * t), math.sin(w * t)
        return s * c, s * sn, -s * w * sn, s * w * c
    if spec.kind == "eight":
        # Gerono lemniscate: (s sin wt, s sin wt cos wt)
        w = spec.omega
        sn, c = math.sin(w * t), math.cos(w * t)
        return s * sn, s * sn * c, s * w * c, s * w * (c * c - sn * sn)
    # square: counter-clockwise from the (-, -) corner, right-continuous velocity
    n = math.fmod(spec.speed * t / s, 4.0)
    if abs(n - round(n)) < 1e-9:  # snap onto corners against rounding
        n = float(round(n) % 4)
    edge = min(int(n), 3)
    f = (n - edge) * s
    h = 0.5 * s
    v = spec.speed
    if edge == 0:
        return -h + f, -h, v, 0.0
    if edge == 1:
        return h, -h + f, 0.0, v
    if edge == 2:
        return h - f, h, -v, 0.0
    return -h, h - f, 0.0, -v


def sample(spec: TrajectorySpec, t: float) -> ReferencePoint:
    if t < 0 or t > spec.duration:
        raise OutOfRange(f"t={t} outside [0, {spec.duration}]")
    a, b, va, vb = _planar(spec, t)
    i, j = PLANES[spec.plane]
    pos = spec.origin
    vel = np.zeros(3)
    pos[i] += a
    pos[j] += b
    vel[i] = va
    vel[j] = vb
    return ReferencePoint(pos, vel)


def reference(spec: TrajectorySpec, t: float, settle: float) -> ReferencePoint:
    """Reference for flight time ``t``: hover at the start point, then the path."""
    if t < settle:
        p0 = sample(spec, 0.0).position
        return ReferencePoint(p0, np.zeros(3))
    return sample(spec, min(t - settle, spec.duration))


def tracking_error(ref: ReferencePoint, y: np.ndarray) -> np.ndarray:
    return ref.position - y[POS]


def error_rate(ref: ReferencePoint, y: np.ndarray) -> np.ndarray:
    # measured velocity, no differencing
    return ref.velocity - y[VEL]


def new_window(n_axes: int | None = 3) -> np.ndarray:
    """Zeroed feature window, layout ``[e_k, e_k1, e_k2, de_k, de_k1, de_k2]``."""
    return np.zeros(6) if n_axes is None else np.zeros((n_axes, 6))


def push_window(window: np.ndarray, e, de) -> np.ndarray:
    """Shift every axis window by one slot and put (e, de) in the newest slot."""
    out = np.empty_like(window)
    out[..., 1:3] = window[..., 0:2]
    out[..., 4:6] = window[..., 3:5]
    out[..., 0] = e
    out[..., 3] = de
    return out
