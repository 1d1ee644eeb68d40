"""Parallel-form PID outer loop: position errors -> (pitch*, roll*, vz*)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import HighLevelCommand


@dataclass(frozen=True)
class PidGains:
    """Per-axis (x, y, z) gains and clamps.

    The integral clamp bounds the integral *term* ``ki * int(e)`` in command
    units; the output clamp is in rad for x/y and m/s for z.
    """

    kp: tuple[float, float, float] = (0.35, 0.35, 1.2)
    ki: tuple[float, float, float] = (0.02, 0.02, 0.1)
    kd: tuple[float, float, float] = (0.25, 0.25, 0.6)
    integral_clamp: tuple[float, float, float] = (0.1, 0.1, 0.6)
    output_clamp: tuple[float, float, float] = (0.5, 0.5, 1.5)

    def __post_init__(self) -> None:
        for name in ("kp", "ki", "kd"):
            if min(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be non-negative")
        if min(self.integral_clamp) <= 0 or min(self.output_clamp) <= 0:
            raise ValueError("clamps must be positive")


@dataclass
class PidState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_error: np.ndarray = field(default_factory=lambda: np.zeros(3))


def pid_step(gains: PidGains, state: PidState, e, de, dt: float):
    """Advance the integral by ``e*dt`` (anti-windup by clamping), then return
    ``(clamp(kp e + I + kd de), new_state)``.

    ``e`` and ``de`` may be scalars (single axis, first gain entry) or
    length-3 arrays.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = np.asarray(e, dtype=float)
    de = np.asarray(de, dtype=float)
    n = e.size
    kp, ki, kd = (np.asarray(g[:n]) for g in (gains.kp, gains.ki, gains.kd))
    iclamp = np.asarray(gains.integral_clamp[:n])
    oclamp = np.asarray(gains.output_clamp[:n])

    integral = np.clip(state.integral[:n] + ki * e * dt, -iclamp, iclamp)
    u = np.clip(kp * e + integral + kd * de, -oclamp, oclamp)
    new = PidState(integral.reshape(state.integral[:n].shape), e.reshape(-1).copy())
    if e.ndim == 0:
        return float(u[0]), new
    return u, new


def axes_to_command(u: np.ndarray) -> HighLevelCommand:
    """x output -> pitch*, y output -> -roll*, z output -> vz*.

    With yaw held at zero, positive pitch accelerates +x and positive roll
    accelerates -y, hence the sign flip on the y axis.
    """
    return HighLevelCommand(float(u[0]), -float(u[1]), float(u[2]), 0.0)


def outer_loop_pid(gains: PidGains, state: PidState, e: np.ndarray, de: np.ndarray, dt: float):
    u, state = pid_step(gains, state, e, de, dt)
    return axes_to_command(u), state
