"""Quadcopter rigid-body model, RK4 integration and the inner attitude loop.

State layout (12 floats, world-frame linear velocity, body-frame rates)::

    [x, y, z, phi, theta, psi, vx, vy, vz, p, q, r]

z points up and thrust acts along +z of the body frame.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GimbalLock, NonFinite

log = logging.getLogger(__name__)

X, Y, Z, PHI, THETA, PSI, VX, VY, VZ, P, Q, R = range(12)
POS = slice(0, 3)
ATT = slice(3, 6)
VEL = slice(6, 9)
RATES = slice(9, 12)

GIMBAL_MARGIN = 1e-3


@dataclass(frozen=True)
class QuadParams:
    m: float = 0.5
    g: float = 9.81
    Ix: float = 0.00389
    Iy: float = 0.00389
    Iz: float = 0.00703
    thrust_max: float | None = None  # None -> 2 m g
    torque_max: float = 0.05

    def __post_init__(self) -> None:
        if self.thrust_max is None:
            object.__setattr__(self, "thrust_max", 2.0 * self.m * self.g)
        if self.m <= 0 or self.g <= 0:
            raise ValueError("mass and gravity must be positive")
        if min(self.Ix, self.Iy, self.Iz) <= 0:
            raise ValueError("inertia entries must be positive")
        if self.thrust_max <= self.m * self.g:
            raise ValueError("thrust_max must exceed the hover thrust m*g")
        if self.torque_max <= 0:
            raise ValueError("torque_max must be positive")


@dataclass(frozen=True)
class InnerGains:
    """Gains of the cascaded attitude / vertical-velocity loop."""

    kw: float = 5.0
    k_att: tuple[float, float, float] = (150.0, 150.0, 16.0)
    k_rate: tuple[float, float, float] = (20.0, 20.0, 6.0)
    tilt_limit: float = 0.5
    vz_limit: float = 1.5


@dataclass(frozen=True)
class Disturbance:
    """External force, mass change and sensor noise acting on a flight.

    ``mass_schedule`` holds ``(time, delta_m)`` pairs; the delta of the latest
    entry whose time is <= t applies (piecewise constant, zero before the first).
    """

    force: tuple[float, float, float] = (0.0, 0.0, 0.0)
    force_rate: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mass_schedule: tuple[tuple[float, float], ...] = ()
    pos_noise_std: float = 0.0
    vel_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pos_noise_std < 0 or self.vel_noise_std < 0:
            raise ValueError("noise std must be non-negative")
        object.__setattr__(
            self, "mass_schedule", tuple(sorted((float(t), float(dm)) for t, dm in self.mass_schedule))
        )

    def mass_delta(self, t: float) -> float:
        dm = 0.0
        for ts, d in self.mass_schedule:
            if ts <= t:
                dm = d
            else:
                break
        return dm

    def force_at(self, t: float) -> tuple[float, float, float]:
        f, fr = self.force, self.force_rate
        return (f[0] + fr[0] * t, f[1] + fr[1] * t, f[2] + fr[2] * t)

    def check_mass(self, m: float) -> None:
        for _, dm in self.mass_schedule:
            if m + dm <= 0:
                raise ValueError("scheduled mass change makes the mass non-positive")


NO_DISTURBANCE = Disturbance()


class ActuatorInputs(NamedTuple):
    thrust: float
    tau_phi: float = 0.0
    tau_theta: float = 0.0
    tau_psi: float = 0.0
    clamped: bool = False


class HighLevelCommand(NamedTuple):
    pitch: float
    roll: float
    vz: float
    yaw: float = 0.0


def make_state(
    position: Sequence[float] = (0.0, 0.0, 0.0),
    attitude: Sequence[float] = (0.0, 0.0, 0.0),
    velocity: Sequence[float] = (0.0, 0.0, 0.0),
    rates: Sequence[float] = (0.0, 0.0, 0.0),
) -> np.ndarray:
    return np.array([*position, *attitude, *velocity, *rates], dtype=float)


def hover_input(params: QuadParams) -> ActuatorInputs:
    return ActuatorInputs(params.m * params.g)


def derivative(
    state: np.ndarray,
    u: ActuatorInputs,
    params: QuadParams,
    dist: Disturbance = NO_DISTURBANCE,
    t: float = 0.0,
) -> np.ndarray:
    """Right-hand side of the Euler-angle rigid-body model.

    The disturbance force is divided by the current (scheduled) mass and added
    to the linear accelerations.
    """
    _, _, _, phi, theta, psi, vx, vy, vz, p, q, r = state.tolist()
    if abs(theta) >= math.pi / 2 - GIMBAL_MARGIN:
        raise GimbalLock(f"theta={theta:.6f} rad at t={t:.4f} s")

    m = params.m + dist.mass_delta(t)
    fx, fy, fz = dist.force_at(t)
    T = u[0]
    Ix, Iy, Iz = params.Ix, params.Iy, params.Iz

    cph, sph = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cps, sps = math.cos(psi), math.sin(psi)
    tth = sth / cth

    # written as (c*T - m*g)/m so that T = m*g gives an exact zero
    ax = ((cph * cps * sth + sph * sps) * T + fx) / m
    ay = ((cph * sps * sth - cps * sph) * T + fy) / m
    az = (cph * cth * T - m * params.g + fz) / m

    out = np.array(
        [
            vx,
            vy,
            vz,
            p + sph * tth * q + cph * tth * r,
            cph * q - sph * r,
            (sph * q + cph * r) / cth,
            ax,
            ay,
            az,
            (Iy - Iz) / Ix * q * r + u[1] / Ix,
            (Iz - Ix) / Iy * p * r + u[2] / Iy,
            (Ix - Iy) / Iz * p * q + u[3] / Iz,
        ]
    )
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"non-finite derivative at t={t:.4f} s")
    return out


def step_rk4(
    state: np.ndarray,
    u: ActuatorInputs,
    params: QuadParams,
    dist: Disturbance,
    t: float,
    dt: float,
) -> np.ndarray:
    """One classical Runge-Kutta step with the input held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    h2 = 0.5 * dt
    k1 = derivative(state, u, params, dist, t)
    k2 = derivative(state + h2 * k1, u, params, dist, t + h2)
    k3 = derivative(state + h2 * k2, u, params, dist, t + h2)
    k4 = derivative(state + dt * k3, u, params, dist, t + dt)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def clamp_input(u: ActuatorInputs, params: QuadParams) -> ActuatorInputs:
    tm = params.torque_max
    T = min(max(u.thrust, 0.0), params.thrust_max)
    taus = [min(max(v, -tm), tm) for v in u[1:4]]
    clamped = u.clamped or T != u.thrust or any(a != b for a, b in zip(taus, u[1:4]))
    return ActuatorInputs(T, *taus, clamped=clamped)


def clamp_command(cmd: HighLevelCommand, tilt_limit: float, vz_limit: float = math.inf) -> HighLevelCommand:
    def c(v: float, lim: float) -> float:
        return min(max(v, -lim), lim)

    return HighLevelCommand(c(cmd.pitch, tilt_limit), c(cmd.roll, tilt_limit), c(cmd.vz, vz_limit), cmd.yaw)


def inner_loop(
    cmd: HighLevelCommand,
    state: np.ndarray,
    params: QuadParams,
    gains: InnerGains,
) -> ActuatorInputs:
    """Map (pitch*, roll*, vz*, yaw*) to thrust and body torques.

    Proportional attitude control with rate damping, plus tilt-compensated
    thrust from a proportional vertical-velocity law. Uses the nominal mass;
    the controller does not know about payload changes.
    """
    cmd = clamp_command(cmd, gains.tilt_limit)
    phi, theta, psi = state[ATT]
    p, q, r = state[RATES]
    vz = state[VZ]
    tilt = max(math.cos(phi) * math.cos(theta), 0.5)
    T = params.m * (params.g + gains.kw * (cmd.vz - vz)) / tilt
    ka, kr = gains.k_att, gains.k_rate
    raw = ActuatorInputs(
        T,
        params.Ix * (ka[0] * (cmd.roll - phi) - kr[0] * p),
        params.Iy * (ka[1] * (cmd.pitch - theta) - kr[1] * q),
        params.Iz * (ka[2] * (cmd.yaw - psi) - kr[2] * r),
    )
    out = clamp_input(raw, params)
    if out.clamped:
        log.debug("actuator clamp: %s -> %s", raw, out)
    return out


def measure(state: np.ndarray, dist: Disturbance, rng: np.random.Generator | None) -> np.ndarray:
    """Position/velocity feedback with optional additive Gaussian noise."""
    y = state.copy()
    if rng is None:
        return y
    if dist.pos_noise_std > 0:
        y[POS] += rng.normal(0.0, dist.pos_noise_std, 3)
    if dist.vel_noise_std > 0:
        y[VEL] += rng.normal(0.0, dist.vel_noise_std, 3)
    return y


def mechanical_energy(state: np.ndarray, params: QuadParams) -> float:
    v = state[VEL]
    p, q, r = state[RATES]
    rot = 0.5 * (params.Ix * p * p + params.Iy * q * q + params.Iz * r * r)
    return 0.5 * params.m * float(v @ v) + rot + params.m * params.g * state[Z]


@dataclass
class Plant:
    """Everything the simulator needs besides the controller."""

    params: QuadParams = field(default_factory=QuadParams)
    inner: InnerGains = field(default_factory=InnerGains)
    physics_dt: float = 1e-3
    control_dt: float = 1e-2
    settle_time: float = 3.0

    @property
    def substeps(self) -> int:
        n = round(self.control_dt / self.physics_dt)
        if n < 1 or abs(n * self.physics_dt - self.control_dt) > 1e-12:
            raise ValueError("control_dt must be an integer multiple of physics_dt")
        return n

    def advance(
        self,
        state: np.ndarray,
        cmd: HighLevelCommand,
        dist: Disturbance,
        t: float,
    ) -> tuple[np.ndarray, bool]:
        """Hold ``cmd`` for one control period; the inner loop runs every physics step."""
        clamped = False
        n = self.substeps
        for i in range(n):
            u = inner_loop(cmd, state, self.params, self.inner)
            clamped |= u.clamped
            state = step_rk4(state, u, self.params, dist, t + i * self.physics_dt, self.physics_dt)
        return state, clamped
