#!/usr/bin/env python3

## Closed-loop simulation of the minimal form in (x, y) under the torque that
## holds the end-effector height.

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from lib import ZeroInputGain, KinematicsError, NotPositiveDefinite, Escape
from shaping.dynamics import minimal_point, decompose, gravity_potential, ZERO_GAIN
from shaping.mechanism import direct_kinematics, output_jacobian, spring_angle

TRAJECTORY_COLUMNS = ['t', 'x', 'xdot', 'y', 'ydot', 'u', 'E_kin', 'E_pot']


def linearizing_input(model, p_m, spring, q, q_dot):
    """u_bar = -f_y / g_y at the state given in joint coordinates.

    Raises:
        ZeroInputGain: |g_y| below 1e-9
    """
    q = np.asarray(q, dtype=float)
    chi = direct_kinematics(model, q)
    chi_dot = output_jacobian(model, q) @ np.asarray(q_dot, dtype=float)
    parts = decompose(minimal_point(model, p_m, spring, chi, chi_dot, q))
    if abs(parts.g_y) < ZERO_GAIN:
        raise ZeroInputGain(f"g_y = {parts.g_y:.3e} at chi={chi.tolist()}")
    return -parts.f_y / parts.g_y


@dataclass
class ClosedLoopTrajectory:
    frame: pd.DataFrame
    fault: dict = None
    gains: tuple = (0.0, 0.0)
    free: bool = False
    power: np.ndarray = field(default=None, repr=False)

    @property
    def stabilized(self):
        """True when the height-hold PD was active."""
        return any(g != 0 for g in self.gains)

    @property
    def label(self):
        if self.free:
            return 'free'
        return 'stabilized' if self.stabilized else 'exact'

    @property
    def t(self):
        return self.frame['t'].to_numpy()

    @property
    def x(self):
        return self.frame['x'].to_numpy()

    @property
    def xdot(self):
        return self.frame['xdot'].to_numpy()

    def to_csv(self, path):
        self.frame[TRAJECTORY_COLUMNS].to_csv(path, index=False, float_format='%.12g')


class _ClosedLoop:
    """Right-hand side of the minimal form with a warm-started configuration."""

    def __init__(self, model, p_m, spring, height, gains, free):
        self.model = model
        self.p_m = p_m
        self.spring = spring
        self.height = height
        self.gains = gains
        self.free = free
        self.q = None

    def __call__(self, state):
        x, y, xd, yd = state
        point = minimal_point(self.model, self.p_m, self.spring, (x, y), (xd, yd), self.q)
        self.q = point.q
        parts = decompose(point)
        if self.free:
            u = 0.0
        else:
            if abs(parts.g_y) < ZERO_GAIN:
                raise ZeroInputGain(f"g_y = {parts.g_y:.3e} at x={x:.6f} y={y:.6f}")
            kp, kd = self.gains
            v = -kp * (y - self.height) - kd * yd
            u = (v - parts.f_y) / parts.g_y
        accel = np.array([parts.f_x + parts.g_x * u, parts.f_y + parts.g_y * u])
        return np.array([xd, yd, accel[0], accel[1]]), u, point


def simulate_closed_loop(model, p_m, spring, init, dt, horizon, height, gains=(0.0, 0.0), free=False):
    """RK4 integration of M chi_ddot + C + G = B u with
    u = u_bar + v / g_y and v = -kp (y - height) - kd y_dot.

    With zero gains this is the exact output-holding torque; free=True
    integrates the unforced chain instead. A failure mid-run truncates the
    trajectory and records the time and reason in `fault`.

    Args:
        init (tuple): (x0, x_dot0, y0, y_dot0)
    """
    x0, xd0, y0, yd0 = init
    state = np.array([x0, y0, xd0, yd0], dtype=float)
    rhs = _ClosedLoop(model, p_m, spring, height, tuple(gains), free)
    steps = int(round(horizon / dt))
    rows = []
    power = []
    fault = None
    for k in range(steps + 1):
        t = k * dt
        try:
            k1, u, point = rhs(state)
            q = point.q
            chi_dot = state[2:]
            kinetic = 0.5 * chi_dot @ point.M @ chi_dot
            potential = gravity_potential(model, p_m, q) + float(spring.potential(spring_angle(q)))
            rows.append((t, state[0], state[2], state[1], state[3], u, kinetic, potential))
            power.append(u * (point.B1 * chi_dot[0] + point.B2 * chi_dot[1]))
            if k == steps:
                break
            k2, _, _ = rhs(state + 0.5 * dt * k1)
            k3, _, _ = rhs(state + 0.5 * dt * k2)
            k4, _, _ = rhs(state + dt * k3)
            rhs.q = q
            state = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(state)):
                raise Escape(f"non-finite state {state.tolist()}")
        except (ZeroInputGain, KinematicsError, NotPositiveDefinite, Escape) as e:
            fault = {'t': t, 'reason': type(e).__name__, 'message': str(e)}
            logging.warning(f"Closed-loop simulation stopped at t={t:.6f}: {e}")
            break

    frame = pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)
    return ClosedLoopTrajectory(frame, fault, tuple(gains), free, np.asarray(power))


def energy_audit(trajectory):
    """Largest deviation of E(t) - E(0) from the work done by the input.

    The work is the trapezoidal integral of u (B . chi_dot).
    """
    frame = trajectory.frame
    if len(frame) < 2:
        return 0.0
    energy = (frame['E_kin'] + frame['E_pot']).to_numpy()
    work = cumulative_trapezoid(trajectory.power, frame['t'].to_numpy(), initial=0.0)
    return float(np.max(np.abs(energy - energy[0] - work)))


def run_on_reference(model, p_m, spring, ref, dt=None, periods=1.0, gains=(0.0, 0.0)):
    """Closed loop started on the reference at t = 0."""
    dt = ref.period / 1e4 if dt is None else dt
    init = (float(ref.position(0.0)), float(ref.velocity(0.0)), ref.height, 0.0)
    return simulate_closed_loop(model, p_m, spring, init, dt, periods * ref.period, ref.height, gains)
