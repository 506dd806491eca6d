#!/usr/bin/env python3

## Zero dynamics of the chain on the slice y = r_y, y_dot = 0.
##
## Holding the end-effector height, the horizontal motion obeys
##     alpha(x) x_ddot + beta(x) x_dot^2 + gamma(x) = 0,
## with gamma = zeta_S S(theta(x)) + zeta_U. Requiring the reference to be a
## solution fixes gamma on the stroke, hence the spring torque sigma that
## realizes it.

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from lib import AlphaVanishes, ZetaSVanishes, NoEquilibrium, Escape, ZeroInputGain
from shaping.dynamics import MinimalFormGeometry, accel_decomposition
from shaping.reference import phase_maps, sample, forward_half_times
from shaping.spring import tabulate_ideal

ALPHA_MIN = 1e-12
ZETA_MIN = 1e-12
SIGMA_DENSITY = 4
PERIOD_TOLERANCE = 1e-6
PERIOD_MARGIN = 0.25


@dataclass(frozen=True)
class ZeroDynCoeffs:
    x: float
    alpha: float
    beta: float
    gamma: float
    zeta_s: float
    zeta_u: float
    theta: float


def slice_geometry(model, xs, height):
    """MinimalFormGeometry at the points (x, height)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    return MinimalFormGeometry(model, np.column_stack((xs, np.full_like(xs, height))))


class SliceCoefficients:
    """Zero-dynamics coefficients at every point of a slice geometry.

    Everything but gamma is spring-independent; gamma(spring) assembles it
    from zeta_S and zeta_U.
    """

    def __init__(self, geometry, p_m):
        self.geometry = geometry
        self.p_m = p_m
        m, dmx, dmy = geometry.inertia_partials(p_m)
        b = geometry.input_map
        dq4 = geometry.spring_map
        grad = geometry.gravity_grad(p_m)
        self.M, self.dMx, self.dMy, self.B, self.grad_u = m, dmx, dmy, b, grad
        self.alpha = m[:, 0, 0] * b[:, 1] - m[:, 0, 1] * b[:, 0]
        self.beta = -b[:, 0] * (dmx[:, 0, 1] - 0.5 * dmy[:, 0, 0]) + 0.5 * b[:, 1] * dmx[:, 0, 0]
        self.zeta_s = b[:, 1] * dq4[:, 0] - b[:, 0] * dq4[:, 1]
        self.zeta_u = b[:, 1] * grad[:, 0] - b[:, 0] * grad[:, 1]
        self.theta = geometry.theta
        self.spring_map = dq4

    @property
    def x(self):
        return self.geometry.chis[:, 0]

    def gamma(self, spring):
        return self.zeta_s * spring(self.theta) + self.zeta_u

    def nu(self, torque, x_dot):
        """Linearizing torque on the slice for a given spring torque at each
        point and horizontal speed x_dot (C evaluated with y_dot = 0)."""
        m, b = self.M, self.B
        g = self.grad_u + np.asarray(torque)[:, None] * self.spring_map
        speed2 = np.asarray(x_dot, dtype=float) ** 2
        c1 = 0.5 * self.dMx[:, 0, 0] * speed2
        c2 = (self.dMx[:, 0, 1] - 0.5 * self.dMy[:, 0, 0]) * speed2
        den = m[:, 0, 1] * b[:, 0] - m[:, 0, 0] * b[:, 1]
        if np.any(np.abs(den) < ALPHA_MIN):
            i = int(np.argmin(np.abs(den)))
            raise ZeroInputGain(f"input gain vanishes on the slice at x={self.x[i]:.6f}")
        return (m[:, 0, 1] * (c1 + g[:, 0]) - m[:, 0, 0] * (c2 + g[:, 1])) / den

    def check_alpha(self):
        small = np.abs(self.alpha) < ALPHA_MIN
        if np.any(small):
            raise AlphaVanishes(f"alpha vanishes at x={self.x[np.argmax(small)]:.6f}")


def abc(model, p_m, spring, x, height):
    """Zero-dynamics coefficients at a single x of the slice y = height.

    Raises:
        AlphaVanishes: |alpha| < 1e-12
    """
    coeffs = SliceCoefficients(slice_geometry(model, [x], height), p_m)
    coeffs.check_alpha()
    return ZeroDynCoeffs(x=float(x), alpha=float(coeffs.alpha[0]), beta=float(coeffs.beta[0]),
                         gamma=float(coeffs.gamma(spring)[0]), zeta_s=float(coeffs.zeta_s[0]),
                         zeta_u=float(coeffs.zeta_u[0]), theta=float(coeffs.theta[0]))


def _check_window(maps, x):
    if not maps.contains(x):
        raise ValueError(f"x outside the reference window [{maps.x_min}, {maps.x_max}]")


def gamma_hat(coeffs, maps):
    """gamma that makes the reference a zero-dynamics solution."""
    x = coeffs.x
    return -coeffs.alpha * maps.rho_dd(x) - coeffs.beta * maps.rho_d(x)


def ideal_gamma(model, p_m, maps, x, height):
    """gamma_hat = -alpha rho_dd - beta rho_d at one or more x."""
    _check_window(maps, x)
    return gamma_hat(SliceCoefficients(slice_geometry(model, x, height), p_m), maps)


def sigma_from(coeffs, maps):
    """Spring torque per point that realizes gamma_hat.

    Raises:
        ZetaSVanishes: the spring has no leverage at some x
    """
    small = np.abs(coeffs.zeta_s) < ZETA_MIN
    if np.any(small):
        raise ZetaSVanishes(f"zeta_S vanishes at x={coeffs.x[np.argmax(small)]:.6f}")
    return (gamma_hat(coeffs, maps) - coeffs.zeta_u) / coeffs.zeta_s


def ideal_spring_curve(model, p_m, maps, xs, height):
    """(theta, sigma) samples of the ideal spring, sorted by theta."""
    _check_window(maps, xs)
    coeffs = SliceCoefficients(slice_geometry(model, xs, height), p_m)
    sigma = sigma_from(coeffs, maps)
    order = np.argsort(coeffs.theta, kind='stable')
    return coeffs.theta[order], sigma[order]


def ideal_spring_table(model, p_m, ref, intervals):
    """Ideal spring tabulated on `intervals` + 1 knots of the forward half
    period, with the reference speed and acceleration taken from the
    reference itself at every knot rather than from the phase maps.

    Raises:
        AlphaVanishes, ZetaSVanishes: the design cannot realize the reference
    """
    t = forward_half_times(ref, 2 * intervals)
    coeffs = SliceCoefficients(slice_geometry(model, ref.position(t), ref.height), p_m)
    coeffs.check_alpha()
    small = np.abs(coeffs.zeta_s) < ZETA_MIN
    if np.any(small):
        raise ZetaSVanishes(f"zeta_S vanishes at x={coeffs.x[np.argmax(small)]:.6f}")
    gamma = -coeffs.alpha * ref.acceleration(t) - coeffs.beta * ref.velocity(t) ** 2
    sigma = (gamma - coeffs.zeta_u) / coeffs.zeta_s
    order = np.argsort(coeffs.theta, kind='stable')
    return tabulate_ideal(coeffs.theta[order], sigma[order])


def nu_on_reference(model, p_m, maps, x, x_dot, height):
    """Linearizing torque at one reference sample with the ideal spring."""
    _check_window(maps, x)
    coeffs = SliceCoefficients(slice_geometry(model, [x], height), p_m)
    return float(coeffs.nu(sigma_from(coeffs, maps), [x_dot])[0])


def residual_torque(model, p_m, spring, x, x_dot, height, q_guess=None):
    """u = -f_y / g_y at (x, x_dot, height, 0)."""
    parts = accel_decomposition(model, p_m, spring, (x, height), (x_dot, 0.0), q_guess)
    return -parts.f_y / parts.g_y


@dataclass(frozen=True)
class CenterReport:
    x0: float
    omega: float
    bracket: tuple

    @property
    def is_center(self):
        return self.omega > 0


def center_from_ratios(x, ratio):
    """Equilibrium of gamma/alpha from samples of it.

    Samples are scanned in increasing x; the first adjacent pair whose ratios
    have opposite signs brackets the equilibrium. A sample sitting exactly on
    zero brackets with its two neighbours.

    Raises:
        NoEquilibrium: no sign change
    """
    x = np.asarray(x, dtype=float)
    ratio = np.asarray(ratio, dtype=float)
    order = np.argsort(x, kind='stable')
    x, ratio = x[order], ratio[order]
    for i in range(len(x) - 1):
        j = i + 1
        if ratio[j] == 0 and j + 1 < len(x):
            j += 1
        if ratio[i] * ratio[j] < 0:
            x1, x2, r1, r2 = x[i], x[j], ratio[i], ratio[j]
            omega = (r2 - r1) / (x2 - x1)
            root = x1 - r1 * (x2 - x1) / (r2 - r1)
            return CenterReport(float(root), float(omega), (float(x1), float(x2)))
    raise NoEquilibrium("gamma_hat/alpha does not change sign over the stroke")


def center_indicator(model, p_m, maps, xs, height):
    """CenterReport of the ideal zero dynamics over the sample positions xs."""
    coeffs = SliceCoefficients(slice_geometry(model, xs, height), p_m)
    coeffs.check_alpha()
    return center_from_ratios(coeffs.x, gamma_hat(coeffs, maps) / coeffs.alpha)


class ReferenceSlice:
    """Everything about one reference that does not depend on the design:
    phase maps, the N samples and the slice geometry at the sampled
    positions."""

    def __init__(self, model, ref, samples=1000):
        self.model = model
        self.ref = ref
        self.maps = phase_maps(ref, samples)
        self.samples = sample(ref, samples)
        self.geometry = slice_geometry(model, self.samples['r_x'].to_numpy(), ref.height)
        x = self.samples['r_x'].to_numpy()
        order = np.argsort(x, kind='stable')
        keep = np.concatenate(([True], np.diff(x[order]) > 1e-12 * ref.stroke))
        # positions scanned by the center indicator, one per distinct x
        self.center_points = order[keep]
        logging.info(f"Reference slice: {samples} samples on [{ref.x_min:.4f}, {ref.x_max:.4f}] m")

    def evaluate(self, p_m):
        return SliceEvaluation(self, p_m)


class SliceEvaluation:
    """Ideal spring, linearizing torque and center report of one design."""

    def __init__(self, reference_slice, p_m):
        self.reference_slice = reference_slice
        self.p_m = p_m
        coeffs = SliceCoefficients(reference_slice.geometry, p_m)
        self.coeffs = coeffs
        self.gamma_hat = gamma_hat(coeffs, reference_slice.maps)
        self.sigma = sigma_from(coeffs, reference_slice.maps)
        self.nu = coeffs.nu(self.sigma, reference_slice.samples['rdot_x'].to_numpy())
        coeffs.check_alpha()
        points = reference_slice.center_points
        try:
            self.center = center_from_ratios(coeffs.x[points], (self.gamma_hat / coeffs.alpha)[points])
        except NoEquilibrium:
            self.center = None

    @property
    def feasible(self):
        """A centered equilibrium exists (Omega_s > 0)."""
        return self.center is not None and self.center.is_center

    @property
    def theta(self):
        return self.coeffs.theta

    def sigma_table(self, density=SIGMA_DENSITY):
        """Ideal spring handed to the spring fit and the validation runs, on
        `density` knots per reference sample."""
        rs = self.reference_slice
        return ideal_spring_table(rs.model, self.p_m, rs.ref, density * len(rs.samples))


class ZeroDynamicsTable:
    """Cubic-spline tables of alpha, beta, zeta_S, zeta_U and theta over
    [x_lo, x_hi] on the slice, for a fixed design.

    Calling the table with a spring returns the coefficient provider used by
    simulate_zero_dynamics.
    """

    def __init__(self, model, p_m, x_lo, x_hi, height, knots=400):
        self.window = (float(x_lo), float(x_hi))
        xs = np.linspace(x_lo, x_hi, knots)
        coeffs = SliceCoefficients(slice_geometry(model, xs, height), p_m)
        coeffs.check_alpha()
        stacked = np.column_stack((coeffs.alpha, coeffs.beta, coeffs.zeta_s, coeffs.zeta_u, coeffs.theta))
        self._spline = CubicSpline(xs, stacked)

    @classmethod
    def around(cls, model, p_m, ref, margin=0.05, knots=400):
        pad = margin * ref.stroke
        return cls(model, p_m, ref.x_min - pad, ref.x_max + pad, ref.height, knots)

    def values(self, x):
        lo, hi = self.window
        if not lo <= x <= hi:
            raise Escape(f"zero dynamics left the window [{lo:.6f}, {hi:.6f}] at x={x:.6f}")
        return self._spline(x)

    def __call__(self, spring):
        def coefficients(x):
            alpha, beta, zeta_s, zeta_u, theta = self.values(x)
            return alpha, beta, zeta_s * float(spring(theta)) + zeta_u
        return coefficients


@dataclass
class ZeroDynamicsTrajectory:
    frame: pd.DataFrame
    period: float = None
    fault: dict = None

    @property
    def t(self):
        return self.frame['t'].to_numpy()

    @property
    def x(self):
        return self.frame['x'].to_numpy()

    @property
    def xdot(self):
        return self.frame['xdot'].to_numpy()


def zero_dynamics_field(coefficients, x, x_dot):
    alpha, beta, gamma = coefficients(x)
    if abs(alpha) < ALPHA_MIN:
        raise AlphaVanishes(f"alpha vanishes at x={x:.6f}")
    return -(beta * x_dot * x_dot + gamma) / alpha


def simulate_zero_dynamics(coefficients, x0, x_dot0, horizon, dt, x_tol=PERIOD_TOLERANCE):
    """Integrate alpha x_ddot + beta x_dot^2 + gamma = 0 with fixed-step RK4.

    Args:
        coefficients (callable): x -> (alpha, beta, gamma)
        x0, x_dot0 (float): initial state
        horizon (float): duration; a negative dt integrates backward in time
        dt (float): step
        x_tol (float): closure tolerance of the period detection [m]

    Return:
        ZeroDynamicsTrajectory; period is the time to the first return to
        the section x_dot = 0 with the starting crossing direction and x
        within x_tol of the starting section point, None if none.
    """
    steps = int(round(abs(horizon / dt)))
    t = np.empty(steps + 1)
    x = np.empty(steps + 1)
    v = np.empty(steps + 1)
    t[0], x[0], v[0] = 0.0, x0, x_dot0

    def field(xk, vk):
        return vk, zero_dynamics_field(coefficients, xk, vk)

    fault = None
    last = steps
    for k in range(steps):
        xk, vk = x[k], v[k]
        try:
            k1x, k1v = field(xk, vk)
            k2x, k2v = field(xk + 0.5 * dt * k1x, vk + 0.5 * dt * k1v)
            k3x, k3v = field(xk + 0.5 * dt * k2x, vk + 0.5 * dt * k2v)
            k4x, k4v = field(xk + dt * k3x, vk + dt * k3v)
        except (Escape, AlphaVanishes) as e:
            fault = {'t': k * dt, 'reason': type(e).__name__, 'message': str(e)}
            logging.warning(f"Zero dynamics stopped at t={k * dt:.6f}: {e}")
            last = k
            break
        x[k + 1] = xk + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v[k + 1] = vk + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        t[k + 1] = (k + 1) * dt
    t, x, v = t[:last + 1], x[:last + 1], v[:last + 1]

    frame = pd.DataFrame({'t': t, 'x': x, 'xdot': v})
    if x_dot0 == 0:
        start = (0.0, x0, np.sign(zero_dynamics_field(coefficients, x0, 0.0)))
    else:
        start = None
    period = detect_period(t, x, v, start, x_tol)
    return ZeroDynamicsTrajectory(frame, period, fault)


def section_crossings(t, x, v):
    """(time, x, direction) where v crosses zero, linear in v between steps."""
    crossings = []
    for k in range(len(t) - 1):
        if v[k] != 0 and v[k] * v[k + 1] <= 0 and v[k + 1] != v[k]:
            tau = v[k] / (v[k] - v[k + 1])
            h = t[k + 1] - t[k]
            accel = (v[k + 1] - v[k]) / h
            s = tau * h
            crossings.append((t[k] + s, x[k] + v[k] * s + 0.5 * accel * s * s,
                              np.sign(v[k + 1] - v[k]) * np.sign(h)))
    return crossings


def detect_period(t, x, v, start=None, x_tol=PERIOD_TOLERANCE):
    crossings = section_crossings(t, x, v)
    if start is None:
        if not crossings:
            return None
        start, crossings = crossings[0], crossings[1:]
    t0, xs0, direction = start
    for tc, xc, dc in crossings:
        if dc == direction and tc != t0:
            return abs(tc - t0) if abs(xc - xs0) < x_tol else None
    return None


def orbit_deviation(trajectory, ref, grid=4096):
    """Deviation of a simulated (x, x_dot) trajectory from the reference.

    Return:
        dict with the max pointwise position and velocity errors [m, m/s],
        the position error relative to the stroke, and the orbital
        deviation: the largest distance from a trajectory point to the
        reference orbit in the plane (x / stroke, x_dot / max speed).
    """
    t, x, v = trajectory.t, trajectory.x, trajectory.xdot
    position_error = float(np.max(np.abs(x - ref.position(t))))
    velocity_error = float(np.max(np.abs(v - ref.velocity(t))))
    stroke, speed = ref.stroke, ref.speed_max
    s = np.linspace(0.0, ref.period, grid, endpoint=False)
    orbit = np.column_stack((ref.position(s) / stroke, ref.velocity(s) / speed))
    distance, _ = cKDTree(orbit).query(np.column_stack((x / stroke, v / speed)))
    return {
        'max_position_error': position_error,
        'max_velocity_error': velocity_error,
        'relative_position_error': position_error / stroke,
        'orbital_deviation': float(np.max(distance)),
    }


def track_reference(table, spring, ref, dt=None, periods=1.0):
    """Zero dynamics under `spring` started on the reference at t = 0.

    The run continues PERIOD_MARGIN periods past the horizon so a return to
    the start section at the horizon itself is still detected; the frame and
    the fault cover the horizon only.
    """
    dt = ref.period / 1e4 if dt is None else dt
    x0 = float(ref.position(0.0))
    v0 = float(ref.velocity(0.0))
    horizon = periods * ref.period
    run = simulate_zero_dynamics(table(spring), x0, v0, horizon + PERIOD_MARGIN * ref.period, dt)
    frame = run.frame.iloc[:int(round(horizon / dt)) + 1].reset_index(drop=True)
    fault = run.fault if run.fault is not None and run.fault['t'] <= horizon else None
    return ZeroDynamicsTrajectory(frame, run.period, fault)


def step_halving_error(table, spring, ref, dt=None, periods=1.0):
    """Largest position difference between runs at dt and dt / 2 [m].

    Compared on the coarse time grid, over the part both runs cover.
    """
    dt = ref.period / 1e4 if dt is None else dt
    coarse = track_reference(table, spring, ref, dt, periods).x
    fine = track_reference(table, spring, ref, dt / 2, periods).x[::2]
    common = min(len(coarse), len(fine))
    return float(np.max(np.abs(coarse[:common] - fine[:common])))
