#!/usr/bin/env python3

## Periodic end-effector references r(t) = (r_x(t), r_y) and their phase maps.
##
## Both families are even about t = 0 and about t = T/2, where r_x takes its
## extremes. On the forward half-period [0, T/2] the squared velocity and the
## acceleration are single-valued functions of r_x.

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd
from scipy.interpolate import PPoly
from scipy.optimize import brentq

from lib import ExtraVelocityZeros, InfeasibleTiming, NonMonotoneHalfPeriod, ReferenceShapeError

ZERO_SCAN = 4096


class ReferenceTrajectory:
    """T-periodic reference with a constant height.

    Subclasses implement position, velocity and acceleration of r_x, all
    vectorized over t.
    """

    def __init__(self, period, height):
        self.period = float(period)
        self.height = float(height)

    def position(self, t):
        raise NotImplementedError

    def velocity(self, t):
        raise NotImplementedError

    def acceleration(self, t):
        raise NotImplementedError

    @cached_property
    def zeros(self):
        return velocity_zeros(self)

    @cached_property
    def x_min(self):
        return float(np.min(self.position(np.asarray(self.zeros))))

    @cached_property
    def x_max(self):
        return float(np.max(self.position(np.asarray(self.zeros))))

    @property
    def stroke(self):
        return self.x_max - self.x_min

    @cached_property
    def speed_max(self):
        t = np.linspace(0.0, self.period, ZERO_SCAN, endpoint=False)
        return float(np.max(np.abs(self.velocity(t))))

    def describe(self):
        return {'family': type(self).__name__, 'period': self.period, 'height': self.height}


class CosineReference(ReferenceTrajectory):
    """r_x(t) = c0 + sum_k c_k cos(2 pi k t / T)."""

    def __init__(self, offset, coefficients, period, height):
        super().__init__(period, height)
        self.offset = float(offset)
        self.coefficients = np.asarray(coefficients, dtype=float)
        self._omega = 2 * np.pi * np.arange(1, len(self.coefficients) + 1) / self.period

    def _phase(self, t):
        return np.multiply.outer(np.asarray(t, dtype=float), self._omega)

    def position(self, t):
        return self.offset + np.cos(self._phase(t)) @ self.coefficients

    def velocity(self, t):
        return -np.sin(self._phase(t)) @ (self.coefficients * self._omega)

    def acceleration(self, t):
        return -np.cos(self._phase(t)) @ (self.coefficients * self._omega ** 2)

    def describe(self):
        return {**super().describe(), 'offset': self.offset, 'coefficients': self.coefficients.tolist()}


class SCurveReference(ReferenceTrajectory):
    """Trapezoidal velocity profile with jerk-limited corners.

    The acceleration is piecewise linear. Each half-period is a velocity ramp
    (whose midpoint is the reversal), a cruise phase and the next ramp. The
    plateau acceleration is scaled so the forward half covers x_min -> x_max.
    """

    def __init__(self, x_min, x_max, cruise_fraction, period, height, jerk_fraction=0.5):
        super().__init__(period, height)
        self.start = float(x_min)
        self.end = float(x_max)
        self.cruise_fraction = float(cruise_fraction)
        self.jerk_fraction = float(jerk_fraction)

        half = self.period / 2
        ramp = half * (1 - self.cruise_fraction) / 2
        jerk = ramp * self.jerk_fraction
        knots = [(0.0, 1.0), (ramp - jerk, 1.0), (ramp, 0.0),
                 (half - ramp, 0.0), (half - ramp + jerk, -1.0), (half, -1.0),
                 (half + ramp - jerk, -1.0), (half + ramp, 0.0),
                 (self.period - ramp, 0.0), (self.period - ramp + jerk, 1.0), (self.period, 1.0)]
        t = [knots[0][0]]
        a = [knots[0][1]]
        for tk, ak in knots[1:]:
            if tk > t[-1]:
                t.append(tk)
                a.append(ak)
        t = np.array(t)
        a = np.array(a)
        coefficients = np.vstack((np.diff(a) / np.diff(t), a[:-1]))
        accel = PPoly(coefficients, t)
        distance = accel.antiderivative(2)(half)
        self.accel_max = (self.end - self.start) / distance
        self._accel = PPoly(coefficients * self.accel_max, t)
        self._velocity = self._accel.antiderivative(1)
        self._position = self._accel.antiderivative(2)

    def _wrap(self, t):
        return np.mod(np.asarray(t, dtype=float), self.period)

    def position(self, t):
        return self.start + self._position(self._wrap(t))

    def velocity(self, t):
        return self._velocity(self._wrap(t))

    def acceleration(self, t):
        return self._accel(self._wrap(t))

    @property
    def peak_velocity(self):
        return float(self._velocity(self.period / 4))

    def describe(self):
        return {**super().describe(), 'x_min': self.start, 'x_max': self.end,
                'cruise_fraction': self.cruise_fraction, 'jerk_fraction': self.jerk_fraction}


class FunctionReference(ReferenceTrajectory):
    """Reference given by three callables of t."""

    def __init__(self, position, velocity, acceleration, period, height):
        super().__init__(period, height)
        self._functions = (position, velocity, acceleration)

    def position(self, t):
        return self._functions[0](np.asarray(t, dtype=float))

    def velocity(self, t):
        return self._functions[1](np.asarray(t, dtype=float))

    def acceleration(self, t):
        return self._functions[2](np.asarray(t, dtype=float))


def velocity_zeros(ref, grid=ZERO_SCAN):
    """Times in [0, T) where r_x has zero velocity, ascending."""
    t = np.linspace(0.0, ref.period, grid + 1)
    v = np.asarray(ref.velocity(t), dtype=float)
    scale = np.max(np.abs(v))
    if scale == 0:
        return []
    flat = np.abs(v) <= 1e-12 * scale
    zeros = []
    for i in range(grid):
        if flat[i]:
            zeros.append(float(t[i]))
        elif not flat[i + 1] and v[i] * v[i + 1] < 0:
            zeros.append(brentq(lambda s: float(ref.velocity(s)), t[i], t[i + 1], xtol=1e-15))
    return sorted(zeros)


def make_cosine_reference(offset, coefficients, period, height):
    """Cosine-series reference, checked to reverse exactly twice a period.

    Raises:
        ExtraVelocityZeros: all coefficients zero, or the series is not
            monotone on each half-period
    """
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.size == 0 or not np.any(coefficients):
        raise ExtraVelocityZeros("cosine reference has no nonzero coefficient; r_x is constant")
    ref = CosineReference(offset, coefficients, period, height)
    t = np.linspace(0.0, ref.period, 2 * ZERO_SCAN + 1)
    interior = np.concatenate((t[1:ZERO_SCAN], t[ZERO_SCAN + 1:-1]))
    v = ref.velocity(interior)
    forward, backward = v[:ZERO_SCAN - 1], v[ZERO_SCAN - 1:]
    if not (np.all(forward < 0) or np.all(forward > 0)) or not np.all(np.sign(backward) == -np.sign(forward[0])):
        raise ExtraVelocityZeros(f"cosine coefficients {coefficients.tolist()} give extra velocity zeros")
    return ref


def make_scurve_reference(x_min, x_max, cruise_fraction, period, height, jerk_fraction=0.5):
    """Smoothed trapezoidal reference.

    Raises:
        InfeasibleTiming: empty stroke or fractions outside their ranges
    """
    if not x_min < x_max:
        raise InfeasibleTiming(f"s-curve needs x_min < x_max, got {x_min} >= {x_max}")
    if not 0 < cruise_fraction < 1:
        raise InfeasibleTiming(f"cruise fraction must be in (0, 1), got {cruise_fraction}")
    if not 0 < jerk_fraction <= 1:
        raise InfeasibleTiming(f"jerk fraction must be in (0, 1], got {jerk_fraction}")
    if period <= 0:
        raise InfeasibleTiming(f"period must be positive, got {period}")
    return SCurveReference(x_min, x_max, cruise_fraction, period, height, jerk_fraction)


def check_symmetry(ref, tol=1e-9, grid=512):
    """Check that r_x is even and its velocity odd about every velocity zero.

    Return:
        {'status': 'PASS'|'ERROR', 'comment': str, 'max_violation': float}
    """
    zeros = ref.zeros
    if len(zeros) != 2:
        return {'status': 'ERROR', 'comment': f'{len(zeros)} velocity zeros per period, expected 2',
                'max_violation': float('inf')}
    s = np.linspace(0.0, ref.period / 2, grid + 1)[1:]
    worst = 0.0
    for t0 in zeros:
        position = np.abs(ref.position(t0 + s) - ref.position(t0 - s))
        velocity = np.abs(ref.velocity(t0 + s) + ref.velocity(t0 - s))
        worst = max(worst, float(np.max(position)), float(np.max(velocity)))
    if worst > tol:
        return {'status': 'ERROR', 'comment': f'orbit not symmetric: violation {worst:.3e} > {tol:.1e}',
                'max_violation': worst}
    return {'status': 'PASS', 'comment': '', 'max_violation': worst}


@dataclass(frozen=True)
class PhaseMaps:
    """rho_d(x) = r_x_dot^2 and rho_dd(x) = r_x_ddot over the stroke, linear
    between knots sorted by x."""
    x: np.ndarray
    velocity_sq: np.ndarray
    acceleration: np.ndarray

    @property
    def x_min(self):
        return float(self.x[0])

    @property
    def x_max(self):
        return float(self.x[-1])

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        span = self.x_max - self.x_min
        return np.all((x >= self.x_min - 1e-12 * span) & (x <= self.x_max + 1e-12 * span))

    def rho_d(self, x):
        return np.interp(x, self.x, self.velocity_sq)

    def rho_dd(self, x):
        return np.interp(x, self.x, self.acceleration)


def forward_half_times(ref, resolution):
    """resolution/2 + 1 times spanning the first half-period of motion."""
    zeros = ref.zeros
    if len(zeros) != 2:
        raise ExtraVelocityZeros(f"reference has {len(zeros)} velocity zeros per period")
    return np.linspace(zeros[0], zeros[1], resolution // 2 + 1)


def phase_maps(ref, resolution=1000):
    """Tabulate rho_d and rho_dd on the forward half-period.

    Raises:
        ReferenceShapeError: the symmetry check fails
        NonMonotoneHalfPeriod: r_x not strictly monotone on the half-period
    """
    status = check_symmetry(ref)
    if status['status'] != 'PASS':
        raise ReferenceShapeError(status['comment'])
    t = forward_half_times(ref, resolution)
    x = ref.position(t)
    steps = np.diff(x)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise NonMonotoneHalfPeriod("r_x is not strictly monotone between its velocity zeros")
    order = np.argsort(x)
    maps = PhaseMaps(x[order], ref.velocity(t)[order] ** 2, ref.acceleration(t)[order])
    logging.debug(f"Phase maps on [{maps.x_min:.6f}, {maps.x_max:.6f}] m with {len(x)} knots")
    return maps


def sample(ref, n):
    """One period sampled at t_i = i T/n, endpoint excluded."""
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    t = np.arange(n) * (ref.period / n)
    return pd.DataFrame({
        't': t,
        'r_x': ref.position(t),
        'rdot_x': ref.velocity(t),
        'rddot_x': ref.acceleration(t),
    })


def reference_from_config(block):
    """Build the reference described by the `reference` block of a config."""
    family = block['family']
    period = float(block['period'])
    height = float(block['height'])
    if family == 'cosine':
        if 'cosine' not in block:
            raise ReferenceShapeError("reference.cosine: required field missing")
        params = block['cosine']
        return make_cosine_reference(params['offset'], params['coefficients'], period, height)
    if 'scurve' not in block:
        raise ReferenceShapeError("reference.scurve: required field missing")
    params = block['scurve']
    return make_scurve_reference(params['x_min'], params['x_max'], params['cruise_fraction'],
                                 period, height, params.get('jerk_fraction', 0.5))
