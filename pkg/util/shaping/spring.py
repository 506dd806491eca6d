#!/usr/bin/env python3

## Torsional spring characteristics at J5.
##
## A parametric spring is a linear baseline k0 (theta - theta0) plus n pairs of
## one-sided sub-springs: the positive one of each pair acts above its
## threshold, the negative one below. The ideal characteristic produced by the
## mass optimization is carried around as a TabulatedSpring.

import os
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from lib import EmptyTable, NonMonotoneAbscissa, MissingArtifact

MERGE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SpringParams:
    """Piecewise-linear spring.

    Attributes:
        k0 (float): baseline stiffness [N m/rad]
        theta0 (float): rest angle of the baseline [rad]
        pairs (tuple): (k_plus, theta_plus, k_minus, theta_minus) per pair
    """
    k0: float
    theta0: float
    pairs: tuple = field(default_factory=tuple)

    @property
    def n(self):
        return len(self.pairs)

    @property
    def dimension(self):
        return 2 + 4 * self.n

    @classmethod
    def from_array(cls, values):
        """Inverse of as_array: [k0, theta0, k1+, theta1+, k1-, theta1-, ...]."""
        values = [float(v) for v in values]
        if len(values) < 2 or (len(values) - 2) % 4:
            raise ValueError(f"spring parameter vector has length {len(values)}, expected 2 + 4n")
        pairs = tuple(tuple(values[i:i + 4]) for i in range(2, len(values), 4))
        return cls(values[0], values[1], pairs)

    def as_array(self):
        flat = [self.k0, self.theta0]
        for pair in self.pairs:
            flat.extend(pair)
        return np.array(flat, dtype=float)

    def nested(self, n, threshold=None):
        """Same characteristic written with n >= self.n pairs; the extra
        pairs have zero slopes and sit at `threshold` (theta0 if None)."""
        if n < self.n:
            raise ValueError(f"cannot nest a {self.n}-pair spring into {n} pairs")
        t = self.theta0 if threshold is None else threshold
        extra = tuple((0.0, t, 0.0, t) for _ in range(n - self.n))
        return SpringParams(self.k0, self.theta0, self.pairs + extra)

    def __call__(self, theta):
        return eval_spring(self, theta)

    def potential(self, theta):
        return spring_potential(self, theta)


def eval_spring(p_s, theta):
    """Torque S(p_s, theta) [N m]."""
    theta = np.asarray(theta, dtype=float)
    torque = p_s.k0 * (theta - p_s.theta0)
    for k_plus, theta_plus, k_minus, theta_minus in p_s.pairs:
        torque = torque + np.where(theta >= theta_plus, k_plus * (theta - theta_plus), 0.0)
        torque = torque + np.where(theta <= theta_minus, k_minus * (theta - theta_minus), 0.0)
    return torque


def spring_potential(p_s, theta):
    """Elastic energy whose derivative is eval_spring [J]."""
    theta = np.asarray(theta, dtype=float)
    energy = 0.5 * p_s.k0 * (theta - p_s.theta0) ** 2
    for k_plus, theta_plus, k_minus, theta_minus in p_s.pairs:
        energy = energy + np.where(theta >= theta_plus, 0.5 * k_plus * (theta - theta_plus) ** 2, 0.0)
        energy = energy + np.where(theta <= theta_minus, 0.5 * k_minus * (theta - theta_minus) ** 2, 0.0)
    return energy


def breakpoints(p_s):
    """Sorted thresholds of the sub-springs with a nonzero slope."""
    points = set()
    for k_plus, theta_plus, k_minus, theta_minus in p_s.pairs:
        if k_plus != 0:
            points.add(theta_plus)
        if k_minus != 0:
            points.add(theta_minus)
    return sorted(points)


class ZeroSpring:
    """No spring at J5."""

    def __call__(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))

    def potential(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))


class TabulatedSpring:
    """Linear interpolation of (theta, torque) samples.

    Outside the sampled band the end torques are held constant and a warning
    is logged the first time that happens.
    """

    def __init__(self, theta, torque):
        self.theta = np.asarray(theta, dtype=float)
        self.torque = np.asarray(torque, dtype=float)
        self._energy = cumulative_trapezoid(self.torque, self.theta, initial=0.0) \
            if len(self.theta) > 1 else np.zeros(1)
        self._warned = False

    def __len__(self):
        return len(self.theta)

    @property
    def band(self):
        return float(self.theta[0]), float(self.theta[-1])

    def _check_band(self, theta):
        if self._warned:
            return
        lo, hi = self.band
        if np.any(theta < lo) or np.any(theta > hi):
            logging.warning(f"Spring table queried outside [{lo:.6f}, {hi:.6f}] rad, holding end torque")
            self._warned = True

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        self._check_band(theta)
        return np.interp(theta, self.theta, self.torque)

    def potential(self, theta):
        theta = np.asarray(theta, dtype=float)
        if len(self.theta) == 1:
            return self.torque[0] * (theta - self.theta[0])
        k = np.clip(np.searchsorted(self.theta, theta, side='right') - 1, 0, len(self.theta) - 2)
        d = np.clip(theta, self.theta[0], self.theta[-1]) - self.theta[k]
        slope = (self.torque[k + 1] - self.torque[k]) / (self.theta[k + 1] - self.theta[k])
        inside = self._energy[k] + self.torque[k] * d + 0.5 * slope * d ** 2
        below = np.minimum(theta - self.theta[0], 0.0) * self.torque[0]
        above = np.maximum(theta - self.theta[-1], 0.0) * self.torque[-1]
        return inside + below + above

    def to_frame(self):
        return pd.DataFrame({'theta': self.theta, 'torque': self.torque})


def tabulate_ideal(theta, torque):
    """Build a TabulatedSpring from samples sorted by theta.

    Samples closer than 1e-12 rad are merged into one knot carrying their
    mean torque.

    Raises:
        EmptyTable: no samples
        NonMonotoneAbscissa: theta decreases somewhere
    """
    theta = np.asarray(theta, dtype=float).ravel()
    torque = np.asarray(torque, dtype=float).ravel()
    if theta.size == 0:
        raise EmptyTable("spring table has no samples")
    if theta.size != torque.size:
        raise ValueError(f"spring table has {theta.size} angles but {torque.size} torques")
    steps = np.diff(theta)
    if np.any(steps < -MERGE_TOLERANCE):
        i = int(np.argmax(steps < -MERGE_TOLERANCE))
        raise NonMonotoneAbscissa(f"spring table angle decreases at index {i + 1}: "
                                  f"{theta[i]:.12g} -> {theta[i + 1]:.12g}")
    group = np.concatenate(([0], np.cumsum(steps > MERGE_TOLERANCE)))
    counts = np.bincount(group)
    merged_theta = np.bincount(group, weights=theta) / counts
    merged_torque = np.bincount(group, weights=torque) / counts
    if len(merged_theta) < len(theta):
        logging.debug(f"Merged {len(theta) - len(merged_theta)} duplicate spring table knots")
    return TabulatedSpring(merged_theta, merged_torque)


@dataclass(frozen=True)
class SpringBounds:
    """Search box of an n-pair spring.

    theta0 may leave the sampled band by one band width on each side; the
    thresholds stay inside it.
    """
    k_max: float
    theta_min: float
    theta_max: float

    @property
    def theta0_range(self):
        width = self.theta_max - self.theta_min
        return self.theta_min - width, self.theta_max + width

    def box(self, n):
        """(lower, upper) arrays for the flat parameter vector."""
        t0_lo, t0_hi = self.theta0_range
        lower = [0.0, t0_lo] + [-self.k_max, self.theta_min, -self.k_max, self.theta_min] * n
        upper = [self.k_max, t0_hi] + [self.k_max, self.theta_max, self.k_max, self.theta_max] * n
        return np.array(lower), np.array(upper)


def validate_params(p_s, bounds):
    """List every bound of the search box that p_s violates.

    Return:
        {'status': 'PASS'|'ERROR', 'comment': str, 'violations': [str]}
    """
    violations = []
    if p_s.k0 < 0:
        violations.append("k0 < 0")
    if p_s.k0 > bounds.k_max:
        violations.append("k0 > k_max")
    t0_lo, t0_hi = bounds.theta0_range
    if not t0_lo <= p_s.theta0 <= t0_hi:
        violations.append("theta0 outside its range")
    for j, (k_plus, theta_plus, k_minus, theta_minus) in enumerate(p_s.pairs, start=1):
        for name, k in ((f"k+{j}", k_plus), (f"k-{j}", k_minus)):
            if abs(k) > bounds.k_max:
                violations.append(f"|{name}| > k_max")
        for name, t in ((f"theta+{j}", theta_plus), (f"theta-{j}", theta_minus)):
            if t < bounds.theta_min:
                violations.append(f"{name} < theta_min")
            if t > bounds.theta_max:
                violations.append(f"{name} > theta_max")
    if violations:
        return {'status': 'ERROR', 'comment': '; '.join(violations), 'violations': violations}
    return {'status': 'PASS', 'comment': '', 'violations': []}


def save_sigma_table(spring, path):
    spring.to_frame().to_csv(path, index=False, float_format='%.12g')


def load_sigma_table(path):
    """Read a (theta, torque) CSV written by save_sigma_table."""
    if not os.path.isfile(path):
        raise MissingArtifact(f"{path} does not exist")
    frame = pd.read_csv(path)
    missing = {'theta', 'torque'} - set(frame.columns)
    if missing:
        raise MissingArtifact(f"{path}: missing columns {sorted(missing)}")
    frame = frame.sort_values('theta', kind='stable')
    return tabulate_ideal(frame['theta'].to_numpy(), frame['torque'].to_numpy())
