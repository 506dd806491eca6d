#!/usr/bin/env python3

## Planar kinematics of the five-joint closed chain.
##
## J1 sits at `base`, L1 runs J1->J2, L2 runs J2->J3 (the end-effector), L3 runs
## J3->J4, L4 runs J4->J5 and J5 is pinned at `anchor` through the torsional
## spring. All q_i are absolute link angles, counterclockwise from +e_x, so the
## actuated joint is q1 and the spring deflection is q4 + pi.

import math
import logging
from dataclasses import dataclass

import numpy as np

from lib import ConfigError, NonConvergence, SingularJacobian

MAX_NEWTON_ITERATIONS = 50
NEWTON_TOLERANCE = 1e-12
SINGULAR_CONDITION = 1e12


@dataclass(frozen=True)
class MechanismModel:
    """Geometry and inertia of the chain (link order L1..L4).

    Attributes:
        lengths (tuple): l1..l4 [m]
        masses (tuple): m1..m4 [kg]
        inertias (tuple): J1..J4 about each link centroid [kg m^2]
        base (tuple): position of joint J1 [m]
        anchor (tuple): position of joint J5 [m]
        gravity (float): acceleration along -e_y [m/s^2]
        elbow (int): -1 places J4 clockwise of the J3->J5 direction, +1
            counterclockwise
    """
    lengths: tuple
    masses: tuple
    inertias: tuple
    base: tuple
    anchor: tuple = (0.0, 0.0)
    gravity: float = 9.81
    elbow: int = -1

    def __post_init__(self):
        for name, values in (('lengths', self.lengths), ('masses', self.masses), ('inertias', self.inertias)):
            if len(values) != 4:
                raise ConfigError(f"mechanism.{name}: expected 4 values, got {len(values)}")
        if min(self.lengths) <= 0:
            raise ConfigError(f"mechanism.lengths: all lengths must be positive, got {self.lengths}")
        if min(self.masses) <= 0:
            raise ConfigError(f"mechanism.masses: all masses must be positive, got {self.masses}")
        if min(self.inertias) < 0:
            raise ConfigError(f"mechanism.inertias: inertias must be non-negative, got {self.inertias}")
        if self.elbow not in (1, -1):
            raise ConfigError(f"mechanism.elbow: must be +1 or -1, got {self.elbow}")

    @property
    def scale(self):
        """Characteristic length of the chain [m]."""
        return float(sum(self.lengths))

    def scaled(self, factor):
        """Copy with every mass and inertia multiplied by `factor`."""
        return MechanismModel(self.lengths,
                              tuple(factor * m for m in self.masses),
                              tuple(factor * j for j in self.inertias),
                              self.base, self.anchor, self.gravity, self.elbow)

    def with_gravity(self, gravity):
        return MechanismModel(self.lengths, self.masses, self.inertias,
                              self.base, self.anchor, gravity, self.elbow)


def unit(a):
    """Unit vector(s) (cos a, sin a) stacked on a trailing axis."""
    a = np.asarray(a, dtype=float)
    return np.stack((np.cos(a), np.sin(a)), axis=-1)


def unit_prime(a):
    """Derivative of unit(a) with respect to a."""
    a = np.asarray(a, dtype=float)
    return np.stack((-np.sin(a), np.cos(a)), axis=-1)


def joint_positions(model, q):
    """Return the five joint points J1..J5 (the last one from the chain, not
    the anchor), shape (..., 5, 2)."""
    q = np.asarray(q, dtype=float)
    links = np.asarray(model.lengths)[:, None] * unit(q)
    base = np.broadcast_to(np.asarray(model.base, dtype=float), q.shape[:-1] + (2,))
    points = [base]
    for i in range(4):
        points.append(points[-1] + links[..., i, :])
    return np.stack(points, axis=-2)


def direct_kinematics(model, q):
    """End-effector position chi = h(q), i.e. joint J3."""
    q = np.asarray(q, dtype=float)
    l1, l2 = model.lengths[0], model.lengths[1]
    return np.asarray(model.base) + l1 * unit(q[..., 0]) + l2 * unit(q[..., 1])


def loop_residual(model, q):
    """Loop-closure residual phi(q): chain tip minus the J5 anchor."""
    q = np.asarray(q, dtype=float)
    tip = np.asarray(model.base) + np.einsum('i,...ij->...j', np.asarray(model.lengths), unit(q))
    return tip - np.asarray(model.anchor)


def output_jacobian(model, q):
    """dh/dq, shape (..., 2, 4)."""
    q = np.asarray(q, dtype=float)
    lengths = np.asarray(model.lengths)
    d = unit_prime(q) * lengths[:, None]
    jac = np.zeros(q.shape[:-1] + (2, 4))
    jac[..., :, 0] = d[..., 0, :]
    jac[..., :, 1] = d[..., 1, :]
    return jac


def closure_jacobian(model, q):
    """dphi/dq, shape (..., 2, 4)."""
    q = np.asarray(q, dtype=float)
    d = unit_prime(q) * np.asarray(model.lengths)[:, None]
    return np.swapaxes(d, -1, -2)


def stacked_jacobian(model, q):
    """dF/dq for F(q) = (h(q) - chi; phi(q)), shape (..., 4, 4)."""
    return np.concatenate((output_jacobian(model, q), closure_jacobian(model, q)), axis=-2)


def _circle_intersection(center_a, radius_a, center_b, radius_b, side):
    """Intersection of two circles; `side` picks the point counterclockwise
    (+1) or clockwise (-1) of the a->b direction. None if they do not meet."""
    delta = np.asarray(center_b) - np.asarray(center_a)
    d = math.hypot(delta[0], delta[1])
    if d == 0 or d > radius_a + radius_b or d < abs(radius_a - radius_b):
        return None
    cos_angle = (radius_a ** 2 + d ** 2 - radius_b ** 2) / (2 * radius_a * d)
    angle = math.acos(max(-1.0, min(1.0, cos_angle)))
    heading = math.atan2(delta[1], delta[0]) + side * angle
    return np.asarray(center_a) + radius_a * np.array([math.cos(heading), math.sin(heading)])


def is_reachable(model, chi):
    """True when both sub-chains (J1-J3 and J3-J5) can span their gaps."""
    l1, l2, l3, l4 = model.lengths
    d_base = math.dist(chi, model.base)
    d_anchor = math.dist(chi, model.anchor)
    return (abs(l1 - l2) <= d_base <= l1 + l2) and (abs(l3 - l4) <= d_anchor <= l3 + l4)


def initial_configuration(model, chi):
    """Closed configuration reaching chi from two circle intersections.

    J2 is taken on the side that makes q2 negative; J4 on the side selected by
    model.elbow (both J4 candidates keep q3, q4 negative on the reference
    window of the bundled configs).
    """
    chi = np.asarray(chi, dtype=float)
    if not is_reachable(model, chi):
        raise NonConvergence(f"point {chi.tolist()} is outside the workspace of the chain")
    l1, l2, l3, l4 = model.lengths
    base = np.asarray(model.base, dtype=float)
    anchor = np.asarray(model.anchor, dtype=float)

    candidates = [_circle_intersection(base, l1, chi, l2, side) for side in (1, -1)]
    # q2 negative means J2 lies above the end-effector along L2
    j2 = min(candidates, key=lambda p: (chi - p)[1] / l2)
    j4 = _circle_intersection(chi, l3, anchor, l4, model.elbow)

    q1 = math.atan2(*(j2 - base)[::-1])
    q2 = math.atan2(*(chi - j2)[::-1])
    q3 = math.atan2(*(j4 - chi)[::-1])
    q4 = math.atan2(*(anchor - j4)[::-1])
    return np.array([q1, q2, q3, q4])


def _residual(model, q, chi):
    return np.concatenate((direct_kinematics(model, q) - chi, loop_residual(model, q)))


def _polish(model, q, chi, residual, norm):
    """One more full Newton step after convergence, down to round-off."""
    trial = q + np.linalg.solve(stacked_jacobian(model, q), -residual)
    return trial if np.linalg.norm(_residual(model, trial, chi)) <= norm else q


def solve_configuration(model, chi, q_guess=None):
    """Closed configuration q with h(q) = chi, by damped Newton from q_guess.

    Args:
        model (MechanismModel): the chain
        chi (array): end-effector target (x, y) [m]
        q_guess (array): starting angles on the intended branch; the analytic
            seed from initial_configuration is used when None

    Return:
        4-vector of absolute link angles

    Raises:
        NonConvergence: chi unreachable or iteration cap exceeded
        SingularJacobian: dF/dq singular along the iteration
    """
    chi = np.asarray(chi, dtype=float)
    if not is_reachable(model, chi):
        raise NonConvergence(f"point {chi.tolist()} is outside the workspace of the chain")
    if q_guess is None:
        q = initial_configuration(model, chi)
    else:
        q = np.array(q_guess, dtype=float)

    tolerance = NEWTON_TOLERANCE * model.scale
    residual = _residual(model, q, chi)
    norm = np.linalg.norm(residual)
    for _ in range(MAX_NEWTON_ITERATIONS):
        if norm < tolerance:
            return _polish(model, q, chi, residual, norm)
        jac = stacked_jacobian(model, q)
        if np.linalg.cond(jac) > SINGULAR_CONDITION:
            raise SingularJacobian(f"kinematic singularity at q={q.tolist()} while solving for {chi.tolist()}")
        step = np.linalg.solve(jac, -residual)
        damping = 1.0
        while True:
            trial = q + damping * step
            trial_residual = _residual(model, trial, chi)
            trial_norm = np.linalg.norm(trial_residual)
            if trial_norm < norm or damping < 1e-4:
                break
            damping *= 0.5
        q, residual, norm = trial, trial_residual, trial_norm
    if norm < tolerance:
        return _polish(model, q, chi, residual, norm)
    raise NonConvergence(f"Newton did not converge for {chi.tolist()} "
                         f"(residual {norm:.3e} after {MAX_NEWTON_ITERATIONS} iterations)")


def continuation_path(model, chis, q_start=None):
    """Solve a sequence of nearby points, each warm-started from the previous
    solution. Returns an array of shape (len(chis), 4)."""
    chis = np.asarray(chis, dtype=float)
    qs = np.empty((len(chis), 4))
    q = q_start
    for i, chi in enumerate(chis):
        q = solve_configuration(model, chi, q)
        qs[i] = q
    return qs


def coordinate_jacobian(model, q):
    """dq/dchi on the constraint manifold, shape (..., 4, 2).

    Solves (dh/dq; dphi/dq) J = (I2; 0). Row 1 gives the input distribution
    vector (B1, B2), row 4 gives dq4/dchi.
    """
    q = np.asarray(q, dtype=float)
    jac = stacked_jacobian(model, q)
    if np.any(np.linalg.cond(jac) > SINGULAR_CONDITION):
        raise SingularJacobian(f"kinematic singularity at q={q.tolist()}")
    rhs = np.zeros(q.shape[:-1] + (4, 2))
    rhs[..., 0, 0] = 1.0
    rhs[..., 1, 1] = 1.0
    return np.linalg.solve(jac, rhs)


def spring_angle(q):
    """Spring deflection theta = q4 + pi."""
    q = np.asarray(q, dtype=float)
    return q[..., 3] + math.pi


def eta(model, chi, q_guess=None):
    """Spring deflection as a function of the workspace point."""
    return float(spring_angle(solve_configuration(model, chi, q_guess)))


def on_nominal_branch(q):
    """True when q2, q3 and q4 all lie in (-pi, 0)."""
    q = np.asarray(q, dtype=float)
    tail = q[..., 1:]
    return bool(np.all((tail > -math.pi) & (tail < 0)))


def model_from_config(config):
    """Build a MechanismModel from a ZdshapeConfig."""
    model = MechanismModel(**config.get_mechanism())
    logging.debug(f"Mechanism: lengths={model.lengths} base={model.base} anchor={model.anchor}")
    return model
