#!/usr/bin/env python3

## Euler-Lagrange quantities of the chain with two added point masses, and
## their projection to the two-coordinate minimal form in (x, y).
##
## Every mass point P on link i moves as P = J_i + s u(q_i), J_i being the
## proximal joint of the link. Its workspace velocity map dP/dchi is
## V = prox_i + s W_i with prox_i the map of J_i and W_i = u'(q_i) (dq_i/dchi),
## so every inertia term reduces to sums of 2x2 products.

import logging
from dataclasses import dataclass, astuple

import numpy as np

from lib import NotPositiveDefinite, ZeroInputGain
from shaping.mechanism import unit, unit_prime, joint_positions, solve_configuration, \
    coordinate_jacobian, spring_angle

# step of the dM/dchi central differences, relative to the chain scale
FD_STEP = 1e-6
ZERO_GAIN = 1e-9
# order of the stencil slices in MinimalFormGeometry
STENCIL = ((0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0))


@dataclass(frozen=True)
class MassParams:
    """Added masses on L3 and L4 and their offsets from the link centers.

    A positive offset moves the mass toward the proximal joint of the link.
    """
    m_a3: float = 0.0
    m_a4: float = 0.0
    delta3: float = 0.0
    delta4: float = 0.0

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values))

    def as_array(self):
        return np.array(astuple(self), dtype=float)

    @property
    def added(self):
        """((link index, mass, offset), ...) for L3 and L4, 0-based."""
        return ((2, self.m_a3, self.delta3), (3, self.m_a4, self.delta4))

    def on_link(self, model):
        """True when both masses sit between the joints of their link."""
        return all(abs(delta) <= model.lengths[i] / 2 for i, _, delta in self.added)


def _point_jacobian(model, q, link, s):
    """d(point)/dq, shape (..., 2, 4), for the point at distance s from the
    proximal joint of `link` (0-based)."""
    q = np.asarray(q, dtype=float)
    d = unit_prime(q) * np.asarray(model.lengths)[:, None]
    jac = np.zeros(q.shape[:-1] + (2, 4))
    for k in range(link):
        jac[..., :, k] = d[..., k, :]
    jac[..., :, link] = s * unit_prime(q[..., link])
    return jac


def _mass_points(model, p_m):
    """(link, mass, distance from the proximal joint) for every point mass."""
    points = [(i, model.masses[i], model.lengths[i] / 2) for i in range(4)]
    for i, mass, delta in p_m.added:
        if mass != 0:
            points.append((i, mass, model.lengths[i] / 2 - delta))
    return points


def joint_inertia(model, p_m, q):
    """Inertia matrix M_q(p_m, q) of the chain in joint space.

    Args:
        model (MechanismModel): the chain
        p_m (MassParams): added masses
        q (array): absolute link angles

    Return:
        symmetric 4x4 matrix
    """
    m_q = np.diag(np.asarray(model.inertias, dtype=float))
    for link, mass, s in _mass_points(model, p_m):
        jac = _point_jacobian(model, q, link, s)
        m_q = m_q + mass * jac.T @ jac
    return m_q


def gravity_potential(model, p_m, q):
    """U_g = g * sum(m y) over link centroids and added masses."""
    points = joint_positions(model, q)
    q = np.asarray(q, dtype=float)
    total = 0.0
    for link, mass, s in _mass_points(model, p_m):
        y = points[..., link, 1] + s * np.sin(q[..., link])
        total = total + mass * y
    return model.gravity * total


def joint_gravity_grad(model, p_m, q):
    """dU_g/dq, 4-vector [N m]."""
    grad = np.zeros(4)
    for link, mass, s in _mass_points(model, p_m):
        grad += mass * _point_jacobian(model, q, link, s)[1, :]
    return model.gravity * grad


def kinetic_energy(model, p_m, q, q_dot):
    """0.5 q_dot' M_q q_dot."""
    q_dot = np.asarray(q_dot, dtype=float)
    return 0.5 * q_dot @ joint_inertia(model, p_m, q) @ q_dot


class MinimalFormGeometry:
    """Kinematic part of the minimal form at a batch of workspace points.

    For each point chi and for the four stencil points chi +/- h e_x, chi +/- h e_y
    it stores the closed configuration, dq/dchi and the velocity maps of all
    mass points. Nothing here depends on the added masses, so one instance
    serves every candidate p_m of an optimization run.

    Arrays carry a leading stencil axis of length 5 in the order of STENCIL.
    """

    def __init__(self, model, chis, q_guess=None, step=None):
        self.model = model
        self.chis = np.atleast_2d(np.asarray(chis, dtype=float))
        self.step = FD_STEP * model.scale if step is None else step
        n = len(self.chis)

        q = np.empty((5, n, 4))
        for i, chi in enumerate(self.chis):
            seed = q_guess if (q_guess is not None and n == 1) else None
            q[0, i] = solve_configuration(model, chi, seed)
            for p, (dx, dy) in enumerate(STENCIL[1:], start=1):
                shifted = chi + self.step * np.array([dx, dy])
                q[p, i] = solve_configuration(model, shifted, q[0, i])
        self.q = q
        self.jac = coordinate_jacobian(model, q)

        lengths = np.asarray(model.lengths)
        # terms[k] = l_k u'(q_k) (dq_k/dchi), shape (5, n, 4, 2, 2)
        w = unit_prime(q)[..., :, :, None] * self.jac[..., :, None, :]
        terms = lengths[:, None, None] * w
        cumulative = np.cumsum(terms, axis=-3)
        proximal = np.zeros_like(terms)
        proximal[..., 1:, :, :] = cumulative[..., :-1, :, :]
        self.w = w
        self.proximal = proximal
        self.centroid = proximal + 0.5 * lengths[:, None, None] * w

        masses = np.asarray(model.masses)
        inertias = np.asarray(model.inertias)
        rows = self.jac
        self.base_inertia = (np.einsum('l,...lki,...lkj->...ij', masses, self.centroid, self.centroid)
                             + np.einsum('l,...li,...lj->...ij', inertias, rows, rows))
        self.base_gravity = model.gravity * np.einsum('l,...li->...i', masses, self.centroid[0, :, :, 1, :])
        logging.debug(f"Minimal form geometry at {n} points (stencil step {self.step:.3e} m)")

    def __len__(self):
        return len(self.chis)

    @property
    def theta(self):
        return spring_angle(self.q[0])

    @property
    def input_map(self):
        """(B1, B2) per point: first row of dq/dchi."""
        return self.jac[0, :, 0, :]

    @property
    def spring_map(self):
        """(dq4/dx, dq4/dy) per point."""
        return self.jac[0, :, 3, :]

    def _added_map(self, i, s):
        return self.proximal[..., i, :, :] + s * self.w[..., i, :, :]

    def inertia(self, p_m):
        """M at every point and stencil point, shape (5, n, 2, 2)."""
        m = self.base_inertia.copy()
        for i, mass, delta in p_m.added:
            if mass == 0:
                continue
            v = self._added_map(i, self.model.lengths[i] / 2 - delta)
            m += mass * np.einsum('...ki,...kj->...ij', v, v)
        return m

    def inertia_partials(self, p_m):
        """(M, dM/dx, dM/dy) at the points, each (n, 2, 2)."""
        m = self.inertia(p_m)
        return m[0], (m[1] - m[2]) / (2 * self.step), (m[3] - m[4]) / (2 * self.step)

    def gravity_grad(self, p_m):
        """dU_g/dchi at the points, shape (n, 2)."""
        grad = self.base_gravity.copy()
        for i, mass, delta in p_m.added:
            if mass == 0:
                continue
            v = self._added_map(i, self.model.lengths[i] / 2 - delta)[0]
            grad += self.model.gravity * mass * v[:, 1, :]
        return grad


def coriolis_terms(dmx, dmy, chi_dot):
    """Components (C1, C2) of the Coriolis and centrifugal torque vector."""
    chi_dot = np.asarray(chi_dot, dtype=float)
    xd, yd = chi_dot[..., 0], chi_dot[..., 1]
    c1 = (0.5 * dmx[..., 0, 0] * xd ** 2 + dmy[..., 0, 0] * xd * yd
          + (dmy[..., 0, 1] - 0.5 * dmx[..., 1, 1]) * yd ** 2)
    c2 = ((dmx[..., 0, 1] - 0.5 * dmy[..., 0, 0]) * xd ** 2 + dmx[..., 1, 1] * xd * yd
          + 0.5 * dmy[..., 1, 1] * yd ** 2)
    return c1, c2


@dataclass(frozen=True)
class MinimalFormPoint:
    M: np.ndarray
    C1: float
    C2: float
    G1: float
    G2: float
    B1: float
    B2: float
    q: np.ndarray
    dMx: np.ndarray
    dMy: np.ndarray


def check_inertia(m, where):
    if not (m[0, 0] > 0 and m[0, 0] * m[1, 1] - m[0, 1] ** 2 > 0):
        raise NotPositiveDefinite(f"minimal-form inertia {m.tolist()} is not positive definite at {where}")


def minimal_point(model, p_m, spring, chi, chi_dot, q_guess=None):
    """Minimal-form data (M, C, G, B) at one workspace state.

    The spring enters G through S(theta(q)) (dq4/dchi). `spring` is any
    callable theta -> torque.
    """
    geometry = MinimalFormGeometry(model, [chi], q_guess)
    m, dmx, dmy = (a[0] for a in geometry.inertia_partials(p_m))
    check_inertia(m, list(np.asarray(chi, dtype=float)))
    c1, c2 = coriolis_terms(dmx, dmy, chi_dot)
    torque = float(spring(geometry.theta[0]))
    g = geometry.gravity_grad(p_m)[0] + torque * geometry.spring_map[0]
    b = geometry.input_map[0]
    return MinimalFormPoint(m, float(c1), float(c2), float(g[0]), float(g[1]),
                            float(b[0]), float(b[1]), geometry.q[0, 0], dmx, dmy)


@dataclass(frozen=True)
class AccelDecomposition:
    """x_ddot = f_x + g_x u and y_ddot = f_y + g_y u."""
    f_x: float
    g_x: float
    f_y: float
    g_y: float


def decompose(point):
    """Invert the minimal-form inertia of a MinimalFormPoint."""
    m = point.M
    den = m[0, 0] * m[1, 1] - m[0, 1] ** 2
    r1 = point.C1 + point.G1
    r2 = point.C2 + point.G2
    return AccelDecomposition(
        f_x=(-m[1, 1] * r1 + m[0, 1] * r2) / den,
        g_x=(m[1, 1] * point.B1 - m[0, 1] * point.B2) / den,
        f_y=(m[0, 1] * r1 - m[0, 0] * r2) / den,
        g_y=-(m[0, 1] * point.B1 - m[0, 0] * point.B2) / den,
    )


def accel_decomposition(model, p_m, spring, chi, chi_dot, q_guess=None):
    """Drift and input gain of both workspace accelerations.

    Raises:
        ZeroInputGain: |g_y| below 1e-9, the output cannot be linearized here
    """
    parts = decompose(minimal_point(model, p_m, spring, chi, chi_dot, q_guess))
    if abs(parts.g_y) < ZERO_GAIN:
        raise ZeroInputGain(f"g_y = {parts.g_y:.3e} at chi={list(chi)}")
    return parts


def minimal_energy(model, p_m, spring, chi, chi_dot, q_guess=None):
    """(kinetic, potential) energy at a workspace state; the potential
    includes gravity and the spring."""
    q = solve_configuration(model, chi, q_guess)
    jac = coordinate_jacobian(model, q)
    q_dot = jac @ np.asarray(chi_dot, dtype=float)
    kinetic = kinetic_energy(model, p_m, q, q_dot)
    potential = gravity_potential(model, p_m, q) + float(spring.potential(spring_angle(q)))
    return float(kinetic), float(potential), q
