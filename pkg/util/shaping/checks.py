#!/usr/bin/env python3

## Invariant suite behind `zdshape check`.
##
## Every check returns a dict {'status': PASS|INFO|WARN|ERROR, 'comment': str}
## plus numeric detail keys. The overall status of a run is the worst one.

import itertools
import logging

import numpy as np

from lib import ZdshapeError
from shaping.dynamics import MassParams, MinimalFormGeometry
from shaping.mechanism import continuation_path, direct_kinematics, loop_residual, \
    output_jacobian, closure_jacobian, coordinate_jacobian, on_nominal_branch
from shaping.reference import check_symmetry, sample
from shaping.zerodyn import SliceCoefficients, slice_geometry, ReferenceSlice


def result(status, comment='', **details):
    return {'status': status, 'comment': comment, **details}


def check_reference_symmetry(ref):
    return check_symmetry(ref)


def check_kinematics(model, ref, samples):
    """Continuation along one period: closure, round trip, branch, return."""
    frame = sample(ref, samples)
    chis = np.column_stack((frame['r_x'], np.full(len(frame), ref.height)))
    try:
        qs = continuation_path(model, np.vstack((chis, chis[:1])))
    except ZdshapeError as e:
        return result('ERROR', f'reference leaves the workspace: {e}')
    closure = float(np.max(np.linalg.norm(loop_residual(model, qs), axis=-1)))
    round_trip = float(np.max(np.linalg.norm(direct_kinematics(model, qs) - np.vstack((chis, chis[:1])), axis=-1)))
    drift = float(np.max(np.abs(qs[-1] - qs[0])))
    issues = []
    if closure > 1e-10:
        issues.append(f'loop residual {closure:.2e} m')
    if round_trip > 1e-9:
        issues.append(f'round trip error {round_trip:.2e} m')
    if drift > 1e-8:
        issues.append(f'configuration does not return after one period ({drift:.2e} rad)')
    if not on_nominal_branch(qs):
        issues.append('q2, q3, q4 leave (-pi, 0)')
    status = 'ERROR' if issues else 'PASS'
    return result(status, '. '.join(issues), closure=closure, round_trip=round_trip, drift=drift)


def check_jacobians(model, ref, samples):
    frame = sample(ref, samples)
    chis = np.column_stack((frame['r_x'], np.full(len(frame), ref.height)))
    qs = continuation_path(model, chis)
    jac = coordinate_jacobian(model, qs)
    output = float(np.max(np.abs(output_jacobian(model, qs) @ jac - np.eye(2))))
    closure = float(np.max(np.abs(closure_jacobian(model, qs) @ jac)))
    if max(output, closure) > 1e-10:
        return result('ERROR', f'dq/dchi identities violated ({output:.2e}, {closure:.2e})',
                      output=output, closure=closure)
    return result('PASS', output=output, closure=closure)


def box_corners(lower, upper):
    for corner in itertools.product(*zip(lower, upper)):
        yield MassParams.from_array(corner)


def _sign_flips(x, values):
    """Positions between adjacent samples (in increasing x) where values
    change sign or touch zero."""
    order = np.argsort(x, kind='stable')
    x, signs = x[order], np.sign(values[order])
    at = np.nonzero((signs[:-1] != signs[1:]) | (signs[:-1] == 0))[0]
    return 0.5 * (x[at] + x[at + 1])


def check_inertia_and_gains(model, ref, samples, lower, upper):
    """M positive definite, and alpha, g_y = alpha / det M and zeta_S of one
    sign over the stroke, for every corner of the added-mass box."""
    geometry = slice_geometry(model, sample(ref, samples)['r_x'].to_numpy(), ref.height)
    issues = []
    flips = {}
    min_det = np.inf
    min_alpha = np.inf
    min_zeta = np.inf
    for p_m in box_corners(lower, upper):
        coeffs = SliceCoefficients(geometry, p_m)
        m = coeffs.M
        det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] ** 2
        min_det = min(min_det, float(np.min(det)))
        min_alpha = min(min_alpha, float(np.min(np.abs(coeffs.alpha))))
        min_zeta = min(min_zeta, float(np.min(np.abs(coeffs.zeta_s))))
        if np.any(det <= 0) or np.any(m[:, 0, 0] <= 0):
            issues.append(f'M not positive definite for {p_m}')
            continue
        for name, values in (('alpha', coeffs.alpha), ('g_y', coeffs.alpha / det), ('zeta_S', coeffs.zeta_s)):
            at = _sign_flips(coeffs.x, values)
            if len(at) and name not in flips:
                flips[name] = (at, p_m)
    for name, (at, p_m) in flips.items():
        where = ', '.join(f'{x:.4f}' for x in at)
        issues.append(f'{name} changes sign near x = {where} for {p_m}')
    if min_alpha < 1e-12:
        issues.append(f'alpha vanishes (min |alpha| {min_alpha:.2e})')
    if min_zeta < 1e-12:
        issues.append(f'zeta_S vanishes (min |zeta_S| {min_zeta:.2e})')
    status = 'ERROR' if issues else 'PASS'
    return result(status, '. '.join(issues), min_det=min_det, min_alpha=min_alpha, min_zeta_s=min_zeta,
                  sign_changes=sorted(flips))


def check_inertia_partials(model, ref, points=16):
    """Central differences of M agree with a half-step recomputation."""
    xs = np.linspace(ref.x_min, ref.x_max, points)
    chis = np.column_stack((xs, np.full(points, ref.height)))
    full = MinimalFormGeometry(model, chis)
    half = MinimalFormGeometry(model, chis, step=full.step / 2)
    p_m = MassParams()
    _, fx, fy = full.inertia_partials(p_m)
    _, hx, hy = half.inertia_partials(p_m)
    scale = max(float(np.max(np.abs(fx))), float(np.max(np.abs(fy))))
    error = max(float(np.max(np.abs(fx - hx))), float(np.max(np.abs(fy - hy)))) / scale
    if error > 1e-6:
        return result('WARN', f'dM/dchi changes by {error:.2e} (relative) when the step is halved',
                      relative_change=error)
    return result('PASS', relative_change=error)


def check_mass_placement(model, lower, upper):
    corners = [MassParams.from_array(c) for c in itertools.product(*zip(lower, upper))]
    if all(p_m.on_link(model) for p_m in corners):
        return result('PASS')
    return result('INFO', 'the offset box lets added masses move past the joints of their link')


def check_baseline_center(model, ref, samples):
    evaluation = ReferenceSlice(model, ref, samples).evaluate(MassParams())
    if evaluation.center is None:
        return result('INFO', 'the design without added masses has no equilibrium on the stroke')
    if not evaluation.center.is_center:
        return result('INFO', f'the design without added masses has a saddle (Omega_s {evaluation.center.omega:.3g})',
                      omega=evaluation.center.omega)
    return result('PASS', omega=evaluation.center.omega, x0=evaluation.center.x0)


def run_checks(model, ref, lower, upper, samples=1000):
    """Run the whole suite and return {name: result}."""
    checks = {
        'reference_symmetry': lambda: check_reference_symmetry(ref),
        'kinematics': lambda: check_kinematics(model, ref, samples),
        'coordinate_jacobian': lambda: check_jacobians(model, ref, samples),
        'inertia_and_gains': lambda: check_inertia_and_gains(model, ref, samples, lower, upper),
        'inertia_partials': lambda: check_inertia_partials(model, ref),
        'mass_placement': lambda: check_mass_placement(model, lower, upper),
        'baseline_center': lambda: check_baseline_center(model, ref, samples),
    }
    results = {}
    for name, check in checks.items():
        try:
            results[name] = check()
        except ZdshapeError as e:
            logging.exception(f"Check {name} failed")
            results[name] = result('ERROR', str(e))
        logging.info(f"{name}: {results[name]['status']}")
    return results
