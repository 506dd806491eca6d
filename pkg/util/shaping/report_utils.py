#!/usr/bin/env python3

import os
import logging

from lib import sha256sum, save_json, to_plain

# Column documentation of every CSV the pipeline can emit.
COLUMN_DOCS = {
    't': 'time [s]',
    'r_x': 'reference x [m]',
    'rdot_x': 'reference x velocity [m/s]',
    'rddot_x': 'reference x acceleration [m/s^2]',
    'theta': 'spring deflection q4 + pi [rad]',
    'torque': 'spring torque [N m]',
    'sigma_star': 'ideal spring torque [N m]',
    'fitted': 'fitted spring torque [N m]',
    'residual': 'fitted minus ideal torque [N m]',
    'restart': 'GA restart index',
    'generation': 'GA generation',
    'best': 'best fitness so far',
    'mean': 'mean finite fitness of the generation',
    'x': 'end-effector x [m]',
    'xdot': 'end-effector x velocity [m/s]',
    'y': 'end-effector y [m]',
    'ydot': 'end-effector y velocity [m/s]',
    'u': 'actuator torque [N m]',
    'E_kin': 'kinetic energy [J]',
    'E_pot': 'gravity plus spring energy [J]',
}


def save_frame(frame, outdir, filename, manifest, description=''):
    """Write a DataFrame as CSV and register it in the manifest.

    Args:
        frame (DataFrame): data, written without index
        outdir (str): output directory
        filename (str): CSV file name
        manifest (dict): filename -> entry, updated in place
        description (str): one line about the file

    Return:
        path of the written file
    """
    path = os.path.join(outdir, filename)
    frame.to_csv(path, index=False, float_format='%.12g')
    manifest[filename] = {
        'description': description,
        'columns': {c: COLUMN_DOCS.get(c, '') for c in frame.columns},
        'rows': len(frame),
        'sha256': sha256sum(path),
    }
    logging.info(f"Wrote {path}")
    return path


def center_summary(center):
    if center is None:
        return None
    return {'x0': center.x0, 'omega_s': center.omega, 'bracket': list(center.bracket),
            'is_center': center.is_center}


def mass_summary(result, published=None):
    """Report section of the added-mass optimization."""
    p_m = result.p_m
    section = {
        'p_m': {'m_a3': p_m.m_a3, 'm_a4': p_m.m_a4, 'delta3': p_m.delta3, 'delta4': p_m.delta4},
        'rms': result.rms,
        'baseline_rms': result.baseline_rms,
        'reduction': result.reduction,
        'center': center_summary(result.center),
    }
    if published:
        section['published'] = dict(published)
    return section


def spring_summary(fit):
    return {
        'n': fit.n,
        'params': fit.p_s.as_array(),
        'mismatch': fit.mismatch,
        'max_residual': float(fit.residuals['residual'].abs().max()),
    }


def closed_loop_summary(trajectory, ref, audit):
    frame = trajectory.frame
    summary = {
        'label': trajectory.label,
        'gains': list(trajectory.gains),
        'fault': trajectory.fault,
        'steps': len(frame),
        'energy_residual': audit,
    }
    if len(frame):
        summary['max_height_error'] = float((frame['y'] - ref.height).abs().max())
        summary['rms_torque'] = float((frame['u'] ** 2).mean() ** 0.5)
    return summary


def process_results(results):
    """Overall status of a set of check results: the worst one.

    Return:
        {'status': ..., 'summary': {level: count}}
    """
    summary = {'ERROR': 0, 'WARN': 0, 'INFO': 0, 'PASS': 0}
    for r in results.values():
        summary[r['status']] += 1
    for level in ('ERROR', 'WARN', 'INFO'):
        if summary[level] > 0:
            return {'status': level, 'summary': summary}
    return {'status': 'PASS', 'summary': summary}


def save_report(report, outdir, filename='report.json'):
    path = os.path.join(outdir, filename)
    save_json(to_plain(report), path)
    logging.info(f"Wrote {path}")
    return path
