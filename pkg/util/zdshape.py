#!/usr/bin/env python3

import os
import sys
import time
import click
import logging
from contextlib import contextmanager

from lib import ZdshapeConfig, ZdshapeError, MissingArtifact, EXIT_CODES, setup_logging, \
    load_json, save_json, to_plain
from create_report_html import render_report
from shaping.checks import run_checks
from shaping.dynamics import MassParams
from shaping.mechanism import model_from_config
from shaping.optimize import GAConfig, optimize_mass, optimize_spring, fit_spring_orders, rms
from shaping.reference import reference_from_config, sample
from shaping.report_utils import save_frame, save_report, mass_summary, spring_summary, \
    closed_loop_summary, center_summary, process_results
from shaping.sim import run_on_reference, energy_audit
from shaping.spring import SpringParams, load_sigma_table
from shaping.zerodyn import ReferenceSlice, ZeroDynamicsTable, track_reference, orbit_deviation, \
    step_halving_error

setup_logging()


@contextmanager
def stage(name):
    """Turn a pipeline failure into the exit code of its stage."""
    try:
        yield
    except MissingArtifact as e:
        click.echo(f"Error: missing artifact: {e}", err=True)
        sys.exit(EXIT_CODES['artifact'])
    except ZdshapeError as e:
        logging.debug("Traceback", exc_info=True)
        click.echo(f"Error in stage {name}: {e}", err=True)
        sys.exit(EXIT_CODES[name])


@click.group()
def cli():
    pass


def validate_design(model, ref, p_m, sigma_star, springs, simulation, outdir, manifest):
    """Zero-dynamics and closed-loop validation of a design.

    Args:
        springs (dict): n -> SpringParams
        simulation (dict): ZdshapeConfig.get_simulation()

    Return:
        {'ideal': {...}, 'n<n>': {...}} of orbit and closed-loop metrics
    """
    dt = simulation['dt']
    periods = simulation['periods']
    table = ZeroDynamicsTable.around(model, p_m, ref)
    metrics = {}

    trajectory = track_reference(table, sigma_star, ref, dt, periods)
    save_frame(trajectory.frame, outdir, 'zerodyn_ideal.csv', manifest,
               'zero dynamics under the ideal spring, started on the reference')
    metrics['ideal'] = {'orbit': orbit_deviation(trajectory, ref), 'period': trajectory.period,
                        'fault': trajectory.fault}

    for n, p_s in sorted(springs.items()):
        entry = {}
        trajectory = track_reference(table, p_s, ref, dt, periods)
        save_frame(trajectory.frame, outdir, f'zerodyn_n{n}.csv', manifest,
                   f'zero dynamics under the fitted {n}-pair spring')
        entry['orbit'] = orbit_deviation(trajectory, ref)
        entry['period'] = trajectory.period
        entry['fault'] = trajectory.fault
        if simulation['step_check']:
            entry['step_error'] = step_halving_error(table, p_s, ref, dt, periods)
        if simulation['closed_loop']:
            loop = run_on_reference(model, p_m, p_s, ref, dt, periods, simulation['gains'])
            save_frame(loop.frame, outdir, f'closed_loop_n{n}.csv', manifest,
                       f'closed loop under the height-holding torque, {n}-pair spring')
            entry['closed_loop'] = closed_loop_summary(loop, ref, energy_audit(loop))
        metrics[f'n{n}'] = entry
        logging.info(f"n={n}: orbital deviation {entry['orbit']['orbital_deviation']:.4g}")
    return metrics


@cli.command()
@click.argument('configfile', type=click.Path(exists=True))
@click.option('--seed', type=int, default=None, help="GA root seed (overrides ga.seed).")
@click.option('--workers', type=int, default=None,
              help="Threads evaluating GA fitness (default: available CPUs).")
@click.option('--out', type=click.Path(), default=None,
              help="Output directory (default: the config's output, else build/<title>).")
def run(configfile, seed, workers, out):
    """Run the two-step design pipeline on CONFIGFILE."""
    started = time.time()
    timing = {}
    with stage('config'):
        config = ZdshapeConfig(configfile)
        workers = workers or os.cpu_count() or 1
        ga = GAConfig.from_dict(config.get_ga_config(), seed=seed, workers=workers)
        outdir = out or config.get_output_dir()
        os.makedirs(outdir, exist_ok=True)
    manifest = {}
    logging.info(f"Running {config.get_title()} into {outdir} (seed {ga.seed}, {ga.workers} workers)")

    with stage('reference'):
        model = model_from_config(config)
        ref = reference_from_config(config.get_reference())
        save_frame(sample(ref, config.get_samples()), outdir, 'reference.csv', manifest,
                   'reference sampled over one period')
        reference_slice = ReferenceSlice(model, ref, config.get_samples())
    timing['reference'] = time.time() - started

    with stage('mass'):
        lower, upper = config.get_mass_bounds()
        mass = optimize_mass(reference_slice, lower, upper, ga)
        save_frame(mass.sigma_star.to_frame(), outdir, 'sigma_star.csv', manifest,
                   'ideal spring characteristic of the optimized design')
        save_frame(mass.telemetry, outdir, 'mass_ga.csv', manifest, 'GA telemetry, added masses')
    timing['mass'] = time.time() - started

    with stage('spring'):
        fits = fit_spring_orders(mass.sigma_star, config.get_spring_orders(), ga, config.get_spring_k_max())
        for n, fit in fits.items():
            save_frame(fit.residuals, outdir, f'spring_fit_n{n}.csv', manifest, f'{n}-pair spring fit')
            save_frame(fit.telemetry, outdir, f'spring_ga_n{n}.csv', manifest, f'GA telemetry, {n}-pair spring')
    timing['spring'] = time.time() - started

    with stage('simulate'):
        # validated as stored in report.json
        p_m = MassParams(**to_plain(mass_summary(mass)['p_m']))
        springs = {n: SpringParams.from_array(to_plain(fit.p_s.as_array())) for n, fit in fits.items()}
        sigma_star = reference_slice.evaluate(p_m).sigma_table()
        validation = validate_design(model, ref, p_m, sigma_star, springs,
                                     config.get_simulation(), outdir, manifest)
    timing['simulate'] = time.time() - started

    with stage('report'):
        report = {
            'title': config.get_title(),
            'config': config.config,
            'config_hash': config.config_hash(),
            'seed': ga.seed,
            'reference': {**ref.describe(), 'x_min': ref.x_min, 'x_max': ref.x_max,
                          'stroke': ref.stroke, 'samples': config.get_samples()},
            'mass': mass_summary(mass, config.config.get('published')),
            'springs': {f'n{n}': spring_summary(fit) for n, fit in fits.items()},
            'validation': validation,
            'manifest': manifest,
            'timing': timing,
        }
        save_report(report, outdir)
        render_report(report, os.path.join(outdir, 'report.html'))
    logging.info(f"Done in {time.time() - started:.1f} s")


def compare_metrics(old, new):
    """Largest absolute difference between matching numeric leaves."""
    if isinstance(old, dict) and isinstance(new, dict):
        return max([compare_metrics(old[k], new[k]) for k in old if k in new] or [0.0])
    if isinstance(old, (int, float)) and isinstance(new, (int, float)) \
            and not isinstance(old, bool) and not isinstance(new, bool):
        return abs(float(old) - float(new))
    return 0.0


@cli.command()
@click.argument('reportfile', type=click.Path())
@click.option('--out', type=click.Path(), default=None,
              help="Output directory (default: the directory of REPORTFILE).")
def simulate(reportfile, out):
    """Re-run the validation simulations of a saved design."""
    with stage('artifact'):
        report = load_json(reportfile)
    with stage('config'):
        config = ZdshapeConfig.from_dict(report['config'], reportfile)
        model = model_from_config(config)
    with stage('reference'):
        ref = reference_from_config(config.get_reference())
    outdir = out or os.path.dirname(os.path.abspath(reportfile))
    os.makedirs(outdir, exist_ok=True)

    with stage('simulate'):
        p_m = MassParams(**report['mass']['p_m'])
        evaluation = ReferenceSlice(model, ref, config.get_samples()).evaluate(p_m)
        springs = {int(k[1:]): SpringParams.from_array(v['params']) for k, v in report['springs'].items()}
        manifest = {}
        validation = validate_design(model, ref, p_m, evaluation.sigma_table(), springs,
                                     config.get_simulation(), outdir, manifest)
    with stage('report'):
        torque_rms = rms(evaluation.nu)
        result = {
            'report': os.path.abspath(reportfile),
            'config_hash': config.config_hash(),
            'rms': torque_rms,
            'center': center_summary(evaluation.center),
            'validation': validation,
            'max_difference': max(compare_metrics(report['validation'], to_plain(validation)),
                                  abs(torque_rms - report['mass']['rms'])),
            'manifest': manifest,
        }
        save_json(result, os.path.join(outdir, 'simulate.json'))
    click.echo(f"max difference to the saved report: {result['max_difference']:.3e}")


@cli.command('fit-spring')
@click.option('--table', 'tablefile', required=True, type=click.Path(),
              help="CSV with theta and torque columns (e.g. sigma_star.csv).")
@click.option('--n', 'order', required=True, type=int, help="Number of sub-spring pairs.")
@click.option('--k-max', type=float, default=10.0, show_default=True, help="Slope bound [N m/rad].")
@click.option('--seed', type=int, default=None, help="GA root seed.")
@click.option('--configfile', type=click.Path(exists=True), default=None,
              help="Config whose ga block is used (defaults otherwise).")
@click.option('--workers', type=int, default=1, show_default=True)
@click.option('--out', type=click.Path(), default=None, help="Directory for the fit CSVs.")
def fit_spring(tablefile, order, k_max, seed, configfile, workers, out):
    """Fit an n-pair spring to a tabulated characteristic."""
    with stage('artifact'):
        table = load_sigma_table(tablefile)
    with stage('config'):
        block = ZdshapeConfig(configfile).get_ga_config() if configfile else {}
        ga = GAConfig.from_dict(block, seed=seed, workers=workers)
    with stage('spring'):
        fit = optimize_spring(table, order, ga, k_max)
    if out:
        os.makedirs(out, exist_ok=True)
        manifest = {}
        save_frame(fit.residuals, out, f'spring_fit_n{order}.csv', manifest, f'{order}-pair spring fit')
        save_frame(fit.telemetry, out, f'spring_ga_n{order}.csv', manifest, f'GA telemetry, {order}-pair spring')
    summary = spring_summary(fit)
    click.echo(f"n={order} mismatch={summary['mismatch']:.12g}")
    click.echo("params=" + ",".join(f"{v:.12g}" for v in summary['params']))


@cli.command()
@click.argument('configfile', type=click.Path(exists=True))
def check(configfile):
    """Run the invariant suite on CONFIGFILE."""
    with stage('config'):
        config = ZdshapeConfig(configfile)
        model = model_from_config(config)
    with stage('reference'):
        ref = reference_from_config(config.get_reference())
    lower, upper = config.get_mass_bounds()
    results = run_checks(model, ref, lower, upper, config.get_samples())
    for name, r in results.items():
        click.echo(f"{r['status']:<6} {name:<22} {r['comment']}")
    overall = process_results(results)
    click.echo(f"overall: {overall['status']}")
    if overall['status'] == 'ERROR':
        sys.exit(EXIT_CODES['check'])


if __name__ == '__main__':
    cli()
