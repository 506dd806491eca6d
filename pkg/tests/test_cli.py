import os

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from lib import load_json, load_yaml, save_yaml
from shaping.spring import SpringParams
from zdshape import cli

from conftest import FIRST_CONFIG


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def sigma_csv(tmp_path):
    theta = np.linspace(2.0, 2.6, 81)
    torque = SpringParams(1.0, 2.3, ((4.0, 2.45, 2.0, 2.1),))(theta)
    path = tmp_path / 'sigma.csv'
    pd.DataFrame({'theta': theta, 'torque': torque}).to_csv(path, index=False)
    return str(path)


def test_check_passes_on_the_bundled_config(runner):
    result = runner.invoke(cli, ['check', FIRST_CONFIG])
    assert result.exit_code == 0, result.output
    assert 'overall:' in result.output
    assert 'ERROR' not in result.output


def test_config_error_exit_code(runner, tmp_path):
    config = load_yaml(FIRST_CONFIG)
    del config['mechanism']['lengths']['l2']
    path = tmp_path / 'broken.yml'
    save_yaml(config, str(path))
    result = runner.invoke(cli, ['run', str(path), '--out', str(tmp_path / 'out')])
    assert result.exit_code == 2
    assert 'mechanism.lengths.l2' in result.output


def test_reference_error_exit_code(runner, small_config):
    path = small_config(reference={'family': 'cosine', 'period': 0.5, 'height': 0.15,
                                   'cosine': {'offset': 0.035, 'coefficients': [0.01, 0.05]}})
    result = runner.invoke(cli, ['run', path])
    assert result.exit_code == 3


def test_fit_spring_is_deterministic(runner, sigma_csv, small_config, tmp_path):
    config = small_config()
    args = ['fit-spring', '--table', sigma_csv, '--n', '2', '--seed', '7', '--configfile', config]
    first = runner.invoke(cli, args + ['--out', str(tmp_path / 'fit')])
    second = runner.invoke(cli, args)
    assert first.exit_code == 0, first.output
    assert first.output == second.output
    assert 'n=2 mismatch=' in first.output
    assert os.path.isfile(tmp_path / 'fit' / 'spring_fit_n2.csv')


def test_missing_artifacts_exit_code(runner, tmp_path):
    result = runner.invoke(cli, ['fit-spring', '--table', str(tmp_path / 'nope.csv'), '--n', '1'])
    assert result.exit_code == 9
    result = runner.invoke(cli, ['simulate', str(tmp_path / 'report.json')])
    assert result.exit_code == 9


def strip_timing(report):
    report.pop('timing')
    return report


@pytest.mark.slow
def test_run_then_simulate(runner, small_config, tmp_path):
    config = small_config()
    result = runner.invoke(cli, ['run', config, '--workers', '1'])
    assert result.exit_code == 0, result.output
    out = tmp_path / 'out'
    report = load_json(str(out / 'report.json'))
    for name in ('reference.csv', 'sigma_star.csv', 'mass_ga.csv', 'spring_fit_n1.csv', 'spring_fit_n2.csv',
                 'spring_ga_n2.csv', 'zerodyn_ideal.csv', 'zerodyn_n1.csv', 'zerodyn_n2.csv'):
        assert name in report['manifest']
        assert os.path.isfile(out / name)
    assert os.path.isfile(out / 'report.html')
    assert report['springs']['n2']['mismatch'] <= report['springs']['n1']['mismatch']
    mass = report['mass']
    assert mass['reduction'] == pytest.approx(1 - mass['rms'] / mass['baseline_rms'])
    assert mass['published']['reduction'] == 0.258
    assert list(pd.read_csv(out / 'spring_fit_n1.csv').columns) == ['theta', 'sigma_star', 'fitted', 'residual']

    result = runner.invoke(cli, ['simulate', str(out / 'report.json'), '--out', str(tmp_path / 'again')])
    assert result.exit_code == 0, result.output
    assert load_json(str(tmp_path / 'again' / 'simulate.json'))['max_difference'] < 1e-9


@pytest.mark.slow
def test_run_is_independent_of_workers(runner, small_config, tmp_path):
    config = small_config()
    runner.invoke(cli, ['run', config, '--workers', '1', '--out', str(tmp_path / 'one')])
    runner.invoke(cli, ['run', config, '--workers', '3', '--out', str(tmp_path / 'three')])
    one = strip_timing(load_json(str(tmp_path / 'one' / 'report.json')))
    three = strip_timing(load_json(str(tmp_path / 'three' / 'report.json')))
    assert one == three
