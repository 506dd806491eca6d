import os
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from lib import ConfigError, ZdshapeConfig
from shaping.dynamics import MassParams
from shaping.optimize import GAConfig, ga_minimize, rms, fit_linear_spring, optimize_spring, \
    fit_spring_orders, optimize_mass, mass_fitness
from shaping.mechanism import model_from_config
from shaping.reference import reference_from_config
from shaping.spring import SpringParams, SpringBounds, TabulatedSpring
from shaping.zerodyn import ReferenceSlice, ZeroDynamicsTable, track_reference, orbit_deviation

from conftest import FIRST_CONFIG, SECOND_CONFIG

TARGET = np.array([0.3, -0.2, 0.5])


def sphere(x):
    return float(np.sum((x - TARGET) ** 2))


def test_rms():
    assert rms([3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
    with pytest.raises(ValueError):
        rms([])


@pytest.mark.parametrize('block', [
    {'population': 0},
    {'mutation_rate': 1.5},
    {'elites': 50, 'population': 20},
    {'populaton': 20},
])
def test_invalid_ga_config(block):
    with pytest.raises(ConfigError):
        GAConfig.from_dict(block)


def test_overrides_skip_missing_values():
    cfg = GAConfig.from_dict({'seed': 4, 'workers': 2}, seed=None, workers=3)
    assert cfg.seed == 4
    assert cfg.workers == 3
    assert cfg.with_seed(9).seed == 9


def test_ga_finds_the_minimum():
    cfg = GAConfig(population=40, generations=60, restarts=2, seed=1)
    result = ga_minimize(sphere, -np.ones(3), np.ones(3), cfg)
    np.testing.assert_allclose(result.best, TARGET, atol=0.05)
    assert result.value == pytest.approx(sphere(result.best))


def test_ga_is_deterministic_across_workers():
    cfg = GAConfig(population=20, generations=10, restarts=2, seed=11)
    serial = ga_minimize(sphere, -np.ones(3), np.ones(3), cfg)
    threaded = ga_minimize(sphere, -np.ones(3), np.ones(3), replace(cfg, workers=4))
    np.testing.assert_array_equal(serial.best, threaded.best)
    pd.testing.assert_frame_equal(serial.telemetry, threaded.telemetry)


def test_ga_stays_in_the_box():
    seen = []

    def fitness(x):
        seen.append(x.copy())
        return -float(np.sum(x))

    lower, upper = np.array([0.0, -1.0]), np.array([0.5, 2.0])
    ga_minimize(fitness, lower, upper, GAConfig(population=10, generations=5, restarts=1))
    seen = np.array(seen)
    assert np.all(seen >= lower) and np.all(seen <= upper)


def test_injected_point_is_never_lost():
    def fitness(x):
        return float(np.sum(x ** 2)) + 1.0

    cfg = GAConfig(population=10, generations=8, restarts=2, seed=2)
    result = ga_minimize(fitness, np.zeros(2), np.ones(2), cfg, injected=[np.zeros(2)])
    assert result.value == 1.0


def test_telemetry_tracks_best_so_far():
    cfg = GAConfig(population=16, generations=12, restarts=2, seed=5)
    telemetry = ga_minimize(sphere, -np.ones(3), np.ones(3), cfg).telemetry
    assert list(telemetry.columns) == ['restart', 'generation', 'best', 'mean']
    assert len(telemetry) == 24
    for _, group in telemetry.groupby('restart'):
        assert np.all(np.diff(group['best'].to_numpy()) <= 0)


def test_non_finite_fitness_counts_as_worst():
    def fitness(x):
        return np.nan if x[0] < 0.5 else float(x[0])

    result = ga_minimize(fitness, np.zeros(1), np.ones(1), GAConfig(population=12, generations=6, restarts=1))
    assert result.best[0] >= 0.5


def test_linear_spring_in_closed_form():
    theta = np.linspace(2.0, 2.5, 50)
    p_s = fit_linear_spring(theta, 2.0 * (theta - 2.2), SpringBounds(10.0, 2.0, 2.5))
    assert p_s.k0 == pytest.approx(2.0)
    assert p_s.theta0 == pytest.approx(2.2)


def test_linear_spring_slope_is_clipped():
    theta = np.linspace(2.0, 2.5, 50)
    p_s = fit_linear_spring(theta, -1.0 * (theta - 2.2), SpringBounds(10.0, 2.0, 2.5))
    assert p_s.k0 == 0.0


def knee_table():
    theta = np.linspace(2.0, 2.6, 121)
    truth = SpringParams(1.0, 2.3, ((4.0, 2.45, 2.0, 2.1),))
    return TabulatedSpring(theta, truth(theta))


def test_spring_fit_error_decreases_with_order(small_ga):
    fits = fit_spring_orders(knee_table(), [0, 1, 2], small_ga, k_max=10.0)
    mismatch = [fits[n].mismatch for n in (0, 1, 2)]
    assert mismatch[1] <= mismatch[0]
    assert mismatch[2] <= mismatch[1]
    assert fits[2].n == 2
    assert list(fits[1].residuals.columns) == ['theta', 'sigma_star', 'fitted', 'residual']


def test_spring_fit_is_reproducible(small_ga):
    first = optimize_spring(knee_table(), 1, small_ga)
    second = optimize_spring(knee_table(), 1, small_ga)
    np.testing.assert_array_equal(first.p_s.as_array(), second.p_s.as_array())


def test_mass_fitness_penalizes_designs_without_center(reference_slice):
    fitness = mass_fitness(reference_slice, penalty=100.0)
    evaluation = reference_slice.evaluate(MassParams())
    expected = rms(evaluation.nu) + (0.0 if evaluation.feasible else 100.0)
    assert fitness(np.zeros(4)) == pytest.approx(expected)


@pytest.mark.slow
def test_optimized_masses_beat_the_bare_design(reference_slice):
    cfg = GAConfig(population=16, generations=6, restarts=1, seed=0)
    lower = np.array([0.0, 0.0, -0.05, -0.05])
    upper = np.array([0.1, 0.1, 0.05, 0.05])
    result = optimize_mass(reference_slice, lower, upper, cfg)
    assert result.rms <= result.baseline_rms
    assert result.center.is_center
    assert len(result.sigma_star) > 1


def test_planted_spring_is_recovered(small_ga):
    fits = fit_spring_orders(knee_table(), [0, 1], small_ga, k_max=10.0)
    assert fits[1].mismatch < 1e-6
    np.testing.assert_allclose(fits[1].p_s.pairs[0], (4.0, 2.45, 2.0, 2.1), atol=5e-2)


@pytest.mark.slow
@pytest.mark.parametrize('configfile', [FIRST_CONFIG, SECOND_CONFIG])
def test_bundled_designs_cut_the_torque(configfile):
    config = ZdshapeConfig(configfile)
    model = model_from_config(config)
    ref = reference_from_config(config.get_reference())
    ga = GAConfig(population=80, generations=80, restarts=2, seed=0, workers=os.cpu_count() or 1)
    lower, upper = config.get_mass_bounds()
    mass = optimize_mass(ReferenceSlice(model, ref, config.get_samples()), lower, upper, ga)
    assert mass.reduction >= 0.10
    assert mass.center.is_center

    fits = fit_spring_orders(mass.sigma_star, [1, 2, 3], ga, config.get_spring_k_max())
    table = ZeroDynamicsTable.around(model, mass.p_m, ref)
    deviation = [orbit_deviation(track_reference(table, fits[n].p_s, ref), ref)['orbital_deviation']
                 for n in (1, 2, 3)]
    assert deviation[1] <= 1.01 * deviation[0]
    assert deviation[2] <= 1.01 * deviation[1]
