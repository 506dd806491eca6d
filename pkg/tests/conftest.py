import os

import pytest

from lib import load_yaml, save_yaml
from shaping.mechanism import MechanismModel
from shaping.optimize import GAConfig
from shaping.reference import make_cosine_reference, make_scurve_reference
from shaping.zerodyn import ReferenceSlice

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIRST_CONFIG = os.path.join(ROOT, 'first-reference-config.yml')
SECOND_CONFIG = os.path.join(ROOT, 'second-reference-config.yml')


@pytest.fixture(scope='session')
def model():
    return MechanismModel(lengths=(0.080, 0.235, 0.052, 0.135),
                          masses=(0.071, 0.195, 0.049, 0.115),
                          inertias=(0.747e-4, 10.413e-4, 0.345e-4, 2.430e-4),
                          base=(-0.19, 0.15))


@pytest.fixture(scope='session')
def cosine_ref():
    return make_cosine_reference(0.035, [0.045, 0.010], 0.5, 0.15)


@pytest.fixture(scope='session')
def scurve_ref():
    return make_scurve_reference(0.0, 0.09, 0.4, 0.5, 0.15)


@pytest.fixture(scope='session')
def reference_slice(model, cosine_ref):
    return ReferenceSlice(model, cosine_ref, 200)


@pytest.fixture
def small_ga():
    return GAConfig(population=24, generations=15, restarts=2, seed=3)


@pytest.fixture
def small_config(tmp_path):
    """First bundled config with a budget small enough for a test run."""
    def make(**changes):
        config = load_yaml(FIRST_CONFIG)
        config['reference']['samples'] = 200
        config['ga'] = {'population': 12, 'generations': 4, 'restarts': 1, 'seed': 5}
        config['spring']['orders'] = [1, 2]
        config['simulation'] = {'dt': 1e-4, 'periods': 0.2, 'closed_loop': False}
        config['output'] = str(tmp_path / 'out')
        for key, value in changes.items():
            config[key] = value
        path = tmp_path / 'config.yml'
        save_yaml(config, str(path))
        return str(path)
    return make
