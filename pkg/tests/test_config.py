import json

import numpy as np
import pytest

from lib import ZdshapeConfig, ConfigError, MissingArtifact, load_yaml, save_yaml, save_json, load_json, \
    to_plain, config_hash
from shaping.mechanism import model_from_config
from shaping.optimize import GAConfig
from shaping.reference import reference_from_config, CosineReference, SCurveReference

from conftest import FIRST_CONFIG, SECOND_CONFIG


def test_bundled_configs_load():
    first = ZdshapeConfig(FIRST_CONFIG)
    second = ZdshapeConfig(SECOND_CONFIG)
    assert first.get_title() == 'first-reference'
    assert first.get_mechanism()['lengths'] == (0.080, 0.235, 0.052, 0.135)
    assert first.get_spring_orders() == [1, 2, 3]
    assert second.get_spring_orders() == [1]
    assert isinstance(reference_from_config(first.get_reference()), CosineReference)
    assert isinstance(reference_from_config(second.get_reference()), SCurveReference)
    assert model_from_config(first).base == (-0.19, 0.15)
    assert model_from_config(first).elbow == -1
    assert model_from_config(second).elbow == -1
    GAConfig.from_dict(first.get_ga_config())


def test_defaults():
    config = ZdshapeConfig.from_dict({
        'mechanism': load_yaml(FIRST_CONFIG)['mechanism'],
        'reference': {'family': 'cosine', 'period': 0.5, 'height': 0.15,
                      'cosine': {'offset': 0.035, 'coefficients': [0.045]}},
    }, 'inline')
    lower, upper = config.get_mass_bounds()
    np.testing.assert_array_equal(lower, [0.0, 0.0, -0.05, -0.05])
    np.testing.assert_array_equal(upper, [0.1, 0.1, 0.05, 0.05])
    assert config.get_spring_k_max() == 10.0
    assert config.get_samples() == 1000
    simulation = config.get_simulation()
    assert simulation['dt'] == pytest.approx(0.5 / 1e4)
    assert simulation['closed_loop'] is True
    assert config.get_output_dir().endswith('inline')


def test_missing_length_names_the_field(tmp_path):
    config = load_yaml(FIRST_CONFIG)
    del config['mechanism']['lengths']['l2']
    path = tmp_path / 'broken.yml'
    save_yaml(config, str(path))
    with pytest.raises(ConfigError, match=r'mechanism\.lengths\.l2'):
        ZdshapeConfig(str(path))


def test_wrong_type_names_the_field(tmp_path):
    config = load_yaml(FIRST_CONFIG)
    config['reference']['period'] = -1
    path = tmp_path / 'broken.yml'
    save_yaml(config, str(path))
    with pytest.raises(ConfigError, match=r'reference\.period'):
        ZdshapeConfig(str(path))


def test_yaml_error_reports_the_line(tmp_path):
    path = tmp_path / 'broken.yml'
    path.write_text("title: x\nmechanism: [1, 2\n")
    with pytest.raises(ConfigError, match='line'):
        ZdshapeConfig(str(path))


def test_missing_file():
    with pytest.raises(ConfigError):
        ZdshapeConfig('does-not-exist.yml')


def test_config_hash_follows_content():
    config = load_yaml(FIRST_CONFIG)
    same = json.loads(json.dumps(config))
    assert config_hash(config) == config_hash(same)
    same['reference']['period'] = 0.6
    assert config_hash(config) != config_hash(same)


def test_json_numbers_are_rounded(tmp_path):
    path = tmp_path / 'report.json'
    save_json({'b': np.float64(1 / 3), 'a': [np.int64(2), np.nan]}, str(path))
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert load_json(str(path)) == {'a': [2, None], 'b': 0.333333333333}
    assert to_plain(np.array([True]))[0] is True
    with pytest.raises(MissingArtifact):
        load_json(str(tmp_path / 'missing.json'))
