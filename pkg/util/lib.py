#!/usr/bin/env python3

import os
import math
import json
import yaml
import logging
import hashlib
import jsonschema

import numpy as np


class ZdshapeError(Exception):
    """Base class of every failure raised by the shaping pipeline."""


class ConfigError(ZdshapeError):
    pass


class KinematicsError(ZdshapeError):
    pass


class NonConvergence(KinematicsError):
    pass


class SingularJacobian(KinematicsError):
    pass


class NotPositiveDefinite(ZdshapeError):
    pass


class ZeroInputGain(ZdshapeError):
    pass


class AlphaVanishes(ZdshapeError):
    pass


class ZetaSVanishes(ZdshapeError):
    pass


class NoEquilibrium(ZdshapeError):
    pass


class Escape(ZdshapeError):
    pass


class ReferenceShapeError(ZdshapeError):
    pass


class ExtraVelocityZeros(ReferenceShapeError):
    pass


class InfeasibleTiming(ReferenceShapeError):
    pass


class NonMonotoneHalfPeriod(ReferenceShapeError):
    pass


class EmptyTable(ZdshapeError):
    pass


class NonMonotoneAbscissa(ZdshapeError):
    pass


class InfeasibleProblem(ZdshapeError):
    pass


class MissingArtifact(ZdshapeError):
    pass


# Exit codes of the command line, one per pipeline stage.
EXIT_CODES = {
    'config': 2,
    'reference': 3,
    'mass': 4,
    'spring': 5,
    'simulate': 6,
    'report': 7,
    'check': 8,
    'artifact': 9,
}

_number = {'type': 'number'}
_positive = {'type': 'number', 'exclusiveMinimum': 0}
_pair = {'type': 'array', 'items': _number, 'minItems': 2, 'maxItems': 2}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "zdshape pipeline config",
    "type": "object",
    "required": ["mechanism", "reference"],
    "properties": {
        "title": {"type": "string"},
        "mechanism": {
            "type": "object",
            "required": ["lengths", "masses", "inertias", "base"],
            "properties": {
                "lengths": {
                    "type": "object",
                    "required": ["l1", "l2", "l3", "l4"],
                    "properties": {k: _positive for k in ("l1", "l2", "l3", "l4")},
                },
                "masses": {
                    "type": "object",
                    "required": ["m1", "m2", "m3", "m4"],
                    "properties": {k: _positive for k in ("m1", "m2", "m3", "m4")},
                },
                "inertias": {
                    "type": "object",
                    "required": ["J1", "J2", "J3", "J4"],
                    "properties": {k: {'type': 'number', 'minimum': 0} for k in ("J1", "J2", "J3", "J4")},
                },
                "base": _pair,
                "anchor": _pair,
                "gravity": {'type': 'number', 'minimum': 0},
                "elbow": {"enum": [1, -1]},
            },
        },
        "mass_bounds": {
            "type": "object",
            "properties": {"m_a": _pair, "delta": _pair},
        },
        "spring": {
            "type": "object",
            "properties": {
                "k_max": _positive,
                "orders": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
        },
        "reference": {
            "type": "object",
            "required": ["family", "period", "height"],
            "properties": {
                "family": {"enum": ["cosine", "scurve"]},
                "period": _positive,
                "height": _number,
                "samples": {"type": "integer", "minimum": 2},
                "cosine": {
                    "type": "object",
                    "required": ["offset", "coefficients"],
                    "properties": {
                        "offset": _number,
                        "coefficients": {"type": "array", "items": _number, "minItems": 1},
                    },
                },
                "scurve": {
                    "type": "object",
                    "required": ["x_min", "x_max", "cruise_fraction"],
                    "properties": {
                        "x_min": _number,
                        "x_max": _number,
                        "cruise_fraction": _number,
                        "jerk_fraction": _number,
                    },
                },
            },
        },
        "ga": {
            "type": "object",
            "properties": {
                "population": {"type": "integer", "minimum": 2},
                "generations": {"type": "integer", "minimum": 1},
                "tournament": {"type": "integer", "minimum": 1},
                "crossover_rate": {'type': 'number', 'minimum': 0, 'maximum': 1},
                "blend": {'type': 'number', 'minimum': 0},
                "mutation_rate": {'type': 'number', 'minimum': 0, 'maximum': 1},
                "mutation_scale": {'type': 'number', 'minimum': 0},
                "elites": {"type": "integer", "minimum": 0},
                "penalty": _positive,
                "seed": {"type": "integer", "minimum": 0},
                "restarts": {"type": "integer", "minimum": 1},
                "anneal": {'type': 'number', 'minimum': 0, 'maximum': 1},
            },
        },
        "simulation": {
            "type": "object",
            "properties": {
                "dt": {"type": ["number", "null"]},
                "periods": _positive,
                "gains": _pair,
                "closed_loop": {"type": "boolean"},
                "step_check": {"type": "boolean"},
            },
        },
        "output": {"type": "string"},
        "published": {
            "type": "object",
            "properties": {"baseline_rms": _number, "optimized_rms": _number, "reduction": _number},
        },
    },
}


class ZdshapeConfig:

    def __init__(self, config_file):
        self.path = config_file
        try:
            with open(config_file, 'r') as f:
                self.config = yaml.load(f, Loader=yaml.SafeLoader)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            line = f" (line {mark.line + 1})" if mark is not None else ""
            raise ConfigError(f"{config_file}: not valid YAML{line}: {e}")
        except OSError as e:
            raise ConfigError(f"{config_file}: {e}")
        if not isinstance(self.config, dict):
            raise ConfigError(f"{config_file}: expected a mapping at the top level")
        validate_config(self.config, config_file)

    @classmethod
    def from_dict(cls, config, source="config"):
        """Config from an already parsed mapping, e.g. the echo in a report."""
        self = cls.__new__(cls)
        self.path = source
        self.config = config
        validate_config(config, source)
        return self

    def get_title(self):
        if "title" in self.config:
            return self.config.get("title")
        else:
            return os.path.splitext(os.path.basename(self.path))[0]

    def get_mechanism(self):
        """Return the mechanism block as keyword arguments of MechanismModel."""
        mech = self.config['mechanism']
        lengths = mech['lengths']
        masses = mech['masses']
        inertias = mech['inertias']
        return {
            'lengths': tuple(float(lengths[k]) for k in ("l1", "l2", "l3", "l4")),
            'masses': tuple(float(masses[k]) for k in ("m1", "m2", "m3", "m4")),
            'inertias': tuple(float(inertias[k]) for k in ("J1", "J2", "J3", "J4")),
            'base': tuple(float(v) for v in mech['base']),
            'anchor': tuple(float(v) for v in mech.get('anchor', (0.0, 0.0))),
            'gravity': float(mech.get('gravity', 9.81)),
            'elbow': int(mech.get('elbow', -1)),
        }

    def get_mass_bounds(self):
        bounds = self.config.get('mass_bounds', {})
        m_a = bounds.get('m_a', [0.0, 0.1])
        delta = bounds.get('delta', [-0.05, 0.05])
        lower = np.array([m_a[0], m_a[0], delta[0], delta[0]], dtype=float)
        upper = np.array([m_a[1], m_a[1], delta[1], delta[1]], dtype=float)
        return lower, upper

    def get_spring_k_max(self):
        return float(self.config.get('spring', {}).get('k_max', 10.0))

    def get_spring_orders(self):
        return sorted(set(int(n) for n in self.config.get('spring', {}).get('orders', [1, 2, 3])))

    def get_reference(self):
        return dict(self.config['reference'])

    def get_samples(self):
        return int(self.config['reference'].get('samples', 1000))

    def get_ga_config(self):
        return dict(self.config.get('ga', {}))

    def get_simulation(self):
        sim = self.config.get('simulation', {})
        period = float(self.config['reference']['period'])
        dt = sim.get('dt')
        return {
            'dt': float(dt) if dt is not None else period / 1e4,
            'periods': float(sim.get('periods', 1.0)),
            'gains': tuple(float(g) for g in sim.get('gains', (0.0, 0.0))),
            'closed_loop': bool(sim.get('closed_loop', True)),
            'step_check': bool(sim.get('step_check', False)),
        }

    def get_output_dir(self):
        if "output" in self.config:
            return self.config.get("output")
        else:
            return os.path.join("build", self.get_title())

    def config_hash(self):
        return config_hash(self.config)


def validate_config(config, source="config"):
    """Validate a parsed config against CONFIG_SCHEMA.

    Raises ConfigError naming the first offending field, e.g.
    'mechanism.lengths.l2: required property missing'.
    """
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.path))
    if not errors:
        return
    error = errors[0]
    path = [str(p) for p in error.path]
    if error.validator == 'required':
        missing = error.message.split("'")[1]
        path.append(missing)
        message = "required field missing"
    else:
        message = error.message
    field = '.'.join(path) if path else '<root>'
    raise ConfigError(f"{source}: {field}: {message}")


def config_hash(config):
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def sha256sum(filename):
    h  = hashlib.sha256()
    b  = bytearray(128*1024)
    mv = memoryview(b)
    with open(filename, 'rb', buffering=0) as f:
        for n in iter(lambda : f.readinto(mv), 0):
            h.update(mv[:n])
    return h.hexdigest()


def load_yaml(filepath):
    with open(filepath, 'r') as f:
        data = yaml.load(f, Loader=yaml.SafeLoader)
    return data


def save_yaml(dictionary, file_path):
    with open(file_path, 'w') as file:
        yaml.dump(dictionary, file)


def round_sig(value, digits=12):
    """Round a float to a fixed number of significant digits."""
    if value == 0 or not math.isfinite(value):
        return value
    return float(f"{value:.{digits}g}")


def to_plain(data, digits=12):
    """Turn numpy containers into JSON-ready python values, floats rounded."""
    if isinstance(data, dict):
        return {str(k): to_plain(v, digits) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_plain(v, digits) for v in data]
    if isinstance(data, np.ndarray):
        return [to_plain(v, digits) for v in data.tolist()]
    if isinstance(data, (bool, np.bool_)):
        return bool(data)
    if isinstance(data, (int, np.integer)):
        return int(data)
    if isinstance(data, (float, np.floating)):
        value = float(data)
        if not math.isfinite(value):
            return None
        return round_sig(value, digits)
    return data


def save_json(dictionary, file_path):
    with open(file_path, 'w') as f:
        json.dump(to_plain(dictionary), f, indent=2, sort_keys=True)
        f.write("\n")


def load_json(file_path):
    if not os.path.isfile(file_path):
        raise MissingArtifact(f"{file_path} does not exist")
    with open(file_path, 'r') as f:
        return json.load(f)


def setup_logging():
    level = os.environ.get('ZDSHAPE_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format='%(asctime)s %(levelname)s %(message)s')
