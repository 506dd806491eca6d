from dataclasses import replace

import numpy as np
import pandas as pd

from create_report_html import format_number, spring_rows
from shaping.checks import result, check_mass_placement, run_checks, check_inertia_and_gains, _sign_flips
from shaping.report_utils import process_results, save_frame


def test_worst_status_wins():
    results = {'a': result('PASS'), 'b': result('INFO', 'note'), 'c': result('WARN', 'careful')}
    overall = process_results(results)
    assert overall['status'] == 'WARN'
    assert overall['summary'] == {'ERROR': 0, 'WARN': 1, 'INFO': 1, 'PASS': 1}
    assert process_results({'a': result('PASS')})['status'] == 'PASS'


def test_wide_offset_box_is_reported(model):
    lower = np.array([0.0, 0.0, -0.05, -0.05])
    assert check_mass_placement(model, lower, -lower + [0.1, 0.1, 0.0, 0.0])['status'] == 'INFO'
    tight = np.array([0.0, 0.0, -0.01, -0.01])
    assert check_mass_placement(model, tight, -tight + [0.1, 0.1, 0.0, 0.0])['status'] == 'PASS'


def test_bundled_reference_passes_every_check(model, cosine_ref):
    lower = np.array([0.0, 0.0, -0.02, -0.02])
    upper = np.array([0.1, 0.1, 0.02, 0.02])
    results = run_checks(model, cosine_ref, lower, upper, samples=200)
    assert set(results) == {'reference_symmetry', 'kinematics', 'coordinate_jacobian', 'inertia_and_gains',
                            'inertia_partials', 'mass_placement', 'baseline_center'}
    assert all(r['status'] != 'ERROR' for r in results.values())


def test_manifest_records_the_written_frame(tmp_path):
    manifest = {}
    path = save_frame(pd.DataFrame({'t': [0.0, 0.1], 'x': [1.0, 2.0]}), str(tmp_path), 'a.csv', manifest, 'demo')
    entry = manifest['a.csv']
    assert entry['rows'] == 2
    assert entry['columns'] == {'t': 'time [s]', 'x': 'end-effector x [m]'}
    assert len(entry['sha256']) == 64
    assert pd.read_csv(path)['x'].tolist() == [1.0, 2.0]


def test_spring_rows_flag_faults():
    report = {
        'springs': {'n1': {'n': 1, 'mismatch': 0.1}, 'n2': {'n': 2, 'mismatch': 0.05}},
        'validation': {
            'n1': {'orbit': {'orbital_deviation': 0.01, 'relative_position_error': 0.002}, 'fault': None,
                   'closed_loop': {'label': 'exact', 'fault': None}},
            'n2': {'orbit': {'orbital_deviation': 0.3, 'relative_position_error': 0.2},
                   'fault': {'t': 0.1, 'reason': 'Escape'}},
        },
    }
    rows = spring_rows(report)
    assert [row['n'] for row in rows] == [1, 2]
    assert rows[0]['level'] == 'PASS'
    assert rows[1]['level'] == 'ERROR'
    assert rows[1]['fault'] == 'Escape'
    assert rows[1]['closed_loop'] is None
    assert format_number(None) == '-'
    assert format_number(0.123456789) == '0.1235'


def test_gain_sign_change_between_samples_is_an_error(model, cosine_ref):
    other_branch = replace(model, elbow=1)
    bare = np.zeros(4)
    report = check_inertia_and_gains(other_branch, cosine_ref, 200, bare, bare)
    assert report['status'] == 'ERROR'
    assert 'alpha' in report['sign_changes']
    assert 'g_y' in report['sign_changes']
    assert report['min_alpha'] > 1e-12


def test_default_branch_keeps_the_gains_signed_over_the_box(model, cosine_ref, scurve_ref):
    lower = np.array([0.0, 0.0, -0.05, -0.05])
    upper = np.array([0.1, 0.1, 0.05, 0.05])
    for ref in (cosine_ref, scurve_ref):
        report = check_inertia_and_gains(model, ref, 500, lower, upper)
        assert report['status'] == 'PASS', report['comment']
        assert report['sign_changes'] == []


def test_sign_flips_are_located_between_samples():
    x = np.array([0.3, 0.0, 0.1, 0.2])
    values = np.array([1.0, 1.0, 0.5, -0.5])
    np.testing.assert_allclose(_sign_flips(x, values), [0.15])
    assert len(_sign_flips(x, np.ones(4))) == 0
