import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lib import EmptyTable, NonMonotoneAbscissa, MissingArtifact
from shaping.spring import SpringParams, SpringBounds, TabulatedSpring, eval_spring, breakpoints, \
    tabulate_ideal, validate_params, save_sigma_table, load_sigma_table

slopes = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
angles = st.floats(min_value=1.0, max_value=3.0, allow_nan=False)
pairs = st.tuples(slopes, angles, slopes, angles)
springs = st.builds(SpringParams, st.floats(min_value=0.0, max_value=10.0), angles,
                    st.lists(pairs, max_size=3).map(tuple))


def test_linear_spring():
    assert SpringParams(1.0, 0.0)(0.5) == pytest.approx(0.5)
    assert SpringParams(2.0, 1.0)(0.0) == pytest.approx(-2.0)


def test_one_sided_sub_springs():
    p_s = SpringParams(0.0, 0.0, ((2.0, 1.0, 3.0, -1.0),))
    assert p_s(2.0) == pytest.approx(2.0)
    assert p_s(-2.0) == pytest.approx(-3.0)
    assert p_s(0.0) == 0.0
    assert breakpoints(p_s) == [-1.0, 1.0]


@settings(max_examples=50)
@given(springs)
def test_torque_is_continuous_at_thresholds(p_s):
    for theta in breakpoints(p_s):
        left, right = eval_spring(p_s, [theta - 1e-9, theta + 1e-9])
        assert abs(right - left) < 1e-6


@settings(max_examples=50)
@given(springs, st.integers(min_value=0, max_value=3))
def test_nesting_keeps_the_characteristic(p_s, extra):
    theta = np.linspace(0.5, 3.5, 61)
    nested = p_s.nested(p_s.n + extra, threshold=2.0)
    assert nested.n == p_s.n + extra
    np.testing.assert_allclose(nested(theta), p_s(theta), rtol=1e-12, atol=1e-12)


@settings(max_examples=30)
@given(springs)
def test_potential_derivative_is_the_torque(p_s):
    theta = np.linspace(0.6, 3.4, 15)
    h = 1e-6
    derivative = (p_s.potential(theta + h) - p_s.potential(theta - h)) / (2 * h)
    np.testing.assert_allclose(derivative, p_s(theta), atol=1e-4)


def test_flat_layout():
    p_s = SpringParams(1.0, 2.0, ((0.5, 2.1, -0.5, 1.9), (0.1, 2.5, 0.2, 1.5)))
    flat = p_s.as_array()
    assert flat.tolist() == [1.0, 2.0, 0.5, 2.1, -0.5, 1.9, 0.1, 2.5, 0.2, 1.5]
    assert SpringParams.from_array(flat) == p_s
    assert p_s.dimension == 10
    with pytest.raises(ValueError):
        SpringParams.from_array([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        p_s.nested(1)


def test_tabulation_merges_duplicate_knots():
    table = tabulate_ideal([0.0, 0.0, 1.0], [1.0, 3.0, 5.0])
    np.testing.assert_array_equal(table.theta, [0.0, 1.0])
    np.testing.assert_array_equal(table.torque, [2.0, 5.0])


def test_tabulation_errors():
    with pytest.raises(EmptyTable):
        tabulate_ideal([], [])
    with pytest.raises(NonMonotoneAbscissa, match='index 2'):
        tabulate_ideal([0.0, 1.0, 0.5], [0.0, 0.0, 0.0])


def test_table_holds_end_torque_and_warns_once(caplog):
    table = TabulatedSpring([1.0, 2.0], [0.0, 1.0])
    with caplog.at_level(logging.WARNING):
        assert table(3.0) == pytest.approx(1.0)
        assert table(0.0) == pytest.approx(0.0)
        assert table(1.5) == pytest.approx(0.5)
    warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
    assert len(warnings) == 1


def test_table_potential():
    theta = np.linspace(1.0, 2.0, 11)
    table = TabulatedSpring(theta, 2.0 * (theta - 1.0))
    assert table.potential(2.0) == pytest.approx(1.0)
    assert table.potential(1.0) == pytest.approx(0.0)
    assert table.potential(1.25) == pytest.approx(0.0625)
    # linear outside the band
    assert table.potential(3.0) == pytest.approx(1.0 + 2.0)
    assert table.potential(0.0) == pytest.approx(0.0)


def test_bounds_box():
    bounds = SpringBounds(10.0, 2.0, 2.5)
    lower, upper = bounds.box(1)
    np.testing.assert_allclose(lower, [0.0, 1.5, -10.0, 2.0, -10.0, 2.0])
    np.testing.assert_allclose(upper, [10.0, 3.0, 10.0, 2.5, 10.0, 2.5])


def test_validate_params_lists_violations():
    bounds = SpringBounds(10.0, 0.0, 1.0)
    status = validate_params(SpringParams(-1.0, 0.5, ((11.0, 1.5, 0.0, 0.5),)), bounds)
    assert status['status'] == 'ERROR'
    assert status['violations'] == ['k0 < 0', '|k+1| > k_max', 'theta+1 > theta_max']
    assert validate_params(SpringParams(1.0, 0.5, ((1.0, 0.7, -1.0, 0.3),)), bounds)['status'] == 'PASS'


def test_sigma_table_csv(tmp_path):
    table = TabulatedSpring([2.0, 2.1, 2.2], [0.1, -0.2, 0.3])
    path = tmp_path / 'sigma_star.csv'
    save_sigma_table(table, str(path))
    loaded = load_sigma_table(str(path))
    np.testing.assert_allclose(loaded.theta, table.theta)
    np.testing.assert_allclose(loaded.torque, table.torque)
    with pytest.raises(MissingArtifact):
        load_sigma_table(str(tmp_path / 'missing.csv'))
