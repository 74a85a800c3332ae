import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachstack.grid import GridSpec, ValueTable, gradient, interpolate


def affine_table(counts=(11, 7, 5)):
    spec = GridSpec((-1.0, 0.0, 2.0), (1.0, 3.0, 4.0), counts)
    return spec, ValueTable(spec, spec.sample(lambda a, b, c: 3 * a - 2 * b + 0.5 * c))


def test_spec_validation():
    with pytest.raises(ValueError):
        GridSpec((0.0,), (0.0,), (3,))
    with pytest.raises(ValueError):
        GridSpec((0.0,), (1.0,), (1,))
    with pytest.raises(ValueError):
        GridSpec((0.0, 0.0), (1.0,), (3, 3))
    spec = GridSpec((0.0, -1.0), (1.0, 1.0), (3, 5))
    assert spec.shape == (3, 5) and spec.size == 15
    np.testing.assert_allclose(spec.spacing, [0.5, 0.5])
    assert spec.periodic == (False, False)


def test_payload_size_checked():
    spec = GridSpec((0.0,), (1.0,), (3,))
    with pytest.raises(ValueError):
        ValueTable(spec, np.zeros(4))
    with pytest.raises(ValueError):
        ValueTable(spec, np.array([0.0, np.nan, 1.0]))


def test_node_queries_return_stored_values():
    rng = np.random.default_rng(3)
    spec = GridSpec((-2.0, 0.0, -1.0), (2.0, 5.0, 1.0), (5, 6, 4))
    table = ValueTable(spec, rng.normal(size=spec.shape))
    for _ in range(50):
        idx = tuple(int(rng.integers(n)) for n in spec.shape)
        assert interpolate(table, spec.node(idx)) == table.data[idx]


def test_linear_midpoint():
    table = ValueTable(GridSpec((0.0,), (1.0,), (2,)), [0.0, 2.0])
    assert table.interpolate(np.array([0.5])) == pytest.approx(1.0)


def test_affine_reproduced_exactly():
    spec = GridSpec((-1.0, -1.0), (1.0, 2.0), (9, 13))
    table = ValueTable(spec, spec.sample(lambda a, b: 3 * a - 2 * b))
    rng = np.random.default_rng(0)
    x = rng.uniform(spec.lower, spec.upper, size=(50, 2))
    np.testing.assert_allclose(table.interpolate(x), 3 * x[:, 0] - 2 * x[:, 1], atol=1e-12)
    np.testing.assert_allclose(table.gradient(x), np.tile([3.0, -2.0], (50, 1)), atol=1e-9)


def test_constant_table_has_zero_gradient():
    spec = GridSpec((0.0, 0.0), (1.0, 1.0), (4, 4))
    table = ValueTable(spec, np.full(spec.shape, 7.5))
    np.testing.assert_array_equal(gradient(table, np.array([0.3, 0.9])), [0.0, 0.0])


def test_quadratic_gradient():
    spec = GridSpec((-1.0,), (1.0,), (101,))
    table = ValueTable(spec, spec.axis(0) ** 2)
    assert table.gradient(np.array([0.3]))[0] == pytest.approx(0.6, abs=1e-3)


def test_out_of_range_clamps_and_periodic_wraps():
    spec = GridSpec((0.0, 0.0), (1.0, 2 * math.pi), (5, 9), periodic=(False, True))
    table = ValueTable(spec, spec.sample(lambda a, th: a + np.cos(th)))
    assert table.interpolate(np.array([3.0, 0.0])) == pytest.approx(table.interpolate(np.array([1.0, 0.0])))
    assert table.interpolate(np.array([0.5, 2 * math.pi + 0.3])) == pytest.approx(
        table.interpolate(np.array([0.5, 0.3])))
    assert table.interpolate(np.array([0.5, -0.3])) == pytest.approx(
        table.interpolate(np.array([0.5, 2 * math.pi - 0.3])))


def test_batch_and_single_agree():
    spec, table = affine_table()
    x = np.array([[0.1, 1.0, 3.3], [-0.7, 2.2, 2.1]])
    v, g = table.value_and_gradient(x)
    for k in range(2):
        assert table.interpolate(x[k]) == pytest.approx(v[k], abs=1e-14)
        np.testing.assert_allclose(table.gradient(x[k]), g[k], atol=1e-14)


def test_table_is_read_only():
    _, table = affine_table()
    with pytest.raises(ValueError):
        table.data[0, 0, 0] = 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3), st.integers(0, 2**31 - 1))
def test_interpolant_bounded_by_cell_corners(x, seed):
    rng = np.random.default_rng(seed)
    spec = GridSpec((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), (4, 5, 3))
    table = ValueTable(spec, rng.normal(size=spec.shape))
    v = table.interpolate(np.array(x))
    assert table.data.min() - 1e-12 <= v <= table.data.max() + 1e-12


def test_lipschitz_bound():
    spec = GridSpec((0.0, 0.0), (1.0, 1.0), (11, 11))
    table = ValueTable(spec, spec.sample(lambda a, b: 4 * a - b))
    assert table.lipschitz_bound() == pytest.approx(4.0)
