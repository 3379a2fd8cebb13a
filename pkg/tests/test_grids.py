"""Validation and basic algebra of the grid containers."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depthrelight.errors import NumericError, ShapeError
from depthrelight.grids import (MaskGrid, RgbGrid, ScalarGrid, Vec3Grid,
                                grid_map2, make_grid)


def test_make_grid_fill_and_shape():
    g = make_grid(3, 5, 0.25)
    assert g.shape == (3, 5)
    assert g.height == 3 and g.width == 5
    assert g.values.dtype == np.float64
    np.testing.assert_array_equal(g.values, 0.25)


@pytest.mark.parametrize("h,w", [(1, 4), (4, 1), (0, 3), (1, 1)])
def test_make_grid_rejects_degenerate_sizes(h, w):
    with pytest.raises(ShapeError):
        make_grid(h, w, 0.0)


def test_scalar_grid_rejects_bad_input():
    with pytest.raises(ShapeError):
        ScalarGrid(np.zeros((2, 2, 2)))
    with pytest.raises(ShapeError):
        ScalarGrid(np.zeros((0, 3)))
    with pytest.raises(NumericError):
        ScalarGrid(np.array([[0.0, np.nan], [0.0, 0.0]]))
    with pytest.raises(NumericError):
        ScalarGrid(np.array([[0.0, np.inf], [0.0, 0.0]]))


def test_grids_are_frozen_and_copied():
    src = np.zeros((2, 2))
    g = ScalarGrid(src)
    src[0, 0] = 9.0
    assert g.values[0, 0] == 0.0
    with pytest.raises(ValueError):
        g.values[0, 0] = 1.0


def test_rgb_grid_range_checks():
    ok = RgbGrid(np.full((2, 2, 3), 0.5))
    assert ok.shape == (2, 2)
    with pytest.raises(NumericError):
        RgbGrid(np.full((2, 2, 3), 1.5))
    with pytest.raises(NumericError):
        RgbGrid(np.full((2, 2, 3), -0.1))
    with pytest.raises(ShapeError):
        RgbGrid(np.zeros((2, 2, 4)))


def test_vec3_grid_unit_flag():
    v = np.zeros((2, 2, 3))
    v[..., 2] = 1.0
    Vec3Grid(v, unit=True)
    v2 = v.copy()
    v2[0, 0, 2] = 1.1
    with pytest.raises(NumericError):
        Vec3Grid(v2, unit=True)
    Vec3Grid(v2)  # fine without the tag


def test_mask_grid_count_and_full():
    m = MaskGrid(np.array([[True, False], [True, True]]))
    assert m.count() == 3
    assert MaskGrid.full(2, 3).count() == 6
    assert MaskGrid.full(2, 3, value=False).count() == 0


def test_grid_map2_adds_elementwise():
    a = make_grid(2, 2, 1.0)
    b = make_grid(2, 2, 2.0)
    out = grid_map2(a, b, np.add)
    np.testing.assert_array_equal(out.values, 3.0)


def test_grid_map2_rejects_mismatch_and_nonfinite():
    a = make_grid(2, 2, 1.0)
    b = make_grid(2, 3, 1.0)
    with pytest.raises(ShapeError):
        grid_map2(a, b, np.add)
    z = make_grid(2, 2, 0.0)
    with pytest.raises(NumericError):
        grid_map2(a, z, np.divide)


@given(st.integers(2, 6), st.integers(2, 6),
       st.floats(-1e6, 1e6, allow_nan=False))
def test_make_grid_roundtrips_any_finite_fill(h, w, fill):
    g = make_grid(h, w, fill)
    assert g.shape == (h, w)
    assert float(g.values[h - 1, w - 1]) == fill
