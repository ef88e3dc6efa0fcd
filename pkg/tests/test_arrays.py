import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from semdtm.arrays import (
    GridParseError,
    NdArray,
    compare,
    load_text,
    parse_csv,
    parse_grid,
    render_grid,
)

from conftest import nd


class TestNdArray:
    def test_shape_data_coupling(self):
        a = nd([[1, 2], [3, 4]])
        assert a.shape == (2, 2)
        assert a.size == 4

    def test_rejects_zero_rank(self):
        with pytest.raises(ValueError):
            NdArray(np.float64(3.0))

    def test_rejects_zero_extent(self):
        with pytest.raises(ValueError):
            NdArray(np.empty((0, 3)))

    def test_rejects_mask_shape_mismatch(self):
        with pytest.raises(ValueError):
            NdArray(np.zeros((2, 2)), np.zeros(4, dtype=bool))

    def test_immutable_buffers(self):
        a = nd([1.0, 2.0])
        with pytest.raises(ValueError):
            a.values[0] = 9.0

    def test_equals_is_mask_aware(self):
        a = nd([1.0, 7.0], mask=[False, True])
        b = nd([1.0, -99.0], mask=[False, True])
        assert a.equals(b)
        assert not a.equals(nd([1.0, 7.0]))


class TestParseGrid:
    def test_plain(self):
        a = parse_grid("ncols 2\nnrows 1\n3 4\n")
        assert a.shape == (1, 2)
        assert a.values.tolist() == [[3.0, 4.0]]
        assert a.mask is None

    def test_nodata_masks_cell(self):
        a = parse_grid("ncols 2\nnrows 1\nnodata_value -9999\n-9999 4\n")
        assert a.mask.tolist() == [[True, False]]

    def test_short_row_reports_line(self):
        with pytest.raises(GridParseError) as err:
            parse_grid("ncols 2\nnrows 2\n1 2\n3\n")
        assert err.value.line == 4
        assert "expected 2 values, got 1" in str(err.value)

    def test_non_numeric_reports_line_and_column(self):
        with pytest.raises(GridParseError) as err:
            parse_grid("ncols 2\nnrows 1\n1 abc\n")
        assert err.value.line == 3
        assert err.value.column == 3

    def test_malformed_header(self):
        with pytest.raises(GridParseError) as err:
            parse_grid("rows 2\nncols 2\n1 2\n")
        assert err.value.line == 1

    def test_missing_rows(self):
        with pytest.raises(GridParseError):
            parse_grid("ncols 2\nnrows 2\n1 2\n")

    def test_trailing_content_rejected(self):
        with pytest.raises(GridParseError):
            parse_grid("ncols 1\nnrows 1\n1\n2\n")

    def test_header_case_insensitive(self):
        a = parse_grid("NCOLS 1\nNROWS 1\n5\n")
        assert a.values.tolist() == [[5.0]]

    def test_accepts_nan_and_inf_tokens(self):
        a = parse_grid("ncols 3\nnrows 1\nnan inf -inf\n")
        assert math.isnan(a.values[0, 0])
        assert a.values[0, 1] == math.inf


class TestRenderGrid:
    def test_requires_2d(self):
        with pytest.raises(ValueError, match="render_grid requires 2-D"):
            render_grid(nd([1.0, 2.0]))

    def test_full_precision_value(self):
        a = nd([[0.1]])
        b = parse_grid(render_grid(a))
        assert b.values[0, 0] == 0.1
        assert b.values[0, 0].hex() == np.float64(0.1).hex()

    def test_sentinel_avoids_data_collision(self):
        a = nd([[-9999.0, 1.0]], mask=[[False, True]])
        text = render_grid(a)
        assert parse_grid(text).equals(a)

    def test_no_mask_no_nodata_line(self):
        assert "nodata_value" not in render_grid(nd([[1.0, 2.0]]))


class TestCsv:
    def test_basic(self):
        a = parse_csv("1,2\n3,4\n")
        assert a.values.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_ragged_rejected(self):
        with pytest.raises(GridParseError) as err:
            parse_csv("1,2\n3\n")
        assert err.value.line == 2

    def test_sniffing(self):
        assert load_text("ncols 1\nnrows 1\n2\n").shape == (1, 1)
        assert load_text("1,2,3\n").shape == (1, 3)
        with pytest.raises(GridParseError):
            load_text("   \n")


class TestCompare:
    def test_identity(self):
        a = nd([[1.0, 2.0], [3.0, 4.0]])
        d = compare(a, a, 1e-12)
        assert d.max_abs_diff == 0.0
        assert d.mask_mismatch_count == 0
        assert d.cells_compared == 4

    def test_worst_cell(self):
        d = compare(nd([1.0, 2.0]), nd([1.0, 2.5]), 1e-12)
        assert d.max_abs_diff == 0.5
        assert d.worst_cell == (1,)

    def test_mask_mismatch(self):
        a = nd([0.0, 1.0], mask=[True, False])
        b = nd([0.0, 1.0])
        d = compare(a, b, 1e-12)
        assert d.mask_mismatch_count == 1
        assert d.cells_compared == 1

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            compare(nd([1.0]), nd([[1.0]]), 1e-12)

    def test_rel_floor_guards_near_zero(self):
        d = compare(nd([0.0]), nd([1e-15]), 1e-12)
        assert d.max_rel_diff == pytest.approx(1e-3)  # denominator floored at 1e-12

    def test_nan_pairs(self):
        both = compare(nd([math.nan]), nd([math.nan]), 1e-12)
        assert both.max_abs_diff == 0.0
        one = compare(nd([math.nan]), nd([1.0]), 1e-12)
        assert one.max_abs_diff == math.inf

    def test_all_masked(self):
        a = nd([1.0], mask=[True])
        d = compare(a, a, 1e-12)
        assert d.cells_compared == 0
        assert d.worst_cell is None


finite_grids = hnp.arrays(
    np.float64,
    hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=6),
    elements=st.floats(allow_nan=False, allow_infinity=False, width=64),
)
any_grids = hnp.arrays(
    np.float64,
    hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=6),
    elements=st.floats(allow_nan=True, allow_infinity=True, width=64),
)


@st.composite
def masked_grids(draw):
    vals = draw(any_grids)
    mask = None
    if draw(st.booleans()):
        mask = draw(
            hnp.arrays(np.bool_, vals.shape, elements=st.booleans())
        )
    return NdArray(vals, mask)


@given(masked_grids())
@settings(max_examples=200)
def test_roundtrip_law(a):
    assert parse_grid(render_grid(a)).equals(a)


@given(masked_grids(), st.floats(min_value=1e-15, max_value=1.0))
def test_compare_self_is_zero(a, rel_floor):
    assert compare(a, a, rel_floor).max_abs_diff == 0.0


@st.composite
def grid_pairs(draw):
    a = draw(masked_grids())
    vals = draw(
        hnp.arrays(
            np.float64, a.shape, elements=st.floats(allow_nan=True, allow_infinity=True, width=64)
        )
    )
    mask = None
    if draw(st.booleans()):
        mask = draw(hnp.arrays(np.bool_, a.shape, elements=st.booleans()))
    return a, NdArray(vals, mask)


@given(grid_pairs())
def test_compare_symmetry(pair):
    a, b = pair
    d_ab = compare(a, b, 1e-12)
    d_ba = compare(b, a, 1e-12)
    assert d_ab.max_abs_diff == d_ba.max_abs_diff
    assert d_ab.mask_mismatch_count == d_ba.mask_mismatch_count
