from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semdtm.constraints import (
    ConstraintCheckError,
    ConstraintExpr,
    ConstraintParseError,
    check,
    list_predicates,
    parse_constraints,
    render_constraints,
)

from conftest import nd


class TestParse:
    def test_two_atoms(self):
        expr = parse_constraints("nonnegative, in_range(0,1)")
        assert [a.name for a in expr.atoms] == ["nonnegative", "in_range"]
        assert expr.atoms[0].args == ()
        assert expr.atoms[1].args == (0, 1)

    def test_truncated_arg_offset(self):
        with pytest.raises(ConstraintParseError) as err:
            parse_constraints("in_range(0,")
        assert err.value.offset == 11
        assert "expected literal" in str(err.value)

    def test_empty(self):
        with pytest.raises(ConstraintParseError, match="empty constraint expression"):
            parse_constraints("")
        with pytest.raises(ConstraintParseError):
            parse_constraints("   ")

    def test_unknown_predicate_offset(self):
        with pytest.raises(ConstraintParseError) as err:
            parse_constraints("finite, bogus(1)")
        assert err.value.offset == 8

    def test_arity_mismatch(self):
        with pytest.raises(ConstraintParseError, match="takes 2 argument"):
            parse_constraints("in_range(1)")
        with pytest.raises(ConstraintParseError):
            parse_constraints("in_range(1, 2, 3)")
        with pytest.raises(ConstraintParseError, match="at least 1"):
            parse_constraints("shape_is")

    def test_malformed_literal(self):
        with pytest.raises(ConstraintParseError) as err:
            parse_constraints("in_range(0, $)")
        assert err.value.offset == 13

    def test_type_errors(self):
        with pytest.raises(ConstraintParseError, match="must be an integer"):
            parse_constraints("sums_to(1.0, axis=0.5, tol=1e-9)")
        with pytest.raises(ConstraintParseError, match="axis argument"):
            parse_constraints("sorted_ascending(axis=-1)")
        with pytest.raises(ConstraintParseError, match="slot name"):
            parse_constraints("same_shape(1, b)")
        with pytest.raises(ConstraintParseError, match="must be a number"):
            parse_constraints("in_range(a, 1)")

    def test_keyword_args_any_order(self):
        a = parse_constraints("sums_to(1.0, axis=1, tol=1e-9)")
        b = parse_constraints("sums_to(1.0, tol=1e-9, axis=1)")
        c = parse_constraints("sums_to(1.0, 1, 1e-9)")
        assert a == b == c

    def test_keyword_errors(self):
        with pytest.raises(ConstraintParseError, match="no argument named"):
            parse_constraints("sums_to(1.0, axes=1, tol=1e-9)")
        with pytest.raises(ConstraintParseError, match="duplicate argument"):
            parse_constraints("sums_to(1.0, axis=1, axis=2, tol=1e-9)")
        with pytest.raises(ConstraintParseError, match="positional argument after keyword"):
            parse_constraints("sums_to(axis=1, 1.0, tol=1e-9)")

    def test_case_folding_and_whitespace(self):
        expr = parse_constraints("  In_Range( 0 ,1 )  ")
        assert render_constraints(expr) == "in_range(0, 1)"

    def test_variadic(self):
        expr = parse_constraints("shape_is(2, 3), max_le_slot(a, b, c)")
        assert expr.atoms[0].args == (2, 3)
        assert expr.atoms[1].args == ("a", "b", "c")

    def test_source_span(self):
        expr = parse_constraints("finite, in_range(0, 1)")
        assert expr.atoms[0].source_span == (0, 6)
        assert expr.atoms[1].source_span == (8, 14)


class TestRegistry:
    def test_membership_and_arity(self):
        info = {p.name: p for p in list_predicates()}
        assert info["nonnegative"].arity == 0
        assert info["in_range"].arity == 2
        assert info["sums_to"].arity == 3
        assert info["shape_is"].variadic

    def test_sorted_and_stable(self):
        first = list_predicates()
        second = list_predicates()
        assert first == second
        names = [p.name for p in first]
        assert names == sorted(names)

    def test_full_vocabulary(self):
        names = {p.name for p in list_predicates()}
        assert names == {
            "finite", "nonnegative", "positive", "in_range", "integer_valued",
            "binary", "nonempty", "nodata_free", "sorted_ascending", "sums_to",
            "same_shape", "shape_is", "max_le_slot", "min_ge_slot",
        }


class TestCheck:
    def test_sign_violation(self):
        violations = check(parse_constraints("nonnegative"), nd([-1.0, 2.0]), {}, "pre")
        assert len(violations) == 1
        v = violations[0]
        assert v.location == (0,)
        assert v.observed == -1.0
        assert v.phase == "pre"

    def test_sums_to_rows(self):
        expr = parse_constraints("sums_to(1.0, axis=1, tol=1e-9)")
        violations = check(expr, nd([[0.5, 0.5], [0.3, 0.6]]), {}, "pre")
        assert len(violations) == 1
        assert violations[0].location == (1,)
        assert violations[0].observed == pytest.approx(0.9)

    def test_masked_cells_skipped(self):
        all_masked = nd([np.nan, np.inf], mask=[True, True])
        assert check(parse_constraints("finite"), all_masked, {}, "pre") == []
        half = nd([-5.0, -6.0], mask=[True, False])
        violations = check(parse_constraints("nonnegative"), half, {}, "pre")
        assert [v.location for v in violations] == [(1,)]

    def test_nonempty(self):
        all_masked = nd([1.0], mask=[True])
        violations = check(parse_constraints("nonempty"), all_masked, {}, "pre")
        assert violations and violations[0].location == "global"
        assert check(parse_constraints("nonempty"), nd([1.0]), {}, "pre") == []

    def test_nodata_free_inspects_mask(self):
        a = nd([1.0, 2.0], mask=[False, True])
        violations = check(parse_constraints("nodata_free"), a, {}, "pre")
        assert [v.location for v in violations] == [(1,)]
        assert violations[0].observed == "masked cell"

    def test_sorted_ascending_reports_offender(self):
        expr = parse_constraints("sorted_ascending(axis=0)")
        violations = check(expr, nd([1.0, 3.0, 2.0]), {}, "pre")
        assert [v.location for v in violations] == [(2,)]
        assert violations[0].observed == 2.0

    def test_sorted_ascending_2d_axis(self):
        expr = parse_constraints("sorted_ascending(axis=1)")
        a = nd([[1.0, 2.0], [5.0, 4.0]])
        violations = check(expr, a, {}, "pre")
        assert [v.location for v in violations] == [(1, 1)]

    def test_same_shape(self):
        expr = parse_constraints("same_shape(x, y)")
        ctx = {"x": nd([[1.0, 2.0]]), "y": nd([[1.0], [2.0]])}
        violations = check(expr, None, ctx, "invariant", slot="(invariant)")
        assert len(violations) == 1
        assert violations[0].location == "global"
        ok = {"x": nd([[1.0, 2.0]]), "y": nd([[3.0, 4.0]])}
        assert check(expr, None, ok, "invariant") == []

    def test_shape_is(self):
        expr = parse_constraints("shape_is(2, 2)")
        assert check(expr, nd([[1.0, 2.0], [3.0, 4.0]]), {}, "pre") == []
        assert len(check(expr, nd([1.0]), {}, "pre")) == 1

    def test_slot_bounds(self):
        ctx = {"a": nd([0.0, 5.0]), "b": nd([2.0, 3.0])}
        over = nd([1.0, 6.0])
        violations = check(parse_constraints("max_le_slot(a, b)"), over, ctx, "post")
        assert len(violations) == 1
        assert violations[0].location == (1,)
        assert violations[0].observed == 6.0
        inside = nd([0.0, 5.0])
        assert check(parse_constraints("max_le_slot(a, b)"), inside, ctx, "post") == []
        under = nd([-1.0, 3.0])
        violations = check(parse_constraints("min_ge_slot(a, b)"), under, ctx, "post")
        assert violations[0].location == (0,)

    def test_unresolvable_slot(self):
        with pytest.raises(ConstraintCheckError, match="unresolvable slot"):
            check(parse_constraints("same_shape(x, nope)"), None, {"x": nd([1.0])}, "pre")

    def test_axis_out_of_range(self):
        with pytest.raises(ConstraintCheckError, match="out of range"):
            check(parse_constraints("sums_to(1.0, axis=1, tol=1e-9)"), nd([1.0]), {}, "pre")

    def test_value_predicate_needs_subject(self):
        with pytest.raises(ConstraintCheckError, match="requires a subject"):
            check(parse_constraints("finite"), None, {}, "invariant")

    def test_bad_phase_rejected(self):
        with pytest.raises(ValueError, match="phase"):
            check(parse_constraints("finite"), nd([1.0]), {}, "during")

    def test_integer_and_binary_reject_nonfinite(self):
        bad = nd([np.inf, np.nan, 2.5, 3.0])
        v_int = check(parse_constraints("integer_valued"), bad, {}, "pre")
        assert [v.location for v in v_int] == [(0,), (1,), (2,)]
        v_bin = check(parse_constraints("binary"), nd([np.nan, 1.0, 2.0]), {}, "pre")
        assert [v.location for v in v_bin] == [(0,), (2,)]

    def test_determinism_and_order(self):
        expr = parse_constraints("in_range(0, 1)")
        a = nd([[2.0, -1.0], [3.0, 0.5]])
        first = check(expr, a, {}, "pre")
        second = check(expr, a, {}, "pre")
        assert first == second
        assert [v.location for v in first] == [(0, 0), (0, 1), (1, 0)]


def _violation_multiset(violations):
    return Counter((v.key(), str(v.observed), v.expectation) for v in violations)


def test_conjunction_monotonicity():
    a = nd([[-1.0, 0.5], [2.0, np.nan]])
    both = check(parse_constraints("nonnegative, in_range(0, 1)"), a, {}, "pre")
    left = check(parse_constraints("nonnegative"), a, {}, "pre")
    right = check(parse_constraints("in_range(0, 1)"), a, {}, "pre")
    assert _violation_multiset(both) == _violation_multiset(left) + _violation_multiset(right)


# --- per-predicate soundness: generators of satisfying inputs ---------------


def _shape(rng, rank=None):
    rank = rank or int(rng.integers(1, 4))
    return tuple(int(rng.integers(1, 5)) for _ in range(rank))


def _maybe_mask(rng, shape):
    if rng.integers(2):
        mask = rng.uniform(size=shape) < 0.3
        if mask.all():
            mask.flat[0] = False
        return mask
    return None


def _gen_finite(rng):
    shape = _shape(rng)
    return "finite", nd(rng.normal(size=shape) * 100, _maybe_mask(rng, shape)), {}


def _gen_nonnegative(rng):
    shape = _shape(rng)
    return "nonnegative", nd(np.abs(rng.normal(size=shape)), _maybe_mask(rng, shape)), {}


def _gen_positive(rng):
    shape = _shape(rng)
    return "positive", nd(np.abs(rng.normal(size=shape)) + 1e-6, _maybe_mask(rng, shape)), {}


def _gen_in_range(rng):
    lo = float(rng.uniform(-10, 0))
    hi = float(rng.uniform(0, 10))
    shape = _shape(rng)
    vals = rng.uniform(lo, hi, size=shape)
    return f"in_range({lo!r}, {hi!r})", nd(vals, _maybe_mask(rng, shape)), {}


def _gen_integer_valued(rng):
    shape = _shape(rng)
    vals = np.round(rng.normal(size=shape) * 50)
    return "integer_valued", nd(vals, _maybe_mask(rng, shape)), {}


def _gen_binary(rng):
    shape = _shape(rng)
    vals = (rng.uniform(size=shape) < 0.5).astype(float)
    return "binary", nd(vals, _maybe_mask(rng, shape)), {}


def _gen_nonempty(rng):
    shape = _shape(rng)
    return "nonempty", nd(rng.normal(size=shape), _maybe_mask(rng, shape)), {}


def _gen_nodata_free(rng):
    return "nodata_free", nd(rng.normal(size=_shape(rng))), {}


def _gen_sorted_ascending(rng):
    shape = _shape(rng)
    axis = int(rng.integers(len(shape)))
    vals = np.sort(rng.normal(size=shape), axis=axis)
    return f"sorted_ascending(axis={axis})", nd(vals, _maybe_mask(rng, shape)), {}


def _gen_sums_to(rng):
    shape = _shape(rng)
    axis = int(rng.integers(len(shape)))
    vals = rng.uniform(0.1, 1.0, size=shape)
    vals = vals / vals.sum(axis=axis, keepdims=True)
    return f"sums_to(1.0, axis={axis}, tol=1e-09)", nd(vals), {}


def _gen_same_shape(rng):
    shape = _shape(rng)
    ctx = {"x": nd(rng.normal(size=shape)), "y": nd(rng.normal(size=shape))}
    return "same_shape(x, y)", nd(rng.normal(size=_shape(rng))), ctx


def _gen_shape_is(rng):
    shape = _shape(rng)
    dims = ", ".join(str(d) for d in shape)
    return f"shape_is({dims})", nd(rng.normal(size=shape), _maybe_mask(rng, shape)), {}


def _gen_max_le_slot(rng):
    shape = _shape(rng)
    pool = rng.uniform(-5, 5, size=shape)
    subject = rng.uniform(-6, float(pool.max()), size=shape)
    ctx = {"x": nd(pool), "y": nd(rng.uniform(-5, float(pool.max()), size=_shape(rng)))}
    return "max_le_slot(x, y)", nd(subject, _maybe_mask(rng, shape)), ctx


def _gen_min_ge_slot(rng):
    shape = _shape(rng)
    pool = rng.uniform(-5, 5, size=shape)
    subject = rng.uniform(float(pool.min()), 6, size=shape)
    ctx = {"x": nd(pool), "y": nd(rng.uniform(float(pool.min()), 5, size=_shape(rng)))}
    return "min_ge_slot(x, y)", nd(subject, _maybe_mask(rng, shape)), ctx


_GENERATORS = [
    _gen_finite, _gen_nonnegative, _gen_positive, _gen_in_range,
    _gen_integer_valued, _gen_binary, _gen_nonempty, _gen_nodata_free,
    _gen_sorted_ascending, _gen_sums_to, _gen_same_shape, _gen_shape_is,
    _gen_max_le_slot, _gen_min_ge_slot,
]


@pytest.mark.parametrize("gen", _GENERATORS, ids=lambda g: g.__name__[5:])
def test_predicate_soundness_on_satisfying_inputs(gen):
    rng = np.random.default_rng(hash(gen.__name__) % 2**32)
    for _ in range(1000):
        text, subject, ctx = gen(rng)
        assert check(parse_constraints(text), subject, ctx, "pre") == []


# --- round-trip -------------------------------------------------------------

_idents = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True)
_reals = st.one_of(
    st.integers(min_value=-1000, max_value=1000),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
)


@st.composite
def expr_texts(draw):
    atoms = []
    for _ in range(draw(st.integers(1, 4))):
        which = draw(st.sampled_from([p.name for p in list_predicates()]))
        if which in ("finite", "nonnegative", "positive", "integer_valued",
                     "binary", "nonempty", "nodata_free"):
            atoms.append(which)
        elif which == "in_range":
            lo, hi = draw(_reals), draw(_reals)
            atoms.append(f"in_range({lo!r}, {hi!r})")
        elif which == "sorted_ascending":
            atoms.append(f"sorted_ascending(axis={draw(st.integers(0, 3))})")
        elif which == "sums_to":
            atoms.append(
                f"sums_to({draw(_reals)!r}, axis={draw(st.integers(0, 3))}, tol={draw(_reals)!r})"
            )
        elif which == "same_shape":
            atoms.append(f"same_shape({draw(_idents)}, {draw(_idents)})")
        elif which == "shape_is":
            dims = draw(st.lists(st.integers(1, 9), min_size=1, max_size=3))
            atoms.append(f"shape_is({', '.join(map(str, dims))})")
        else:  # max_le_slot / min_ge_slot
            slots = draw(st.lists(_idents, min_size=1, max_size=3))
            atoms.append(f"{which}({', '.join(slots)})")
    return ", ".join(atoms)


@given(expr_texts())
@settings(max_examples=300)
def test_parse_render_roundtrip(text):
    expr = parse_constraints(text)
    canonical = render_constraints(expr)
    reparsed = parse_constraints(canonical)
    assert reparsed == expr
    assert render_constraints(reparsed) == canonical  # render is a fixed point
