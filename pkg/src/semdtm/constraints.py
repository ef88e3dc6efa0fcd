"""Constraint DSL: parse semantic predicates, evaluate them over arrays.

Surface syntax is a comma-separated conjunction of predicate atoms:

    finite, in_range(0, 1), sums_to(1.0, axis=0, tol=1e-09)

Atoms are evaluated left to right and every violation is reported (no
first-fail).  Value predicates skip masked cells; ``nodata_free`` is the one
predicate that inspects the mask itself.  Canonical rendering lowercases
predicate names, puts a single space after each comma, and writes ``axis``
and ``tol`` arguments in keyword form.

Builtin predicates (see :func:`list_predicates` for the machine listing):

    finite                      every unmasked cell is finite
    nonnegative                 cell >= 0
    positive                    cell > 0
    in_range(lo, hi)            lo <= cell <= hi, inclusive, exact on doubles
    integer_valued              cell is finite and has no fractional part
    binary                      cell is exactly 0 or 1
    nonempty                    at least one unmasked cell
    nodata_free                 no masked cells
    sorted_ascending(axis=k)    non-decreasing along axis k
    sums_to(t, axis=k, tol=e)   slice sums along axis k equal t within e
    same_shape(a, b)            context slots a and b have equal shapes
    shape_is(d1, ..., dk)       subject shape is exactly (d1, ..., dk)
    min_ge_slot(s, ...)         min(subject) >= min over the named slots
    max_le_slot(s, ...)         max(subject) <= max over the named slots
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .arrays import NdArray

__all__ = [
    "ConstraintExpr",
    "PredicateAtom",
    "Violation",
    "PredicateInfo",
    "ConstraintParseError",
    "ConstraintCheckError",
    "parse_constraints",
    "render_constraints",
    "check",
    "list_predicates",
    "PHASES",
]

PHASES = ("pre", "post", "invariant")

GLOBAL = "global"


class ConstraintParseError(ValueError):
    """Syntax or registry error in a constraint expression; carries the
    0-based character offset of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"parse error at offset {offset}: {message}")


class ConstraintCheckError(ValueError):
    """Evaluation-time contract resolution failure (unknown slot, bad axis,
    value predicate with no subject)."""


@dataclass(frozen=True)
class PredicateAtom:
    name: str
    args: tuple = ()
    source_span: tuple[int, int] = (0, 0)

    def __eq__(self, other):
        if not isinstance(other, PredicateAtom):
            return NotImplemented
        # source_span is provenance, not meaning
        return self.name == other.name and self.args == other.args

    def __hash__(self):
        return hash((self.name, self.args))


@dataclass(frozen=True)
class ConstraintExpr:
    atoms: tuple[PredicateAtom, ...]
    source_text: str = ""

    def __eq__(self, other):
        if not isinstance(other, ConstraintExpr):
            return NotImplemented
        return self.atoms == other.atoms

    def __hash__(self):
        return hash(self.atoms)


@dataclass(frozen=True)
class Violation:
    """One detected misuse: where a predicate failed and what was seen there.

    ``location`` is a zero-based row-major multi-index, or the string
    ``"global"`` for whole-array facts.  ``observed`` is the offending value
    or a short description when no single number applies.
    """

    predicate_name: str
    location: tuple[int, ...] | str
    observed: float | str
    expectation: str
    slot: str
    phase: str

    def key(self) -> tuple:
        """Identity for cross-run comparison (ignores the observed value)."""
        return (self.predicate_name, str(self.location), self.slot, self.phase)

    def to_dict(self) -> dict:
        loc = list(self.location) if isinstance(self.location, tuple) else self.location
        obs = self.observed if isinstance(self.observed, str) else float(self.observed)
        return {
            "predicate": self.predicate_name,
            "location": loc,
            "observed": obs,
            "expectation": self.expectation,
            "slot": self.slot,
            "phase": self.phase,
        }


# --- predicate registry -----------------------------------------------------

# arg kinds: real (int or float literal), int, axis (int >= 0), slot (identifier)
@dataclass(frozen=True)
class Param:
    name: str
    kind: str
    kw: bool = False  # canonical rendering uses name=value


@dataclass(frozen=True)
class PredicateInfo:
    name: str
    arity: int
    variadic: bool
    arg_types: tuple[str, ...]
    description: str


@dataclass(frozen=True)
class _Predicate:
    name: str
    params: tuple[Param, ...]
    variadic: bool
    description: str
    fn: Callable

    @property
    def arity(self) -> int:
        return len(self.params)


def _subject_required(subject: NdArray | None, name: str) -> NdArray:
    if subject is None:
        raise ConstraintCheckError(f"predicate '{name}' requires a subject array")
    return subject


def _resolve(slot: str, context: dict[str, NdArray]) -> NdArray:
    try:
        return context[slot]
    except KeyError:
        raise ConstraintCheckError(f"unresolvable slot reference '{slot}'") from None


def _axis_for(subject: NdArray, axis: int, name: str) -> int:
    if not 0 <= axis < subject.ndim:
        raise ConstraintCheckError(
            f"axis {axis} out of range for rank-{subject.ndim} subject in '{name}'"
        )
    return axis


def _cellwise(subject: NdArray, bad: np.ndarray, expectation: str) -> list[tuple]:
    bad = bad & ~subject.mask_or_false()
    flat_vals = subject.values.ravel()
    out = []
    for i in np.flatnonzero(bad.ravel()):
        loc = tuple(int(j) for j in np.unravel_index(int(i), subject.shape))
        out.append((loc, float(flat_vals[i]), expectation))
    return out


def _p_finite(args, subject, context):
    s = _subject_required(subject, "finite")
    return _cellwise(s, ~np.isfinite(s.values), "finite value")


def _p_nonnegative(args, subject, context):
    s = _subject_required(subject, "nonnegative")
    with np.errstate(invalid="ignore"):
        bad = ~(s.values >= 0)
    return _cellwise(s, bad, ">= 0")


def _p_positive(args, subject, context):
    s = _subject_required(subject, "positive")
    with np.errstate(invalid="ignore"):
        bad = ~(s.values > 0)
    return _cellwise(s, bad, "> 0")


def _p_in_range(args, subject, context):
    lo, hi = float(args[0]), float(args[1])
    s = _subject_required(subject, "in_range")
    with np.errstate(invalid="ignore"):
        bad = ~((s.values >= lo) & (s.values <= hi))
    return _cellwise(s, bad, f"in [{lo!r}, {hi!r}]")


def _p_integer_valued(args, subject, context):
    s = _subject_required(subject, "integer_valued")
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(s.values) & (s.values == np.floor(s.values))
    return _cellwise(s, ~ok, "integer-valued")


def _p_binary(args, subject, context):
    s = _subject_required(subject, "binary")
    bad = ~((s.values == 0.0) | (s.values == 1.0))
    return _cellwise(s, bad, "exactly 0 or 1")


def _p_nonempty(args, subject, context):
    s = _subject_required(subject, "nonempty")
    if s.unmasked_values().size == 0:
        return [(GLOBAL, "all cells masked", "at least one unmasked cell")]
    return []


def _p_nodata_free(args, subject, context):
    s = _subject_required(subject, "nodata_free")
    if s.mask is None:
        return []
    out = []
    for i in np.flatnonzero(s.mask.ravel()):
        loc = tuple(int(j) for j in np.unravel_index(int(i), s.shape))
        out.append((loc, "masked cell", "no masked cells"))
    return out


def _p_sorted_ascending(args, subject, context):
    s = _subject_required(subject, "sorted_ascending")
    axis = _axis_for(s, int(args[0]), "sorted_ascending")
    v = np.moveaxis(s.values, axis, -1)
    m = np.moveaxis(s.mask_or_false(), axis, -1)
    left, right = v[..., :-1], v[..., 1:]
    comparable = ~m[..., :-1] & ~m[..., 1:]
    with np.errstate(invalid="ignore"):
        bad = (right < left) & comparable
    out = []
    for moved in np.argwhere(bad):
        *outer, k = (int(x) for x in moved)
        loc = list(outer)
        loc.insert(axis, k + 1)
        prev = float(left[tuple(moved)])
        out.append(
            (tuple(loc), float(right[tuple(moved)]), f">= previous value {prev!r} along axis {axis}")
        )
    return out


def _p_sums_to(args, subject, context):
    target, axis, tol = float(args[0]), int(args[1]), float(args[2])
    s = _subject_required(subject, "sums_to")
    axis = _axis_for(s, axis, "sums_to")
    m = s.mask_or_false()
    sums = np.where(m, 0.0, s.values).sum(axis=axis)
    counted = (~m).sum(axis=axis)
    expectation = f"sums to {target!r} within {tol!r} along axis {axis}"
    with np.errstate(invalid="ignore"):
        bad = ~(np.abs(sums - target) <= tol) & (counted > 0)
    if sums.ndim == 0:
        return [(GLOBAL, float(sums), expectation)] if bool(bad) else []
    out = []
    for idx in np.argwhere(bad):
        loc = tuple(int(x) for x in idx)
        out.append((loc, float(sums[loc]), expectation))
    return out


def _p_same_shape(args, subject, context):
    a, b = args
    sa, sb = _resolve(a, context), _resolve(b, context)
    if sa.shape != sb.shape:
        return [
            (
                GLOBAL,
                f"shape {list(sa.shape)} vs {list(sb.shape)}",
                f"'{a}' and '{b}' have the same shape",
            )
        ]
    return []


def _p_shape_is(args, subject, context):
    s = _subject_required(subject, "shape_is")
    want = tuple(int(a) for a in args)
    if s.shape != want:
        return [(GLOBAL, f"shape {list(s.shape)}", f"shape {list(want)}")]
    return []


def _slot_union_values(args, context) -> np.ndarray:
    chunks = [_resolve(slot, context).unmasked_values() for slot in args]
    chunks = [c for c in chunks if c.size]
    if not chunks:
        return np.empty(0)
    return np.concatenate(chunks)


def _p_max_le_slot(args, subject, context):
    s = _subject_required(subject, "max_le_slot")
    mine = s.unmasked_values()
    pool = _slot_union_values(args, context)
    if mine.size == 0 or pool.size == 0:
        return []
    bound = float(np.max(pool))
    with np.errstate(invalid="ignore"):
        if bool(np.max(mine) <= bound) and not np.isnan(mine).any():
            return []
    v = np.where(s.mask_or_false(), -np.inf, s.values)
    nan_cells = np.isnan(v)
    flat = int(np.argmax(np.where(nan_cells, np.inf, v)))
    loc = tuple(int(j) for j in np.unravel_index(flat, s.shape))
    slots = ", ".join(args)
    return [(loc, float(s.values.ravel()[flat]), f"<= max over slots ({slots}) = {bound!r}")]


def _p_min_ge_slot(args, subject, context):
    s = _subject_required(subject, "min_ge_slot")
    mine = s.unmasked_values()
    pool = _slot_union_values(args, context)
    if mine.size == 0 or pool.size == 0:
        return []
    bound = float(np.min(pool))
    with np.errstate(invalid="ignore"):
        if bool(np.min(mine) >= bound) and not np.isnan(mine).any():
            return []
    v = np.where(s.mask_or_false(), np.inf, s.values)
    nan_cells = np.isnan(v)
    flat = int(np.argmin(np.where(nan_cells, -np.inf, v)))
    loc = tuple(int(j) for j in np.unravel_index(flat, s.shape))
    slots = ", ".join(args)
    return [(loc, float(s.values.ravel()[flat]), f">= min over slots ({slots}) = {bound!r}")]


_REGISTRY: dict[str, _Predicate] = {}


def _register(name, params, fn, description, variadic=False):
    _REGISTRY[name] = _Predicate(name, tuple(params), variadic, description, fn)


_register("finite", [], _p_finite, "every unmasked cell is finite")
_register("nonnegative", [], _p_nonnegative, "every unmasked cell is >= 0")
_register("positive", [], _p_positive, "every unmasked cell is > 0")
_register(
    "in_range",
    [Param("lo", "real"), Param("hi", "real")],
    _p_in_range,
    "every unmasked cell lies in [lo, hi], inclusive",
)
_register(
    "integer_valued", [], _p_integer_valued, "every unmasked cell is finite with no fractional part"
)
_register("binary", [], _p_binary, "every unmasked cell is exactly 0 or 1")
_register("nonempty", [], _p_nonempty, "the array has at least one unmasked cell")
_register("nodata_free", [], _p_nodata_free, "the array has no masked cells")
_register(
    "sorted_ascending",
    [Param("axis", "axis", kw=True)],
    _p_sorted_ascending,
    "values are non-decreasing along the given axis (masked pairs skipped)",
)
_register(
    "sums_to",
    [Param("target", "real"), Param("axis", "axis", kw=True), Param("tol", "real", kw=True)],
    _p_sums_to,
    "sums of unmasked cells along the axis equal target within tol",
)
_register(
    "same_shape",
    [Param("a", "slot"), Param("b", "slot")],
    _p_same_shape,
    "the two named context slots have identical shapes",
)
_register(
    "shape_is",
    [Param("dims", "int")],
    _p_shape_is,
    "the subject's shape is exactly the given extents",
    variadic=True,
)
_register(
    "max_le_slot",
    [Param("slots", "slot")],
    _p_max_le_slot,
    "max of the subject's unmasked cells <= max over the named slots' unmasked cells",
    variadic=True,
)
_register(
    "min_ge_slot",
    [Param("slots", "slot")],
    _p_min_ge_slot,
    "min of the subject's unmasked cells >= min over the named slots' unmasked cells",
    variadic=True,
)


def list_predicates() -> tuple[PredicateInfo, ...]:
    """Stable, alphabetically sorted listing of the builtin predicates."""
    return tuple(
        PredicateInfo(
            p.name, p.arity, p.variadic, tuple(prm.kind for prm in p.params), p.description
        )
        for _, p in sorted(_REGISTRY.items())
    )


# --- parsing ----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(),=])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ConstraintParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            toks.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


def _literal_value(text: str):
    if re.search(r"[.eE]", text):
        return float(text)
    return int(text)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect_punct(self, ch: str):
        kind, text, off = self.peek()
        if kind != "punct" or text != ch:
            raise ConstraintParseError(f"expected '{ch}'", off)
        return self.take()

    def parse(self) -> ConstraintExpr:
        atoms = [self.atom()]
        while True:
            kind, text, off = self.peek()
            if kind == "end":
                break
            if kind == "punct" and text == ",":
                self.take()
                atoms.append(self.atom())
                continue
            raise ConstraintParseError(f"expected ',' or end of expression, got {text!r}", off)
        return ConstraintExpr(tuple(atoms), self.text)

    def atom(self) -> PredicateAtom:
        kind, text, start = self.peek()
        if kind != "ident":
            raise ConstraintParseError("expected predicate name", start)
        self.take()
        name = text.lower()
        pred = _REGISTRY.get(name)
        if pred is None:
            raise ConstraintParseError(f"unknown predicate '{name}'", start)

        raw_args: list[tuple[str | None, object, int]] = []  # (kw-name, value, offset)
        end = start + len(text)
        kind, ptext, off = self.peek()
        if kind == "punct" and ptext == "(":
            self.take()
            kind, ptext, off = self.peek()
            if not (kind == "punct" and ptext == ")"):
                raw_args.append(self.argument())
                while True:
                    kind, ptext, off = self.peek()
                    if kind == "punct" and ptext == ",":
                        self.take()
                        raw_args.append(self.argument())
                        continue
                    break
            closing = self.expect_punct(")")
            end = closing[2] + 1

        args = self.bind(pred, raw_args, start)
        return PredicateAtom(name, args, (start, end - start))

    def argument(self) -> tuple[str | None, object, int]:
        kind, text, off = self.peek()
        if kind == "ident":
            self.take()
            nxt_kind, nxt_text, _ = self.peek()
            if nxt_kind == "punct" and nxt_text == "=":
                self.take()
                vkind, vtext, voff = self.peek()
                if vkind == "number":
                    self.take()
                    return (text, _literal_value(vtext), voff)
                if vkind == "ident":
                    self.take()
                    return (text, vtext, voff)
                raise ConstraintParseError("expected literal", voff)
            return (None, text, off)
        if kind == "number":
            self.take()
            return (None, _literal_value(text), off)
        raise ConstraintParseError("expected literal", off)

    def bind(self, pred: _Predicate, raw_args, atom_offset: int) -> tuple:
        """Resolve positional/keyword arguments against the signature and
        type-check each literal."""
        if pred.variadic:
            for kw, _, off in raw_args:
                if kw is not None:
                    raise ConstraintParseError(
                        f"'{pred.name}' does not accept keyword arguments", off
                    )
            if len(raw_args) < len(pred.params):
                raise ConstraintParseError(
                    f"'{pred.name}' needs at least {len(pred.params)} argument(s), "
                    f"got {len(raw_args)}",
                    atom_offset,
                )
            kind = pred.params[0].kind
            return tuple(
                self.typed(pred.name, pred.params[0].name, kind, val, off)
                for _, val, off in raw_args
            )

        slots: dict[str, object] = {}
        seen_kw = False
        pos = 0
        for kw, val, off in raw_args:
            if kw is None:
                if seen_kw:
                    raise ConstraintParseError("positional argument after keyword", off)
                if pos >= len(pred.params):
                    raise ConstraintParseError(
                        f"'{pred.name}' takes {len(pred.params)} argument(s)", off
                    )
                prm = pred.params[pos]
                pos += 1
            else:
                seen_kw = True
                matches = [p for p in pred.params if p.name == kw]
                if not matches:
                    raise ConstraintParseError(
                        f"'{pred.name}' has no argument named '{kw}'", off
                    )
                prm = matches[0]
            if prm.name in slots:
                raise ConstraintParseError(f"duplicate argument '{prm.name}'", off)
            slots[prm.name] = self.typed(pred.name, prm.name, prm.kind, val, off)
        missing = [p.name for p in pred.params if p.name not in slots]
        if missing:
            raise ConstraintParseError(
                f"'{pred.name}' takes {len(pred.params)} argument(s), got {len(raw_args)}",
                atom_offset,
            )
        return tuple(slots[p.name] for p in pred.params)

    def typed(self, pred_name: str, param_name: str, kind: str, val, off: int):
        if kind == "real":
            if isinstance(val, (int, float)):
                return val
            raise ConstraintParseError(
                f"argument '{param_name}' of '{pred_name}' must be a number", off
            )
        if kind in ("int", "axis"):
            if isinstance(val, int):
                if kind == "axis" and val < 0:
                    raise ConstraintParseError(
                        f"axis argument of '{pred_name}' must be >= 0", off
                    )
                return val
            raise ConstraintParseError(
                f"argument '{param_name}' of '{pred_name}' must be an integer", off
            )
        if kind == "slot":
            if isinstance(val, str):
                return val
            raise ConstraintParseError(
                f"argument '{param_name}' of '{pred_name}' must be a slot name", off
            )
        raise AssertionError(f"unknown param kind {kind}")


def parse_constraints(text: str) -> ConstraintExpr:
    """Parse a constraint expression; raise ConstraintParseError with a
    character offset on any malformed input."""
    if not text.strip():
        raise ConstraintParseError("empty constraint expression", 0)
    return _Parser(text).parse()


def _format_literal(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, int):
        return str(v)
    return repr(v)


def render_constraints(expr: ConstraintExpr) -> str:
    """Canonical text: lowercase names, single space after commas, ``axis``
    and ``tol`` in keyword form, floats via repr."""
    parts = []
    for atom in expr.atoms:
        pred = _REGISTRY[atom.name]
        if not atom.args:
            parts.append(atom.name)
            continue
        rendered = []
        for i, val in enumerate(atom.args):
            prm = pred.params[min(i, len(pred.params) - 1)]
            s = _format_literal(val)
            if prm.kw and not pred.variadic:
                s = f"{prm.name}={s}"
            rendered.append(s)
        parts.append(f"{atom.name}({', '.join(rendered)})")
    return ", ".join(parts)


# --- evaluation -------------------------------------------------------------


def _location_sort_key(loc):
    return (0, ()) if loc == GLOBAL else (1, loc)


def check(
    expr: ConstraintExpr,
    subject: NdArray | None,
    context: dict[str, NdArray] | None = None,
    phase: str = "pre",
    slot: str | None = None,
) -> list[Violation]:
    """Evaluate every atom of ``expr`` and return all violations.

    ``subject`` is the array the value predicates range over (None is allowed
    for purely relational expressions, e.g. module invariants).  ``context``
    resolves slot-name arguments.  Violations are reported per atom in
    ascending location order; an empty list means the expression holds.
    """
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")
    context = context or {}
    if slot is None:
        slot = subject.name if subject is not None else ""
    out: list[Violation] = []
    for atom in expr.atoms:
        pred = _REGISTRY[atom.name]
        hits = pred.fn(atom.args, subject, context)
        hits.sort(key=lambda h: _location_sort_key(h[0]))
        for loc, observed, expectation in hits:
            out.append(Violation(atom.name, loc, observed, expectation, slot, phase))
    return out
