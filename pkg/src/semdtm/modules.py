"""Contract-carrying transformation modules and their checked execution.

A DtmModule couples a registered transform (``impl_ref``) with parameters and
slot-attached constraint expressions.  ``run_raw`` executes the bare
transform; ``run_checked`` wraps it in its contracts:

    pre-expressions  -> execute -> post-expressions -> invariant

In ``enforce`` mode a pre-failure short-circuits execution and any failure
withholds the outputs; in ``observe`` mode everything runs, outputs are
always delivered, and violations are only reported.  Checked outputs, when
delivered, are bit-identical to ``run_raw``'s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import NdArray
from .constraints import ConstraintExpr, Violation, check, parse_constraints, render_constraints
from .transforms import TRANSFORMS, TransformError, layer_slot_names

__all__ = [
    "DtmModule",
    "CheckOutcome",
    "PASS",
    "PRE_FAILED",
    "POST_FAILED",
    "INVARIANT_FAILED",
    "make_module",
    "run_raw",
    "run_checked",
    "contract_text",
    "param_context",
]

PASS = "pass"
PRE_FAILED = "pre_failed"
POST_FAILED = "post_failed"
INVARIANT_FAILED = "invariant_failed"

ENFORCE = "enforce"
OBSERVE = "observe"
MODES = (ENFORCE, OBSERVE)

INVARIANT_SLOT = "(invariant)"


@dataclass(frozen=True)
class DtmModule:
    """Named transformation with parameters, contracts and an implementation.

    Treat instances as immutable; fault injection returns modified copies.
    ``param_slots`` carry pre-phase contracts over parameters (parameters are
    also visible to every check context as pseudo-slots).
    """

    id: str
    params: dict
    input_slots: tuple[tuple[str, ConstraintExpr | None], ...]
    output_slots: tuple[tuple[str, ConstraintExpr | None], ...]
    param_slots: tuple[tuple[str, ConstraintExpr], ...] = ()
    invariant: ConstraintExpr | None = None
    impl_ref: str = ""
    output_faults: tuple = ()  # applied, in order, to run_raw's outputs

    def __post_init__(self):
        names = [s for s, _ in self.input_slots] + [s for s, _ in self.output_slots]
        if len(set(names)) != len(names):
            raise ValueError(f"module '{self.id}': slot names must be unique, got {names}")
        if self.impl_ref not in TRANSFORMS:
            raise ValueError(f"module '{self.id}': unknown impl_ref '{self.impl_ref}'")

    @property
    def input_names(self) -> list[str]:
        return [s for s, _ in self.input_slots]

    @property
    def output_names(self) -> list[str]:
        return [s for s, _ in self.output_slots]

    @property
    def family(self) -> str:
        return self.impl_ref.split("/", 1)[0]


@dataclass(frozen=True)
class CheckOutcome:
    """Result of a checked run.  ``outputs`` is present iff status is pass or
    mode is observe; status is pass iff ``violations`` is empty (when several
    phases fail in observe mode, status names the first failing phase)."""

    status: str
    outputs: dict[str, NdArray] | None
    violations: list[Violation]
    mode: str


def _parse(text_or_expr) -> ConstraintExpr | None:
    if text_or_expr is None:
        return None
    if isinstance(text_or_expr, ConstraintExpr):
        return text_or_expr
    return parse_constraints(text_or_expr)


def _canonical_contracts(family: str, params: dict) -> dict:
    if family == "rescale_minmax":
        return {"pre": {"in": "finite, nonempty"}, "post": {"out": "in_range(0, 1)"}}
    if family == "focal_mean":
        return {
            "pre": {"in": "finite"},
            "post": {"out": "finite"},
            "invariant": "same_shape(in, out)",
        }
    if family == "weighted_sum":
        k = len(params.get("weights") or ())
        layers = layer_slot_names(k)
        pre = {}
        if k > 1:
            pre["layer1"] = ", ".join(
                f"same_shape({a}, {b})" for a, b in zip(layers, layers[1:])
            )
        bound_args = ", ".join(layers)
        return {
            "pre": pre,
            "post": {"out": f"min_ge_slot({bound_args}), max_le_slot({bound_args})"},
            "params": {"weights": "sums_to(1.0, axis=0, tol=1e-09)"},
        }
    if family == "reclassify":
        return {
            "post": {"out": "integer_valued"},
            "params": {"breaks": "sorted_ascending(axis=0)"},
        }
    if family == "threshold_mask":
        return {"post": {"out": "binary"}}
    raise ValueError(f"no canonical contracts for transform family '{family}'")


def _slot_layout(family: str, params: dict) -> tuple[list[str], list[str]]:
    if family == "weighted_sum":
        k = len(params.get("weights") or ())
        if k == 0:
            raise TransformError("weighted_sum needs a non-empty weights list")
        return layer_slot_names(k), ["out"]
    return ["in"], ["out"]


def make_module(
    impl_ref: str,
    params: dict | None = None,
    module_id: str | None = None,
    contracts: dict | None = None,
) -> DtmModule:
    """Build a module for a registered transform.

    ``contracts``, when given, replaces the canonical shipped contracts
    entirely: keys ``pre``/``post`` map slot names to constraint strings (a
    bare string is accepted for single-input/-output transforms), ``params``
    maps parameter names to pre-phase constraint strings, and ``invariant``
    is a constraint string over all slots.
    """
    params = dict(params or {})
    if impl_ref not in TRANSFORMS:
        raise ValueError(f"unknown transform '{impl_ref}'")
    family = impl_ref.split("/", 1)[0]
    inputs, outputs = _slot_layout(family, params)
    spec = _canonical_contracts(family, params) if contracts is None else contracts

    def slot_map(key: str, slots: list[str]) -> dict[str, ConstraintExpr | None]:
        raw = spec.get(key) or {}
        if isinstance(raw, str):
            if len(slots) != 1:
                raise ValueError(
                    f"'{key}' given as a bare string but '{impl_ref}' has slots {slots}"
                )
            raw = {slots[0]: raw}
        unknown = set(raw) - set(slots)
        if unknown:
            raise ValueError(f"'{key}' names unknown slots {sorted(unknown)} for '{impl_ref}'")
        return {s: _parse(raw.get(s)) for s in slots}

    pre = slot_map("pre", inputs)
    post = slot_map("post", outputs)
    param_raw = spec.get("params") or {}
    unknown = set(param_raw) - set(params)
    if unknown:
        raise ValueError(f"param contracts name unknown parameters {sorted(unknown)}")
    return DtmModule(
        id=module_id or impl_ref,
        params=params,
        input_slots=tuple((s, pre[s]) for s in inputs),
        output_slots=tuple((s, post[s]) for s in outputs),
        param_slots=tuple((p, _parse(t)) for p, t in sorted(param_raw.items())),
        invariant=_parse(spec.get("invariant")),
        impl_ref=impl_ref,
    )


def param_context(module: DtmModule) -> dict[str, NdArray]:
    """Numeric parameters as named 1-D-or-higher arrays, for contract checks."""
    ctx = {}
    for name, value in module.params.items():
        if isinstance(value, bool):
            continue
        if isinstance(value, (int, float)):
            ctx[name] = NdArray(np.array([value], dtype=np.float64), None, name)
        elif isinstance(value, (list, tuple)) and value and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            ctx[name] = NdArray(np.asarray(value, dtype=np.float64), None, name)
    return ctx


def run_raw(module: DtmModule, inputs: dict[str, NdArray]) -> dict[str, NdArray]:
    """Execute the bare transform: a pure function of (params, inputs,
    impl_ref) plus any injected output corruptions."""
    missing = [s for s in module.input_names if s not in inputs]
    if missing:
        raise TransformError(f"module '{module.id}': missing input slot(s) {missing}")
    fn = TRANSFORMS[module.impl_ref]
    outputs = fn(module.params, {s: inputs[s] for s in module.input_names})
    for fault in module.output_faults:
        slot = fault.target_slot
        if slot not in outputs:
            raise TransformError(
                f"module '{module.id}': fault targets unknown output slot '{slot}'"
            )
        outputs[slot] = fault.apply_to_output(outputs[slot])
    return outputs


def run_checked(
    module: DtmModule, inputs: dict[str, NdArray], mode: str = ENFORCE
) -> CheckOutcome:
    """Run the module inside its contracts (see module docstring for the
    ordering and mode semantics)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    params_ctx = param_context(module)
    context = {**params_ctx, **{s: inputs[s] for s in module.input_names if s in inputs}}

    pre_violations: list[Violation] = []
    for pname, expr in module.param_slots:
        pre_violations.extend(check(expr, params_ctx.get(pname), context, "pre", slot=pname))
    for slot, expr in module.input_slots:
        if slot not in inputs:
            raise TransformError(f"module '{module.id}': missing input slot(s) ['{slot}']")
        if expr is not None:
            pre_violations.extend(check(expr, inputs[slot], context, "pre", slot=slot))

    if pre_violations and mode == ENFORCE:
        return CheckOutcome(PRE_FAILED, None, pre_violations, mode)

    outputs = run_raw(module, inputs)
    context = {**context, **outputs}

    post_violations: list[Violation] = []
    for slot, expr in module.output_slots:
        if expr is not None:
            post_violations.extend(check(expr, outputs[slot], context, "post", slot=slot))

    invariant_violations: list[Violation] = []
    if module.invariant is not None:
        invariant_violations.extend(
            check(module.invariant, None, context, "invariant", slot=INVARIANT_SLOT)
        )

    violations = pre_violations + post_violations + invariant_violations
    if pre_violations:
        status = PRE_FAILED
    elif post_violations:
        status = POST_FAILED
    elif invariant_violations:
        status = INVARIANT_FAILED
    else:
        status = PASS

    if status != PASS and mode == ENFORCE:
        return CheckOutcome(status, None, violations, mode)
    return CheckOutcome(status, outputs, violations, mode)


def contract_text(module: DtmModule) -> dict:
    """Canonical constraint strings for provenance records."""

    def rendered(pairs):
        return {s: render_constraints(e) for s, e in pairs if e is not None}

    out = {
        "pre": rendered(module.input_slots),
        "post": rendered(module.output_slots),
        "params": rendered(module.param_slots),
    }
    out["invariant"] = render_constraints(module.invariant) if module.invariant else None
    return out
