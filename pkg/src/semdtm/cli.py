"""Command-line front end: semdtm check | run | campaign | ensemble.

Exit codes: 0 success, 2 constraint violation (enforce), 3 spec/parse error,
4 ensemble disagreement, 5 I/O failure.  All randomness flows from --seed;
defaults are echoed in the JSON reports.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .arrays import GridParseError, load_text
from .chain import (
    ChainValidationError,
    PipelineError,
    atomic_write_text,
    export_report,
    load_pipeline,
    run_chain,
    validate_chain,
)
from .constraints import ConstraintParseError, check, list_predicates, parse_constraints
from .ensemble import list_variant_sets, make_variant_set, run_ensemble
from .faults import FAULT_KINDS, run_campaign, summarize
from .modules import TransformError

OK = 0
VIOLATION = 2
SPEC_ERROR = 3
DISAGREEMENT = 4
IO_ERROR = 5


def _fail(code: int, message: str) -> int:
    print(f"semdtm: {message}", file=sys.stderr)
    return code


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _format_location(loc) -> str:
    if isinstance(loc, tuple):
        return "[" + ",".join(str(i) for i in loc) + "]"
    return str(loc)


def cmd_check(args) -> int:
    try:
        text = _read(args.grid_file)
    except OSError as exc:
        return _fail(IO_ERROR, str(exc))
    try:
        subject = load_text(text, "subject")
        expr = parse_constraints(args.constraints)
        violations = check(expr, subject, {"subject": subject}, "pre", slot="subject")
    except (GridParseError, ConstraintParseError) as exc:
        return _fail(SPEC_ERROR, str(exc))
    for v in violations:
        print(f"{v.predicate_name} {_format_location(v.location)} observed={v.observed}")
    return OK if not violations else VIOLATION


def cmd_run(args) -> int:
    try:
        spec = load_pipeline(args.spec_file)
    except OSError as exc:
        return _fail(IO_ERROR, str(exc))
    except PipelineError as exc:
        return _fail(SPEC_ERROR, str(exc))
    diagnostics = validate_chain(spec)
    if diagnostics:
        for d in diagnostics:
            print(f"semdtm: {d}", file=sys.stderr)
        return SPEC_ERROR
    try:
        result = run_chain(spec, args.mode, args.out)
    except OSError as exc:
        return _fail(IO_ERROR, str(exc))
    except (GridParseError, ChainValidationError, TransformError) as exc:
        return _fail(SPEC_ERROR, str(exc))

    print(export_report(result.provenance, "text"), end="")
    run_doc = {
        "schema": "semdtm.run@1",
        "settings": {"mode": args.mode, "out": str(args.out), "spec": str(args.spec_file)},
        "halted_stage": result.halted_stage,
        "sinks": sorted(result.sinks),
        "persisted": sorted(result.intermediates),
    }
    atomic_write_text(Path(args.out) / "run.json", json.dumps(run_doc, indent=2, sort_keys=True) + "\n")

    if result.halted_stage is not None:
        outcome = result.outcomes[result.halted_stage]
        print(f"semdtm: halted at stage '{result.halted_stage}' ({outcome.status})", file=sys.stderr)
        for v in outcome.violations:
            print(
                f"  {v.phase} {v.slot}: {v.predicate_name} {_format_location(v.location)} "
                f"observed={v.observed} expected {v.expectation}",
                file=sys.stderr,
            )
        return VIOLATION
    return OK


def cmd_campaign(args) -> int:
    try:
        spec = load_pipeline(args.spec_file)
    except OSError as exc:
        return _fail(IO_ERROR, str(exc))
    except PipelineError as exc:
        return _fail(SPEC_ERROR, str(exc))
    diagnostics = validate_chain(spec)
    if diagnostics:
        for d in diagnostics:
            print(f"semdtm: {d}", file=sys.stderr)
        return SPEC_ERROR
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in FAULT_KINDS]
    if unknown:
        return _fail(SPEC_ERROR, f"unknown fault kind(s) {unknown}; have {list(FAULT_KINDS)}")
    if args.trials < 1:
        return _fail(SPEC_ERROR, "--trials must be >= 1")
    try:
        report = run_campaign(
            spec, kinds, args.trials, args.seed, ensemble=args.ensemble, tol=args.tol
        )
    except OSError as exc:
        return _fail(IO_ERROR, str(exc))
    except (GridParseError, ValueError) as exc:
        return _fail(SPEC_ERROR, str(exc))
    print(summarize(report), end="")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "campaign.json", report.to_json())
    return OK


def cmd_ensemble(args) -> int:
    if args.variant_set not in list_variant_sets():
        return _fail(
            SPEC_ERROR,
            f"unknown variant set '{args.variant_set}' (have {list_variant_sets()})",
        )
    inputs = {}
    for item in args.input:
        slot, sep, path = item.partition("=")
        if not sep:
            return _fail(SPEC_ERROR, f"--input must look like slot=path, got {item!r}")
        try:
            inputs[slot] = load_text(_read(path), slot)
        except OSError as exc:
            return _fail(IO_ERROR, str(exc))
        except GridParseError as exc:
            return _fail(SPEC_ERROR, str(exc))

    try:
        params = json.loads(args.params) if args.params else {}
    except json.JSONDecodeError as exc:
        return _fail(SPEC_ERROR, f"--params is not valid JSON: {exc}")
    if args.variant_set == "focal_mean":
        params.setdefault("window", 3)
    if args.variant_set == "weighted_sum" and "weights" not in params:
        k = len(inputs)
        if k == 0:
            return _fail(SPEC_ERROR, "weighted_sum needs at least one --input")
        params["weights"] = [1.0 / k] * k

    try:
        vs = make_variant_set(args.variant_set, params)
    except (ValueError, TransformError) as exc:
        return _fail(SPEC_ERROR, str(exc))
    missing = [s for s in vs.variants[0].input_names if s not in inputs]
    if missing:
        return _fail(SPEC_ERROR, f"missing --input for slot(s) {missing}")

    report = run_ensemble(vs, inputs, args.tol)
    print(f"variants: {', '.join(report.variant_ids)}")
    print(f"tolerance: {report.tolerance!r}")
    print("agreement (max abs diff):")
    for vid, row in zip(report.variant_ids, report.agreement):
        cells = " ".join(f"{x:.3e}" for x in row)
        print(f"  {vid:<32} {cells}")
    if report.consensus is not None:
        label = "unanimous" if report.unanimous else "majority"
        print(f"consensus ({label}): {', '.join(report.consensus_ids)}")
    else:
        print("consensus: none")
    print(f"dissenters: {', '.join(report.dissenters) if report.dissenters else 'none'}")
    for vid, reason in sorted(report.failures.items()):
        print(f"failure {vid}: {reason}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"schema": "semdtm.ensemble@1", "settings": {"variant_set": args.variant_set}}
    doc.update(report.to_dict())
    atomic_write_text(out / "ensemble.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return OK if report.consensus is not None else DISAGREEMENT


def cmd_predicates(args) -> int:
    for p in list_predicates():
        arity = f"{p.arity}+" if p.variadic else str(p.arity)
        types = ", ".join(p.arg_types) if p.arg_types else "-"
        print(f"{p.name:<18} arity={arity:<3} args=({types}) {p.description}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semdtm",
        description="Semantic checks, fault campaigns and design-diversity "
        "ensembles for chained array transformations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode=False):
        p.add_argument("--out", default="out", help="output directory (default ./out)")
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        p.add_argument("--tol", type=float, default=1e-9, help="agreement tolerance (default 1e-9)")
        if mode:
            p.add_argument(
                "--mode", choices=("enforce", "observe"), default="enforce",
                help="enforce halts on violation; observe only flags (default enforce)",
            )

    p = sub.add_parser("check", help="check a grid file against a constraint expression")
    p.add_argument("grid_file")
    p.add_argument("constraints")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("run", help="run a pipeline spec, persisting all intermediates")
    p.add_argument("spec_file")
    common(p, mode=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("campaign", help="run a seeded fault-injection campaign")
    p.add_argument("spec_file")
    p.add_argument("--kinds", default=",".join(FAULT_KINDS), help="comma-separated fault kinds")
    p.add_argument("--trials", type=int, default=100, help="trials per kind (default 100)")
    p.add_argument("--ensemble", action="store_true", help="cross-check undetected trials against variant pairs")
    common(p)
    p.set_defaults(fn=cmd_campaign)

    p = sub.add_parser("ensemble", help="run a registered variant set over named inputs")
    p.add_argument("variant_set")
    p.add_argument("--input", action="append", default=[], metavar="SLOT=FILE")
    p.add_argument("--params", default="", help="transform parameters as JSON")
    common(p)
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("predicates", help="list the builtin constraint predicates")
    p.set_defaults(fn=cmd_predicates)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
