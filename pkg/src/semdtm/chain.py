"""Acyclic dataflow over contract-checked modules, with full transparency.

Every executed stage's every output is persisted (no opt-out) together with a
provenance record carrying content digests of the parameters and bound
inputs, the canonical contract text, the check status and wall time.  In
enforce mode the first failing stage halts the chain and the remaining
stages are recorded as ``skipped``; observe mode runs to completion.

The pipeline spec file is JSON:

    {
      "sources": {"elevation": "elevation.grid"},
      "stages": [
        {"id": "norm", "module": "rescale_minmax", "params": {},
         "bindings": {"in": "elevation"}},
        {"id": "cut", "module": "threshold_mask", "params": {"t": 0.5},
         "bindings": {"in": "norm.out"},
         "contracts": {"post": {"out": "binary"}}}
      ],
      "sinks": ["cut.out"]
    }

Bindings refer to a source by name or to an earlier stage's output as
"<stage>.<slot>".  A stage without a "contracts" key gets the builtin's
canonical contracts; with one, the given contracts replace them entirely.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

from .arrays import GridParseError, NdArray, load_text, render_grid
from .modules import (
    ENFORCE,
    MODES,
    PASS,
    CheckOutcome,
    DtmModule,
    contract_text,
    make_module,
    run_checked,
)

__all__ = [
    "Stage",
    "ChainSpec",
    "Diagnostic",
    "ProvenanceRecord",
    "ChainResult",
    "PipelineError",
    "ChainValidationError",
    "validate_chain",
    "load_sources",
    "execute_chain",
    "run_chain",
    "export_report",
    "load_pipeline",
    "content_digest",
    "params_digest",
    "atomic_write_text",
]

SKIPPED = "skipped"


class PipelineError(ValueError):
    """Malformed pipeline spec document."""


class ChainValidationError(ValueError):
    def __init__(self, diagnostics: list["Diagnostic"]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class Stage:
    id: str
    module: DtmModule
    bindings: dict[str, str]  # input slot -> source name or "stage.slot"


@dataclass(frozen=True)
class ChainSpec:
    sources: dict[str, str]  # source name -> file path
    stages: tuple[Stage, ...]
    sinks: tuple[tuple[str, str], ...]  # (stage id, output slot)


@dataclass(frozen=True)
class Diagnostic:
    stage_id: str
    reason: str

    def __str__(self):
        return f"[{self.stage_id}] {self.reason}"


@dataclass(frozen=True)
class ProvenanceRecord:
    stage_id: str
    module_id: str
    param_digest: str
    input_digests: dict[str, str]
    contract_text: dict
    status: str
    violation_count: int
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "stage_id": self.stage_id,
            "module_id": self.module_id,
            "param_digest": self.param_digest,
            "input_digests": dict(sorted(self.input_digests.items())),
            "contract_text": self.contract_text,
            "status": self.status,
            "violation_count": self.violation_count,
            "wall_time": self.wall_time,
        }


@dataclass(frozen=True)
class ChainResult:
    sinks: dict[str, NdArray]  # "stage.slot" -> array (available sinks only)
    intermediates: dict[str, NdArray]  # every delivered stage output
    provenance: list[ProvenanceRecord]
    outcomes: dict[str, CheckOutcome]
    halted_stage: str | None
    mode: str

    @property
    def ok(self) -> bool:
        return self.halted_stage is None and all(
            r.status == PASS or r.status == SKIPPED for r in self.provenance
        )


def content_digest(a: NdArray) -> str:
    """SHA-256 of the canonical serialization (grid text for 2-D arrays)."""
    if a.ndim == 2:
        payload = render_grid(a)
    else:
        mask = a.mask_or_false()
        payload = (
            f"shape {list(a.shape)}\n"
            + " ".join(repr(float(v)) for v in a.values.ravel())
            + "\n"
            + " ".join("1" if m else "0" for m in mask.ravel())
            + "\n"
        )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def params_digest(params: dict) -> str:
    return hashlib.sha256(
        json.dumps(params, sort_keys=True).encode("utf-8")
    ).hexdigest()


def validate_chain(spec: ChainSpec) -> list[Diagnostic]:
    """Static diagnostics; an empty list means the spec is runnable."""
    out: list[Diagnostic] = []
    for name in spec.sources:
        if "." in name or not name:
            out.append(Diagnostic("(sources)", f"invalid source name '{name}'"))

    seen: dict[str, Stage] = {}
    for stage in spec.stages:
        if stage.id in seen:
            out.append(Diagnostic(stage.id, "duplicate stage id"))
        later = {s.id for s in spec.stages} - set(seen) - {stage.id}

        slots = set(stage.module.input_names)
        missing = slots - set(stage.bindings)
        extra = set(stage.bindings) - slots
        for slot in sorted(missing):
            out.append(Diagnostic(stage.id, f"input slot '{slot}' is not bound"))
        for slot in sorted(extra):
            out.append(Diagnostic(stage.id, f"binding for unknown input slot '{slot}'"))

        for slot, ref in sorted(stage.bindings.items()):
            if "." in ref:
                dep, _, dep_slot = ref.partition(".")
                if dep == stage.id:
                    out.append(Diagnostic(stage.id, f"self reference {stage.id}<-{dep}"))
                elif dep in later:
                    out.append(Diagnostic(stage.id, f"forward reference {stage.id}<-{dep}"))
                elif dep not in seen:
                    out.append(Diagnostic(stage.id, f"unknown stage reference '{dep}'"))
                elif dep_slot not in seen[dep].module.output_names:
                    out.append(
                        Diagnostic(stage.id, f"stage '{dep}' has no output slot '{dep_slot}'")
                    )
            elif ref not in spec.sources:
                out.append(Diagnostic(stage.id, f"unknown source '{ref}'"))
        seen[stage.id] = stage

    for sid, slot in spec.sinks:
        if sid not in seen:
            out.append(Diagnostic(sid, f"sink references unknown stage '{sid}'"))
        elif slot not in seen[sid].module.output_names:
            out.append(Diagnostic(sid, f"sink references unknown slot '{sid}.{slot}'"))
    return out


def load_sources(spec: ChainSpec) -> dict[str, NdArray]:
    """Parse every source file (grid or CSV, sniffed)."""
    arrays = {}
    for name, path in spec.sources.items():
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read source '{name}' from {path}: {exc}") from exc
        try:
            arrays[name] = load_text(text, name)
        except GridParseError as exc:
            raise GridParseError(f"source '{name}' ({path}): {exc}") from exc
    return arrays


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def execute_chain(
    spec: ChainSpec,
    source_arrays: dict[str, NdArray],
    mode: str = ENFORCE,
    out_dir: Path | str | None = None,
    compute_digests: bool = True,
) -> ChainResult:
    """Run a validated chain over in-memory sources.

    Stage order in the spec is the execution order (validation guarantees it
    is topological).  Results are bit-identical for any valid order because
    every module is pure.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    diagnostics = validate_chain(spec)
    if diagnostics:
        raise ChainValidationError(diagnostics)

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    env: dict[str, NdArray] = dict(source_arrays)
    provenance: list[ProvenanceRecord] = []
    outcomes: dict[str, CheckOutcome] = {}
    intermediates: dict[str, NdArray] = {}
    halted: str | None = None

    for stage in spec.stages:
        if halted is not None:
            provenance.append(
                ProvenanceRecord(
                    stage.id,
                    stage.module.id,
                    params_digest(stage.module.params),
                    {},
                    contract_text(stage.module),
                    SKIPPED,
                    0,
                    0.0,
                )
            )
            continue

        bound = {slot: env[ref] for slot, ref in stage.bindings.items()}
        t0 = time.perf_counter()
        outcome = run_checked(stage.module, bound, mode)
        wall = time.perf_counter() - t0
        outcomes[stage.id] = outcome

        digests = (
            {slot: content_digest(arr) for slot, arr in sorted(bound.items())}
            if compute_digests
            else {}
        )
        provenance.append(
            ProvenanceRecord(
                stage.id,
                stage.module.id,
                params_digest(stage.module.params),
                digests,
                contract_text(stage.module),
                outcome.status,
                len(outcome.violations),
                wall,
            )
        )

        if outcome.outputs is not None:
            for slot, arr in outcome.outputs.items():
                key = f"{stage.id}.{slot}"
                env[key] = arr
                intermediates[key] = arr
                if out_path is not None:
                    atomic_write_text(out_path / f"{stage.id}.{slot}.grid", render_grid(arr))
        if mode == ENFORCE and outcome.status != PASS:
            halted = stage.id

    if out_path is not None:
        atomic_write_text(out_path / "provenance.json", export_report(provenance, "json"))

    sinks = {
        f"{sid}.{slot}": env[f"{sid}.{slot}"]
        for sid, slot in spec.sinks
        if f"{sid}.{slot}" in env
    }
    return ChainResult(sinks, intermediates, provenance, outcomes, halted, mode)


def run_chain(
    spec: ChainSpec, mode: str = ENFORCE, out_dir: Path | str | None = "out"
) -> ChainResult:
    """Load the source files, run the chain, persist every intermediate plus
    a provenance report under ``out_dir``."""
    return execute_chain(spec, load_sources(spec), mode, out_dir)


def export_report(provenance: list[ProvenanceRecord], format: str = "text") -> str:
    """Deterministic provenance serialization; one line per stage in text
    form, machine-parseable in json form."""
    if format == "json":
        doc = {
            "schema": "semdtm.provenance@1",
            "stages": [r.to_dict() for r in provenance],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if format == "text":
        lines = [
            f"{r.stage_id} module={r.module_id} status={r.status} "
            f"violations={r.violation_count} wall_time={r.wall_time:.6f}s"
            for r in provenance
        ]
        return "".join(line + "\n" for line in lines)
    raise ValueError(f"format must be 'text' or 'json', got {format!r}")


def load_pipeline(path: Path | str) -> ChainSpec:
    """Parse a pipeline spec file (see module docstring for the schema).
    Relative source paths are resolved against the spec file's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PipelineError(f"{path}: invalid JSON: {exc}") from exc
    return pipeline_from_dict(doc, base_dir=path.parent)


def pipeline_from_dict(doc: dict, base_dir: Path | str | None = None) -> ChainSpec:
    if not isinstance(doc, dict):
        raise PipelineError("pipeline spec must be a JSON object")
    for key in ("sources", "stages", "sinks"):
        if key not in doc:
            raise PipelineError(f"pipeline spec is missing the '{key}' key")

    sources = doc["sources"]
    if not isinstance(sources, dict) or not all(
        isinstance(v, str) for v in sources.values()
    ):
        raise PipelineError("'sources' must map source names to file paths")
    if base_dir is not None:
        sources = {k: str(Path(base_dir) / v) for k, v in sources.items()}

    stages = []
    for i, item in enumerate(doc["stages"]):
        if not isinstance(item, dict):
            raise PipelineError(f"stage #{i} must be an object")
        for key in ("id", "module", "bindings"):
            if key not in item:
                raise PipelineError(f"stage #{i} is missing the '{key}' key")
        try:
            module = make_module(
                item["module"],
                item.get("params") or {},
                module_id=item["module"],
                contracts=item.get("contracts"),
            )
        except (ValueError, KeyError) as exc:
            raise PipelineError(f"stage '{item['id']}': {exc}") from exc
        bindings = item["bindings"]
        if not isinstance(bindings, dict):
            raise PipelineError(f"stage '{item['id']}': bindings must be an object")
        stages.append(Stage(str(item["id"]), module, dict(bindings)))

    sinks = []
    for ref in doc["sinks"]:
        if not isinstance(ref, str) or "." not in ref:
            raise PipelineError(f"sink {ref!r} must look like 'stage.slot'")
        sid, _, slot = ref.partition(".")
        sinks.append((sid, slot))

    return ChainSpec(dict(sources), tuple(stages), tuple(sinks))
