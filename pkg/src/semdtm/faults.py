"""Seeded silent-fault injection and detection campaigns.

The six fault kinds model data-level software errors, applied to a module's
outputs or parameters (never by mutating transform code):

    sign_flip      one cell negated
    index_shift    circular rotation of the flattened row-major data (and
                   mask) by `magnitude` cells -- preserves the value multiset,
                   the archetypal fault invisible to value-range predicates
    param_perturb  one parameter entry multiplied by (1 + magnitude)
    nan_inject     one cell set to NaN
    unit_scale     every cell multiplied by `magnitude` (a unit error)
    stuck_value    one cell overwritten with the array's first cell value

Injection is deterministic: the target cell, when not pinned explicitly, is
drawn from the fault's own seed.  A campaign derives one seed per
(master_seed, kind, trial), draws a target and magnitude, injects, runs the
chain in observe mode and attributes detection to the first violation -- at
the faulted stage or downstream -- that is absent from the clean run.  With
``ensemble=True``, trials the contracts miss are additionally cross-checked
against the registered variant pair for the faulted transform family, when
one exists.

Campaign magnitude ranges: index_shift uniform over [1, cells-1]; unit_scale
10**u with |u| uniform in [0.5, 2] and random sign; param_perturb fraction
uniform in [0.05, 0.5].  param_perturb targets are drawn from float-valued
parameter entries only.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .arrays import NdArray
from .chain import ChainSpec, execute_chain, load_sources
from .ensemble import VARIANT_FAMILIES, VariantSet, make_variant_set, run_ensemble
from .modules import DtmModule

__all__ = [
    "FaultSpec",
    "TrialRecord",
    "CampaignReport",
    "FAULT_KINDS",
    "OUTCOMES",
    "inject",
    "run_campaign",
    "summarize",
]

FAULT_KINDS = (
    "sign_flip",
    "index_shift",
    "param_perturb",
    "nan_inject",
    "unit_scale",
    "stuck_value",
)
_OUTPUT_KINDS = ("sign_flip", "index_shift", "nan_inject", "unit_scale", "stuck_value")
_CELL_KINDS = ("sign_flip", "nan_inject", "stuck_value")

OUTCOMES = (
    "detected_pre",
    "detected_post",
    "detected_invariant",
    "detected_ensemble",
    "undetected",
    "errored",
)


@dataclass(frozen=True)
class FaultSpec:
    """One deterministic corruption: what kind, where, how hard, which seed.

    ``slot`` names an output slot (or, for param_perturb, a parameter);
    ``cell`` optionally pins the affected cell (multi-index for outputs, a
    flat entry index for list-valued parameters).  When ``cell`` is None the
    target cell is drawn from ``seed``.
    """

    kind: str
    stage: str | None = None
    slot: str | None = None
    cell: tuple[int, ...] | None = None
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind '{self.kind}'")
        if self.kind == "index_shift":
            if self.magnitude != int(self.magnitude) or self.magnitude < 1:
                raise ValueError("index_shift magnitude must be an integer >= 1")
        if self.kind == "unit_scale":
            if not (self.magnitude > 0) or self.magnitude == 1:
                raise ValueError("unit_scale magnitude must be > 0 and != 1")
        if self.kind == "param_perturb" and not (self.magnitude > 0):
            raise ValueError("param_perturb magnitude (fraction) must be > 0")

    @property
    def target_slot(self) -> str:
        return self.slot or "out"

    def _flat_cell(self, arr: NdArray) -> int:
        if self.cell is not None:
            try:
                return int(np.ravel_multi_index(self.cell, arr.shape))
            except ValueError:
                raise ValueError(
                    f"fault cell {self.cell} does not resolve in shape {arr.shape}"
                ) from None
        rng = np.random.default_rng(self.seed)
        return int(rng.integers(arr.size))

    def apply_to_output(self, arr: NdArray) -> NdArray:
        """The corrupted copy of an output array (pure)."""
        vals = arr.values.copy()
        mask = None if arr.mask is None else arr.mask.copy()
        if self.kind == "unit_scale":
            vals = vals * self.magnitude
        elif self.kind == "index_shift":
            k = int(self.magnitude) % arr.size
            vals = np.roll(vals.ravel(), k).reshape(arr.shape)
            if mask is not None:
                mask = np.roll(mask.ravel(), k).reshape(arr.shape)
        else:
            i = self._flat_cell(arr)
            flat = vals.ravel()
            if self.kind == "sign_flip":
                flat[i] = -flat[i]
            elif self.kind == "nan_inject":
                flat[i] = np.nan
            elif self.kind == "stuck_value":
                flat[i] = flat[0]
            vals = flat.reshape(arr.shape)
        return NdArray(vals, mask, arr.name)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "stage": self.stage,
            "slot": self.slot,
            "cell": list(self.cell) if self.cell is not None else None,
            "magnitude": self.magnitude,
            "seed": self.seed,
        }


def _float_entries(params: dict) -> list[tuple[str, int | None]]:
    """(param name, index) pairs for every float-valued entry, sorted."""
    out = []
    for name in sorted(params):
        value = params[name]
        if isinstance(value, float):
            out.append((name, None))
        elif isinstance(value, (list, tuple)):
            out.extend(
                (name, i) for i, v in enumerate(value) if isinstance(v, float)
            )
    return out


def _perturb_params(module: DtmModule, fault: FaultSpec) -> dict:
    entries = _float_entries(module.params)
    if fault.slot is not None:
        entries = [e for e in entries if e[0] == fault.slot]
        if not entries:
            raise ValueError(
                f"param_perturb target '{fault.slot}' is not a float-valued "
                f"parameter of module '{module.id}'"
            )
        if fault.cell is not None:
            want = int(fault.cell[0])
            entries = [e for e in entries if e[1] == want or e[1] is None]
            if not entries:
                raise ValueError(
                    f"param_perturb entry index {want} does not resolve in "
                    f"parameter '{fault.slot}'"
                )
    if not entries:
        raise ValueError(f"module '{module.id}' has no float-valued parameters")
    if len(entries) == 1:
        name, idx = entries[0]
    else:
        rng = np.random.default_rng(fault.seed)
        name, idx = entries[int(rng.integers(len(entries)))]

    params = {
        k: (list(v) if isinstance(v, (list, tuple)) else v)
        for k, v in module.params.items()
    }
    factor = 1.0 + fault.magnitude
    if idx is None:
        params[name] = params[name] * factor
    else:
        params[name][idx] = params[name][idx] * factor
    return params


def inject(module: DtmModule, fault: FaultSpec) -> DtmModule:
    """A wrapped copy of ``module`` carrying the corruption; the original is
    unchanged and wrapping composes (faults apply in injection order)."""
    if fault.kind == "param_perturb":
        return replace(module, params=_perturb_params(module, fault))
    slot = fault.target_slot
    if slot not in module.output_names:
        raise ValueError(
            f"fault targets unknown output slot '{slot}' of module '{module.id}'"
        )
    return replace(module, output_faults=module.output_faults + (fault,))


@dataclass(frozen=True)
class TrialRecord:
    kind: str
    index: int
    fault: FaultSpec
    outcome: str  # one of OUTCOMES
    detecting_stage: str | None
    affected_cells: int
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "index": self.index,
            "fault": self.fault.to_dict(),
            "outcome": self.outcome,
            "detecting_stage": self.detecting_stage,
            "affected_cells": self.affected_cells,
            "error": self.error,
        }


@dataclass
class CampaignReport:
    master_seed: int
    kinds: tuple[str, ...]
    trials_per_kind: int
    ensemble: bool
    tolerance: float
    counts: dict[str, dict[str, int]]  # kind -> outcome -> count
    trials: list[TrialRecord] = field(default_factory=list)

    def detection_rate(self, kind: str) -> float:
        c = self.counts[kind]
        detected = sum(c[o] for o in OUTCOMES if o.startswith("detected"))
        total = sum(c[o] for o in OUTCOMES)
        return detected / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "schema": "semdtm.campaign@1",
            "settings": {
                "master_seed": self.master_seed,
                "kinds": list(self.kinds),
                "trials_per_kind": self.trials_per_kind,
                "ensemble": self.ensemble,
                "tolerance": self.tolerance,
                "mode": "observe",
            },
            "counts": {k: dict(sorted(v.items())) for k, v in sorted(self.counts.items())},
            "trials": [t.to_dict() for t in self.trials],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _derive_seed(master_seed: int, kind: str, index: int) -> int:
    digest = hashlib.sha256(f"{master_seed}:{kind}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _cells_differ(a: NdArray, b: NdArray) -> int:
    if a.shape != b.shape:
        return a.size
    ma, mb = a.mask_or_false(), b.mask_or_false()
    both_nan = np.isnan(a.values) & np.isnan(b.values)
    value_diff = ~both_nan & ~(a.values == b.values)
    return int(np.count_nonzero((value_diff & ~ma & ~mb) | (ma != mb)))


def _violation_keys(result) -> set[tuple]:
    keys = set()
    for sid, outcome in result.outcomes.items():
        for v in outcome.violations:
            keys.add((sid,) + v.key())
    return keys


def run_campaign(
    spec: ChainSpec,
    kinds: list[str],
    trials_per_kind: int,
    master_seed: int,
    ensemble: bool = False,
    tol: float = 1e-9,
) -> CampaignReport:
    """Measure which injected faults the chain's contracts catch.

    Fully reproducible from ``master_seed``; trial errors are recorded, not
    fatal.  The chain runs in observe mode so every check gets a chance to
    report.
    """
    if trials_per_kind < 1:
        raise ValueError(f"trials_per_kind must be >= 1, got {trials_per_kind}")
    for kind in kinds:
        if kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind '{kind}' (have {list(FAULT_KINDS)})")

    sources = load_sources(spec)
    clean = execute_chain(spec, sources, "observe", out_dir=None, compute_digests=False)
    if clean.halted_stage is not None:
        raise ValueError("clean chain run did not complete")
    clean_keys = _violation_keys(clean)
    stage_order = {s.id: i for i, s in enumerate(spec.stages)}
    stage_by_id = {s.id: s for s in spec.stages}

    applicable: dict[str, list[tuple[str, str]]] = {}
    for kind in kinds:
        targets: list[tuple[str, str]] = []
        for stage in spec.stages:
            if kind == "param_perturb":
                targets.extend(
                    (stage.id, name)
                    for name in sorted({n for n, _ in _float_entries(stage.module.params)})
                )
            else:
                targets.extend((stage.id, slot) for slot in stage.module.output_names)
        if not targets:
            raise ValueError(f"no applicable target in the chain for kind '{kind}'")
        applicable[kind] = targets

    counts = {k: {o: 0 for o in OUTCOMES} for k in kinds}
    trials: list[TrialRecord] = []

    for kind in kinds:
        for index in range(trials_per_kind):
            seed = _derive_seed(master_seed, kind, index)
            rng = np.random.default_rng(seed)
            sid, slot = applicable[kind][int(rng.integers(len(applicable[kind])))]
            stage = stage_by_id[sid]

            cell = None
            magnitude = 0.0
            if kind == "param_perturb":
                entries = [e for e in _float_entries(stage.module.params) if e[0] == slot]
                _, idx = entries[int(rng.integers(len(entries)))]
                cell = None if idx is None else (idx,)
                magnitude = float(rng.uniform(0.05, 0.5))
            else:
                ref_shape = clean.intermediates[f"{sid}.{slot}"].shape
                size = int(np.prod(ref_shape))
                if kind in _CELL_KINDS:
                    flat = int(rng.integers(size))
                    cell = tuple(int(x) for x in np.unravel_index(flat, ref_shape))
                elif kind == "index_shift":
                    magnitude = float(rng.integers(1, size)) if size > 1 else 1.0
                elif kind == "unit_scale":
                    sign = 1.0 if rng.integers(2) else -1.0
                    magnitude = float(10.0 ** (sign * rng.uniform(0.5, 2.0)))

            fault = FaultSpec(kind, sid, slot, cell, magnitude, seed)
            record = _run_trial(
                spec, sources, stage_by_id, stage_order, clean, clean_keys,
                fault, index, ensemble, tol,
            )
            counts[kind][record.outcome] += 1
            trials.append(record)

    return CampaignReport(
        master_seed, tuple(kinds), trials_per_kind, ensemble, tol, counts, trials
    )


def _run_trial(
    spec, sources, stage_by_id, stage_order, clean, clean_keys,
    fault: FaultSpec, index: int, ensemble: bool, tol: float,
) -> TrialRecord:
    sid = fault.stage
    faulted_module = inject(stage_by_id[sid].module, fault)
    stages = tuple(
        replace(s, module=faulted_module) if s.id == sid else s for s in spec.stages
    )
    faulted_spec = ChainSpec(spec.sources, stages, spec.sinks)

    try:
        result = execute_chain(
            faulted_spec, sources, "observe", out_dir=None, compute_digests=False
        )
    except Exception as exc:
        return TrialRecord(
            fault.kind, index, fault, "errored", None, 0, f"{type(exc).__name__}: {exc}"
        )

    faulted_at = stage_order[sid]
    detection = None
    for stage in spec.stages:
        if stage_order[stage.id] < faulted_at or stage.id not in result.outcomes:
            continue
        for v in result.outcomes[stage.id].violations:
            if (stage.id,) + v.key() not in clean_keys:
                detection = (f"detected_{v.phase}", stage.id)
                break
        if detection:
            break

    affected = 0
    for key, arr in result.intermediates.items():
        ref_sid = key.split(".", 1)[0]
        if stage_order[ref_sid] >= faulted_at and key in clean.intermediates:
            affected += _cells_differ(arr, clean.intermediates[key])

    if detection is None and ensemble:
        family = stage_by_id[sid].module.family
        if family in VARIANT_FAMILIES:
            vs = make_variant_set(family, stage_by_id[sid].module.params)
            faulted_variant = replace(faulted_module, id=f"{family}/faulted")
            trio = VariantSet(family, vs.variants + (faulted_variant,))
            bound = {
                slot: (sources | clean.intermediates)[ref]
                for slot, ref in stage_by_id[sid].bindings.items()
            }
            try:
                report = run_ensemble(trio, bound, tol)
                if faulted_variant.id in report.dissenters:
                    detection = ("detected_ensemble", sid)
            except Exception as exc:
                return TrialRecord(
                    fault.kind, index, fault, "errored", None, affected,
                    f"{type(exc).__name__}: {exc}",
                )

    if detection is None:
        return TrialRecord(fault.kind, index, fault, "undetected", None, affected)
    return TrialRecord(fault.kind, index, fault, detection[0], detection[1], affected)


def summarize(report: CampaignReport) -> str:
    """One row per kind: trials, per-phase detections, silent-survival rate
    (rates with 4 decimal places)."""
    header = (
        f"{'kind':<14}{'trials':>7}{'pre':>6}{'post':>6}{'invar':>7}"
        f"{'ensem':>7}{'undet':>7}{'error':>7}{'detect_rate':>13}{'silent_rate':>13}"
    )
    lines = [header]
    for kind in report.kinds:
        c = report.counts[kind]
        total = sum(c[o] for o in OUTCOMES)
        silent = c["undetected"] / total if total else 0.0
        lines.append(
            f"{kind:<14}{total:>7}{c['detected_pre']:>6}{c['detected_post']:>6}"
            f"{c['detected_invariant']:>7}{c['detected_ensemble']:>7}"
            f"{c['undetected']:>7}{c['errored']:>7}"
            f"{report.detection_rate(kind):>13.4f}{silent:>13.4f}"
        )
    return "\n".join(lines) + "\n"
