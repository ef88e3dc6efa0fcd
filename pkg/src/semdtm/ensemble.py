"""Design-diversity ensembles: run supposedly-equivalent implementations of
one abstract transform and flag silent divergence.

Membership in the consensus group is driven by a single rule: the largest
set of variants that pairwise agree within ``tol`` (max absolute difference
over all output slots; any output mask mismatch or shape mismatch counts as
total disagreement).  A consensus needs a strict majority (> k/2) -- with
k = 2 any disagreement means no consensus rather than an arbitrary pick.
Ties between equally large groups go to the group with the lexicographically
smallest sorted id tuple.  The consensus output is the cellwise median of
the agreeing variants.

Shipped variant pairs: ``focal_mean`` {sliding_window, summed_area_table}
and ``weighted_sum`` {sequential_sum, compensated_sum}, each carrying the
same canonical contracts as the builtin.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .arrays import NdArray, compare
from .modules import DtmModule, make_module, run_raw

__all__ = [
    "VariantSet",
    "EnsembleReport",
    "run_ensemble",
    "make_variant_set",
    "list_variant_sets",
    "VARIANT_FAMILIES",
]

VARIANT_FAMILIES = {
    "focal_mean": ("sliding_window", "summed_area_table"),
    "weighted_sum": ("sequential_sum", "compensated_sum"),
}


@dataclass(frozen=True)
class VariantSet:
    abstract_id: str
    variants: tuple[DtmModule, ...]

    def __post_init__(self):
        if len(self.variants) < 2:
            raise ValueError("a variant set needs at least 2 variants")
        ids = [v.id for v in self.variants]
        if len(set(ids)) != len(ids):
            raise ValueError(f"variant ids must be unique, got {ids}")
        signature = (self.variants[0].input_names, self.variants[0].output_names)
        for v in self.variants[1:]:
            if (v.input_names, v.output_names) != signature:
                raise ValueError(
                    f"variant '{v.id}' does not share the slot signature of "
                    f"'{self.variants[0].id}'"
                )

    @property
    def ids(self) -> list[str]:
        return [v.id for v in self.variants]


@dataclass(frozen=True)
class EnsembleReport:
    variant_ids: tuple[str, ...]
    agreement: tuple[tuple[float, ...], ...]  # k x k max_abs_diff, inf = incomparable
    consensus_ids: tuple[str, ...]
    dissenters: tuple[str, ...]
    consensus: dict[str, NdArray] | None
    tolerance: float
    unanimous: bool
    failures: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "variant_ids": list(self.variant_ids),
            "agreement": [[_json_float(x) for x in row] for row in self.agreement],
            "consensus_ids": list(self.consensus_ids),
            "dissenters": list(self.dissenters),
            "has_consensus": self.consensus is not None,
            "tolerance": self.tolerance,
            "unanimous": self.unanimous,
            "failures": dict(sorted(self.failures.items())),
        }


def _json_float(x: float):
    return x if np.isfinite(x) else repr(float(x))


def make_variant_set(
    family: str, params: dict | None = None, contracts: dict | None = None
) -> VariantSet:
    """The shipped variant pair for ``family``, parameterized like the builtin."""
    if family not in VARIANT_FAMILIES:
        raise KeyError(
            f"no registered variant set '{family}' (have {sorted(VARIANT_FAMILIES)})"
        )
    variants = tuple(
        make_module(
            f"{family}/{variant}",
            params,
            module_id=f"{family}/{variant}",
            contracts=contracts,
        )
        for variant in VARIANT_FAMILIES[family]
    )
    return VariantSet(family, variants)


def list_variant_sets() -> list[str]:
    return sorted(VARIANT_FAMILIES)


def _pair_diff(a: dict[str, NdArray], b: dict[str, NdArray]) -> float:
    worst = 0.0
    for slot, arr in a.items():
        try:
            d = compare(arr, b[slot])
        except (ValueError, KeyError):
            return float("inf")
        if d.mask_mismatch_count:
            return float("inf")
        worst = max(worst, d.max_abs_diff)
    return worst


def _consensus_median(outputs: list[dict[str, NdArray]]) -> dict[str, NdArray]:
    slots = outputs[0].keys()
    merged = {}
    for slot in slots:
        vals = np.stack([o[slot].values for o in outputs])
        masks = np.stack([o[slot].mask_or_false() for o in outputs])
        med = np.ma.median(np.ma.masked_array(vals, masks), axis=0)
        all_masked = masks.all(axis=0)
        merged[slot] = NdArray(
            np.where(all_masked, 0.0, np.ma.filled(med, 0.0)),
            all_masked if all_masked.any() else None,
            slot,
        )
    return merged


def run_ensemble(vs: VariantSet, inputs: dict[str, NdArray], tol: float) -> EnsembleReport:
    """Execute every variant via run_raw and report the agreement structure.

    A variant whose execution raises is marked dissenting with the reason in
    ``failures``; the others are still compared.
    """
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    k = len(vs.variants)
    outputs: list[dict[str, NdArray] | None] = []
    failures: dict[str, str] = {}
    for v in vs.variants:
        try:
            outputs.append(run_raw(v, inputs))
        except Exception as exc:  # a failing variant is a finding, not a crash
            outputs.append(None)
            failures[v.id] = f"{type(exc).__name__}: {exc}"

    agreement = [[0.0] * k for _ in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            if outputs[i] is None or outputs[j] is None:
                d = float("inf")
            else:
                d = _pair_diff(outputs[i], outputs[j])
            agreement[i][j] = agreement[j][i] = d

    ids = vs.ids
    ok = sorted((i for i in range(k) if outputs[i] is not None), key=lambda i: ids[i])
    majority = k // 2 + 1

    group: tuple[int, ...] = ()
    for size in range(len(ok), majority - 1, -1):
        candidates = sorted(
            combinations(ok, size), key=lambda c: tuple(ids[i] for i in c)
        )
        for combo in candidates:
            if all(agreement[i][j] <= tol for i, j in combinations(combo, 2)):
                group = combo
                break
        if group:
            break

    if group:
        consensus_ids = tuple(sorted(ids[i] for i in group))
        consensus = _consensus_median([outputs[i] for i in group])
        dissenters = tuple(sorted(v for v in ids if v not in consensus_ids))
    else:
        consensus_ids = ()
        consensus = None
        dissenters = tuple(sorted(ids))

    unanimous = len(group) == k
    return EnsembleReport(
        variant_ids=tuple(ids),
        agreement=tuple(tuple(row) for row in agreement),
        consensus_ids=consensus_ids,
        dissenters=dissenters,
        consensus=consensus,
        tolerance=float(tol),
        unanimous=unanimous,
        failures=failures,
    )
