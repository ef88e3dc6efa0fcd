"""Shipped demo chain and the contract-vs-ensemble complementarity scenario.

The demo chain is a four-stage branching dataflow over a 6x6 elevation grid:

    normalize (rescale_minmax) --+--> smooth (focal_mean 3x3) --+
                                 |                              v
                                 +------------------> blend (weighted_sum)
                                                                |
                                                                v
                                                  hotspots (threshold_mask 0.5)

Every stage output is covered by a sign-sensitive contract (in_range /
min_ge_slot / binary), so a sign flip of any nonzero cell is caught at the
faulted stage itself; an index_shift, which preserves the value multiset,
sails through all of them -- that gap is what the ensemble covers.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .arrays import NdArray, render_grid
from .chain import ChainSpec, load_pipeline
from .ensemble import VariantSet, make_variant_set
from .faults import FaultSpec, inject
from .modules import DtmModule, make_module

__all__ = [
    "demo_elevation",
    "demo_pipeline_dict",
    "write_demo",
    "demo_chain_spec",
    "complementarity_scenario",
]

_ELEVATION = [
    [121.4, 118.2, 116.9, 119.5, 123.8, 127.1],
    [117.6, 113.3, 111.0, 114.7, 120.2, 125.4],
    [112.8, 108.5, 104.2, 109.9, 115.1, 122.6],
    [110.3, 105.7, 101.6, 106.4, 112.1, 118.9],
    [108.0, 103.9, 100.5, 102.7, 107.3, 114.6],
    [109.2, 104.8, 100.9, 103.5, 108.8, 113.7],
]


def demo_elevation() -> NdArray:
    """The demo source grid: 6x6, all values distinct, single minimum."""
    return NdArray(np.array(_ELEVATION), None, "elevation")


def demo_pipeline_dict(source_file: str = "elevation.grid") -> dict:
    return {
        "sources": {"elevation": source_file},
        "stages": [
            {
                "id": "normalize",
                "module": "rescale_minmax",
                "params": {},
                "bindings": {"in": "elevation"},
            },
            {
                "id": "smooth",
                "module": "focal_mean",
                "params": {"window": 3},
                "bindings": {"in": "normalize.out"},
                "contracts": {
                    "pre": {"in": "finite"},
                    "post": {"out": "finite, in_range(0, 1)"},
                    "invariant": "same_shape(in, out)",
                },
            },
            {
                "id": "blend",
                "module": "weighted_sum",
                "params": {"weights": [0.6, 0.4]},
                "bindings": {"layer1": "normalize.out", "layer2": "smooth.out"},
                "contracts": {
                    "pre": {"layer1": "same_shape(layer1, layer2)"},
                    "post": {
                        "out": "in_range(0, 1), min_ge_slot(layer1, layer2), "
                        "max_le_slot(layer1, layer2)"
                    },
                    "params": {"weights": "sums_to(1.0, axis=0, tol=1e-09)"},
                },
            },
            {
                "id": "hotspots",
                "module": "threshold_mask",
                "params": {"t": 0.5},
                "bindings": {"in": "blend.out"},
                "contracts": {"post": {"out": "binary"}},
            },
        ],
        "sinks": ["hotspots.out"],
    }


def write_demo(target_dir: Path | str) -> Path:
    """Write elevation.grid and pipeline.json into ``target_dir``; returns
    the pipeline path."""
    target = Path(target_dir)
    target.mkdir(parents=True, exist_ok=True)
    (target / "elevation.grid").write_text(render_grid(demo_elevation()), encoding="utf-8")
    pipeline = target / "pipeline.json"
    pipeline.write_text(
        json.dumps(demo_pipeline_dict(), indent=2) + "\n", encoding="utf-8"
    )
    return pipeline


def demo_chain_spec(target_dir: Path | str) -> ChainSpec:
    """Materialize the demo files in ``target_dir`` and load the ChainSpec."""
    return load_pipeline(write_demo(target_dir))


def complementarity_scenario(
    seed: int = 7, shift: int = 11
) -> tuple[DtmModule, VariantSet, dict[str, NdArray], FaultSpec]:
    """A fault every value-range check misses but a k=3 ensemble flags.

    Builds a focal_mean module guarded only by value-range contracts, injects
    an index_shift (which preserves the value multiset) into one copy, and
    pairs it with the two clean shipped implementations.  Returns
    (faulted module, k=3 variant set, inputs, fault).
    """
    rng = np.random.default_rng(seed)
    grid = NdArray(rng.uniform(0.0, 1.0, size=(8, 8)), None, "in")
    value_range_only = {
        "pre": {"in": "finite, in_range(0, 1)"},
        "post": {"out": "finite, in_range(0, 1)"},
    }
    params = {"window": 3}
    fault = FaultSpec("index_shift", stage=None, slot="out", magnitude=float(shift), seed=seed)
    faulted = inject(
        make_module(
            "focal_mean/sliding_window",
            params,
            module_id="focal_mean/faulted",
            contracts=value_range_only,
        ),
        fault,
    )
    clean_pair = make_variant_set("focal_mean", params, contracts=value_range_only)
    trio = VariantSet("focal_mean", clean_pair.variants + (faulted,))
    return faulted, trio, {"in": grid}, fault
