"""Builtin array transformations and their diversity variants.

Every transform is a pure function ``(params, inputs) -> outputs`` over named
NdArrays.  Mask rule: masked input cells propagate to masked output cells,
except focal_mean, which drops masked cells from each neighborhood mean and
masks an output cell only when its whole (clipped) neighborhood is masked.

Registry keys are impl_ref strings.  The plain names resolve to the reference
algorithm; ``<name>/<variant>`` selects a specific implementation:

    rescale_minmax
    focal_mean                  == focal_mean/sliding_window
    focal_mean/summed_area_table
    weighted_sum                == weighted_sum/sequential_sum
    weighted_sum/compensated_sum
    reclassify
    threshold_mask
"""

from __future__ import annotations

import numpy as np

from .arrays import NdArray

__all__ = [
    "TransformError",
    "TRANSFORMS",
    "transform_names",
    "layer_slot_names",
]


class TransformError(ValueError):
    """Bad transform parameters or inputs with unusable shapes."""


def _merge_masks(arrays: list[NdArray]) -> np.ndarray | None:
    masks = [a.mask for a in arrays if a.mask is not None]
    if not masks:
        return None
    combined = masks[0].copy()
    for m in masks[1:]:
        combined |= m
    return combined


def rescale_minmax(params: dict, inputs: dict[str, NdArray]) -> dict[str, NdArray]:
    """Affine map of the unmasked values onto [0, 1]; an all-equal (or
    all-masked) input maps to all zeros."""
    a = inputs["in"]
    live = a.unmasked_values()
    if live.size == 0:
        out = np.zeros(a.shape)
    else:
        lo, hi = float(np.min(live)), float(np.max(live))
        if hi == lo:
            out = np.zeros(a.shape)
        else:
            out = (a.values - lo) / (hi - lo)
    return {"out": NdArray(out, a.mask, "out")}


def _focal_window_params(params: dict) -> int:
    window = params.get("window")
    if not isinstance(window, int) or isinstance(window, bool):
        raise TransformError(f"focal_mean window must be an integer, got {window!r}")
    if window < 1 or window % 2 == 0:
        raise TransformError(f"focal_mean window must be odd and >= 1, got {window}")
    return window


def _require_2d(a: NdArray, what: str) -> NdArray:
    if a.ndim != 2:
        raise TransformError(f"{what} requires a 2-D input, got rank {a.ndim}")
    return a


def focal_mean_sliding(params: dict, inputs: dict[str, NdArray]) -> dict[str, NdArray]:
    """Neighborhood mean with the window clipped ("shrunk") at the borders."""
    window = _focal_window_params(params)
    a = _require_2d(inputs["in"], "focal_mean")
    r = window // 2
    h, w = a.shape
    valid = ~a.mask_or_false()
    vals = a.values
    out = np.zeros((h, w))
    out_mask = np.zeros((h, w), dtype=bool)
    for i in range(h):
        i0, i1 = max(0, i - r), min(h, i + r + 1)
        for j in range(w):
            j0, j1 = max(0, j - r), min(w, j + r + 1)
            patch_valid = valid[i0:i1, j0:j1]
            n = int(np.count_nonzero(patch_valid))
            if n == 0:
                out_mask[i, j] = True
            else:
                out[i, j] = float(np.sum(vals[i0:i1, j0:j1], where=patch_valid)) / n
    return {"out": NdArray(out, out_mask if out_mask.any() else None, "out")}


def focal_mean_sat(params: dict, inputs: dict[str, NdArray]) -> dict[str, NdArray]:
    """Same mean via summed-area tables over masked-to-zero values and
    valid-cell counts."""
    window = _focal_window_params(params)
    a = _require_2d(inputs["in"], "focal_mean")
    r = window // 2
    h, w = a.shape
    valid = ~a.mask_or_false()
    zeroed = np.where(valid, a.values, 0.0)

    sat = np.zeros((h + 1, w + 1))
    sat[1:, 1:] = zeroed.cumsum(axis=0).cumsum(axis=1)
    cnt = np.zeros((h + 1, w + 1))
    cnt[1:, 1:] = valid.astype(np.float64).cumsum(axis=0).cumsum(axis=1)

    rows = np.arange(h)
    cols = np.arange(w)
    i0 = np.maximum(0, rows - r)[:, None]
    i1 = np.minimum(h, rows + r + 1)[:, None]
    j0 = np.maximum(0, cols - r)[None, :]
    j1 = np.minimum(w, cols + r + 1)[None, :]

    def box(table):
        return table[i1, j1] - table[i0, j1] - table[i1, j0] + table[i0, j0]

    sums = box(sat)
    counts = box(cnt)
    out_mask = counts == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(out_mask, 0.0, sums / np.where(out_mask, 1.0, counts))
    return {"out": NdArray(out, out_mask if out_mask.any() else None, "out")}


def _weights_and_layers(params: dict, inputs: dict[str, NdArray]):
    weights = params.get("weights")
    if weights is None or len(weights) == 0:
        raise TransformError("weighted_sum needs a non-empty weights list")
    weights = [float(x) for x in weights]
    layers = []
    shape = None
    for name in layer_slot_names(len(weights)):
        if name not in inputs:
            raise TransformError(f"missing input slot '{name}'")
        layer = inputs[name]
        if shape is None:
            shape = layer.shape
        elif layer.shape != shape:
            raise TransformError(
                f"layer shape mismatch: '{name}' is {layer.shape}, expected {shape}"
            )
        layers.append(layer)
    return weights, layers


def weighted_sum_sequential(params: dict, inputs: dict[str, NdArray]) -> dict[str, NdArray]:
    """Cellwise dot product of the layers with the weights, accumulated left
    to right."""
    weights, layers = _weights_and_layers(params, inputs)
    acc = weights[0] * layers[0].values
    for wgt, layer in zip(weights[1:], layers[1:]):
        acc = acc + wgt * layer.values
    return {"out": NdArray(acc, _merge_masks(layers), "out")}


def weighted_sum_compensated(params: dict, inputs: dict[str, NdArray]) -> dict[str, NdArray]:
    """Same dot product with Kahan-compensated accumulation per cell."""
    weights, layers = _weights_and_layers(params, inputs)
    total = np.zeros(layers[0].shape)
    carry = np.zeros(layers[0].shape)
    for wgt, layer in zip(weights, layers):
        term = wgt * layer.values - carry
        bumped = total + term
        carry = (bumped - total) - term
        total = bumped
    return {"out": NdArray(total, _merge_masks(layers), "out")}


def reclassify(params: dict, inputs: dict[str, NdArray]) -> dict[str, NdArray]:
    """Interval lookup with right-open intervals:
    (-inf, b1) -> classes[0], [b1, b2) -> classes[1], ..., [bk, inf) -> classes[k].
    NaN cells sort above every break and land in the last class."""
    breaks = params.get("breaks")
    classes = params.get("classes")
    if breaks is None or classes is None:
        raise TransformError("reclassify needs 'breaks' and 'classes' parameters")
    breaks = np.asarray([float(b) for b in breaks])
    classes = np.asarray([float(c) for c in classes])
    if len(classes) != len(breaks) + 1:
        raise TransformError(
            f"len(classes) must equal len(breaks)+1, got {len(classes)} and {len(breaks)}"
        )
    a = inputs["in"]
    idx = np.searchsorted(breaks, a.values, side="right")
    return {"out": NdArray(classes[idx], a.mask, "out")}


def threshold_mask(params: dict, inputs: dict[str, NdArray]) -> dict[str, NdArray]:
    """1.0 where the cell is >= t, else 0.0."""
    if "t" not in params:
        raise TransformError("threshold_mask needs a 't' parameter")
    t = float(params["t"])
    a = inputs["in"]
    with np.errstate(invalid="ignore"):
        out = (a.values >= t).astype(np.float64)
    return {"out": NdArray(out, a.mask, "out")}


def layer_slot_names(k: int) -> list[str]:
    return [f"layer{i}" for i in range(1, k + 1)]


TRANSFORMS = {
    "rescale_minmax": rescale_minmax,
    "focal_mean": focal_mean_sliding,
    "focal_mean/sliding_window": focal_mean_sliding,
    "focal_mean/summed_area_table": focal_mean_sat,
    "weighted_sum": weighted_sum_sequential,
    "weighted_sum/sequential_sum": weighted_sum_sequential,
    "weighted_sum/compensated_sum": weighted_sum_compensated,
    "reclassify": reclassify,
    "threshold_mask": threshold_mask,
}


def transform_names() -> list[str]:
    return sorted(TRANSFORMS)
