"""Multi-dimensional array values, nodata masks, and bit-exact grid text I/O.

The grid text format understood by :func:`parse_grid` / :func:`render_grid`:

    ncols 3
    nrows 2
    nodata_value -9999.0      (optional; only present when cells are masked)
    1.5 2.0 -9999.0
    0.25 7.0 8.0

Header keys appear in exactly that order and are matched case-insensitively.
Data values are whitespace-separated, one line per row, row-major.  Values are
serialized with ``repr`` so that ``parse(render(x)) == x`` holds bit-exactly
for every double.  A comma-separated table with no header (CSV) is accepted as
an alternate 2-D input via :func:`parse_csv`; :func:`load_text` sniffs between
the two.

Multi-indices in reports are zero-based and row-major throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NdArray",
    "Discrepancy",
    "GridParseError",
    "parse_grid",
    "parse_csv",
    "load_text",
    "render_grid",
    "compare",
    "DEFAULT_REL_FLOOR",
]

DEFAULT_REL_FLOOR = 1e-12


class GridParseError(ValueError):
    """Malformed grid/CSV text. Carries 1-based line and column when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


@dataclass(frozen=True)
class NdArray:
    """Immutable real-valued array with an optional per-cell nodata mask.

    ``values`` is float64 and row-major; ``mask`` (when present) has the same
    shape, True marking a missing cell.  The value stored under a masked cell
    is carried along but has no meaning.  Instances are safe to share across
    threads: the backing buffers are made read-only at construction.
    """

    values: np.ndarray
    mask: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, order="C")
        if vals.ndim < 1:
            raise ValueError("NdArray needs at least one dimension")
        if any(n < 1 for n in vals.shape):
            raise ValueError(f"NdArray extents must be >= 1, got shape {vals.shape}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if self.mask is not None:
            m = np.array(self.mask, dtype=bool, order="C")
            if m.shape != vals.shape:
                raise ValueError(
                    f"mask shape {m.shape} does not match value shape {vals.shape}"
                )
            m.flags.writeable = False
            object.__setattr__(self, "mask", m)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def mask_or_false(self) -> np.ndarray:
        """The mask, or an all-False array when no mask is attached."""
        if self.mask is None:
            return np.zeros(self.shape, dtype=bool)
        return self.mask

    def unmasked_values(self) -> np.ndarray:
        """Flat array of the values at unmasked cells."""
        if self.mask is None:
            return self.values.ravel()
        return self.values[~self.mask]

    def with_name(self, name: str) -> "NdArray":
        return NdArray(self.values, self.mask, name)

    def equals(self, other: "NdArray") -> bool:
        """Cell-for-cell equality: same shape, same mask, NaN == NaN at
        unmasked cells, masked cells compared by mask only."""
        if self.shape != other.shape:
            return False
        ma, mb = self.mask_or_false(), other.mask_or_false()
        if not np.array_equal(ma, mb):
            return False
        keep = ~ma
        return bool(np.array_equal(self.values[keep], other.values[keep], equal_nan=True))


@dataclass(frozen=True)
class Discrepancy:
    """Summary of how two same-shaped arrays differ.

    Differences are taken over mutually unmasked cells; ``worst_cell`` is the
    multi-index of the largest absolute difference (None when no cells were
    comparable).  Cells where both values are NaN count as zero difference;
    exactly one NaN counts as an infinite difference.
    """

    max_abs_diff: float
    max_rel_diff: float
    worst_cell: tuple[int, ...] | None
    cells_compared: int
    mask_mismatch_count: int


def compare(a: NdArray, b: NdArray, rel_floor: float = DEFAULT_REL_FLOOR) -> Discrepancy:
    """Compare two arrays of identical shape.

    ``max_rel_diff`` uses the denominator ``max(|a|, |b|, rel_floor)``;
    ``mask_mismatch_count`` counts cells masked in exactly one array, and
    cells masked in both are skipped entirely.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ma, mb = a.mask_or_false(), b.mask_or_false()
    mismatch = int(np.count_nonzero(ma != mb))
    both = ~ma & ~mb
    n = int(np.count_nonzero(both))
    if n == 0:
        return Discrepancy(0.0, 0.0, None, 0, mismatch)

    va = a.values[both]
    vb = b.values[both]
    with np.errstate(invalid="ignore"):
        diff = np.abs(va - vb)
    nan_a, nan_b = np.isnan(va), np.isnan(vb)
    diff[va == vb] = 0.0  # covers inf == inf, where subtraction gives NaN
    diff[nan_a & nan_b] = 0.0
    diff[nan_a ^ nan_b] = np.inf
    denom = np.maximum(np.maximum(np.abs(va), np.abs(vb)), rel_floor)
    with np.errstate(invalid="ignore"):
        rel = diff / denom
    rel[diff == 0.0] = 0.0  # equal/both-NaN cells, even when denom is inf or NaN

    k = int(np.argmax(diff))
    flat = np.flatnonzero(both)[k]
    worst = tuple(int(i) for i in np.unravel_index(flat, a.shape))
    return Discrepancy(float(diff[k]), float(np.max(rel)), worst, n, mismatch)


# --- grid text format ------------------------------------------------------


def _split_tokens(line: str) -> list[tuple[str, int]]:
    """Whitespace-split with 1-based start columns."""
    out = []
    col = 0
    i = 0
    while i < len(line):
        if line[i].isspace():
            i += 1
            continue
        j = i
        while j < len(line) and not line[j].isspace():
            j += 1
        out.append((line[i:j], i + 1))
        i = j
    return out


def _parse_cell(tok: str, lineno: int, col: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise GridParseError(f"non-numeric token {tok!r}", lineno, col) from None


def parse_grid(text: str, name: str = "") -> NdArray:
    """Parse grid text (module docstring format) into a 2-D NdArray.

    Cells equal to the declared nodata_value are masked.  Errors carry the
    1-based line (and column, for bad tokens) of the offending input.
    """
    lines = text.splitlines()
    pos = 0

    def header(key: str, required: bool):
        nonlocal pos
        if pos >= len(lines):
            if required:
                raise GridParseError(f"missing header line '{key} <value>'", pos + 1)
            return None
        toks = _split_tokens(lines[pos])
        if len(toks) != 2 or toks[0][0].lower() != key:
            if required:
                raise GridParseError(
                    f"expected header '{key} <value>', got {lines[pos]!r}", pos + 1
                )
            return None
        pos += 1
        return toks[1]

    def int_header(key: str) -> int:
        tok = header(key, required=True)
        word, col = tok
        try:
            n = int(word)
        except ValueError:
            raise GridParseError(f"{key} must be an integer, got {word!r}", pos, col) from None
        if n < 1:
            raise GridParseError(f"{key} must be >= 1, got {n}", pos, col)
        return n

    ncols = int_header("ncols")
    nrows = int_header("nrows")
    nodata = None
    tok = header("nodata_value", required=False)
    if tok is not None:
        nodata = _parse_cell(tok[0], pos, tok[1])

    data = np.empty((nrows, ncols), dtype=np.float64)
    for r in range(nrows):
        if pos >= len(lines):
            raise GridParseError(f"expected {nrows} data rows, got {r}", pos + 1)
        toks = _split_tokens(lines[pos])
        if len(toks) != ncols:
            raise GridParseError(
                f"expected {ncols} values, got {len(toks)}", pos + 1
            )
        for c, (word, col) in enumerate(toks):
            data[r, c] = _parse_cell(word, pos + 1, col)
        pos += 1

    for extra in lines[pos:]:
        if extra.strip():
            raise GridParseError(f"unexpected content {extra.strip()!r}", pos + 1)
        pos += 1

    mask = None
    if nodata is not None:
        mask = data == nodata
        if not mask.any():
            mask = None
    return NdArray(data, mask, name)


def parse_csv(text: str, name: str = "") -> NdArray:
    """Parse a headerless comma-separated table into a 2-D NdArray."""
    rows: list[list[float]] = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise GridParseError(f"expected {width} values, got {len(cells)}", lineno)
        row = []
        col = 1
        for cell in cells:
            row.append(_parse_cell(cell.strip(), lineno, col))
            col += len(cell) + 1
        rows.append(row)
    if not rows:
        raise GridParseError("empty table", 1)
    return NdArray(np.array(rows, dtype=np.float64), None, name)


def load_text(text: str, name: str = "") -> NdArray:
    """Parse either grid or CSV text, sniffing on the first non-blank line."""
    for line in text.splitlines():
        if line.strip():
            if line.split()[0].lower() == "ncols":
                return parse_grid(text, name)
            return parse_csv(text, name)
    raise GridParseError("empty input", 1)


def _choose_sentinel(a: NdArray) -> float:
    """A nodata sentinel that collides with no stored value (masked cells
    included, since their stored value becomes the sentinel on re-parse)."""
    candidate = -9999.0
    vals = a.values.ravel()
    while np.any(vals == candidate):
        candidate = candidate * 10.0 - 1.0
    return candidate


def render_grid(a: NdArray) -> str:
    """Serialize a 2-D array so that :func:`parse_grid` round-trips it
    cell-for-cell, masks included."""
    if a.ndim != 2:
        raise ValueError("render_grid requires 2-D")
    nrows, ncols = a.shape
    out = [f"ncols {ncols}", f"nrows {nrows}"]
    if a.mask is not None and a.mask.any():
        sentinel = _choose_sentinel(a)
        out.append(f"nodata_value {sentinel!r}")
        vals = np.where(a.mask, sentinel, a.values)
    else:
        vals = a.values
    for r in range(nrows):
        out.append(" ".join(repr(float(v)) for v in vals[r]))
    return "\n".join(out) + "\n"
