"""Raster model, ESRI ASCII grid I/O, inundation masking and window subsampling.

Rows are stored top row first (row 0 is the northernmost row), which is the
order used by the ASCII grid format.  Missing pixels carry an exact sentinel
value; the sentinel is only ever compared by equality.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator, Union

import numpy as np

CRS_TAGS = ("geographic", "planar")

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")
_BINARY_MAGIC = "agbdval-f32grid"


class GridError(ValueError):
    """Malformed raster input or inconsistent raster geometry."""


class DimensionError(GridError):
    """Two rasters that must share a grid do not."""


@dataclass(frozen=True)
class GridTransform:
    x_ll: float
    y_ll: float
    cell_size: float
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if not self.cell_size > 0 or not math.isfinite(self.cell_size):
            raise GridError(f"cell_size must be > 0, got {self.cell_size}")
        if self.n_rows < 1 or self.n_cols < 1:
            raise GridError(f"grid must be at least 1x1, got {self.n_rows}x{self.n_cols}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the cell edges."""
        return (
            self.x_ll,
            self.y_ll,
            self.x_ll + self.n_cols * self.cell_size,
            self.y_ll + self.n_rows * self.cell_size,
        )

    def center_x(self, cols):
        return self.x_ll + (np.asarray(cols, dtype=float) + 0.5) * self.cell_size

    def center_y(self, rows):
        return self.y_ll + (self.n_rows - np.asarray(rows, dtype=float) - 0.5) * self.cell_size


@dataclass(frozen=True, eq=False)
class Raster:
    """Single-band grid of AGBD values (Mg/ha).

    ``values`` has shape ``(n_rows, n_cols)``; it is made read-only on
    construction.
    """

    transform: GridTransform
    values: np.ndarray
    nodata: float = -9999.0
    crs: str = "planar"

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim == 1:
            if vals.size != self.transform.n_rows * self.transform.n_cols:
                raise GridError(
                    f"expected {self.transform.n_rows * self.transform.n_cols} values, got {vals.size}"
                )
            vals = vals.reshape(self.transform.shape)
        if vals.shape != self.transform.shape:
            raise GridError(f"values shape {vals.shape} does not match grid {self.transform.shape}")
        if self.crs not in CRS_TAGS:
            raise GridError(f"unknown crs tag {self.crs!r}")
        if np.isnan(vals).any():
            raise GridError("NaN values are not allowed; use the nodata sentinel")
        valid = vals != self.nodata
        if (vals[valid] < 0).any():
            raise GridError("raster values must be >= 0 (except the nodata sentinel)")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def valid(self) -> np.ndarray:
        return self.values != self.nodata

    def with_values(self, values: np.ndarray) -> "Raster":
        return Raster(self.transform, values, self.nodata, self.crs)

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.transform == other.transform
            and self.crs == other.crs
            and _same_float(self.nodata, other.nodata)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def _same_float(a: float, b: float) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


def _parse_number(token: str, line_no: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise GridError(f"row {line_no}: non-numeric token {token!r}") from None
    if math.isnan(value) or math.isinf(value):
        raise GridError(f"row {line_no}: non-finite token {token!r}")
    return value


def _open_text(src) -> IO[str]:
    if isinstance(src, (str, Path)) and not (isinstance(src, str) and "\n" in src):
        return open(src, "r", encoding="utf-8")
    if isinstance(src, str):
        return io.StringIO(src)
    return src


def read_ascii_grid(src: Union[str, Path, IO[str]], crs: str = "planar") -> Raster:
    """Parse an ESRI ASCII grid.

    ``src`` may be a path, an open text stream or the grid text itself.
    Errors name the offending line; data rows are numbered from 1 in
    messages about cell counts (``row 2: expected 2 values, got 1``).
    """
    fh = _open_text(src)
    try:
        lines = fh.read().splitlines()
    finally:
        if fh is not src:
            fh.close()

    header = {}
    for i, key in enumerate(_HEADER_KEYS):
        if i >= len(lines):
            raise GridError(f"line {i + 1}: missing header line {key!r}")
        parts = lines[i].split()
        if len(parts) != 2 or parts[0].lower() != key:
            raise GridError(f"line {i + 1}: expected header {key!r}, got {lines[i]!r}")
        header[key] = parts[1]

    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
    except ValueError:
        raise GridError("line 1-2: ncols/nrows must be integers") from None
    floats = {k: _parse_number(header[k], i + 1) for i, k in enumerate(_HEADER_KEYS) if i >= 2}

    body = [ln for ln in lines[len(_HEADER_KEYS):]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != nrows:
        raise GridError(f"expected {nrows} data rows, got {len(body)}")

    values = np.empty((nrows, ncols), dtype=np.float64)
    for r, line in enumerate(body):
        tokens = line.split()
        if len(tokens) != ncols:
            raise GridError(f"row {r + 1}: expected {ncols} values, got {len(tokens)}")
        line_no = len(_HEADER_KEYS) + r + 1
        values[r] = [_parse_number(t, line_no) for t in tokens]

    transform = GridTransform(
        x_ll=floats["xllcorner"],
        y_ll=floats["yllcorner"],
        cell_size=floats["cellsize"],
        n_rows=nrows,
        n_cols=ncols,
    )
    return Raster(transform, values, nodata=floats["nodata_value"], crs=crs)


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def write_ascii_grid(raster: Raster, dst: Union[str, Path, IO[str]]) -> None:
    """Write ``raster`` as an ESRI ASCII grid with 9 significant digits."""
    t = raster.transform
    out = io.StringIO()
    out.write(f"ncols {t.n_cols}\n")
    out.write(f"nrows {t.n_rows}\n")
    out.write(f"xllcorner {_fmt(t.x_ll)}\n")
    out.write(f"yllcorner {_fmt(t.y_ll)}\n")
    out.write(f"cellsize {_fmt(t.cell_size)}\n")
    out.write(f"NODATA_value {_fmt(raster.nodata)}\n")
    for row in raster.values:
        out.write(" ".join(_fmt(v) for v in row))
        out.write("\n")
    if isinstance(dst, (str, Path)):
        Path(dst).write_text(out.getvalue(), encoding="utf-8")
    else:
        dst.write(out.getvalue())


def write_binary_grid(raster: Raster, path: Union[str, Path]) -> None:
    """Write the binary sibling format.

    One line of JSON carrying the ASCII grid header fields (plus ``crs``),
    then ``nrows * ncols`` little-endian float32 values, top row first.
    """
    t = raster.transform
    header = {
        "format": _BINARY_MAGIC,
        "ncols": t.n_cols,
        "nrows": t.n_rows,
        "xllcorner": t.x_ll,
        "yllcorner": t.y_ll,
        "cellsize": t.cell_size,
        "NODATA_value": raster.nodata,
        "crs": raster.crs,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(raster.values.astype("<f4").tobytes())


def read_binary_grid(path: Union[str, Path]) -> Raster:
    with open(path, "rb") as fh:
        first = fh.readline()
        try:
            header = json.loads(first.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise GridError(f"line 1: bad JSON preamble ({exc})") from None
        if header.get("format") != _BINARY_MAGIC:
            raise GridError("line 1: not a binary grid preamble")
        payload = fh.read()
    try:
        nrows, ncols = int(header["nrows"]), int(header["ncols"])
        transform = GridTransform(
            float(header["xllcorner"]), float(header["yllcorner"]), float(header["cellsize"]), nrows, ncols
        )
        nodata = float(np.float32(header["NODATA_value"]))
    except KeyError as exc:
        raise GridError(f"line 1: preamble missing key {exc}") from None
    expected = nrows * ncols * 4
    if len(payload) != expected:
        raise GridError(f"expected {expected} payload bytes, got {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(nrows, ncols)
    return Raster(transform, values, nodata=nodata, crs=header.get("crs", "planar"))


def read_grid(path: Union[str, Path], crs: str | None = None) -> Raster:
    """Read either grid format, sniffing the binary preamble."""
    with open(path, "rb") as fh:
        head = fh.read(1)
    if head == b"{":
        r = read_binary_grid(path)
        return r if crs is None or crs == r.crs else Raster(r.transform, r.values, r.nodata, crs)
    return read_ascii_grid(path, crs=crs or "planar")


def apply_inundation_mask(agbd: Raster, freq: Raster, threshold: float = 0.5) -> Raster:
    """Set pixels whose inundation frequency is strictly above ``threshold`` to nodata.

    Pixels where ``freq`` is itself nodata are left unchanged.
    """
    if agbd.transform != freq.transform:
        raise DimensionError(f"grid mismatch: {agbd.transform} vs {freq.transform}")
    fvals = freq.values
    wet = (fvals != freq.nodata) & (fvals > threshold)
    out = np.where(wet, agbd.nodata, agbd.values)
    return agbd.with_values(out)


def pixel_center(transform: GridTransform, row: int, col: int) -> tuple[float, float]:
    if not (0 <= row < transform.n_rows and 0 <= col < transform.n_cols):
        raise IndexError(f"pixel ({row}, {col}) outside {transform.n_rows}x{transform.n_cols} grid")
    x = transform.x_ll + (col + 0.5) * transform.cell_size
    y = transform.y_ll + (transform.n_rows - row - 0.5) * transform.cell_size
    return (x, y)


def pixel_centers(transform: GridTransform) -> tuple[np.ndarray, np.ndarray]:
    """Full (n_rows, n_cols) arrays of pixel-centre coordinates."""
    xs = transform.center_x(np.arange(transform.n_cols))
    ys = transform.center_y(np.arange(transform.n_rows))
    return np.broadcast_to(xs, transform.shape), np.broadcast_to(ys[:, None], transform.shape)


def iter_blocks(transform: GridTransform, window: int) -> Iterator[tuple[slice, slice]]:
    """Row-major non-overlapping ``window`` x ``window`` blocks anchored at (0, 0)."""
    for r0 in range(0, transform.n_rows, window):
        for c0 in range(0, transform.n_cols, window):
            yield slice(r0, min(r0 + window, transform.n_rows)), slice(c0, min(c0 + window, transform.n_cols))


def subsample_windows(r: Raster, window: int = 10, seed: int = 0) -> np.ndarray:
    """Draw one valid pixel value uniformly at random from each block.

    Blocks are visited row-major; all-nodata blocks emit nothing.  One
    uniform variate is drawn per block (including empty ones), so the output
    for a block does not depend on how other blocks are processed.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    n_rows, n_cols = r.transform.shape
    br, bc = -(-n_rows // window), -(-n_cols // window)
    pad_r, pad_c = br * window - n_rows, bc * window - n_cols

    vals = np.pad(r.values, ((0, pad_r), (0, pad_c)))
    ok = np.pad(r.valid, ((0, pad_r), (0, pad_c)), constant_values=False)
    # (block_row, block_col, within-block row-major index)
    vals = vals.reshape(br, window, bc, window).transpose(0, 2, 1, 3).reshape(br * bc, window * window)
    ok = ok.reshape(br, window, bc, window).transpose(0, 2, 1, 3).reshape(br * bc, window * window)

    counts = ok.sum(axis=1)
    u = np.random.default_rng(seed).random(br * bc)
    pick = np.minimum((u * counts).astype(np.int64), np.maximum(counts - 1, 0))

    has = counts > 0
    rank = np.cumsum(ok, axis=1) - 1
    hit = ok & (rank == pick[:, None])
    idx = hit[has].argmax(axis=1)
    return vals[has][np.arange(idx.size), idx]
