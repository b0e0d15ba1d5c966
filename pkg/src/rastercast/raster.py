"""Georeferenced raster grids stored as ESRI ASCII files.

Internally row 0 is the southernmost row and column 0 the westernmost, so
cell ``(r, c)`` covers ``[x0 + c*res, x0 + (c+1)*res] x [y0 + r*res, y0 + (r+1)*res]``
where ``(x0, y0)`` is the lower-left corner of the grid. ASCII files list
rows north to south; loading and writing flip the row order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, RasterFormatError

DEFAULT_NODATA = -9999.0

FLOODED = 1
DRY = 0
EXCLUDED = -1

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def _frozen(values, dtype):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """A 2D matrix of reals anchored at a lower-left corner in degrees."""

    values: np.ndarray
    origin_lon: float
    origin_lat: float
    resolution: float
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        values = _frozen(self.values, np.float64)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise ContractError(f"raster values must be a non-empty 2D matrix, got shape {values.shape}")
        if not self.resolution > 0:
            raise ContractError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin_lon", float(self.origin_lon))
        object.__setattr__(self, "origin_lat", float(self.origin_lat))
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "nodata", float(self.nodata))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_cells(self) -> int:
        return self.values.size

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """``(min_lon, min_lat, max_lon, max_lat)`` of the grid extent."""
        return (
            self.origin_lon,
            self.origin_lat,
            self.origin_lon + self.n_cols * self.resolution,
            self.origin_lat + self.n_rows * self.resolution,
        )

    def same_georeference(self, other) -> bool:
        return (
            self.shape == other.shape
            and self.origin_lon == other.origin_lon
            and self.origin_lat == other.origin_lat
            and self.resolution == other.resolution
        )

    def cell_lons(self) -> np.ndarray:
        """Center longitudes of every column."""
        return self.origin_lon + (np.arange(self.n_cols) + 0.5) * self.resolution

    def cell_lats(self) -> np.ndarray:
        """Center latitudes of every row."""
        return self.origin_lat + (np.arange(self.n_rows) + 0.5) * self.resolution

    def cell_of(self, lon, lat):
        """Return the ``(row, col)`` containing a point, or ``None`` outside the grid."""
        col = int(np.floor((lon - self.origin_lon) / self.resolution))
        row = int(np.floor((lat - self.origin_lat) / self.resolution))
        if 0 <= row < self.n_rows and 0 <= col < self.n_cols:
            return row, col
        return None

    def with_values(self, values, nodata=None) -> "RasterGrid":
        """A grid with the same georeferencing and new values."""
        return RasterGrid(
            values,
            self.origin_lon,
            self.origin_lat,
            self.resolution,
            self.nodata if nodata is None else nodata,
        )

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return (
            self.same_georeference(other)
            and self.nodata == other.nodata
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """Per-cell flood labels: ``FLOODED`` (1), ``DRY`` (0) or ``EXCLUDED`` (-1)."""

    labels: np.ndarray
    origin_lon: float
    origin_lat: float
    resolution: float
    n_rows: int = field(init=False)
    n_cols: int = field(init=False)

    def __post_init__(self):
        labels = _frozen(self.labels, np.int8)
        if labels.ndim != 2:
            raise ContractError("labels must be a 2D matrix")
        if not np.isin(labels, (FLOODED, DRY, EXCLUDED)).all():
            raise ContractError("labels must be FLOODED, DRY or EXCLUDED")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_rows", labels.shape[0])
        object.__setattr__(self, "n_cols", labels.shape[1])

    @property
    def shape(self):
        return self.labels.shape

    def counts(self) -> dict:
        return {
            "flooded": int((self.labels == FLOODED).sum()),
            "dry": int((self.labels == DRY).sum()),
            "excluded": int((self.labels == EXCLUDED).sum()),
        }

    def flooded_share(self) -> float:
        """Fraction of flooded cells among non-excluded cells."""
        c = self.counts()
        return c["flooded"] / (c["flooded"] + c["dry"])


def derive_labels(heights: RasterGrid, flood_threshold=0.2, permanent_threshold=10.0) -> LabelGrid:
    """Threshold water heights into flooded / dry / excluded cells.

    A cell is excluded when its height is NODATA or at least
    ``permanent_threshold`` (which absorbs the 999 permanent-water marker),
    flooded when strictly above ``flood_threshold``, and dry otherwise.
    """
    if not 0 <= flood_threshold < permanent_threshold:
        raise ContractError(
            f"need 0 <= flood_threshold < permanent_threshold, got {flood_threshold}, {permanent_threshold}"
        )
    h = heights.values
    labels = np.full(h.shape, DRY, dtype=np.int8)
    labels[h > flood_threshold] = FLOODED
    excluded = (h >= permanent_threshold) | (h == heights.nodata) | np.isnan(h)
    labels[excluded] = EXCLUDED
    return LabelGrid(labels, heights.origin_lon, heights.origin_lat, heights.resolution)


def cell_center(grid, row: int, col: int) -> tuple[float, float]:
    """Center ``(lon, lat)`` of cell ``(row, col)``; row 0 is the southern edge."""
    if not (0 <= row < grid.n_rows and 0 <= col < grid.n_cols):
        raise IndexError(f"cell ({row}, {col}) outside {grid.n_rows}x{grid.n_cols} grid")
    return (
        grid.origin_lon + (col + 0.5) * grid.resolution,
        grid.origin_lat + (row + 0.5) * grid.resolution,
    )


def _parse_float(token, lineno):
    try:
        return float(token)
    except ValueError:
        raise RasterFormatError(f"non-numeric token {token!r}", lineno) from None


def load_raster(path) -> RasterGrid:
    """Read an ESRI ASCII grid.

    Raises
    ------
    RasterFormatError
        On a malformed header, a row with the wrong number of values, a
        missing or surplus row, or a non-numeric token. The message names
        the offending line.
    """
    header = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    lineno = 0
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        key = parts[0].lower()
        if key not in _HEADER_KEYS:
            break
        if len(parts) != 2:
            raise RasterFormatError(f"header line must be '<key> <value>', got {line!r}", lineno)
        if key in header:
            raise RasterFormatError(f"duplicate header key {parts[0]!r}", lineno)
        header[key] = (parts[1], lineno)
    else:
        lineno = len(lines) + 1

    for key in _HEADER_KEYS[:5]:
        if key not in header:
            raise RasterFormatError(f"missing header key {key!r}", lineno)

    def _int(key):
        token, ln = header[key]
        try:
            value = int(token)
        except ValueError:
            raise RasterFormatError(f"{key} must be an integer, got {token!r}", ln) from None
        if value <= 0:
            raise RasterFormatError(f"{key} must be positive, got {value}", ln)
        return value

    ncols, nrows = _int("ncols"), _int("nrows")
    xll = _parse_float(*header["xllcorner"])
    yll = _parse_float(*header["yllcorner"])
    cellsize = _parse_float(*header["cellsize"])
    if not cellsize > 0:
        raise RasterFormatError(f"cellsize must be positive, got {cellsize}", header["cellsize"][1])
    nodata = _parse_float(*header["nodata_value"]) if "nodata_value" in header else DEFAULT_NODATA

    first_data = lineno
    for lineno in range(first_data, len(lines) + 1):
        parts = lines[lineno - 1].split()
        if not parts:
            continue
        if len(parts) != ncols:
            raise RasterFormatError(f"expected {ncols} values, found {len(parts)}", lineno)
        if len(rows) == nrows:
            raise RasterFormatError(f"more than {nrows} data rows", lineno)
        rows.append([_parse_float(tok, lineno) for tok in parts])
    if len(rows) != nrows:
        raise RasterFormatError(f"expected {nrows} data rows, found {len(rows)}", len(lines))

    # file lists the northernmost row first
    values = np.array(rows[::-1], dtype=np.float64)
    return RasterGrid(values, xll, yll, cellsize, nodata)


def write_raster(grid: RasterGrid, path) -> None:
    """Write ``grid`` as an ESRI ASCII file.

    Values are printed with ``repr`` so that :func:`load_raster` recovers
    them bit for bit.
    """
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(f"ncols {grid.n_cols}\n")
        fh.write(f"nrows {grid.n_rows}\n")
        fh.write(f"xllcorner {grid.origin_lon!r}\n")
        fh.write(f"yllcorner {grid.origin_lat!r}\n")
        fh.write(f"cellsize {grid.resolution!r}\n")
        fh.write(f"NODATA_value {grid.nodata!r}\n")
        for row in grid.values[::-1]:
            fh.write(" ".join(map(repr, row.tolist())))
            fh.write("\n")
    os.replace(tmp, path)
