"""Georeferenced single-band grids and fishnet-cell aggregation.

Grid file format (canonical): six header lines ``ncols``, ``nrows``,
``xllcorner``, ``yllcorner``, ``cellsize``, ``NODATA_value`` (key, single
space, value), then ``nrows`` lines of ``ncols`` space-separated numbers,
top row first. Numbers use the minimal decimal representation (integral
values carry no decimal point) and lines end with LF. ``write_grid`` always
emits this form, so ``write(load(f)) == f`` byte-for-byte whenever ``f`` is
canonical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Mapping, NamedTuple

import numpy as np

from .errors import GeoreferenceError, GridParseError, GridStructureError, ReducerError
from .util import EARTH_RADIUS_KM, atomic_write_text, fmt_num

Kind = Literal["continuous", "categorical"]

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")


@dataclass(frozen=True)
class RasterGrid:
    """A rectangular grid of values; ``values`` is row-major, top row first."""

    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    nodata: float
    values: np.ndarray
    kind: Kind = "continuous"

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise GridStructureError("grid must have at least one row and column")
        if not self.cellsize > 0:
            raise GridStructureError("cellsize must be positive")
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.size != self.ncols * self.nrows:
            raise GridStructureError(
                f"expected {self.ncols * self.nrows} values, got {vals.size}"
            )
        if self.kind not in ("continuous", "categorical"):
            raise GridStructureError(f"unknown grid kind: {self.kind!r}")
        if self.kind == "categorical":
            live = vals[vals != self.nodata]
            if live.size and not np.all(live == np.round(live)):
                raise GridStructureError("categorical grid contains non-integer values")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def array(self) -> np.ndarray:
        """Values as an (nrows, ncols) view, top row first."""
        return self.values.reshape(self.nrows, self.ncols)

    def lon_centers(self) -> np.ndarray:
        return self.xll + (np.arange(self.ncols) + 0.5) * self.cellsize

    def lat_centers(self) -> np.ndarray:
        """Latitudes of pixel centers, top row first (matching ``array``)."""
        return self.yll + (self.nrows - np.arange(self.nrows) - 0.5) * self.cellsize

    def georef(self) -> tuple:
        return (self.ncols, self.nrows, self.xll, self.yll, self.cellsize)


def load_grid(path: str | Path, kind: Kind = "continuous") -> RasterGrid:
    """Parse an ASCII grid file into a validated RasterGrid."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 6:
        raise GridParseError(f"{path}: expected 6 header lines, file has {len(lines)} lines")

    header: dict[str, str] = {}
    for i, key in enumerate(_HEADER_KEYS):
        parts = lines[i].split()
        if len(parts) != 2 or parts[0] != key:
            raise GridParseError(
                f"{path}: header line {i + 1} {lines[i]!r} is not '{key} <value>'"
            )
        header[key] = parts[1]

    def _int(key: str, lineno: int) -> int:
        try:
            return int(header[key])
        except ValueError:
            raise GridParseError(
                f"{path}: header line {lineno} has non-integer {key}: {header[key]!r}"
            ) from None

    def _float(key: str, lineno: int) -> float:
        try:
            return float(header[key])
        except ValueError:
            raise GridParseError(
                f"{path}: header line {lineno} has non-numeric {key}: {header[key]!r}"
            ) from None

    ncols = _int("ncols", 1)
    nrows = _int("nrows", 2)
    xll = _float("xllcorner", 3)
    yll = _float("yllcorner", 4)
    cellsize = _float("cellsize", 5)
    nodata = _float("NODATA_value", 6)

    values: list[float] = []
    for lineno, line in enumerate(lines[6:], start=7):
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise GridParseError(
                    f"{path}: line {lineno} has non-numeric value {tok!r}"
                ) from None
    if len(values) != ncols * nrows:
        raise GridStructureError(
            f"{path}: header declares {ncols}x{nrows}={ncols * nrows} values, "
            f"body has {len(values)}"
        )
    return RasterGrid(ncols, nrows, xll, yll, cellsize, nodata, np.array(values), kind)


def write_grid(grid: RasterGrid, path: str | Path) -> None:
    """Write a grid in canonical form (see module docstring)."""
    head = [
        f"ncols {fmt_num(grid.ncols)}",
        f"nrows {fmt_num(grid.nrows)}",
        f"xllcorner {fmt_num(grid.xll)}",
        f"yllcorner {fmt_num(grid.yll)}",
        f"cellsize {fmt_num(grid.cellsize)}",
        f"NODATA_value {fmt_num(grid.nodata)}",
    ]
    arr = grid.array
    body = [" ".join(fmt_num(v) for v in row) for row in arr]
    atomic_write_text(path, "\n".join(head + body) + "\n")


def multi_year_mean(grids: list[RasterGrid]) -> RasterGrid:
    """Pixelwise mean across years; a pixel is nodata iff nodata in any input."""
    if not grids:
        raise GeoreferenceError("no grids to average")
    first = grids[0]
    for g in grids[1:]:
        if g.georef() != first.georef():
            raise GeoreferenceError(
                f"georeference mismatch: {g.georef()} vs {first.georef()}"
            )
    for g in grids:
        if g.kind != "continuous":
            raise ReducerError("multi_year_mean requires continuous grids")
    stack = np.stack([g.values for g in grids])
    bad = np.zeros(first.values.shape, dtype=bool)
    for g in grids:
        bad |= g.values == g.nodata
    mean = stack.mean(axis=0)
    mean[bad] = first.nodata
    return RasterGrid(
        first.ncols, first.nrows, first.xll, first.yll, first.cellsize,
        first.nodata, mean, "continuous",
    )


@dataclass(frozen=True)
class FishnetSpec:
    """Regular lon/lat analysis lattice; cell edges at origin + k*cell_size."""

    cell_size_deg: float = 0.05
    origin_lon: float = 0.0
    origin_lat: float = 0.0

    def __post_init__(self):
        if not self.cell_size_deg > 0:
            raise GridStructureError("cell_size_deg must be positive")

    def index_of(self, coord: np.ndarray, origin: float) -> np.ndarray:
        """Bin coordinates into cell indices; a point exactly on an edge goes
        to the cell with the larger index (floor of the edge multiple)."""
        t = (np.asarray(coord, dtype=float) - origin) / self.cell_size_deg
        r = np.round(t)
        snapped = np.where(np.abs(t - r) < 1e-9 * np.maximum(1.0, np.abs(t)), r, t)
        return np.floor(snapped).astype(np.int64)

    def cell_id(self, ix: int, iy: int) -> str:
        return f"c{ix}_{iy}"

    def centroid(self, ix, iy) -> tuple:
        lon = self.origin_lon + (np.asarray(ix) + 0.5) * self.cell_size_deg
        lat = self.origin_lat + (np.asarray(iy) + 0.5) * self.cell_size_deg
        return lon, lat

    def cell_area_km2(self, iy) -> np.ndarray:
        """Exact spherical area of the cell's lon/lat rectangle."""
        lat0 = np.deg2rad(self.origin_lat + np.asarray(iy, dtype=float) * self.cell_size_deg)
        lat1 = np.deg2rad(self.origin_lat + (np.asarray(iy, dtype=float) + 1) * self.cell_size_deg)
        dlon = np.deg2rad(self.cell_size_deg)
        return EARTH_RADIUS_KM**2 * dlon * (np.sin(lat1) - np.sin(lat0))


class CellAggregate(NamedTuple):
    value: float
    count: int
    area_km2: float
    ix: int
    iy: int
    lon: float
    lat: float


class CellArrays(NamedTuple):
    """Array form of an aggregation, sorted by (ix, iy)."""

    key: np.ndarray      # flat (ix, iy) key, strictly increasing
    ix: np.ndarray
    iy: np.ndarray
    value: np.ndarray
    count: np.ndarray
    area_km2: np.ndarray
    lon: np.ndarray
    lat: np.ndarray


_KEY_SPAN = 2**21
_KEY_OFF = 2**20


def flat_cell_key(ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    if np.any(np.abs(ix) >= _KEY_OFF) or np.any(np.abs(iy) >= _KEY_OFF):
        raise GridStructureError("fishnet indices out of supported range")
    return (ix.astype(np.int64) + _KEY_OFF) * _KEY_SPAN + (iy.astype(np.int64) + _KEY_OFF)


def aggregate_arrays(grid: RasterGrid, fishnet: FishnetSpec, reducer: str) -> CellArrays:
    """Array-valued core of ``aggregate_to_cells``."""
    if reducer not in ("sum", "mean", "sd", "mode"):
        raise ReducerError(f"unknown reducer: {reducer!r}")
    if reducer == "mode" and grid.kind != "categorical":
        raise ReducerError("mode reducer requires a categorical grid")

    lon = grid.lon_centers()
    lat = grid.lat_centers()
    ix_col = fishnet.index_of(lon, fishnet.origin_lon)
    iy_row = fishnet.index_of(lat, fishnet.origin_lat)

    vals = grid.array
    valid = vals != grid.nodata
    rows, cols = np.nonzero(valid)
    empty = np.array([])
    if rows.size == 0:
        z = empty.astype(np.int64)
        return CellArrays(z, z, z, empty, z, empty, empty, empty)
    v = vals[rows, cols]
    key = flat_cell_key(ix_col[cols], iy_row[rows])
    uniq, inv = np.unique(key, return_inverse=True)
    count = np.bincount(inv)

    if reducer == "mode":
        order = np.lexsort((v, inv))
        si, sv = inv[order], v[order]
        grp = np.flatnonzero(np.r_[True, (si[1:] != si[:-1]) | (sv[1:] != sv[:-1])])
        pair_count = np.diff(np.r_[grp, si.size])
        pair_cell, pair_val = si[grp], sv[grp]
        # Winner per cell: max count, then smallest category id.
        best = np.lexsort((pair_val, -pair_count, pair_cell))
        firsts = np.flatnonzero(np.r_[True, pair_cell[best][1:] != pair_cell[best][:-1]])
        value = np.empty(uniq.size)
        value[pair_cell[best][firsts]] = pair_val[best][firsts]
    elif reducer == "sum":
        value = np.bincount(inv, weights=v)
    elif reducer == "mean":
        value = np.bincount(inv, weights=v) / count
    else:  # sd
        m = np.bincount(inv, weights=v) / count
        m2 = np.bincount(inv, weights=v * v) / count
        value = np.sqrt(np.maximum(0.0, m2 - m * m))

    cell_ix = (uniq // _KEY_SPAN) - _KEY_OFF
    cell_iy = (uniq % _KEY_SPAN) - _KEY_OFF
    clon, clat = fishnet.centroid(cell_ix, cell_iy)
    area = fishnet.cell_area_km2(cell_iy)
    return CellArrays(uniq, cell_ix, cell_iy, value, count, area, clon, clat)


def aggregate_to_cells(
    grid: RasterGrid, fishnet: FishnetSpec, reducer: str
) -> dict[str, CellAggregate]:
    """Reduce pixels into fishnet cells by pixel-center containment.

    Nodata pixels are excluded; cells with no contributing pixel are absent.
    Reducers: sum | mean | sd (population sd) | mode (categorical only,
    ties to the smallest category id).
    """
    arr = aggregate_arrays(grid, fishnet, reducer)
    ids = [fishnet.cell_id(int(a), int(b)) for a, b in zip(arr.ix, arr.iy)]
    return dict(zip(ids, map(CellAggregate._make, zip(
        arr.value.tolist(), arr.count.tolist(), arr.area_km2.tolist(),
        arr.ix.tolist(), arr.iy.tolist(), arr.lon.tolist(), arr.lat.tolist(),
    ))))
