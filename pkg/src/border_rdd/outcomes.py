"""Analysis-ready cell tables: transforms, covariates, filters, frequencies.

A cell table has one row per (cell, border) pair. Canonical row order is
border_id then cell_id, both as strings. The luminosity transform is
``ln(lum_sum + 0.01)`` and ``lit`` is 1 exactly when any light was recorded.
Filters run in the canonical order buffer -> population -> dialect share;
the dialect share threshold is evaluated on the pooled table after the
first two filters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import geometry, raster
from .errors import ConfigError, EmptySampleError

COLUMNS = [
    "cell_id", "border_id", "lon", "lat", "distance_km", "treated",
    "lum_sum", "luminosity", "lit", "lum_pp", "population", "elevation",
    "precipitation", "dist_road", "log_area", "dialect", "cluster_id",
]

# Aggregation rule per raster layer.
LAYER_REDUCERS = {
    "lights": "sum",
    "elevation": "mean",
    "precipitation": "sum",
    "population": "sum",
    "dist_road": "mean",
    "dialect": "mode",
}

REQUIRED_LAYERS = tuple(LAYER_REDUCERS)


@dataclass(frozen=True)
class BuildOptions:
    max_km: float = 50.0
    lum_pp_mode: str = "ratio_of_log"   # or "log_of_ratio"
    cluster_bin_deg: float = 0.5
    min_dialect_share: float = 0.01

    def __post_init__(self):
        if self.lum_pp_mode not in ("ratio_of_log", "log_of_ratio"):
            raise ConfigError(f"unknown lum_pp_mode: {self.lum_pp_mode!r}")
        if not self.max_km > 0:
            raise ConfigError("max_km must be positive")


@dataclass
class CellTable:
    """Immutable-by-convention record table plus a provenance/filter log."""

    records: pd.DataFrame
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [c for c in COLUMNS if c not in self.records.columns]
        if missing:
            raise ConfigError(f"cell table missing columns: {missing}")
        dup = self.records.duplicated(subset=["cell_id", "border_id"])
        if dup.any():
            raise ConfigError("duplicate (cell_id, border_id) pairs in cell table")
        self.records = self.records[COLUMNS].reset_index(drop=True)

    def __len__(self) -> int:
        return len(self.records)


def luminosity_transform(lum_sum):
    """ln(lum_sum + 0.01); rejects negative input."""
    arr = np.asarray(lum_sum, dtype=float)
    if np.any(arr < 0):
        raise ValueError("lum_sum must be non-negative")
    out = np.log(arr + 0.01)
    return float(out) if np.isscalar(lum_sum) else out


def lit_indicator(lum_sum):
    """1 iff any light recorded."""
    arr = np.asarray(lum_sum, dtype=float)
    if np.any(arr < 0):
        raise ValueError("lum_sum must be non-negative")
    out = (arr > 0).astype(int)
    return int(out) if np.isscalar(lum_sum) else out


def _lum_pp(luminosity: np.ndarray, lum_sum: np.ndarray, population: np.ndarray,
            mode: str) -> np.ndarray:
    if mode == "ratio_of_log":
        return luminosity / population
    return np.log((lum_sum + 0.01) / population)


def build_cell_table(
    grids: Mapping[str, raster.RasterGrid | Sequence[raster.RasterGrid]],
    borders: Sequence[geometry.BorderPolyline],
    fishnet: raster.FishnetSpec,
    options: BuildOptions = BuildOptions(),
) -> CellTable:
    """Aggregate raster layers onto the fishnet, join them per cell, pair
    cells with borders inside the buffer, filter, and transform."""
    missing = [k for k in REQUIRED_LAYERS if k not in grids]
    if missing:
        raise ConfigError(f"missing required grid layers: {missing}")
    if not borders:
        raise ConfigError("no borders supplied")

    layer_maps: dict[str, raster.CellArrays] = {}
    for name in REQUIRED_LAYERS:
        g = grids[name]
        if name == "lights" and isinstance(g, (list, tuple)):
            g = raster.multi_year_mean(list(g))
        layer_maps[name] = raster.aggregate_arrays(g, fishnet, LAYER_REDUCERS[name])

    common_keys = layer_maps["lights"].key
    for name in REQUIRED_LAYERS[1:]:
        common_keys = np.intersect1d(common_keys, layer_maps[name].key, assume_unique=True)
    all_keys = np.unique(np.concatenate([m.key for m in layer_maps.values()]))
    n_missing_layer = int(all_keys.size - common_keys.size)
    if common_keys.size == 0:
        raise EmptySampleError("no cell is covered by every raster layer")

    lights = layer_maps["lights"]
    pos = np.searchsorted(lights.key, common_keys)
    cell_ids = [fishnet.cell_id(int(a), int(b))
                for a, b in zip(lights.ix[pos], lights.iy[pos])]
    lons = lights.lon[pos]
    lats = lights.lat[pos]
    areas = lights.area_km2[pos]
    base = {}
    for name in REQUIRED_LAYERS:
        m = layer_maps[name]
        base[name] = m.value[np.searchsorted(m.key, common_keys)]

    frames = []
    n_buffer_removed = 0
    for border in borders:
        proj = geometry.project_points(lons, lats, border)
        keep = (np.abs(proj.signed_km) <= options.max_km) & (proj.signed_km != 0.0)
        n_buffer_removed += int(len(cell_ids) - keep.sum())
        if not keep.any():
            continue
        idx = np.flatnonzero(keep)
        cluster_bin = np.floor(proj.arc_deg[idx] / options.cluster_bin_deg).astype(int)
        frames.append(pd.DataFrame({
            "cell_id": [cell_ids[i] for i in idx],
            "border_id": border.border_id,
            "lon": lons[idx],
            "lat": lats[idx],
            "distance_km": proj.signed_km[idx],
            "treated": proj.signed_km[idx] > 0,
            "lum_sum": base["lights"][idx],
            "population": base["population"][idx],
            "elevation": base["elevation"][idx],
            "precipitation": base["precipitation"][idx],
            "dist_road": base["dist_road"][idx],
            "log_area": np.log(areas[idx]),
            "dialect": base["dialect"][idx].astype(int),
            "cluster_id": [f"{border.border_id}:s{b}" for b in cluster_bin],
        }))
    if not frames:
        raise EmptySampleError("no cells fall inside any border buffer")
    df = pd.concat(frames, ignore_index=True)

    n_pop_removed = int((df["population"] <= 0).sum())
    df = df[df["population"] > 0]
    if df.empty:
        raise EmptySampleError("no cells remain after the population filter")

    share = df["dialect"].value_counts(normalize=True)
    dropped_groups = sorted(int(g) for g in share[share < options.min_dialect_share].index)
    n_dialect_removed = int(df["dialect"].isin(dropped_groups).sum())
    df = df[~df["dialect"].isin(dropped_groups)]
    if df.empty:
        raise EmptySampleError("no cells remain after the dialect-share filter")

    df = df.copy()
    df["luminosity"] = luminosity_transform(df["lum_sum"].to_numpy())
    df["lit"] = lit_indicator(df["lum_sum"].to_numpy())
    df["lum_pp"] = _lum_pp(
        df["luminosity"].to_numpy(), df["lum_sum"].to_numpy(),
        df["population"].to_numpy(), options.lum_pp_mode,
    )
    df = df.sort_values(["border_id", "cell_id"], kind="mergesort").reset_index(drop=True)

    provenance = {
        "borders": [b.border_id for b in borders],
        "n_cells_joined": len(cell_ids),
        "n_candidate_rows": len(cell_ids) * len(borders),
        "removed_missing_layer_cells": n_missing_layer,
        "removed_buffer": n_buffer_removed,
        "removed_population": n_pop_removed,
        "removed_dialect_share": n_dialect_removed,
        "dialect_groups_dropped": dropped_groups,
        "rows": len(df),
    }
    return CellTable(df, provenance)


def dialect_frequency(table: CellTable) -> pd.DataFrame:
    """Frequency table (group, count, percent, cum_percent), sorted by group;
    percentages rounded to 2 decimals, cumulative computed before rounding."""
    if len(table) == 0:
        raise EmptySampleError("dialect_frequency needs a non-empty table")
    counts = table.records["dialect"].value_counts().sort_index()
    total = int(counts.sum())
    pct = counts / total * 100.0
    return pd.DataFrame({
        "group": counts.index.to_numpy(),
        "count": counts.to_numpy(),
        "percent": pct.round(2).to_numpy(),
        "cum_percent": pct.cumsum().round(2).to_numpy(),
    })


def table_to_csv(table: CellTable, path) -> None:
    """Write the cell table in the canonical column order and row order."""
    from .util import write_csv

    df = table.records
    rows = df.itertuples(index=False)
    out = []
    for r in rows:
        vals = list(r)
        vals[COLUMNS.index("treated")] = int(vals[COLUMNS.index("treated")])
        out.append(vals)
    write_csv(path, COLUMNS, out)


_FLOAT_COLUMNS = ("lon", "lat", "distance_km", "lum_sum", "luminosity", "lum_pp",
                  "population", "elevation", "precipitation", "dist_road", "log_area")


def table_from_csv(path) -> CellTable:
    df = pd.read_csv(path)
    df["treated"] = df["treated"].astype(bool)
    for col in ("cell_id", "border_id", "cluster_id"):
        df[col] = df[col].astype(str)
    for col in _FLOAT_COLUMNS:
        df[col] = df[col].astype(float)
    return CellTable(df, {"source": str(path)})
