"""Synthetic worlds with known planted discontinuities.

Worlds are generated pixel-first: the lights value at each pixel is a smooth
surface plus the treatment jump on the treated side of the border, plus
independent Gaussian noise, clamped to the 0..63 digital-number range.
Treatment side and (for distance-kind surfaces) the surface argument both
come from the same signed-distance routine the analysis pipeline uses, so a
planted jump is exactly recoverable when the surface is noiseless.

All randomness flows from numpy's PCG64 generator seeded from the config;
identical configs produce byte-identical worlds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import geometry, outcomes, raster, rdd
from .errors import BorderRddError, ConfigError
from .util import write_csv, atomic_write_text

_NODATA = -9999.0
_Z95 = 1.959963984540054

COVARIATE_FIELDS = ("elevation", "precipitation", "dist_road", "population")


@dataclass(frozen=True)
class SyntheticWorldConfig:
    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float
    pixel_size_deg: float
    border_kind: str = "straight"          # or "sinusoidal"
    border_lon: float | None = None        # defaults to the extent midline
    amplitude: float = 0.0
    period: float = 1.0
    delta: float = 0.0
    surface: tuple[float, ...] = (0.0,)
    surface_kind: str = "distance"         # polynomial in signed km, or "lonlat"
    noise_sd: float = 0.0
    covariate_noise_sd: float = 1.0
    covariate_jumps: dict = field(default_factory=dict)
    dialect_bands: int = 1
    dialect_orientation: str = "lat"       # bands vary along this axis
    dialect_light_offsets: tuple[float, ...] | None = None
    pop_zero_fraction: float = 0.0
    rank_high: int = 20
    rank_low: int = 5
    border_id: str = "B1"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "surface", tuple(float(c) for c in self.surface))
        if not self.pixel_size_deg > 0:
            raise ConfigError("pixel_size_deg must be positive")
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ConfigError("empty extent")
        if not 0.0 <= self.pop_zero_fraction <= 1.0:
            raise ConfigError("pop_zero_fraction must be in [0, 1]")
        if self.border_kind not in ("straight", "sinusoidal"):
            raise ConfigError(f"unknown border_kind: {self.border_kind!r}")
        if self.surface_kind not in ("distance", "lonlat"):
            raise ConfigError(f"unknown surface_kind: {self.surface_kind!r}")
        if self.dialect_orientation not in ("lat", "lon"):
            raise ConfigError(f"unknown dialect_orientation: {self.dialect_orientation!r}")
        if self.dialect_bands < 1:
            raise ConfigError("dialect_bands must be >= 1")
        if self.dialect_light_offsets is not None:
            if len(self.dialect_light_offsets) != self.dialect_bands:
                raise ConfigError("dialect_light_offsets must match dialect_bands")


@dataclass(frozen=True)
class WorldTruth:
    delta: float
    surface: tuple[float, ...]
    surface_kind: str
    covariate_jumps: dict
    seed: int


@dataclass(frozen=True)
class World:
    grids: dict
    border: geometry.BorderPolyline
    witness: tuple[float, float]
    truth: WorldTruth
    config: SyntheticWorldConfig


def _border_polyline(cfg: SyntheticWorldConfig) -> tuple[geometry.BorderPolyline, tuple[float, float]]:
    lon0 = cfg.border_lon if cfg.border_lon is not None else (cfg.lon_min + cfg.lon_max) / 2.0
    lat_hi = cfg.lat_max + 0.2
    lat_lo = cfg.lat_min - 0.2
    if cfg.border_kind == "straight":
        verts = ((lon0, lat_hi), (lon0, lat_lo))
    else:
        lats = np.arange(lat_hi, lat_lo - 1e-12, -0.01)
        lons = lon0 + cfg.amplitude * np.sin(2.0 * math.pi * (lats - cfg.lat_min) / cfg.period)
        verts = tuple(zip(lons.tolist(), lats.tolist()))
    east_edge = lon0 + abs(cfg.amplitude)
    if east_edge >= cfg.lon_max:
        raise ConfigError("border (plus amplitude) must stay inside the lon extent")
    witness = (east_edge + 0.5 * (cfg.lon_max - east_edge), (cfg.lat_min + cfg.lat_max) / 2.0)
    border = geometry.BorderPolyline(
        cfg.border_id, verts, f"P{cfg.rank_high}", f"P{cfg.rank_low}",
        cfg.rank_high, cfg.rank_low,
    )
    # Vertex order runs north->south, putting the treated side east; the
    # witness check pins that down regardless of border shape.
    return geometry.orient_border(border, witness), witness


def _grid(cfg: SyntheticWorldConfig, ncols, nrows, values, kind="continuous") -> raster.RasterGrid:
    return raster.RasterGrid(
        ncols, nrows, cfg.lon_min, cfg.lat_min, cfg.pixel_size_deg,
        _NODATA, values.reshape(-1), kind,
    )


def generate_world(cfg: SyntheticWorldConfig) -> World:
    """Build all raster layers, the border, and the ground-truth record."""
    ncols = max(1, round((cfg.lon_max - cfg.lon_min) / cfg.pixel_size_deg))
    nrows = max(1, round((cfg.lat_max - cfg.lat_min) / cfg.pixel_size_deg))
    lon_c = cfg.lon_min + (np.arange(ncols) + 0.5) * cfg.pixel_size_deg
    lat_c = cfg.lat_min + (nrows - np.arange(nrows) - 0.5) * cfg.pixel_size_deg
    LON = np.broadcast_to(lon_c[None, :], (nrows, ncols))
    LAT = np.broadcast_to(lat_c[:, None], (nrows, ncols))

    border, witness = _border_polyline(cfg)
    d_km = geometry.project_points(LON.ravel(), LAT.ravel(), border).signed_km
    d_km = d_km.reshape(nrows, ncols)
    treated = (d_km > 0).astype(float)

    if cfg.surface_kind == "distance":
        g = np.polynomial.polynomial.polyval(d_km, np.asarray(cfg.surface))
    else:
        cx = (cfg.lon_min + cfg.lon_max) / 2.0
        cy = (cfg.lat_min + cfg.lat_max) / 2.0
        u, v = LON - cx, LAT - cy
        terms = [np.ones_like(u), u, v, u * u, u * v, v * v]
        if len(cfg.surface) > len(terms):
            raise ConfigError("lonlat surface supports at most 6 coefficients")
        g = sum(c * t for c, t in zip(cfg.surface, terms))

    rng = np.random.default_rng(cfg.seed)
    noise = rng.normal(0.0, 1.0, (nrows, ncols))
    cov_noise = {name: rng.normal(0.0, 1.0, (nrows, ncols)) for name in COVARIATE_FIELDS}
    pop_zero_u = rng.random((nrows, ncols))

    if cfg.dialect_orientation == "lat":
        frac = (LAT - cfg.lat_min) / (cfg.lat_max - cfg.lat_min)
    else:
        frac = (LON - cfg.lon_min) / (cfg.lon_max - cfg.lon_min)
    band = np.clip(np.floor(frac * cfg.dialect_bands), 0, cfg.dialect_bands - 1).astype(int) + 1

    lights = g + cfg.delta * treated + cfg.noise_sd * noise
    if cfg.dialect_light_offsets is not None:
        offsets = np.asarray((0.0,) + tuple(cfg.dialect_light_offsets))
        lights = lights + offsets[band]
    lights = np.clip(lights, 0.0, 63.0)

    xn = (LON - cfg.lon_min) / (cfg.lon_max - cfg.lon_min)
    yn = (LAT - cfg.lat_min) / (cfg.lat_max - cfg.lat_min)
    jumps = dict(cfg.covariate_jumps)
    sd = cfg.covariate_noise_sd
    elevation = 300.0 + 120.0 * xn + 80.0 * yn \
        + jumps.get("elevation", 0.0) * treated + sd * cov_noise["elevation"]
    precipitation = 900.0 + 200.0 * yn - 150.0 * xn \
        + jumps.get("precipitation", 0.0) * treated + sd * cov_noise["precipitation"]
    dist_road = np.maximum(
        0.0,
        6.0 + 3.0 * xn - 2.0 * yn
        + jumps.get("dist_road", 0.0) * treated + sd * cov_noise["dist_road"],
    )
    population = np.maximum(
        1.0,
        45.0 + 12.0 * xn + 6.0 * yn
        + jumps.get("population", 0.0) * treated + sd * cov_noise["population"],
    )
    population = np.where(pop_zero_u < cfg.pop_zero_fraction, 0.0, population)

    grids = {
        "lights": _grid(cfg, ncols, nrows, lights),
        "elevation": _grid(cfg, ncols, nrows, elevation),
        "precipitation": _grid(cfg, ncols, nrows, precipitation),
        "dist_road": _grid(cfg, ncols, nrows, dist_road),
        "population": _grid(cfg, ncols, nrows, population),
        "dialect": _grid(cfg, ncols, nrows, band.astype(float), kind="categorical"),
    }
    truth = WorldTruth(cfg.delta, cfg.surface, cfg.surface_kind, dict(jumps), cfg.seed)
    return World(grids, border, witness, truth, cfg)


def world_table(
    world: World,
    cell_size_deg: float | None = None,
    options: outcomes.BuildOptions = outcomes.BuildOptions(),
) -> outcomes.CellTable:
    """Run the world through the real aggregation/geometry/assembly pipeline."""
    cfg = world.config
    fishnet = raster.FishnetSpec(
        cell_size_deg or cfg.pixel_size_deg, cfg.lon_min, cfg.lat_min
    )
    return outcomes.build_cell_table(world.grids, [world.border], fishnet, options)


def write_world(world: World, outdir: str | Path) -> dict[str, Path]:
    """Emit the grids, border CSVs, and truth file a pipeline run consumes."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, grid in world.grids.items():
        p = outdir / f"{name}.asc"
        raster.write_grid(grid, p)
        paths[name] = p

    b = world.border
    vrows = [(b.border_id, i, lon, lat) for i, (lon, lat) in enumerate(b.vertices)]
    paths["border_vertices"] = outdir / "border_vertices.csv"
    write_csv(paths["border_vertices"], ["border_id", "seq", "lon", "lat"], vrows)
    paths["border_metadata"] = outdir / "border_metadata.csv"
    write_csv(
        paths["border_metadata"],
        ["border_id", "prov_high", "prov_low", "rank_high", "rank_low",
         "witness_lon", "witness_lat"],
        [(b.border_id, b.prov_high, b.prov_low, b.rank_high, b.rank_low,
          world.witness[0], world.witness[1])],
    )

    t = world.truth
    lines = [
        f"delta = {json.dumps(t.delta)}",
        f"surface = {json.dumps(list(t.surface))}",
        f"surface_kind = {json.dumps(t.surface_kind)}",
        f"covariate_jumps = {json.dumps(t.covariate_jumps, sort_keys=True)}",
        f"seed = {json.dumps(t.seed)}",
    ]
    paths["truth"] = outdir / "truth.txt"
    atomic_write_text(paths["truth"], "\n".join(lines) + "\n")
    return paths


def read_truth(path: str | Path) -> WorldTruth:
    fields = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = json.loads(value.strip())
    return WorldTruth(
        fields["delta"], tuple(fields["surface"]), fields["surface_kind"],
        dict(fields["covariate_jumps"]), fields["seed"],
    )


def brute_force_mse_bandwidth(
    tables,
    spec: rdd.RddSpec,
    truth: WorldTruth,
    h_grid: Sequence[float],
) -> float:
    """Oracle bandwidth: the grid point minimizing the MSE of the conventional
    estimate against the planted jump across replication tables. Ties (flat
    MSE, e.g. noiseless worlds) resolve to the largest candidate."""
    if isinstance(tables, outcomes.CellTable):
        tables = [tables]
    h_grid = np.asarray(sorted(float(h) for h in h_grid))
    if h_grid.size == 0:
        raise ConfigError("h_grid must not be empty")
    mse = np.full(h_grid.size, np.inf)
    for i, h in enumerate(h_grid):
        errs = []
        try:
            for t in tables:
                errs.append(rdd.local_poly_fit(t, spec, float(h)).beta - truth.delta)
        except BorderRddError:
            continue
        mse[i] = float(np.mean(np.square(errs)))
    if not np.isfinite(mse).any():
        raise BandwidthFailureError("no oracle candidate produced a finite MSE")
    best = np.min(mse)
    tie = mse <= best * (1.0 + 1e-6) + 1e-24
    return float(h_grid[np.flatnonzero(tie)[-1]])


@dataclass(frozen=True)
class MonteCarloResult:
    reps: int
    n_failed: int
    coverage_rate: float
    rejection_rate: float
    mean_beta: float
    mean_h: float


def _one_rep(cfg: SyntheticWorldConfig, spec: rdd.RddSpec, rep: int,
             cell_size_deg: float | None, options: outcomes.BuildOptions):
    world = generate_world(replace(cfg, seed=cfg.seed + rep))
    table = world_table(world, cell_size_deg=cell_size_deg, options=options)
    est = rdd.bias_corrected_estimate(table, spec)
    covered = abs(est.beta - world.truth.delta) <= _Z95 * est.se_robust
    rejected = est.p_value_robust < 0.05
    return covered, rejected, est.beta, est.h


def monte_carlo_coverage(
    cfg: SyntheticWorldConfig,
    spec: rdd.RddSpec,
    reps: int,
    cell_size_deg: float | None = None,
    options: outcomes.BuildOptions = outcomes.BuildOptions(),
    threads: int = 1,
) -> MonteCarloResult:
    """Coverage of the robust 95% CI and 5%-level rejection rate across
    replications seeded seed+0 .. seed+reps-1. Individual failures are
    counted, not fatal."""
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    results = []
    n_failed = 0
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as ex:
            futs = [ex.submit(_one_rep, cfg, spec, r, cell_size_deg, options)
                    for r in range(reps)]
            for f in futs:
                try:
                    results.append(f.result())
                except BorderRddError:
                    n_failed += 1
    else:
        for r in range(reps):
            try:
                results.append(_one_rep(cfg, spec, r, cell_size_deg, options))
            except BorderRddError:
                n_failed += 1
    if not results:
        raise BorderRddError("every replication failed")
    arr = np.asarray(results, dtype=float)
    return MonteCarloResult(
        reps=reps,
        n_failed=n_failed,
        coverage_rate=float(arr[:, 0].mean()),
        rejection_rate=float(arr[:, 1].mean()),
        mean_beta=float(arr[:, 2].mean()),
        mean_h=float(arr[:, 3].mean()),
    )
