"""Batch front door: wire files through the pipeline and emit table/figure data.

Every command takes ``--config <path>`` (flat key=value file) and writes CSVs
into ``output_dir``. Outputs are deterministic for a fixed config and seed,
written atomically, and never mutate inputs. Exit status is nonzero only for
fatal errors; per-cell estimation failures land as status cells in the CSVs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import pandas as pd

from . import geometry, outcomes, raster, rdd, studies, synth
from .config import RunConfig
from .errors import BorderRddError, ConfigError
from .util import atomic_write_text, write_csv

_THREADS_ENV = "BORDER_RDD_THREADS"


def _threads(cfg: RunConfig, override: int | None) -> int:
    if override is not None:
        return override
    if cfg.has("threads"):
        return cfg.get_int("threads")
    return int(os.environ.get(_THREADS_ENV, "1"))


def _load_grids(cfg: RunConfig) -> dict:
    grids = {}
    lights = [raster.load_grid(p) for p in cfg.get_path_list("grids.lights")]
    grids["lights"] = lights if len(lights) > 1 else lights[0]
    for name in ("elevation", "precipitation", "population", "dist_road"):
        grids[name] = raster.load_grid(cfg.get_path(f"grids.{name}"))
    grids["dialect"] = raster.load_grid(cfg.get_path("grids.dialect"), kind="categorical")
    return grids


def _load_borders(cfg: RunConfig) -> list[geometry.BorderPolyline]:
    return geometry.load_borders(
        cfg.get_path("borders.vertices"), cfg.get_path("borders.metadata")
    )


def _fishnet(cfg: RunConfig) -> raster.FishnetSpec:
    return raster.FishnetSpec(
        cell_size_deg=cfg.get_float("fishnet.cell_size_deg", 0.05),
        origin_lon=cfg.get_float("fishnet.origin_lon", 0.0),
        origin_lat=cfg.get_float("fishnet.origin_lat", 0.0),
    )


def _build_options(cfg: RunConfig) -> outcomes.BuildOptions:
    return outcomes.BuildOptions(
        max_km=cfg.get_float("buffer_km", 50.0),
        lum_pp_mode=cfg.get("lum_pp_mode", "ratio_of_log"),
        cluster_bin_deg=cfg.get_float("cluster_bin_deg", 0.5),
        min_dialect_share=cfg.get_float("min_dialect_share", 0.01),
    )


def _base_spec(cfg: RunConfig) -> rdd.RddSpec:
    spec = rdd.RddSpec(
        outcome="luminosity",
        bandwidth_mode=cfg.get("spec.bandwidth_mode", "mse_optimal"),
        h=cfg.get_float("spec.h") if cfg.has("spec.h") else None,
        variance=cfg.get("spec.variance", "nn"),
        nn_neighbors=cfg.get_int("spec.nn_neighbors", 3),
        bias_correction=cfg.get_bool("spec.bias_correction", True),
        b_ratio=cfg.get_float("spec.b_ratio", 1.5),
    )
    return spec


def _load_table(cfg: RunConfig) -> outcomes.CellTable:
    return outcomes.table_from_csv(cfg.get_path("table"))


def _write_results(path: Path, df: pd.DataFrame) -> None:
    write_csv(path, list(df.columns), df.itertuples(index=False))


def cmd_simulate(cfg: RunConfig) -> None:
    world_cfg = synth.SyntheticWorldConfig(
        lon_min=cfg.get_float("world.lon_min"),
        lon_max=cfg.get_float("world.lon_max"),
        lat_min=cfg.get_float("world.lat_min"),
        lat_max=cfg.get_float("world.lat_max"),
        pixel_size_deg=cfg.get_float("world.pixel_size_deg"),
        border_kind=cfg.get("world.border_kind", "straight"),
        border_lon=cfg.get_float("world.border_lon") if cfg.has("world.border_lon") else None,
        amplitude=cfg.get_float("world.amplitude", 0.0),
        period=cfg.get_float("world.period", 1.0),
        delta=cfg.get_float("world.delta", 0.0),
        surface=tuple(float(c) for c in cfg.get_list("world.surface", "30")),
        surface_kind=cfg.get("world.surface_kind", "distance"),
        noise_sd=cfg.get_float("world.noise_sd", 0.0),
        covariate_noise_sd=cfg.get_float("world.covariate_noise_sd", 1.0),
        covariate_jumps=json.loads(cfg.get("world.covariate_jumps", "{}")),
        dialect_bands=cfg.get_int("world.dialect_bands", 1),
        dialect_orientation=cfg.get("world.dialect_orientation", "lat"),
        pop_zero_fraction=cfg.get_float("world.pop_zero_fraction", 0.0),
        rank_high=cfg.get_int("world.rank_high", 20),
        rank_low=cfg.get_int("world.rank_low", 5),
        border_id=cfg.get("world.border_id", "B1"),
        seed=cfg.get_int("seed", 0),
    )
    world = synth.generate_world(world_cfg)
    paths = synth.write_world(world, cfg.output_dir())
    print(f"simulate: wrote {len(paths)} files to {cfg.output_dir()}")


def cmd_table(cfg: RunConfig) -> None:
    table = outcomes.build_cell_table(
        _load_grids(cfg), _load_borders(cfg), _fishnet(cfg), _build_options(cfg)
    )
    out = cfg.output_dir()
    outcomes.table_to_csv(table, out / "cell_table.csv")
    atomic_write_text(
        out / "provenance.txt",
        "\n".join(f"{k} = {json.dumps(v)}" for k, v in sorted(table.provenance.items())) + "\n",
    )
    print(f"table: {len(table)} rows -> {out / 'cell_table.csv'}")


def cmd_estimate(cfg: RunConfig) -> None:
    table = _load_table(cfg)
    base = _base_spec(cfg)
    out = cfg.output_dir()
    results, layout = studies.pooled_dialect_fe(table, base, include_covariates=False)
    _write_results(out / "pooled_results.csv", results)
    _write_results(out / "table6.csv", layout)
    results_c, layout_c = studies.pooled_dialect_fe(table, base, include_covariates=True)
    _write_results(out / "pooled_results_covs.csv", results_c)
    _write_results(out / "table7.csv", layout_c)
    print(f"estimate: wrote pooled estimates to {out}")


def cmd_balance(cfg: RunConfig) -> None:
    table = _load_table(cfg)
    base = _base_spec(cfg)
    covariates = cfg.get_list("balance.covariates",
                              "elevation,precipitation,dist_road,population")
    results = studies.balance_battery(table, covariates, base)
    out = cfg.output_dir()
    _write_results(out / "balance_results.csv", results)
    for cov in covariates:
        _write_results(out / f"balance_{cov}.csv", results[results["outcome"] == cov])
    print(f"balance: {len(results)} rows -> {out}")


def cmd_battery(cfg: RunConfig) -> None:
    table = _load_table(cfg)
    base = _base_spec(cfg)
    borders = _load_borders(cfg)
    threshold = cfg.get_int("rank_gap_threshold", 7)
    subset, stats = studies.rank_gap_filter(borders, threshold)
    keep = {b.border_id for b in subset}
    df = table.records[table.records["border_id"].isin(keep)]
    if df.empty:
        raise ConfigError("no table rows remain after the rank-gap filter")
    filtered = outcomes.CellTable(df.reset_index(drop=True), table.provenance)
    results = studies.per_border_battery(filtered, base)
    out = cfg.output_dir()
    _write_results(out / "battery_results.csv", results)
    for outcome in ("luminosity", "lit"):
        for p in (1, 2):
            mask = (results["outcome"] == outcome) & (results["p"] == p)
            _write_results(out / f"battery_{outcome}_p{p}.csv", results[mask])
    write_csv(out / "rank_gaps.csv", ["n_borders", "n_selected", "gap_mean", "gap_sd"],
              [(stats.n, len(subset), stats.mean, stats.sd)])
    print(f"battery: {len(results)} rows over {len(subset)} borders -> {out}")


def cmd_rdplot(cfg: RunConfig) -> None:
    table = _load_table(cfg)
    out = cfg.output_dir()
    outcomes_list = cfg.get_list("rdplot.outcomes", "luminosity")
    orders = [int(o) for o in cfg.get_list("rdplot.orders", "1,2,3,4")]
    bins = cfg.get_int("rdplot.bins_per_side", 20)
    max_km = cfg.get_float("buffer_km", 50.0)
    for outcome in outcomes_list:
        data = rdd.rd_plot_data(table, outcome, orders, bins, max_km)
        _write_results(out / f"rdplot_{outcome}_bins.csv", data.bins)
        _write_results(out / f"rdplot_{outcome}_fits.csv", data.fits)
    print(f"rdplot: wrote {len(outcomes_list)} outcome(s) -> {out}")


def cmd_dyads(cfg: RunConfig) -> None:
    cities = pd.read_csv(cfg.get_path("cities"))
    borders = _load_borders(cfg)
    adjacency = [(b.prov_high, b.prov_low) for b in borders]
    summary, log = studies.dyad_differences(
        cities, adjacency, limit_km=cfg.get_float("dyads.limit_km", 150.0)
    )
    out = cfg.output_dir()
    _write_results(out / "dyads.csv", summary)
    atomic_write_text(out / "dyads_log.txt",
                      "\n".join(f"{k} = {json.dumps(v)}" for k, v in sorted(log.items())) + "\n")
    print(f"dyads: wrote {out / 'dyads.csv'}")


def cmd_private(cfg: RunConfig) -> None:
    prefectures = pd.read_csv(cfg.get_path("prefectures"))
    borders = _load_borders(cfg)
    per_border, fit, log = studies.percent_private_analysis(prefectures, borders)
    out = cfg.output_dir()
    _write_results(out / "private_diffs.csv", per_border)
    write_csv(out / "private_fit.csv", ["slope", "intercept", "se", "p_value", "r2", "n"],
              [(fit["slope"], fit["intercept"], fit["se"], fit["p_value"], fit["r2"], fit["n"])])
    atomic_write_text(out / "private_log.txt",
                      "\n".join(f"{k} = {json.dumps(v)}" for k, v in sorted(log.items())) + "\n")
    print(f"private: {len(per_border)} borders -> {out}")


def cmd_rankgdp(cfg: RunConfig) -> None:
    provinces = pd.read_csv(cfg.get_path("provinces"))
    fit = studies.rank_gdp_regression(provinces)
    out = cfg.output_dir()
    write_csv(out / "rankgdp.csv", ["slope", "intercept", "se", "p_value", "r2", "n"],
              [(fit["slope"], fit["intercept"], fit["se"], fit["p_value"], fit["r2"], fit["n"])])
    print(f"rankgdp: wrote {out / 'rankgdp.csv'}")


_COMMANDS = {
    "simulate": cmd_simulate,
    "table": cmd_table,
    "estimate": cmd_estimate,
    "balance": cmd_balance,
    "battery": cmd_battery,
    "rdplot": cmd_rdplot,
    "dyads": cmd_dyads,
    "private": cmd_private,
    "rankgdp": cmd_rankgdp,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="border-rdd",
        description="Spatial regression-discontinuity pipeline over raster data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        cfg.values.setdefault("threads", str(_threads(cfg, args.threads)))
        cfg.output_dir().mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg)
    except BorderRddError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
