import math

import numpy as np
import pandas as pd
import pytest

from border_rdd import outcomes
from border_rdd.errors import ConfigError, EmptySampleError
from border_rdd.geometry import BorderPolyline
from border_rdd.outcomes import (
    BuildOptions,
    CellTable,
    build_cell_table,
    dialect_frequency,
    lit_indicator,
    luminosity_transform,
)
from border_rdd.raster import FishnetSpec, RasterGrid

from conftest import make_table


def test_luminosity_transform_values():
    assert luminosity_transform(0.0) == math.log(0.01)
    assert luminosity_transform(0.0) == pytest.approx(-4.605170185988091, abs=0)
    assert luminosity_transform(0.99) == pytest.approx(0.0, abs=1e-15)
    assert luminosity_transform(62.99) == pytest.approx(math.log(63.0), abs=1e-15)
    with pytest.raises(ValueError):
        luminosity_transform(-0.1)


def test_lit_indicator():
    assert lit_indicator(0.0) == 0
    assert lit_indicator(1e-9) == 1
    assert lit_indicator(63.0) == 1
    with pytest.raises(ValueError):
        lit_indicator(-1.0)


def test_lit_luminosity_consistency(rng):
    lum = rng.uniform(0, 63, 200)
    lum[rng.random(200) < 0.4] = 0.0
    lit = lit_indicator(lum)
    y = luminosity_transform(lum)
    assert np.all(y[lit == 0] == math.log(0.01))
    order = np.argsort(lum)
    assert np.all(np.diff(y[order]) >= 0)


def _flat_grid(ncols, nrows, value, cellsize=0.05, kind="continuous"):
    return RasterGrid(ncols, nrows, 0.0, 0.0, cellsize, -9999.0,
                      np.full(ncols * nrows, float(value)), kind)


def _world_layers(pop_values=None, dialect_values=None, lights_values=None):
    """10x10 pixel world on a 0.05-degree grid; one pixel per cell."""
    n = 100
    lights = _flat_grid(10, 10, 5.0)
    if lights_values is not None:
        lights = RasterGrid(10, 10, 0, 0, 0.05, -9999.0, lights_values)
    pop = _flat_grid(10, 10, 20.0)
    if pop_values is not None:
        pop = RasterGrid(10, 10, 0, 0, 0.05, -9999.0, pop_values)
    dial = _flat_grid(10, 10, 1.0, kind="categorical")
    if dialect_values is not None:
        dial = RasterGrid(10, 10, 0, 0, 0.05, -9999.0, dialect_values, "categorical")
    return {
        "lights": lights,
        "elevation": _flat_grid(10, 10, 200.0),
        "precipitation": _flat_grid(10, 10, 900.0),
        "population": pop,
        "dist_road": _flat_grid(10, 10, 4.0),
        "dialect": dial,
    }


def _border():
    # meridian through the middle of the 0.5-degree world, treated side east
    return BorderPolyline("B1", ((0.25, 0.7), (0.25, -0.2)), "PH", "PL", 20, 5)


def test_build_drops_zero_population():
    pop = np.full(100, 20.0)
    pop[13] = 0.0
    table = build_cell_table(_world_layers(pop_values=pop), [_border()],
                             FishnetSpec(0.05, 0, 0))
    assert len(table) == 99
    assert table.provenance["removed_population"] == 1
    assert (table.records["population"] > 0).all()


def test_build_dialect_share_filter_and_accounting():
    # 8 cells in group 2 out of 1000 -> 0.8% < 1% -> dropped and logged
    n = 1000
    dial = np.ones(n)
    dial[:8] = 2.0
    grids = {
        "lights": RasterGrid(20, 50, 0, 0, 0.01, -9999.0, np.full(n, 5.0)),
        "elevation": RasterGrid(20, 50, 0, 0, 0.01, -9999.0, np.full(n, 200.0)),
        "precipitation": RasterGrid(20, 50, 0, 0, 0.01, -9999.0, np.full(n, 900.0)),
        "population": RasterGrid(20, 50, 0, 0, 0.01, -9999.0, np.full(n, 20.0)),
        "dist_road": RasterGrid(20, 50, 0, 0, 0.01, -9999.0, np.full(n, 4.0)),
        "dialect": RasterGrid(20, 50, 0, 0, 0.01, -9999.0, dial, "categorical"),
    }
    border = BorderPolyline("B1", ((0.1, 0.7), (0.1, -0.2)), "PH", "PL", 20, 5)
    table = build_cell_table(grids, [border], FishnetSpec(0.01, 0, 0))
    assert len(table) == 992
    assert table.provenance["removed_dialect_share"] == 8
    assert table.provenance["dialect_groups_dropped"] == [2]
    p = table.provenance
    assert p["rows"] + p["removed_buffer"] + p["removed_population"] \
        + p["removed_dialect_share"] == p["n_candidate_rows"]


def test_build_transform_recomputation_oracle():
    rng = np.random.default_rng(7)
    lights = np.round(rng.uniform(0, 63, 100), 3)
    pop = np.round(rng.uniform(1, 40, 100), 3)
    table = build_cell_table(
        _world_layers(pop_values=pop, lights_values=lights), [_border()],
        FishnetSpec(0.05, 0, 0),
    )
    df = table.records
    for _, row in df.iterrows():
        assert row["luminosity"] == math.log(row["lum_sum"] + 0.01)
        assert row["lit"] == (1 if row["lum_sum"] > 0 else 0)
        assert row["lum_pp"] == row["luminosity"] / row["population"]
        assert row["treated"] == (row["distance_km"] > 0)
        assert abs(row["distance_km"]) <= 50.0 and row["distance_km"] != 0.0


def test_lum_pp_log_of_ratio_mode():
    table = build_cell_table(
        _world_layers(), [_border()], FishnetSpec(0.05, 0, 0),
        BuildOptions(lum_pp_mode="log_of_ratio"),
    )
    df = table.records
    expected = np.log((df["lum_sum"] + 0.01) / df["population"])
    assert np.allclose(df["lum_pp"], expected, rtol=0, atol=0)


def test_filter_order_permutations_agree():
    rng = np.random.default_rng(3)
    pop = np.full(100, 20.0)
    pop[rng.random(100) < 0.2] = 0.0
    dial = np.ones(100)
    dial[:30] = 2.0
    dial[95:] = 3.0
    grids = _world_layers(pop_values=pop, dialect_values=dial)
    table = build_cell_table(grids, [_border()], FishnetSpec(0.05, 0, 0))

    # independent reconstruction: assemble unfiltered rows, then apply the
    # three filters in every order with the dialect drop-set fixed from the
    # canonical order (buffer -> population -> share)
    wide = build_cell_table(grids, [_border()], FishnetSpec(0.05, 0, 0),
                            BuildOptions(max_km=1e9, min_dialect_share=0.0))
    base = wide.records.copy()
    canonical = base[(base["distance_km"].abs() <= 50.0)]
    canonical = canonical[canonical["population"] > 0]
    share = canonical["dialect"].value_counts(normalize=True)
    drop = set(share[share < 0.01].index)

    filters = {
        "buffer": lambda d: d[d["distance_km"].abs() <= 50.0],
        "population": lambda d: d[d["population"] > 0],
        "share": lambda d: d[~d["dialect"].isin(drop)],
    }
    import itertools

    reference = None
    for order in itertools.permutations(filters):
        out = base
        for name in order:
            out = filters[name](out)
        out = out.sort_values(["border_id", "cell_id"]).reset_index(drop=True)
        if reference is None:
            reference = out
        else:
            pd.testing.assert_frame_equal(out, reference)
    assert set(reference["cell_id"]) == set(table.records["cell_id"])


def test_duplicate_pairs_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        df = make_table([1.0, 2.0], [0.0, 0.0]).records.copy()
        df["cell_id"] = ["a", "a"]
        CellTable(df, {})


def test_missing_layer_is_config_error():
    grids = _world_layers()
    del grids["elevation"]
    with pytest.raises(ConfigError, match="elevation"):
        build_cell_table(grids, [_border()], FishnetSpec(0.05, 0, 0))


def test_empty_after_filters_is_error():
    pop = np.zeros(100)
    with pytest.raises(EmptySampleError):
        build_cell_table(_world_layers(pop_values=pop), [_border()],
                         FishnetSpec(0.05, 0, 0))


def test_dialect_frequency_single_group():
    t = make_table([1.0, -1.0, 2.0], [0.0, 0.0, 0.0])
    freq = dialect_frequency(t)
    assert len(freq) == 1
    assert freq["percent"].iloc[0] == 100.00
    assert freq["cum_percent"].iloc[0] == 100.00


def test_dialect_frequency_paper_style_rows():
    counts = {"Jin": 10201, "Mandarin": 72353}
    rows = []
    k = 0
    for g, c in counts.items():
        for _ in range(c):
            rows.append((f"c{k:06d}", g))
            k += 1
    df = make_table(np.ones(k), np.zeros(k),
                    cell_ids=[r[0] for r in rows]).records.copy()
    df["dialect"] = [r[1] for r in rows]
    freq = dialect_frequency(CellTable(df, {}))
    n = 10201 + 72353
    jin = freq[freq["group"] == "Jin"].iloc[0]
    assert jin["percent"] == round(10201 / n * 100, 2)
    man = freq[freq["group"] == "Mandarin"].iloc[0]
    assert man["cum_percent"] == 100.00


def test_table_csv_roundtrip(tmp_path):
    table = build_cell_table(_world_layers(), [_border()], FishnetSpec(0.05, 0, 0))
    path = tmp_path / "t.csv"
    outcomes.table_to_csv(table, path)
    back = outcomes.table_from_csv(path)
    pd.testing.assert_frame_equal(back.records, table.records)
    # canonical row order: border_id then cell_id
    ids = list(table.records["cell_id"])
    assert ids == sorted(ids)
