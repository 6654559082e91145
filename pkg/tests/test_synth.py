import math
from dataclasses import replace

import numpy as np
import pytest

from border_rdd import raster, synth
from border_rdd.errors import ConfigError
from border_rdd.rdd import RddSpec
from border_rdd.synth import (
    SyntheticWorldConfig,
    brute_force_mse_bandwidth,
    generate_world,
    monte_carlo_coverage,
    world_table,
)


def small_config(**kw):
    base = dict(
        lon_min=0.0, lon_max=1.0, lat_min=0.0, lat_max=0.5,
        pixel_size_deg=0.01, delta=0.0, surface=(20.0,), noise_sd=0.0, seed=3,
    )
    base.update(kw)
    return SyntheticWorldConfig(**base)


def test_same_seed_byte_identical(tmp_path):
    w1 = generate_world(small_config(noise_sd=1.0, seed=11))
    w2 = generate_world(small_config(noise_sd=1.0, seed=11))
    for name in w1.grids:
        d1 = tmp_path / f"a_{name}.asc"
        d2 = tmp_path / f"b_{name}.asc"
        raster.write_grid(w1.grids[name], d1)
        raster.write_grid(w2.grids[name], d2)
        assert d1.read_bytes() == d2.read_bytes()


def test_different_seed_differs():
    w1 = generate_world(small_config(noise_sd=1.0, seed=1))
    w2 = generate_world(small_config(noise_sd=1.0, seed=2))
    assert not np.array_equal(w1.grids["lights"].values, w2.grids["lights"].values)


def test_noiseless_flat_world_delta_zero():
    w = generate_world(small_config())
    assert np.all(w.grids["lights"].values == 20.0)


def test_flat_world_jump_is_exact():
    w = generate_world(small_config(delta=5.0))
    vals = w.grids["lights"].array
    lon = w.grids["lights"].lon_centers()
    east = vals[:, lon > 0.5]
    west = vals[:, lon < 0.5]
    assert np.all(east == 25.0)
    assert np.all(west == 20.0)
    assert east.mean() - west.mean() == 5.0


def test_clamp_respects_dn_range():
    w = generate_world(small_config(surface=(62.0,), delta=5.0, noise_sd=3.0, seed=4))
    v = w.grids["lights"].values
    assert v.max() <= 63.0 and v.min() >= 0.0
    assert (v == 63.0).any()  # clamping engaged


def test_covariate_jumps_propagate():
    # difference-in-differences against the same world without the jump
    # removes the smooth base gradient exactly
    jumped = generate_world(small_config(covariate_jumps={"elevation": 50.0},
                                         covariate_noise_sd=0.0))
    plain = generate_world(small_config(covariate_noise_sd=0.0))
    diff = jumped.grids["elevation"].array - plain.grids["elevation"].array
    lon = jumped.grids["elevation"].lon_centers()
    assert np.allclose(diff[:, lon > 0.55], 50.0, atol=1e-9)
    assert np.all(diff[:, lon < 0.45] == 0.0)


def test_population_zero_fraction():
    w = generate_world(small_config(pop_zero_fraction=0.3, seed=9))
    pop = w.grids["population"].values
    share = (pop == 0).mean()
    assert 0.2 < share < 0.4
    table = world_table(w)
    assert (table.records["population"] > 0).all()
    assert table.provenance["removed_population"] > 0


def test_dialect_bands():
    w = generate_world(small_config(dialect_bands=4))
    d = w.grids["dialect"].values
    assert set(np.unique(d)) == {1.0, 2.0, 3.0, 4.0}
    table = world_table(w)
    assert set(table.records["dialect"].unique()) <= {1, 2, 3, 4}


def test_world_table_truth_alignment():
    cfg = small_config(delta=3.0, surface=(20.0, 0.1), noise_sd=0.0)
    w = generate_world(cfg)
    t = world_table(w)
    df = t.records
    predicted = 20.0 + 0.1 * df["distance_km"] + 3.0 * df["treated"]
    assert np.allclose(df["lum_sum"], predicted, atol=1e-9)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(pixel_size_deg=0.0)
    with pytest.raises(ConfigError):
        small_config(pop_zero_fraction=1.5)
    with pytest.raises(ConfigError):
        small_config(border_kind="zigzag")
    with pytest.raises(ConfigError):
        small_config(dialect_bands=2, dialect_light_offsets=(1.0,))
    with pytest.raises(ConfigError):
        generate_world(small_config(border_lon=1.2))  # outside the extent


def test_truth_roundtrip(tmp_path):
    w = generate_world(small_config(delta=1.5, covariate_jumps={"elevation": 2.0}))
    paths = synth.write_world(w, tmp_path)
    truth = synth.read_truth(paths["truth"])
    assert truth == w.truth


def test_written_world_feeds_pipeline(tmp_path):
    from border_rdd import geometry, outcomes

    w = generate_world(small_config(delta=2.0, surface=(25.0, 0.05), noise_sd=0.0))
    paths = synth.write_world(w, tmp_path)
    grids = {
        name: raster.load_grid(paths[name],
                               "categorical" if name == "dialect" else "continuous")
        for name in ("lights", "elevation", "precipitation", "population",
                     "dist_road", "dialect")
    }
    borders = geometry.load_borders(paths["border_vertices"], paths["border_metadata"])
    fishnet = raster.FishnetSpec(0.01, 0.0, 0.0)
    table = outcomes.build_cell_table(grids, borders, fishnet)
    direct = world_table(w)
    assert len(table) == len(direct)
    assert np.allclose(table.records["lum_sum"], direct.records["lum_sum"])


def test_brute_force_oracle_single_candidate():
    w = generate_world(small_config(delta=1.0, surface=(20.0, 0.1)))
    t = world_table(w)
    spec = RddSpec(outcome="lum_sum")
    h = brute_force_mse_bandwidth(t, spec, w.truth, [7.5])
    assert h == 7.5


def test_brute_force_oracle_noiseless_linear_takes_largest():
    w = generate_world(small_config(delta=1.0, surface=(20.0, 0.1)))
    t = world_table(w)
    spec = RddSpec(outcome="lum_sum")
    grid = [5.0, 10.0, 20.0, 40.0]
    assert brute_force_mse_bandwidth(t, spec, w.truth, grid) == 40.0


def test_brute_force_oracle_reproducible_on_curved_worlds():
    spec = RddSpec(outcome="lum_sum")
    grid = list(np.geomspace(3.0, 50.0, 12))

    def oracle(seed0):
        tables, truth = [], None
        for r in range(12):
            w = generate_world(small_config(
                delta=1.0, surface=(25.0, 0.05, -0.01), noise_sd=1.0,
                lat_max=1.0, seed=seed0 + r))
            tables.append(world_table(w))
            truth = w.truth
        return brute_force_mse_bandwidth(tables, spec, truth, grid)

    h1, h2 = oracle(100), oracle(900)
    i1, i2 = grid.index(h1), grid.index(h2)
    assert abs(i1 - i2) <= 1  # within one grid step across seed batches


def test_monte_carlo_single_rep_coverage_binary():
    cfg = small_config(delta=1.0, surface=(20.0, 0.05), noise_sd=0.5, seed=42)
    res = monte_carlo_coverage(cfg, RddSpec(outcome="lum_sum"), reps=1)
    assert res.coverage_rate in (0.0, 1.0)
    assert res.reps == 1 and res.n_failed == 0


def test_monte_carlo_counts_failures():
    # a world so small that estimation cannot proceed
    cfg = small_config(lon_max=0.06, lat_max=0.03, noise_sd=0.5)
    with pytest.raises(Exception):
        monte_carlo_coverage(cfg, RddSpec(outcome="lum_sum"), reps=2)


def test_sinusoidal_border_world():
    cfg = small_config(border_kind="sinusoidal", amplitude=0.1, period=0.4,
                       delta=2.0, surface=(25.0,), noise_sd=0.0)
    w = generate_world(cfg)
    t = world_table(w)
    df = t.records
    # the jump survives the curved border exactly in the noiseless world
    assert np.allclose(df.loc[df["treated"], "lum_sum"], 27.0)
    assert np.allclose(df.loc[~df["treated"], "lum_sum"], 25.0)
