"""Spatial regression-discontinuity analysis of gridded outcomes at borders."""

from .errors import (
    BandwidthFailureError,
    BorderRddError,
    ConfigError,
    EmptySampleError,
    GeoreferenceError,
    GridParseError,
    GridStructureError,
    InsufficientObservationsError,
    MissingRegionError,
    MulticollinearityError,
    ReducerError,
)
from .geometry import (
    BorderPolyline,
    CellAssignment,
    assign_cells,
    categorize_cell,
    haversine_km,
    load_borders,
    orient_border,
    signed_distance,
)
from .outcomes import (
    BuildOptions,
    CellTable,
    build_cell_table,
    dialect_frequency,
    lit_indicator,
    luminosity_transform,
)
from .raster import (
    FishnetSpec,
    RasterGrid,
    aggregate_to_cells,
    load_grid,
    multi_year_mean,
    write_grid,
)
from .rdd import (
    RddEstimate,
    RddSpec,
    bias_corrected_estimate,
    kernel_weight,
    local_poly_fit,
    nn_variance,
    rd_plot_data,
    select_bandwidth,
)
from .studies import (
    balance_battery,
    dyad_differences,
    per_border_battery,
    percent_private_analysis,
    pooled_dialect_fe,
    rank_gap_filter,
    rank_gdp_regression,
)
from .synth import (
    MonteCarloResult,
    SyntheticWorldConfig,
    World,
    WorldTruth,
    brute_force_mse_bandwidth,
    generate_world,
    monte_carlo_coverage,
    world_table,
    write_world,
)

__version__ = "0.1.0"
