"""Exception types shared across the pipeline."""


class BorderRddError(Exception):
    """Base class for all pipeline errors."""


class GridParseError(BorderRddError):
    """Malformed grid file header or body; message names the offending line."""


class GridStructureError(BorderRddError):
    """Grid body inconsistent with its header (e.g. wrong value count)."""


class GeoreferenceError(BorderRddError):
    """Grids that must share georeferencing do not."""


class ReducerError(BorderRddError):
    """Reducer incompatible with the grid kind (e.g. mode on a continuous grid)."""


class MissingRegionError(BorderRddError):
    """Cell absent from a categorical region map."""


class ConfigError(BorderRddError):
    """Invalid or incomplete run configuration; message names the key."""


class EmptySampleError(BorderRddError):
    """No records survive the configured filters."""


class InsufficientObservationsError(BorderRddError):
    """Too few observations on one side of the cutoff for the requested fit."""

    status = "insufficient_obs"


class MulticollinearityError(BorderRddError):
    """Rank-deficient design matrix after dropping empty columns."""

    status = "multicollinearity"


class BandwidthFailureError(BorderRddError):
    """No candidate bandwidth produced a finite selection criterion."""

    status = "bandwidth_failure"
