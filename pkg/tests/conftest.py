import numpy as np
import pandas as pd
import pytest

from border_rdd.outcomes import COLUMNS, CellTable


def make_table(d, y, outcome="luminosity", dialect=None, cluster=None,
               border_id=None, cell_ids=None, population=None):
    """Minimal analysis table from arrays; unrelated columns get benign fill."""
    d = np.asarray(d, dtype=float)
    n = d.size
    y = np.asarray(y, dtype=float)
    df = pd.DataFrame({
        "cell_id": cell_ids if cell_ids is not None else [f"c{i:06d}" for i in range(n)],
        "border_id": border_id if border_id is not None else "B1",
        "lon": d / 111.0,
        "lat": 0.0,
        "distance_km": d,
        "treated": d > 0,
        "lum_sum": 1.0,
        "luminosity": 0.0,
        "lit": 1,
        "lum_pp": 0.0,
        "population": population if population is not None else 10.0,
        "elevation": 100.0,
        "precipitation": 800.0,
        "dist_road": 5.0,
        "log_area": 2.0 * np.log(1.11),
        "dialect": dialect if dialect is not None else 1,
        "cluster_id": cluster if cluster is not None else "B1:s0",
    })
    df[outcome] = y
    return CellTable(df[COLUMNS], {})


def wls_normal_equations(X, y, w):
    """Independent weighted least squares via the plain normal equations."""
    Xw = X * w[:, None]
    return np.linalg.solve(X.T @ Xw, Xw.T @ y)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
