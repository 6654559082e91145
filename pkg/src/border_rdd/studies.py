"""Study batteries: balance tests, pooled fixed-effect estimates, per-border
batteries, rank-gap filtering, city dyads, percent-private, and the
rank-GDP regression.

Battery outputs always carry a status column; rows that fail with too few
observations or a rank-deficient design are recorded ("insufficient_obs",
"multicollinearity") and the battery keeps going.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from . import geometry, rdd
from .errors import (
    BandwidthFailureError,
    ConfigError,
    EmptySampleError,
    InsufficientObservationsError,
    MulticollinearityError,
)
from .outcomes import CellTable

RESULT_COLUMNS = [
    "outcome", "border_id", "p", "beta", "se_conventional", "se_robust",
    "p_value_robust", "h", "b", "n_left", "n_right", "n_total", "status",
]

TABLE6_COLUMNS = [
    "outcome", "p", "coefficient", "se", "n",
    "eff_obs_left", "eff_obs_right", "h", "b", "kernel",
]

DEFAULT_COVARIATES = ("elevation", "precipitation", "population", "dist_road", "log_area")

POOLED_OUTCOMES = ("luminosity", "lum_pp", "lit")

_STATUS_ERRORS = (
    InsufficientObservationsError,
    MulticollinearityError,
    BandwidthFailureError,
    EmptySampleError,
)


def _subtable(table: CellTable, border_id: str) -> CellTable:
    df = table.records[table.records["border_id"] == border_id]
    return CellTable(df.reset_index(drop=True), {"border_id": border_id})


def _run(table: CellTable, spec: rdd.RddSpec, border_id: str) -> dict:
    row = {
        "outcome": spec.outcome, "border_id": border_id, "p": spec.poly_order,
        "beta": math.nan, "se_conventional": math.nan, "se_robust": math.nan,
        "p_value_robust": math.nan, "h": math.nan, "b": math.nan,
        "n_left": None, "n_right": None, "n_total": len(table), "status": "ok",
    }
    try:
        est = rdd.bias_corrected_estimate(table, spec)
    except _STATUS_ERRORS as err:
        if isinstance(err, EmptySampleError):
            row["status"] = "insufficient_obs"
        else:
            row["status"] = err.status
        return row
    row.update(
        beta=est.beta, se_conventional=est.se_conventional, se_robust=est.se_robust,
        p_value_robust=est.p_value_robust, h=est.h, b=est.b,
        n_left=est.n_left, n_right=est.n_right, n_total=est.n_total,
    )
    return row


def balance_battery(
    table: CellTable,
    covariates: Sequence[str],
    base_spec: rdd.RddSpec | None = None,
) -> pd.DataFrame:
    """Each covariate as outcome, per border, linear and quadratic polynomials,
    no covariate adjustment."""
    base = base_spec or rdd.RddSpec(outcome="luminosity")
    borders = sorted(table.records["border_id"].unique())
    rows = []
    for cov in covariates:
        for p in (1, 2):
            for bid in borders:
                spec = replace(base, outcome=cov, poly_order=p,
                               covariates=(), fixed_effect=None)
                rows.append(_run(_subtable(table, bid), spec, bid))
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def pooled_dialect_fe(
    table: CellTable,
    base_spec: rdd.RddSpec | None = None,
    include_covariates: bool = False,
    covariates: Sequence[str] = DEFAULT_COVARIATES,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Six pooled estimates, outcomes x {linear, quadratic}, with dialect
    dummies. Returns (full results schema, compact layout with one row per
    column of the published table)."""
    base = base_spec or rdd.RddSpec(outcome="luminosity")
    covs = tuple(covariates) if include_covariates else ()
    rows = []
    for outcome in POOLED_OUTCOMES:
        for p in (1, 2):
            spec = replace(base, outcome=outcome, poly_order=p,
                           covariates=covs, fixed_effect="dialect")
            rows.append(_run(table, spec, "pooled"))
    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    layout = pd.DataFrame({
        "outcome": results["outcome"],
        "p": results["p"],
        "coefficient": results["beta"],
        "se": results["se_robust"],
        "n": results["n_total"],
        "eff_obs_left": results["n_left"],
        "eff_obs_right": results["n_right"],
        "h": results["h"],
        "b": results["b"],
        "kernel": "Triangular",
    })
    return results, layout


@dataclass(frozen=True)
class GapStats:
    mean: float
    sd: float
    n: int


def rank_gap_filter(
    borders: Sequence[geometry.BorderPolyline], threshold: int = 7
) -> tuple[list[geometry.BorderPolyline], GapStats]:
    """Borders whose institutional rank gap meets the threshold, plus the
    mean/sd of gaps over all pairs (sample sd)."""
    if threshold < 1:
        raise ConfigError("threshold must be >= 1")
    gaps = np.array([b.rank_high - b.rank_low for b in borders], dtype=float)
    subset = [b for b in borders if b.rank_high - b.rank_low >= threshold]
    sd = float(gaps.std(ddof=1)) if gaps.size > 1 else math.nan
    return subset, GapStats(float(gaps.mean()), sd, len(borders))


def per_border_battery(
    tables: CellTable | Mapping[str, CellTable],
    base_spec: rdd.RddSpec | None = None,
    covariates: Sequence[str] = DEFAULT_COVARIATES,
    outcomes: Sequence[str] = ("luminosity", "lit"),
) -> pd.DataFrame:
    """Covariate-adjusted estimates per border for each outcome and
    polynomial order; failures become status rows."""
    base = base_spec or rdd.RddSpec(outcome="luminosity")
    if isinstance(tables, CellTable):
        tables = {bid: _subtable(tables, bid)
                  for bid in sorted(tables.records["border_id"].unique())}
    rows = []
    for outcome in outcomes:
        for p in (1, 2):
            for bid in sorted(tables):
                spec = replace(base, outcome=outcome, poly_order=p,
                               covariates=tuple(covariates), fixed_effect=None)
                rows.append(_run(tables[bid], spec, bid))
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def _ols_line(x: np.ndarray, y: np.ndarray) -> dict:
    """Simple regression with an intercept; HC1 robust slope inference."""
    n = x.size
    xbar, ybar = x.mean(), y.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    if sxx == 0:
        raise ConfigError("regressor has no variation")
    slope = float(np.sum((x - xbar) * (y - ybar)) / sxx)
    intercept = float(ybar - slope * xbar)
    resid = y - intercept - slope * x
    sst = float(np.sum((y - ybar) ** 2))
    ssr = float(np.sum(resid**2))
    r2 = 1.0 - ssr / sst if sst > 0 else math.nan
    if n > 2:
        se = math.sqrt(n / (n - 2) * float(np.sum((x - xbar) ** 2 * resid**2)) / sxx**2)
    else:
        se = math.nan
    if se and se > 0:
        p = math.erfc(abs(slope / se) / math.sqrt(2.0))
    else:
        p = math.nan if slope == 0 else 0.0
    return {"slope": slope, "intercept": intercept, "se": se, "p_value": p, "r2": r2, "n": n}


def dyad_differences(
    cities: pd.DataFrame,
    adjacency: Iterable[tuple[str, str]],
    limit_km: float = 150.0,
    measure_cols: Sequence[str] = ("m1", "m2", "m3", "m4", "m5"),
) -> tuple[pd.DataFrame, dict]:
    """Mean absolute difference in city measures over nearest-neighbour pairs,
    within versus across provinces.

    Each city contributes its nearest same-province city and its nearest city
    in a bordering province, both within limit_km; unordered pairs are
    deduplicated. Equidistant partners resolve to the smallest city id.
    """
    for col in ("city_id", "province", "lon", "lat", *measure_cols):
        if col not in cities.columns:
            raise ConfigError(f"cities table missing column {col!r}")
    if len(cities) < 2:
        raise ConfigError("need at least two cities")
    adj = {frozenset(p) for p in adjacency}
    df = cities.reset_index(drop=True)
    ids = df["city_id"].astype(str).to_numpy()
    prov = df["province"].astype(str).to_numpy()
    lon = df["lon"].to_numpy(dtype=float)
    lat = df["lat"].to_numpy(dtype=float)
    n = len(df)
    dist = geometry.haversine_km(lon[:, None], lat[:, None], lon[None, :], lat[None, :])

    pairs = {"within": set(), "across": set()}
    no_neighbor = {"within": [], "across": []}
    for i in range(n):
        cand = {"within": [], "across": []}
        for k in range(n):
            if k == i or dist[i, k] > limit_km:
                continue
            if prov[k] == prov[i]:
                cand["within"].append(k)
            elif frozenset((prov[i], prov[k])) in adj:
                cand["across"].append(k)
        for kind in ("within", "across"):
            if cand[kind]:
                best = min(cand[kind], key=lambda k: (dist[i, k], ids[k]))
                pairs[kind].add(frozenset((i, best)))
            else:
                no_neighbor[kind].append(ids[i])

    pair_lists = {kind: sorted(tuple(sorted((ids[a], ids[b]))) for a, b in pairs[kind])
                  for kind in ("within", "across")}
    index_pairs = {kind: sorted(tuple(sorted(p)) for p in pairs[kind])
                   for kind in ("within", "across")}
    rows = []
    for m in measure_cols:
        vals = df[m].to_numpy(dtype=float)
        out = {"measure": m}
        for kind in ("within", "across"):
            diffs = [abs(vals[a] - vals[b]) for a, b in index_pairs[kind]]
            out[f"{kind}_mean_absdiff"] = float(np.mean(diffs)) if diffs else math.nan
            out[f"n_{kind}"] = len(diffs)
        rows.append(out)
    summary = pd.DataFrame(rows, columns=[
        "measure", "within_mean_absdiff", "n_within", "across_mean_absdiff", "n_across",
    ])
    return summary, {"no_within_neighbor": no_neighbor["within"],
                     "no_across_neighbor": no_neighbor["across"],
                     "pairs_within": pair_lists["within"],
                     "pairs_across": pair_lists["across"]}


def percent_private_analysis(
    prefectures: pd.DataFrame,
    borders: Sequence[geometry.BorderPolyline],
) -> tuple[pd.DataFrame, dict, dict]:
    """Per-border gap in the private-employment share (treated side average
    minus control side average, autonomous prefectures excluded), regressed
    on the institutional rank gap."""
    needed = ("prefecture_id", "province", "border_adjacency",
              "employed_private", "employed_total", "autonomous")
    for col in needed:
        if col not in prefectures.columns:
            raise ConfigError(f"prefectures table missing column {col!r}")
    df = prefectures.copy()
    if (df["employed_total"] <= 0).any():
        raise ConfigError("employed_total must be positive")
    df["pct_private"] = df["employed_private"] / df["employed_total"]
    df["adj_set"] = df["border_adjacency"].astype(str).map(
        lambda s: {b for b in s.split(";") if b}
    )
    active = df[df["autonomous"].astype(int) == 0]

    rows, dropped = [], []
    for border in sorted(borders, key=lambda b: b.border_id):
        on_border = active[active["adj_set"].map(lambda s: border.border_id in s)]
        high = on_border[on_border["province"].astype(str) == border.prov_high]
        low = on_border[on_border["province"].astype(str) == border.prov_low]
        if high.empty or low.empty:
            dropped.append(border.border_id)
            continue
        ph = float(high["pct_private"].mean())
        pl = float(low["pct_private"].mean())
        rows.append({
            "border_id": border.border_id,
            "pct_private_high": ph,
            "pct_private_low": pl,
            "rank_diff": border.rank_high - border.rank_low,
            "diff": ph - pl,
        })
    if len(rows) < 3:
        raise InsufficientObservationsError(
            f"need at least 3 usable borders, have {len(rows)}"
        )
    per_border = pd.DataFrame(rows)
    fit = _ols_line(per_border["rank_diff"].to_numpy(dtype=float),
                    per_border["diff"].to_numpy(dtype=float))
    return per_border, fit, {"dropped_borders": dropped}


def rank_gdp_regression(provinces: pd.DataFrame) -> dict:
    """OLS of per-capita GDP on the institutional rank; reports slope and r2."""
    for col in ("rank", "gdp_pc"):
        if col not in provinces.columns:
            raise ConfigError(f"provinces table missing column {col!r}")
    if len(provinces) < 3:
        raise InsufficientObservationsError("need at least 3 provinces")
    return _ols_line(provinces["rank"].to_numpy(dtype=float),
                     provinces["gdp_pc"].to_numpy(dtype=float))
