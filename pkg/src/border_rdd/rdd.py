"""Local-polynomial estimation at the border cutoff.

The estimator regresses the outcome on {1, treated, d, treated*d, ...,
d^p, treated*d^p, covariates, fixed-effect dummies} with triangular kernel
weights at bandwidth h; the treated coefficient is the discontinuity.
Bias correction fits order p+1 at the wider bandwidth b, evaluates the
implied order-(p+1) curvature through the original fit's weights, and
subtracts it; the robust variance is the sandwich over the combined linear
representation of that two-step estimator, so it prices in the noise of the
bias estimate itself.

Bandwidth selection is leave-one-out cross-validation on the boundary-
proximal half of the sample over a 40-point log-spaced candidate grid.
Ties (flat criterion) resolve to the largest candidate. The bias bandwidth
is a fixed multiple of h (default 1.5).

Conventions: rows are processed in canonical (border_id, cell_id) order, so
results do not depend on input row order; observations with zero kernel
weight are excluded before any arithmetic and therefore have exactly zero
influence; the population column enters designs as ln(population); p-values
use the normal reference distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    BandwidthFailureError,
    ConfigError,
    InsufficientObservationsError,
    MulticollinearityError,
)
from .outcomes import CellTable

_RANK_TOL = 1e-10
_CV_TIE_REL = 1e-6
_CV_TIE_ABS = 1e-24
_CV_GRID_SIZE = 40


@dataclass(frozen=True)
class RddSpec:
    """Estimation configuration for one discontinuity regression."""

    outcome: str
    poly_order: int = 1
    kernel: str = "triangular"
    bandwidth_mode: str = "mse_optimal"   # or "manual"
    h: float | None = None
    covariates: tuple[str, ...] = ()
    fixed_effect: str | None = None
    variance: str = "nn"                  # or "cluster"
    nn_neighbors: int = 3
    cluster_col: str = "cluster_id"
    bias_correction: bool = True
    b_ratio: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.poly_order < 1:
            raise ConfigError("poly_order must be >= 1")
        if self.kernel != "triangular":
            raise ConfigError("only the triangular kernel is supported")
        if self.bandwidth_mode not in ("manual", "mse_optimal"):
            raise ConfigError(f"unknown bandwidth_mode: {self.bandwidth_mode!r}")
        if self.bandwidth_mode == "manual" and not (self.h is not None and self.h > 0):
            raise ConfigError("manual bandwidth_mode requires h > 0")
        if self.variance not in ("nn", "cluster"):
            raise ConfigError(f"unknown variance flavor: {self.variance!r}")
        if self.nn_neighbors < 1:
            raise ConfigError("nn_neighbors must be >= 1")
        if self.b_ratio < 1.0:
            raise ConfigError("b_ratio must be >= 1 (bias bandwidth covers h)")


@dataclass(frozen=True)
class RddEstimate:
    beta: float
    se_conventional: float
    se_robust: float
    p_value_robust: float
    h: float
    b: float
    n_left: int
    n_right: int
    n_total: int
    intercept: float
    slopes_left: tuple[float, ...]
    slopes_right: tuple[float, ...]
    beta_conventional: float


def kernel_weight(u: float) -> float:
    """Triangular kernel weight for a scaled distance u = d/h."""
    return max(0.0, 1.0 - abs(u))


def _weights(d: np.ndarray, h: float) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        u = np.abs(d) / h
    u = np.where(np.isnan(u), 0.0, u)  # d == 0 with h == inf
    return np.maximum(0.0, 1.0 - u)


def column_values(records: pd.DataFrame, name: str) -> np.ndarray:
    """Column as floats; population enters regressions on the log scale."""
    if name not in records.columns:
        raise ConfigError(f"column {name!r} not in cell table")
    vals = records[name].to_numpy(dtype=float)
    if name == "population":
        if np.any(vals <= 0):
            raise ConfigError("population must be positive to enter on the log scale")
        vals = np.log(vals)
    return vals


class _Workspace:
    """Canonically ordered arrays plus cached design matrices per order."""

    def __init__(self, table: CellTable, spec: RddSpec):
        df = table.records
        bid = df["border_id"].to_numpy(dtype=str)
        cid = df["cell_id"].to_numpy(dtype=str)
        order = np.lexsort((cid, bid))
        self.df = df.iloc[order].reset_index(drop=True)
        self.spec = spec
        self.n = len(self.df)
        self.d = self.df["distance_km"].to_numpy(dtype=float)
        self.treated = self.df["treated"].to_numpy(dtype=bool)
        self.y = column_values(self.df, spec.outcome)
        self.cell_ids = self.df["cell_id"].to_numpy(dtype=str)
        self.covs = [column_values(self.df, c) for c in spec.covariates]
        if spec.fixed_effect is not None:
            codes, levels = pd.factorize(self.df[spec.fixed_effect], sort=True)
            self.fe_codes, self.fe_nlevels = codes, len(levels)
        else:
            self.fe_codes, self.fe_nlevels = None, 0
        if spec.variance == "cluster":
            self.cluster_codes = pd.factorize(self.df[spec.cluster_col], sort=True)[0]
        else:
            self.cluster_codes = None
        self._designs: dict[int, np.ndarray] = {}

    def design(self, p: int) -> np.ndarray:
        """Full-sample design for polynomial order p (rows subset later)."""
        if p not in self._designs:
            t = self.treated.astype(float)
            cols = [np.ones(self.n), t]
            for k in range(1, p + 1):
                dk = self.d**k
                cols.append(dk)
                cols.append(t * dk)
            cols.extend(self.covs)
            for lev in range(1, self.fe_nlevels):
                cols.append((self.fe_codes == lev).astype(float))
            self._designs[p] = np.column_stack(cols)
        return self._designs[p]


class _Fit:
    """One weighted least-squares fit on the rows with nonzero weight."""

    def __init__(self, X: np.ndarray, y: np.ndarray, w: np.ndarray):
        self.X, self.y, self.w = X, y, w
        sw = np.sqrt(w)
        Xw = X * sw[:, None]
        norms = np.sqrt(np.einsum("ij,ij->j", Xw, Xw))
        self.keep = norms > 0
        self.norms = norms
        Xs = Xw[:, self.keep] / norms[self.keep]
        self.Q, self.R = np.linalg.qr(Xs)
        sv = np.linalg.svd(self.R, compute_uv=False)
        if sv.size == 0 or sv[-1] < _RANK_TOL * sv[0]:
            raise MulticollinearityError(
                f"design rank-deficient (singular value ratio {sv[-1] / sv[0]:.2e})"
                if sv.size else "design has no usable columns"
            )
        gamma = np.linalg.solve(self.R, self.Q.T @ (y * sw))
        coef = np.zeros(X.shape[1])
        coef[self.keep] = gamma / norms[self.keep]
        self.coef = coef
        self.hat = np.einsum("ij,ij->i", self.Q, self.Q)
        self.fitted = X @ coef
        self.resid = y - self.fitted

    def influence_solve(self, j: int) -> np.ndarray:
        """a = (X'WX)^{-1} e_j in the original column space (0 if j dropped)."""
        k = self.X.shape[1]
        a = np.zeros(k)
        if not self.keep[j]:
            return a
        pos = int(np.sum(self.keep[:j]))
        e = np.zeros(int(self.keep.sum()))
        e[pos] = 1.0 / self.norms[j]
        z = np.linalg.solve(self.R.T, e)
        u = np.linalg.solve(self.R, z)
        a[self.keep] = u / self.norms[self.keep]
        return a

    def influence_weights(self, j: int) -> np.ndarray:
        """Row weights l with coef_j = l . y (zero for dropped columns)."""
        a = self.influence_solve(j)
        return self.w * (self.X @ a)


def _nn_mean_exact(ds: np.ndarray, ys: np.ndarray, rs: np.ndarray, pos: int, j: int) -> float:
    """Mean of the j nearest neighbours of sorted position ``pos``; ties by rank."""
    m = ds.size
    cands: list[tuple[float, int, int]] = []
    lo, hi = pos - 1, pos + 1
    while len(cands) < j:
        gl = ds[pos] - ds[lo] if lo >= 0 else math.inf
        gr = ds[hi] - ds[pos] if hi < m else math.inf
        if gl <= gr:
            cands.append((gl, rs[lo], lo))
            lo -= 1
        else:
            cands.append((gr, rs[hi], hi))
            hi += 1
    kth = max(c[0] for c in cands)
    while lo >= 0 and ds[pos] - ds[lo] == kth:
        cands.append((kth, rs[lo], lo))
        lo -= 1
    while hi < m and ds[hi] - ds[pos] == kth:
        cands.append((kth, rs[hi], hi))
        hi += 1
    cands.sort()
    return sum(ys[c[2]] for c in cands[:j]) / j


def nn_variance(
    d: np.ndarray,
    y: np.ndarray,
    treated: np.ndarray,
    tie_keys: Sequence | None = None,
    j: int = 3,
) -> np.ndarray:
    """Per-observation variance from same-side nearest neighbours.

    sigma2_i = j/(j+1) * (y_i - mean of the j nearest same-side neighbours
    by |d_i - d_k|)^2; equidistant candidates resolve by ascending tie key
    (cell id order).
    """
    d = np.asarray(d, dtype=float)
    y = np.asarray(y, dtype=float)
    treated = np.asarray(treated, dtype=bool)
    n = d.size
    if tie_keys is None:
        rank = np.arange(n)
    else:
        rank = np.lexsort((np.arange(n), np.asarray(tie_keys)))
        rank = np.argsort(rank, kind="stable")
    sigma2 = np.empty(n)
    big_rank = np.int64(2**62)
    for side in (False, True):
        idx = np.flatnonzero(treated == side)
        if idx.size <= j:
            raise InsufficientObservationsError(
                f"{'treated' if side else 'control'} side has {idx.size} observations, "
                f"need more than {j} for nearest-neighbour variances"
            )
        order = idx[np.lexsort((rank[idx], d[idx]))]
        ds, ys, rs = d[order], y[order], rank[order].astype(np.int64)
        m = order.size
        # The j nearest neighbours of a sorted position lie within +-j
        # positions unless equidistant candidates straddle that window; rows
        # where the out-of-window frontier ties the kth selected gap fall
        # back to the exact scan.
        offs = np.concatenate([np.arange(-j, 0), np.arange(1, j + 1)])
        pos = np.arange(m)[:, None] + offs[None, :]
        valid = (pos >= 0) & (pos < m)
        posc = np.clip(pos, 0, m - 1)
        gaps = np.where(valid, np.abs(ds[posc] - ds[:, None]), np.inf)
        cand_rank = np.where(valid, rs[posc], big_rank)
        by_rank = np.argsort(cand_rank, axis=1, kind="stable")
        gaps_r = np.take_along_axis(gaps, by_rank, axis=1)
        by_gap = np.argsort(gaps_r, axis=1, kind="stable")
        sel = np.take_along_axis(by_rank, by_gap, axis=1)[:, :j]
        kth = np.take_along_axis(gaps, sel, axis=1)[:, -1]
        lo_edge = np.arange(m) - (j + 1)
        hi_edge = np.arange(m) + (j + 1)
        gl = np.where(lo_edge >= 0, ds - ds[np.clip(lo_edge, 0, m - 1)], np.inf)
        gr = np.where(hi_edge < m, ds[np.clip(hi_edge, 0, m - 1)] - ds, np.inf)
        means = ys[np.take_along_axis(posc, sel, axis=1)].mean(axis=1)
        for p in np.flatnonzero(np.minimum(gl, gr) <= kth):
            means[p] = _nn_mean_exact(ds, ys, rs, int(p), j)
        sigma2[order] = (ys - means) ** 2
    return sigma2 * (j / (j + 1.0))


class _FitContext:
    """A fit at one bandwidth plus everything inference needs."""

    def __init__(self, ws: _Workspace, p: int, h: float):
        self.ws, self.p, self.h = ws, p, h
        w_full = _weights(ws.d, h)
        self.rows = np.flatnonzero(w_full > 0)
        t = ws.treated[self.rows]
        self.n_left = int(np.sum(~t))
        self.n_right = int(np.sum(t))
        if self.n_left < p + 2 or self.n_right < p + 2:
            raise InsufficientObservationsError(
                f"need at least {p + 2} weighted observations per side at h={h:g}, "
                f"have left={self.n_left}, right={self.n_right}"
            )
        X = ws.design(p)[self.rows]
        self.fit = _Fit(X, ws.y[self.rows], w_full[self.rows])
        if not self.fit.keep[1]:
            raise MulticollinearityError("treatment column dropped from design")

    def sigma2_nn(self) -> np.ndarray:
        ws = self.ws
        return nn_variance(
            ws.d[self.rows], ws.y[self.rows], ws.treated[self.rows],
            tie_keys=ws.cell_ids[self.rows], j=ws.spec.nn_neighbors,
        )

    def sandwich_se(self, omega: np.ndarray, resid: np.ndarray,
                    sigma2: np.ndarray | None) -> float:
        ws = self.ws
        if ws.spec.variance == "cluster":
            contrib = omega * resid
            total = np.bincount(ws.cluster_codes[self.rows], weights=contrib)
            return float(np.sqrt(np.sum(total**2)))
        return float(np.sqrt(np.sum(omega**2 * sigma2)))


def _conventional(ws: _Workspace, p: int, h: float) -> tuple[_FitContext, float, np.ndarray]:
    ctx = _FitContext(ws, p, h)
    l_beta = ctx.fit.influence_weights(1)
    sigma2 = ctx.sigma2_nn() if ws.spec.variance == "nn" else None
    se = ctx.sandwich_se(l_beta, ctx.fit.resid, sigma2)
    return ctx, se, l_beta


def _slopes(coef: np.ndarray, p: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    left = tuple(float(coef[2 + 2 * (k - 1)]) for k in range(1, p + 1))
    right = tuple(
        float(coef[2 + 2 * (k - 1)] + coef[3 + 2 * (k - 1)]) for k in range(1, p + 1)
    )
    return left, right


def local_poly_fit(table: CellTable, spec: RddSpec, h: float) -> RddEstimate:
    """Conventional kernel-weighted fit at bandwidth h (no bias correction)."""
    if not h > 0:
        raise ConfigError("h must be positive")
    ws = _Workspace(table, spec)
    ctx, se, _ = _conventional(ws, spec.poly_order, h)
    left, right = _slopes(ctx.fit.coef, spec.poly_order)
    return RddEstimate(
        beta=float(ctx.fit.coef[1]),
        se_conventional=se,
        se_robust=math.nan,
        p_value_robust=math.nan,
        h=h,
        b=math.nan,
        n_left=ctx.n_left,
        n_right=ctx.n_right,
        n_total=ws.n,
        intercept=float(ctx.fit.coef[0]),
        slopes_left=left,
        slopes_right=right,
        beta_conventional=float(ctx.fit.coef[1]),
    )


def _median_cell_width_km(ws: _Workspace) -> float:
    if "log_area" in ws.df.columns and ws.df["log_area"].notna().all():
        width = float(np.median(np.exp(ws.df["log_area"].to_numpy(dtype=float) / 2.0)))
        if math.isfinite(width) and width > 0:
            return width
    gaps = np.diff(np.sort(np.abs(ws.d)))
    gaps = gaps[gaps > 0]
    return float(np.median(gaps)) if gaps.size else 0.0


def _candidate_grid(ws: _Workspace) -> np.ndarray:
    hi = float(np.max(np.abs(ws.d)))
    lo = 2.0 * _median_cell_width_km(ws)
    if not (0 < lo < hi):
        lo = hi / _CV_GRID_SIZE
    return np.geomspace(lo, hi, _CV_GRID_SIZE)


def select_bandwidth(table: CellTable, spec: RddSpec) -> tuple[float, float]:
    """Leave-one-out CV bandwidth on the boundary-proximal half of the data.

    Returns (h, b) with b = b_ratio * h. The LOO prediction error uses the
    exact hat-diagonal identity for weighted least squares; proximal rows
    outside a candidate window are predicted by polynomial extension (their
    leverage is zero). A flat criterion resolves to the largest candidate.
    """
    ws = _Workspace(table, spec)
    n_left = int(np.sum(~ws.treated))
    n_right = int(np.sum(ws.treated))
    if n_left < 20 or n_right < 20:
        raise InsufficientObservationsError(
            f"bandwidth selection needs >= 20 observations per side, "
            f"have left={n_left}, right={n_right}"
        )
    h = _cv_select(ws)
    return h, spec.b_ratio * h


def _residual_outcome(ws: _Workspace) -> np.ndarray:
    """Outcome net of the covariate and fixed-effect components of a global
    (unweighted) fit; the discontinuity structure itself stays in."""
    p = ws.spec.poly_order
    n_base = 2 + 2 * p
    X = ws.design(p)
    if X.shape[1] == n_base:
        return ws.y
    fit = _Fit(X, ws.y, np.ones(ws.n))
    return ws.y - X[:, n_base:] @ fit.coef[n_base:]


class _SideCV:
    """One-sided local prediction machinery for one side of the cutoff.

    For an observation at distance c, the predictor is a kernel-weighted
    polynomial fit on same-side observations strictly between c and the
    window edge toward the interior, mimicking estimation at a boundary.
    The triangular weight is linear in d, so every window sum reduces to
    differences of prefix sums of d^r and d^r * y.
    """

    def __init__(self, d: np.ndarray, y: np.ndarray, p: int, window_below: bool):
        order = np.argsort(d, kind="stable")
        self.d = d[order]
        self.y = y[order]
        self.p = p
        self.window_below = window_below  # True when the window lies below c
        r_max = 2 * p + 2
        powers = np.vander(self.d, r_max + 1, increasing=True)
        self.P = np.concatenate([np.zeros((1, r_max + 1)),
                                 np.cumsum(powers, axis=0)])
        self.Q = np.concatenate([np.zeros((1, r_max + 1)),
                                 np.cumsum(powers * self.y[:, None], axis=0)])
        self.binom = [[math.comb(m, r) for r in range(m + 1)] for m in range(2 * p + 1)]

    def sq_errors(self, c: np.ndarray, yc: np.ndarray, h: float) -> np.ndarray | None:
        """Squared one-sided LOO prediction errors at points c, or None if
        any window holds fewer than p+2 observations."""
        p = self.p
        if self.window_below:
            lo = np.searchsorted(self.d, c - h, side="right")
            hi = np.searchsorted(self.d, c, side="left")
            a_w, b_w = 1.0 - c / h, np.full(c.size, 1.0 / h)
        else:
            lo = np.searchsorted(self.d, c, side="right")
            hi = np.searchsorted(self.d, c + h, side="left")
            a_w, b_w = 1.0 + c / h, np.full(c.size, -1.0 / h)
        if np.any(hi - lo < p + 2):
            return None
        raw_p = self.P[hi] - self.P[lo]
        raw_q = self.Q[hi] - self.Q[lo]
        # Weighted raw moments, then center at c via the binomial expansion.
        w_p = a_w[:, None] * raw_p[:, :-1] + b_w[:, None] * raw_p[:, 1:]
        w_q = a_w[:, None] * raw_q[:, :-1] + b_w[:, None] * raw_q[:, 1:]
        neg_c = -c
        cent_p = np.empty((c.size, 2 * p + 1))
        cent_q = np.empty((c.size, p + 1))
        for m in range(2 * p + 1):
            acc = np.zeros(c.size)
            for r in range(m + 1):
                acc += self.binom[m][r] * neg_c ** (m - r) * w_p[:, r]
            cent_p[:, m] = acc
            if m <= p:
                acc_q = np.zeros(c.size)
                for r in range(m + 1):
                    acc_q += self.binom[m][r] * neg_c ** (m - r) * w_q[:, r]
                cent_q[:, m] = acc_q
        k = p + 1
        gram = np.empty((c.size, k, k))
        for a in range(k):
            for b in range(k):
                gram[:, a, b] = cent_p[:, a + b]
        try:
            coef = np.linalg.solve(gram, cent_q[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            return None
        return (yc - coef[:, 0]) ** 2


def _cv_select(ws: _Workspace) -> float:
    p = ws.spec.poly_order
    y_adj = _residual_outcome(ws)
    d_abs = np.abs(ws.d)
    prox = d_abs <= np.median(d_abs)
    sides = []
    for treated in (False, True):
        mask = ws.treated == treated
        cv = _SideCV(ws.d[mask], y_adj[mask], p, window_below=not treated)
        pm = prox[mask]
        sides.append((cv, ws.d[mask][pm], y_adj[mask][pm]))
    candidates = _candidate_grid(ws)
    crit = np.full(candidates.size, np.inf)
    for ci, hc in enumerate(candidates):
        total, count = 0.0, 0
        ok = True
        for cv, c, yc in sides:
            errs = cv.sq_errors(c, yc, float(hc))
            if errs is None:
                ok = False
                break
            total += float(np.sum(errs))
            count += errs.size
        if ok and count:
            crit[ci] = total / count
    best = np.min(crit)
    if not math.isfinite(best):
        raise BandwidthFailureError("no candidate bandwidth gave a finite CV criterion")
    # Numerically-zero criteria (noiseless, exactly representable truths) must
    # tie, so the floor scales with the outcome's magnitude.
    floor = _CV_TIE_ABS + 1e-14 * float(np.mean(y_adj**2))
    tie = crit <= best * (1.0 + _CV_TIE_REL) + floor
    return float(candidates[np.flatnonzero(tie)[-1]])


def bias_corrected_estimate(table: CellTable, spec: RddSpec) -> RddEstimate:
    """Full inference: bandwidths, point estimate, conventional and robust
    standard errors, and the robust p-value."""
    ws = _Workspace(table, spec)
    if spec.bandwidth_mode == "manual":
        h = float(spec.h)
    else:
        n_left = int(np.sum(~ws.treated))
        n_right = int(np.sum(ws.treated))
        if n_left < 20 or n_right < 20:
            raise InsufficientObservationsError(
                f"bandwidth selection needs >= 20 observations per side, "
                f"have left={n_left}, right={n_right}"
            )
        h = _cv_select(ws)
    b = spec.b_ratio * h

    p = spec.poly_order
    ctx_h, se_conv, l_beta = _conventional(ws, p, h)
    beta_h = float(ctx_h.fit.coef[1])

    if not spec.bias_correction:
        sigma2 = None if ws.spec.variance == "cluster" else ctx_h.sigma2_nn()
        se_rob = ctx_h.sandwich_se(l_beta, ctx_h.fit.resid, sigma2)
        beta_bc = beta_h
    else:
        q = p + 1
        ctx_b = _FitContext(ws, q, b)
        base_col, int_col = 2 * q, 2 * q + 1
        c_base = float(ctx_b.fit.coef[base_col])
        c_int = float(ctx_b.fit.coef[int_col])
        dq = ws.d[ctx_h.rows] ** q
        t_h = ws.treated[ctx_h.rows].astype(float)
        s_base = float(np.sum(l_beta * dq))
        s_int = float(np.sum(l_beta * t_h * dq))
        bias = c_base * s_base + c_int * s_int
        beta_bc = beta_h - bias

        v = s_base * ctx_b.fit.influence_solve(base_col) \
            + s_int * ctx_b.fit.influence_solve(int_col)
        mu = ctx_b.fit.w * (ctx_b.fit.X @ v)
        omega = -mu
        pos_in_b = np.searchsorted(ctx_b.rows, ctx_h.rows)
        omega[pos_in_b] += l_beta
        sigma2 = None if ws.spec.variance == "cluster" else ctx_b.sigma2_nn()
        se_rob = ctx_b.sandwich_se(omega, ctx_b.fit.resid, sigma2)

    if se_rob > 0:
        p_rob = math.erfc(abs(beta_bc / se_rob) / math.sqrt(2.0))
    else:
        p_rob = math.nan if beta_bc == 0 else 0.0
    left, right = _slopes(ctx_h.fit.coef, p)
    return RddEstimate(
        beta=beta_bc,
        se_conventional=se_conv,
        se_robust=se_rob,
        p_value_robust=p_rob,
        h=h,
        b=b,
        n_left=ctx_h.n_left,
        n_right=ctx_h.n_right,
        n_total=ws.n,
        intercept=float(ctx_h.fit.coef[0]),
        slopes_left=left,
        slopes_right=right,
        beta_conventional=beta_h,
    )


@dataclass(frozen=True)
class RdPlotData:
    bins: pd.DataFrame   # side, bin, d_lo, d_hi, d_mid, count, mean
    fits: pd.DataFrame   # side, order, power, coefficient


def rd_plot_data(
    table: CellTable,
    outcome: str,
    orders: Sequence[int] = (1, 2, 3, 4),
    bins_per_side: int = 20,
    max_km: float = 50.0,
) -> RdPlotData:
    """Evenly spaced binned means over [-max_km, 0) and (0, max_km] plus
    per-side global polynomial fits for each requested order."""
    for o in orders:
        if o not in (1, 2, 3, 4):
            raise ConfigError(f"plot polynomial order must be in 1..4, got {o}")
    if bins_per_side < 1:
        raise ConfigError("bins_per_side must be >= 1")
    df = table.records
    d = df["distance_km"].to_numpy(dtype=float)
    y = column_values(df, outcome)
    width = max_km / bins_per_side
    rows = []
    for side, mask in (("left", d < 0), ("right", d > 0)):
        ds, ys = d[mask], y[mask]
        if side == "left":
            idx = np.clip(np.floor((ds + max_km) / width), 0, bins_per_side - 1).astype(int)
            lo = -max_km + np.arange(bins_per_side) * width
        else:
            idx = np.clip(np.ceil(ds / width) - 1, 0, bins_per_side - 1).astype(int)
            lo = np.arange(bins_per_side) * width
        count = np.bincount(idx, minlength=bins_per_side)
        total = np.bincount(idx, weights=ys, minlength=bins_per_side)
        with np.errstate(invalid="ignore"):
            mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
        for k in range(bins_per_side):
            rows.append((side, k, lo[k], lo[k] + width, lo[k] + width / 2.0,
                         int(count[k]), float(mean[k])))
    bins = pd.DataFrame(rows, columns=["side", "bin", "d_lo", "d_hi", "d_mid", "count", "mean"])

    fit_rows = []
    for side, mask in (("left", d < 0), ("right", d > 0)):
        ds, ys = d[mask], y[mask]
        for order in orders:
            if ds.size >= order + 1:
                V = np.vander(ds, order + 1, increasing=True)
                coef, *_ = np.linalg.lstsq(V, ys, rcond=None)
            else:
                coef = np.full(order + 1, np.nan)
            for power in range(order + 1):
                fit_rows.append((side, order, power, float(coef[power])))
    fits = pd.DataFrame(fit_rows, columns=["side", "order", "power", "coefficient"])
    return RdPlotData(bins, fits)
