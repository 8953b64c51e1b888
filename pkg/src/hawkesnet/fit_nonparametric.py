"""EM estimation of the nonparametric model: histogram kernels, adaptive background.

The triggering kernels are piecewise constant on uniform bins over
[0, t_max] and [0, r_max]; the background is a Gaussian mixture centered at
the events with per-event adaptive bandwidths d_i (distance to the n_p-th
nearest other event, floored at eps_r). Each iteration recomputes the
background weights, the per-node rates gamma, the triggering matrix K and
both histograms from the current responsibilities, then redistributes
responsibilities and renormalizes every column. Iteration stops when no
responsibility entry moves by more than eps.

Pairs with dt > t_max or r > r_max carry zero responsibility, which bounds
the stored pair set and makes the fitted histograms proper densities over
their supports.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    TWO_PI,
    BackgroundField,
    BinnedKernel,
    DegenerateModelError,
    NonparamModel,
    ResponsibilityMatrix,
    TriggeringMatrix,
)
from .fit_parametric import FitTrace, _trigger_pairs, mean_same_node_gap

W_CACHE_LIMIT_BYTES = 400 * 1024 * 1024


@dataclass
class NonparamFit:
    model: NonparamModel
    responsibilities: ResponsibilityMatrix
    trace: FitTrace
    settings: dict

    def __iter__(self):
        yield self.model
        yield self.responsibilities
        yield self.trace


def adaptive_bandwidths(catalog, n_p=15, eps_r=None):
    """Per-event bandwidth: distance to the n_p-th nearest other event.

    Results are floored at eps_r (default 0.002 x region diagonal). When the
    catalog holds n_p or fewer events there is no n_p-th neighbor; every
    bandwidth falls back to max(eps_r, 0.002 x region diagonal) with a
    warning.
    """
    from scipy.spatial import cKDTree

    if n_p < 1:
        raise ValueError("n_p must be at least 1")
    if eps_r is None:
        eps_r = 0.002 * catalog.region.diagonal
    eps_r = float(eps_r)
    if eps_r <= 0:
        raise ValueError("eps_r must be positive")
    n = len(catalog)
    if n <= n_p:
        warnings.warn(
            f"catalog has {n} events but n_p={n_p}; bandwidths fall back to the floor",
            RuntimeWarning,
        )
        fallback = max(eps_r, 0.002 * catalog.region.diagonal)
        return np.full(n, fallback)
    pts = np.column_stack([catalog.x, catalog.y])
    # the self point sits at distance 0, so the (n_p+1)-th smallest distance
    # is the n_p-th nearest other event even among co-located points
    dist, _ = cKDTree(pts).query(pts, k=n_p + 1)
    return np.maximum(dist[:, n_p], eps_r)


def _default_t_max(catalog):
    gaps = []
    for v in range(catalog.n_nodes):
        tu = catalog.t[catalog.node == v]
        if tu.size > 1:
            gaps.append(np.diff(tu))
    if not gaps:
        return catalog.T
    q = float(np.quantile(np.concatenate(gaps), 0.95))
    return q if q > 0 else catalog.T


def _default_r_max(catalog, rng, max_pairs=200_000):
    n = len(catalog)
    if n < 2:
        return max(catalog.region.diagonal, 1.0)
    i = rng.integers(0, n, size=max_pairs)
    j = rng.integers(0, n, size=max_pairs)
    keep = i != j
    dx = catalog.x[i[keep]] - catalog.x[j[keep]]
    dy = catalog.y[i[keep]] - catalog.y[j[keep]]
    q = float(np.quantile(np.sqrt(dx * dx + dy * dy), 0.95))
    return q if q > 0 else max(catalog.region.diagonal, 1.0)


def _bin_index(values, edges):
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.where(values == edges[-1], len(edges) - 2, idx)


class _TauEvaluator:
    """tau at the event locations given current background weights.

    Caches the event-to-event Gaussian matrix when it fits in memory,
    otherwise recomputes it block by block every iteration.
    """

    def __init__(self, x, y, d, T, block_size=1024):
        self.x, self.y, self.d, self.T = x, y, d, T
        self.var2 = 2.0 * d * d
        self.norm = TWO_PI * d * d
        n = x.size
        self.block_size = block_size
        self.w = None
        if n * n * 8 <= W_CACHE_LIMIT_BYTES:
            d2 = (x[:, None] - x[None, :]) ** 2 + (y[:, None] - y[None, :]) ** 2
            self.w = np.exp(-d2 / self.var2[:, None]) / self.norm[:, None]

    def __call__(self, weights):
        if self.w is not None:
            return (weights @ self.w) / self.T
        n = self.x.size
        out = np.empty(n)
        for s in range(0, n, self.block_size):
            sl = slice(s, min(s + self.block_size, n))
            d2 = (self.x[:, None] - self.x[sl]) ** 2 + (self.y[:, None] - self.y[sl]) ** 2
            out[sl] = weights @ (np.exp(-d2 / self.var2[:, None]) / self.norm[:, None])
        return out / self.T


def integrate_tau_region(x, y, weight, d, region, T, grid_n=256):
    """T * integral of tau over the region S by a midpoint grid."""
    gx = region.x0 + (np.arange(grid_n) + 0.5) * (region.width / grid_n)
    gy = region.y0 + (np.arange(grid_n) + 0.5) * (region.height / grid_n)
    cell = (region.width / grid_n) * (region.height / grid_n)
    var2 = 2.0 * d * d
    norm = TWO_PI * d * d
    total = 0.0
    for xv in gx:
        # evaluate tau on one grid column at a time to bound memory
        dx2 = (x - xv) ** 2
        d2 = dx2[:, None] + (y[:, None] - gy[None, :]) ** 2
        total += float((weight / norm) @ np.exp(-d2 / var2[:, None]))
    return total * cell  # the 1/T inside tau cancels against the time integral


def fit_nonparam(
    catalog,
    n_t_bins=30,
    n_r_bins=30,
    t_max=None,
    r_max=None,
    n_p=15,
    eps_r=None,
    eps=1e-4,
    max_iters=500,
    seed=None,
    z_mode="full-mass",
    grid_n=256,
):
    """Fit the nonparametric model by the histogram EM-type algorithm.

    Args:
        catalog: nonempty EventCatalog.
        n_t_bins, n_r_bins: histogram resolutions.
        t_max, r_max: kernel supports; defaults are the 95th percentile of
            consecutive same-node gaps and of subsampled pairwise distances.
        n_p, eps_r: adaptive-bandwidth neighbor count and radius floor.
        eps: stop when no responsibility entry changes by more than this.
        seed: randomizes the initial responsibilities (default: uniform
            columns) and the r_max subsample.
        z_mode: "full-mass" treats every background Gaussian as having unit
            mass inside S; "grid" integrates tau over S numerically.

    Returns a NonparamFit whose settings record every resolved default.
    """
    n = len(catalog)
    if n == 0:
        raise ValueError("cannot fit an empty catalog")
    if n_t_bins < 1 or n_r_bins < 1:
        raise ValueError("bin counts must be at least 1")
    if z_mode not in ("full-mass", "grid"):
        raise ValueError("z_mode must be 'full-mass' or 'grid'")
    rng = np.random.default_rng(0 if seed is None else seed)
    if t_max is None:
        t_max = _default_t_max(catalog)
    if r_max is None:
        r_max = _default_r_max(catalog, rng)
    t_max = float(t_max)
    r_max = float(r_max)
    if t_max <= 0 or r_max <= 0:
        raise ValueError("t_max and r_max must be positive")
    if eps_r is None:
        eps_r = 0.002 * catalog.region.diagonal
        if eps_r <= 0:
            eps_r = 1e-9

    t, x, y, u = catalog.t, catalog.x, catalog.y, catalog.node
    u_count = catalog.n_nodes
    T = catalog.T

    d_band = adaptive_bandwidths(catalog, n_p=n_p, eps_r=eps_r)
    tau_at_events = _TauEvaluator(x, y, d_band, T)

    pair_i, pair_j, _ = _trigger_pairs(t, t_max)
    dx = x[pair_j] - x[pair_i]
    dy = y[pair_j] - y[pair_i]
    r = np.sqrt(dx * dx + dy * dy)
    keep = r <= r_max
    pair_i, pair_j, r = pair_i[keep], pair_j[keep], r[keep]
    dt = t[pair_j] - t[pair_i]

    edges_t = np.linspace(0.0, t_max, n_t_bins + 1)
    edges_r = np.linspace(0.0, r_max, n_r_bins + 1)
    width_t = t_max / n_t_bins
    width_r = r_max / n_r_bins
    mid_r = 0.5 * (edges_r[:-1] + edges_r[1:])
    tbin = _bin_index(dt, edges_t)
    rbin = _bin_index(r, edges_r)
    gcode = u[pair_i] * u_count + u[pair_j]
    n_events_of = catalog.node_counts().astype(float)
    counts_off = np.bincount(pair_j, minlength=n)

    # initial responsibilities: uniform columns, or random when seeded
    if seed is None:
        col_size = counts_off + 1.0
        p_off = 1.0 / col_size[pair_j]
        p_diag = 1.0 / col_size
    else:
        raw_off = rng.uniform(0.1, 1.0, size=pair_i.size)
        raw_diag = rng.uniform(0.1, 1.0, size=n)
        colsum = raw_diag + np.bincount(pair_j, weights=raw_off, minlength=n)
        p_off = raw_off / colsum[pair_j]
        p_diag = raw_diag / colsum

    deltas, logliks, colsum_errs = [], [], []
    converged = False
    gamma = np.zeros(u_count)
    K = np.zeros((u_count, u_count))
    g1_vals = np.zeros(n_t_bins)
    h_vals = np.zeros(n_r_bins)
    z_value = float("nan")
    n_iters = 0

    def m_step(p_off, p_diag):
        if z_mode == "full-mass":
            z = float(p_diag.sum())
        else:
            z = integrate_tau_region(x, y, p_diag, d_band, catalog.region, T, grid_n)
        gamma = np.bincount(u, weights=p_diag, minlength=u_count) / z if z > 0 else np.zeros(u_count)
        with np.errstate(invalid="ignore", divide="ignore"):
            K = np.where(
                n_events_of[:, None] > 0,
                np.bincount(gcode, weights=p_off, minlength=u_count**2).reshape(
                    u_count, u_count
                )
                / n_events_of[:, None],
                0.0,
            )
        total_off = float(p_off.sum())
        if total_off > 0:
            g1 = np.bincount(tbin, weights=p_off, minlength=n_t_bins) / (width_t * total_off)
            h = np.bincount(rbin, weights=p_off, minlength=n_r_bins) / (width_r * total_off)
        else:
            g1 = np.zeros(n_t_bins)
            h = np.zeros(n_r_bins)
        return gamma, K, g1, h, z

    def loglik_at(gamma, K, g1, z, lam):
        # background compensator integrates mu over [0,T] x plane; triggering
        # uses the binned g1 mass reachable before the horizon
        cum_g1 = np.concatenate([[0.0], np.cumsum(g1 * width_t)])
        reach = np.interp(np.minimum(T - t, t_max), edges_t, cum_g1)
        comp_tr = float((K[u, :].sum(axis=1) * reach).sum())
        comp_bg = float(gamma.sum() * z)
        return float(np.log(lam).sum() - comp_bg - comp_tr)

    for n_iters in range(1, max_iters + 1):
        gamma, K, g1_vals, h_vals, z_value = m_step(p_off, p_diag)
        g2_vals = h_vals / (TWO_PI * mid_r)
        trig = K.flat[gcode] * g1_vals[tbin] * g2_vals[rbin]
        mu = gamma[u] * tau_at_events(p_diag)
        lam = mu + np.bincount(pair_j, weights=trig, minlength=n)
        if np.any(lam <= 0.0):
            raise DegenerateModelError(int(np.flatnonzero(lam <= 0.0)[0]))
        new_off = trig / lam[pair_j] if trig.size else trig
        new_diag = mu / lam
        logliks.append(loglik_at(gamma, K, g1_vals, z_value, lam))
        colsums = new_diag + np.bincount(pair_j, weights=new_off, minlength=n)
        colsum_errs.append(float(np.abs(colsums - 1.0).max()))
        delta = float(np.abs(new_diag - p_diag).max())
        if new_off.size:
            delta = max(delta, float(np.abs(new_off - p_off).max()))
        deltas.append(delta)
        p_off, p_diag = new_off, new_diag
        if delta < eps:
            converged = True
            break

    # final parameters from the converged responsibilities
    gamma, K, g1_vals, h_vals, z_value = m_step(p_off, p_diag)

    counts_kept = np.bincount(pair_j, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts_kept + 1, out=indptr[1:])
    row_idx = np.empty(indptr[-1], dtype=np.int64)
    probs = np.empty(indptr[-1])
    diag_pos = indptr[1:] - 1
    row_idx[diag_pos] = np.arange(n)
    probs[diag_pos] = p_diag
    if p_off.size:
        off_pos = np.arange(p_off.size) + pair_j
        row_idx[off_pos] = pair_i
        probs[off_pos] = p_off
    resp = ResponsibilityMatrix(n, indptr, row_idx, probs, validate=False)

    model = NonparamModel(
        K=TriggeringMatrix(K),
        gamma=gamma,
        g1=BinnedKernel(edges_t, g1_vals),
        h=BinnedKernel(edges_r, h_vals),
        background_field=BackgroundField(x=x, y=y, weight=p_diag, d=d_band),
        T=T,
    )
    trace = FitTrace(
        loglik=np.asarray(logliks),
        delta=np.asarray(deltas),
        colsum_err=np.asarray(colsum_errs),
        n_iters=n_iters,
        converged=converged,
    )
    settings = {
        "n_t_bins": n_t_bins,
        "n_r_bins": n_r_bins,
        "t_max": t_max,
        "r_max": r_max,
        "n_p": n_p,
        "eps_r": float(eps_r),
        "eps": eps,
        "max_iters": max_iters,
        "seed": seed,
        "z_mode": z_mode,
        "z_value": z_value,
    }
    return NonparamFit(model, resp, trace, settings)
