"""Branching-structure simulation of multivariate spatiotemporal Hawkes processes.

Background events arrive as per-node Poisson counts, uniform over [0, T] x S.
Each event spawns a Poisson number of offspring whose node, time lag and
spatial displacement are drawn from the triggering matrix row and the kernel
samplers. The cascade is explored with an explicit last-in-first-out stack so
that seeded runs are reproducible. Offspring beyond the horizon are recorded
but never expanded; by default they are dropped from the returned catalog so
estimators can integrate over [0, T].
"""

from __future__ import annotations

import numpy as np

from .core import EventCatalog, Region, TriggeringMatrix
from .synth import spectral_radius


def parametric_samplers(omega, sigma2):
    """Samplers for the exponential-in-time, Gaussian-in-space kernels.

    Returns (g1_sampler, g2_sampler): g1_sampler(rng, n) draws time lags from
    Exponential(rate=omega); g2_sampler(rng, n) draws (n, 2) isotropic
    Gaussian displacements with per-axis variance sigma2.
    """
    omega = float(omega)
    sigma2 = float(sigma2)
    if omega <= 0 or sigma2 <= 0:
        raise ValueError("omega and sigma2 must be strictly positive")
    sd = np.sqrt(sigma2)

    def g1_sampler(rng, n):
        return rng.exponential(1.0 / omega, size=n)

    def g2_sampler(rng, n):
        return rng.normal(0.0, sd, size=(n, 2))

    return g1_sampler, g2_sampler


def simulate(K, gamma, g1_sampler, g2_sampler, T, region, seed, keep_beyond_horizon=False):
    """Simulate a multivariate Hawkes catalog with ground-truth parentage.

    Args:
        K: TriggeringMatrix with spectral radius below 1.
        gamma: scalar or per-node background rates (events per unit time).
        g1_sampler, g2_sampler: kernel samplers as from parametric_samplers.
        T: time horizon. region: Region (or bounds tuple) for background events.
        seed: RNG seed; the same seed reproduces the catalog exactly.
        keep_beyond_horizon: retain offspring with t > T instead of dropping.

    Returns an EventCatalog whose parent column is -1 for background events.
    """
    if not isinstance(K, TriggeringMatrix):
        K = TriggeringMatrix(K)
    if not isinstance(region, Region):
        region = Region(*region)
    T = float(T)
    if T <= 0:
        raise ValueError("T must be positive")
    u_count = K.n_nodes
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (u_count,)).copy()
    if gamma.min() < 0:
        raise ValueError("background rates must be nonnegative")
    rho = spectral_radius(K)
    if rho >= 1.0:
        raise ValueError(f"unstable triggering matrix (spectral radius {rho:.4f} >= 1)")

    rng = np.random.default_rng(seed)
    row_sums = K.matrix.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        node_probs = np.where(row_sums[:, None] > 0, K.matrix / row_sums[:, None], 0.0)

    nodes, times, xs, ys, parents = [], [], [], [], []
    stack = []

    def add_event(u, t, x, y, parent):
        nodes.append(u)
        times.append(t)
        xs.append(x)
        ys.append(y)
        parents.append(parent)
        return len(times) - 1

    for u in range(u_count):
        n_bg = rng.poisson(gamma[u] * T)
        t_bg = rng.uniform(0.0, T, size=n_bg)
        x_bg = rng.uniform(region.x0, region.x1, size=n_bg)
        y_bg = rng.uniform(region.y0, region.y1, size=n_bg)
        for k in range(n_bg):
            idx = add_event(u, t_bg[k], x_bg[k], y_bg[k], -1)
            stack.append(idx)

    while stack:
        i = stack.pop()
        u_i = nodes[i]
        if row_sums[u_i] <= 0:
            continue
        n_off = rng.poisson(row_sums[u_i])
        if n_off == 0:
            continue
        lag = np.asarray(g1_sampler(rng, n_off), dtype=float)
        disp = np.asarray(g2_sampler(rng, n_off), dtype=float).reshape(n_off, 2)
        child_u = rng.choice(u_count, size=n_off, p=node_probs[u_i])
        for k in range(n_off):
            t_k = times[i] + lag[k]
            idx = add_event(int(child_u[k]), t_k, xs[i] + disp[k, 0], ys[i] + disp[k, 1], i)
            if t_k <= T:
                stack.append(idx)

    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray(times, dtype=float)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    parents = np.asarray(parents, dtype=np.int64)

    if not keep_beyond_horizon and times.size:
        keep = times <= T
        remap = -np.ones(times.size, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        nodes, times, xs, ys = nodes[keep], times[keep], xs[keep], ys[keep]
        parents = parents[keep]
        parents = np.where(parents >= 0, remap[parents], -1)

    order = np.argsort(times, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    parents_sorted = parents[order]
    parents_sorted = np.where(parents_sorted >= 0, rank[parents_sorted], -1)

    return EventCatalog(
        node=nodes[order],
        t=times[order],
        x=xs[order],
        y=ys[order],
        T=T,
        region=region,
        n_nodes=u_count,
        parent=parents_sorted,
    )
