"""EM estimation of the parametric spatiotemporal model and the temporal baseline.

Both fitters alternate an expectation step, which distributes each event's
unit probability mass over candidate triggers and the background, with
closed-form maximization updates. The temporal decay rate has no closed form
and takes one fixed-point substitution per iteration. Responsibility columns
sum to 1 exactly by construction; the log-likelihood trace is recorded every
iteration.

Candidate trigger pairs are restricted to time lags with omega0 * dt <= 40,
where omega0 is the initial decay rate; beyond that the exponential kernel
is below 4e-18 of its peak. Pass exact_pairs=True to keep every pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    TWO_PI,
    DegenerateModelError,
    ParametricParams,
    ResponsibilityMatrix,
    TriggeringMatrix,
)

PAIR_WINDOW_FACTOR = 40.0


@dataclass
class FitTrace:
    """Per-iteration diagnostics of an EM run.

    loglik has one entry per iteration plus a final entry at the returned
    parameters; colsum_err tracks the worst deviation of any responsibility
    column sum from 1.
    """

    loglik: np.ndarray
    delta: np.ndarray
    colsum_err: np.ndarray
    n_iters: int
    converged: bool


@dataclass
class ParametricFit:
    params: ParametricParams
    responsibilities: ResponsibilityMatrix
    background_attribution: np.ndarray | None
    trace: FitTrace

    def __iter__(self):
        yield self.params
        yield self.responsibilities
        yield self.background_attribution
        yield self.trace


@dataclass(frozen=True)
class TemporalParams:
    """Exponential-kernel temporal model: constant per-node background mu."""

    K: TriggeringMatrix
    mu: np.ndarray
    omega: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.ndim != 1 or mu.size != self.K.n_nodes:
            raise ValueError("mu must hold one rate per node")
        if mu.size and mu.min() < 0:
            raise ValueError("mu entries must be nonnegative")
        if not self.omega > 0:
            raise ValueError("omega must be strictly positive")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)


@dataclass
class TemporalFit:
    params: TemporalParams
    responsibilities: ResponsibilityMatrix
    trace: FitTrace

    def __iter__(self):
        yield self.params
        yield self.responsibilities
        yield self.trace


def mean_same_node_gap(catalog):
    """Mean gap between consecutive events of the same node."""
    gaps = []
    for u in range(catalog.n_nodes):
        tu = catalog.t[catalog.node == u]
        if tu.size > 1:
            gaps.append(np.diff(tu))
    if not gaps:
        return catalog.T / max(len(catalog), 1)
    return float(np.mean(np.concatenate(gaps)))


def _same_node_disp_sigma2(catalog):
    """Per-axis variance scale of consecutive same-node displacements.

    Starting sigma2 must not undershoot the interaction scale: tiny values
    turn the event-centered background Gaussians into near-delta spikes and
    EM races to the degenerate sigma -> 0 maximum. Same-node hops mix
    background and triggered displacements, which lands at or above the
    triggering scale; overshooting is safe.
    """
    sq = []
    for u in range(catalog.n_nodes):
        idx = np.flatnonzero(catalog.node == u)
        if idx.size > 1:
            dx = np.diff(catalog.x[idx])
            dy = np.diff(catalog.y[idx])
            sq.append(dx * dx + dy * dy)
    if sq:
        s2 = float(np.mean(np.concatenate(sq)) / 2.0)
        if s2 > 0:
            return s2
    return max(1.0, catalog.region.diagonal**2 * 0.01)


def default_parametric_init(catalog, seed=None):
    """Default starting point: uniform K and beta, data-scaled omega and sigma2.

    With a seed, entries are drawn uniformly at random around those scales
    instead, matching random-restart usage.
    """
    u_count = catalog.n_nodes
    omega0 = 1.0 / mean_same_node_gap(catalog)
    sigma20 = _same_node_disp_sigma2(catalog)
    if seed is None:
        K0 = np.full((u_count, u_count), 0.5 / u_count)
        beta0 = np.full((u_count, u_count), 1.0 / u_count)
    else:
        rng = np.random.default_rng(seed)
        K0 = rng.uniform(0.0, 1.0 / u_count, size=(u_count, u_count))
        beta0 = rng.uniform(0.5 / u_count, 2.0 / u_count, size=(u_count, u_count))
        omega0 *= rng.uniform(0.5, 2.0)
        sigma20 *= rng.uniform(0.5, 2.0)
        K0 = np.maximum(K0, 1e-6 / u_count)
    return ParametricParams(
        K=TriggeringMatrix(K0), beta=beta0, omega=omega0, sigma2=sigma20, eta2=sigma20
    )


def _trigger_pairs(t, window):
    """Flat (i, j) pairs with t_i < t_j and t_j - t_i <= window, grouped by j."""
    n = t.size
    lo = np.searchsorted(t, t - window, side="left")
    hi = np.searchsorted(t, t, side="left")  # excludes simultaneous events
    counts = hi - lo
    pair_j = np.repeat(np.arange(n), counts)
    # flat ascending runs lo[j]..hi[j]
    if pair_j.size:
        starts = np.cumsum(counts) - counts
        pair_i = np.arange(pair_j.size) - starts[pair_j] + lo[pair_j]
    else:
        pair_i = np.zeros(0, dtype=np.int64)
    return pair_i, pair_j, counts


def fit_parametric(
    catalog,
    init=None,
    eps=1e-4,
    max_iters=500,
    seed=None,
    exact_pairs=False,
    return_background=True,
    sigma2_update="triggering",
    dense_limit=6000,
    block_size=512,
):
    """Fit the spatiotemporal parametric model by the EM-type algorithm.

    Background attributions are leave-one-out: an event is never explained
    by the background Gaussian centered on itself. Allowing self-explanation
    makes the likelihood unbounded (a sigma -> 0 spike at every event) and
    the iteration drifts there instead of converging.

    Args:
        catalog: nonempty EventCatalog.
        init: ParametricParams starting point; default is data-scaled
            (random when a seed is given).
        eps: stop when the max-norm parameter change drops below this.
        max_iters: iteration cap; hitting it flags non-convergence.
        exact_pairs: disable the omega0-based pair-window truncation.
        return_background: also materialize the dense N x N matrix of
            background attributions B[i, j] (probability that event j is
            explained by the background Gaussian centered at event i).
        sigma2_update: "triggering" estimates the shared spatial variance
            from triggering responsibilities only; "joint" also pools
            background attributions, which biases the scale toward the
            background mixture's preferred bandwidth.

    Returns a ParametricFit. Raises DegenerateModelError if any event ends
    up with zero intensity during an E-step.
    """
    n = len(catalog)
    if n == 0:
        raise ValueError("cannot fit an empty catalog")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if sigma2_update not in ("triggering", "joint"):
        raise ValueError("sigma2_update must be 'triggering' or 'joint'")
    params = default_parametric_init(catalog, seed=seed) if init is None else init

    t, x, y, u = catalog.t, catalog.x, catalog.y, catalog.node
    u_count = catalog.n_nodes
    T = catalog.T
    window = np.inf if exact_pairs else PAIR_WINDOW_FACTOR / params.omega
    pair_i, pair_j, counts = _trigger_pairs(t, window)
    dt = t[pair_j] - t[pair_i]
    d2p = (x[pair_j] - x[pair_i]) ** 2 + (y[pair_j] - y[pair_i]) ** 2
    gcode = u[pair_i] * u_count + u[pair_j]
    n_u = catalog.node_counts().astype(float)
    onehot = np.zeros((n, u_count))
    onehot[np.arange(n), u] = 1.0
    rows = np.arange(n)

    dense = n <= dense_limit
    if dense:
        d2b_full = (x[:, None] - x[None, :]) ** 2 + (y[:, None] - y[None, :]) ** 2
    blocks = [slice(s, min(s + block_size, n)) for s in range(0, n, block_size)]

    K = params.K.matrix.copy()
    beta = params.beta.copy()
    omega = float(params.omega)
    sigma2 = float(params.sigma2)
    eta2 = float(params.eta2)

    logliks, deltas, colsum_errs = [], [], []
    converged = False
    p_off = np.zeros(0)
    p_diag = np.zeros(n)
    n_iters = 0

    def e_step_dense(K, beta, omega, sigma2, eta2, collect_background):
        trig = K.flat[gcode] * (omega / (TWO_PI * sigma2)) * np.exp(
            -omega * dt - d2p / (2.0 * sigma2)
        )
        trig_col = np.bincount(pair_j, weights=trig, minlength=n)
        bg_norm = TWO_PI * eta2 * T
        g = np.exp(d2b_full * (-0.5 / eta2))
        np.fill_diagonal(g, 0.0)  # leave-one-out
        bg_col = ((g.T @ onehot) @ beta)[rows, u] / bg_norm
        lam = bg_col + trig_col
        if np.any(lam <= 0.0):
            raise DegenerateModelError(int(np.flatnonzero(lam <= 0.0)[0]))
        inv_lam = 1.0 / lam
        scaled = onehot * inv_lam[:, None]
        grp = (onehot.T @ (g @ scaled)) * beta / bg_norm
        grp_d2 = (onehot.T @ ((g * d2b_full) @ scaled)) * beta / bg_norm
        b_dense = None
        if collect_background:
            b_dense = beta[u[:, None], u[None, :]] * g * (inv_lam[None, :] / bg_norm)
        p_off = trig * inv_lam[pair_j] if trig.size else trig
        return {
            "p_off": p_off,
            "p_diag": bg_col * inv_lam,
            "beta_num": grp,
            "sum_b": float(grp.sum()),
            "sum_b_d2": float(grp_d2.sum()),
            "sum_log_lam": float(np.log(lam).sum()),
            "background": b_dense,
        }

    def e_step_blocked(K, beta, omega, sigma2, eta2, collect_background):
        trig = K.flat[gcode] * (omega / (TWO_PI * sigma2)) * np.exp(
            -omega * dt - d2p / (2.0 * sigma2)
        )
        trig_col = np.bincount(pair_j, weights=trig, minlength=n)
        bg_norm = TWO_PI * eta2 * T
        lam = np.empty(n)
        p_diag = np.empty(n)
        beta_num = np.zeros((u_count, u_count))
        sum_b = 0.0
        sum_b_d2 = 0.0
        sum_log_lam = 0.0
        b_dense = np.empty((n, n)) if collect_background else None
        for sl in blocks:
            d2b = (x[:, None] - x[sl]) ** 2 + (y[:, None] - y[sl]) ** 2
            g = np.exp(d2b * (-0.5 / eta2))
            g[np.arange(sl.start, sl.stop) - 0, np.arange(sl.stop - sl.start)] = 0.0
            bg = beta[u[:, None], u[None, sl]] * g / bg_norm
            bg_col = bg.sum(axis=0)
            lam_b = bg_col + trig_col[sl]
            if np.any(lam_b <= 0.0):
                bad = int(np.flatnonzero(lam_b <= 0.0)[0]) + sl.start
                raise DegenerateModelError(bad)
            bg /= lam_b
            lam[sl] = lam_b
            p_diag[sl] = bg_col / lam_b
            beta_num += (onehot.T @ bg) @ onehot[sl]
            sum_b += bg.sum()
            sum_b_d2 += float((bg * d2b).sum())
            sum_log_lam += float(np.log(lam_b).sum())
            if collect_background:
                b_dense[:, sl] = bg
        p_off = trig / lam[pair_j] if trig.size else trig
        return {
            "p_off": p_off,
            "p_diag": p_diag,
            "beta_num": beta_num,
            "sum_b": sum_b,
            "sum_b_d2": sum_b_d2,
            "sum_log_lam": sum_log_lam,
            "background": b_dense,
        }

    def e_step(K, beta, omega, sigma2, eta2, collect_background=False):
        if dense:
            return e_step_dense(K, beta, omega, sigma2, eta2, collect_background)
        return e_step_blocked(K, beta, omega, sigma2, eta2, collect_background)

    def loglik_at(K, beta, omega, sum_log_lam):
        comp_bg = float(beta[u, :].sum())
        decay = 1.0 - np.exp(-omega * (T - t))
        comp_tr = float((K[u, :].sum(axis=1) * decay).sum())
        return sum_log_lam - comp_bg - comp_tr

    for n_iters in range(1, max_iters + 1):
        es = e_step(K, beta, omega, sigma2, eta2)
        p_off, p_diag = es["p_off"], es["p_diag"]
        logliks.append(loglik_at(K, beta, omega, es["sum_log_lam"]))
        colsums = p_diag + np.bincount(pair_j, weights=p_off, minlength=n)
        colsum_errs.append(float(np.abs(colsums - 1.0).max()))

        sum_p = float(p_off.sum())
        sum_p_dt = float((p_off * dt).sum())
        sum_p_d2 = float((p_off * d2p).sum())
        k_row = K.sum(axis=1)
        tail = (T - t) * np.exp(-omega * (T - t))
        denom_w = sum_p_dt + float((k_row[u] * tail).sum())
        omega_new = sum_p / denom_w if sum_p > 0 and denom_w > 0 else omega
        k_denom = np.bincount(u, weights=1.0 - np.exp(-omega_new * (T - t)), minlength=u_count)
        with np.errstate(invalid="ignore", divide="ignore"):
            K_new = np.where(
                k_denom[:, None] > 0,
                np.bincount(gcode, weights=p_off, minlength=u_count**2).reshape(
                    u_count, u_count
                )
                / k_denom[:, None],
                0.0,
            )
            beta_new = np.where(n_u[:, None] > 0, es["beta_num"] / n_u[:, None], 0.0)
        mass = sum_p + es["sum_b"]
        sigma2_new = (sum_p_d2 + es["sum_b_d2"]) / (2.0 * mass) if mass > 0 else sigma2
        sigma2_new = max(sigma2_new, 1e-30)

        delta = max(
            float(np.abs(K_new - K).max()),
            float(np.abs(beta_new - beta).max()),
            abs(omega_new - omega),
            abs(sigma2_new - sigma2),
        )
        deltas.append(delta)
        K, beta, omega, sigma2 = K_new, beta_new, omega_new, sigma2_new
        eta2 = sigma2
        if delta < eps:
            converged = True
            break

    # materialize responsibilities and trace entry at the returned parameters
    es = e_step(K, beta, omega, sigma2, eta2, collect_background=return_background)
    logliks.append(loglik_at(K, beta, omega, es["sum_log_lam"]))
    p_off, p_diag = es["p_off"], es["p_diag"]
    colsums = p_diag + np.bincount(pair_j, weights=p_off, minlength=n)
    colsum_errs.append(float(np.abs(colsums - 1.0).max()))

    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts + 1, out=indptr[1:])
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

    fitted = ParametricParams(
        K=TriggeringMatrix(K), beta=beta, omega=omega, sigma2=sigma2, eta2=sigma2
    )
    trace = FitTrace(
        loglik=np.asarray(logliks),
        delta=np.asarray(deltas),
        colsum_err=np.asarray(colsum_errs),
        n_iters=n_iters,
        converged=converged,
    )
    return ParametricFit(fitted, resp, es["background"], trace)


def default_temporal_init(catalog, seed=None):
    u_count = catalog.n_nodes
    omega0 = 1.0 / mean_same_node_gap(catalog)
    mu0 = catalog.node_counts() / catalog.T
    if seed is None:
        K0 = np.full((u_count, u_count), 0.5 / u_count)
    else:
        rng = np.random.default_rng(seed)
        K0 = np.maximum(rng.uniform(0.0, 1.0 / u_count, size=(u_count, u_count)), 1e-6 / u_count)
        omega0 *= rng.uniform(0.5, 2.0)
    return TemporalParams(K=TriggeringMatrix(K0), mu=mu0.astype(float), omega=omega0)


def fit_temporal(catalog, init=None, eps=1e-4, max_iters=500, seed=None, exact_pairs=False):
    """Fit the exclusively temporal baseline by the same EM scheme.

    The model is lambda_u(t) = mu_u + sum K[u_i, u] * omega * exp(-omega dt);
    spatial coordinates are ignored. Returns a TemporalFit.
    """
    n = len(catalog)
    if n == 0:
        raise ValueError("cannot fit an empty catalog")
    params = default_temporal_init(catalog, seed=seed) if init is None else init

    t, u = catalog.t, catalog.node
    u_count = catalog.n_nodes
    T = catalog.T
    window = np.inf if exact_pairs else PAIR_WINDOW_FACTOR / params.omega
    pair_i, pair_j, counts = _trigger_pairs(t, window)
    dt = t[pair_j] - t[pair_i]
    gcode = u[pair_i] * u_count + u[pair_j]

    K = params.K.matrix.copy()
    mu = params.mu.copy()
    omega = float(params.omega)

    logliks, deltas, colsum_errs = [], [], []
    converged = False
    n_iters = 0

    def e_step(K, mu, omega):
        trig = K.flat[gcode] * omega * np.exp(-omega * dt)
        trig_col = np.bincount(pair_j, weights=trig, minlength=n)
        lam = mu[u] + trig_col
        if np.any(lam <= 0.0):
            raise DegenerateModelError(int(np.flatnonzero(lam <= 0.0)[0]))
        return trig / lam[pair_j] if trig.size else trig, mu[u] / lam, lam

    def loglik_at(K, mu, omega, lam):
        decay = 1.0 - np.exp(-omega * (T - t))
        return float(np.log(lam).sum() - (mu * T).sum() - (K[u, :].sum(axis=1) * decay).sum())

    for n_iters in range(1, max_iters + 1):
        p_off, p_diag, lam = e_step(K, mu, omega)
        logliks.append(loglik_at(K, mu, omega, lam))
        colsums = p_diag + np.bincount(pair_j, weights=p_off, minlength=n)
        colsum_errs.append(float(np.abs(colsums - 1.0).max()))

        sum_p = float(p_off.sum())
        sum_p_dt = float((p_off * dt).sum())
        tail = (T - t) * np.exp(-omega * (T - t))
        denom_w = sum_p_dt + float((K.sum(axis=1)[u] * tail).sum())
        omega_new = sum_p / denom_w if sum_p > 0 and denom_w > 0 else omega
        k_denom = np.bincount(u, weights=1.0 - np.exp(-omega_new * (T - t)), minlength=u_count)
        with np.errstate(invalid="ignore", divide="ignore"):
            K_new = np.where(
                k_denom[:, None] > 0,
                np.bincount(gcode, weights=p_off, minlength=u_count**2).reshape(
                    u_count, u_count
                )
                / k_denom[:, None],
                0.0,
            )
        mu_new = np.bincount(u, weights=p_diag, minlength=u_count) / T

        delta = max(
            float(np.abs(K_new - K).max()),
            float(np.abs(mu_new - mu).max()),
            abs(omega_new - omega),
        )
        deltas.append(delta)
        K, mu, omega = K_new, mu_new, omega_new
        if delta < eps:
            converged = True
            break

    p_off, p_diag, lam = e_step(K, mu, omega)
    logliks.append(loglik_at(K, mu, omega, lam))
    colsums = p_diag + np.bincount(pair_j, weights=p_off, minlength=n)
    colsum_errs.append(float(np.abs(colsums - 1.0).max()))

    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts + 1, out=indptr[1:])
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

    # mu can hit exactly zero for nodes with no events; keep omega positive
    fitted = TemporalParams(K=TriggeringMatrix(K), mu=mu, omega=omega)
    trace = FitTrace(
        loglik=np.asarray(logliks),
        delta=np.asarray(deltas),
        colsum_err=np.asarray(colsum_errs),
        n_iters=n_iters,
        converged=converged,
    )
    return TemporalFit(fitted, resp, trace)
