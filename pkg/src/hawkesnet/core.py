"""Domain types for spatiotemporal event catalogs and Hawkes-model evaluation.

Events carry a node index, a time stamp and planar coordinates. A fitted model
is summarized by a triggering matrix K, where K[u, v] is the expected number
of node-v events triggered by one node-u event, together with either
parametric kernel parameters or binned (histogram) kernels plus an
adaptive-bandwidth background field. Everything here is an immutable value
after construction; intensity and likelihood evaluation are pure functions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

#: Events in a column-sum this close to 1 are accepted as stochastic.
COLUMN_SUM_TOL = 1e-9


class DegenerateModelError(RuntimeError):
    """An event received zero total intensity during an E-step."""

    def __init__(self, event_index, message=None):
        self.event_index = int(event_index)
        super().__init__(
            message or f"event {event_index} has zero total intensity; "
            "the model cannot explain it"
        )


def _require_finite(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return arr


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        _require_finite("region bounds", [self.x0, self.x1, self.y0, self.y1])
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"degenerate region {self}")

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height

    @property
    def diagonal(self):
        return float(np.hypot(self.width, self.height))

    def contains(self, x, y):
        return (self.x0 <= x) & (x <= self.x1) & (self.y0 <= y) & (y <= self.y1)


@dataclass(frozen=True)
class Event:
    """One marked event: node index, time, planar location."""

    node: int
    t: float
    x: float
    y: float

    def __post_init__(self):
        _require_finite("event fields", [self.t, self.x, self.y])
        if self.node < 0:
            raise ValueError(f"node index must be nonnegative, got {self.node}")


class EventCatalog:
    """Time-sorted spatiotemporal events on a window [0, T] and region S.

    Stores columns as numpy arrays. ``parent`` is optional simulation ground
    truth: parent[i] is the index of the event that triggered event i, or -1
    for background events.
    """

    __slots__ = ("node", "t", "x", "y", "T", "region", "n_nodes", "parent", "node_ids")

    def __init__(self, node, t, x, y, T, region, n_nodes, parent=None, node_ids=None):
        node = np.asarray(node, dtype=np.int64)
        t = _require_finite("t", t)
        x = _require_finite("x", x)
        y = _require_finite("y", y)
        if not (node.shape == t.shape == x.shape == y.shape):
            raise ValueError("event columns must have equal length")
        if node.ndim != 1:
            raise ValueError("event columns must be one-dimensional")
        if t.size and np.any(np.diff(t) < 0):
            raise ValueError("event times must be nondecreasing")
        if t.size and t[0] < 0:
            raise ValueError("event times must be nonnegative")
        n_nodes = int(n_nodes)
        if node.size and (node.min() < 0 or node.max() >= n_nodes):
            raise ValueError("node indices must lie in [0, n_nodes)")
        T = float(T)
        if not np.isfinite(T) or T <= 0:
            raise ValueError(f"horizon T must be positive, got {T}")
        if not isinstance(region, Region):
            region = Region(*region)
        if parent is not None:
            parent = np.asarray(parent, dtype=np.int64)
            if parent.shape != t.shape:
                raise ValueError("parent column must match event count")
            if parent.size:
                if np.any(parent >= np.arange(t.size)):
                    raise ValueError("parents must precede their offspring")
                if np.any(parent < -1):
                    raise ValueError("parent indices must be >= -1")
                bg = parent == -1
                inside = region.contains(x[bg], y[bg])
                if not np.all(inside):
                    raise ValueError("background events must lie inside the region")
        self.node = node
        self.t = t
        self.x = x
        self.y = y
        self.T = T
        self.region = region
        self.n_nodes = n_nodes
        self.parent = parent
        self.node_ids = list(node_ids) if node_ids is not None else None
        for a in (self.node, self.t, self.x, self.y):
            a.setflags(write=False)
        if self.parent is not None:
            self.parent.setflags(write=False)

    @classmethod
    def from_events(cls, events, T, region, n_nodes, parent=None):
        """Build a catalog from an iterable of Event, kept in the given order."""
        events = list(events)
        return cls(
            node=[e.node for e in events],
            t=[e.t for e in events],
            x=[e.x for e in events],
            y=[e.y for e in events],
            T=T,
            region=region,
            n_nodes=n_nodes,
            parent=parent,
        )

    def __len__(self):
        return self.t.size

    def __iter__(self):
        for k in range(len(self)):
            yield Event(int(self.node[k]), float(self.t[k]), float(self.x[k]), float(self.y[k]))

    def events_of(self, u):
        """Indices of events belonging to node u."""
        return np.flatnonzero(self.node == u)

    def node_counts(self):
        """Number of events per node, length n_nodes."""
        return np.bincount(self.node, minlength=self.n_nodes)

    def background_mask(self):
        if self.parent is None:
            raise ValueError("catalog carries no ground-truth parentage")
        return self.parent == -1


@dataclass(frozen=True)
class TriggeringMatrix:
    """Nonnegative U x U matrix of expected triggered-offspring counts."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"triggering matrix must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("triggering matrix entries must be finite")
        if m.size and m.min() < 0:
            raise ValueError("triggering matrix entries must be nonnegative")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_nodes(self):
        return self.matrix.shape[0]

    def __getitem__(self, key):
        return self.matrix[key]


@dataclass(frozen=True)
class ParametricParams:
    """Parameters of the exponential-in-time, Gaussian-in-space model.

    beta[u, v] scales how much node-u events contribute to node v's
    background field; omega is the temporal decay rate; sigma2 and eta2 are
    the per-axis variances of the triggering and background Gaussians.
    The fitted model ties eta2 = sigma2.
    """

    K: TriggeringMatrix
    beta: np.ndarray
    omega: float
    sigma2: float
    eta2: float

    def __post_init__(self):
        beta = _require_finite("beta", self.beta)
        if beta.shape != self.K.matrix.shape:
            raise ValueError("beta must have the same shape as K")
        if beta.size and beta.min() < 0:
            raise ValueError("beta entries must be nonnegative")
        for name in ("omega", "sigma2", "eta2"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be strictly positive, got {v}")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)


@dataclass(frozen=True)
class BinnedKernel:
    """Piecewise-constant kernel on consecutive bins starting at 0.

    Evaluation outside [0, edges[-1]] is 0. A fitted kernel is a density
    over its support: sum(values * widths) == 1 up to small tolerance.
    """

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        edges = _require_finite("edges", self.edges)
        values = _require_finite("values", self.values)
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("edges must contain at least two boundaries")
        if edges[0] != 0:
            raise ValueError("bin edges must start at 0")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if values.shape != (edges.size - 1,):
            raise ValueError("need one value per bin")
        if values.size and values.min() < 0:
            raise ValueError("kernel values must be nonnegative")
        edges.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "values", values)

    @property
    def n_bins(self):
        return self.values.size

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def midpoints(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def support(self):
        return float(self.edges[-1])

    def total_mass(self):
        return float(np.sum(self.values * self.widths))

    def bin_index(self, r):
        """Bin index for each query, -1 outside [0, edges[-1]]."""
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(self.edges, r, side="right") - 1
        idx = np.where(r == self.edges[-1], self.n_bins - 1, idx)
        outside = (r < 0) | (r > self.edges[-1])
        return np.where(outside, -1, idx)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        idx = self.bin_index(r)
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, self.n_bins - 1)], 0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class BackgroundField:
    """Weighted Gaussian mixture {(x_i, y_i, w_i, d_i)} defining tau(x, y)."""

    x: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        x = _require_finite("x", self.x)
        y = _require_finite("y", self.y)
        w = _require_finite("weight", self.weight)
        d = _require_finite("d", self.d)
        if not (x.shape == y.shape == w.shape == d.shape):
            raise ValueError("background field columns must have equal length")
        if w.size and w.min() < 0:
            raise ValueError("background weights must be nonnegative")
        if d.size and d.min() <= 0:
            raise ValueError("bandwidths must be strictly positive")
        for name, a in (("x", x), ("y", y), ("weight", w), ("d", d)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.x.size


@dataclass(frozen=True)
class NonparamModel:
    """Nonparametric fit: K, per-node background rates, binned kernels.

    g1 is the temporal triggering density; h is the radial density, with
    g2(r) = h(r) / (2 pi r) evaluated at bin midpoints. The background
    intensity of node u is gamma[u] * tau(x, y) with tau the (1/T)-scaled
    Gaussian mixture held in background_field.
    """

    K: TriggeringMatrix
    gamma: np.ndarray
    g1: BinnedKernel
    h: BinnedKernel
    background_field: BackgroundField
    T: float

    def __post_init__(self):
        gamma = _require_finite("gamma", self.gamma)
        if gamma.ndim != 1 or gamma.size != self.K.n_nodes:
            raise ValueError("gamma must hold one rate per node")
        if gamma.size and gamma.min() < 0:
            raise ValueError("gamma entries must be nonnegative")
        if self.T <= 0:
            raise ValueError("T must be positive")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)

    def g2_values(self):
        """Piecewise-constant g2 per radial bin, h_k / (2 pi mid_k)."""
        return self.h.values / (TWO_PI * self.h.midpoints)


class ResponsibilityMatrix:
    """Sparse column-stochastic triggering probabilities.

    Entry (i, j) with i < j is the probability that event i triggered event
    j; the diagonal entry (j, j) is the probability that event j is a
    background event. Entries with i > j do not exist. Stored in compressed
    column form; every column contains its diagonal entry and sums to 1.
    """

    __slots__ = ("n", "indptr", "row_idx", "probs")

    def __init__(self, n, indptr, row_idx, probs, validate=True):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.row_idx = np.asarray(row_idx, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=float)
        if self.indptr.shape != (self.n + 1,):
            raise ValueError("indptr must have length n + 1")
        if self.row_idx.shape != self.probs.shape:
            raise ValueError("row_idx and probs must align")
        if validate:
            self.validate()

    @classmethod
    def from_dense(cls, dense):
        """Build from a dense upper-triangular-plus-diagonal array."""
        dense = np.asarray(dense, dtype=float)
        n = dense.shape[0]
        if dense.shape != (n, n):
            raise ValueError("dense responsibility matrix must be square")
        if n and np.any(np.tril(dense, -1) != 0):
            raise ValueError("entries below the diagonal must be zero")
        indptr = [0]
        rows = []
        vals = []
        for j in range(n):
            col = dense[: j + 1, j]
            nz = np.flatnonzero(col)
            if j not in nz:
                nz = np.append(nz, j)
            nz.sort()
            rows.append(nz)
            vals.append(col[nz])
            indptr.append(indptr[-1] + nz.size)
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        return cls(n, indptr, rows, vals)

    def validate(self, tol=COLUMN_SUM_TOL):
        if self.probs.size and (self.probs.min() < -tol or self.probs.max() > 1 + tol):
            raise ValueError("probabilities must lie in [0, 1]")
        for j in range(self.n):
            rows = self.row_idx[self.indptr[j] : self.indptr[j + 1]]
            if rows.size == 0 or rows[-1] != j:
                raise ValueError(f"column {j} must end with its diagonal entry")
            if np.any(rows > j):
                raise ValueError("entries below the diagonal are not allowed")
        err = self.max_column_sum_error()
        if err > tol:
            raise ValueError(f"columns must sum to 1, worst error {err:g}")

    def column(self, j):
        """(row indices, probabilities) of column j."""
        sl = slice(self.indptr[j], self.indptr[j + 1])
        return self.row_idx[sl], self.probs[sl]

    def column_sums(self):
        seg = np.zeros(self.n)
        np.add.at(seg, np.repeat(np.arange(self.n), np.diff(self.indptr)), self.probs)
        return seg

    def max_column_sum_error(self):
        if self.n == 0:
            return 0.0
        return float(np.abs(self.column_sums() - 1.0).max())

    def diagonal(self):
        """Background probabilities p_jj, length n."""
        # column j is sorted by row, so its diagonal entry is last
        return self.probs[self.indptr[1:] - 1].copy()

    def triggering_entries(self):
        """(i, j, p) arrays over off-diagonal entries (i < j)."""
        cols = np.repeat(np.arange(self.n), np.diff(self.indptr))
        off = self.row_idx != cols
        return self.row_idx[off], cols[off], self.probs[off]

    def to_dense(self):
        dense = np.zeros((self.n, self.n))
        cols = np.repeat(np.arange(self.n), np.diff(self.indptr))
        dense[self.row_idx, cols] = self.probs
        return dense

    @property
    def nnz(self):
        return self.probs.size


def _check_query(catalog, u, t, x, y):
    for name, v in (("t", t), ("x", x), ("y", y)):
        if not np.isfinite(v):
            raise ValueError(f"query {name} must be finite, got {v!r}")
    u = int(u)
    if not 0 <= u < catalog.n_nodes:
        raise ValueError(f"node {u} outside [0, {catalog.n_nodes})")
    return u, float(t), float(x), float(y)


def background_parametric(params, catalog, u, x, y):
    """Gaussian-mixture background rate mu_u(x, y), built from all events."""
    u, _, x, y = _check_query(catalog, u, 0.0, x, y)
    if len(catalog) == 0:
        return 0.0
    d2 = (catalog.x - x) ** 2 + (catalog.y - y) ** 2
    w = params.beta[catalog.node, u]
    norm = TWO_PI * params.eta2 * catalog.T
    return float(np.sum(w * np.exp(-d2 / (2.0 * params.eta2))) / norm)


def intensity_parametric(params, catalog, u, t, x, y):
    """Conditional intensity of node u at (t, x, y) under the parametric model.

    The background field sums over the whole catalog (it is built from all
    events, independent of time); the triggering sum runs over events
    strictly earlier than t.
    """
    u, t, x, y = _check_query(catalog, u, t, x, y)
    rate = background_parametric(params, catalog, u, x, y)
    earlier = catalog.t < t
    if np.any(earlier):
        dt = t - catalog.t[earlier]
        d2 = (catalog.x[earlier] - x) ** 2 + (catalog.y[earlier] - y) ** 2
        k = params.K.matrix[catalog.node[earlier], u]
        g1 = params.omega * np.exp(-params.omega * dt)
        g2 = np.exp(-d2 / (2.0 * params.sigma2)) / (TWO_PI * params.sigma2)
        rate += float(np.sum(k * g1 * g2))
    return rate


def loglik_parametric(params, catalog):
    """Log-likelihood of the catalog under the parametric model.

    Spatial Gaussian integrals are taken over the whole plane (mass 1), so
    the compensator is sum_i beta-row-sum + sum_i K-row-sum * (1 - e^{-w(T-t_i)}).
    An event with zero intensity yields -inf with a warning, never NaN.
    """
    n = len(catalog)
    if n == 0:
        return 0.0
    K = params.K.matrix
    sum_log = 0.0
    norm_bg = TWO_PI * params.eta2 * catalog.T
    norm_tr = TWO_PI * params.sigma2
    for k in range(n):
        d2 = (catalog.x - catalog.x[k]) ** 2 + (catalog.y - catalog.y[k]) ** 2
        mu = np.sum(
            params.beta[catalog.node, catalog.node[k]] * np.exp(-d2 / (2.0 * params.eta2))
        ) / norm_bg
        earlier = catalog.t < catalog.t[k]
        trig = 0.0
        if np.any(earlier):
            dt = catalog.t[k] - catalog.t[earlier]
            trig = np.sum(
                K[catalog.node[earlier], catalog.node[k]]
                * params.omega
                * np.exp(-params.omega * dt)
                * np.exp(-d2[earlier] / (2.0 * params.sigma2))
            ) / norm_tr
        lam = mu + trig
        if lam <= 0.0:
            warnings.warn(
                f"event {k} has zero intensity; log-likelihood is degenerate (-inf)",
                RuntimeWarning,
            )
            return float("-inf")
        sum_log += np.log(lam)
    comp_bg = float(np.sum(params.beta[catalog.node, :]))
    decay = 1.0 - np.exp(-params.omega * (catalog.T - catalog.t))
    comp_tr = float(np.sum(K[catalog.node, :].sum(axis=1) * decay))
    return float(sum_log - comp_bg - comp_tr)


def evaluate_tau(model, x, y):
    """Background mixture tau(x, y) = (1/T) sum_i w_i N((x,y); (x_i,y_i), d_i^2)."""
    bf = model.background_field
    if len(bf) == 0:
        return 0.0
    x = float(x)
    y = float(y)
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError("query coordinates must be finite")
    d2 = (bf.x - x) ** 2 + (bf.y - y) ** 2
    var = bf.d**2
    return float(np.sum(bf.weight * np.exp(-d2 / (2.0 * var)) / (TWO_PI * var)) / model.T)


def intensity_nonparam(model, catalog, u, t, x, y):
    """Conditional intensity of node u at (t, x, y) under the nonparametric model."""
    u, t, x, y = _check_query(catalog, u, t, x, y)
    rate = model.gamma[u] * evaluate_tau(model, x, y)
    earlier = catalog.t < t
    if np.any(earlier):
        dt = t - catalog.t[earlier]
        r = np.sqrt((catalog.x[earlier] - x) ** 2 + (catalog.y[earlier] - y) ** 2)
        k = model.K.matrix[catalog.node[earlier], u]
        g1 = model.g1(dt)
        g2v = model.g2_values()
        ridx = model.h.bin_index(r)
        g2 = np.where(ridx >= 0, g2v[np.clip(ridx, 0, model.h.n_bins - 1)], 0.0)
        rate += float(np.sum(k * g1 * g2))
    return rate
