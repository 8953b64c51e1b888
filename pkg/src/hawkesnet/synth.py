"""Ground-truth triggering matrices from a weighted stochastic block model.

Nodes are partitioned into communities; each unordered pair gets an edge with
probability p_in (same community) or p_out (different communities) and, if
present, an exponential weight. Matrices are symmetric by construction.
Only matrices whose spectral radius is below 1 yield stable Hawkes dynamics,
so generation is paired with a draw-until-stable loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import TriggeringMatrix


@dataclass(frozen=True)
class WsbmSpec:
    """Block-model parameters.

    weight_param selects whether mean_in / mean_out are exponential means
    (default) or rates; the mean reading keeps the draw-until-stable
    acceptance rate in a practical range at the usual parameter scales.
    """

    community_sizes: tuple
    p_in: float
    p_out: float
    mean_in: float
    mean_out: float
    seed: int = 0
    weight_param: str = "mean"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.community_sizes)
        if not sizes or any(s <= 0 for s in sizes):
            raise ValueError("community sizes must be positive integers")
        object.__setattr__(self, "community_sizes", sizes)
        for name in ("p_in", "p_out"):
            p = float(getattr(self, name))
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        for name in ("mean_in", "mean_out"):
            m = float(getattr(self, name))
            if not m > 0:
                raise ValueError(f"{name} must be positive, got {m}")
        if self.weight_param not in ("mean", "rate"):
            raise ValueError("weight_param must be 'mean' or 'rate'")

    @property
    def n_nodes(self):
        return sum(self.community_sizes)

    def memberships(self):
        """Community index per node, blocks in listed order."""
        return np.repeat(np.arange(len(self.community_sizes)), self.community_sizes)


def _scale(spec, within):
    m = spec.mean_in if within else spec.mean_out
    return m if spec.weight_param == "mean" else 1.0 / m


def generate_wsbm(spec, seed=None):
    """Draw one symmetric triggering matrix from the block model.

    Each unordered pair (and each diagonal entry, treated as a
    within-community pair) is drawn once: a Bernoulli for existence, then an
    exponential weight. Same seed gives a bit-identical matrix.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    u_count = spec.n_nodes
    member = spec.memberships()
    K = np.zeros((u_count, u_count))
    for u in range(u_count):
        for v in range(u, u_count):
            within = member[u] == member[v]
            p = spec.p_in if within else spec.p_out
            exists = rng.random() < p
            weight = rng.exponential(_scale(spec, within))
            if exists:
                K[u, v] = weight
                K[v, u] = weight
    return TriggeringMatrix(K)


def spectral_radius(K):
    """Largest-magnitude eigenvalue of the triggering matrix."""
    m = K.matrix if isinstance(K, TriggeringMatrix) else np.asarray(K, dtype=float)
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(m))))


class StabilityError(RuntimeError):
    """Raised when no stable matrix was found within the attempt budget."""

    def __init__(self, attempts, radii):
        self.attempts = attempts
        self.radii = radii
        super().__init__(
            f"no stable matrix in {attempts} attempts; "
            f"spectral radii ranged over [{min(radii):.3f}, {max(radii):.3f}]"
        )


def generate_stable(spec, max_attempts=100):
    """Redraw matrices until the spectral radius drops below 1.

    Returns (matrix, attempts_used). Attempt k uses seed spec.seed + k so the
    whole search is reproducible from the spec alone.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be at least 1")
    radii = []
    for attempt in range(max_attempts):
        K = generate_wsbm(spec, seed=spec.seed + attempt)
        rho = spectral_radius(K)
        radii.append(rho)
        if rho < 1.0:
            return K, attempt + 1
    raise StabilityError(max_attempts, radii)


def save_matrix_csv(K, path):
    """Write U header-less rows of comma-separated nonnegative decimals."""
    m = K.matrix if isinstance(K, TriggeringMatrix) else np.asarray(K, dtype=float)
    np.savetxt(path, m, delimiter=",", fmt="%.12g")


def load_matrix_csv(path):
    m = np.loadtxt(path, delimiter=",", ndmin=2)
    return TriggeringMatrix(m)
