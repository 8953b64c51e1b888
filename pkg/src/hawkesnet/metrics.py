"""Evaluation of inferred networks: reciprocity, ROC/AUC, NMI, kernel errors.

Undefined quantities (zero off-diagonal mass, single-community partitions
with differing structure, degenerate truth matrices) come back as None
rather than NaN so reports can distinguish "absent" from "zero".
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .core import BinnedKernel, TriggeringMatrix


def _as_matrix(K):
    return K.matrix if isinstance(K, TriggeringMatrix) else np.asarray(K, dtype=float)


def threshold_matrix(K, theta, binarize=False):
    """Zero entries below theta; keep or binarize the survivors."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    m = _as_matrix(K).copy()
    low = m < theta
    m[low] = 0.0
    if binarize:
        m[~low] = 1.0
    return TriggeringMatrix(m)


def reciprocity_r1(K):
    """Total reciprocated off-diagonal weight over total off-diagonal weight."""
    m = _as_matrix(K)
    off = ~np.eye(m.shape[0], dtype=bool)
    total = float(m[off].sum())
    if total == 0:
        return None
    recip = float(np.minimum(m, m.T)[off].sum())
    return recip / total


@dataclass(frozen=True)
class NodeReciprocity:
    ratio: float | None
    coherence: float | None
    entropy: float | None


def reciprocity_node(K):
    """Mean pairwise ratio, coherence and entropy reciprocity scores.

    Pairs with zero weight in both directions are excluded from the means;
    0 * log(0) counts as 0.
    """
    m = _as_matrix(K)
    n = m.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    a = m[iu, ju]
    b = m[ju, iu]
    total = a + b
    live = total > 0
    if not np.any(live):
        return NodeReciprocity(None, None, None)
    a, b, total = a[live], b[live], total[live]
    ratio = np.minimum(a, b) / np.maximum(a, b)
    coherence = 2.0 * np.sqrt(a * b) / total
    r_ab = a / total
    r_ba = b / total

    def xlog2(p):
        return np.where(p > 0, p * np.log2(p, where=p > 0), 0.0)

    entropy = -(xlog2(r_ab) + xlog2(r_ba))
    return NodeReciprocity(
        float(ratio.mean()), float(coherence.mean()), float(entropy.mean())
    )


def symmetry_correlation(K):
    """Pearson correlation between K_uv and K_vu over unordered pairs u < v."""
    m = _as_matrix(K)
    iu, ju = np.triu_indices(m.shape[0], k=1)
    a = m[iu, ju]
    b = m[ju, iu]
    if a.size < 2:
        return None
    sa = a.std()
    sb = b.std()
    if sa == 0 or sb == 0:
        return None
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def roc_auc(K_inferred, A_truth, n_thresholds=None):
    """ROC curve and AUC for edge recovery, diagonal excluded.

    Thresholds sweep the distinct inferred scores (plus one above the
    maximum), so the curve is exact; n_thresholds, when given, subsamples
    the sweep for compact output without changing the AUC, which is computed
    from the full curve. Returns (list of (fpr, tpr), auc); auc is None when
    the truth holds no edge or no non-edge.
    """
    scores = _as_matrix(K_inferred)
    truth = _as_matrix(A_truth)
    if scores.shape != truth.shape:
        raise ValueError("inferred and truth matrices must share a shape")
    off = ~np.eye(scores.shape[0], dtype=bool)
    s = scores[off]
    label = truth[off] > 0
    n_pos = int(label.sum())
    n_neg = label.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return [], None

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    pos_sorted = label[order].astype(float)
    tp = np.cumsum(pos_sorted)
    fp = np.cumsum(1.0 - pos_sorted)
    # one operating point per distinct score: predictions are s >= threshold
    last = np.flatnonzero(np.diff(s_sorted) != 0)
    cut = np.concatenate([last, [s.size - 1]])
    tpr = np.concatenate([[0.0], tp[cut] / n_pos])
    fpr = np.concatenate([[0.0], fp[cut] / n_neg])
    thresholds = np.concatenate([[np.inf], s_sorted[cut]])
    auc = float(np.trapezoid(tpr, fpr))

    if n_thresholds is not None and thresholds.size > n_thresholds:
        pick = np.unique(
            np.linspace(0, thresholds.size - 1, n_thresholds).round().astype(int)
        )
        thresholds, fpr, tpr = thresholds[pick], fpr[pick], tpr[pick]
    curve = list(zip(thresholds.tolist(), fpr.tolist(), tpr.tolist()))
    return curve, auc


def _partition_sets(assignment):
    groups = {}
    for node, com in enumerate(assignment):
        groups.setdefault(com, set()).add(node)
    return set(frozenset(g) for g in groups.values())


def nmi(s1, s2):
    """Square-root normalized mutual information between two assignments.

    Zero-entropy partitions (everything in one community) give 0 unless the
    two partitions are structurally identical, in which case 1.
    """
    s1 = list(s1)
    s2 = list(s2)
    if len(s1) != len(s2):
        raise ValueError("assignments must cover the same node set")
    n = len(s1)
    if n == 0:
        raise ValueError("assignments must be nonempty")
    c1 = Counter(s1)
    c2 = Counter(s2)
    h1 = -sum((c / n) * math.log(c / n) for c in c1.values())
    h2 = -sum((c / n) * math.log(c / n) for c in c2.values())
    if h1 == 0 or h2 == 0:
        return 1.0 if _partition_sets(s1) == _partition_sets(s2) else 0.0
    joint = Counter(zip(s1, s2))
    info = 0.0
    for (a, b), c in joint.items():
        info += (c / n) * math.log(c * n / (c1[a] * c2[b]))
    val = info / math.sqrt(h1 * h2)
    return float(min(max(val, 0.0), 1.0))


def kernel_l1(fitted, truth, grid_n=10_000, truth_total_mass=1.0):
    """L1 distance between a binned kernel and a density on [0, inf).

    Integrates |fitted - truth| by a composite midpoint rule with at least
    grid_n points spread over the fitted support, aligned with the bin edges
    so histogram jumps never straddle a quadrature cell. Truth mass beyond
    the fitted support contributes in full, using truth_total_mass for the
    density's total integral.
    """
    if not isinstance(fitted, BinnedKernel):
        raise TypeError("fitted must be a BinnedKernel")
    if grid_n < 10:
        raise ValueError("grid_n too small")
    widths = fitted.widths
    support = fitted.support
    pts_per_bin = np.maximum((grid_n * widths / support).astype(int), 8)
    err = 0.0
    truth_mass_inside = 0.0
    for k in range(fitted.n_bins):
        m = int(pts_per_bin[k])
        step = widths[k] / m
        grid = fitted.edges[k] + (np.arange(m) + 0.5) * step
        tv = np.asarray(truth(grid), dtype=float)
        err += float(np.abs(fitted.values[k] - tv).sum() * step)
        truth_mass_inside += float(tv.sum() * step)
    err += max(truth_total_mass - truth_mass_inside, 0.0)
    return err
