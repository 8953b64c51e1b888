"""Stochastic declustering: split events into background vs triggered.

Each event is labeled background when its background probability p_ii beats
an independent uniform draw. Repeated declustering of the same fit gives a
distribution of classifications, summarized against ground-truth labels by
branching-ratio error, precision and recall (background is the positive
class).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ResponsibilityMatrix

BACKGROUND = 1
TRIGGERED = 0


def decluster(resp, seed):
    """One stochastic declustering; True marks background events.

    Event i is background iff p_ii > Uniform(0,1); ties go to triggered.
    """
    p_bg = resp.diagonal() if isinstance(resp, ResponsibilityMatrix) else np.asarray(resp)
    rng = np.random.default_rng(seed)
    return p_bg > rng.uniform(0.0, 1.0, size=p_bg.size)


def branching_ratio(labels):
    """Fraction of events that are triggered: 1 - N_background / N."""
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0:
        raise ValueError("branching ratio of an empty catalog is undefined")
    return 1.0 - float(labels.sum()) / labels.size


def precision_recall(labels, truth_labels):
    """(precision, recall) with background as the positive class.

    Either value is None when its denominator is zero.
    """
    labels = np.asarray(labels, dtype=bool)
    truth = np.asarray(truth_labels, dtype=bool)
    if labels.shape != truth.shape:
        raise ValueError("label vectors must have the same length")
    tp = float(np.sum(labels & truth))
    fp = float(np.sum(labels & ~truth))
    fn = float(np.sum(~labels & truth))
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return precision, recall


@dataclass(frozen=True)
class DeclusterReport:
    n_runs: int
    branching_ratio_true: float
    branching_ratio_mean: float
    branching_error_mean: float
    branching_error_sd: float
    precision_mean: float | None
    precision_sd: float | None
    recall_mean: float | None
    recall_sd: float | None

    def as_dict(self):
        return dict(self.__dict__)


def decluster_report(resp, truth_labels, n_runs=20, seed=0):
    """Aggregate declustering quality over n_runs independent runs.

    truth_labels is boolean with True for background. Branching-ratio error
    per run is |estimated - true|; means and standard deviations are across
    runs (sd is 0 for a single run).
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    truth = np.asarray(truth_labels, dtype=bool)
    true_ratio = branching_ratio(truth)
    seeds = np.random.SeedSequence(seed).spawn(n_runs)
    ratios, errors, precisions, recalls = [], [], [], []
    for ss in seeds:
        labels = decluster(resp, ss)
        ratios.append(branching_ratio(labels))
        errors.append(abs(ratios[-1] - true_ratio))
        prec, rec = precision_recall(labels, truth)
        precisions.append(prec)
        recalls.append(rec)

    def agg(vals):
        vals = [v for v in vals if v is not None]
        if not vals:
            return None, None
        arr = np.asarray(vals)
        return float(arr.mean()), float(arr.std())

    err_mean, err_sd = agg(errors)
    prec_mean, prec_sd = agg(precisions)
    rec_mean, rec_sd = agg(recalls)
    return DeclusterReport(
        n_runs=n_runs,
        branching_ratio_true=true_ratio,
        branching_ratio_mean=float(np.mean(ratios)),
        branching_error_mean=err_mean,
        branching_error_sd=err_sd,
        precision_mean=prec_mean,
        precision_sd=prec_sd,
        recall_mean=rec_mean,
        recall_sd=rec_sd,
    )
