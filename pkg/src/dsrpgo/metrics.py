"""Multi-label evaluation: protein-centric Fmax, micro/macro AUPR,
example-based F1, subset accuracy, and the Davies-Bouldin cluster index.

ACC and F1 are pinned to artifact-defined conventions (subset accuracy and
example-based F1 at threshold 0.5) and flagged as such in emitted reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EvalReport:
    fmax: float
    fmax_threshold: float
    m_aupr: float
    M_aupr: float
    f1: float
    acc: float
    per_term_aupr: np.ndarray
    macro_skipped_terms: int = 0
    db_scores: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "fmax": self.fmax, "fmax_threshold": self.fmax_threshold,
            "m-aupr": self.m_aupr, "M-aupr": self.M_aupr,
            "f1": self.f1, "acc": self.acc,
            "per_term_aupr": [float(v) for v in self.per_term_aupr],
            "macro_skipped_terms": self.macro_skipped_terms,
            "db_scores": {k: float(v) for k, v in self.db_scores.items()},
        }


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} vs labels {labels.shape}")
    if labels.sum() == 0:
        raise ValueError("labels contain no positive entry")
    return scores, labels.astype(np.float64)


def fmax(scores, labels, grid=None):
    """Protein-centric maximum F-measure over a threshold sweep.

    At each threshold, precision is averaged over proteins with at least one
    prediction and recall over proteins with at least one true label (the
    CAFA convention); predictions use a >= comparison so tied scores enter
    together.  Returns (value, argmax threshold).
    """
    scores, labels = _validate(scores, labels)
    if grid is None:
        grid = np.linspace(0.0, 1.0, 101)
    has_label = labels.sum(axis=1) > 0
    best, best_tau = 0.0, 0.0
    for tau in grid:
        pred = scores >= tau
        npred = pred.sum(axis=1)
        tp = (pred * labels).sum(axis=1)
        covered = npred > 0
        if not covered.any():
            continue
        precision = float((tp[covered] / npred[covered]).mean())
        recall = float((tp[has_label] / labels.sum(axis=1)[has_label]).mean())
        if precision + recall > 0:
            f = 2 * precision * recall / (precision + recall)
            if f > best:
                best, best_tau = f, float(tau)
    return best, best_tau


def _aupr_single(scores, labels):
    """Step-wise precision-recall integral for one flat score/label vector.

    Walks distinct score thresholds from high to low; AUPR accumulates
    (R_k - R_{k-1}) * P_k with no interpolation of the precision envelope.
    """
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    pos = y.sum()
    if pos == 0:
        return None
    # group ties: indices where a new distinct score starts
    distinct = np.nonzero(np.diff(s))[0]
    cut_ends = np.append(distinct, len(s) - 1)
    tp = np.cumsum(y)
    area, prev_recall = 0.0, 0.0
    for end in cut_ends:
        k = end + 1
        precision = tp[end] / k
        recall = tp[end] / pos
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return float(area)


def aupr_micro(scores, labels):
    """AUPR over the flattened score/label pairs."""
    scores, labels = _validate(scores, labels)
    return _aupr_single(scores.ravel(), labels.ravel())


def aupr_macro(scores, labels):
    """Mean per-term AUPR; terms without positives are skipped and counted.

    Returns (value, per_term_values, skipped_count); skipped terms hold NaN
    in the per-term vector.
    """
    scores, labels = _validate(scores, labels)
    per_term = np.full(scores.shape[1], np.nan)
    for m in range(scores.shape[1]):
        v = _aupr_single(scores[:, m], labels[:, m])
        if v is not None:
            per_term[m] = v
    valid = ~np.isnan(per_term)
    return float(per_term[valid].mean()), per_term, int((~valid).sum())


def f1_acc(scores, labels, tau=0.5):
    """Example-based F1 averaged over proteins, and subset accuracy, at
    binarization threshold tau.  A protein with no labels and no predictions
    counts as a perfect match (F1 = 1)."""
    scores, labels = _validate(scores, labels)
    pred = scores >= tau
    inter = (pred * labels).sum(axis=1)
    denom = pred.sum(axis=1) + labels.sum(axis=1)
    f1_per = np.where(denom > 0, 2 * inter / np.maximum(denom, 1), 1.0)
    acc = float((pred == labels.astype(bool)).all(axis=1).mean())
    return float(f1_per.mean()), acc


def davies_bouldin(embeddings, cluster_labels):
    """Standard Davies-Bouldin index with Euclidean centroids and mean
    intra-cluster distances; lower is better.  Raises when any pair of
    centroids coincides (the ratio is undefined)."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    cluster_labels = np.asarray(cluster_labels)
    keys = np.unique(cluster_labels)
    if len(keys) < 2:
        raise ValueError("davies_bouldin needs at least two clusters")
    centroids, scatters = [], []
    for key in keys:
        points = embeddings[cluster_labels == key]
        c = points.mean(axis=0)
        centroids.append(c)
        scatters.append(float(np.linalg.norm(points - c, axis=1).mean()))
    centroids = np.array(centroids)
    n = len(keys)
    worst = np.zeros(n)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dist = float(np.linalg.norm(centroids[i] - centroids[j]))
            if dist == 0.0:
                raise ValueError(f"identical centroids for clusters {keys[i]} and {keys[j]}")
            worst[i] = max(worst[i], (scatters[i] + scatters[j]) / dist)
    return float(worst.mean())


def label_set_clusters(labels):
    """Cluster id per protein, keyed by its exact label set."""
    labels = np.asarray(labels).astype(int)
    seen = {}
    out = np.empty(labels.shape[0], dtype=int)
    for i, row in enumerate(labels):
        key = tuple(row)
        out[i] = seen.setdefault(key, len(seen))
    return out


def evaluate(scores, labels, tau=0.5, db_scores=None):
    """All five metrics in one report."""
    fm, fm_tau = fmax(scores, labels)
    m_val = aupr_micro(scores, labels)
    M_val, per_term, skipped = aupr_macro(scores, labels)
    f1, acc = f1_acc(scores, labels, tau)
    return EvalReport(fmax=fm, fmax_threshold=fm_tau, m_aupr=m_val, M_aupr=M_val,
                      f1=f1, acc=acc, per_term_aupr=per_term,
                      macro_skipped_terms=skipped,
                      db_scores={} if db_scores is None else dict(db_scores))
