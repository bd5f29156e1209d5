"""Ranking metrics and the verification / matching / retrieval protocols.

All protocols rank by distance and are therefore invariant under strictly
monotone distance transformations.  Ties break toward the ascending original
index everywhere, which keeps every reported number deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .descriptor import BinaryDescriptor
from .matching import _POPCOUNT, distance_matrix
from .weaklearners import LabeledPair

__all__ = [
    "ScoredExample",
    "VerificationResult",
    "average_precision",
    "eval_matching",
    "eval_retrieval",
    "eval_verification",
    "fpr_at_recall",
    "matching_average_precisions",
    "pair_distances",
    "retrieval_average_precisions",
    "roc_auc",
    "roc_curve",
]


class ScoredExample(NamedTuple):
    """A classifier score (higher = more likely positive) with its +-1 label."""

    score: float
    label: int


@dataclass(frozen=True)
class VerificationResult:
    ap: float
    auc: float
    fpr95: float


def _check_two_classes(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int((labels > 0).sum())
    n_neg = int((labels < 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative example")
    return n_pos, n_neg


def fpr_at_recall(
    scores: np.ndarray,
    labels: np.ndarray,
    recall_target: float = 0.95,
) -> float:
    """False positive rate at the loosest threshold reaching the recall target.

    Examples are ranked by descending score with equal scores treated as one
    operating point; the first point whose recall meets the target determines
    FP / (FP + TN).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_two_classes(labels)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = labels[order] > 0
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    recall = tp[ends] / n_pos
    k = ends[int(np.argmax(recall >= recall_target))]
    return float(fp[k] / n_neg)


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a positive outscores a negative, ties counting one half.

    Computed from average ranks, which is exactly the pairwise definition.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_two_classes(labels)
    n = scores.size
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    ranks = np.empty(n, dtype=np.float64)
    starts = np.flatnonzero(np.append(True, s[1:] != s[:-1]))
    ends = np.append(starts[1:], n)
    for a, b in zip(starts.tolist(), ends.tolist()):
        ranks[order[a:b]] = 0.5 * (a + b - 1) + 1.0  # mean of 1-based ranks a+1..b
    rank_sum = float(ranks[labels > 0].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_curve(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) arrays over the distinct operating points, for plotting."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_two_classes(labels)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = labels[order] > 0
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    fpr = np.concatenate(([0.0], fp[ends] / n_neg))
    tpr = np.concatenate(([0.0], tp[ends] / n_pos))
    return fpr, tpr


def average_precision(relevance: Sequence[bool]) -> float:
    """Mean over relevant ranks r of (relevant items in the top r) / r."""
    rel = np.asarray(relevance, dtype=bool)
    if not rel.any():
        raise ValueError("no relevant items")
    cum = np.cumsum(rel)
    ranks = np.flatnonzero(rel) + 1
    return float((cum[rel] / ranks).mean())


def pair_distances(descriptors: Sequence, pairs: Sequence[LabeledPair]) -> np.ndarray:
    """Distance of each pair's two descriptors, via the metric of their type."""
    n = len(descriptors)
    for p in pairs:
        if not (0 <= p.x < n and 0 <= p.y < n):
            raise ValueError(f"missing descriptor for pair ({p.x}, {p.y})")
    xi = np.array([p.x for p in pairs], dtype=np.int64)
    yi = np.array([p.y for p in pairs], dtype=np.int64)
    if isinstance(descriptors[0], BinaryDescriptor):
        stack = np.stack([d.packed for d in descriptors])
        xor = stack[xi] ^ stack[yi]
        return _POPCOUNT[xor].sum(axis=1, dtype=np.int64).astype(np.float64)
    stack = np.stack([d.values for d in descriptors])
    diff = stack[xi] - stack[yi]
    return np.sum(diff * diff, axis=1)


def eval_verification(descriptors: Sequence, pairs: Sequence[LabeledPair]) -> VerificationResult:
    """Rank labeled pairs by ascending distance and score the ranking.

    Returns average precision of the ranked pair list, ROC AUC and the false
    positive rate at 95% recall, all computed with score = -distance.
    """
    if len(pairs) == 0:
        raise ValueError("empty pair list")
    d = pair_distances(descriptors, pairs)
    labels = np.array([p.label for p in pairs])
    order = np.argsort(d, kind="stable")  # ascending distance, ties by index
    ap = average_precision(labels[order] > 0)
    scores = -d
    return VerificationResult(
        ap=ap,
        auc=roc_auc(scores, labels),
        fpr95=fpr_at_recall(scores, labels),
    )


def _rank_of(distances: np.ndarray, target: int) -> int:
    """1-based rank of `target` when sorting by distance, ties by index."""
    d = distances[target]
    return int((distances < d).sum() + (distances[:target] == d).sum() + 1)


def matching_average_precisions(
    ref_descriptors: Sequence,
    ref_ids: Sequence[int],
    target_descriptors: Sequence,
    target_ids: Sequence[int],
) -> np.ndarray:
    """AP per reference descriptor with a ground-truth correspondence.

    Correspondence ids pair each reference with at most one target (a partial
    bijection; negative ids mean "no correspondence").  Each query ranks every
    target descriptor by ascending distance; the single relevant item is the
    true correspondence, so AP = 1 / rank.
    """
    ref_ids = np.asarray(ref_ids)
    target_ids = np.asarray(target_ids)
    valid = target_ids[target_ids >= 0]
    if valid.size != np.unique(valid).size:
        raise ValueError("target correspondence ids must be unique")
    id_to_index = {int(sid): i for i, sid in enumerate(target_ids) if sid >= 0}
    queries = [
        (i, id_to_index[int(sid)]) for i, sid in enumerate(ref_ids) if int(sid) in id_to_index
    ]
    if not queries:
        raise ValueError("empty correspondence set")
    dist = distance_matrix(ref_descriptors, target_descriptors)
    return np.array([1.0 / _rank_of(dist[qi], ti) for qi, ti in queries])


def eval_matching(
    sequences: Sequence[tuple[Sequence, Sequence[int], Sequence, Sequence[int]]],
) -> float:
    """Mean AP over all reference queries pooled across image pair sequences."""
    aps = [
        matching_average_precisions(ref, ref_ids, tgt, tgt_ids)
        for ref, ref_ids, tgt, tgt_ids in sequences
    ]
    if not aps:
        raise ValueError("no sequences")
    return float(np.concatenate(aps).mean())


def retrieval_average_precisions(
    query_descriptors: Sequence,
    query_ids: Sequence[int],
    pool_descriptors: Sequence,
    pool_ids: Sequence[int],
    self_indices: Sequence[int] | None = None,
) -> np.ndarray:
    """AP per query against a pool, relevant = same structure id.

    ``self_indices`` optionally names the pool entry that *is* each query, to
    be excluded from its own ranking (use -1 for "not in the pool").
    """
    query_ids = np.asarray(query_ids)
    pool_ids = np.asarray(pool_ids)
    dist = distance_matrix(query_descriptors, pool_descriptors)
    aps = np.empty(len(query_descriptors), dtype=np.float64)
    for q in range(len(query_descriptors)):
        include = np.ones(len(pool_ids), dtype=bool)
        if self_indices is not None and self_indices[q] >= 0:
            include[self_indices[q]] = False
        idx = np.flatnonzero(include)
        rel = pool_ids[idx] == query_ids[q]
        if not rel.any():
            raise ValueError(f"query {q}: structure {int(query_ids[q])} absent from pool")
        order = np.argsort(dist[q, idx], kind="stable")
        aps[q] = average_precision(rel[order])
    return aps


def eval_retrieval(
    query_descriptors: Sequence,
    query_ids: Sequence[int],
    pool_descriptors: Sequence,
    pool_ids: Sequence[int],
    self_indices: Sequence[int] | None = None,
) -> float:
    """Mean AP over retrieval queries."""
    return float(
        retrieval_average_precisions(
            query_descriptors, query_ids, pool_descriptors, pool_ids, self_indices
        ).mean()
    )
