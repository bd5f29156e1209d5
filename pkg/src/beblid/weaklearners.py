"""Box-pair weak learners and the threshold sweep used to select them.

A weak learner compares the mean gray values of two equal-size square boxes
inside a canonical patch and thresholds the difference.  Selecting the best
learner means scoring candidate pixel pairs at every box size and every
integer threshold; the sweep below evaluates all thresholds of one feature in
a single sorted pass instead of re-classifying the training set per threshold.

The sweep works on the quantized responses of both patches of every labeled
pair.  Starting from the accuracy of the "everything below threshold" state
(all pair agreements +1, so accuracy equals the positive weight mass), the
threshold moves upward through the sorted response values.  Crossing the
smaller response of a pair flips its agreement to -1 (delta -l*w), crossing
the larger response flips it back (+l*w).  Accumulating these deltas yields
the weighted accuracy at every candidate threshold in O(P log P) for P = 2N
response values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imaging import IntegralImage, box_sum, Box

__all__ = [
    "DEFAULT_SCALES",
    "LabeledPair",
    "PixelPairFeature",
    "ThresholdSweepResult",
    "ThresholdedWeakLearner",
    "best_weak_learner",
    "feature_response",
    "pair_agreement",
    "sample_candidates",
    "scale_responses",
    "threshold_rate",
    "wl_response",
]

# reference box sizes; all odd so the center pixel is well defined
DEFAULT_SCALES: tuple[int, ...] = (3, 5, 7, 9, 11, 13, 15)


@dataclass(frozen=True)
class PixelPairFeature:
    """Pixel pair (row, col) plus shared odd box size, in the patch frame."""

    p1: tuple[int, int]
    p2: tuple[int, int]
    s: int

    def __post_init__(self) -> None:
        if self.s < 1 or self.s % 2 == 0:
            raise ValueError(f"box size must be odd and positive, got {self.s}")


@dataclass(frozen=True)
class ThresholdedWeakLearner:
    """A box-pair feature thresholded at an integer value.

    The response is +1 when the quantized feature is <= threshold, else -1.
    """

    feature: PixelPairFeature
    threshold: int


@dataclass(frozen=True)
class LabeledPair:
    """Indices of two patches plus a same-structure label (+1) or not (-1)."""

    x: int
    y: int
    label: int

    def __post_init__(self) -> None:
        if self.label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.label}")


@dataclass(frozen=True)
class ThresholdSweepResult:
    """Ascending integer thresholds with the weighted accuracy at each."""

    thresholds: np.ndarray
    accuracies: np.ndarray


def _quantize_ratio(diff: int, denom: int) -> int:
    # round(diff / denom) with halves away from zero, in exact integer math
    mag = (2 * abs(diff) + denom) // (2 * denom)
    return -mag if diff < 0 else mag


def feature_response(ii: IntegralImage, feat: PixelPairFeature) -> int:
    """Quantized average-box feature: the mean difference rounded to an int."""
    d = box_sum(ii, Box(feat.p1[0], feat.p1[1], feat.s)) - box_sum(
        ii, Box(feat.p2[0], feat.p2[1], feat.s)
    )
    return _quantize_ratio(d, feat.s * feat.s)


def wl_response(ii: IntegralImage, wl: ThresholdedWeakLearner) -> int:
    """+1 when the quantized feature is <= threshold, else -1."""
    return 1 if feature_response(ii, wl.feature) <= wl.threshold else -1


def pair_agreement(wl: ThresholdedWeakLearner, sx: IntegralImage, sy: IntegralImage) -> int:
    """Product of the two weak-learner responses; +1 predicts "same"."""
    return wl_response(sx, wl) * wl_response(sy, wl)


def scale_responses(
    stack: np.ndarray,
    p1: tuple[int, int],
    p2: tuple[int, int],
    scales: Sequence[int],
) -> np.ndarray:
    """Quantized responses of one pixel pair at several box sizes.

    ``stack`` is a ``(n, side + 1, side + 1)`` integral stack.  Returns an
    ``(len(scales), n)`` int16 array.  All arithmetic is integer-exact, so the
    result matches :func:`feature_response` bit for bit.
    """
    s = np.asarray(scales, dtype=np.int64)
    half = s // 2
    side = stack.shape[1] - 1
    for r, c in (p1, p2):
        if r - half.max() < 0 or c - half.max() < 0 or r + half.max() >= side or c + half.max() >= side:
            raise ValueError(f"box out of bounds at ({r}, {c}) for scale {int(2 * half.max() + 1)}")

    def boxes(p: tuple[int, int]) -> np.ndarray:
        r, c = p
        r0, r1 = r - half, r + half + 1
        c0, c1 = c - half, c + half + 1
        # corner sums stay nonnegative, so uint64 arithmetic is exact
        return (stack[:, r1, c1] + stack[:, r0, c0] - stack[:, r0, c1] - stack[:, r1, c0]).astype(
            np.int64
        )

    diff = boxes(p1) - boxes(p2)  # (n, n_scales)
    sq = s * s
    mag = (2 * np.abs(diff) + sq) // (2 * sq)
    return np.where(diff < 0, -mag, mag).astype(np.int16).T


def _threshold_grid(uniq: np.ndarray) -> np.ndarray:
    """Candidate thresholds from the sorted unique integer responses.

    One threshold below every value, the floor of each midpoint between
    consecutive values, and one at/above the largest value.  Flooring keeps
    thresholds integral without changing how integer responses classify.
    """
    u = uniq.astype(np.int64)
    if u.size == 1:
        return np.array([u[0] - 1, u[0]], dtype=np.int64)
    first = (3 * u[0] - u[1]) // 2
    last = (3 * u[-1] - u[-2]) // 2
    mids = (u[:-1] + u[1:]) // 2
    return np.concatenate(([first], mids, [last]))


def _pair_arrays(pairs: Sequence[LabeledPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xi = np.fromiter((p.x for p in pairs), dtype=np.int64, count=len(pairs))
    yi = np.fromiter((p.y for p in pairs), dtype=np.int64, count=len(pairs))
    labels = np.fromiter((p.label for p in pairs), dtype=np.int64, count=len(pairs))
    return xi, yi, labels


def _batch_sweep(
    v1: np.ndarray,
    v2: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Threshold sweep over rows of response matrices.

    ``v1``/``v2`` hold the integer responses of the first/second patch of every
    pair, one row per feature variant.  Returns ``(thresholds, accuracies)``
    per row.
    """
    lw = labels * weights
    d1 = np.where(v1 <= v2, -lw, lw)
    values = np.concatenate([v1, v2], axis=1)
    deltas = np.concatenate([d1, -d1], axis=1)
    order = np.argsort(values, axis=1, kind="stable")
    sv = np.take_along_axis(values, order, axis=1)
    cum = np.cumsum(np.take_along_axis(deltas, order, axis=1), axis=1)
    eps0 = float(weights[labels > 0].sum())
    out = []
    for r in range(values.shape[0]):
        row = sv[r]
        uniq = row[np.concatenate(([True], row[1:] != row[:-1]))]
        thresholds = _threshold_grid(uniq)
        counts = np.searchsorted(row, thresholds, side="right")
        acc = np.full(thresholds.shape, eps0)
        nz = counts > 0
        acc[nz] += cum[r, counts[nz] - 1]
        out.append((thresholds, acc))
    return out


def threshold_rate(
    pairs: Sequence[LabeledPair],
    responses: np.ndarray,
    weights: np.ndarray,
) -> ThresholdSweepResult:
    """Weighted pair-classification accuracy at every distinct threshold.

    ``responses`` maps patch index to its quantized integer feature value.
    For each returned threshold T the accuracy is the total weight of pairs
    whose agreement (both responses on the same side of T) matches the label.
    The first threshold lies below all responses, so its accuracy equals the
    positive weight mass.
    """
    if len(pairs) == 0:
        raise ValueError("empty pair list")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(pairs),):
        raise ValueError(f"need one weight per pair, got {w.shape} for {len(pairs)} pairs")
    if np.any(w < 0):
        raise ValueError("negative weights")
    resp = np.asarray(responses)
    xi, yi, labels = _pair_arrays(pairs)
    rows = _batch_sweep(resp[xi][None, :], resp[yi][None, :], labels, w)
    thresholds, accuracies = rows[0]
    return ThresholdSweepResult(thresholds=thresholds, accuracies=accuracies)


def sample_candidates(
    rng: np.random.Generator,
    n_pairs: int,
    patch_side: int,
    scales: Sequence[int] = DEFAULT_SCALES,
) -> list[PixelPairFeature]:
    """Draw pixel pairs uniformly over positions valid for every scale.

    Both points are drawn from the region where the largest box still fits
    inside the patch; the two points of a pair are always distinct.  The
    returned features carry the smallest scale as a placeholder; selection
    sweeps all scales regardless.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    margin = max(scales) // 2
    lo, hi = margin, patch_side - 1 - margin
    if hi < lo:
        raise ValueError(f"patch side {patch_side} too small for scale {max(scales)}")
    p1 = rng.integers(lo, hi + 1, size=(n_pairs, 2))
    p2 = rng.integers(lo, hi + 1, size=(n_pairs, 2))
    same = np.all(p1 == p2, axis=1)
    while np.any(same):
        p2[same] = rng.integers(lo, hi + 1, size=(int(same.sum()), 2))
        same = np.all(p1 == p2, axis=1)
    s_min = min(scales)
    return [
        PixelPairFeature((int(a[0]), int(a[1])), (int(b[0]), int(b[1])), s_min)
        for a, b in zip(p1, p2)
    ]


def best_weak_learner(
    candidates: Sequence[PixelPairFeature],
    pairs: Sequence[LabeledPair],
    stack: np.ndarray,
    weights: np.ndarray,
    scales: Sequence[int] = DEFAULT_SCALES,
) -> tuple[ThresholdedWeakLearner, float]:
    """Exhaustive search over candidates x scales x thresholds.

    Returns the weak learner with the lowest weighted error together with
    that error.  Ties break toward the lowest candidate index, then the
    lowest scale, then the lowest threshold, which makes the selection
    deterministic regardless of evaluation order.  Weights are expected to
    sum to one.
    """
    if len(candidates) == 0:
        raise ValueError("empty candidate list")
    if len(pairs) == 0:
        raise ValueError("empty pair list")
    w = np.asarray(weights, dtype=np.float64)
    xi, yi, labels = _pair_arrays(pairs)
    best_err = np.inf
    best: ThresholdedWeakLearner | None = None
    scales = tuple(scales)
    for cand in candidates:
        resp = scale_responses(stack, cand.p1, cand.p2, scales)
        rows = _batch_sweep(resp[:, xi], resp[:, yi], labels, w)
        for si, (thresholds, accs) in enumerate(rows):
            j = int(np.argmax(accs))
            err = 1.0 - float(accs[j])
            if err < best_err:
                best_err = err
                best = ThresholdedWeakLearner(
                    PixelPairFeature(cand.p1, cand.p2, scales[si]), int(thresholds[j])
                )
    assert best is not None
    return best, float(min(max(best_err, 0.0), 1.0))
