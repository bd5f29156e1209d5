"""Hamming / squared-L2 distances and brute-force nearest-neighbor matching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .descriptor import BinaryDescriptor, RealDescriptor

__all__ = ["MatchResult", "distance_matrix", "hamming", "l2_sq", "match_nn"]

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


@dataclass(frozen=True)
class MatchResult:
    query_index: int
    train_index: int
    distance: float


def hamming(a: BinaryDescriptor, b: BinaryDescriptor) -> int:
    """Number of differing bits between two equal-length binary descriptors."""
    if a.nbits != b.nbits:
        raise ValueError(f"descriptor length mismatch: {a.nbits} vs {b.nbits}")
    return int(_POPCOUNT[np.bitwise_xor(a.packed, b.packed)].sum())


def l2_sq(a: RealDescriptor, b: RealDescriptor) -> float:
    """Squared Euclidean distance between two equal-length real descriptors."""
    if a.values.shape != b.values.shape:
        raise ValueError(f"descriptor length mismatch: {a.values.shape} vs {b.values.shape}")
    d = a.values - b.values
    return float(np.sum(d * d))


def _as_binary_stack(descs: Sequence[BinaryDescriptor]) -> np.ndarray:
    nbits = descs[0].nbits
    if any(d.nbits != nbits for d in descs):
        raise ValueError("mixed descriptor lengths")
    return np.stack([d.packed for d in descs])


def _as_real_stack(descs: Sequence[RealDescriptor]) -> np.ndarray:
    dim = descs[0].values.size
    if any(d.values.size != dim for d in descs):
        raise ValueError("mixed descriptor lengths")
    return np.stack([d.values for d in descs])


def _infer_metric(descs: Sequence) -> str:
    if isinstance(descs[0], BinaryDescriptor):
        return "hamming"
    if isinstance(descs[0], RealDescriptor):
        return "l2"
    raise ValueError(f"unsupported descriptor type {type(descs[0]).__name__}")


def distance_matrix(
    queries: Sequence,
    train: Sequence,
    metric: str | None = None,
) -> np.ndarray:
    """All pairwise distances, queries along rows.  Metric inferred if None."""
    if len(queries) == 0 or len(train) == 0:
        raise ValueError("empty descriptor set")
    qm = _infer_metric(queries)
    tm = _infer_metric(train)
    if qm != tm:
        raise ValueError(f"descriptor type mismatch: {qm} vs {tm}")
    if metric is None:
        metric = qm
    if metric != qm:
        raise ValueError(f"metric {metric!r} does not apply to {qm} descriptors")

    if metric == "hamming":
        q = _as_binary_stack(queries)
        t = _as_binary_stack(train)
        if q.shape[1] != t.shape[1]:
            raise ValueError("descriptor length mismatch between query and train sets")
        out = np.empty((q.shape[0], t.shape[0]), dtype=np.int32)
        chunk = max(1, 4_000_000 // max(1, t.shape[0] * t.shape[1]))
        for i in range(0, q.shape[0], chunk):
            xor = q[i : i + chunk, None, :] ^ t[None, :, :]
            out[i : i + chunk] = _POPCOUNT[xor].sum(axis=2, dtype=np.int32)
        return out
    if metric == "l2":
        q = _as_real_stack(queries)
        t = _as_real_stack(train)
        if q.shape[1] != t.shape[1]:
            raise ValueError("descriptor length mismatch between query and train sets")
        out = np.empty((q.shape[0], t.shape[0]), dtype=np.float64)
        chunk = max(1, 2_000_000 // max(1, t.shape[0] * t.shape[1]))
        for i in range(0, q.shape[0], chunk):
            d = q[i : i + chunk, None, :] - t[None, :, :]
            out[i : i + chunk] = np.sum(d * d, axis=2)
        return out
    raise ValueError(f"unknown metric {metric!r}")


def match_nn(
    queries: Sequence,
    train: Sequence,
    metric: str | None = None,
    cross_check: bool = False,
) -> list[MatchResult]:
    """Nearest train descriptor for each query, ties to the lowest train index.

    With ``cross_check`` only mutual nearest neighbors survive (the reverse
    direction breaks ties toward the lowest query index).
    """
    if len(train) == 0:
        raise ValueError("empty train set")
    if len(queries) == 0:
        return []
    dist = distance_matrix(queries, train, metric)
    nn = dist.argmin(axis=1)  # first minimum = lowest train index
    if cross_check:
        reverse = dist.argmin(axis=0)
        keep = np.flatnonzero(reverse[nn] == np.arange(len(queries)))
    else:
        keep = np.arange(len(queries))
    hamming_metric = dist.dtype.kind == "i"
    out = []
    for qi in keep.tolist():
        ti = int(nn[qi])
        d = int(dist[qi, ti]) if hamming_metric else float(dist[qi, ti])
        out.append(MatchResult(qi, ti, d))
    return out
