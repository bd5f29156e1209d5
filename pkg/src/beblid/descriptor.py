"""Descriptor models: keypoint-aligned extraction, truncation, serialization.

A model is a trained ensemble whose pixel-pair coordinates live in a
canonical square patch frame.  To describe a keypoint the pattern is rotated
by the keypoint angle, scaled by ``scale_multiplier * size / patch_side`` and
translated to the keypoint position; box sizes scale accordingly and stay
odd.  Keypoints whose support leaves the image are dropped and reported, not
clamped.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .boosting import MODE_BINARY, MODE_REAL, TrainedEnsemble
from .imaging import IntegralImage
from .weaklearners import PixelPairFeature, ThresholdedWeakLearner, scale_responses

__all__ = [
    "BinaryDescriptor",
    "DescriptorModel",
    "Keypoint",
    "ModelFormatError",
    "canonical_keypoint",
    "describe_binary",
    "describe_patches_binary",
    "describe_patches_real",
    "describe_real",
    "deserialize_model",
    "format_descriptors",
    "format_keypoints",
    "map_feature_to_keypoint",
    "parse_descriptors",
    "parse_keypoints",
    "patch_responses",
    "serialize_model",
    "truncate_model",
]


class ModelFormatError(ValueError):
    """Malformed serialized model data."""


@dataclass(frozen=True)
class Keypoint:
    """Image location with support size (pixels) and orientation (degrees).

    ``angle`` is None for unoriented keypoints, which behave like angle 0.
    """

    x: float
    y: float
    size: float
    angle: float | None = None

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError("keypoint size must be > 0")


@dataclass(frozen=True, eq=False)
class BinaryDescriptor:
    """Fixed-length bit vector packed into bytes, learner 0 at the MSB of byte 0."""

    packed: np.ndarray
    nbits: int

    def __post_init__(self) -> None:
        packed = np.asarray(self.packed, dtype=np.uint8)
        if packed.shape != ((self.nbits + 7) // 8,):
            raise ValueError("packed length does not match bit count")
        object.__setattr__(self, "packed", packed)

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "BinaryDescriptor":
        arr = np.asarray(bits, dtype=np.uint8)
        return cls(np.packbits(arr), int(arr.size))

    def bits(self) -> np.ndarray:
        return np.unpackbits(self.packed)[: self.nbits]

    def hex(self) -> str:
        return self.packed.tobytes().hex()

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, BinaryDescriptor)
            and self.nbits == other.nbits
            and np.array_equal(self.packed, other.packed)
        )


@dataclass(frozen=True, eq=False)
class RealDescriptor:
    """Real-valued descriptor with entries +-sqrt(alpha_k)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RealDescriptor) and np.array_equal(self.values, other.values)


@dataclass
class DescriptorModel:
    """Trained ensemble plus the geometry needed to apply it to keypoints."""

    ensemble: TrainedEnsemble
    patch_side: int
    scale_multiplier: float = 1.0

    # packed per-learner arrays, filled in __post_init__
    _rows: np.ndarray = field(init=False, repr=False)
    _cols: np.ndarray = field(init=False, repr=False)
    _sizes: np.ndarray = field(init=False, repr=False)
    _thresholds: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.patch_side != self.ensemble.patch_side:
            raise ValueError("model frame must match the ensemble patch side")
        if self.scale_multiplier <= 0:
            raise ValueError("scale_multiplier must be > 0")
        k = len(self.ensemble.learners)
        rows = np.empty((2, k), dtype=np.int64)
        cols = np.empty((2, k), dtype=np.int64)
        sizes = np.empty(k, dtype=np.int64)
        thresholds = np.empty(k, dtype=np.int64)
        for i, wl in enumerate(self.ensemble.learners):
            f = wl.feature
            half = f.s // 2
            for p in (f.p1, f.p2):
                if not (half <= p[0] <= self.patch_side - 1 - half) or not (
                    half <= p[1] <= self.patch_side - 1 - half
                ):
                    raise ValueError(f"learner {i} box leaves the {self.patch_side}x{self.patch_side} frame")
            rows[0, i], cols[0, i] = f.p1
            rows[1, i], cols[1, i] = f.p2
            sizes[i] = f.s
            thresholds[i] = wl.threshold
        self._rows = rows
        self._cols = cols
        self._sizes = sizes
        self._thresholds = thresholds

    @property
    def mode(self) -> str:
        return self.ensemble.mode

    @property
    def nbits(self) -> int:
        return len(self.ensemble.learners)


def canonical_keypoint(model: DescriptorModel) -> Keypoint:
    """The keypoint under which extraction reduces to the identity mapping."""
    c = (model.patch_side - 1) / 2.0
    return Keypoint(x=c, y=c, size=float(model.patch_side), angle=None)


_CHUNK = 512  # keypoints per batch; keeps working arrays inside the caches


def _kp_arrays(kps: Sequence[Keypoint]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    xs = np.array([kp.x for kp in kps], dtype=np.float64)
    ys = np.array([kp.y for kp in kps], dtype=np.float64)
    sizes = np.array([kp.size for kp in kps], dtype=np.float64)
    angles = np.array([0.0 if kp.angle is None else kp.angle for kp in kps], dtype=np.float64)
    return xs, ys, sizes, angles


def _map_centers(
    xs32: np.ndarray,
    ys32: np.ndarray,
    a32: np.ndarray,
    b32: np.ndarray,
    drow: np.ndarray,
    dcol: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate, scale and translate canonical offsets; returns integer (rows, cols).

    ``a32``/``b32`` are sigma*cos(theta) and sigma*sin(theta) per keypoint;
    offsets are float32 of shape (m,), outputs int32 of shape (n, m).
    """
    a = a32[:, None]
    b = b32[:, None]
    colf = a * dcol
    colf -= b * drow
    colf += xs32[:, None]
    rowf = b * dcol
    rowf += a * drow
    rowf += ys32[:, None]
    # round to nearest with halves up: floor(x + 0.5), done in place
    half = np.float32(0.5)
    colf += half
    rowf += half
    cc = np.floor(colf, out=colf).astype(np.int32)
    rr = np.floor(rowf, out=rowf).astype(np.int32)
    return rr, cc


def _map_sizes(sig32: np.ndarray, sizes32: np.ndarray) -> np.ndarray:
    """Scaled box sizes, at least 1, forced odd by rounding even values up."""
    spf = sig32[:, None] * sizes32[None, :]
    sp = np.trunc(spf + np.float32(0.5)).astype(np.int32)
    sp |= 1  # 0 -> 1 and even -> odd, odd unchanged
    return sp


def _kp_transform(
    kps: Sequence[Keypoint], model: DescriptorModel
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-keypoint float32 terms (x, y, sigma, sigma*cos, sigma*sin)."""
    xs, ys, sizes, angles = _kp_arrays(kps)
    sig = model.scale_multiplier * sizes / model.patch_side
    th = np.deg2rad(angles)
    a = sig * np.cos(th)
    b = sig * np.sin(th)
    return (
        xs.astype(np.float32),
        ys.astype(np.float32),
        sig.astype(np.float32),
        a.astype(np.float32),
        b.astype(np.float32),
    )


def map_feature_to_keypoint(
    feat: PixelPairFeature,
    kp: Keypoint,
    model: DescriptorModel,
) -> tuple[tuple[int, int], tuple[int, int], int]:
    """Map one canonical feature into image coordinates for a keypoint.

    Returns ((row1, col1), (row2, col2), size'), the same mapping the batch
    extraction path applies.
    """
    c0 = (model.patch_side - 1) / 2.0
    xs32, ys32, sig32, a32, b32 = _kp_transform([kp], model)
    drow = np.array([feat.p1[0] - c0, feat.p2[0] - c0], dtype=np.float32)
    dcol = np.array([feat.p1[1] - c0, feat.p2[1] - c0], dtype=np.float32)
    rr, cc = _map_centers(xs32, ys32, a32, b32, drow, dcol)
    sp = _map_sizes(sig32, np.array([feat.s], dtype=np.float32))
    return (
        (int(rr[0, 0]), int(cc[0, 0])),
        (int(rr[0, 1]), int(cc[0, 1])),
        int(sp[0, 0]),
    )


def _chunk_bits(
    flat: np.ndarray,
    h: int,
    w: int,
    xs32: np.ndarray,
    ys32: np.ndarray,
    sig32: np.ndarray,
    a32: np.ndarray,
    b32: np.ndarray,
    drow: np.ndarray,
    dcol: np.ndarray,
    sizes32: np.ndarray,
    rhs_t: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Bits and kept-row indices for one keypoint chunk."""
    k = sizes32.size
    stride = w + 1
    rr, cc = _map_centers(xs32, ys32, a32, b32, drow, dcol)
    sp = _map_sizes(sig32, sizes32)
    half2 = np.concatenate([sp >> 1, sp >> 1], axis=1)
    ok = rr >= half2
    ok &= cc >= half2
    ok &= (rr + half2) < h
    ok &= (cc + half2) < w
    keep = np.flatnonzero(ok.all(axis=1))
    if keep.size == 0:
        return np.zeros((0, k), dtype=bool), keep
    if keep.size != rr.shape[0]:
        rr, cc, sp, half2 = rr[keep], cc[keep], sp[keep], half2[keep]
    base = rr * stride
    base += cc
    u = half2 * (stride + 1)
    idx = base - u
    g = flat[idx]  # top-left corner (r0, c0)
    idx += u
    idx += u
    idx += stride + 1
    g += flat[idx]  # (r1, c1)
    v = half2
    v *= stride - 1  # half2 is dead from here on
    np.subtract(base, v, out=idx)
    idx += 1
    g -= flat[idx]  # (r0, c1)
    np.add(base, v, out=idx)
    idx += stride
    g -= flat[idx]  # (r1, c0)
    diff = g[:, :k] - g[:, k:]
    if flat.dtype == np.int32:
        sq = sp * sp
        rhs = rhs_t[None, :].astype(np.int32) * sq
    else:
        diff = diff.astype(np.int64)
        sq = sp.astype(np.int64)
        sq *= sq
        rhs = rhs_t[None, :] * sq
    diff += diff
    return diff < rhs, keep


def _keypoint_bits(
    ii: IntegralImage,
    kps: Sequence[Keypoint],
    model: DescriptorModel,
    threads: int | None = None,
) -> tuple[np.ndarray, list[int]]:
    """Thresholded responses for every keypoint whose support stays in bounds.

    Returns an (n_kept, K) boolean array (True = response <= threshold) plus
    the kept input indices in input order.  Bits are decided on the integer
    predicate 2*diff < (2T+1)*s'^2, which is exact: odd box sizes make ties
    impossible, so this equals quantize-then-compare.

    Work proceeds in keypoint chunks, optionally across threads; results are
    assembled in input order so the thread count never changes the output.
    """
    k = model.nbits
    if k == 0:
        raise ValueError("empty model")
    n = len(kps)
    if n == 0:
        return np.zeros((0, k), dtype=bool), []
    xs32, ys32, sig32, a32, b32 = _kp_transform(kps, model)
    c0 = (model.patch_side - 1) / 2.0
    drow = (np.concatenate([model._rows[0], model._rows[1]]) - c0).astype(np.float32)
    dcol = (np.concatenate([model._cols[0], model._cols[1]]) - c0).astype(np.float32)
    sizes32 = model._sizes.astype(np.float32)
    rhs_t = (2 * model._thresholds + 1).astype(np.int64)

    h, w = ii.height, ii.width
    flat = ii.table.reshape(-1)
    # int32 halves the gather traffic; needs the image sum and the bit
    # predicate products (bounded by 511 * min(h, w)^2) to fit
    small = int(ii.table[-1, -1]) <= np.iinfo(np.int32).max and 511 * min(h, w) ** 2 < 2**31
    flat = flat.astype(np.int32) if small else flat.view(np.int64)

    starts = list(range(0, n, _CHUNK))

    def run(i0: int) -> tuple[np.ndarray, np.ndarray]:
        i1 = min(n, i0 + _CHUNK)
        return _chunk_bits(
            flat, h, w,
            xs32[i0:i1], ys32[i0:i1], sig32[i0:i1], a32[i0:i1], b32[i0:i1],
            drow, dcol, sizes32, rhs_t,
        )

    n_threads = _resolve_threads(threads)
    if n_threads > 1 and len(starts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(i0) for i0 in starts]

    bit_blocks = [bits for bits, keep in results if keep.size]
    kept: list[int] = []
    for i0, (_, keep) in zip(starts, results):
        kept.extend((i0 + keep).tolist())
    if not bit_blocks:
        return np.zeros((0, k), dtype=bool), []
    return np.concatenate(bit_blocks), kept


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("BEBLID_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return min(4, os.cpu_count() or 1)


def describe_binary(
    ii: IntegralImage,
    kps: Sequence[Keypoint],
    model: DescriptorModel,
    threads: int | None = None,
) -> tuple[list[BinaryDescriptor], list[int]]:
    """Binary descriptors for the keypoints whose support stays in the image.

    Bit k is set when learner k's quantized response is <= its threshold.
    Returns the descriptors in input order together with the kept input
    indices; out-of-bounds keypoints are dropped, never clamped.
    """
    if model.mode != MODE_BINARY:
        raise ValueError("model mode must be binary")
    bits, kept = _keypoint_bits(ii, kps, model, threads)
    packed = np.packbits(bits, axis=1)
    return [BinaryDescriptor(packed[i], model.nbits) for i in range(len(kept))], kept


def describe_real(
    ii: IntegralImage,
    kps: Sequence[Keypoint],
    model: DescriptorModel,
    threads: int | None = None,
) -> tuple[list[RealDescriptor], list[int]]:
    """Real-valued descriptors with entries +-sqrt(alpha_k)."""
    if model.mode != MODE_REAL:
        raise ValueError("model mode must be real")
    bits, kept = _keypoint_bits(ii, kps, model, threads)
    root = np.sqrt(model.ensemble.alphas)
    values = np.where(bits, root[None, :], -root[None, :])
    return [RealDescriptor(values[i]) for i in range(len(kept))], kept


def patch_responses(stack: np.ndarray, model: DescriptorModel) -> np.ndarray:
    """Quantized responses of every learner on canonical patches, shape (n, K).

    This is the patch-frame path: no rotation or scaling, coordinates used as
    stored.  ``stack`` is an integral stack of ``patch_side`` sized patches.
    """
    k = model.nbits
    if k == 0:
        raise ValueError("empty model")
    out = np.empty((stack.shape[0], k), dtype=np.int16)
    for i, wl in enumerate(model.ensemble.learners):
        out[:, i] = scale_responses(stack, wl.feature.p1, wl.feature.p2, (wl.feature.s,))[0]
    return out


def describe_patches_binary(stack: np.ndarray, model: DescriptorModel) -> list[BinaryDescriptor]:
    """Binary descriptors of canonical patches (patch-frame path)."""
    if model.mode != MODE_BINARY:
        raise ValueError("model mode must be binary")
    resp = patch_responses(stack, model)
    packed = np.packbits((resp <= model._thresholds[None, :]).astype(np.uint8), axis=1)
    return [BinaryDescriptor(packed[i], model.nbits) for i in range(stack.shape[0])]


def describe_patches_real(stack: np.ndarray, model: DescriptorModel) -> list[RealDescriptor]:
    """Real-valued descriptors of canonical patches (patch-frame path)."""
    if model.mode != MODE_REAL:
        raise ValueError("model mode must be real")
    resp = patch_responses(stack, model)
    root = np.sqrt(model.ensemble.alphas)
    values = np.where(resp <= model._thresholds[None, :], root[None, :], -root[None, :])
    return [RealDescriptor(values[i]) for i in range(stack.shape[0])]


def truncate_model(model: DescriptorModel, k: int) -> DescriptorModel:
    """Keep the first ``k`` learners; descriptors become the k-bit prefix."""
    if k > model.nbits:
        raise ValueError(f"cannot truncate to {k} learners, model has {model.nbits}")
    if k < 1:
        raise ValueError("k must be >= 1")
    e = model.ensemble
    ensemble = TrainedEnsemble(
        learners=list(e.learners[:k]),
        alphas=e.alphas[:k].copy(),
        gamma=e.gamma,
        mode=e.mode,
        patch_side=e.patch_side,
        positive_ratio=e.positive_ratio,
        seed=e.seed,
    )
    return DescriptorModel(ensemble, model.patch_side, model.scale_multiplier)


# --------------------------------------------------------------------------
# model wire format
# --------------------------------------------------------------------------

_MAGIC = b"BEBL"
_VERSION = 1
_HEADER = struct.Struct("<4sIBHId")  # magic, version, mode, patch side, K, scale multiplier
_RECORD = struct.Struct("<hhhhHid")  # p1 row/col, p2 row/col, s, threshold, alpha
_MODE_CODES = {MODE_BINARY: 0, MODE_REAL: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


def serialize_model(model: DescriptorModel) -> bytes:
    """Little-endian binary encoding of a model; round-trips exactly."""
    e = model.ensemble
    out = bytearray(
        _HEADER.pack(
            _MAGIC,
            _VERSION,
            _MODE_CODES[e.mode],
            model.patch_side,
            len(e.learners),
            model.scale_multiplier,
        )
    )
    for wl, alpha in zip(e.learners, e.alphas):
        f = wl.feature
        out += _RECORD.pack(f.p1[0], f.p1[1], f.p2[0], f.p2[1], f.s, wl.threshold, float(alpha))
    return bytes(out)


def deserialize_model(data: bytes) -> DescriptorModel:
    """Decode :func:`serialize_model` output, validating structure throughout."""
    if len(data) < _HEADER.size:
        raise ModelFormatError("truncated stream")
    magic, version, mode_code, side, k, mult = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC:
        raise ModelFormatError("bad magic")
    if version != _VERSION:
        raise ModelFormatError(f"unsupported version {version}")
    if mode_code not in _MODE_NAMES:
        raise ModelFormatError(f"unknown mode code {mode_code}")
    expected = _HEADER.size + k * _RECORD.size
    if len(data) < expected:
        raise ModelFormatError("truncated stream")
    if len(data) > expected:
        raise ModelFormatError(f"record count mismatch: {len(data) - expected} trailing bytes")
    learners = []
    alphas = np.empty(k, dtype=np.float64)
    for i in range(k):
        r1, c1, r2, c2, s, t, alpha = _RECORD.unpack_from(data, _HEADER.size + i * _RECORD.size)
        learners.append(ThresholdedWeakLearner(PixelPairFeature((r1, c1), (r2, c2), s), t))
        alphas[i] = alpha
    ensemble = TrainedEnsemble(
        learners=learners,
        alphas=alphas,
        gamma=1.0,
        mode=_MODE_NAMES[mode_code],
        patch_side=side,
    )
    return DescriptorModel(ensemble, side, mult)


# --------------------------------------------------------------------------
# keypoint and descriptor text formats
# --------------------------------------------------------------------------


def parse_keypoints(text: str) -> list[Keypoint]:
    """Parse "x y size angle" lines; angle "-" means unoriented, '#' comments."""
    kps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"keypoint line {lineno}: expected 'x y size angle', got {raw!r}")
        try:
            x, y, size = float(parts[0]), float(parts[1]), float(parts[2])
            angle = None if parts[3] == "-" else float(parts[3])
        except ValueError:
            raise ValueError(f"keypoint line {lineno}: bad number in {raw!r}") from None
        kps.append(Keypoint(x, y, size, angle))
    return kps


def format_keypoints(kps: Sequence[Keypoint]) -> str:
    lines = [
        f"{kp.x:.17g} {kp.y:.17g} {kp.size:.17g} "
        + ("-" if kp.angle is None else f"{kp.angle:.17g}")
        for kp in kps
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def format_descriptors(
    descriptors: Sequence[BinaryDescriptor] | Sequence[RealDescriptor],
    kept: Sequence[int],
    mode: str,
    k: int | None = None,
) -> str:
    """Descriptor file: a header, one row per kept keypoint, the kept indices.

    Binary rows are lowercase hex with learner 0 at the most significant bit;
    real rows are space-separated decimal values.  The kept line is omitted
    when nothing was described.  ``k`` pins the header length when the
    descriptor list is empty.
    """
    if mode not in (MODE_BINARY, MODE_REAL):
        raise ValueError(f"unknown mode {mode!r}")
    if len(descriptors) != len(kept):
        raise ValueError("need one kept index per descriptor")
    if mode == MODE_BINARY:
        derived = descriptors[0].nbits if descriptors else 0
        rows = [d.hex() for d in descriptors]
    else:
        derived = len(descriptors[0].values) if descriptors else 0
        rows = [" ".join(f"{v:.17g}" for v in d.values) for d in descriptors]
    if k is None:
        k = derived
    elif descriptors and k != derived:
        raise ValueError(f"descriptors carry {derived} components, header asked for {k}")
    lines = [f"K={k} N={len(descriptors)} mode={mode}"]
    lines.extend(rows)
    if descriptors:
        lines.append("kept=" + " ".join(str(i) for i in kept))
    return "\n".join(lines) + "\n"


def parse_descriptors(text: str):
    """Inverse of :func:`format_descriptors`.

    Returns ``(descriptors, kept, mode)``.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty descriptor file")
    header = dict(part.split("=", 1) for part in lines[0].split())
    try:
        k = int(header["K"])
        n = int(header["N"])
        mode = header["mode"]
    except (KeyError, ValueError):
        raise ValueError(f"bad descriptor header {lines[0]!r}") from None
    if mode not in (MODE_BINARY, MODE_REAL):
        raise ValueError(f"unknown mode {mode!r}")
    if len(lines) < 1 + n + (1 if n else 0):
        raise ValueError("descriptor file shorter than header declares")
    descriptors: list = []
    for row in lines[1 : 1 + n]:
        if mode == MODE_BINARY:
            raw = bytes.fromhex(row.strip())
            if len(raw) != (k + 7) // 8:
                raise ValueError(f"descriptor row has {len(raw)} bytes, expected {(k + 7) // 8}")
            descriptors.append(BinaryDescriptor(np.frombuffer(raw, dtype=np.uint8).copy(), k))
        else:
            values = np.array([float(v) for v in row.split()], dtype=np.float64)
            if values.size != k:
                raise ValueError(f"descriptor row has {values.size} values, expected {k}")
            descriptors.append(RealDescriptor(values))
    if n:
        kept_line = lines[1 + n]
        if not kept_line.startswith("kept="):
            raise ValueError("missing kept-index list")
        body = kept_line[len("kept=") :].split()
        kept = [int(v) for v in body]
        if len(kept) != n:
            raise ValueError("kept-index list length does not match N")
    else:
        kept = []
    return descriptors, kept, mode
