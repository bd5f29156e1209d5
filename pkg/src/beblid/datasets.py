"""Patch sets: mosaic ingestion, pair files and a synthetic generator.

Training data is a set of equally sized grayscale patches with a structure id
per patch; patches sharing an id show the same physical point.  Mosaic files
carry 64x64 patches in a row-major grid next to an info file with one
"point_id ..." line per patch; those patches are halved to 32x32 on load.

The synthetic generator renders each structure as a parametric field (an
oriented gradient plus a few Gaussian blobs) and produces instances by
sampling that field under small rotations, sub-pixel shifts, brightness
offsets and pixel noise, so desk-scale training and tests need no external
data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .imaging import GrayImage, load_pgm, write_pgm
from .weaklearners import LabeledPair

__all__ = [
    "Jitter",
    "PatchSet",
    "downscale_patch",
    "load_brown",
    "load_pairs",
    "load_patchset",
    "save_pairs",
    "save_patchset",
    "slice_mosaic",
    "synth_patchset",
]

_BROWN_PATCH_SIDE = 64


@dataclass
class PatchSet:
    """Stack of same-size patches with one structure id each."""

    patches: np.ndarray
    structure_ids: np.ndarray

    def __post_init__(self) -> None:
        patches = np.asarray(self.patches)
        ids = np.asarray(self.structure_ids, dtype=np.int64)
        if patches.ndim != 3 or patches.shape[1] != patches.shape[2]:
            raise ValueError("patches must be a (n, side, side) stack")
        if patches.dtype != np.uint8:
            patches = patches.astype(np.uint8)
        if ids.shape != (patches.shape[0],):
            raise ValueError("need one structure id per patch")
        if ids.size and ids.min() < 0:
            raise ValueError("structure ids must be nonnegative")
        self.patches = patches
        self.structure_ids = ids

    def __len__(self) -> int:
        return self.patches.shape[0]

    @property
    def side(self) -> int:
        return self.patches.shape[1]

    def patch(self, i: int) -> GrayImage:
        return GrayImage(self.patches[i])


def downscale_patch(img: GrayImage) -> GrayImage:
    """Halve an even-sided patch by exact 2x2 block averaging.

    Each output pixel is the rounded mean of its four source pixels, halves
    away from zero.
    """
    side = img.height
    if img.width != side:
        raise ValueError("patch must be square")
    if side % 2:
        raise ValueError(f"patch side must be even, got {side}")
    blocks = img.pixels.reshape(side // 2, 2, side // 2, 2).astype(np.uint32)
    sums = blocks.sum(axis=(1, 3))
    return GrayImage(((sums + 2) // 4).astype(np.uint8))


def slice_mosaic(mosaic: GrayImage, patch_side: int = _BROWN_PATCH_SIDE) -> np.ndarray:
    """Cut a mosaic into its row-major grid of patches, un-downscaled."""
    h, w = mosaic.pixels.shape
    if h % patch_side or w % patch_side:
        raise ValueError(f"mosaic {w}x{h} is not a multiple of {patch_side}")
    rows, cols = h // patch_side, w // patch_side
    return (
        mosaic.pixels.reshape(rows, patch_side, cols, patch_side)
        .swapaxes(1, 2)
        .reshape(rows * cols, patch_side, patch_side)
    )


def load_brown(mosaics: Sequence[GrayImage], info_text: str) -> PatchSet:
    """Assemble a patch set from 64x64 patch mosaics and their info file.

    The info file carries one "point_id ..." line per patch, in mosaic order.
    Patches are downscaled to 32x32 on load.
    """
    slices = [slice_mosaic(m) for m in mosaics]
    raw = np.concatenate(slices) if slices else np.zeros((0, 64, 64), np.uint8)
    ids = []
    for lineno, line in enumerate(info_text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            ids.append(int(stripped.split()[0]))
        except ValueError:
            raise ValueError(f"info line {lineno}: bad point id in {line!r}") from None
    if len(ids) != raw.shape[0]:
        raise ValueError(f"info file has {len(ids)} entries for {raw.shape[0]} patches")
    small = np.stack([downscale_patch(GrayImage(p)).pixels for p in raw]) if len(ids) else np.zeros(
        (0, 32, 32), np.uint8
    )
    return PatchSet(small, np.array(ids, dtype=np.int64))


@dataclass(frozen=True)
class Jitter:
    """Instance perturbations for the synthetic generator."""

    noise_sigma: float = 0.0
    shift_range: float = 0.0  # +- pixels, sub-pixel allowed
    rotation_range: float = 0.0  # +- degrees
    brightness_range: float = 0.0  # +- gray levels

    def __post_init__(self) -> None:
        for name in ("noise_sigma", "shift_range", "rotation_range", "brightness_range"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def synth_patchset(
    rng: np.random.Generator,
    n_structures: int,
    instances_per_structure: int,
    jitter: Jitter,
    side: int = 32,
) -> PatchSet:
    """Render a synthetic patch set, bitwise deterministic per rng state.

    Every structure is a random smooth field; its instances sample the field
    under jittered similarity transforms plus brightness offset and noise.
    With all-zero jitter the instances equal the base patch exactly.
    """
    if n_structures < 1 or instances_per_structure < 1 or side < 4:
        raise ValueError("generator parameters must be positive")
    n = n_structures * instances_per_structure
    patches = np.empty((n, side, side), dtype=np.uint8)
    ids = np.repeat(np.arange(n_structures, dtype=np.int64), instances_per_structure)

    c = (side - 1) / 2.0
    grid = np.arange(side, dtype=np.float64) - c
    gy, gx = np.meshgrid(grid, grid, indexing="ij")

    i = 0
    for _ in range(n_structures):
        base = rng.uniform(70.0, 180.0)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        slope = rng.uniform(0.5, 4.0)
        n_blobs = int(rng.integers(2, 6))
        bx = rng.uniform(-0.45 * side, 0.45 * side, size=n_blobs)
        by = rng.uniform(-0.45 * side, 0.45 * side, size=n_blobs)
        br = rng.uniform(2.0, side / 4.0, size=n_blobs)
        ba = rng.uniform(-100.0, 100.0, size=n_blobs)

        def field(u: np.ndarray, v: np.ndarray) -> np.ndarray:
            out = base + slope * (u * math.cos(phi) + v * math.sin(phi))
            for j in range(n_blobs):
                out = out + ba[j] * np.exp(
                    -((u - bx[j]) ** 2 + (v - by[j]) ** 2) / (2.0 * br[j] ** 2)
                )
            return out

        for _ in range(instances_per_structure):
            theta = math.radians(rng.uniform(-jitter.rotation_range, jitter.rotation_range))
            dx = rng.uniform(-jitter.shift_range, jitter.shift_range)
            dy = rng.uniform(-jitter.shift_range, jitter.shift_range)
            db = rng.uniform(-jitter.brightness_range, jitter.brightness_range)
            xs = gx - dx
            ys = gy - dy
            u = math.cos(theta) * xs + math.sin(theta) * ys
            v = -math.sin(theta) * xs + math.cos(theta) * ys
            vals = field(u, v) + db
            if jitter.noise_sigma > 0:
                vals = vals + rng.normal(0.0, jitter.noise_sigma, size=vals.shape)
            patches[i] = np.floor(np.clip(vals, 0.0, 255.0) + 0.5).astype(np.uint8)
            i += 1
    return PatchSet(patches, ids)


def save_pairs(pairs: Sequence[LabeledPair], n_patches: int) -> str:
    """Render a pair list as text: an N=<count> header then "i j l" lines."""
    lines = [f"N={n_patches}"]
    for p in pairs:
        if not (0 <= p.x < n_patches and 0 <= p.y < n_patches):
            raise ValueError(f"pair ({p.x}, {p.y}) out of range for {n_patches} patches")
        lines.append(f"{p.x} {p.y} {p.label}")
    return "\n".join(lines) + "\n"


def load_pairs(text: str) -> tuple[list[LabeledPair], int]:
    """Parse :func:`save_pairs` output, validating indices against the header."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("N="):
        raise ValueError("pair file must start with an N=<count> header")
    try:
        n_patches = int(lines[0][2:])
    except ValueError:
        raise ValueError(f"bad pair header {lines[0]!r}") from None
    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"pair line {lineno}: expected 'i j l', got {line!r}")
        try:
            x, y, label = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise ValueError(f"pair line {lineno}: bad integer in {line!r}") from None
        if label not in (-1, 1):
            raise ValueError(f"pair line {lineno}: label must be -1 or 1, got {label}")
        if not (0 <= x < n_patches and 0 <= y < n_patches):
            raise ValueError(f"pair line {lineno}: index out of range for N={n_patches}")
        pairs.append(LabeledPair(x, y, label))
    return pairs, n_patches


def save_patchset(directory: Path | str, patch_set: PatchSet) -> None:
    """Write a patch set as patches.pgm (vertical strip) plus ids.txt."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    strip = GrayImage(patch_set.patches.reshape(-1, patch_set.side))
    (directory / "patches.pgm").write_bytes(write_pgm(strip))
    (directory / "ids.txt").write_text(
        "\n".join(str(int(i)) for i in patch_set.structure_ids) + "\n"
    )


def load_patchset(directory: Path | str) -> PatchSet:
    """Read a directory written by :func:`save_patchset`."""
    directory = Path(directory)
    strip = load_pgm((directory / "patches.pgm").read_bytes())
    side = strip.width
    if strip.height % side:
        raise ValueError(f"patch strip height {strip.height} is not a multiple of {side}")
    patches = strip.pixels.reshape(-1, side, side)
    ids = [
        int(line.strip())
        for line in (directory / "ids.txt").read_text().splitlines()
        if line.strip()
    ]
    if len(ids) != patches.shape[0]:
        raise ValueError(f"ids.txt has {len(ids)} entries for {patches.shape[0]} patches")
    return PatchSet(patches, np.array(ids, dtype=np.int64))
