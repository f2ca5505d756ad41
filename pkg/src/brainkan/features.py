"""Function representations: sampled patches, mean BOLD signals, and Pearson
functional-connectivity matrices against a fixed anchor set.

Patch centers are drawn voxel-uniformly over the volume (order x, y, z per
draw, PCG64). A cube is placed symmetrically around each center, shifted
inward where it would cross the border, and kept only if it covers at least
one gray-matter voxel. Row i of the FC matrix correlates patch i's masked
mean signal with every anchor's mean signal.

Multi-scale extraction repeats the pass once per patch size, reseeding with
``seed + iteration`` so each pass is independently replayable; the passes'
FC matrices are averaged entrywise in iteration order, positions of
same-index patches are averaged, and the raw per-pass positions are kept
row-concatenated.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .anchors import AnchorSet, NoValidPlacementError, PatchSpec
from .rng import make_rng
from .volume import FmriVolume, GrayMatterMask

MAGIC = b"BKFR"
VERSION = 1


class EmptyPatchError(ValueError):
    """A patch cube that shares no voxel with the gray-matter mask."""


@dataclass
class PatchSample:
    spec: PatchSpec
    mean_signal: np.ndarray  # (T,)
    position: np.ndarray  # (3,) in [0, 1]


@dataclass
class FunctionRepresentation:
    """Token source for one subject: FC rows plus normalized patch positions."""

    fc: np.ndarray  # (N, A)
    positions: np.ndarray  # (N, 3)
    patch_sizes_used: list[int]
    n_iterations: int
    seed: int | None = None
    stacked_positions: np.ndarray = field(default=None)  # (N * n_iterations, 3)

    def __post_init__(self):
        self.fc = np.asarray(self.fc, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.stacked_positions is None:
            self.stacked_positions = self.positions.copy()
        self.stacked_positions = np.asarray(self.stacked_positions, dtype=np.float64)

    @property
    def n_patches(self) -> int:
        return self.fc.shape[0]

    @property
    def n_anchors(self) -> int:
        return self.fc.shape[1]


def sample_patch_centers(
    spatial_dims: tuple[int, int, int], n: int, seed: int
) -> np.ndarray:
    """``n`` voxel centers, each axis uniform over [0, dim-1]; shape (n, 3)."""
    if n < 1:
        raise ValueError(f"need at least one center, got n={n}")
    rng = make_rng(seed)
    return _draw_centers(rng, spatial_dims, n)


def _draw_centers(rng: np.random.Generator, spatial_dims, n: int) -> np.ndarray:
    out = np.empty((n, 3), dtype=np.int64)
    for i in range(n):
        for axis in range(3):
            out[i, axis] = rng.integers(0, spatial_dims[axis])
    return out


def patch_from_center(
    center: Sequence[int], size: int, spatial_dims: tuple[int, int, int]
) -> PatchSpec:
    """Cube of edge ``size`` around ``center``, shifted inward to fit the volume."""
    if any(size > d for d in spatial_dims):
        raise ValueError(f"patch size {size} exceeds spatial dims {spatial_dims}")
    start = tuple(
        int(np.clip(c - size // 2, 0, d - size)) for c, d in zip(center, spatial_dims)
    )
    return PatchSpec(start, size)


def patch_mean_signal(
    volume: FmriVolume, mask: GrayMatterMask, spec: PatchSpec
) -> np.ndarray:
    """Per-timepoint mean over voxels covered by both the patch cube and the mask."""
    spec.check_within(volume.spatial_dims)
    sl = spec.slices()
    sel = mask.values[sl]
    if not sel.any():
        raise EmptyPatchError(
            f"patch start={spec.start} size={spec.size} covers no gray-matter voxel"
        )
    block = volume.values[(slice(None),) + sl].astype(np.float64)
    return block[:, sel].mean(axis=1)


def anchor_mean_signal(volume: FmriVolume, region_mask: np.ndarray) -> np.ndarray:
    """Per-timepoint mean over an anchor region given as a binary voxel mask."""
    region_mask = np.asarray(region_mask).astype(bool)
    if region_mask.shape != volume.spatial_dims:
        raise ValueError(
            f"region mask shape {region_mask.shape} != spatial dims {volume.spatial_dims}"
        )
    if not region_mask.any():
        raise ValueError("anchor region mask is empty")
    return volume.values.astype(np.float64)[:, region_mask].mean(axis=1)


def anchor_region_masks(anchor_set: AnchorSet, mask: GrayMatterMask) -> list[np.ndarray]:
    """Anchor cubes intersected with gray matter.

    A cube that misses gray matter entirely (possible only in the tau = 0
    grid baseline) falls back to the bare cube, so the anchor count stays
    fixed and such anchors contribute whatever signal lies under them.
    """
    regions = []
    for spec in anchor_set.anchors:
        spec.check_within(mask.dims)
        region = np.zeros(mask.dims, dtype=bool)
        region[spec.slices()] = mask.values[spec.slices()]
        if not region.any():
            region[spec.slices()] = True
        regions.append(region)
    return regions


def anchor_signals(
    volume: FmriVolume, mask: GrayMatterMask, anchor_set: AnchorSet
) -> np.ndarray:
    """Mean signal per anchor; shape (A, T)."""
    regions = anchor_region_masks(anchor_set, mask)
    return np.array([anchor_mean_signal(volume, r) for r in regions])


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson r; zero-variance inputs yield 0 by convention."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"pearson needs equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ValueError(f"pearson needs length >= 2, got {a.size}")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        return 0.0
    return float(np.clip((da * db).sum() / denom, -1.0, 1.0))


def build_fc_matrix(
    patches: Sequence[PatchSample], anchor_sigs: np.ndarray
) -> np.ndarray:
    """C[i, j] = pearson(patch i mean signal, anchor j mean signal)."""
    if len(patches) == 0 or len(anchor_sigs) == 0:
        raise ValueError("need at least one patch and one anchor")
    fc = np.empty((len(patches), len(anchor_sigs)))
    for i, p in enumerate(patches):
        for j, sig in enumerate(anchor_sigs):
            fc[i, j] = pearson(p.mean_signal, sig)
    return fc


def _sample_patches(
    rng: np.random.Generator,
    volume: FmriVolume,
    mask: GrayMatterMask,
    n_patches: int,
    patch_size: int,
    max_attempts: int,
) -> list[PatchSample]:
    dims = volume.spatial_dims
    norm = np.array([max(d - 1, 1) for d in dims], dtype=np.float64)
    samples: list[PatchSample] = []
    for _ in range(n_patches):
        for _attempt in range(max_attempts):
            center = _draw_centers(rng, dims, 1)[0]
            spec = patch_from_center(center, patch_size, dims)
            try:
                signal = patch_mean_signal(volume, mask, spec)
            except EmptyPatchError:
                continue
            position = np.array(spec.center()) / norm
            samples.append(PatchSample(spec, signal, position))
            break
        else:
            raise NoValidPlacementError(
                f"exhausted {max_attempts} draws at patch {len(samples)} of {n_patches}",
                len(samples),
            )
    return samples


def random_sampling_representation(
    volume: FmriVolume,
    mask: GrayMatterMask,
    anchor_set: AnchorSet,
    n_patches: int,
    patch_size: int,
    seed: int,
    max_attempts: int = 1000,
) -> FunctionRepresentation:
    """Single-scale representation: one pass at one fixed patch size."""
    if n_patches < 1:
        raise ValueError(f"n_patches must be >= 1, got {n_patches}")
    rng = make_rng(seed)
    samples = _sample_patches(rng, volume, mask, n_patches, patch_size, max_attempts)
    sigs = anchor_signals(volume, mask, anchor_set)
    fc = build_fc_matrix(samples, sigs)
    positions = np.array([s.position for s in samples])
    return FunctionRepresentation(
        fc=fc,
        positions=positions,
        patch_sizes_used=[patch_size],
        n_iterations=1,
        seed=seed,
    )


def iterative_sampling_representation(
    volume: FmriVolume,
    mask: GrayMatterMask,
    anchor_set: AnchorSet,
    n_patches_per_iter: int,
    sizes: Sequence[int] = (8, 12, 16),
    seed: int = 0,
    max_attempts: int = 1000,
) -> FunctionRepresentation:
    """Multi-scale representation: one pass per size, FC averaged across passes.

    Pass i uses seed + i, so ``sizes=[s]`` reduces exactly to
    ``random_sampling_representation(..., patch_size=s, seed=seed)``.
    """
    if len(sizes) == 0:
        raise ValueError("need at least one patch size")
    reps = [
        random_sampling_representation(
            volume, mask, anchor_set, n_patches_per_iter, size, seed + i, max_attempts
        )
        for i, size in enumerate(sizes)
    ]
    fc_total = reps[0].fc.copy()
    pos_total = reps[0].positions.copy()
    for rep in reps[1:]:
        fc_total += rep.fc
        pos_total += rep.positions
    k = len(reps)
    return FunctionRepresentation(
        fc=fc_total / k,
        positions=pos_total / k,
        patch_sizes_used=list(sizes),
        n_iterations=k,
        seed=seed,
        stacked_positions=np.vstack([rep.positions for rep in reps]),
    )


# ---------------------------------------------------------------------------
# serialization: JSON header + float64 binary payload


def save_representation(path, rep: FunctionRepresentation, anchors_ref: str | None = None) -> None:
    header = {
        "format": "brainkan-representation",
        "fc_shape": list(rep.fc.shape),
        "positions_shape": list(rep.positions.shape),
        "stacked_shape": list(rep.stacked_positions.shape),
        "patch_sizes_used": rep.patch_sizes_used,
        "n_iterations": rep.n_iterations,
        "seed": rep.seed,
        "anchors_ref": anchors_ref,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for arr in (rep.fc, rep.positions, rep.stacked_positions):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_representation(path) -> FunctionRepresentation:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a representation file (magic {raw[:4]!r})")
    (header_len,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9 : 9 + header_len].decode("utf-8"))
    offset = 9 + header_len

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape)) * 8
        chunk = raw[offset : offset + n]
        if len(chunk) < n:
            raise ValueError(f"{path}: truncated payload")
        offset += n
        return np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()

    fc = take(header["fc_shape"])
    positions = take(header["positions_shape"])
    stacked = take(header["stacked_shape"])
    return FunctionRepresentation(
        fc=fc,
        positions=positions,
        patch_sizes_used=list(header["patch_sizes_used"]),
        n_iterations=int(header["n_iterations"]),
        seed=header["seed"],
        stacked_positions=stacked,
    )
