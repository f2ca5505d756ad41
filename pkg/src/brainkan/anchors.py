"""Anchor patch selection: baseline grid placement and randomized placement
with gray-matter overlap validation.

Randomized starts are drawn per axis as integers, uniformly and inclusively
over [axis_min, axis_max - patch_size] of the mask's bounding box, in the
fixed order x, y, z per attempt, from a PCG64 stream. A draw is kept only if
the patch covers at least ``tau`` mask voxels; otherwise it is resampled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import make_rng
from .volume import GrayMatterMask


class NoValidPlacementError(RuntimeError):
    """Raised when resampling cannot satisfy the overlap threshold."""

    def __init__(self, message: str, achieved: int):
        super().__init__(message)
        self.achieved = achieved


@dataclass(frozen=True)
class PatchSpec:
    """A cubic patch: start corner (x, y, z) and edge length."""

    start: tuple[int, int, int]
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"patch size must be positive, got {self.size}")
        if any(s < 0 for s in self.start):
            raise ValueError(f"patch start must be nonnegative, got {self.start}")

    def slices(self) -> tuple[slice, slice, slice]:
        x, y, z = self.start
        return slice(x, x + self.size), slice(y, y + self.size), slice(z, z + self.size)

    def check_within(self, spatial_dims: tuple[int, int, int]) -> None:
        for s, d in zip(self.start, spatial_dims):
            if s + self.size > d:
                raise ValueError(
                    f"patch start={self.start} size={self.size} exceeds volume dims {spatial_dims}"
                )

    def center(self) -> tuple[float, float, float]:
        return tuple(s + (self.size - 1) / 2.0 for s in self.start)


@dataclass
class AnchorSet:
    anchors: list[PatchSpec]
    tau: int
    method: str  # "grid" | "random"
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.anchors)

    def to_json(self) -> dict:
        sizes = {a.size for a in self.anchors}
        if len(sizes) > 1:
            raise ValueError(f"anchor set mixes patch sizes {sorted(sizes)}")
        return {
            "format": "brainkan-anchors",
            "method": self.method,
            "seed": self.seed,
            "tau": self.tau,
            "patch_size": self.anchors[0].size if self.anchors else None,
            "starts": [list(a.start) for a in self.anchors],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnchorSet":
        if obj.get("format") != "brainkan-anchors":
            raise ValueError("not an anchor-set document")
        size = obj["patch_size"]
        anchors = [PatchSpec(tuple(int(v) for v in s), size) for s in obj["starts"]]
        return cls(anchors=anchors, tau=int(obj["tau"]), method=obj["method"], seed=obj["seed"])


def save_anchors(path, anchor_set: AnchorSet) -> None:
    Path(path).write_text(json.dumps(anchor_set.to_json(), indent=2) + "\n")


def load_anchors(path) -> AnchorSet:
    return AnchorSet.from_json(json.loads(Path(path).read_text()))


def mask_bounding_box(mask: GrayMatterMask) -> tuple[tuple[int, int], ...]:
    """Inclusive (min, max) per axis over mask-positive voxels."""
    if not mask.values.any():
        raise ValueError("mask is empty; bounding box undefined")
    out = []
    for axis in range(3):
        other = tuple(i for i in range(3) if i != axis)
        hits = np.nonzero(mask.values.any(axis=other))[0]
        out.append((int(hits[0]), int(hits[-1])))
    return tuple(out)


def patch_overlap(patch: PatchSpec, mask: GrayMatterMask) -> int:
    """Number of mask-positive voxels inside the patch cube."""
    patch.check_within(mask.dims)
    return int(mask.values[patch.slices()].sum())


def default_tau(patch_size: int) -> int:
    """Half the patch volume, rounded up."""
    return math.ceil(0.5 * patch_size**3)


def _as_triple(value, name: str) -> tuple[int, int, int]:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * 3
    triple = tuple(int(v) for v in value)
    if len(triple) != 3:
        raise ValueError(f"{name} must be an int or a 3-tuple, got {value!r}")
    return triple


def grid_anchor_selection(
    mask: GrayMatterMask,
    patch_size: int,
    stride,
    offset=0,
    tau: int = 0,
) -> AnchorSet:
    """Anchors on a regular grid over the mask's bounding box.

    Positions are bbox_min + offset + k*stride per axis, kept while the cube
    stays inside the bounding box, emitted in lexicographic order. With
    tau = 0 every grid anchor is kept, including ones that barely touch gray
    matter (the baseline behavior); tau > 0 filters by overlap.
    """
    stride3 = _as_triple(stride, "stride")
    offset3 = _as_triple(offset, "offset")
    if any(s < 1 for s in stride3):
        raise ValueError(f"stride must be >= 1, got {stride3}")
    if any(o < 0 or o >= s for o, s in zip(offset3, stride3)):
        raise ValueError(f"offset {offset3} must be componentwise in [0, stride {stride3})")
    if any(patch_size > d for d in mask.dims):
        raise ValueError(f"patch size {patch_size} exceeds spatial dims {mask.dims}")
    bbox = mask_bounding_box(mask)

    axes: list[list[int]] = []
    for (lo, hi), st, off in zip(bbox, stride3, offset3):
        starts = []
        pos = lo + off
        while pos + patch_size - 1 <= hi:
            starts.append(pos)
            pos += st
        axes.append(starts)

    anchors = []
    for x in axes[0]:
        for y in axes[1]:
            for z in axes[2]:
                spec = PatchSpec((x, y, z), patch_size)
                if tau == 0 or patch_overlap(spec, mask) >= tau:
                    anchors.append(spec)
    return AnchorSet(anchors=anchors, tau=tau, method="grid", seed=None)


def random_anchor_selection(
    mask: GrayMatterMask,
    patch_size: int,
    n_anchors: int,
    tau: int | None = None,
    seed: int = 0,
    max_attempts: int = 1000,
) -> AnchorSet:
    """Randomized anchors with overlap validation and bounded resampling.

    Raises NoValidPlacementError (carrying the achieved count) if any anchor
    exhausts ``max_attempts`` draws without meeting the threshold.
    """
    if n_anchors < 1:
        raise ValueError(f"n_anchors must be >= 1, got {n_anchors}")
    if tau is None:
        tau = default_tau(patch_size)
    if tau > patch_size**3:
        raise ValueError(f"tau {tau} exceeds patch volume {patch_size**3}")
    if not mask.values.any():
        raise NoValidPlacementError("mask is empty; no anchor can satisfy any overlap", 0)
    bbox = mask_bounding_box(mask)
    ranges = []
    for (lo, hi), d in zip(bbox, mask.dims):
        top = hi - patch_size
        if top < lo:
            raise ValueError(
                f"patch size {patch_size} does not fit the mask bounding box {bbox}"
            )
        ranges.append((lo, top))

    rng = make_rng(seed)
    anchors: list[PatchSpec] = []
    for _ in range(n_anchors):
        placed = False
        for _attempt in range(max_attempts):
            x = int(rng.integers(ranges[0][0], ranges[0][1] + 1))
            y = int(rng.integers(ranges[1][0], ranges[1][1] + 1))
            z = int(rng.integers(ranges[2][0], ranges[2][1] + 1))
            spec = PatchSpec((x, y, z), patch_size)
            if patch_overlap(spec, mask) >= tau:
                anchors.append(spec)
                placed = True
                break
        if not placed:
            raise NoValidPlacementError(
                f"exhausted {max_attempts} attempts at anchor {len(anchors)} "
                f"(tau={tau}, patch_size={patch_size}); placed {len(anchors)} of {n_anchors}",
                len(anchors),
            )
    return AnchorSet(anchors=anchors, tau=tau, method="random", seed=seed)
