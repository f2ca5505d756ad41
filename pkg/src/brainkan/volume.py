"""4-D BOLD volumes, gray-matter masks, and labeled synthetic cohorts.

Real acquisitions are out of scope; cohorts are generated with controllable
class structure: each subject's voxel time series mixes a small set of shared
smooth latent signals, and the mixing weights per spatial region differ
between the two classes by an adjustable amount, so inter-regional
correlations carry the label.

Volumes round-trip through a small binary format:

    magic b"ABFR" | version u8 | T,X,Y,Z u32 LE | float32 LE voxels | packed mask bits
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng

MAGIC = b"ABFR"
VERSION = 1
MAX_VOXELS = 2**31  # sanity cap on T*X*Y*Z declared by a header


class VolumeFormatError(ValueError):
    """Base for malformed volume files."""


class BadMagicError(VolumeFormatError):
    pass


class TruncatedVolumeError(VolumeFormatError):
    pass


class DimensionOverflowError(VolumeFormatError):
    pass


@dataclass
class FmriVolume:
    """BOLD intensities, shape (T, X, Y, Z), float32."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 4:
            raise ValueError(f"volume must be 4-d (T,X,Y,Z), got shape {self.values.shape}")
        if any(d < 1 for d in self.values.shape):
            raise ValueError(f"degenerate volume dims {self.values.shape}")
        if self.values.shape[0] < 2:
            raise ValueError("volume needs at least 2 timepoints for correlation")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("volume contains non-finite values")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.values.shape

    @property
    def spatial_dims(self) -> tuple[int, int, int]:
        return self.values.shape[1:]

    @property
    def n_timepoints(self) -> int:
        return self.values.shape[0]


@dataclass
class GrayMatterMask:
    """Binary voxel mask, shape (X, Y, Z)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values).astype(bool)
        if self.values.ndim != 3:
            raise ValueError(f"mask must be 3-d, got shape {self.values.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def n_voxels(self) -> int:
        return int(self.values.sum())


@dataclass
class Subject:
    volume: FmriVolume
    mask: GrayMatterMask
    label: int  # 0 = control, 1 = asd


@dataclass
class SyntheticCohort:
    subjects: list[Subject]
    seed: int
    effect_size: float
    n_latent_signals: int
    noise_std: float
    asd_fraction: float

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=np.int64)


def ellipsoid_mask(spatial_dims: tuple[int, int, int]) -> GrayMatterMask:
    """Mask of the axis-aligned ellipsoid inscribed in the spatial box."""
    x, y, z = spatial_dims
    ci = (np.arange(x) + 0.5 - x / 2.0) / (x / 2.0)
    cj = (np.arange(y) + 0.5 - y / 2.0) / (y / 2.0)
    ck = (np.arange(z) + 0.5 - z / 2.0) / (z / 2.0)
    r2 = ci[:, None, None] ** 2 + cj[None, :, None] ** 2 + ck[None, None, :] ** 2
    return GrayMatterMask(r2 <= 1.0)


def class_mixing(n_latents: int, effect_size: float) -> tuple[np.ndarray, np.ndarray]:
    """Region-by-latent mixing weights for the two classes, (R, R+1) each.

    Class 0 drives region r with regional latent r alone. Class 1 blends a
    shared global latent (the extra column) into every region with weight
    ``effect_size`` (rows renormalized), so every inter-regional correlation
    is class-discriminative in proportion to the effect. The construction is
    canonical: it depends on sizes and effect only, never on a seed, so
    cohorts from different seeds share the same class-conditional structure.
    """
    w0 = np.hstack([np.eye(n_latents), np.zeros((n_latents, 1))])
    w1 = w0.copy()
    w1[:, -1] = effect_size
    w1 /= np.linalg.norm(w1, axis=1, keepdims=True)
    return w0, w1


def region_labels(mask: GrayMatterMask, n_regions: int) -> np.ndarray:
    """Assign each voxel to one of ``n_regions`` slabs along x (mask bounding box)."""
    x_dim = mask.dims[0]
    xs = np.nonzero(mask.values.any(axis=(1, 2)))[0]
    if xs.size == 0:
        x0, x1 = 0, x_dim - 1
    else:
        x0, x1 = int(xs[0]), int(xs[-1])
    extent = x1 - x0 + 1
    idx = np.clip(((np.arange(x_dim) - x0) * n_regions) // max(extent, 1), 0, n_regions - 1)
    return np.broadcast_to(idx[:, None, None], mask.dims).copy()


def _smooth_latents(rng: np.random.Generator, n_latents: int, t: int) -> np.ndarray:
    """Band-limited latent signals: moving-average smoothed white noise, standardized."""
    window = max(1, t // 8)
    raw = rng.standard_normal((n_latents, t))
    kernel = np.ones(window) / window
    smooth = np.array([np.convolve(row, kernel, mode="same") for row in raw])
    smooth -= smooth.mean(axis=1, keepdims=True)
    smooth /= smooth.std(axis=1, keepdims=True)
    return smooth


def generate_synthetic_cohort(
    n_subjects: int,
    dims: tuple[int, int, int, int],
    n_latent_signals: int = 6,
    effect_size: float = 1.0,
    seed: int = 0,
    noise_std: float = 1.0,
    asd_fraction: float = 0.5,
) -> SyntheticCohort:
    """Generate a labeled cohort sharing one ellipsoidal gray-matter mask.

    Labels are spread deterministically (alternating for the default balanced
    fraction). Per subject, the draw order is: latent signals, then voxel
    noise, all from one PCG64 stream seeded with ``seed``.
    """
    t, x, y, z = dims
    if n_subjects < 2:
        raise ValueError(f"need at least 2 subjects, got {n_subjects}")
    if t < 16:
        raise ValueError(f"synthetic cohorts need T >= 16 timepoints, got {t}")
    if min(x, y, z) < 2:
        raise ValueError(f"degenerate spatial dims {(x, y, z)}")
    if effect_size < 0:
        raise ValueError(f"effect_size must be nonnegative, got {effect_size}")
    if not 0.0 < asd_fraction < 1.0:
        raise ValueError(f"asd_fraction must lie in (0,1), got {asd_fraction}")

    mask = ellipsoid_mask((x, y, z))
    regions = region_labels(mask, n_latent_signals)
    w0, w1 = class_mixing(n_latent_signals, effect_size)
    mixing = (w0, w1)

    n_asd = round(n_subjects * asd_fraction)
    labels = [
        int((i + 1) * n_asd // n_subjects > i * n_asd // n_subjects) for i in range(n_subjects)
    ]

    rng = make_rng(seed)
    in_mask = mask.values
    subjects: list[Subject] = []
    for label in labels:
        latents = _smooth_latents(rng, n_latent_signals + 1, t)  # (L regional + 1 global, T)
        region_series = mixing[label] @ latents  # (L regions, T)
        vals = rng.standard_normal((t, x, y, z)) * noise_std
        signal = region_series[regions[in_mask]]  # (n_masked, T)
        vals[:, in_mask] += signal.T
        subjects.append(Subject(FmriVolume(vals.astype(np.float32)), mask, label))
    return SyntheticCohort(
        subjects=subjects,
        seed=seed,
        effect_size=effect_size,
        n_latent_signals=n_latent_signals,
        noise_std=noise_std,
        asd_fraction=asd_fraction,
    )


# ---------------------------------------------------------------------------
# binary volume format


def write_volume(path, volume: FmriVolume, mask: GrayMatterMask) -> None:
    if volume.spatial_dims != mask.dims:
        raise ValueError(f"volume spatial dims {volume.spatial_dims} != mask dims {mask.dims}")
    t, x, y, z = volume.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<4I", t, x, y, z))
        fh.write(np.ascontiguousarray(volume.values, dtype="<f4").tobytes())
        fh.write(np.packbits(mask.values.ravel().astype(np.uint8)).tobytes())


def read_volume(path) -> tuple[FmriVolume, GrayMatterMask]:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 21:
        raise TruncatedVolumeError(f"{path}: header truncated at {len(raw)} bytes")
    (version,) = struct.unpack("<B", raw[4:5])
    if version != VERSION:
        raise VolumeFormatError(f"{path}: unsupported version {version}")
    t, x, y, z = struct.unpack("<4I", raw[5:21])
    if min(t, x, y, z) < 1:
        raise DimensionOverflowError(f"{path}: nonpositive dimension in header {(t, x, y, z)}")
    n_vox = t * x * y * z
    if n_vox > MAX_VOXELS:
        raise DimensionOverflowError(f"{path}: header declares {n_vox} voxels (cap {MAX_VOXELS})")
    payload = raw[21:]
    need_values = n_vox * 4
    n_spatial = x * y * z
    need_mask = (n_spatial + 7) // 8
    if len(payload) < need_values + need_mask:
        raise TruncatedVolumeError(
            f"{path}: payload holds {len(payload)} bytes, header needs {need_values + need_mask}"
        )
    if len(payload) > need_values + need_mask:
        raise VolumeFormatError(f"{path}: {len(payload) - need_values - need_mask} trailing bytes")
    values = np.frombuffer(payload[:need_values], dtype="<f4").reshape(t, x, y, z).copy()
    bits = np.unpackbits(np.frombuffer(payload[need_values:], dtype=np.uint8), count=n_spatial)
    mask = bits.reshape(x, y, z).astype(bool)
    return FmriVolume(values), GrayMatterMask(mask)


# ---------------------------------------------------------------------------
# cohort manifest


def write_cohort(out_dir, cohort: SyntheticCohort, manifest_name: str = "cohort.json") -> Path:
    """Write one volume file per subject plus a JSON manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, subj in enumerate(cohort.subjects):
        fname = f"subject_{i:03d}.abfr"
        write_volume(out_dir / fname, subj.volume, subj.mask)
        entries.append({"path": fname, "label": subj.label})
    manifest = {
        "format": "brainkan-cohort",
        "version": 1,
        "seed": cohort.seed,
        "effect_size": cohort.effect_size,
        "n_latent_signals": cohort.n_latent_signals,
        "noise_std": cohort.noise_std,
        "asd_fraction": cohort.asd_fraction,
        "dims": list(cohort.subjects[0].volume.dims),
        "subjects": entries,
    }
    path = out_dir / manifest_name
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_cohort(manifest_path) -> SyntheticCohort:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "brainkan-cohort":
        raise ValueError(f"{manifest_path}: not a cohort manifest")
    subjects = []
    for entry in manifest["subjects"]:
        volume, mask = read_volume(manifest_path.parent / entry["path"])
        subjects.append(Subject(volume, mask, int(entry["label"])))
    return SyntheticCohort(
        subjects=subjects,
        seed=manifest["seed"],
        effect_size=manifest["effect_size"],
        n_latent_signals=manifest["n_latent_signals"],
        noise_std=manifest["noise_std"],
        asd_fraction=manifest["asd_fraction"],
    )
