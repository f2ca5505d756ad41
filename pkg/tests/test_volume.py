import numpy as np
import pytest
from scipy.stats import spearmanr

from brainkan.volume import (
    BadMagicError,
    DimensionOverflowError,
    FmriVolume,
    GrayMatterMask,
    TruncatedVolumeError,
    VolumeFormatError,
    class_mixing,
    ellipsoid_mask,
    generate_synthetic_cohort,
    read_cohort,
    read_volume,
    write_cohort,
    write_volume,
)


def _random_volume(seed=0, dims=(4, 6, 5, 7)):
    rng = np.random.default_rng(seed)
    vol = FmriVolume(rng.normal(size=dims).astype(np.float32))
    mask = GrayMatterMask(rng.random(dims[1:]) < 0.5)
    return vol, mask


def octant_fc(subject, cube=4):
    """FC matrix over eight fixed corner-region cubes, computed from scratch."""
    vals = subject.volume.values.astype(np.float64)
    m = subject.mask.values
    x, y, z = subject.mask.dims
    series = []
    for cx in (x // 4, 3 * x // 4):
        for cy in (y // 4, 3 * y // 4):
            for cz in (z // 4, 3 * z // 4):
                sl = (
                    slice(cx - cube // 2, cx + cube // 2),
                    slice(cy - cube // 2, cy + cube // 2),
                    slice(cz - cube // 2, cz + cube // 2),
                )
                sel = m[sl]
                block = vals[(slice(None),) + sl]
                series.append(block[:, sel].mean(axis=1) if sel.any() else block.mean(axis=(1, 2, 3)))
    return np.corrcoef(np.array(series))


def fc_distance_ratio(cohort):
    """Mean between-class / mean within-class FC distance."""
    fcs = [octant_fc(s) for s in cohort.subjects]
    labels = cohort.labels
    within, between = [], []
    for i in range(len(fcs)):
        for j in range(i + 1, len(fcs)):
            d = np.linalg.norm(fcs[i] - fcs[j])
            (within if labels[i] == labels[j] else between).append(d)
    return np.mean(between) / np.mean(within)


# ---------------------------------------------------------------------------
# file format


def test_roundtrip_bit_exact(tmp_path):
    vol, mask = _random_volume()
    path = tmp_path / "subj.abfr"
    write_volume(path, vol, mask)
    vol2, mask2 = read_volume(path)
    np.testing.assert_array_equal(vol2.values, vol.values)
    np.testing.assert_array_equal(mask2.values, mask.values)
    write_volume(tmp_path / "again.abfr", vol2, mask2)
    assert (tmp_path / "again.abfr").read_bytes() == path.read_bytes()


def test_wrong_magic_is_parse_error(tmp_path):
    path = tmp_path / "bad.abfr"
    path.write_bytes(b"XXXX" + b"\x00" * 40)
    with pytest.raises(BadMagicError):
        read_volume(path)


def test_truncated_payload(tmp_path):
    vol, mask = _random_volume()
    path = tmp_path / "subj.abfr"
    write_volume(path, vol, mask)
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(TruncatedVolumeError):
        read_volume(path)


def test_header_declaring_more_voxels_than_payload(tmp_path):
    vol, mask = _random_volume()
    path = tmp_path / "subj.abfr"
    write_volume(path, vol, mask)
    raw = bytearray(path.read_bytes())
    raw[5:9] = (1000).to_bytes(4, "little")  # inflate T
    path.write_bytes(bytes(raw))
    with pytest.raises(TruncatedVolumeError):
        read_volume(path)


def test_dim_overflow(tmp_path):
    vol, mask = _random_volume()
    path = tmp_path / "subj.abfr"
    write_volume(path, vol, mask)
    raw = bytearray(path.read_bytes())
    raw[5:9] = (2**31 - 1).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(DimensionOverflowError):
        read_volume(path)


def test_trailing_bytes_rejected(tmp_path):
    vol, mask = _random_volume()
    path = tmp_path / "subj.abfr"
    write_volume(path, vol, mask)
    path.write_bytes(path.read_bytes() + b"\x00\x01")
    with pytest.raises(VolumeFormatError):
        read_volume(path)


# ---------------------------------------------------------------------------
# types


def test_volume_rejects_single_timepoint():
    with pytest.raises(ValueError, match="timepoints"):
        FmriVolume(np.zeros((1, 4, 4, 4), dtype=np.float32))


def test_volume_rejects_nan():
    vals = np.zeros((3, 2, 2, 2), dtype=np.float32)
    vals[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        FmriVolume(vals)


def test_ellipsoid_fraction_near_pi_over_six():
    for d in (16, 20, 24):
        mask = ellipsoid_mask((d, d, d))
        frac = mask.n_voxels / d**3
        assert abs(frac - np.pi / 6.0) < 0.05 * np.pi / 6.0


# ---------------------------------------------------------------------------
# synthetic cohorts


def test_effect_zero_has_identical_class_mixing():
    w0, w1 = class_mixing(6, 0.0)
    np.testing.assert_array_equal(w0, w1)


def test_same_seed_bit_identical():
    a = generate_synthetic_cohort(4, (16, 8, 8, 8), effect_size=1.0, seed=9)
    b = generate_synthetic_cohort(4, (16, 8, 8, 8), effect_size=1.0, seed=9)
    for sa, sb in zip(a.subjects, b.subjects):
        assert sa.volume.values.tobytes() == sb.volume.values.tobytes()
        assert sa.label == sb.label


def test_balanced_labels_cover_both_classes():
    cohort = generate_synthetic_cohort(2, (16, 8, 8, 8), seed=0)
    assert set(int(v) for v in cohort.labels) == {0, 1}
    cohort = generate_synthetic_cohort(10, (16, 8, 8, 8), seed=0)
    assert int(cohort.labels.sum()) == 5


def test_validation_errors():
    with pytest.raises(ValueError):
        generate_synthetic_cohort(1, (16, 8, 8, 8))
    with pytest.raises(ValueError):
        generate_synthetic_cohort(4, (8, 8, 8, 8))  # T too short
    with pytest.raises(ValueError):
        generate_synthetic_cohort(4, (16, 8, 1, 8))
    with pytest.raises(ValueError):
        generate_synthetic_cohort(4, (16, 8, 8, 8), effect_size=-1.0)


def test_effect_two_separates_classes_in_fc_space():
    cohort = generate_synthetic_cohort(40, (32, 16, 16, 16), effect_size=2.0, seed=123)
    ratio = fc_distance_ratio(cohort)
    assert ratio > 1.0, f"between/within FC distance ratio {ratio:.3f} not > 1"


def test_effect_size_monotonically_increases_separation():
    effects = [0.0, 0.5, 1.0, 2.0]
    mean_ratios = []
    for effect in effects:
        ratios = [
            fc_distance_ratio(
                generate_synthetic_cohort(8, (32, 12, 12, 12), effect_size=effect, seed=seed)
            )
            for seed in range(10)
        ]
        mean_ratios.append(np.mean(ratios))
    rho, _ = spearmanr(effects, mean_ratios)
    assert rho > 0, f"mean ratios {mean_ratios} not increasing with effect"


def test_cohort_manifest_roundtrip(tmp_path):
    cohort = generate_synthetic_cohort(4, (16, 8, 8, 8), effect_size=1.5, seed=3)
    manifest = write_cohort(tmp_path, cohort)
    loaded = read_cohort(manifest)
    assert [s.label for s in loaded.subjects] == [s.label for s in cohort.subjects]
    assert loaded.effect_size == cohort.effect_size
    for sa, sb in zip(loaded.subjects, cohort.subjects):
        np.testing.assert_array_equal(sa.volume.values, sb.volume.values)
