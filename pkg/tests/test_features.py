import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brainkan.anchors import AnchorSet, PatchSpec, random_anchor_selection
from brainkan.features import (
    EmptyPatchError,
    FunctionRepresentation,
    PatchSample,
    anchor_mean_signal,
    anchor_region_masks,
    anchor_signals,
    build_fc_matrix,
    iterative_sampling_representation,
    load_representation,
    patch_from_center,
    patch_mean_signal,
    pearson,
    random_sampling_representation,
    sample_patch_centers,
    save_representation,
)
from brainkan.volume import FmriVolume, GrayMatterMask, ellipsoid_mask, generate_synthetic_cohort


@pytest.fixture(scope="module")
def subject():
    cohort = generate_synthetic_cohort(2, (24, 12, 12, 12), effect_size=1.0, seed=42)
    return cohort.subjects[0]


@pytest.fixture(scope="module")
def anchors(subject):
    return random_anchor_selection(subject.mask, 4, n_anchors=3, seed=7)


# ---------------------------------------------------------------------------
# centers


def test_centers_reject_zero():
    with pytest.raises(ValueError):
        sample_patch_centers((8, 8, 8), 0, seed=0)


def test_centers_deterministic():
    a = sample_patch_centers((8, 8, 8), 20, seed=5)
    b = sample_patch_centers((8, 8, 8), 20, seed=5)
    np.testing.assert_array_equal(a, b)


def test_centers_uniform_moments():
    dims = (32, 32, 32)
    centers = sample_patch_centers(dims, 10_000, seed=1)
    se = np.sqrt((32.0**2 - 1.0) / 12.0 / 10_000)
    for axis in range(3):
        assert abs(centers[:, axis].mean() - 15.5) < 3.0 * se


def test_patch_from_center_shifts_inward():
    spec = patch_from_center((0, 5, 11), 4, (12, 12, 12))
    assert spec.start == (0, 3, 8)
    with pytest.raises(ValueError):
        patch_from_center((0, 0, 0), 16, (12, 12, 12))


# ---------------------------------------------------------------------------
# mean signals


def test_patch_mean_two_voxels():
    vals = np.zeros((3, 2, 2, 2), dtype=np.float32)
    vals[:, 0, 0, 0] = 1.0
    vals[:, 1, 1, 1] = 3.0
    mask = np.zeros((2, 2, 2), dtype=bool)
    mask[0, 0, 0] = mask[1, 1, 1] = True
    out = patch_mean_signal(FmriVolume(vals), GrayMatterMask(mask), PatchSpec((0, 0, 0), 2))
    np.testing.assert_allclose(out, 2.0)


def test_patch_mean_constant_volume():
    vals = np.full((4, 6, 6, 6), 2.5, dtype=np.float32)
    out = patch_mean_signal(
        FmriVolume(vals), GrayMatterMask(np.ones((6, 6, 6), dtype=bool)), PatchSpec((1, 1, 1), 3)
    )
    np.testing.assert_allclose(out, 2.5)


def test_patch_mean_matches_voxel_loop_oracle(subject):
    spec = PatchSpec((3, 2, 4), 4)
    got = patch_mean_signal(subject.volume, subject.mask, spec)
    vals = subject.volume.values
    t_len = vals.shape[0]
    for t in range(t_len):
        total, count = 0.0, 0
        for i in range(spec.start[0], spec.start[0] + 4):
            for j in range(spec.start[1], spec.start[1] + 4):
                for k in range(spec.start[2], spec.start[2] + 4):
                    if subject.mask.values[i, j, k]:
                        total += float(vals[t, i, j, k])
                        count += 1
        assert abs(got[t] - total / count) < 1e-12


def test_patch_mean_empty_intersection_raises(subject):
    empty = GrayMatterMask(np.zeros(subject.mask.dims, dtype=bool))
    with pytest.raises(EmptyPatchError):
        patch_mean_signal(subject.volume, empty, PatchSpec((0, 0, 0), 4))


def test_anchor_mean_mirrors_patch_mean(subject):
    spec = PatchSpec((2, 3, 1), 4)
    region = np.zeros(subject.mask.dims, dtype=bool)
    region[spec.slices()] = subject.mask.values[spec.slices()]
    np.testing.assert_array_equal(
        anchor_mean_signal(subject.volume, region),
        patch_mean_signal(subject.volume, subject.mask, spec),
    )


def test_anchor_mean_empty_region_rejected(subject):
    with pytest.raises(ValueError, match="empty"):
        anchor_mean_signal(subject.volume, np.zeros(subject.mask.dims, dtype=bool))


def test_anchor_region_falls_back_to_cube_outside_gray_matter():
    mask_vals = np.zeros((12, 12, 12), dtype=bool)
    mask_vals[6:, :, :] = True
    anchor_set = AnchorSet([PatchSpec((0, 0, 0), 4)], tau=0, method="grid")
    regions = anchor_region_masks(anchor_set, GrayMatterMask(mask_vals))
    assert regions[0].sum() == 64  # bare cube


# ---------------------------------------------------------------------------
# pearson and FC


def test_pearson_self_and_anti():
    x = np.array([1.0, 2.0, 4.0, 3.0])
    assert pearson(x, x) == pytest.approx(1.0)
    assert pearson(x, -x) == pytest.approx(-1.0)


def test_pearson_hand_value():
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)


def test_pearson_zero_variance_convention():
    assert pearson([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]) == 0.0


def test_pearson_length_mismatch():
    with pytest.raises(ValueError):
        pearson([1.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12),
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12),
)
def test_pearson_bounded(a, b):
    n = min(len(a), len(b))
    r = pearson(a[:n], b[:n])
    assert -1.0 <= r <= 1.0


def test_fc_single_identical_pair():
    sig = np.array([0.0, 1.0, 0.5, 2.0])
    patch = PatchSample(PatchSpec((0, 0, 0), 2), sig, np.zeros(3))
    np.testing.assert_allclose(build_fc_matrix([patch], np.array([sig])), [[1.0]])


def test_fc_entrywise_oracle(subject, anchors):
    rep_patches = []
    rng = np.random.default_rng(0)
    for _ in range(3):
        start = tuple(int(v) for v in rng.integers(0, 8, size=3))
        spec = PatchSpec(start, 4)
        rep_patches.append(
            PatchSample(spec, patch_mean_signal(subject.volume, subject.mask, spec), np.zeros(3))
        )
    sigs = anchor_signals(subject.volume, subject.mask, anchors)[:2]
    fc = build_fc_matrix(rep_patches, sigs)
    for i, p in enumerate(rep_patches):
        for j, s in enumerate(sigs):
            assert fc[i, j] == pytest.approx(pearson(p.mean_signal, s), abs=1e-15)


def test_fc_unit_diagonal_on_symmetric_inputs(subject, anchors):
    sigs = anchor_signals(subject.volume, subject.mask, anchors)
    patches = [
        PatchSample(spec, sig, np.zeros(3)) for spec, sig in zip(anchors.anchors, sigs)
    ]
    fc = build_fc_matrix(patches, sigs)
    np.testing.assert_allclose(np.diag(fc), 1.0, atol=1e-12)


def test_fc_affine_invariance(subject, anchors):
    rep = random_sampling_representation(subject.volume, subject.mask, anchors, 6, 4, seed=3)
    scaled = FmriVolume(subject.volume.values * 1.7 + 4.2)
    rep2 = random_sampling_representation(scaled, subject.mask, anchors, 6, 4, seed=3)
    np.testing.assert_allclose(rep.fc, rep2.fc, atol=1e-10)


# ---------------------------------------------------------------------------
# representations


def test_representation_rank_one_volume_gives_unit_fc():
    t = np.linspace(0.0, 1.0, 24) ** 2
    vals = np.broadcast_to(t[:, None, None, None], (24, 10, 10, 10)).astype(np.float32)
    volume = FmriVolume(vals.copy())
    mask = GrayMatterMask(np.ones((10, 10, 10), dtype=bool))
    anchor_set = AnchorSet([PatchSpec((2, 2, 2), 4)], tau=0, method="grid")
    rep = random_sampling_representation(volume, mask, anchor_set, 1, 4, seed=9)
    np.testing.assert_allclose(rep.fc, [[1.0]], atol=1e-12)
    # position equals the normalized center of the drawn (inward-shifted) patch
    centers = sample_patch_centers((10, 10, 10), 1, seed=9)
    spec = patch_from_center(centers[0], 4, (10, 10, 10))
    np.testing.assert_allclose(rep.positions[0], np.array(spec.center()) / 9.0)
    assert np.all(rep.positions >= 0.0) and np.all(rep.positions <= 1.0)


def test_representation_deterministic(subject, anchors):
    a = random_sampling_representation(subject.volume, subject.mask, anchors, 5, 4, seed=8)
    b = random_sampling_representation(subject.volume, subject.mask, anchors, 5, 4, seed=8)
    assert a.fc.tobytes() == b.fc.tobytes()
    assert a.positions.tobytes() == b.positions.tobytes()


def test_representation_shape_contract(subject, anchors):
    rep = random_sampling_representation(subject.volume, subject.mask, anchors, 7, 4, seed=1)
    assert rep.fc.shape == (7, len(anchors))
    assert rep.positions.shape == (7, 3)
    assert rep.n_iterations == 1
    assert np.all(rep.fc >= -1.0) and np.all(rep.fc <= 1.0)


def test_iterative_single_size_reduces_to_random(subject, anchors):
    it = iterative_sampling_representation(subject.volume, subject.mask, anchors, 5, [4], seed=21)
    rand = random_sampling_representation(subject.volume, subject.mask, anchors, 5, 4, seed=21)
    assert it.fc.tobytes() == rand.fc.tobytes()
    assert it.positions.tobytes() == rand.positions.tobytes()
    assert it.stacked_positions.tobytes() == rand.positions.tobytes()


def test_iterative_fc_is_exact_average_of_per_iteration_matrices(subject, anchors):
    sizes = [4, 6, 8]
    seed = 13
    it = iterative_sampling_representation(
        subject.volume, subject.mask, anchors, 6, sizes, seed=seed
    )
    # independent recompute: each pass is a standalone single-scale extraction
    per_iter = [
        random_sampling_representation(
            subject.volume, subject.mask, anchors, 6, size, seed=seed + i
        )
        for i, size in enumerate(sizes)
    ]
    expected = per_iter[0].fc.copy()
    for rep in per_iter[1:]:
        expected += rep.fc
    expected /= len(per_iter)
    np.testing.assert_array_equal(it.fc, expected)
    assert it.n_iterations == 3
    assert it.patch_sizes_used == sizes


def test_iterative_stacked_positions_row_count(subject, anchors):
    it = iterative_sampling_representation(
        subject.volume, subject.mask, anchors, 6, [4, 6, 8], seed=2
    )
    assert it.stacked_positions.shape == (18, 3)
    assert it.positions.shape == (6, 3)


def test_representation_file_roundtrip(tmp_path, subject, anchors):
    rep = iterative_sampling_representation(
        subject.volume, subject.mask, anchors, 4, [4, 6], seed=5
    )
    path = tmp_path / "rep.bkfr"
    save_representation(path, rep, anchors_ref="anchors.json")
    loaded = load_representation(path)
    np.testing.assert_array_equal(loaded.fc, rep.fc)
    np.testing.assert_array_equal(loaded.positions, rep.positions)
    np.testing.assert_array_equal(loaded.stacked_positions, rep.stacked_positions)
    assert loaded.patch_sizes_used == rep.patch_sizes_used
    assert loaded.n_iterations == rep.n_iterations
    assert loaded.seed == rep.seed
