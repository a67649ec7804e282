import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats as sps

from mskview.errors import DegenerateHistogram, EmptySlice, PlaneMismatch
from mskview.exams import SliceStack
from mskview.preprocess import (
    DEFAULT_PERCENTILES, LANDMARK_METHOD, INPUT_MEAN, INPUT_STD, StandardizerModel, apply_standardizer, fit_standardizer,
    normalised_bounds, prepare_slice, prepare_stack, volume_landmarks,
)

from conftest import random_volume


def _fg_percentiles(vol, pcs=DEFAULT_PERCENTILES):
    # k-th order statistic with k = ceil(n p / 100), counted by hand
    fg = np.sort(vol[vol > 0].astype(np.float64))
    n = fg.size
    return np.array([fg[max(int(np.ceil(n * p / 100.0)) - 1, 0)] for p in pcs])


def test_single_volume_fit_equals_own_landmarks(rng):
    vol = random_volume(rng)
    model = fit_standardizer([SliceStack(vol, "axial")], "axial")
    np.testing.assert_allclose(model.standard_landmarks, _fg_percentiles(vol), rtol=0, atol=1e-12)
    assert model.provenance["n_exams"] == 1


def test_two_volumes_scaled_by_two(rng):
    vol = random_volume(rng, low=1, high=120).astype(np.float64)
    doubled = vol * 2.0
    model = fit_standardizer([SliceStack(vol, "coronal"), SliceStack(doubled, "coronal")], "coronal")
    # oracle: percentiles of the doubled volume are twice the originals, so their mean is 1.5x
    first = _fg_percentiles(vol)
    np.testing.assert_allclose(_fg_percentiles(doubled), 2 * first, rtol=1e-12)
    np.testing.assert_allclose(model.standard_landmarks, 1.5 * first, rtol=1e-12)


def test_constant_volume_is_degenerate():
    vol = np.zeros((2, 8, 8), np.uint8)
    vol[:, 2:6, 2:6] = 77
    with pytest.raises(DegenerateHistogram):
        fit_standardizer([SliceStack(vol, "axial")], "axial")


def test_tied_landmarks_are_separated():
    # 90 % of foreground at one grey level forces equal percentiles
    vol = np.full((1, 10, 10), 50, np.uint8)
    vol[0, 0, :] = np.arange(1, 11) * 10
    marks = volume_landmarks(vol, DEFAULT_PERCENTILES)
    assert np.all(np.diff(marks) > 0)


def test_apply_identity_when_landmarks_match(rng):
    vol = random_volume(rng)
    model = fit_standardizer([SliceStack(vol, "sagittal")], "sagittal")
    out = apply_standardizer(model, SliceStack(vol, "sagittal")).data
    fg = vol > 0
    lo, hi = model.standard_range
    np.testing.assert_allclose(out[fg], np.clip(vol[fg], lo, hi), atol=1e-9)
    assert np.all(out[~fg] == 0)


def test_apply_recovers_affine_shift_at_landmarks(rng):
    ref = random_volume(rng, low=10, high=150).astype(np.float64)
    model = fit_standardizer([SliceStack(ref, "axial")], "axial")
    shifted = np.where(ref > 0, 1.7 * ref + 20.0, 0.0)
    out = apply_standardizer(model, SliceStack(shifted, "axial")).data
    # oracle: the shifted volume's landmarks are the affine image of the reference landmarks,
    # so the piecewise-linear map sends each shifted landmark back to the reference one
    shifted_marks = _fg_percentiles(shifted)
    np.testing.assert_allclose(shifted_marks, 1.7 * np.asarray(model.standard_landmarks) + 20, rtol=1e-12)
    mapped = np.interp(shifted_marks, shifted_marks, model.standard_landmarks)
    np.testing.assert_allclose(mapped, model.standard_landmarks, rtol=1e-12)
    # and voxelwise the output equals the (clipped) reference
    fg = ref > 0
    lo, hi = model.standard_range
    np.testing.assert_allclose(out[fg], np.clip(ref[fg], lo, hi), atol=1e-9)


def test_apply_plane_mismatch(rng):
    vol = random_volume(rng)
    model = fit_standardizer([SliceStack(vol, "axial")], "axial")
    with pytest.raises(PlaneMismatch):
        apply_standardizer(model, SliceStack(vol, "coronal"))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_apply_is_monotone(seed):
    rng = np.random.default_rng(seed)
    ref = random_volume(rng, shape=(2, 16, 16))
    other = random_volume(rng, shape=(2, 16, 16), low=5, high=255)
    model = fit_standardizer([SliceStack(ref, "axial")], "axial")
    out = apply_standardizer(model, SliceStack(other, "axial")).data
    fg = other > 0
    x, y = other[fg].astype(float), out[fg]
    order = np.argsort(x, kind="stable")
    assert np.all(np.diff(y[order]) >= 0)
    lo, hi = model.standard_range
    assert y.min() >= lo - 1e-12 and y.max() <= hi + 1e-12
    rho = sps.spearmanr(x, y).statistic
    assert rho > 0.99 or np.isnan(rho)


def test_fit_apply_idempotence(rng):
    vols = [random_volume(rng, shape=(3, 24, 24), low=1 + 5 * i, high=150 + 20 * i) for i in range(5)]
    model = fit_standardizer([SliceStack(v, "coronal") for v in vols], "coronal")
    standardized = [apply_standardizer(model, SliceStack(v, "coronal")) for v in vols]
    refit = fit_standardizer(standardized, "coronal")
    np.testing.assert_allclose(refit.standard_landmarks, model.standard_landmarks, rtol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_fit_apply_idempotence_property(seed, n):
    rng = np.random.default_rng(seed)
    vols = [random_volume(rng, shape=(2, 16, 16), low=int(rng.integers(1, 40)), high=int(rng.integers(80, 256)))
            for _ in range(n)]
    model = fit_standardizer([SliceStack(v, "axial") for v in vols], "axial")
    refit = fit_standardizer([apply_standardizer(model, SliceStack(v, "axial")) for v in vols], "axial")
    np.testing.assert_allclose(refit.standard_landmarks, model.standard_landmarks, rtol=1e-6)


def test_landmarks_match_numpy_method(rng):
    vol = random_volume(rng)
    fg = vol[vol > 0].astype(float)
    np.testing.assert_array_equal(volume_landmarks(vol, DEFAULT_PERCENTILES),
                                  np.percentile(fg, DEFAULT_PERCENTILES, method=LANDMARK_METHOD))
    np.testing.assert_array_equal(volume_landmarks(vol, DEFAULT_PERCENTILES), _fg_percentiles(vol))


def test_standardizer_json_round_trip(tmp_path, rng):
    model = fit_standardizer([SliceStack(random_volume(rng), "axial")], "axial", dataset_id="x/train")
    model.save(tmp_path / "std.json")
    loaded = StandardizerModel.load(tmp_path / "std.json")
    assert loaded == model
    assert loaded.provenance == {"dataset": "x/train", "n_exams": 1}


def test_standardizer_invariants():
    with pytest.raises(ValueError):
        StandardizerModel("axial", (10.0, 5.0), (1.0, 2.0))
    with pytest.raises(ValueError):
        StandardizerModel("axial", (10.0, 50.0), (2.0, 2.0))
    with pytest.raises(ValueError):
        StandardizerModel("axial", (0.0, 50.0), (1.0, 2.0))
    with pytest.raises(ValueError):
        StandardizerModel("axial", (50.0,), (1.0,))


def test_prepare_slice_shape(rng):
    out = prepare_slice(rng.uniform(0, 100, size=(256, 256)), (0.0, 100.0))
    assert out.shape == (3, 224, 224) and out.dtype == np.float32


def test_prepare_constant_lo_slice():
    out = prepare_slice(np.full((256, 256), 3.0), (3.0, 40.0))
    assert np.all(out == np.float32(-INPUT_MEAN / INPUT_STD))
    assert out[0, 0, 0] == pytest.approx(normalised_bounds()[0])


def test_prepare_224_is_identity_resize(rng):
    x = rng.uniform(0, 10, size=(224, 224))
    out = prepare_slice(x, (0.0, 10.0))
    expected = ((x.astype(np.float32) / np.float32(10.0)) - np.float32(INPUT_MEAN)) / np.float32(INPUT_STD)
    np.testing.assert_allclose(out[0], expected, atol=1e-6)
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])


def test_prepare_empty_slice():
    with pytest.raises(EmptySlice):
        prepare_slice(np.zeros((0, 5)), (0.0, 1.0))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(4, 60), st.integers(4, 60)),
              elements=st.floats(-50, 300)))
def test_prepared_slice_invariants(data):
    out = prepare_stack(data, (0.0, 255.0))
    assert tuple(out.shape) == (data.shape[0], 3, 224, 224)
    assert torch.equal(out[:, 0], out[:, 1]) and torch.equal(out[:, 1], out[:, 2])
    lo, hi = normalised_bounds()
    assert out.min() >= lo - 1e-5 and out.max() <= hi + 1e-5


def test_duplicate_slices_do_not_move_landmarks(rng):
    vol = random_volume(rng, (4, 20, 20))
    grown = np.concatenate([vol, vol[1:2], vol[1:2]])
    np.testing.assert_array_equal(volume_landmarks(vol, DEFAULT_PERCENTILES), volume_landmarks(grown, DEFAULT_PERCENTILES))
