import math

import numpy as np
import pytest

from dctstab.affine import SimilarityParams
from dctstab.dctbasis import DctCoeffs, GridSpec, evaluate
from dctstab.directflow import estimate_pair
from dctstab.residualsmooth import (BilateralConfig, apply_residual, bilateral_smooth_center, range_weight,
                                    smooth_sequence, thumbnail)
from dctstab.synth import CameraPath, SceneSpec, generate
from dctstab.warpcrop import uniform_crop

GRID = GridSpec(64, 64, 240, 320)


def coeffs_with(value, pos=(1, 2)):
    theta = DctCoeffs.zeros(8, GRID)
    theta.coeff_x[pos] = value
    return theta


def test_default_temporal_scale():
    assert BilateralConfig(16).sigma_t == pytest.approx(16 / 3)
    assert BilateralConfig(0).sigma_t == 1.0
    with pytest.raises(ValueError):
        BilateralConfig(-1)


def test_single_element_window(rng):
    theta = DctCoeffs(rng.normal(size=(9, 9)), rng.normal(size=(9, 9)), GRID)
    frames = np.zeros((1, 240, 320))
    out = bilateral_smooth_center({0: theta}, frames, 0, BilateralConfig(0))
    np.testing.assert_array_equal(out.coeff_x, theta.coeff_x)
    np.testing.assert_array_equal(out.coeff_y, theta.coeff_y)


def test_equal_coefficients_are_a_fixpoint(rng):
    theta = DctCoeffs(rng.normal(size=(9, 9)), rng.normal(size=(9, 9)), GRID)
    frames = rng.random((5, 240, 320))
    out = bilateral_smooth_center({j: theta.copy() for j in range(5)}, frames, 2, BilateralConfig(2))
    np.testing.assert_allclose(out.coeff_x, theta.coeff_x, atol=1e-12)
    np.testing.assert_allclose(out.coeff_y, theta.coeff_y, atol=1e-12)


def test_symmetric_window_weights():
    frames = np.full((3, 240, 320), 0.5)
    window = {0: coeffs_with(1.0), 1: coeffs_with(0.0), 2: coeffs_with(-1.0)}
    out, weights = bilateral_smooth_center(window, frames, 1, BilateralConfig(1), return_weights=True)
    assert BilateralConfig(1).sigma_t == pytest.approx(1 / 3)
    assert weights[0] == pytest.approx(math.exp(-4.5))
    assert weights[0] == pytest.approx(0.011109, abs=1e-6)
    assert weights[1] == 1.0
    assert weights[2] == pytest.approx(0.011109, abs=1e-6)
    assert out.coeff_x[1, 2] == pytest.approx(0.0, abs=1e-15)


def test_weighted_mean_matches_hand_computation():
    frames = np.full((3, 240, 320), 0.5)
    window = {0: coeffs_with(3.0), 1: coeffs_with(1.0), 2: coeffs_with(0.0)}
    out = bilateral_smooth_center(window, frames, 1, BilateralConfig(1, sigma_t=1.0))
    w = math.exp(-0.5)
    assert out.coeff_x[1, 2] == pytest.approx((3.0 * w + 1.0) / (1 + 2 * w))


def test_skip_dc_keeps_center_translation():
    frames = np.full((3, 240, 320), 0.5)
    window = {j: DctCoeffs.translation(float(j), 0.0, GRID, cutoff=8) for j in range(3)}
    out = bilateral_smooth_center(window, frames, 0, BilateralConfig(2))
    assert out.mean_translation() == (0.0, 0.0)
    mixed = bilateral_smooth_center(window, frames, 0, BilateralConfig(2, skip_dc=False))
    assert mixed.mean_translation()[0] > 0


def test_range_weight_penalises_mismatch(rng):
    a = rng.random((64, 64))
    theta = DctCoeffs.zeros(8, GRID)
    assert range_weight(a, a, theta, 240, 320, 0.1) == 1.0
    b = a + 0.1
    assert range_weight(a, b, theta, 240, 320, 0.1) == pytest.approx(math.exp(-0.01 / 0.02))


def test_thumbnail_is_area_average():
    frame = np.arange(240 * 320, dtype=float).reshape(240, 320)
    thumb = thumbnail(frame, 64)
    assert thumb.shape == (64, 64)
    assert thumb.mean() == pytest.approx(frame.mean())
    small = np.arange(16.0).reshape(4, 4)
    np.testing.assert_allclose(thumbnail(small, 2), [[2.5, 4.5], [10.5, 12.5]])


def test_window_must_contain_center():
    with pytest.raises(ValueError):
        bilateral_smooth_center({0: coeffs_with(1.0)}, np.zeros((2, 240, 320)), 1, BilateralConfig(1))


def textured_video(t, poses=None, seed=5):
    poses = poses or [SimilarityParams.identity()] * t
    return generate(SceneSpec(240, 320, t, seed=seed), CameraPath.from_poses(poses))


def test_static_video_smooths_to_zero():
    frames = textured_video(4).frames
    for theta in smooth_sequence(frames, config=BilateralConfig(2)):
        assert np.abs(theta.as_vector()).max() < 1e-6


def test_single_frame_is_rejected():
    with pytest.raises(ValueError):
        smooth_sequence(np.zeros((1, 240, 320)))


def jitter_energy(frames):
    """Sum of squared differences of consecutive global flows (64x64 samples)."""
    flows = [evaluate(estimate_pair(a, b), 64, 64) for a, b in zip(frames[:-1], frames[1:])]
    return sum(float(np.sum((f.u - g.u) ** 2 + (f.v - g.v) ** 2)) for f, g in zip(flows[:-1], flows[1:]))


def test_smoothing_reduces_inter_frame_jitter():
    # constant-velocity translation plus rotation/zoom shake; DC is left to the similarity stage
    rng = np.random.default_rng(8)
    jitter = rng.uniform(-0.015, 0.015, (10, 2))
    poses = [SimilarityParams(jitter[i, 0], jitter[i, 1], 1.0 * i, -0.5 * i) for i in range(10)]
    frames = textured_video(10, poses).frames
    thetas = smooth_sequence(frames, config=BilateralConfig(4))
    out = apply_residual(frames, thetas).frames
    assert jitter_energy(out) < 0.5 * jitter_energy(frames)


def test_translation_jitter_needs_dc_smoothing():
    rng = np.random.default_rng(8)
    jitter = rng.uniform(-1.5, 1.5, (8, 2))
    poses = [SimilarityParams(0, 0, 1.0 * i + jitter[i, 0], jitter[i, 1]) for i in range(8)]
    frames = textured_video(8, poses).frames
    kept = smooth_sequence(frames, config=BilateralConfig(3))
    assert all(t.coeff_x[0, 0] == 0 and t.coeff_y[0, 0] == 0 for t in kept)
    smoothed = smooth_sequence(frames, config=BilateralConfig(3, skip_dc=False))
    out = apply_residual(frames, smoothed).frames
    assert jitter_energy(out) < 0.5 * jitter_energy(frames)


def test_result_lies_in_window_envelope(rng):
    frames = rng.random((7, 240, 320))
    window = {j: DctCoeffs(rng.normal(size=(9, 9)), rng.normal(size=(9, 9)), GRID) for j in range(7)}
    window[3] = DctCoeffs.zeros(8, GRID)
    out, weights = bilateral_smooth_center(window, frames, 3, BilateralConfig(3), return_weights=True)
    stack_x = np.stack([t.coeff_x for t in window.values()])
    inner = np.ones((9, 9), bool)
    inner[0, 0] = False
    assert np.all(out.coeff_x[inner] >= stack_x.min(0)[inner] - 1e-12)
    assert np.all(out.coeff_x[inner] <= stack_x.max(0)[inner] + 1e-12)
    assert out.coeff_x[0, 0] == 0.0
    assert all(0 < w <= 1 for w in weights.values()) and weights[3] == 1.0


def test_infinite_range_scale_is_gaussian_filter(rng):
    frames = rng.random((9, 240, 320))
    window = {j: DctCoeffs(rng.normal(size=(9, 9)), rng.normal(size=(9, 9)), GRID) for j in range(9)}
    config = BilateralConfig(4, sigma_p=math.inf, skip_dc=False)
    out = bilateral_smooth_center(window, frames, 4, config)
    g = np.exp(-((np.arange(9) - 4) ** 2) / (2 * (4 / 3) ** 2))
    expected = np.tensordot(g / g.sum(), np.stack([window[j].coeff_x for j in range(9)]), axes=1)
    np.testing.assert_allclose(out.coeff_x, expected, atol=1e-9)


def test_thread_count_does_not_change_results():
    rng = np.random.default_rng(9)
    poses = [SimilarityParams(0, 0, *rng.uniform(-2, 2, 2)) for _ in range(5)]
    frames = textured_video(5, poses).frames
    one = smooth_sequence(frames, config=BilateralConfig(2))
    many = smooth_sequence(frames, config=BilateralConfig(2), threads=3)
    for a, b in zip(one, many):
        np.testing.assert_array_equal(a.as_vector(), b.as_vector())


def test_zero_residual_leaves_frames_unchanged(rng):
    frames = rng.random((3, 240, 320))
    res = apply_residual(frames, [DctCoeffs.zeros(8, GRID)] * 3)
    np.testing.assert_array_equal(res.frames, frames)
    assert res.ratio == 1.0


def test_constant_translation_shifts_and_crops(rng):
    frames = rng.random((3, 240, 320))
    shift = [DctCoeffs.translation(5.0, 0.0, GRID, cutoff=8)] * 3
    res = apply_residual(frames, shift)
    # the shared valid window loses a 5 px band on the right
    assert res.rect[2] - res.rect[0] == pytest.approx(315.0)
    assert res.ratio == pytest.approx((315 / 320) ** 2)
    ref = uniform_crop(np.roll(frames, -5, axis=2), rects=[res.rect] * 3).frames
    np.testing.assert_allclose(res.frames, ref, atol=1e-9)


def test_only_the_nonzero_frame_is_warped(rng):
    frames = rng.random((3, 240, 320))
    thetas = [DctCoeffs.zeros(8, GRID), coeffs_with(20.0), DctCoeffs.zeros(8, GRID)]
    res = apply_residual(frames, thetas)
    untouched = uniform_crop(frames, rects=[res.rect] * 3).frames
    np.testing.assert_allclose(res.frames[0], untouched[0], atol=1e-12)
    np.testing.assert_allclose(res.frames[2], untouched[2], atol=1e-12)
    assert np.abs(res.frames[1] - untouched[1]).max() > 0.05


def test_apply_residual_length_mismatch():
    with pytest.raises(ValueError):
        apply_residual(np.zeros((2, 240, 320)), [DctCoeffs.zeros(8, GRID)])
