import json

import numpy as np
import pytest

from dctstab.affine import SimilarityParams
from dctstab.dctbasis import GridSpec, evaluate, project
from dctstab.pathsmooth import ParamSequence, solve_qp
from dctstab.synth import (CameraPath, ForegroundSpec, SceneSpec, generate, jitter_suite, make_jitter_path,
                           make_texture)
from dctstab.warpcrop import warp_by_flow


def test_zero_path_gives_identical_frames():
    video = generate(SceneSpec(60, 80, 4, seed=1), CameraPath.static(4))
    for frame in video.frames[1:]:
        np.testing.assert_array_equal(frame, video.frames[0])
    assert not video.pair_flow(0, 3).to_array().any()
    assert not video.alphas().values.any()


def test_translation_path_flow_convention():
    poses = [SimilarityParams(0, 0, float(i), 0) for i in range(3)]
    video = generate(SceneSpec(60, 80, 3, seed=1), CameraPath.from_poses(poses))
    flow = video.pair_flow(0, 1)
    np.testing.assert_allclose(flow.u, 1.0, atol=1e-12)
    np.testing.assert_allclose(flow.v, 0.0, atol=1e-12)
    # frame_{i+1}(p) = frame_i(p + flow): an integer shift of the rendered image
    np.testing.assert_allclose(video.frames[1][:, :-1], video.frames[0][:, 1:], atol=1e-12)
    assert "p + flow" in video.sidecar()["flow_convention"]


def test_alternating_jitter_smooths_to_constant():
    jitter = np.zeros((20, 4))
    jitter[:, 2] = [2.0, -2.0] * 10
    video = generate(SceneSpec(60, 80, 20, seed=1), CameraPath(np.zeros((20, 4)), jitter))
    alpha = video.alphas()
    np.testing.assert_allclose(alpha.column("tx"), [-4.0, 4.0] * 9 + [-4.0], atol=1e-9)
    beta = solve_qp(alpha, [0, 0, 10.0, 0]).column("tx")
    assert np.ptp(beta) < 0.5
    assert abs(beta.mean()) < 0.5


def test_jitter_path_is_deterministic_and_linear():
    a = make_jitter_path(30, 2, (0.004, 0.004, 4.0, 4.0), seed=7)
    b = make_jitter_path(30, 2, (0.004, 0.004, 4.0, 4.0), seed=7)
    np.testing.assert_array_equal(a.smooth, b.smooth)
    np.testing.assert_array_equal(a.jitter, b.jitter)
    c = make_jitter_path(30, 2, (0.008, 0.008, 8.0, 8.0), seed=7)
    np.testing.assert_array_equal(c.jitter, 2 * a.jitter)
    np.testing.assert_array_equal(c.smooth, a.smooth)
    assert np.all(np.abs(a.jitter) <= [0.004, 0.004, 4.0, 4.0])


def test_smooth_component_stays_in_low_bins():
    path = make_jitter_path(40, 2, 0.0, seed=3)
    assert not path.jitter.any()
    assert np.abs(path.smooth).max(axis=0) == pytest.approx([0.03, 0.03, 20.0, 12.0])
    with pytest.raises(ValueError):
        make_jitter_path(40, 3, 0.0)
    with pytest.raises(ValueError):
        make_jitter_path(1)


def test_rendering_is_deterministic():
    path = make_jitter_path(3, 2, 1.0, seed=5)
    one = generate(SceneSpec(60, 80, 3, seed=2), path)
    two = generate(SceneSpec(60, 80, 3, seed=2), path)
    np.testing.assert_array_equal(one.frames, two.frames)


def test_texture_is_band_limited():
    tex = make_texture(128, 128, seed=4)
    assert 0.1 <= tex.min() and tex.max() <= 0.9
    spec = np.abs(np.fft.fft2(tex - tex.mean())) ** 2
    f = np.abs(np.fft.fftfreq(128))
    high = (f[:, None] > 0.25) | (f[None, :] > 0.25)
    assert spec[high].sum() < 1e-6 * spec.sum()


def test_small_margin_is_rejected_with_requirement():
    path = CameraPath.from_poses([SimilarityParams.identity(), SimilarityParams(0, 0, 20, 0)])
    with pytest.raises(ValueError, match="at least 22 px"):
        generate(SceneSpec(60, 80, 2, margin=5), path)
    with pytest.raises(ValueError):
        generate(SceneSpec(60, 80, 3), path)


def test_foreground_mask_and_sidecar():
    scene = SceneSpec(120, 160, 3, seed=1, foreground=ForegroundSpec(0.25))
    video = generate(scene, CameraPath.static(3))
    assert video.fg_masks.shape == (3, 120, 160)
    assert video.fg_masks[0].mean() == pytest.approx(0.25, abs=0.02)
    car = json.loads(json.dumps(video.sidecar()))
    assert car["foreground"]["fraction"] == 0.25
    assert len(car["foreground_rects"]) == 3
    # the object moves by its velocity between frames
    dx = car["foreground_rects"][1][0] - car["foreground_rects"][0][0]
    assert dx == pytest.approx(ForegroundSpec().velocity[0])
    with pytest.raises(ValueError):
        ForegroundSpec(0.6)


def test_analytic_flow_explains_rendered_pair():
    path = CameraPath.from_poses([SimilarityParams(0.01, -0.005, 2.0, 1.0), SimilarityParams(-0.01, 0.01, -3.0, 2.5)])
    video = generate(SceneSpec(240, 320, 2, seed=6), path)
    warped, valid = warp_by_flow(video.frames[0], video.pair_flow(0, 1))
    inner = np.zeros_like(valid)
    inner[10:-10, 10:-10] = True
    err = (warped - video.frames[1])[valid & inner]
    assert np.sqrt(np.mean(err**2)) < 1e-2


@pytest.mark.parametrize("seed", range(4))
def test_low_frequency_projection_captures_global_flow(seed):
    rng = np.random.default_rng(seed)
    q = SimilarityParams(*rng.uniform(-1, 1, 4) * [0.02, 0.02, 8.0, 8.0])
    video = generate(SceneSpec(240, 320, 2, seed=seed), CameraPath.from_poses([SimilarityParams.identity(), q]))
    flow = video.pair_flow(0, 1)
    approx = evaluate(project(flow, 8, GridSpec(64, 64, 240, 320)), 240, 320)
    resid = np.sum((flow.u - approx.u) ** 2 + (flow.v - approx.v) ** 2)
    assert 1.0 - resid / np.sum(flow.u**2 + flow.v**2) >= 0.99


def test_jitter_suite_is_seeded():
    suite = jitter_suite(n_videos=2, t=3, height=60, width=80)
    assert len(suite) == 2
    assert not np.array_equal(suite[0].frames, suite[1].frames)
    again = jitter_suite(n_videos=1, t=3, height=60, width=80)
    np.testing.assert_array_equal(again[0].frames, suite[0].frames)
    assert isinstance(suite[0].alphas(), ParamSequence)
