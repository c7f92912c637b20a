import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dctstab.affine import SimilarityParams, compose, invert
from dctstab.pathsmooth import (ParamSequence, QpSettings, SlackConfig, accumulate_warps, compute_slack_scales,
                                min_crop_ratio, smooth_with_crop_limit, solve_qp)
from dctstab.synth import make_jitter_path
from oracles import exhaustive_box_qp, qp_value

EPS = QpSettings().fidelity_eps


def one_param(values, k=0):
    arr = np.zeros((len(values), 4))
    arr[:, k] = values
    return ParamSequence(arr)


def test_constant_sequence_has_zero_slack():
    np.testing.assert_array_equal(compute_slack_scales(ParamSequence(np.full((20, 4), 0.3))), 0.0)


def test_alternating_sequence_slack():
    alt = np.array([1.0, -1.0] * 10)
    lam = compute_slack_scales(one_param(alt), 9)
    # every odd-length window has mean +-1/9 and sum of squared deviations 80/9
    assert lam[0] == pytest.approx(np.sqrt(80 / 9 / 8), abs=1e-12)
    assert lam[0] == pytest.approx(1.0541, abs=1e-4)
    assert lam[0] == pytest.approx(np.std(alt[:9], ddof=1), abs=1e-12)


@given(arrays(np.float64, (15, 4), elements=st.floats(-5, 5)))
def test_slack_is_homogeneous(values):
    seq = ParamSequence(values)
    np.testing.assert_allclose(compute_slack_scales(ParamSequence(2 * values)), 2 * compute_slack_scales(seq),
                               rtol=1e-12, atol=1e-12)


def test_short_sequence_falls_back_to_global_std():
    values = np.arange(20.0).reshape(5, 4)
    np.testing.assert_allclose(compute_slack_scales(ParamSequence(values), 9), values.std(axis=0, ddof=1))


def test_zero_slack_returns_alpha(rng):
    alpha = ParamSequence(rng.normal(size=(12, 4)))
    np.testing.assert_array_equal(solve_qp(alpha, 0.0).values, alpha.values)


def test_three_point_examples():
    beta = solve_qp(one_param([0.0, 1.0, 0.0]), [1.0, 0, 0, 0]).column("r")
    np.testing.assert_allclose(beta, 1 / 3, atol=1e-3)
    np.testing.assert_allclose(beta, exhaustive_box_qp([0, 1, 0], 1.0, EPS), atol=1e-9)
    beta = solve_qp(one_param([0.0, 1.0, 0.0]), [0.5, 0, 0, 0]).column("r")
    np.testing.assert_allclose(beta, 0.5, atol=1e-3)
    np.testing.assert_allclose(beta, exhaustive_box_qp([0, 1, 0], 0.5, EPS), atol=1e-6)


def test_constant_alpha_is_fixed_point():
    alpha = ParamSequence(np.tile([0.01, 0.0, 2.0, -1.0], (10, 1)))
    np.testing.assert_allclose(solve_qp(alpha, [1, 1, 1, 1]).values, alpha.values, atol=1e-9)


@given(st.integers(1, 8), st.floats(0.0, 2.0), st.integers(0, 2**32 - 1))
def test_solver_matches_face_enumeration(n, xi, seed):
    a = np.random.default_rng(seed).normal(size=n) * 2
    beta, reports = solve_qp(one_param(a), [xi, 0, 0, 0], return_report=True)
    b = beta.column("r")
    ref = exhaustive_box_qp(a, xi, EPS)
    assert qp_value(b, a, EPS) == pytest.approx(qp_value(ref, a, EPS), abs=1e-6)
    assert np.all(np.abs(b - a) <= xi + 1e-12)
    assert reports[0].converged


def test_long_sequence_satisfies_kkt(rng):
    a = np.cumsum(rng.normal(size=300)) + rng.normal(size=300)
    beta, reports = solve_qp(one_param(a), [0.7, 0, 0, 0], return_report=True)
    assert np.all(np.abs(beta.column("r") - a) <= 0.7 + 1e-12)
    assert reports[0].converged and reports[0].kkt_residual <= QpSettings().tol


def test_warps_make_output_motion_beta(rng):
    alpha = ParamSequence(rng.normal(scale=[0.01, 0.01, 3, 3], size=(6, 4)))
    beta = ParamSequence(rng.normal(scale=[0.01, 0.01, 3, 3], size=(6, 4)))
    warps = accumulate_warps(alpha, beta)
    for i in range(6):
        # J_{i+1} = J_i o beta_i means alpha_i o W_{i+1} = W_i o beta_i as maps ("a then b" order)
        lhs = compose(warps[i + 1], alpha[i])
        rhs = compose(beta[i], warps[i])
        np.testing.assert_allclose(lhs.as_array(), rhs.as_array(), atol=1e-9)
    assert warps[0] == SimilarityParams.identity()


def test_identical_paths_give_identity_warps(rng):
    alpha = ParamSequence(rng.normal(scale=[0.01, 0.01, 3, 3], size=(6, 4)))
    for w in accumulate_warps(alpha, alpha):
        np.testing.assert_allclose(w.as_array(), 0, atol=1e-9)


def test_kappa_one_means_no_smoothing(rng):
    alpha = ParamSequence(rng.normal(scale=[0.005, 0.005, 2, 2], size=(20, 4)))
    res = smooth_with_crop_limit(alpha, 1.0, 240, 320)
    assert res.slack.z == 0.0
    np.testing.assert_array_equal(res.beta.values, alpha.values)
    assert all(w == SimilarityParams.identity() for w in res.warps)
    assert res.min_crop == 1.0


def test_smooth_alpha_needs_no_correction():
    alpha = ParamSequence(np.tile([0.0, 0.0, 1.5, -0.5], (20, 1)))
    res = smooth_with_crop_limit(alpha, 0.8, 240, 320)
    np.testing.assert_allclose(res.gamma.values, 0, atol=1e-9)
    assert res.min_crop == pytest.approx(1.0, abs=1e-9)


def jitter_alphas(seed, amp=8.0, t=60):
    poses = make_jitter_path(t, 2, (amp / 1000, amp / 1000, amp, amp), seed=seed).poses
    return ParamSequence.from_params(compose(poses[i + 1], invert(poses[i])) for i in range(t - 1))


def test_crop_limit_is_tight():
    res = smooth_with_crop_limit(jitter_alphas(1001), 0.8, 240, 320)
    assert 0 < res.slack.z < 1
    assert 0.79 <= res.min_crop <= 1.0
    z_next, crop_next = res.next_larger_probe()
    assert z_next > res.slack.z and crop_next < 0.8
    assert min_crop_ratio(res.warps, 240, 320) == pytest.approx(res.min_crop)
    # the bisection resolution is 2^-20
    assert z_next - res.slack.z <= 2.0**-20 + 1e-15
    np.testing.assert_allclose(res.slack.xi, np.array(res.slack.lambdas) * res.slack.z)
    assert np.all(np.abs(res.gamma.values) <= res.slack.xi + 1e-12)


def test_slack_config_validation():
    with pytest.raises(ValueError):
        SlackConfig(np.ones(4), 1.5)
    with pytest.raises(ValueError):
        SlackConfig(-np.ones(4), 0.5)
    with pytest.raises(ValueError):
        solve_qp(ParamSequence(np.zeros((3, 4))), -1.0)
