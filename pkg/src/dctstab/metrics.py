"""Quantitative quality measures for stabilised videos.

All measures take luma frames in ``[0, 1]``. Those that need motion use the
direct global-flow estimator, so results are deterministic for fixed input.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .affine import fit_full_affine, fit_similarity
from .dctbasis import DctCoeffs, evaluate
from .directflow import FramePyramid, PyramidSpec, estimate_pair
from .pathsmooth import ParamSequence
from .robustfit import RobustLossParams
from .video import to_luma

log = logging.getLogger(__name__)

STABILITY_BINS = 6
PSNR_CAP = 100.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_SIGMA, SSIM_RADIUS = 1.5, 5


# -- stability ---------------------------------------------------------------

def low_band_ratio(values, bins: int = STABILITY_BINS) -> float:
    """``sqrt(E_low / E_total)`` of a mean-removed sequence via Parseval.

    ``E_low`` keeps DFT bins ``1..bins`` and their conjugate partners. A
    sequence with no variation scores 1.
    """
    x = np.asarray(values, dtype=np.float64)
    x = x - x.mean()
    n = len(x)
    power = np.abs(np.fft.fft(x)) ** 2
    total = power[1:].sum()
    if total < 1e-12:
        return 1.0
    k = np.arange(n)
    keep = ((k >= 1) & (k <= bins)) | ((k >= n - bins) & (k >= 1))
    return float(np.sqrt(min(power[keep].sum() / total, 1.0)))


def stability_from_params(params: ParamSequence, bins: int = STABILITY_BINS):
    """Minimum over the four parameters of the low-band energy ratio.

    Returns ``(value, per_parameter_ratios)``.
    """
    ratios = [low_band_ratio(params.values[:, k], bins) for k in range(4)]
    return min(ratios), ratios


def consecutive_flows(video, spec: PyramidSpec | None = None, loss: RobustLossParams | None = None) -> list[DctCoeffs]:
    """Global motion between each consecutive frame pair."""
    spec = spec or PyramidSpec()
    pyr = [FramePyramid(f, spec) for f in video]
    return [estimate_pair(pyr[i], pyr[i + 1], spec, loss) for i in range(len(video) - 1)]


def params_from_flows(flows, frame_h: int, frame_w: int) -> ParamSequence:
    return ParamSequence.from_params(fit_similarity(evaluate(th, frame_h, frame_w)) for th in flows)


def stability(video, spec: PyramidSpec | None = None, loss: RobustLossParams | None = None, flows=None) -> float:
    """Low-frequency energy fraction of the video's frame-to-frame similarity motion.

    Raises:
        ValueError: for videos shorter than 8 frames.
    """
    if len(video) < 8:
        raise ValueError(f"stability needs at least 8 frames, got {len(video)}")
    flows = flows if flows is not None else consecutive_flows(video, spec, loss)
    h, w = np.shape(video[0])[:2]
    return stability_from_params(params_from_flows(flows, h, w))[0]


# -- SSIM / PSNR -------------------------------------------------------------

def ssim(a, b) -> float:
    """Mean SSIM with an 11-tap Gaussian window (sigma 1.5) and unit dynamic range.

    Border pixels within the window radius are excluded from the mean.
    No clipping is applied, so anti-correlated images score below zero.
    """
    a = to_luma(a)
    b = to_luma(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")

    def blur(x):
        return ndimage.gaussian_filter(x, SSIM_SIGMA, radius=SSIM_RADIUS, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    r = SSIM_RADIUS
    if smap.shape[0] > 2 * r and smap.shape[1] > 2 * r:
        smap = smap[r:-r, r:-r]
    return float(smap.mean())


def psnr(a, b) -> float:
    mse = float(np.mean((to_luma(a) - to_luma(b)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _pairwise(video, fn) -> list[float]:
    if len(video) < 2:
        raise ValueError("need at least two frames")
    return [fn(video[i], video[i + 1]) for i in range(len(video) - 1)]


def isi(video) -> float:
    """Average SSIM between consecutive frames."""
    return float(np.mean(_pairwise(video, ssim)))


def itf(video) -> float:
    """Average PSNR (dB) between consecutive frames."""
    return float(np.mean(_pairwise(video, psnr)))


# -- distortion / crop -------------------------------------------------------

def singular_ratio(affine: np.ndarray) -> float:
    sv = np.linalg.svd(np.asarray(affine)[:2, :2], compute_uv=False)
    return float(sv[1] / sv[0]) if sv[0] > 0 else 0.0


@dataclass
class FrameAffines:
    matrices: list          # 2x3 or None per frame
    skipped: list           # indices whose fit failed


def frame_affines(unstable, stabilized, spec: PyramidSpec | None = None,
                  loss: RobustLossParams | None = None, n_samples: int = 64) -> FrameAffines:
    """Affine map between each unstable frame and its stabilised counterpart."""
    if len(unstable) != len(stabilized):
        raise ValueError(f"videos differ in length: {len(unstable)} vs {len(stabilized)}")
    mats, skipped = [], []
    for i, (u, s) in enumerate(zip(unstable, stabilized)):
        try:
            theta = estimate_pair(u, s, spec, loss)
            h, w = np.shape(u)[:2]
            mats.append(fit_full_affine(evaluate(theta, h, w), n_samples=n_samples))
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("affine fit failed on frame %d: %s", i, exc)
            mats.append(None)
            skipped.append(i)
    return FrameAffines(mats, skipped)


def distortion(unstable, stabilized, spec: PyramidSpec | None = None, loss: RobustLossParams | None = None,
               affines: FrameAffines | None = None) -> float:
    """Mean ratio of the smaller to the larger singular value of per-frame affine maps."""
    affines = affines or frame_affines(unstable, stabilized, spec, loss)
    vals = [singular_ratio(m) for m in affines.matrices if m is not None]
    if not vals:
        raise ValueError("no frame produced an affine fit")
    return float(np.mean(vals))


def crop_ratio_from_affines(affines: FrameAffines) -> list[float]:
    """Per-frame area fraction of the input visible in the output, ``min(1, |det A|)``."""
    return [min(1.0, abs(float(np.linalg.det(m[:2, :2])))) for m in affines.matrices if m is not None]


def crop_ratio_metric(*stage_ratios: float) -> float:
    """Combined crop ratio of stages applied in sequence (areas multiply)."""
    out = 1.0
    for r in stage_ratios:
        out *= float(r)
    return out


# -- AGMDR -------------------------------------------------------------------

def motion_differences(flows, grid_size: int = 64) -> np.ndarray:
    """Frobenius norms of consecutive global-flow differences at grid resolution."""
    if len(flows) < 2:
        raise ValueError("need at least three frames")
    fields = [evaluate(th, grid_size, grid_size).to_array() for th in flows]
    return np.array([np.linalg.norm(fields[i] - fields[i - 1]) for i in range(1, len(fields))])


def agmdr_from_flows(unstable_flows, stabilized_flows, grid_size: int = 64) -> float:
    """AGMDR from precomputed consecutive flows.

    Two videos without any motion change score 0 (nothing removed, nothing
    added).

    Raises:
        ValueError: the unstable video has no motion change but the
            stabilised one does.
    """
    den = motion_differences(unstable_flows, grid_size).sum()
    num = motion_differences(stabilized_flows, grid_size).sum()
    if den < 1e-9:
        if num < 1e-9:
            return 0.0
        raise ValueError("unstable video has no global-motion variation; AGMDR undefined")
    return float(1.0 - num / den)


def agmdr(unstable, stabilized, spec: PyramidSpec | None = None, loss: RobustLossParams | None = None) -> float:
    """One minus the ratio of total consecutive global-motion change, stabilised over unstable."""
    if len(unstable) < 3 or len(stabilized) < 3:
        raise ValueError("AGMDR needs at least three frames per video")
    return agmdr_from_flows(consecutive_flows(unstable, spec, loss), consecutive_flows(stabilized, spec, loss))


# -- report ------------------------------------------------------------------

@dataclass
class MetricsReport:
    stability: float
    isi: float
    itf_db: float
    crop_ratio: float
    distortion: float
    agmdr: float
    per_frame: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_videos(unstable, stabilized, spec: PyramidSpec | None = None,
                    loss: RobustLossParams | None = None, crop_ratio: float | None = None) -> MetricsReport:
    """All six measures of ``stabilized`` against ``unstable``.

    ``crop_ratio`` may be supplied by the pipeline that produced the video;
    otherwise it is estimated from the per-frame affine maps.
    ``reference`` holds the same content measures for the input video.
    """
    if len(unstable) != len(stabilized):
        raise ValueError(f"videos differ in length: {len(unstable)} vs {len(stabilized)}")
    spec = spec or PyramidSpec()
    h, w = np.shape(stabilized[0])[:2]
    flows_u = consecutive_flows(unstable, spec, loss)
    flows_s = consecutive_flows(stabilized, spec, loss)
    params_s = params_from_flows(flows_s, h, w)
    params_u = params_from_flows(flows_u, *np.shape(unstable[0])[:2])
    stab_s, ratios_s = stability_from_params(params_s)
    stab_u, _ = stability_from_params(params_u)
    ssim_s = _pairwise(stabilized, ssim)
    psnr_s = _pairwise(stabilized, psnr)
    aff = frame_affines(unstable, stabilized, spec, loss)
    dist_pf = [singular_ratio(m) if m is not None else None for m in aff.matrices]
    crops = crop_ratio_from_affines(aff)
    crop = crop_ratio if crop_ratio is not None else (min(crops) if crops else 1.0)
    try:
        ag = agmdr_from_flows(flows_u, flows_s)
    except ValueError as exc:
        log.warning("%s", exc)
        ag = float("nan")
    return MetricsReport(
        stability=float(np.clip(stab_s, 0.0, 1.0)),
        isi=float(np.mean(ssim_s)),
        itf_db=float(np.mean(psnr_s)),
        crop_ratio=float(crop),
        distortion=float(np.mean([d for d in dist_pf if d is not None])),
        agmdr=ag,
        per_frame={
            "stability_per_param": dict(zip(("r", "s", "tx", "ty"), ratios_s)),
            "ssim": ssim_s,
            "psnr_db": psnr_s,
            "distortion": dist_pf,
            "crop_ratio": crops,
            "motion_difference": motion_differences(flows_s).tolist() if len(flows_s) >= 2 else [],
            "distortion_skipped": aff.skipped,
        },
        reference={
            "stability": float(np.clip(stab_u, 0.0, 1.0)),
            "isi": isi(unstable),
            "itf_db": itf(unstable),
        },
    )
