"""Stage-2 temporal bilateral smoothing of residual DCT motion.

For each frame ``i`` the motion to every neighbour ``j`` in a temporal window
is estimated separately. The smoothed coefficients are their weighted mean,
with a Gaussian weight on ``|i - j|`` and a photometric weight on how well
``I_i`` warped towards ``I_j`` reproduces it. Warping ``I_i`` by the result
pulls it towards its temporal neighbourhood.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dctbasis import DctCoeffs, evaluate
from .directflow import FramePyramid, PyramidSpec, estimate_window
from .robustfit import RobustLossParams
from .video import as_video, to_luma
from .warpcrop import CropResult, sample_bilinear, uniform_crop, warp_by_flow

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BilateralConfig:
    """Window radius ``W_R``, temporal scale (default ``W_R / 3``) and range scale."""

    window_radius: int = 16
    sigma_p: float = 0.1
    sigma_t: float | None = None
    skip_dc: bool = True
    thumb_size: int = 64

    def __post_init__(self):
        if self.window_radius < 0:
            raise ValueError("window_radius must be >= 0")
        if self.sigma_t is None:
            object.__setattr__(self, "sigma_t", self.window_radius / 3.0 if self.window_radius else 1.0)
        if self.sigma_t <= 0 or self.sigma_p <= 0:
            raise ValueError("sigma_t and sigma_p must be positive")


def thumbnail(frame, size: int = 64) -> np.ndarray:
    """Area-averaged ``size x size`` luma image, matching the coefficient grid."""
    img = to_luma(frame)
    h, w = img.shape
    ry = _area_matrix(h, size)
    rx = _area_matrix(w, size)
    return ry @ img @ rx.T


def _area_matrix(n_src: int, n_out: int) -> np.ndarray:
    """Rows average the source cells overlapping each output cell."""
    edges = np.linspace(0.0, n_src, n_out + 1)
    src = np.arange(n_src)
    lo = np.maximum(edges[:-1, None], src[None, :])
    hi = np.minimum(edges[1:, None], src[None, :] + 1)
    m = np.clip(hi - lo, 0.0, None)
    return m / m.sum(axis=1, keepdims=True)


def range_weight(thumb_i: np.ndarray, thumb_j: np.ndarray, theta: DctCoeffs,
                 frame_h: int, frame_w: int, sigma_p: float) -> float:
    """Photometric kernel ``exp(-||warp(I_i) - I_j||^2 / (2 N sigma_p^2)``.

    Images are thumbnails; ``N`` counts the pixels valid after warping.
    """
    th, tw = thumb_i.shape
    flow = evaluate(theta, th, tw)
    yy, xx = np.mgrid[0:th, 0:tw].astype(np.float64)
    warped, valid = sample_bilinear(thumb_i, xx + flow.u * tw / frame_w, yy + flow.v * th / frame_h)
    n = int(valid.sum())
    if n == 0:
        return 0.0
    sq = float(np.sum((warped[valid] - thumb_j[valid]) ** 2))
    return math.exp(-sq / (2.0 * n * sigma_p**2))


def bilateral_smooth_center(theta_window: dict, frames, center: int, config: BilateralConfig,
                            thumbs: dict | None = None, return_weights: bool = False):
    """Weighted mean of the window's coefficients around frame ``center``.

    Args:
        theta_window: ``j -> DctCoeffs`` motion from frame ``center`` to ``j``;
            must contain ``center``.
        frames: sequence of frames (only entries present in the window are read).
        thumbs: optional cache ``j -> thumbnail``.

    Returns:
        The smoothed :class:`DctCoeffs` (and ``{j: weight}`` if requested).
        With ``skip_dc`` the DC entries are copied from ``theta_window[center]``.
    """
    if not theta_window:
        raise ValueError("empty window")
    if center not in theta_window:
        raise ValueError(f"window must contain its center frame {center}")
    thumbs = {} if thumbs is None else thumbs

    def thumb(k):
        if k not in thumbs:
            thumbs[k] = thumbnail(frames[k], config.thumb_size)
        return thumbs[k]

    h, w = np.shape(frames[center])[:2]
    weights = {}
    for j, theta in theta_window.items():
        wt = math.exp(-((center - j) ** 2) / (2.0 * config.sigma_t**2))
        if j != center and math.isfinite(config.sigma_p):
            wt *= range_weight(thumb(center), thumb(j), theta, h, w, config.sigma_p)
        weights[j] = wt
    weights[center] = 1.0
    total = sum(weights.values())
    cx = sum(weights[j] * theta_window[j].coeff_x for j in theta_window) / total
    cy = sum(weights[j] * theta_window[j].coeff_y for j in theta_window) / total
    if config.skip_dc:
        cx[0, 0] = theta_window[center].coeff_x[0, 0]
        cy[0, 0] = theta_window[center].coeff_y[0, 0]
    out = DctCoeffs(cx, cy, theta_window[center].grid)
    return (out, weights) if return_weights else out


def smooth_sequence(frames, spec: PyramidSpec | None = None, loss: RobustLossParams | None = None,
                    config: BilateralConfig | None = None, progress=None, threads: int = 1) -> list[DctCoeffs]:
    """Smoothed residual coefficients for every frame.

    Window motions are estimated from each centre frame. A pair whose
    estimation fails drops ``j`` from that centre's window only.

    Args:
        threads: worker count. Centres are independent, so the result does
            not depend on it; ``threads > 1`` builds all pyramids up front.
    """
    spec = spec or PyramidSpec()
    config = config or BilateralConfig()
    t = len(frames)
    if t < 2:
        raise ValueError("need at least two frames to smooth")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if threads > 1:
        return _smooth_parallel(frames, spec, loss, config, progress, threads)
    pyramids: dict[int, FramePyramid] = {}
    thumbs: dict[int, np.ndarray] = {}
    out = []
    for i in range(t):
        window = estimate_window(frames, i, config.window_radius, spec, loss, pyramids)
        out.append(bilateral_smooth_center(window, frames, i, config, thumbs))
        # pyramids left of the next window are no longer needed
        for k in [k for k in pyramids if k < i + 1 - config.window_radius]:
            del pyramids[k]
        if progress is not None:
            progress(i)
    return out


def _smooth_parallel(frames, spec, loss, config, progress, threads):
    t = len(frames)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pyramids = dict(enumerate(pool.map(lambda f: FramePyramid(f, spec), frames)))
        thumbs = dict(enumerate(pool.map(lambda f: thumbnail(f, config.thumb_size), frames)))

        def run(i):
            window = estimate_window(frames, i, config.window_radius, spec, loss, pyramids)
            return bilateral_smooth_center(window, frames, i, config, thumbs)

        out = []
        for i, theta in enumerate(pool.map(run, range(t))):
            out.append(theta)
            if progress is not None:
                progress(i)
    return out


def apply_residual(frames, thetas) -> CropResult:
    """Warp each frame by its smoothed flow, then crop all frames uniformly.

    Frames with all-zero coefficients are copied unchanged.
    """
    video = as_video(frames)
    if len(thetas) != len(video):
        raise ValueError(f"need one coefficient set per frame: {len(thetas)} for {len(video)} frames")
    h, w = video.shape[1:3]
    warped = np.empty_like(video)
    masks = np.ones((len(video), h, w), dtype=bool)
    for i, (frame, theta) in enumerate(zip(video, thetas)):
        if not (np.any(theta.coeff_x) or np.any(theta.coeff_y)):
            warped[i] = frame
            continue
        warped[i], masks[i] = warp_by_flow(frame, evaluate(theta, h, w))
    return uniform_crop(warped, masks=masks)
