"""Two-stage stabilisation: similarity path smoothing, then residual DCT smoothing."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .affine import fit_similarity
from .dctbasis import DctCoeffs, evaluate
from .directflow import FramePyramid, PyramidSpec, estimate_pair
from .pathsmooth import CropSearchResult, ParamSequence, smooth_with_crop_limit
from .residualsmooth import BilateralConfig, apply_residual, smooth_sequence
from .robustfit import DEFAULT_FLOW_SCALE, RobustLossParams
from .video import as_video
from .warpcrop import (CropResult, common_aspect_rect, similarity_crop_rect, uniform_crop, valid_region,
                       warp_by_similarity)

log = logging.getLogger(__name__)


def cutoff_schedule(cutoff: int, levels: int) -> tuple:
    """Evenly increasing per-level cutoffs ending at ``cutoff``."""
    return tuple(int(math.ceil(cutoff * (k + 1) / levels)) for k in range(levels))


@dataclass(frozen=True)
class PipelineConfig:
    crop_limit: float = 0.8
    window_radius: int = 16
    cutoff: int = 8
    sigma_p: float = 0.1
    grid: int = 64
    loss_shape: float = -0.1
    photo_scale: float = 0.05
    flow_scale: float = DEFAULT_FLOW_SCALE
    levels: int = 4
    max_side: int | None = 320
    slack_window: int = 9
    affine_only: bool = False
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.crop_limit <= 1.0:
            raise ValueError(f"crop_limit must lie in (0, 1], got {self.crop_limit}")
        if self.window_radius < 0:
            raise ValueError("window_radius must be >= 0")
        if not 0 <= self.cutoff <= 8:
            raise ValueError("cutoff must lie in [0, 8]")
        if self.sigma_p <= 0 or self.photo_scale <= 0 or self.flow_scale <= 0:
            raise ValueError("scales must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def pyramid_spec(self) -> PyramidSpec:
        return PyramidSpec(levels=self.levels, cutoff_schedule=cutoff_schedule(self.cutoff, self.levels),
                           grid=self.grid, max_side=self.max_side)

    def photo_loss(self) -> RobustLossParams:
        return RobustLossParams(self.loss_shape, self.photo_scale)

    def flow_loss(self) -> RobustLossParams:
        return RobustLossParams(self.loss_shape, self.flow_scale)

    def bilateral(self) -> BilateralConfig:
        return BilateralConfig(self.window_radius, self.sigma_p)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PipelineResult:
    frames: np.ndarray
    alpha: ParamSequence
    stage1: CropSearchResult
    stage1_crop: CropResult
    thetas: list | None = None
    stage2_crop: CropResult | None = None
    timing: dict = field(default_factory=dict)

    @property
    def crop_ratio(self) -> float:
        """Area fraction of the input that survives both applied crops."""
        ratio = self.stage1_crop.ratio
        if self.stage2_crop is not None:
            ratio *= self.stage2_crop.ratio
        return float(ratio)

    def path_rows(self) -> list[list]:
        rows = []
        for i, (a, b) in enumerate(zip(self.alpha.values, self.stage1.beta.values)):
            rows.append([i, *a.tolist(), *b.tolist()])
        return rows


def estimate_alpha(video: np.ndarray, spec: PyramidSpec, loss: RobustLossParams,
                   flow_loss: RobustLossParams | None = None) -> tuple[ParamSequence, list[DctCoeffs]]:
    """Frame-to-frame similarity parameters from consecutive global flows."""
    h, w = video.shape[1:3]
    pyr_prev = FramePyramid(video[0], spec)
    flows, params = [], []
    for i in range(1, len(video)):
        pyr = FramePyramid(video[i], spec)
        theta = estimate_pair(pyr_prev, pyr, spec, loss)
        flows.append(theta)
        params.append(fit_similarity(evaluate(theta, h, w), flow_loss))
        pyr_prev = pyr
    return ParamSequence.from_params(params), flows


def apply_stage1(video: np.ndarray, search: CropSearchResult) -> CropResult:
    """Warp frames by their stabilising similarities and crop uniformly.

    The crop window is the largest frame-aspect rectangle valid in every
    warped frame.
    """
    h, w = video.shape[1:3]
    warped = np.empty_like(video)
    for i, (frame, warp) in enumerate(zip(video, search.warps)):
        warped[i] = warp_by_similarity(frame, warp)[0]
    rect = common_aspect_rect([valid_region(warp, h, w) for warp in search.warps], h, w)
    if rect is None:
        # per-frame rectangles locate the frame that empties the intersection
        return uniform_crop(warped, rects=[similarity_crop_rect(warp, h, w) for warp in search.warps])
    return uniform_crop(warped, rects=[rect] * len(warped))


def stabilize(frames, config: PipelineConfig | None = None, alpha: ParamSequence | None = None) -> PipelineResult:
    """Run the full algorithm (or Stage 1 only when ``config.affine_only``).

    Args:
        frames: ``(T, H, W)`` or ``(T, H, W, 3)`` video in ``[0, 1]``.
        alpha: optional precomputed frame-to-frame parameters, skipping
            Stage-1 motion estimation.

    Raises:
        ValueError: fewer than two frames, or an empty crop intersection
            (the message names the frame).
    """
    config = config or PipelineConfig()
    video = as_video(frames)
    if len(video) < 2:
        raise ValueError("need at least two frames")
    h, w = video.shape[1:3]
    spec = config.pyramid_spec()
    loss = config.photo_loss()
    timing = {}

    t0 = time.perf_counter()
    if alpha is None:
        alpha, _ = estimate_alpha(video, spec, loss, config.flow_loss())
    elif len(alpha) != len(video) - 1:
        raise ValueError(f"need {len(video) - 1} frame-to-frame parameters, got {len(alpha)}")
    timing["stage1_motion_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    search = smooth_with_crop_limit(alpha, config.crop_limit, h, w, window=config.slack_window)
    crop1 = apply_stage1(video, search)
    timing["stage1_smooth_warp_s"] = time.perf_counter() - t0
    log.info("stage 1: z=%.6f min crop %.4f applied crop %.4f", search.slack.z, search.min_crop, crop1.ratio)

    result = PipelineResult(crop1.frames, alpha, search, crop1, timing=timing)
    if config.affine_only:
        return result

    t0 = time.perf_counter()
    thetas = smooth_sequence(crop1.frames, spec, loss, config.bilateral(), threads=config.threads)
    timing["stage2_motion_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    crop2 = apply_residual(crop1.frames, thetas)
    timing["stage2_warp_s"] = time.perf_counter() - t0
    result.frames = crop2.frames
    result.thetas = thetas
    result.stage2_crop = crop2
    return result
