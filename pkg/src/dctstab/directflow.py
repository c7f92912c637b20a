"""Coarse-to-fine direct estimation of DCT-parameterised global motion.

Between two frames we minimise the robust photometric error
``sum_p rho(|b(p) - a(p + flow(p))|)`` over the low-frequency DCT
coefficients of ``flow``. Levels are processed coarse to fine with a
non-decreasing cutoff; each level starts from the previous level's
coefficients (zero-padded), and a damped Gauss-Newton loop with robust
reweighting does the minimisation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .dctbasis import DctCoeffs, GridSpec, basis_at_pixels, truncate
from .robustfit import RobustLossParams, barron_loss_and_weight, separable_gram
from .video import to_luma
from .warpcrop import inside_mask

log = logging.getLogger(__name__)

# intensity residuals live in [0, 1]; the flow default of 0.5 px does not apply
DEFAULT_PHOTO_LOSS = RobustLossParams(-0.1, 0.05)
MIN_COARSE_SIZE = 16


@dataclass(frozen=True)
class PyramidSpec:
    """Coarse-to-fine schedule.

    ``max_side`` optionally box-reduces frames before the pyramid is built
    so the finest level has no side longer than it; coefficients are still
    expressed in full-resolution pixels.
    """

    levels: int = 4
    downscale: int = 2
    cutoff_schedule: tuple = (2, 4, 6, 8)
    max_gn_iters: int = 20
    grid: int = 64
    max_side: int | None = None
    step_tol: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "cutoff_schedule", tuple(int(c) for c in self.cutoff_schedule))
        if self.levels < 1:
            raise ValueError("need at least one level")
        if self.downscale < 2 or int(self.downscale) != self.downscale:
            raise ValueError("downscale must be an integer >= 2")
        if len(self.cutoff_schedule) != self.levels:
            raise ValueError("cutoff_schedule needs one entry per level")
        if any(b < a for a, b in zip(self.cutoff_schedule, self.cutoff_schedule[1:])):
            raise ValueError("cutoff_schedule must be non-decreasing")
        if self.cutoff_schedule[-1] > 8 or self.cutoff_schedule[0] < 0:
            raise ValueError("cutoffs must lie in [0, 8]")

    @property
    def final_cutoff(self) -> int:
        return self.cutoff_schedule[-1]

    def min_frame_size(self) -> int:
        return self.downscale ** (self.levels - 1) * MIN_COARSE_SIZE


def box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    h, w = img.shape[:2]
    h2, w2 = h // factor, w // factor
    img = img[: h2 * factor, : w2 * factor]
    return img.reshape(h2, factor, w2, factor, *img.shape[2:]).mean(axis=(1, 3))


def build_pyramid(frame: np.ndarray, levels: int = 4, downscale: int = 2) -> list[np.ndarray]:
    """Box-filtered pyramid, coarsest level first.

    Raises:
        ValueError: if the frame cannot support ``levels`` levels with a
            coarsest side of at least 16 pixels.
    """
    frame = np.asarray(frame, dtype=np.float64)
    need = downscale ** (levels - 1) * MIN_COARSE_SIZE
    if min(frame.shape[:2]) < need:
        raise ValueError(f"frame {frame.shape[:2]} too small for {levels} levels: need at least {need} px per side")
    out = [frame]
    for _ in range(levels - 1):
        out.append(box_downsample(out[-1], downscale))
    return out[::-1]


@dataclass
class _Level:
    image: np.ndarray   # smoothed intensities
    stack: np.ndarray   # (h, w, 3) float32: image, d/dx, d/dy
    factor: float       # full-resolution pixels per level pixel


class FramePyramid:
    """Per-frame pyramid with smoothed images and gradients, reusable across pairs."""

    def __init__(self, frame: np.ndarray, spec: PyramidSpec):
        frame = to_luma(frame)
        self.shape = frame.shape
        self.spec = spec
        if min(self.shape) < spec.min_frame_size():
            raise ValueError(
                f"frame {self.shape} too small for {spec.levels} levels: "
                f"need at least {spec.min_frame_size()} px per side"
            )
        base, f0 = frame, 1
        if spec.max_side:
            while max(base.shape) > spec.max_side and min(base.shape) // spec.downscale >= spec.min_frame_size():
                base = box_downsample(base, spec.downscale)
                f0 *= spec.downscale
        imgs = build_pyramid(base, spec.levels, spec.downscale)
        self.levels = []
        for k, img in enumerate(imgs):
            sm = ndimage.gaussian_filter(img, 1.0, mode="nearest")
            gy, gx = np.gradient(sm)
            factor = f0 * spec.downscale ** (spec.levels - 1 - k)
            stack = np.ascontiguousarray(np.stack([sm, gx, gy], axis=-1), dtype=np.float32)
            self.levels.append(_Level(sm, stack, float(factor)))


@dataclass
class AlignInfo:
    """Per-level diagnostics, coarsest level first.

    A level is *stalled* when three successively damped steps all failed to
    lower the objective; the last accepted iterate is kept and refinement
    continues at the next level.
    """

    objective: float = np.inf
    iterations: list = field(default_factory=list)
    stalled: list = field(default_factory=list)
    warm_start_iterations: int = 0

    @property
    def diverged(self) -> bool:
        return any(self.stalled)


def _as_pyramid(frame, spec: PyramidSpec) -> FramePyramid:
    if isinstance(frame, FramePyramid):
        if frame.spec != spec:
            raise ValueError("pyramid was built with a different PyramidSpec")
        return frame
    return FramePyramid(frame, spec)


def _align_level(la: _Level, lb: _Level, grid: GridSpec, cutoff: int, theta: DctCoeffs,
                 loss: RobustLossParams, spec: PyramidSpec):
    h, w = lb.image.shape
    f = la.factor
    xs = f * (np.arange(w) + 0.5) - 0.5
    ys = f * (np.arange(h) + 0.5) - 0.5
    cy, cx = basis_at_pixels(grid, cutoff, xs, ys)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    n = cutoff + 1

    def evaluate(tx, ty):
        u = cy @ tx @ cx.T / f
        v = cy @ ty @ cx.T / f
        xs, ys = xx + u, yy + v
        valid = inside_mask(xs, ys, h, w)
        samp = cv2.remap(la.stack, xs.astype(np.float32), ys.astype(np.float32),
                         cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE).astype(np.float64)
        samp *= valid[..., None]
        r = samp[..., 0] - lb.image
        n_valid = np.count_nonzero(valid)
        if n_valid == 0:
            return np.inf, r, samp, np.zeros_like(r)
        rho, wts = barron_loss_and_weight(r, loss)
        obj = float(np.sum(rho, where=valid) / n_valid)
        return obj, r, samp, wts * valid

    tx, ty = theta.coeff_x.copy(), theta.coeff_y.copy()
    obj, r, samp, wts = evaluate(tx, ty)
    lam = 1e-3
    iters = 0
    stalled = False
    for iters in range(1, spec.max_gn_iters + 1):
        gx, gy = samp[..., 1] / f, samp[..., 2] / f
        hxx = separable_gram(cy, cx, wts * gx * gx)
        hxy = separable_gram(cy, cx, wts * gx * gy)
        hyy = separable_gram(cy, cx, wts * gy * gy)
        hess = np.block([[hxx, hxy], [hxy.T, hyy]])
        grad = np.concatenate([(cy.T @ (wts * r * gx) @ cx).ravel(), (cy.T @ (wts * r * gy) @ cx).ravel()])
        diag = np.diag(hess).copy()
        ridge = 1e-9 * max(diag.mean(), 1e-300)
        fails = 0
        while True:
            delta = -np.linalg.solve(hess + np.diag(lam * diag + ridge), grad)
            dx, dy = delta[: n * n].reshape(n, n), delta[n * n:].reshape(n, n)
            step = max(np.abs(cy @ dx @ cx.T).max(), np.abs(cy @ dy @ cx.T).max()) / f
            if step < spec.step_tol:
                break
            cand = evaluate(tx + dx, ty + dy)
            if cand[0] <= obj:
                tx, ty = tx + dx, ty + dy
                obj, r, samp, wts = cand
                lam = max(lam / 10.0, 1e-7)
                break
            lam *= 10.0
            fails += 1
            if fails >= 3:
                stalled = True
                break
        if stalled or step < spec.step_tol:
            break
    return DctCoeffs(tx, ty, grid), obj, iters, stalled


def estimate_pair(frame_a, frame_b, spec: PyramidSpec | None = None,
                  loss: RobustLossParams | None = None, return_info: bool = False):
    """Global motion from ``frame_a`` to ``frame_b`` as DCT coefficients.

    The returned coefficients ``theta`` satisfy, approximately,
    ``frame_b(p) = frame_a(p + (Psi theta)(p))``: backward-warping
    ``frame_a`` by the evaluated flow reproduces ``frame_b``.

    Args:
        frame_a, frame_b: equal-size frames in ``[0, 1]`` (gray or RGB), or
            prebuilt :class:`FramePyramid` objects.
        spec: coarse-to-fine schedule (default :class:`PyramidSpec`).
        loss: robust loss on intensity residuals.
        return_info: also return an :class:`AlignInfo`.
    """
    spec = spec or PyramidSpec()
    loss = loss or DEFAULT_PHOTO_LOSS
    pa = _as_pyramid(frame_a, spec)
    pb = _as_pyramid(frame_b, spec)
    if pa.shape != pb.shape:
        raise ValueError(f"frame sizes differ: {pa.shape} vs {pb.shape}")
    grid = GridSpec.for_image(pa.shape[0], pa.shape[1], spec.grid)
    info = AlignInfo()
    # translation-only pass on the coarsest level: large shifts combined with
    # zoom otherwise pull the first low-frequency solve into a wrong basin
    theta, _, info.warm_start_iterations, _ = _align_level(pa.levels[0], pb.levels[0], grid, 0,
                                                           DctCoeffs.zeros(0, grid), loss, spec)
    for la, lb, cutoff in zip(pa.levels, pb.levels, spec.cutoff_schedule):
        theta = truncate(theta, cutoff)
        theta, obj, iters, stalled = _align_level(la, lb, grid, cutoff, theta, loss, spec)
        info.objective = obj
        info.iterations.append(iters)
        info.stalled.append(stalled)
        if stalled:
            log.debug("objective stopped decreasing at cutoff %d; keeping last accepted iterate", cutoff)
    theta = truncate(theta, spec.final_cutoff)
    return (theta, info) if return_info else theta


def estimate_window(frames, center: int, radius: int, spec: PyramidSpec | None = None,
                    loss: RobustLossParams | None = None, pyramids=None) -> dict[int, DctCoeffs]:
    """Separately estimated motion from frame ``center`` to every frame in its window.

    The window ``[center - radius, center + radius]`` is clipped to the
    sequence. The self entry is exactly zero. Pairs whose estimation raises
    are logged and left out of the result.

    Args:
        frames: sequence of frames.
        pyramids: optional dict cache ``index -> FramePyramid``; missing
            entries are built and stored, so a caller can share it across
            windows.
    """
    spec = spec or PyramidSpec()
    t = len(frames)
    if not 0 <= center < t:
        raise IndexError(f"center {center} outside [0, {t})")
    cache = {} if pyramids is None else pyramids

    def pyramid(k):
        if k not in cache:
            cache[k] = FramePyramid(frames[k], spec)
        return cache[k]

    h, w = np.shape(frames[center])[:2]
    grid = GridSpec.for_image(h, w, spec.grid)
    out = {}
    for j in range(max(0, center - radius), min(t - 1, center + radius) + 1):
        if j == center:
            out[j] = DctCoeffs.zeros(spec.final_cutoff, grid)
            continue
        try:
            out[j] = estimate_pair(pyramid(center), pyramid(j), spec, loss)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("motion %d -> %d failed: %s", center, j, exc)
    return out
