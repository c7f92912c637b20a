"""Synthetic shaky videos with analytic ground truth.

A large band-limited texture is viewed through a camera whose pose ``Q_i``
(a centre-anchored similarity) maps frame pixels to texture coordinates:
``I_i(p) = texture(Q_i(p))``. It follows that
``I_j(p) = I_i(Q_i^-1(Q_j(p)))``, so the backward-warp flow from frame
``i`` to frame ``j`` is ``Q_i^-1(Q_j(p)) - p``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .affine import SimilarityParams, compose, flow_from_similarity, invert, map_points
from .dctbasis import FlowField
from .pathsmooth import ParamSequence
from .warpcrop import sample_bilinear

FLOW_CONVENTION = "frame_j(p) = frame_i(p + flow_ij(p)); flow_ij(p) = Q_i^-1(Q_j(p)) - p"


@dataclass(frozen=True)
class ForegroundSpec:
    """Textured rectangle moving independently of the camera (frame coordinates)."""

    fraction: float = 0.1
    velocity: tuple = (1.5, 0.5)
    start: tuple = (0.3, 0.3)  # rectangle centre as a fraction of (width, height)
    seed: int = 1

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 0.5:
            raise ValueError("foreground area fraction must lie in [0, 0.5]")


@dataclass(frozen=True)
class SceneSpec:
    height: int = 240
    width: int = 320
    frames: int = 60
    seed: int = 0
    octaves: int = 4
    margin: int | None = None
    foreground: ForegroundSpec | None = None

    def __post_init__(self):
        if self.height < 2 or self.width < 2 or self.frames < 1:
            raise ValueError("scene needs at least 2x2 pixels and one frame")
        if self.octaves < 1:
            raise ValueError("need at least one texture octave")


@dataclass
class CameraPath:
    """Absolute poses as ``smooth + jitter`` in parameter space, ``(T, 4)`` arrays."""

    smooth: np.ndarray
    jitter: np.ndarray
    jitter_amp: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        self.smooth = np.asarray(self.smooth, dtype=np.float64)
        self.jitter = np.asarray(self.jitter, dtype=np.float64)
        self.jitter_amp = np.broadcast_to(np.asarray(self.jitter_amp, dtype=np.float64), (4,)).copy()
        if self.smooth.shape != self.jitter.shape or self.smooth.ndim != 2 or self.smooth.shape[1] != 4:
            raise ValueError("smooth and jitter must both be (T, 4)")
        if not (np.all(np.isfinite(self.smooth)) and np.all(np.isfinite(self.jitter))):
            raise ValueError("camera path must be finite")

    def __len__(self) -> int:
        return len(self.smooth)

    @classmethod
    def static(cls, t: int) -> "CameraPath":
        return cls(np.zeros((t, 4)), np.zeros((t, 4)))

    @classmethod
    def from_poses(cls, poses) -> "CameraPath":
        arr = np.array([np.asarray(p.as_array() if isinstance(p, SimilarityParams) else p) for p in poses])
        return cls(arr, np.zeros_like(arr))

    @property
    def poses(self) -> list[SimilarityParams]:
        return [SimilarityParams.from_array(v) for v in self.smooth + self.jitter]


def make_jitter_path(t: int, smooth_freq: int = 2, jitter_amp=(0.004, 0.004, 4.0, 4.0), seed: int = 0,
                     smooth_amp=(0.03, 0.03, 20.0, 12.0)) -> CameraPath:
    """Smooth sinusoidal camera motion plus seeded uniform jitter.

    Each parameter's smooth part is a sum of sinusoids at frequency bins
    ``1..smooth_freq`` over ``t - 1`` frame steps, with seeded phases and
    weights, scaled to peak amplitude ``smooth_amp``. The jitter is uniform
    on ``[-jitter_amp, jitter_amp]`` per parameter and frame.
    """
    if t < 2:
        raise ValueError("camera path needs at least two frames")
    if not 0 <= smooth_freq <= 2:
        raise ValueError("smooth motion is limited to frequency bins <= 2")
    rng = np.random.default_rng(seed)
    jitter_amp = np.broadcast_to(np.asarray(jitter_amp, dtype=np.float64), (4,))
    smooth_amp = np.broadcast_to(np.asarray(smooth_amp, dtype=np.float64), (4,))
    phase = np.arange(t)[:, None] / (t - 1)
    smooth = np.zeros((t, 4))
    for b in range(1, smooth_freq + 1):
        weight = rng.uniform(0.5, 1.0, 4)
        offset = rng.uniform(0.0, 2 * np.pi, 4)
        smooth += weight * np.sin(2 * np.pi * b * phase + offset)
    peak = np.abs(smooth).max(axis=0)
    smooth *= np.divide(smooth_amp, peak, out=np.zeros(4), where=peak > 0)
    unit = rng.uniform(-1.0, 1.0, (t, 4))
    return CameraPath(smooth, unit * jitter_amp, jitter_amp)


def make_texture(height: int, width: int, seed: int = 0, octaves: int = 4) -> np.ndarray:
    """Multi-octave value noise in ``[0.1, 0.9]`` with no energy above half Nyquist."""
    rng = np.random.default_rng(seed)
    img = np.zeros((height, width))
    for o in range(octaves):
        cell = max(64 >> o, 2)
        lattice = rng.random((height // cell + 4, width // cell + 4))
        up = ndimage.zoom(lattice, cell, order=3)[:height, :width]
        img += up * 0.6**o
    # hard spectral cut at a quarter cycle per pixel
    spec = np.fft.rfft2(img)
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    spec[np.hypot(fx, fy) > 0.25] = 0.0
    img = np.fft.irfft2(spec, s=(height, width))
    img -= img.min()
    img /= max(img.max(), 1e-12)
    return 0.1 + 0.8 * img


@dataclass
class SynthVideo:
    frames: np.ndarray           # (T, H, W) in [0, 1]
    path: CameraPath
    scene: SceneSpec
    fg_masks: np.ndarray | None  # (T, H, W) bool, True on the foreground
    fg_rects: list | None        # per frame (x0, y0, x1, y1), pixel-edge coordinates

    @property
    def poses(self) -> list[SimilarityParams]:
        return self.path.poses

    def pair_params(self, i: int, j: int) -> SimilarityParams:
        """Similarity ``Q_i^-1 o Q_j`` relating frame ``i`` to frame ``j``."""
        poses = self.poses
        return compose(poses[j], invert(poses[i]))

    def pair_flow(self, i: int, j: int) -> FlowField:
        return flow_from_similarity(self.pair_params(i, j), self.scene.height, self.scene.width)

    def alphas(self) -> ParamSequence:
        """Ground-truth frame-to-frame parameters ``Q_i^-1 o Q_{i+1}``."""
        return ParamSequence.from_params(self.pair_params(i, i + 1) for i in range(len(self.frames) - 1))

    def sidecar(self) -> dict:
        """JSON-ready description of the ground truth."""
        poses = self.poses
        out = {
            "scene": {k: v for k, v in asdict(self.scene).items() if k != "foreground"},
            "foreground": asdict(self.scene.foreground) if self.scene.foreground else None,
            "flow_convention": FLOW_CONVENTION,
            "params_order": ["r", "s", "tx", "ty"],
            "poses": [p.as_array().tolist() for p in poses],
            "smooth": self.path.smooth.tolist(),
            "jitter": self.path.jitter.tolist(),
            "jitter_amp": self.path.jitter_amp.tolist(),
            "alphas": self.alphas().values.tolist() if len(poses) > 1 else [],
            "foreground_rects": [list(map(float, r)) for r in self.fg_rects] if self.fg_rects else None,
        }
        return out


def required_margin(path: CameraPath, height: int, width: int) -> float:
    """Largest distance any frame pose moves a frame corner beyond the frame rectangle."""
    corners = np.array([[-0.5, -0.5], [width - 0.5, -0.5], [width - 0.5, height - 0.5], [-0.5, height - 0.5]])
    need = 0.0
    for q in path.poses:
        m = map_points(q, corners, height, width)
        need = max(need, -m[:, 0].min() - 0.5, m[:, 0].max() - (width - 0.5),
                   -m[:, 1].min() - 0.5, m[:, 1].max() - (height - 0.5))
    return need


def generate(scene: SceneSpec, path: CameraPath) -> SynthVideo:
    """Render the scene along ``path``.

    Raises:
        ValueError: if the path is a different length than the scene, or
            if an explicit ``scene.margin`` is smaller than required; the
            message states the required margin.
    """
    if len(path) != scene.frames:
        raise ValueError(f"path has {len(path)} poses for {scene.frames} frames")
    h, w = scene.height, scene.width
    need = required_margin(path, h, w) + 2.0
    margin = int(np.ceil(need)) if scene.margin is None else scene.margin
    if margin < need:
        raise ValueError(f"texture margin {margin} px too small: path needs at least {int(np.ceil(need))} px")
    margin = max(margin, 2)
    tex = make_texture(h + 2 * margin, w + 2 * margin, scene.seed, scene.octaves)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    frames = np.empty((scene.frames, h, w))
    for i, q in enumerate(path.poses):
        src = map_points(q, pts, h, w) + margin
        frames[i] = sample_bilinear(tex, src[:, 0].reshape(h, w), src[:, 1].reshape(h, w))[0]
    masks = rects = None
    if scene.foreground is not None and scene.foreground.fraction > 0:
        masks, rects = _paste_foreground(frames, scene.foreground)
    return SynthVideo(frames, path, scene, masks, rects)


def _paste_foreground(frames: np.ndarray, fg: ForegroundSpec):
    t, h, w = frames.shape
    side = np.sqrt(fg.fraction * h * w * w / h)  # frame aspect ratio
    fw, fh = min(side, w), min(fg.fraction * h * w / min(side, w), h)
    tex = make_texture(int(np.ceil(fh)) + 4, int(np.ceil(fw)) + 4, fg.seed, 3)
    # invert contrast so the object differs from the background texture
    tex = 1.0 - tex
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    masks = np.zeros((t, h, w), dtype=bool)
    rects = []
    for i in range(t):
        cx = fg.start[0] * w + fg.velocity[0] * i
        cy = fg.start[1] * h + fg.velocity[1] * i
        x0, y0 = cx - fw / 2, cy - fh / 2
        rect = (x0 - 0.5, y0 - 0.5, x0 + fw - 0.5, y0 + fh - 0.5)
        inside = (xx >= x0) & (xx < x0 + fw) & (yy >= y0) & (yy < y0 + fh)
        vals, _ = sample_bilinear(tex, np.clip(xx - x0 + 1, 0, tex.shape[1] - 1), np.clip(yy - y0 + 1, 0, tex.shape[0] - 1))
        frames[i][inside] = vals[inside]
        masks[i] = inside
        rects.append(rect)
    return masks, rects


def jitter_suite(n_videos: int = 20, t: int = 60, height: int = 240, width: int = 320,
                 jitter_amp=(0.008, 0.008, 8.0, 8.0), base_seed: int = 0):
    """Seeded collection of shaky videos sharing one motion model."""
    out = []
    for k in range(n_videos):
        path = make_jitter_path(t, 2, jitter_amp, seed=base_seed + 1000 + k)
        out.append(generate(SceneSpec(height, width, t, seed=base_seed + k), path))
    return out
