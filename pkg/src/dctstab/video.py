"""Frame-array helpers shared by the estimators and the pipeline."""
from __future__ import annotations

import numpy as np

# Rec. 601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


def to_luma(frame) -> np.ndarray:
    """Gray ``(H, W)`` float image from a gray or RGB frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame
    if frame.ndim == 3 and frame.shape[2] == 1:
        return frame[..., 0]
    if frame.ndim == 3 and frame.shape[2] == 3:
        return frame @ _LUMA
    raise ValueError(f"expected (H, W) or (H, W, 3) frame, got shape {frame.shape}")


def as_video(frames) -> np.ndarray:
    """Stack frames into a float array ``(T, H, W[, 3])`` and check shapes agree."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if not frames:
        raise ValueError("video has no frames")
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise ValueError(f"frame {i} has shape {f.shape}, expected {shape}")
    return np.stack(frames)
