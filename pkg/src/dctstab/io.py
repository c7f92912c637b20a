"""File formats: frame directories, Middlebury ``.flo``, path CSV and JSON dumps."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .dctbasis import DctCoeffs, FlowField

FRAME_SUFFIXES = (".png", ".pgm", ".ppm")
FLO_MAGIC = b"PIEH"
PATH_COLUMNS = ["frame_index", "alpha_r", "alpha_s", "alpha_tx", "alpha_ty",
                "beta_r", "beta_s", "beta_tx", "beta_ty"]


class InputError(ValueError):
    """Unreadable or inconsistent input; maps to the usage/input exit status."""


@dataclass
class FrameFormat:
    suffix: str = ".png"
    bit_depth: int = 8
    color: bool = False


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)


def read_frame(path) -> tuple[np.ndarray, FrameFormat]:
    """Read one 8- or 16-bit PNG/PGM/PPM frame as floats in ``[0, 1]`` (RGB order)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing frame file: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise InputError(f"cannot decode frame: {path}")
    if raw.dtype == np.uint8:
        depth = 8
    elif raw.dtype == np.uint16:
        depth = 16
    else:
        raise InputError(f"unsupported sample type {raw.dtype} in {path}")
    img = raw.astype(np.float64) / (2**depth - 1)
    color = img.ndim == 3
    if color:
        img = img[..., :3][..., ::-1]  # BGR(A) -> RGB
    return np.ascontiguousarray(img), FrameFormat(path.suffix.lower(), depth, color)


def read_frames(directory) -> tuple[np.ndarray, FrameFormat, list[str]]:
    """All frames of a directory in lexicographic order.

    Raises:
        InputError: fewer than one frame, unreadable files or size mismatch
            (the message names the file).
    """
    paths = list_frames(directory)
    if not paths:
        raise InputError(f"no frames found in {directory}")
    frames, fmt = [], None
    for p in paths:
        img, f = read_frame(p)
        if frames and img.shape != frames[0].shape:
            raise InputError(f"frame {p.name} has shape {img.shape}, expected {frames[0].shape}")
        frames.append(img)
        fmt = fmt or f
    return np.stack(frames), fmt, [p.name for p in paths]


def write_frame(path, img: np.ndarray, fmt: FrameFormat) -> None:
    top = 2**fmt.bit_depth - 1
    dtype = np.uint8 if fmt.bit_depth == 8 else np.uint16
    data = np.round(np.clip(img, 0.0, 1.0) * top).astype(dtype)
    if data.ndim == 3:
        data = np.ascontiguousarray(data[..., ::-1])
    if not cv2.imwrite(str(path), data):
        raise OSError(f"cannot write frame {path}")


def write_frames(directory, frames, fmt: FrameFormat | None = None, names=None) -> list[Path]:
    fmt = fmt or FrameFormat()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = fmt.suffix
    if suffix == ".pgm" and np.ndim(frames[0]) == 3:
        suffix = ".ppm"
    out = []
    for i, img in enumerate(frames):
        stem = Path(names[i]).stem if names else f"frame_{i:05d}"
        path = directory / f"{stem}{suffix}"
        write_frame(path, img, fmt)
        out.append(path)
    return out


def write_flo(path, flow: FlowField) -> None:
    """Middlebury format: magic, width, height (int32 LE), interleaved float32 LE (u, v)."""
    h, w = flow.shape
    data = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(np.array([w, h], dtype="<i4").tobytes())
        fh.write(data.tobytes())


def read_flo(path) -> FlowField:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read flow file {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != FLO_MAGIC:
        raise InputError(f"{path} is not a .flo file (bad magic)")
    w, h = np.frombuffer(raw[4:12], dtype="<i4")
    if w <= 0 or h <= 0 or len(raw) != 12 + 8 * int(w) * int(h):
        raise InputError(f"{path}: size fields do not match payload")
    data = np.frombuffer(raw[12:], dtype="<f4").reshape(int(h), int(w), 2).astype(np.float64)
    return FlowField(data[..., 0].copy(), data[..., 1].copy())


def write_path_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PATH_COLUMNS)
        for row in rows:
            writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def coeffs_to_json(coeffs: list[DctCoeffs]) -> list[dict]:
    return [c.to_dict() for c in coeffs]


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys may use dashes or underscores."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out
