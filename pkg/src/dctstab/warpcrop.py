"""Frame warping, validity tracking, crop ratios and uniform cropping.

Geometry uses continuous pixel coordinates with pixel ``(col, row)``
centred at ``(x, y) = (col, row)``, so a frame of width ``w`` covers
``[-0.5, w - 0.5]`` horizontally. All warps are backward: the output at
``p`` samples the source at ``p + flow(p)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from shapely.geometry import Polygon, box

from .affine import SimilarityParams, invert, map_points
from .dctbasis import FlowField, interp_matrix

_EDGE_TOL = 1e-9


def inside_mask(xs: np.ndarray, ys: np.ndarray, h: int, w: int) -> np.ndarray:
    """Positions inside the hull of pixel centres of an ``h x w`` image."""
    return (xs >= -_EDGE_TOL) & (xs <= w - 1 + _EDGE_TOL) & (ys >= -_EDGE_TOL) & (ys <= h - 1 + _EDGE_TOL)


def sample_bilinear_hwc(image: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Bilinearly sample a channels-last ``(H, W, C)`` image at float positions.

    Returns ``(samples, valid)`` with samples of shape ``xs.shape + (C,)``,
    zeroed where ``valid`` is False (outside the pixel-centre hull).
    """
    h, w, c = image.shape
    if h < 2 or w < 2:
        raise ValueError("image must be at least 2x2 for bilinear sampling")
    flat = image.reshape(h * w, c)
    valid = inside_mask(xs, ys, h, w)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.minimum(xc.astype(np.intp), w - 2)
    y0 = np.minimum(yc.astype(np.intp), h - 2)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]
    i = y0 * w + x0
    p00 = flat.take(i, axis=0)
    p01 = flat.take(i + 1, axis=0)
    p10 = flat.take(i + w, axis=0)
    p11 = flat.take(i + w + 1, axis=0)
    top = p00 + (p01 - p00) * fx
    bot = p10 + (p11 - p10) * fx
    out = top + (bot - top) * fy
    out *= valid[..., None]
    return out, valid


def sample_bilinear(images: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Bilinearly sample one or more images at float positions.

    Args:
        images: ``(H, W)`` or ``(C, H, W)`` array.
        xs, ys: sample positions (any equal shape).

    Returns:
        ``(samples, valid)``; samples have shape ``xs.shape`` (or
        ``(C,) + xs.shape``) and are zero where ``valid`` is False.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        out, valid = sample_bilinear_hwc(images[..., None], xs, ys)
        return out[..., 0], valid
    out, valid = sample_bilinear_hwc(np.ascontiguousarray(np.moveaxis(images, 0, -1)), xs, ys)
    return np.moveaxis(out, -1, 0), valid


def warp_by_flow(frame: np.ndarray, flow: FlowField):
    """Backward-warp ``frame`` (``(H, W)`` or ``(H, W, C)``) by ``flow``.

    Returns the warped frame and its validity mask; samples that fall
    outside the source frame are invalid and set to zero.
    """
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    if flow.shape != (h, w):
        raise ValueError(f"flow shape {flow.shape} does not match frame {(h, w)}")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xs = xx + flow.u
    ys = yy + flow.v
    if frame.ndim == 3:
        out, valid = sample_bilinear_hwc(np.ascontiguousarray(frame), xs, ys)
    else:
        out, valid = sample_bilinear(frame, xs, ys)
    valid &= flow.valid
    if frame.ndim == 3:
        out *= valid[..., None]
    else:
        out *= valid
    return out, valid


def warp_by_similarity(frame: np.ndarray, params: SimilarityParams):
    """Backward-warp by a centre-anchored similarity: ``out(p) = frame(M(p))``."""
    from .affine import flow_from_similarity

    h, w = frame.shape[:2]
    return warp_by_flow(frame, flow_from_similarity(params, h, w))


def frame_rect(h: int, w: int) -> tuple[float, float, float, float]:
    return (-0.5, -0.5, w - 0.5, h - 0.5)


def valid_region(warp: SimilarityParams, h: int, w: int) -> Polygon:
    """Region of the output canvas whose backward samples land in the frame."""
    x0, y0, x1, y1 = frame_rect(h, w)
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    quad = Polygon(map_points(invert(warp), corners, h, w))
    return quad.intersection(box(x0, y0, x1, y1))


def _halfplanes(poly: Polygon):
    """Inequalities ``A @ p <= b`` describing a convex polygon."""
    pts = np.asarray(poly.exterior.coords)[:-1]
    if not poly.exterior.is_ccw:
        pts = pts[::-1]
    nxt = np.roll(pts, -1, axis=0)
    edge = nxt - pts
    # outward normal of an edge with the interior on its left
    normals = np.stack([edge[:, 1], -edge[:, 0]], axis=1)
    b = np.einsum("ij,ij->i", normals, pts)
    return normals, b


def _rect_inside(a, b, cx, cy, hw, hh, tol=1e-9) -> bool:
    corners = np.array([[cx - hw, cy - hh], [cx + hw, cy - hh], [cx + hw, cy + hh], [cx - hw, cy + hh]])
    return bool(np.all(corners @ a.T <= b + tol))


def largest_inscribed_rect(poly: Polygon, h: int, w: int, steps: int = 40):
    """Largest axis-aligned rectangle found inside a convex region.

    Centred at the region centroid: a binary search over a frame-aspect
    rectangle's scale, then independent width and height expansion passes.
    Exact for centrally symmetric regions, conservative otherwise.

    Returns ``(x0, y0, x1, y1)`` or None for an empty region.
    """
    if poly.is_empty or poly.area <= 1e-12:
        return None
    a, b = _halfplanes(poly)
    c = poly.centroid
    cx, cy = c.x, c.y

    def search(lo, hi, fits):
        if fits(hi):
            return hi
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if fits(mid):
                lo = mid
            else:
                hi = mid
        return lo

    scale = search(0.0, 1.0, lambda s: _rect_inside(a, b, cx, cy, s * w / 2, s * h / 2))
    hw, hh = scale * w / 2, scale * h / 2
    for _ in range(2):
        hw = search(hw, w / 2, lambda x: _rect_inside(a, b, cx, cy, x, hh))
        hh = search(hh, h / 2, lambda y: _rect_inside(a, b, cx, cy, hw, y))
    if hw <= 0 or hh <= 0:
        return None
    return (cx - hw, cy - hh, cx + hw, cy + hh)


def common_aspect_rect(regions, h: int, w: int):
    """Largest frame-aspect rectangle inside every convex region.

    A linear program in the centre and scale: each rectangle corner must
    satisfy each region's edge inequalities. Returns ``(x0, y0, x1, y1)`` or
    None when the regions share no interior.
    """
    rows, rhs = [], []
    for poly in regions:
        if poly.is_empty or poly.geom_type != "Polygon" or poly.area <= 1e-12:
            return None
        a, b = _halfplanes(poly)
        for sx in (-1.0, 1.0):
            for sy in (-1.0, 1.0):
                rows.append(np.stack([a[:, 0], a[:, 1], 0.5 * (sx * w * a[:, 0] + sy * h * a[:, 1])], axis=1))
                rhs.append(b)
    res = optimize.linprog([0.0, 0.0, -1.0], A_ub=np.concatenate(rows), b_ub=np.concatenate(rhs),
                           bounds=[(None, None), (None, None), (0.0, 1.0)], method="highs")
    if res.status != 0 or res.x[2] <= 1e-9:
        return None
    cx, cy, scale = res.x
    return (cx - scale * w / 2, cy - scale * h / 2, cx + scale * w / 2, cy + scale * h / 2)


def crop_ratio(warp: SimilarityParams, frame_h: int, frame_w: int) -> float:
    """Area of the largest inscribed rectangle of the valid region over the frame area."""
    rect = similarity_crop_rect(warp, frame_h, frame_w)
    if rect is None:
        return 0.0
    return rect_area(rect) / (frame_h * frame_w)


def similarity_crop_rect(warp: SimilarityParams, frame_h: int, frame_w: int):
    region = valid_region(warp, frame_h, frame_w)
    if region.geom_type != "Polygon":
        return None
    return largest_inscribed_rect(region, frame_h, frame_w)


def rect_area(rect) -> float:
    x0, y0, x1, y1 = rect
    return max(x1 - x0, 0.0) * max(y1 - y0, 0.0)


def mask_valid_rect(mask: np.ndarray):
    """Axis-aligned rectangle of valid pixels obtained by peeling edges.

    Repeatedly moves inward the edge whose current row/column holds the
    most invalid pixels until the rectangle contains none. Returns the
    continuous rectangle ``(x0, y0, x1, y1)`` or None if nothing survives.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    bad = np.pad((~mask).astype(np.int64), ((1, 0), (1, 0))).cumsum(0).cumsum(1)

    def count(r0, r1, c0, c1):  # inclusive bounds
        return bad[r1 + 1, c1 + 1] - bad[r0, c1 + 1] - bad[r1 + 1, c0] + bad[r0, c0]

    r0, r1, c0, c1 = 0, h - 1, 0, w - 1
    while r0 <= r1 and c0 <= c1 and count(r0, r1, c0, c1) > 0:
        edges = {
            "top": count(r0, r0, c0, c1) / (c1 - c0 + 1),
            "bottom": count(r1, r1, c0, c1) / (c1 - c0 + 1),
            "left": count(r0, r1, c0, c0) / (r1 - r0 + 1),
            "right": count(r0, r1, c1, c1) / (r1 - r0 + 1),
        }
        worst = max(edges, key=edges.get)
        if worst == "top":
            r0 += 1
        elif worst == "bottom":
            r1 -= 1
        elif worst == "left":
            c0 += 1
        else:
            c1 -= 1
    if r0 > r1 or c0 > c1:
        return None
    return (c0 - 0.5, r0 - 0.5, c1 + 0.5, r1 + 0.5)


def crop_ratio_flow(flow: FlowField) -> float:
    """Crop ratio of backward-warping by ``flow`` (valid-rectangle area / frame area)."""
    h, w = flow.shape
    yy, xx = np.mgrid[0:h, 0:w]
    xs = xx + flow.u
    ys = yy + flow.v
    valid = flow.valid & inside_mask(xs, ys, h, w)
    rect = mask_valid_rect(valid)
    if rect is None:
        return 0.0
    return rect_area(rect) / (h * w)


@dataclass
class CropResult:
    frames: np.ndarray
    masks: np.ndarray
    rect: tuple
    ratio: float


def uniform_crop(frames, rects=None, masks=None) -> CropResult:
    """Crop every frame by one aspect-preserving window and rescale to full size.

    The window is the intersection of the per-frame valid rectangles (given
    directly as ``rects`` or derived from validity ``masks``), shrunk about
    its centre to the frame aspect ratio.

    Raises:
        ValueError: if the intersection is empty; the message names the
            first frame that empties it.
    """
    frames = np.asarray(frames, dtype=np.float64)
    t, h, w = frames.shape[:3]
    if rects is None:
        if masks is None:
            raise ValueError("need per-frame rectangles or validity masks")
        rects = [mask_valid_rect(m) for m in masks]
    x0, y0, x1, y1 = frame_rect(h, w)
    for i, r in enumerate(rects):
        if r is None:
            raise ValueError(f"frame {i} has no valid region")
        x0, y0 = max(x0, r[0]), max(y0, r[1])
        x1, y1 = min(x1, r[2]), min(y1, r[3])
        if x1 - x0 <= 1e-9 or y1 - y0 <= 1e-9:
            raise ValueError(f"crop intersection becomes empty at frame {i}")
    cw, ch = x1 - x0, y1 - y0
    scale = min(cw / w, ch / h)
    cxm, cym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    rect = (cxm - scale * w / 2, cym - scale * h / 2, cxm + scale * w / 2, cym + scale * h / 2)
    if scale >= 1.0 - 1e-12:
        return CropResult(frames.copy(), np.ones((t, h, w), dtype=bool), frame_rect(h, w), 1.0)
    # output pixel centre -> source position inside the window
    ry = interp_matrix(h, rect[1] + (np.arange(h) + 0.5) * scale - 0.5)
    rx = interp_matrix(w, rect[0] + (np.arange(w) + 0.5) * scale - 0.5)
    if frames.ndim == 4:
        out = np.moveaxis(ry @ np.moveaxis(frames, 3, 1) @ rx.T, 1, 3)
    else:
        out = ry @ frames @ rx.T
    return CropResult(out, np.ones((t, h, w), dtype=bool), rect, scale * scale)
