"""Similarity (partial affine) motion: fitting, parameter algebra and flows.

A parameter vector ``(r, s, tx, ty)`` denotes the centre-anchored map

    p -> exp(s) * Rot(r) @ (p - pc) + pc + t

with ``pc`` the image centre. Anchoring at the centre decouples the
translation from rotation and scale to first order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dctbasis import FlowField
from .robustfit import RobustLossParams, barron_weight

PARAM_NAMES = ("r", "s", "tx", "ty")


@dataclass(frozen=True)
class SimilarityParams:
    r: float = 0.0
    s: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        for name in PARAM_NAMES:
            object.__setattr__(self, name, float(getattr(self, name)))
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("similarity parameters must be finite")

    @classmethod
    def identity(cls) -> "SimilarityParams":
        return cls()

    @classmethod
    def from_array(cls, arr) -> "SimilarityParams":
        r, s, tx, ty = (float(v) for v in arr)
        return cls(r, s, tx, ty)

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.s, self.tx, self.ty])

    def linear(self) -> np.ndarray:
        c, sn = np.cos(self.r), np.sin(self.r)
        return np.exp(self.s) * np.array([[c, -sn], [sn, c]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])


def image_center(h: int, w: int) -> np.ndarray:
    return np.array([(w - 1) / 2.0, (h - 1) / 2.0])


def map_points(params: SimilarityParams, pts, h: int, w: int) -> np.ndarray:
    """Apply the similarity to ``(N, 2)`` points ``(x, y)``."""
    pc = image_center(h, w)
    pts = np.asarray(pts, dtype=np.float64)
    return (pts - pc) @ params.linear().T + pc + params.translation


def compose(a: SimilarityParams, b: SimilarityParams) -> SimilarityParams:
    """The map ``p -> b(a(p))``: apply ``a`` first, then ``b``."""
    t = b.linear() @ a.translation + b.translation
    return SimilarityParams(a.r + b.r, a.s + b.s, t[0], t[1])


def invert(a: SimilarityParams) -> SimilarityParams:
    t = -np.linalg.solve(a.linear(), a.translation)
    return SimilarityParams(-a.r, -a.s, t[0], t[1])


def flow_from_similarity(params: SimilarityParams, h: int, w: int) -> FlowField:
    """Dense flow ``f(p) = M(p) - p``."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    pc = image_center(h, w)
    a = params.linear()
    dx, dy = xx - pc[0], yy - pc[1]
    u = a[0, 0] * dx + a[0, 1] * dy + pc[0] + params.tx - xx
    v = a[1, 0] * dx + a[1, 1] * dy + pc[1] + params.ty - yy
    return FlowField(u, v)


def _sample_correspondences(flow: FlowField, n_samples: int):
    h, w = flow.shape
    rows = np.unique(np.round(np.linspace(0, h - 1, min(n_samples, h))).astype(int))
    cols = np.unique(np.round(np.linspace(0, w - 1, min(n_samples, w))).astype(int))
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    keep = flow.valid[rr, cc]
    p = np.stack([cc[keep], rr[keep]], axis=1).astype(np.float64)
    f = np.stack([flow.u[rr, cc][keep], flow.v[rr, cc][keep]], axis=1)
    return p, p + f


def _weighted_procrustes(p, q, w, pc):
    sw = w.sum()
    if sw <= 0:
        raise ValueError("all correspondence weights vanished")
    pm = (w[:, None] * p).sum(0) / sw
    qm = (w[:, None] * q).sum(0) / sw
    P = p - pm
    Q = q - qm
    scatter = (w[:, None, None] * P[:, :, None] * P[:, None, :]).sum(0)
    ev = np.linalg.eigvalsh(scatter)
    if ev[0] <= 1e-12 * max(ev[1], 1e-300):
        raise ValueError("degenerate correspondence geometry (collinear samples)")
    norm = np.trace(scatter)
    a = (w * (P * Q).sum(1)).sum() / norm
    b = (w * (P[:, 0] * Q[:, 1] - P[:, 1] * Q[:, 0])).sum() / norm
    lin = np.array([[a, -b], [b, a]])
    t = qm - lin @ (pm - pc) - pc
    return SimilarityParams(float(np.arctan2(b, a)), float(np.log(np.hypot(a, b))), t[0], t[1])


def fit_similarity(flow: FlowField, loss: RobustLossParams | None = None,
                   n_samples: int = 32, max_iter: int = 20, tol: float = 1e-8) -> SimilarityParams:
    """Robustly fit similarity parameters to a flow field.

    Correspondences ``(p, p + flow(p))`` are taken on an ``n_samples``
    square sub-grid. Weighted Procrustes solves are alternated with robust
    reweighting of the residual magnitudes.
    """
    loss = loss or RobustLossParams()
    h, w = flow.shape
    p, q = _sample_correspondences(flow, n_samples)
    if len(p) < 4:
        raise ValueError("need at least 4 valid flow samples")
    pc = image_center(h, w)
    weights = np.ones(len(p))
    params = _weighted_procrustes(p, q, weights, pc)
    for _ in range(max_iter):
        res = np.linalg.norm(map_points(params, p, h, w) - q, axis=1)
        weights = barron_weight(res, loss)
        new = _weighted_procrustes(p, q, weights, pc)
        step = np.abs(new.as_array() - params.as_array()).max()
        params = new
        if step < tol:
            break
    if abs(params.s) >= 2:
        raise ValueError(f"implausible log-scale {params.s:.3f}")
    return params


def fit_full_affine(flow: FlowField, n_samples: int | None = None) -> np.ndarray:
    """Least-squares 2x3 affine matrix mapping ``p`` to ``p + flow(p)``."""
    if n_samples is None:
        yy, xx = np.nonzero(flow.valid)
        p = np.stack([xx, yy], axis=1).astype(np.float64)
        q = p + np.stack([flow.u[yy, xx], flow.v[yy, xx]], axis=1)
    else:
        p, q = _sample_correspondences(flow, n_samples)
    design = np.column_stack([p, np.ones(len(p))])
    if len(p) < 3 or np.linalg.matrix_rank(design) < 3:
        raise ValueError("affine fit is rank deficient")
    sol, *_ = np.linalg.lstsq(design, q, rcond=None)
    return sol.T
