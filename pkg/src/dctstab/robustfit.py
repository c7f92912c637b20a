"""Robust (Barron-loss) fitting of DCT coefficients to a dense flow.

Moving objects produce flow that the low-frequency basis cannot explain;
the bounded loss lets those regions drop out of the fit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dctbasis import DctCoeffs, FlowField, GridSpec, _grid_flow, check_flow_usable, dct_basis

log = logging.getLogger(__name__)

DEFAULT_FLOW_SCALE = 0.5


@dataclass(frozen=True)
class RobustLossParams:
    """Shape ``alpha`` and scale ``c`` of the general robust loss.

    ``shape == 2`` is accepted as the quadratic limit (``(x/c)^2 / 2``);
    it exists so robust code paths can be compared with plain least squares.
    """

    shape: float = -0.1
    scale: float = DEFAULT_FLOW_SCALE

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.shape == 0 or self.shape > 2:
            raise ValueError(f"shape must be < 2 and nonzero (or exactly 2), got {self.shape}")

    @classmethod
    def quadratic(cls, scale: float = 1.0) -> "RobustLossParams":
        return cls(2.0, scale)

    @property
    def is_quadratic(self) -> bool:
        return self.shape == 2.0


def barron_loss(x, params: RobustLossParams):
    """Robust loss value for residual magnitudes ``x >= 0``."""
    x = np.asarray(x, dtype=np.float64)
    a, c = params.shape, params.scale
    z = (x / c) ** 2
    if params.is_quadratic:
        return 0.5 * z
    b = abs(a - 2.0)
    return (b / a) * ((z / b + 1.0) ** (a / 2.0) - 1.0)


def barron_weight(x, params: RobustLossParams):
    """IRLS weight ``loss'(x) / x``; equals ``1/c^2`` at ``x = 0``."""
    x = np.asarray(x, dtype=np.float64)
    a, c = params.shape, params.scale
    if params.is_quadratic:
        return np.full_like(x, 1.0 / c**2)
    b = abs(a - 2.0)
    return ((x / c) ** 2 / b + 1.0) ** (a / 2.0 - 1.0) / c**2


def barron_loss_and_weight(x, params: RobustLossParams):
    """``(barron_loss(x), barron_weight(x))`` sharing one power evaluation."""
    x = np.asarray(x, dtype=np.float64)
    a, c = params.shape, params.scale
    z = (x / c) ** 2
    if params.is_quadratic:
        return 0.5 * z, np.full_like(x, 1.0 / c**2)
    b = abs(a - 2.0)
    base = z / b + 1.0
    p = base ** (a / 2.0)
    return (b / a) * (p - 1.0), p / (base * c**2)


@dataclass
class IrlsReport:
    iterations: int
    final_objective: float
    weights: np.ndarray
    converged: bool = True
    objectives: list = field(default_factory=list)


def separable_gram(cy: np.ndarray, cx: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """``B^T diag(w) B`` for the separable basis ``B = cy (x) cx``.

    ``weight`` is a ``(len(cy), len(cx))`` map; the result is indexed by the
    C-order ravel of ``(ky, kx)`` on both axes.
    """
    n = cy.shape[1]
    m = cx.shape[1]
    pyy = (cy[:, :, None] * cy[:, None, :]).reshape(len(cy), n * n)
    pxx = (cx[:, :, None] * cx[:, None, :]).reshape(len(cx), m * m)
    g = (pyy.T @ weight @ pxx).reshape(n, n, m, m)
    return g.transpose(0, 2, 1, 3).reshape(n * m, n * m)


def _weighted_solve(cy, cx, w, fields):
    gram = separable_gram(cy, cx, w)
    gram[np.diag_indices_from(gram)] += 1e-10
    rhs = np.stack([(cy.T @ (w * f) @ cx).ravel() for f in fields], axis=1)
    return linalg.cho_solve(linalg.cho_factor(gram), rhs)


def project_robust(flow: FlowField, cutoff: int, grid: GridSpec,
                   params: RobustLossParams | None = None,
                   tol: float = 1e-6, max_iter: int = 50) -> tuple[DctCoeffs, IrlsReport]:
    """Fit DCT coefficients minimising the summed robust loss of the residual.

    The residual at each grid sample is the joint ``(u, v)`` magnitude, so
    both channels share one weight map. The fit starts from the DC term of
    the plain projection and first settles the DC-only problem before
    releasing the remaining frequencies; this keeps the reweighting out of
    minima where a low-frequency blob absorbs the outlier region. Each stage
    runs majorise-minimise reweighting until the relative coefficient change
    drops below ``tol`` or ``max_iter`` solves; zero-padding between stages
    leaves the fitted flow unchanged, so the recorded objective never rises.

    Returns:
        The coefficients and an :class:`IrlsReport`. If a stage hits
        ``max_iter`` the report has ``converged=False`` and the best iterate
        is returned.
    """
    params = params or RobustLossParams()
    if cutoff < 0 or cutoff > grid.max_cutoff():
        raise ValueError(f"cutoff {cutoff} outside [0, {grid.max_cutoff()}]")
    check_flow_usable(flow)
    gu, gv, support = _grid_flow(flow, grid)
    usable = support > 1e-12
    fields = (gu, gv)

    # plain projection restricted to DC is the masked mean
    dc = np.sqrt(grid.area) * np.array([[f[usable].mean() for f in fields]])
    theta = dc
    objectives = []
    best = None
    converged = True
    total = 0
    for stage_cutoff in sorted({0, cutoff}):
        n = stage_cutoff + 1
        theta = _pad(theta, n)
        cy = dct_basis(grid.grid_h, n, np.arange(grid.grid_h))
        cx = dct_basis(grid.grid_w, n, np.arange(grid.grid_w))

        def objective(th):
            res = np.hypot(gu - cy @ th[:, 0].reshape(n, n) @ cx.T,
                           gv - cy @ th[:, 1].reshape(n, n) @ cx.T)
            return float(np.sum(barron_loss(res[usable], params))), res

        obj, res = objective(theta)
        if not objectives:
            objectives.append(obj)
        if best is None or obj <= best[0]:
            best = (obj, theta, n)
        stage_done = False
        for _ in range(max_iter):
            total += 1
            w = np.where(usable, barron_weight(res, params), 0.0)
            new_theta = _weighted_solve(cy, cx, w, fields)
            change = np.linalg.norm(new_theta - theta)
            scale = max(np.linalg.norm(new_theta), np.linalg.norm(theta))
            theta = new_theta
            obj, res = objective(theta)
            objectives.append(obj)
            if obj <= best[0]:
                best = (obj, theta, n)
            if change <= tol * scale or scale == 0.0:
                stage_done = True
                break
        if not stage_done:
            converged = False
            log.warning("robust projection stage R=%d did not converge in %d iterations",
                        stage_cutoff, max_iter)
        if obj == 0.0:
            # exact fit; higher frequencies cannot improve it
            break

    obj, theta, n = best
    theta = _pad(theta, cutoff + 1)
    n = cutoff + 1
    cy = dct_basis(grid.grid_h, n, np.arange(grid.grid_h))
    cx = dct_basis(grid.grid_w, n, np.arange(grid.grid_w))
    res = np.hypot(gu - cy @ theta[:, 0].reshape(n, n) @ cx.T, gv - cy @ theta[:, 1].reshape(n, n) @ cx.T)
    # reported weights are normalised to (0, 1]
    w = np.where(usable, barron_weight(res, params), 0.0) * params.scale**2
    coeffs = DctCoeffs(theta[:, 0].reshape(n, n), theta[:, 1].reshape(n, n), grid)
    return coeffs, IrlsReport(total, obj, w, converged, objectives)


def _pad(theta: np.ndarray, n: int) -> np.ndarray:
    m = int(round(np.sqrt(theta.shape[0])))
    out = np.zeros((n * n, theta.shape[1]))
    k = min(m, n)
    for c in range(theta.shape[1]):
        block = np.zeros((n, n))
        block[:k, :k] = theta[:, c].reshape(m, m)[:k, :k]
        out[:, c] = block.ravel()
    return out
