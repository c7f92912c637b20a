"""Stage-1 camera-path smoothing under a crop-ratio budget.

Each of the four similarity parameters is smoothed independently by the
box-constrained problem

    min  sum_i (b[i+1] - 2 b[i] + b[i-1])^2 + eps * sum_i (b[i] - a[i])^2
    s.t. |b[i] - a[i]| <= xi

where ``a`` is the measured frame-to-frame parameter sequence. The slack
``xi = lambda * z`` shares one global multiplier ``z`` across parameters,
and ``z`` is chosen by bisection so the stabilising warps keep a minimum
crop ratio.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from .affine import PARAM_NAMES, SimilarityParams, compose, invert
from .warpcrop import crop_ratio

log = logging.getLogger(__name__)


class ParamSequence:
    """Time-ordered similarity parameters stored as a ``(n, 4)`` array ``(r, s, tx, ty)``."""

    def __init__(self, values):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != 4:
            raise ValueError(f"expected an (n, 4) array, got shape {values.shape}")
        if len(values) < 1:
            raise ValueError("parameter sequence is empty")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter sequence has non-finite entries")
        self.values = values

    @classmethod
    def from_params(cls, params) -> "ParamSequence":
        return cls([p.as_array() for p in params])

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i) -> SimilarityParams:
        return SimilarityParams.from_array(self.values[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, PARAM_NAMES.index(name)]

    def __sub__(self, other: "ParamSequence") -> "ParamSequence":
        return ParamSequence(self.values - other.values)


@dataclass(frozen=True)
class SlackConfig:
    lambdas: tuple
    z: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        if any(v < 0 for v in self.lambdas):
            raise ValueError("slack scales must be non-negative")
        if not 0.0 <= self.z <= 1.0:
            raise ValueError(f"z must lie in [0, 1], got {self.z}")

    @property
    def xi(self) -> np.ndarray:
        return np.array(self.lambdas) * self.z


@dataclass(frozen=True)
class QpSettings:
    fidelity_eps: float = 1e-6
    tol: float = 1e-8
    max_iters: int = 5000

    def __post_init__(self):
        if self.fidelity_eps <= 0 or self.tol <= 0:
            raise ValueError("fidelity_eps and tol must be positive")


def compute_slack_scales(alpha: ParamSequence, window: int = 9) -> np.ndarray:
    """Average local sample standard deviation of each parameter.

    Sequences shorter than ``window`` fall back to one global standard
    deviation per parameter (logged).
    """
    vals = alpha.values
    if len(vals) < window:
        log.warning("sequence of %d < window %d: using global standard deviation", len(vals), window)
        if len(vals) < 2:
            return np.zeros(4)
        return vals.std(axis=0, ddof=1)
    win = sliding_window_view(vals, window, axis=0)  # (n - window + 1, 4, window)
    return win.std(axis=-1, ddof=1).mean(axis=0)


def smoothness(values: np.ndarray) -> float:
    """Sum of squared second differences."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 3:
        return 0.0
    return float(np.sum(np.diff(values, n=2, axis=0) ** 2))


def qp_objective(beta, alpha, eps: float) -> float:
    beta = np.asarray(beta, dtype=np.float64)
    return smoothness(beta) + eps * float(np.sum((beta - np.asarray(alpha)) ** 2))


def _hessian_band(n: int, eps: float) -> np.ndarray:
    """Upper band storage (3, n) of ``2 (D^T D + eps I)``, D the second difference."""
    dense_diag = np.zeros(n)
    off1 = np.zeros(max(n - 1, 0))
    off2 = np.zeros(max(n - 2, 0))
    for i in range(n - 2):
        # row i of D is [1, -2, 1] at columns i, i+1, i+2
        dense_diag[i : i + 3] += (1.0, 4.0, 1.0)
        off1[i : i + 2] += (-2.0, -2.0)
        off2[i] += 1.0
    band = np.zeros((3, n))
    band[2] = 2.0 * (dense_diag + eps)
    band[1, 1:] = 2.0 * off1
    band[0, 2:] = 2.0 * off2
    return band


def _band_matvec(band: np.ndarray, x: np.ndarray) -> np.ndarray:
    y = band[2] * x
    y[:-1] += band[1, 1:] * x[1:]
    y[1:] += band[1, 1:] * x[:-1]
    y[:-2] += band[0, 2:] * x[2:]
    y[2:] += band[0, 2:] * x[:-2]
    return y


def _band_entry(band: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    d = hi - lo
    out = np.zeros(len(i))
    ok = d <= 2
    out[ok] = band[2 - d[ok], hi[ok]]
    return out


def _solve_with_fixed(band, rhs, fixed, fixed_vals):
    """Minimise the quadratic with the ``fixed`` entries clamped to ``fixed_vals``."""
    n = len(rhs)
    x = np.where(fixed, fixed_vals, 0.0)
    free = np.flatnonzero(~fixed)
    if len(free) == 0:
        return x
    b = rhs - _band_matvec(band, x)
    sub = np.zeros((3, len(free)))
    for d in range(3):
        if len(free) > d:
            sub[2 - d, d:] = _band_entry(band, free[:-d] if d else free, free[d:])
    x[free] = linalg.solveh_banded(sub, b[free])
    return x


@dataclass
class QpReport:
    iterations: int
    kkt_residual: float
    converged: bool


def _kkt(band, rhs, x, lo, hi) -> float:
    g = _band_matvec(band, x) - rhs
    return float(np.max(np.abs(x - np.clip(x - g, lo, hi)), initial=0.0))


def _solve_scalar(a: np.ndarray, xi: float, settings: QpSettings):
    n = len(a)
    lo, hi = a - xi, a + xi
    if xi == 0.0 or n < 3:
        return a.copy(), QpReport(0, 0.0, True)
    eps = settings.fidelity_eps
    band = _hessian_band(n, eps)
    rhs = 2.0 * eps * a
    # ADMM on x = z with z boxed
    rho = max(np.sqrt(2.0 * eps * 32.0), 1e-3)
    shifted = band.copy()
    shifted[2] += rho
    chol = linalg.cholesky_banded(shifted)
    z = np.clip(a, lo, hi)
    u = np.zeros(n)
    best = (np.inf, z)
    iters = 0
    for iters in range(1, settings.max_iters + 1):
        x = linalg.cho_solve_banded((chol, False), rhs + rho * (z - u))
        z = np.clip(x + u, lo, hi)
        u += x - z
        if iters % 25 == 0 or iters == settings.max_iters:
            cand = _polish(band, rhs, z, lo, hi)
            res = _kkt(band, rhs, cand, lo, hi)
            if res < best[0]:
                best = (res, cand)
            if res <= settings.tol:
                break
    res, x = best
    converged = res <= settings.tol
    if not converged:
        log.warning("QP stopped after %d iterations with KKT residual %.3g", iters, res)
    return np.clip(x, lo, hi), QpReport(iters, res, converged)


def _polish(band, rhs, x, lo, hi, max_rounds: int | None = None) -> np.ndarray:
    """Primal active-set refinement seeded with an approximate feasible point.

    Constraints enter through a ratio test and leave when their multiplier
    has the wrong sign, so the objective never increases and the iteration
    cannot cycle on degenerate problems.
    """
    n = len(x)
    max_rounds = max_rounds or 4 * n + 50
    x = np.clip(x, lo, hi)
    tiny = 1e-12 * max(1.0, float(np.max(np.abs(hi - lo))))
    at_lo = x <= lo + tiny
    at_hi = (x >= hi - tiny) & ~at_lo
    x = np.where(at_lo, lo, np.where(at_hi, hi, x))
    gtol = 1e-15 * max(1.0, float(np.max(np.abs(rhs))), float(band[2].max()) * float(np.max(np.abs(x))))
    for _ in range(max_rounds):
        fixed = at_lo | at_hi
        target = _solve_with_fixed(band, rhs, fixed, np.where(at_lo, lo, hi))
        d = target - x
        with np.errstate(divide="ignore", invalid="ignore"):
            room = np.where(d > 0, (hi - x) / d, np.where(d < 0, (lo - x) / d, np.inf))
        room[fixed] = np.inf
        k = int(np.argmin(room))
        if room[k] < 1.0:
            x = x + room[k] * d
            if d[k] > 0:
                at_hi[k] = True
                x[k] = hi[k]
            else:
                at_lo[k] = True
                x[k] = lo[k]
            continue
        x = target
        g = _band_matvec(band, x) - rhs
        # multipliers: lower bounds need g >= 0, upper bounds g <= 0
        viol = np.where(at_lo, -g, 0.0) + np.where(at_hi, g, 0.0)
        k = int(np.argmax(viol))
        if viol[k] <= gtol:
            break
        at_lo[k] = at_hi[k] = False
    return np.clip(x, lo, hi)


def solve_qp(alpha: ParamSequence, xi, settings: QpSettings | None = None, return_report: bool = False):
    """Smooth each parameter column within its box ``|beta - alpha| <= xi``.

    Returns:
        The smoothed :class:`ParamSequence` (and a list of per-parameter
        :class:`QpReport` when ``return_report``). Parameters whose solve
        hit the iteration cap return their best iterate with
        ``converged=False``.
    """
    settings = settings or QpSettings()
    xi = np.broadcast_to(np.asarray(xi, dtype=np.float64), (4,))
    if np.any(xi < 0):
        raise ValueError("slack bounds must be non-negative")
    out = np.empty_like(alpha.values)
    reports = []
    for k in range(4):
        out[:, k], rep = _solve_scalar(alpha.values[:, k], float(xi[k]), settings)
        reports.append(rep)
    beta = ParamSequence(out)
    return (beta, reports) if return_report else beta


def accumulate_warps(alpha: ParamSequence, beta: ParamSequence) -> list[SimilarityParams]:
    """Per-frame stabilising warps whose output has inter-frame motion ``beta``.

    Frame ``i + 1`` relates to frame ``i`` by ``alpha[i]``; the stabilised
    frame ``J_i(p) = I_i(W_i(p))`` then satisfies ``J_{i+1}(p) = J_i(beta[i](p))``
    when ``W_{i+1} = alpha[i]^-1 o W_i o beta[i]`` with ``W_0`` the identity.
    """
    warps = [SimilarityParams.identity()]
    for a, b in zip(alpha, beta):
        warps.append(compose(compose(b, warps[-1]), invert(a)))
    return warps


def min_crop_ratio(warps, frame_h: int, frame_w: int) -> float:
    return min(crop_ratio(w, frame_h, frame_w) for w in warps)


@dataclass
class CropSearchResult:
    beta: ParamSequence
    gamma: ParamSequence
    warps: list
    slack: SlackConfig
    min_crop: float
    probes: list = field(default_factory=list)  # (z, min crop ratio), in probe order

    def next_larger_probe(self):
        """Smallest probed ``z`` above the selected one, with its crop ratio, or None."""
        above = [p for p in self.probes if p[0] > self.slack.z]
        return min(above) if above else None


def smooth_with_crop_limit(alpha: ParamSequence, kappa: float, frame_h: int, frame_w: int,
                           settings: QpSettings | None = None, window: int = 9,
                           halvings: int = 20) -> CropSearchResult:
    """Largest slack multiplier ``z`` whose stabilising warps keep crop ratio >= ``kappa``.

    ``z = 1`` is probed first; otherwise ``z`` is bisected ``halvings``
    times on ``[0, 1]``. ``z = 0`` (no smoothing) is always feasible.
    """
    if not 0.0 < kappa <= 1.0:
        raise ValueError(f"crop limit must lie in (0, 1], got {kappa}")
    settings = settings or QpSettings()
    lambdas = compute_slack_scales(alpha, window)
    probes = []

    def run(z):
        beta = solve_qp(alpha, lambdas * z, settings)
        warps = accumulate_warps(alpha, beta)
        ratio = min_crop_ratio(warps, frame_h, frame_w)
        probes.append((z, ratio))
        return beta, warps, ratio

    best = (0.0, alpha, [SimilarityParams.identity()] * (len(alpha) + 1), 1.0)
    beta, warps, ratio = run(1.0)
    if ratio >= kappa:
        best = (1.0, beta, warps, ratio)
    else:
        lo, hi = 0.0, 1.0
        for _ in range(halvings):
            mid = 0.5 * (lo + hi)
            beta, warps, ratio = run(mid)
            if ratio >= kappa:
                lo = mid
                best = (mid, beta, warps, ratio)
            else:
                hi = mid
    z, beta, warps, ratio = best
    return CropSearchResult(beta, beta - alpha, warps, SlackConfig(lambdas, z), ratio, probes)
