"""Low-frequency 2D-DCT representation of global motion.

A global flow field is stored as two small blocks of DCT-II coefficients
(one per flow channel). The basis is orthonormal on a coarse fitting grid
and is evaluated continuously, so the same coefficients describe the flow
at any output resolution.

Coefficient matrices are indexed ``[ky, kx]``: the row index is the vertical
frequency and the column index the horizontal one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_GRID = 64


@dataclass(frozen=True)
class GridSpec:
    """Fitting grid for the DCT basis and the image extent it spans."""

    grid_h: int
    grid_w: int
    image_h: int
    image_w: int

    def __post_init__(self):
        if self.grid_h < 2 or self.grid_w < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.grid_h}x{self.grid_w}")
        if self.grid_h > self.image_h or self.grid_w > self.image_w:
            raise ValueError(
                f"grid {self.grid_h}x{self.grid_w} exceeds image {self.image_h}x{self.image_w}"
            )

    @classmethod
    def for_image(cls, image_h: int, image_w: int, size: int = DEFAULT_GRID) -> "GridSpec":
        """Default square grid, clamped for images smaller than ``size``."""
        return cls(min(size, image_h), min(size, image_w), image_h, image_w)

    @property
    def area(self) -> int:
        return self.grid_h * self.grid_w

    def max_cutoff(self) -> int:
        return min(self.grid_h, self.grid_w) - 1


@dataclass
class FlowField:
    """Dense displacement field in pixels with a validity mask.

    ``u`` is the horizontal and ``v`` the vertical component. The warp
    convention used throughout the package is backward: a frame warped by
    the flow samples ``frame(p + flow(p))``.
    """

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2 or self.u.size == 0:
            raise ValueError(f"u and v must be equal non-empty 2D arrays, got {self.u.shape}, {self.v.shape}")
        if self.valid is None:
            self.valid = np.ones(self.u.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.u.shape:
                raise ValueError("valid mask shape does not match flow")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def constant(cls, height: int, width: int, u: float, v: float) -> "FlowField":
        return cls(np.full((height, width), float(u)), np.full((height, width), float(v)))

    @classmethod
    def from_array(cls, arr: np.ndarray, valid=None) -> "FlowField":
        """Build from an ``(H, W, 2)`` array of ``(u, v)``."""
        arr = np.asarray(arr)
        return cls(arr[..., 0], arr[..., 1], valid)

    def to_array(self) -> np.ndarray:
        return np.stack([self.u, self.v], axis=-1)

    def valid_fraction(self) -> float:
        return float(self.valid.mean())


@dataclass
class DctCoeffs:
    """Per-channel DCT coefficient blocks for frequencies ``[0, cutoff]^2``."""

    coeff_x: np.ndarray
    coeff_y: np.ndarray
    grid: GridSpec
    cutoff: int = field(init=False)

    def __post_init__(self):
        self.coeff_x = np.array(self.coeff_x, dtype=np.float64)
        self.coeff_y = np.array(self.coeff_y, dtype=np.float64)
        n = self.coeff_x.shape[0]
        if self.coeff_x.shape != (n, n) or self.coeff_y.shape != (n, n) or n < 1:
            raise ValueError("coefficient blocks must be equal square matrices")
        self.cutoff = n - 1
        if self.cutoff > self.grid.max_cutoff():
            raise ValueError(f"cutoff {self.cutoff} too high for grid {self.grid.grid_h}x{self.grid.grid_w}")
        if not (np.all(np.isfinite(self.coeff_x)) and np.all(np.isfinite(self.coeff_y))):
            raise ValueError("coefficients must be finite")

    @classmethod
    def zeros(cls, cutoff: int, grid: GridSpec) -> "DctCoeffs":
        n = cutoff + 1
        return cls(np.zeros((n, n)), np.zeros((n, n)), grid)

    @classmethod
    def translation(cls, tx: float, ty: float, grid: GridSpec, cutoff: int = 0) -> "DctCoeffs":
        """Coefficients of a constant flow ``(tx, ty)``."""
        c = cls.zeros(cutoff, grid)
        c.coeff_x[0, 0] = tx * np.sqrt(grid.area)
        c.coeff_y[0, 0] = ty * np.sqrt(grid.area)
        return c

    def mean_translation(self) -> tuple[float, float]:
        """Flow averaged over the grid, i.e. DC scaled by ``1/sqrt(grid area)``."""
        s = np.sqrt(self.grid.area)
        return float(self.coeff_x[0, 0] / s), float(self.coeff_y[0, 0] / s)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.coeff_x.ravel(), self.coeff_y.ravel()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, grid: GridSpec) -> "DctCoeffs":
        n = int(round(np.sqrt(len(vec) // 2)))
        return cls(vec[: n * n].reshape(n, n), vec[n * n:].reshape(n, n), grid)

    def copy(self) -> "DctCoeffs":
        return DctCoeffs(self.coeff_x.copy(), self.coeff_y.copy(), self.grid)

    def _check_compatible(self, other: "DctCoeffs"):
        if self.grid != other.grid or self.cutoff != other.cutoff:
            raise ValueError("coefficient blocks differ in grid or cutoff")

    def __add__(self, other: "DctCoeffs") -> "DctCoeffs":
        self._check_compatible(other)
        return DctCoeffs(self.coeff_x + other.coeff_x, self.coeff_y + other.coeff_y, self.grid)

    def __sub__(self, other: "DctCoeffs") -> "DctCoeffs":
        self._check_compatible(other)
        return DctCoeffs(self.coeff_x - other.coeff_x, self.coeff_y - other.coeff_y, self.grid)

    def __mul__(self, scalar: float) -> "DctCoeffs":
        return DctCoeffs(self.coeff_x * scalar, self.coeff_y * scalar, self.grid)

    __rmul__ = __mul__

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "grid": [self.grid.grid_h, self.grid.grid_w],
            "image": [self.grid.image_h, self.grid.image_w],
            "coeff_x": self.coeff_x.tolist(),
            "coeff_y": self.coeff_y.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DctCoeffs":
        grid = GridSpec(d["grid"][0], d["grid"][1], d["image"][0], d["image"][1])
        return cls(np.array(d["coeff_x"]), np.array(d["coeff_y"]), grid)


def dct_basis(n_grid: int, n_freq: int, coords) -> np.ndarray:
    """Orthonormal DCT-II cosines evaluated at continuous grid coordinates.

    Returns an array of shape ``(len(coords), n_freq)``. At integer
    coordinates ``0..n_grid-1`` the columns are orthonormal.
    """
    coords = np.asarray(coords, dtype=np.float64)
    k = np.arange(n_freq)
    norm = np.where(k == 0, np.sqrt(1.0 / n_grid), np.sqrt(2.0 / n_grid))
    return norm * np.cos(np.pi * (2.0 * coords[:, None] + 1.0) * k / (2.0 * n_grid))


def pixel_to_grid(pix, n_pix: int, n_grid: int) -> np.ndarray:
    """Map pixel-centre coordinates of an ``n_pix`` axis onto the grid axis."""
    return (np.asarray(pix, dtype=np.float64) + 0.5) / n_pix * n_grid - 0.5


def basis_at_pixels(grid: GridSpec, cutoff: int, xs, ys) -> tuple[np.ndarray, np.ndarray]:
    """Row and column basis matrices at image-pixel coordinates ``ys``/``xs``."""
    cy = dct_basis(grid.grid_h, cutoff + 1, pixel_to_grid(ys, grid.image_h, grid.grid_h))
    cx = dct_basis(grid.grid_w, cutoff + 1, pixel_to_grid(xs, grid.image_w, grid.grid_w))
    return cy, cx


def output_pixel_coords(n_out: int, n_image: int) -> np.ndarray:
    """Image-pixel coordinates of the centres of an ``n_out`` resampling."""
    return (np.arange(n_out) + 0.5) * (n_image / n_out) - 0.5


def evaluate(coeffs: DctCoeffs, out_h: int, out_w: int) -> FlowField:
    """Reconstruct the flow at ``out_h x out_w`` pixel centres.

    Values stay in image pixels; resampling the output does not rescale the
    displacements.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output size must be positive")
    grid = coeffs.grid
    ys = output_pixel_coords(out_h, grid.image_h)
    xs = output_pixel_coords(out_w, grid.image_w)
    cy, cx = basis_at_pixels(grid, coeffs.cutoff, xs, ys)
    return FlowField(cy @ coeffs.coeff_x @ cx.T, cy @ coeffs.coeff_y @ cx.T)


def evaluate_at(coeffs: DctCoeffs, xs, ys) -> tuple[np.ndarray, np.ndarray]:
    """Flow components on the separable lattice ``ys x xs`` (image pixels)."""
    cy, cx = basis_at_pixels(coeffs.grid, coeffs.cutoff, xs, ys)
    return cy @ coeffs.coeff_x @ cx.T, cy @ coeffs.coeff_y @ cx.T


def interp_matrix(n_src: int, positions) -> np.ndarray:
    """Linear-interpolation matrix sampling an axis of length ``n_src``.

    Row ``i`` holds the two bilinear weights for ``positions[i]``; positions
    are clamped to ``[0, n_src - 1]``.
    """
    pos = np.clip(np.asarray(positions, dtype=np.float64), 0.0, n_src - 1)
    lo = np.minimum(np.floor(pos).astype(int), max(n_src - 2, 0))
    frac = pos - lo
    mat = np.zeros((len(pos), n_src))
    rows = np.arange(len(pos))
    mat[rows, lo] = 1.0 - frac
    if n_src > 1:
        mat[rows, lo + 1] += frac
    return mat


def resample_to_grid(values: np.ndarray, mask: np.ndarray, grid: GridSpec):
    """Mask-normalised bilinear resampling of an image-sized array to the grid.

    Returns ``(resampled, support)`` where ``support`` is the interpolated
    mask weight; grid points with zero support carry no information.
    """
    h, w = values.shape
    ry = interp_matrix(h, output_pixel_coords(grid.grid_h, h))
    rx = interp_matrix(w, output_pixel_coords(grid.grid_w, w))
    m = mask.astype(np.float64)
    support = ry @ m @ rx.T
    num = ry @ np.where(mask, values, 0.0) @ rx.T
    out = np.divide(num, support, out=np.zeros_like(num), where=support > 1e-12)
    return out, support


def check_flow_usable(flow: FlowField):
    if flow.valid_fraction() < 0.5:
        raise ValueError(
            f"flow has {100 * (1 - flow.valid_fraction()):.1f}% invalid pixels (more than 50%)"
        )


def _grid_flow(flow: FlowField, grid: GridSpec):
    if flow.shape != (grid.image_h, grid.image_w):
        raise ValueError(f"flow shape {flow.shape} does not match grid image size")
    gu, support = resample_to_grid(flow.u, flow.valid, grid)
    gv, _ = resample_to_grid(flow.v, flow.valid, grid)
    return gu, gv, support


def project(flow: FlowField, cutoff: int, grid: GridSpec) -> DctCoeffs:
    """Least-squares DCT coefficients of ``flow`` up to ``cutoff``.

    The flow is resampled to grid resolution first; every grid sample needs
    some valid support.
    """
    if cutoff < 0 or cutoff > grid.max_cutoff():
        raise ValueError(f"cutoff {cutoff} outside [0, {grid.max_cutoff()}]")
    check_flow_usable(flow)
    gu, gv, support = _grid_flow(flow, grid)
    if np.any(support <= 1e-12):
        raise ValueError("some grid cells have no valid flow samples")
    cy = dct_basis(grid.grid_h, cutoff + 1, np.arange(grid.grid_h))
    cx = dct_basis(grid.grid_w, cutoff + 1, np.arange(grid.grid_w))
    return DctCoeffs(cy.T @ gu @ cx, cy.T @ gv @ cx, grid)


def truncate(coeffs: DctCoeffs, new_cutoff: int) -> DctCoeffs:
    """Drop frequencies above ``new_cutoff`` or zero-pad up to it."""
    if new_cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    n_new, n_old = new_cutoff + 1, coeffs.cutoff + 1
    k = min(n_new, n_old)
    cx = np.zeros((n_new, n_new))
    cy = np.zeros((n_new, n_new))
    cx[:k, :k] = coeffs.coeff_x[:k, :k]
    cy[:k, :k] = coeffs.coeff_y[:k, :k]
    return DctCoeffs(cx, cy, coeffs.grid)
