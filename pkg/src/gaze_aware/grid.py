"""Heatmap and flow primitives: sampling, warping, splatting, normalization.

Heatmaps are plain ``(H, W)`` float arrays indexed ``[y, x]``. Normalized
coordinates map to pixels via ``x_px = x * (W - 1)``, ``y_px = y * (H - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

SLOTS = 3
TRUNCATE = 4.0


@dataclass(frozen=True)
class GazeFrame:
    """Gaze measurements for one frame: three point slots with validity flags."""

    frame_index: int
    points: np.ndarray = field(default_factory=lambda: np.zeros((SLOTS, 2)))
    valid: np.ndarray = field(default_factory=lambda: np.zeros(SLOTS, dtype=bool))

    def __post_init__(self):
        points = np.array(self.points, dtype=float).reshape(-1, 2)
        valid = np.array(self.valid, dtype=bool).reshape(-1)
        if points.shape[0] != SLOTS or valid.shape[0] != SLOTS:
            raise ValueError(f"gaze frame needs exactly {SLOTS} slots, got {points.shape[0]}")
        points.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def at(cls, frame_index: int, *xy: tuple[float, float]) -> "GazeFrame":
        """Frame with the given points in the leading slots, remaining slots invalid."""
        points = np.zeros((SLOTS, 2))
        valid = np.zeros(SLOTS, dtype=bool)
        for i, p in enumerate(xy):
            points[i] = p
            valid[i] = True
        return cls(frame_index, points, valid)

    @classmethod
    def empty(cls, frame_index: int) -> "GazeFrame":
        return cls(frame_index)

    @property
    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]

    def in_range(self) -> bool:
        p = self.valid_points
        return bool(np.all((p >= 0) & (p <= 1)))


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (pixels/frame) taking frame t content to frame t+1."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"flow planes must be matching 2D arrays, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("flow contains non-finite values")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def constant(cls, height: int, width: int, du: float, dv: float) -> "FlowField":
        return cls(np.full((height, width), float(du)), np.full((height, width), float(dv)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @cached_property
    def warp_operator(self) -> sparse.csr_matrix:
        """Sparse matrix ``W`` with ``warp_by_flow(m) == (W @ m.ravel())``; ``advect`` uses ``W.T``."""
        h, w = self.shape
        xs, ys = pixel_grid((h, w))
        idx, wts = bilinear_footprint((h, w), xs + self.u, ys + self.v)
        rows = np.broadcast_to(np.arange(h * w).reshape(h, w), idx.shape)
        return sparse.csr_matrix((wts.ravel(), (rows.ravel(), idx.ravel())), shape=(h * w, h * w))


def check_heatmap(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise ValueError(f"heatmap must be 2D with both sides >= 2, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("heatmap contains non-finite values")
    return m


def to_pixels(points: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Normalized ``(N, 2)`` points to pixel coordinates."""
    h, w = shape
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return points * np.array([w - 1, h - 1])


def to_normalized(pixels: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    return pixels / np.array([w - 1, h - 1])


def pixel_grid(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(float), ys.astype(float)


def bilinear_footprint(shape, x, y):
    """Flat indices and weights (each ``(4,) + x.shape``) of the bilinear stencil.

    Coordinates are clamped to the grid first, so the weights always sum to 1.
    """
    h, w = shape
    x = np.clip(np.asarray(x, dtype=float), 0.0, w - 1)
    y = np.clip(np.asarray(y, dtype=float), 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 2)
    fx = x - x0
    fy = y - y0
    base = y0 * w + x0
    idx = np.stack([base, base + 1, base + w, base + w + 1])
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy])
    return idx, wts


def bilinear_sample(m: np.ndarray, x, y):
    """Bilinear value of ``m`` at pixel coordinates ``(x, y)``, clamped to the border."""
    m = np.asarray(m, dtype=float)
    idx, wts = bilinear_footprint(m.shape, x, y)
    out = (m.ravel()[idx] * wts).sum(axis=0)
    return float(out) if out.ndim == 0 else out


def bilinear_scatter(shape, x, y, values) -> np.ndarray:
    """Adjoint of :func:`bilinear_sample` with respect to the map values."""
    idx, wts = bilinear_footprint(shape, x, y)
    values = np.broadcast_to(np.asarray(values, dtype=float), idx.shape[1:])
    acc = np.bincount(idx.ravel(), weights=(wts * values).ravel(), minlength=shape[0] * shape[1])
    return acc.reshape(shape)


def _check_flow(m: np.ndarray, flow: FlowField):
    if flow.shape != m.shape:
        raise ValueError(f"flow shape {flow.shape} does not match map shape {m.shape}")


def warp_by_flow(m: np.ndarray, flow: FlowField) -> np.ndarray:
    """Backward lookup: ``out(x) = m(x + flow(x))`` with bilinear sampling."""
    m = np.asarray(m, dtype=float)
    _check_flow(m, flow)
    return (flow.warp_operator @ m.ravel()).reshape(m.shape)


def advect(m: np.ndarray, flow: FlowField) -> np.ndarray:
    """Forward push of ``m`` along ``flow``; the exact adjoint of :func:`warp_by_flow`.

    Each pixel's value is splatted bilinearly onto ``x + flow(x)``, so total
    mass is conserved.
    """
    m = np.asarray(m, dtype=float)
    _check_flow(m, flow)
    return (flow.warp_operator.T @ m.ravel()).reshape(m.shape)


def gaussian_bump(shape, center_px, sigma_px, amplitude=1.0, truncate=TRUNCATE):
    """Unnormalized axis-aligned Gaussian with peak ``amplitude``, truncated at ``truncate`` sigmas.

    Returns ``(slices, patch)`` so callers can add or max the patch into a map.
    """
    h, w = shape
    cx, cy = center_px
    sx, sy = sigma_px
    # the neighbouring pixels are always kept so a narrow kernel never vanishes
    rx, ry = max(truncate * sx, 1.0), max(truncate * sy, 1.0)
    x_lo = max(0, int(np.floor(cx - rx)))
    x_hi = min(w, int(np.ceil(cx + rx)) + 1)
    y_lo = max(0, int(np.floor(cy - ry)))
    y_hi = min(h, int(np.ceil(cy + ry)) + 1)
    if x_lo >= x_hi or y_lo >= y_hi:
        return (slice(0, 0), slice(0, 0)), np.zeros((0, 0))
    gx = np.exp(-0.5 * ((np.arange(x_lo, x_hi) - cx) / sx) ** 2)
    gy = np.exp(-0.5 * ((np.arange(y_lo, y_hi) - cy) / sy) ** 2)
    patch = amplitude * np.outer(gy, gx)
    inside_x = np.abs(np.arange(x_lo, x_hi) - cx) <= rx
    inside_y = np.abs(np.arange(y_lo, y_hi) - cy) <= ry
    patch *= np.outer(inside_y, inside_x)
    return (slice(y_lo, y_hi), slice(x_lo, x_hi)), patch


def sigma_pixels(sigma: float, shape) -> tuple[float, float]:
    """Normalized sigma to per-axis pixel sigmas (isotropic in normalized space)."""
    h, w = shape
    return sigma * (w - 1), sigma * (h - 1)


def gaussian_bumps(points, sigma: float, shape, reduce: str = "max") -> np.ndarray:
    """Peak-1 Gaussians at normalized ``points`` combined by ``max`` or ``sum``."""
    out = np.zeros(shape)
    spx = sigma_pixels(sigma, shape)
    for c in to_pixels(points, shape):
        sl, patch = gaussian_bump(shape, c, spx)
        if reduce == "max":
            np.maximum(out[sl], patch, out=out[sl])
        else:
            out[sl] += patch
    return out


def gaussian_splat(points: GazeFrame, sigma: float, width: int, height: int) -> np.ndarray:
    """Kernel density of the valid gaze points, normalized to sum to one."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    pts = points.valid_points
    if len(pts) == 0:
        raise ValueError("gaussian_splat needs at least one valid point")
    m = gaussian_bumps(pts, sigma, (height, width), reduce="sum")
    if not m.sum() > 0:
        # kernel narrower than the grid resolves: use its limit, a bilinear point mass
        px = to_pixels(pts, (height, width))
        m = bilinear_scatter((height, width), px[:, 0], px[:, 1], 1.0)
    return normalize(m)


def normalize(m: np.ndarray) -> np.ndarray:
    """Clip negatives to zero and rescale to unit sum."""
    m = np.clip(np.asarray(m, dtype=float), 0.0, None)
    total = m.sum()
    if not total > 0:
        raise ValueError("cannot normalize a map with no positive mass")
    return m / total


def is_density(m: np.ndarray, tol: float = 1e-6) -> bool:
    m = np.asarray(m)
    return bool(np.all(m >= 0) and abs(m.sum() - 1.0) <= tol)


def center_prior(width: int, height: int, rel_sigma: float = 0.25) -> np.ndarray:
    """Centered isotropic Gaussian density; sigma is ``rel_sigma`` of the pixel diagonal."""
    xs, ys = pixel_grid((height, width))
    s = rel_sigma * np.hypot(width - 1, height - 1)
    g = np.exp(-0.5 * (((xs - (width - 1) / 2) / s) ** 2 + ((ys - (height - 1) / 2) / s) ** 2))
    return g / g.sum()


VORONOI_CHANNELS = ("dx", "dy", "dx2", "dy2", "dxdy", "dist", "dropout", "valid")


def voronoi_encode(points: GazeFrame, dropout_mask, width: int, height: int) -> np.ndarray:
    """Eight-channel nearest-gaze feature map, shape ``(8, H, W)``.

    Offsets are in normalized units, measured to the nearest valid point that
    was not dropped. The dropout bit marks pixels whose nearest valid point
    (dropped or not) is a dropped one.
    """
    dropped = np.asarray(dropout_mask, dtype=bool).reshape(-1)
    if dropped.shape[0] != SLOTS:
        raise ValueError(f"dropout mask needs {SLOTS} entries")
    xs, ys = pixel_grid((height, width))
    xn = xs / (width - 1)
    yn = ys / (height - 1)
    enc = np.zeros((8, height, width))

    def nearest(mask):
        pts = points.points[mask]
        d2 = (xn[None] - pts[:, 0, None, None]) ** 2 + (yn[None] - pts[:, 1, None, None]) ** 2
        return pts, np.argmin(d2, axis=0)

    kept = points.valid & ~dropped
    if kept.any():
        pts, k = nearest(kept)
        dx = xn - pts[k, 0]
        dy = yn - pts[k, 1]
        enc[0], enc[1] = dx, dy
        enc[2], enc[3], enc[4] = dx * dx, dy * dy, dx * dy
        enc[5] = np.sqrt(dx * dx + dy * dy)
        enc[7] = 1.0
    if points.valid.any() and (points.valid & dropped).any():
        _, k = nearest(points.valid)
        enc[6] = dropped[points.valid][k].astype(float)
    return enc
