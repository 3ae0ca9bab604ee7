"""Gaze corruption models, meanshift denoising, and affine recalibration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gaze_aware.config import MeanShiftConfig, NoiseModel
from gaze_aware.grid import GazeFrame, bilinear_footprint

SUPERVISED_SIGMA = 0.0347


# --- corruption -----------------------------------------------------------------


def noise_sigma(points: np.ndarray, model: NoiseModel) -> np.ndarray:
    """Per-coordinate std ``max(sigma_n, w * |x - x0|)``."""
    return np.maximum(model.sigma_n, model.w * np.abs(np.asarray(points) - np.array(model.center)))


def apply_noise(gaze: list[GazeFrame], model: NoiseModel, clip: bool = True) -> list[GazeFrame]:
    """Spatially varying additive Gaussian noise on every valid point.

    Draws are made for all slots, valid or not, so results depend only on the
    seed and the sequence length.
    """
    rng = np.random.default_rng(model.seed)
    out = []
    for g in gaze:
        eta = rng.standard_normal(g.points.shape)
        noisy = g.points + noise_sigma(g.points, model) * eta
        if clip:
            noisy = np.clip(noisy, 0.0, 1.0)
        out.append(GazeFrame(g.frame_index, np.where(g.valid[:, None], noisy, g.points), g.valid))
    return out


@dataclass(frozen=True)
class Affine2D:
    A: np.ndarray = field(default_factory=lambda: np.eye(2))
    b: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        A = np.array(self.A, dtype=float).reshape(2, 2)
        b = np.array(self.b, dtype=float).reshape(2)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("affine transform has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.A.T + self.b

    def inverse(self) -> "Affine2D":
        if abs(np.linalg.det(self.A)) < 1e-12:
            raise np.linalg.LinAlgError("affine transform is singular")
        Ai = np.linalg.inv(self.A)
        return Affine2D(Ai, -Ai @ self.b)

    def elements(self) -> np.ndarray:
        """The six parameters ``[A11, A12, A21, A22, b1, b2]``."""
        return np.concatenate([self.A.ravel(), self.b])


def map_gaze(gaze: list[GazeFrame], fn) -> list[GazeFrame]:
    """Apply ``fn`` to the valid points of each frame."""
    out = []
    for g in gaze:
        pts = g.points.copy()
        if g.valid.any():
            pts[g.valid] = fn(g.points[g.valid])
        out.append(GazeFrame(g.frame_index, pts, g.valid))
    return out


def apply_affine_corruption(gaze: list[GazeFrame], sigma_n: float, seed: int = 0, transform: Affine2D | None = None):
    """Miscalibrate gaze by ``A x + b`` with ``A = I + N``, ``b = N``, entries of N ~ N(0, sigma_n^2).

    Points are not clipped, so the corruption stays exactly invertible.
    """
    if sigma_n < 0:
        raise ValueError("sigma_n must be >= 0")
    if transform is None:
        rng = np.random.default_rng(seed)
        noise = sigma_n * rng.standard_normal(6)
        transform = Affine2D(np.eye(2) + noise[:4].reshape(2, 2), noise[4:])
    return map_gaze(gaze, transform), transform


# --- meanshift ----------------------------------------------------------------------


def meanshift(start, density: np.ndarray, config: MeanShiftConfig, return_path: bool = False, truncate: float = 5.0):
    """Climb ``density`` from ``start`` (pixel coordinates) with a Gaussian kernel.

    Raises ``ValueError`` when there is no kernel-weighted mass to move towards.
    """
    density = np.asarray(density, dtype=float)
    hgt, wid = density.shape
    bw = config.bandwidth(wid, hgt)
    x = np.array(start, dtype=float)
    path = [x.copy()]
    reach = truncate * bw
    for _ in range(config.max_iter):
        x_lo, x_hi = max(0, int(np.floor(x[0] - reach))), min(wid, int(np.ceil(x[0] + reach)) + 1)
        y_lo, y_hi = max(0, int(np.floor(x[1] - reach))), min(hgt, int(np.ceil(x[1] + reach)) + 1)
        if x_lo >= x_hi or y_lo >= y_hi:
            raise ValueError("meanshift start is too far outside the map")
        px = np.arange(x_lo, x_hi, dtype=float)
        py = np.arange(y_lo, y_hi, dtype=float)
        kx = np.exp(-0.5 * ((px - x[0]) / bw) ** 2)
        ky = np.exp(-0.5 * ((py - x[1]) / bw) ** 2)
        wts = density[y_lo:y_hi, x_lo:x_hi] * np.outer(ky, kx)
        total = wts.sum()
        if not total > 0:
            raise ValueError("no kernel-weighted mass around the meanshift point")
        new = np.array([(wts.sum(axis=0) @ px) / total, (wts.sum(axis=1) @ py) / total])
        step = np.hypot(*(new - x))
        x = new
        path.append(x.copy())
        if step < config.eps:
            break
    if return_path:
        return x, np.array(path)
    return x


# --- recalibration network --------------------------------------------------------


@dataclass
class CorrectionNet:
    """``y = P x + c + V tanh(U x + a)``: one tanh hidden layer plus a linear pass-through."""

    P: np.ndarray
    c: np.ndarray
    U: np.ndarray
    a: np.ndarray
    V: np.ndarray

    PARAMS = ("P", "c", "U", "a", "V")

    @classmethod
    def near_identity(cls, hidden: int = 16, seed: int = 0, scale: float = 1e-3) -> "CorrectionNet":
        rng = np.random.default_rng(seed)
        return cls(
            np.eye(2),
            np.zeros(2),
            rng.normal(0.0, 1.0, (hidden, 2)),
            rng.normal(0.0, 0.5, hidden),
            rng.normal(0.0, scale, (2, hidden)),
        )

    @classmethod
    def from_affine(cls, t: Affine2D, hidden: int = 16) -> "CorrectionNet":
        return cls(t.A.copy(), t.b.copy(), np.zeros((hidden, 2)), np.zeros(hidden), np.zeros((2, hidden)))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return x @ self.P.T + self.c + np.tanh(x @ self.U.T + self.a) @ self.V.T

    def backward(self, x: np.ndarray, dy: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given ``dL/dy`` for inputs ``x``."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        hid = np.tanh(x @ self.U.T + self.a)
        dh = (dy @ self.V) * (1 - hid**2)
        return {"P": dy.T @ x, "c": dy.sum(0), "U": dh.T @ x, "a": dh.sum(0), "V": dy.T @ hid}

    def finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, p))) for p in self.PARAMS)


def best_affine(fn, n: int = 16) -> Affine2D:
    """Least-squares affine fit of ``fn`` over an ``n x n`` grid on the unit square."""
    g = np.linspace(0.0, 1.0, n)
    xs, ys = np.meshgrid(g, g)
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    design = np.hstack([pts, np.ones((len(pts), 1))])
    coef, *_ = np.linalg.lstsq(design, fn(pts), rcond=None)
    return Affine2D(coef[:2].T, coef[2])


def calibration_error(net, corrupt: Affine2D) -> float:
    """Sum of squared differences between the net's best affine fit and the corruption's inverse."""
    target = corrupt.inverse()
    return float(np.sum((best_affine(net).elements() - target.elements()) ** 2))


@dataclass(frozen=True)
class FitConfig:
    lr: float = 1e-2
    iters: int = 1500
    hidden: int = 16
    init_scale: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999


def _log_density_and_grad(logmap: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Bilinear value and pixel-space gradient of ``logmap``; zero gradient where clamped."""
    h, w = logmap.shape
    idx, wts = bilinear_footprint((h, w), x, y)
    v = logmap.ravel()[idx]
    val = (v * wts).sum(0)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc), w - 2)
    y0 = np.minimum(np.floor(yc), h - 2)
    fx, fy = xc - x0, yc - y0
    gx = (1 - fy) * (v[1] - v[0]) + fy * (v[3] - v[2])
    gy = (1 - fx) * (v[2] - v[0]) + fx * (v[3] - v[1])
    gx = np.where((x < 0) | (x > w - 1), 0.0, gx)
    gy = np.where((y < 0) | (y > h - 1), 0.0, gy)
    return val, gx, gy


@dataclass
class FitReport:
    history: list[float]
    initial_loss: float
    final_loss: float


def _gather(gaze: list[GazeFrame]):
    frames, pts = [], []
    for g in gaze:
        p = g.valid_points
        frames.extend([g.frame_index] * len(p))
        pts.extend(p)
    return np.array(frames, dtype=int), np.array(pts, dtype=float).reshape(-1, 2)


def fit_correction(
    corrupted: list[GazeFrame],
    density=None,
    mode: str = "supervised",
    config: FitConfig | None = None,
    true_gaze: list[GazeFrame] | None = None,
) -> tuple[CorrectionNet, FitReport]:
    """Fit a correction net that maps corrupted gaze back onto the scene.

    ``supervised`` scores corrected points under a Gaussian (sigma 0.0347)
    around the true gaze; ``self-supervised`` scores them under
    ``density(frame_index)``, sampled bilinearly in log space. Full-batch Adam.
    """
    config = config or FitConfig()
    frames, x = _gather(corrupted)
    if len(x) < 50:
        raise ValueError(f"recalibration needs at least 50 gaze samples, got {len(x)}")
    if mode == "supervised":
        if true_gaze is None:
            raise ValueError("supervised recalibration needs the true gaze")
        _, target = _gather(true_gaze)
        if target.shape != x.shape:
            raise ValueError("true and corrupted gaze have different valid points")

        def loss_and_dy(y):
            r = y - target
            return float(np.mean(np.sum(r**2, 1)) / (2 * SUPERVISED_SIGMA**2)), r / (len(y) * SUPERVISED_SIGMA**2)

    elif mode == "self-supervised":
        if density is None:
            raise ValueError("self-supervised recalibration needs a density provider")
        logmaps = {f: np.log(np.asarray(density(f)) + 1e-8) for f in np.unique(frames)}
        shape = next(iter(logmaps.values())).shape
        scale = np.array([shape[1] - 1, shape[0] - 1], dtype=float)

        def loss_and_dy(y):
            ypx = y * scale
            total = 0.0
            dy = np.zeros_like(y)
            for f, lm in logmaps.items():
                sel = frames == f
                val, gx, gy = _log_density_and_grad(lm, ypx[sel, 0], ypx[sel, 1])
                total -= val.sum()
                dy[sel] = -np.stack([gx, gy], 1) * scale
            return total / len(y), dy / len(y)

    else:
        raise ValueError(f"unknown recalibration mode {mode!r}")

    net = CorrectionNet.near_identity(config.hidden, config.seed, config.init_scale)
    m = {p: np.zeros_like(getattr(net, p)) for p in net.PARAMS}
    v = {p: np.zeros_like(getattr(net, p)) for p in net.PARAMS}
    history = []
    for it in range(1, config.iters + 1):
        loss, dy = loss_and_dy(net(x))
        if not np.isfinite(loss):
            raise FloatingPointError(f"recalibration diverged at iteration {it}")
        history.append(loss)
        grads = net.backward(x, dy)
        for p in net.PARAMS:
            m[p] = config.beta1 * m[p] + (1 - config.beta1) * grads[p]
            v[p] = config.beta2 * v[p] + (1 - config.beta2) * grads[p] ** 2
            mh = m[p] / (1 - config.beta1**it)
            vh = v[p] / (1 - config.beta2**it)
            setattr(net, p, getattr(net, p) - config.lr * mh / (np.sqrt(vh) + 1e-8))
    final, _ = loss_and_dy(net(x))
    if not net.finite() or not np.isfinite(final):
        raise FloatingPointError("recalibration produced non-finite parameters")
    return net, FitReport(history, history[0], final)
