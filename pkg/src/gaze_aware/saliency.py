"""Saliency densities, gaze-conditioned fusion, and saliency evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from gaze_aware.grid import GazeFrame, center_prior, gaussian_splat, normalize

EPS = 1e-8


@dataclass(frozen=True)
class SaliencyProvider:
    """Emits one saliency density per frame, either computed from the image or read from PGMs.

    In file-backed mode maps are read from ``directory/sal_{frame:06}.pgm``.
    """

    mode: str = "computed"
    prior_weight: float = 0.2
    center_scale: float = 1 / 48
    surround_scale: float = 1 / 8
    directory: str | None = None

    def __post_init__(self):
        if self.mode not in ("computed", "file-backed"):
            raise ValueError(f"unknown saliency mode {self.mode!r}")
        if self.mode == "file-backed" and self.directory is None:
            raise ValueError("file-backed saliency needs a directory")

    def __call__(self, frame_index: int, image: np.ndarray | None = None) -> np.ndarray:
        if self.mode == "file-backed":
            from gaze_aware.io import read_heatmap_pgm

            return normalize(read_heatmap_pgm(Path(self.directory) / f"sal_{frame_index:06}.pgm"))
        if image is None:
            raise ValueError("computed saliency needs the frame image")
        return compute_saliency(image, self.prior_weight, self.center_scale, self.surround_scale)


def compute_saliency(
    frame: np.ndarray,
    prior_weight: float = 0.2,
    center_scale: float = 1 / 48,
    surround_scale: float = 1 / 8,
) -> np.ndarray:
    """Center-surround contrast blended with a centered Gaussian prior.

    Box-filter sizes are fractions of the frame width. A frame with no
    contrast yields the prior alone.
    """
    frame = np.asarray(frame, dtype=float)
    h, w = frame.shape
    if h < 16 or w < 16:
        raise ValueError(f"frame must be at least 16x16, got {frame.shape}")
    small = max(1, int(round(center_scale * w)) | 1)
    large = max(small + 2, int(round(surround_scale * w)) | 1)
    contrast = np.abs(
        uniform_filter(frame, small, mode="nearest") - uniform_filter(frame, large, mode="nearest")
    )
    prior = center_prior(w, h)
    scale = max(1.0, float(np.abs(frame).max()))
    if contrast.max() <= 1e-9 * scale:
        return prior
    return (1 - prior_weight) * normalize(contrast) + prior_weight * prior


def gaze_conditioned_density(
    saliency: np.ndarray, noisy_gaze: GazeFrame, lam: float, kernel_sigma: float
) -> np.ndarray:
    """Mixture ``(1 - lam) * saliency + lam * splat(gaze)``; saliency alone when no gaze is valid."""
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    saliency = np.asarray(saliency, dtype=float)
    if not noisy_gaze.valid.any():
        return saliency.copy()
    h, w = saliency.shape
    splat = gaussian_splat(noisy_gaze, kernel_sigma, w, h)
    return (1 - lam) * saliency + lam * splat


def _match(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def kl_divergence(truth: np.ndarray, pred: np.ndarray) -> float:
    """KL(truth || pred) with an additive epsilon inside the log ratio."""
    truth, pred = _match(truth, pred)
    return float(np.sum(truth * np.log((truth + EPS) / (pred + EPS))))


def cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _match(a, b)
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0 or nb == 0:
        raise ValueError("cross correlation is undefined for a zero-variance map")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def fixation_pixels(fixations, shape) -> tuple[np.ndarray, np.ndarray]:
    """Round normalized ``(frame, x, y)`` fixations to pixel indices."""
    h, w = shape
    fix = np.asarray(fixations, dtype=float).reshape(-1, 3)
    xs = np.rint(fix[:, 1] * (w - 1)).astype(int)
    ys = np.rint(fix[:, 2] * (h - 1)).astype(int)
    return np.clip(xs, 0, w - 1), np.clip(ys, 0, h - 1)


def information_gain(pred: np.ndarray, fixations, baseline: np.ndarray | None = None) -> float:
    """Mean log2 ratio of ``pred`` over ``baseline`` at the fixated pixels, in bits.

    ``fixations`` is a sequence of ``(frame_index, x, y)`` in normalized
    coordinates; the default baseline is the center prior.
    """
    pred = np.asarray(pred, dtype=float)
    if baseline is None:
        baseline = center_prior(pred.shape[1], pred.shape[0])
    pred, baseline = _match(pred, baseline)
    if len(fixations) == 0:
        raise ValueError("information gain needs at least one fixation")
    xs, ys = fixation_pixels(fixations, pred.shape)
    return float(np.mean(np.log2(pred[ys, xs] + EPS) - np.log2(baseline[ys, xs] + EPS)))
