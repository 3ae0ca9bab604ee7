"""Central finite-difference checks of the analytic objective gradients."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from gaze_aware.config import TERMS, LossWeights
from gaze_aware.grid import FlowField, GazeFrame, bilinear_footprint, gaussian_splat, normalize
from gaze_aware.objective import (
    AnnotationRecord,
    SequenceBatch,
    grad,
    loss_consistency,
    temporal_residuals,
    term_value,
)

STEP = 1e-4


def random_batch(seed: int, width: int = 16, height: int = 9, frames: int = 4, start: int = 0) -> SequenceBatch:
    """Small random batch with every field populated.

    The gaze density mixes a random background with mass around the gaze
    points, as a trained predictor would.
    """
    rng = np.random.default_rng(seed)
    shape = (frames, height, width)
    images = rng.random(shape)
    awareness = rng.random(shape)
    gaze = []
    for t in range(frames):
        valid = rng.random(3) < 0.8
        valid[0] = True
        gaze.append(GazeFrame(start + t, rng.uniform(0.1, 0.9, size=(3, 2)), valid))
    density = np.stack(
        [normalize(0.5 * normalize(rng.random((height, width))) + 0.5 * gaussian_splat(g, 0.1, width, height)) for g in gaze]
    )
    flows = [FlowField(rng.normal(0, 1.0, (height, width)), rng.normal(0, 1.0, (height, width))) for _ in range(frames - 1)]
    annotations = [
        AnnotationRecord(start + int(rng.integers(frames)), *rng.random(2), float(rng.random()))
        for _ in range(10)
    ]
    return SequenceBatch(images, gaze, flows, awareness, density, annotations, start)


def central_difference(f, x: np.ndarray, h: float = STEP, skip: np.ndarray | None = None) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x``; entries flagged in ``skip`` are left NaN."""
    x = np.array(x, dtype=float)
    g = np.full(x.shape, np.nan)
    flat = x.ravel()
    for i in range(flat.size):
        if skip is not None and skip.ravel()[i]:
            continue
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        g.ravel()[i] = (fp - fm) / (2 * h)
    return g


def hinge_mask(batch: SequenceBatch, weights: LossWeights, margin: float = 2 * STEP) -> np.ndarray:
    """Awareness entries whose perturbation can cross the temporal-term hinge."""
    d = temporal_residuals(batch, weights)
    mask = np.zeros(batch.awareness.shape, dtype=bool)
    h, w = batch.shape
    ys, xs = np.mgrid[0:h, 0:w]
    for t in range(batch.T - 1):
        near = np.abs(d[t]) < margin
        if not near.any():
            continue
        mask[t][near] = True
        f = batch.flows[t]
        idx, _ = bilinear_footprint((h, w), (xs + f.u)[near], (ys + f.v)[near])
        mask[t + 1].ravel()[idx.ravel()] = True
    return mask


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise relative error over the non-NaN entries of ``numeric``.

    Entries smaller than 1e-3 of the largest numeric component are compared
    at that scale so roundoff on near-zero entries does not dominate.
    """
    keep = ~np.isnan(numeric)
    a = analytic[keep]
    n = numeric[keep]
    if a.size == 0:
        return 0.0
    floor = max(1e-3 * float(np.max(np.abs(n))), 1e-8)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_term(batch: SequenceBatch, weights: LossWeights, term: str, other: SequenceBatch | None = None, h: float = STEP) -> float:
    """Max relative error between the analytic and central-difference gradient of ``term``."""
    analytic = grad(batch, weights, term, other)
    (key, g), = analytic.items()
    base = getattr(batch, key)
    skip = hinge_mask(batch, weights) if term == "T" else None

    def f(x):
        b = replace(batch, **{key: x})
        if term in ("CON_G", "CON_A"):
            return loss_consistency(b, other, "gaze" if term == "CON_G" else "awareness")
        return term_value(b, weights, term)

    return relative_error(g, central_difference(f, base, h, skip))


def gradcheck_suite(seeds=(0, 1, 2, 3, 4), weights: LossWeights | None = None) -> dict[str, float]:
    """Worst relative error per term over random 16x9x4 batches."""
    weights = weights or LossWeights()
    worst = {t: 0.0 for t in TERMS}
    for seed in seeds:
        batch = random_batch(seed)
        other = random_batch(seed + 10_000, start=1)
        for term in TERMS:
            worst[term] = max(worst[term], check_term(batch, weights, term, other))
    return worst
