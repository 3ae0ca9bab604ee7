"""Awareness estimators: filtered-gaze baseline, recursive update, variational fit."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from gaze_aware.config import EstimatorConfig, LossWeights
from gaze_aware.grid import (
    FlowField,
    GazeFrame,
    advect,
    bilinear_sample,
    gaussian_bump,
    gaussian_bumps,
    sigma_pixels,
    to_pixels,
)
from gaze_aware.objective import (
    AnnotationRecord,
    SequenceBatch,
    awareness_objective,
    awareness_objective_grad,
    sample_stack,
)

log = logging.getLogger(__name__)

MIN_AMPLITUDE = 1e-4


def _check_lengths(gaze, flows):
    if len(flows) < len(gaze) - 1:
        raise ValueError(f"{len(gaze)} gaze frames need {len(gaze) - 1} flow fields, got {len(flows)}")


def _shape(flows, shape):
    if shape is not None:
        return tuple(shape)
    if not flows:
        raise ValueError("frame shape is needed when no flow fields are given")
    return flows[0].shape


def fg_estimate(gaze: list[GazeFrame], flows: list[FlowField], config: EstimatorConfig, shape=None) -> np.ndarray:
    """Filtered-gaze baseline: flow-advected Gaussians of every past gaze sample.

    A sample of age ``k`` frames has normalized width ``fg_sigma0 + fg_sigma_growth * k``
    and peak ``fg_amplitude_decay ** k``; samples are combined by per-pixel max.
    """
    _check_lengths(gaze, flows)
    h, w = _shape(flows, shape)
    out = np.zeros((len(gaze), h, w))
    pos = np.zeros((0, 2))
    age = np.zeros(0)
    for t, g in enumerate(gaze):
        pos = np.vstack([pos, to_pixels(g.valid_points, (h, w))])
        age = np.concatenate([age, np.zeros(len(g.valid_points))])
        for (cx, cy), k in zip(pos, age):
            amp = config.fg_amplitude_decay**k
            if amp < MIN_AMPLITUDE:
                continue
            spx = sigma_pixels(config.fg_sigma0 + config.fg_sigma_growth * k, (h, w))
            sl, patch = gaussian_bump((h, w), (cx, cy), spx, amp)
            np.maximum(out[t][sl], patch, out=out[t][sl])
        if t < len(gaze) - 1 and len(pos):
            f = flows[t]
            pos = pos + np.stack([bilinear_sample(f.u, pos[:, 0], pos[:, 1]), bilinear_sample(f.v, pos[:, 0], pos[:, 1])], axis=1)
            age = age + 1
    return np.clip(out, 0.0, 1.0)


def deposit(gaze: GazeFrame, sigma: float, shape) -> np.ndarray:
    return gaussian_bumps(gaze.valid_points, sigma, shape, reduce="max")


def recursive_step(prev: np.ndarray, gaze: GazeFrame, flow: FlowField | None, config: EstimatorConfig, weights: LossWeights) -> np.ndarray:
    """One update: advect and decay the previous map, deposit fresh gaze, clamp, cap total mass."""
    prev = np.asarray(prev, dtype=float)
    carried = prev if flow is None else advect(prev, flow)
    nxt = np.clip((1 - weights.eps_DEC) * carried + deposit(gaze, config.deposit_sigma, prev.shape), 0.0, 1.0)
    budget = config.capacity_budget * prev.size
    total = nxt.sum()
    if total > budget:
        nxt *= budget / total
    return nxt


def recursive_run(
    gaze: list[GazeFrame],
    flows: list[FlowField],
    config: EstimatorConfig,
    weights: LossWeights,
    shape=None,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Fold :func:`recursive_step` over the sequence.

    ``initial`` is the map before frame 0 (all zeros by default); frame ``t``
    is reached from frame ``t - 1`` through ``flows[t - 1]``.
    """
    _check_lengths(gaze, flows)
    shape = _shape(flows, shape) if initial is None else np.shape(initial)
    m = np.zeros(shape) if initial is None else np.asarray(initial, dtype=float)
    out = np.zeros((len(gaze),) + tuple(shape))
    for t, g in enumerate(gaze):
        m = recursive_step(m, g, flows[t - 1] if t > 0 else None, config, weights)
        out[t] = m
    return out


@dataclass
class FitResult:
    awareness: np.ndarray
    loss: float
    initial_loss: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0


def variational_fit(
    batch: SequenceBatch,
    weights: LossWeights,
    config: EstimatorConfig,
    init: np.ndarray | None = None,
) -> FitResult:
    """Projected gradient descent on the awareness sequence, box-constrained to [0, 1].

    Starts from :func:`recursive_run` unless ``init`` is given. Its gaze
    deposits are what the gaze-awareness term asks for, so they are left out
    when ``alpha_AA`` is zero. The step is halved until the objective
    decreases and doubled after each accepted step.
    """
    if init is None:
        gaze = batch.gaze if weights.alpha_AA > 0 else [GazeFrame.empty(g.frame_index) for g in batch.gaze]
        init = recursive_run(gaze, batch.flows, config, weights, shape=batch.shape)
    x = np.clip(np.asarray(init, dtype=float), 0.0, 1.0)

    def objective(m):
        return awareness_objective(batch.with_maps(awareness=m), weights)

    f = objective(x)
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the initial point")
    f0 = f
    history = [f]
    step = config.step_size
    it = 0
    for it in range(1, config.max_iter + 1):
        g = awareness_objective_grad(batch.with_maps(awareness=x), weights)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("objective gradient is not finite")
        if np.array_equal(np.clip(x - g, 0.0, 1.0), x):
            break
        while True:
            xn = np.clip(x - step * g, 0.0, 1.0)
            fn = objective(xn)
            if not np.isfinite(fn):
                raise FloatingPointError("objective became non-finite")
            if fn < f or step < 1e-30:
                break
            step *= 0.5
        if not fn < f:
            break
        gain = f - fn
        x, f = xn, fn
        history.append(f)
        if gain < config.tol * max(abs(f), 1e-300):
            break
        step *= 2.0
    log.debug("variational fit: %d iterations, loss %.6g -> %.6g", it, f0, f)
    return FitResult(x, f, f0, history, it)


def eval_awareness(estimate: np.ndarray, annotations: list[AnnotationRecord], start: int = 0) -> float:
    """Mean squared error between the estimate and annotated awareness labels."""
    estimate = np.asarray(estimate, dtype=float)
    t_n, h, w = estimate.shape
    rows = [
        (a.frame_index - start, a.x * (w - 1), a.y * (h - 1), a.label)
        for a in annotations
        if 0 <= a.frame_index - start < t_n
    ]
    if not rows:
        raise ValueError("no annotations fall inside the estimate's frame range")
    arr = np.array(rows)
    pred = sample_stack(estimate, arr[:, 0].astype(np.intp), arr[:, 1], arr[:, 2])
    return float(np.mean((pred - arr[:, 3]) ** 2))
