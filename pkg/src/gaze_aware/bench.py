"""Experiment harnesses producing the result tables (denoising, recalibration, awareness, ablation)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from gaze_aware.awareness import FitResult, eval_awareness, fg_estimate, variational_fit
from gaze_aware.config import Config, MeanShiftConfig
from gaze_aware.gradcheck import gradcheck_suite
from gaze_aware.grid import GazeFrame, center_prior, gaussian_bumps, gaussian_splat, normalize, to_pixels
from gaze_aware.objective import AWARENESS_TERMS, AnnotationRecord, SequenceBatch
from gaze_aware.refine import (
    FitConfig,
    apply_affine_corruption,
    apply_noise,
    calibration_error,
    fit_correction,
    meanshift,
)
from gaze_aware.saliency import (
    compute_saliency,
    cross_correlation,
    gaze_conditioned_density,
    information_gain,
    kl_divergence,
)
from gaze_aware.synth import GroundTruth, make_ground_truth

log = logging.getLogger(__name__)

MIN_BANDWIDTH_SIGMA = 1e-3
POOL_RADIUS = 1  # frames on either side whose gaze is pooled before denoising
POOL_BANDWIDTH = 0.05


def sub_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for one benchmark cell."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def scenes(config: Config, seed: int) -> list[GroundTruth]:
    return [
        make_ground_truth(sub_seed(seed, 0, i), config.synth, config.estimator, config.weights)
        for i in range(config.bench.scenes)
    ]


def saliency_stack(gt: GroundTruth) -> np.ndarray:
    return np.stack([compute_saliency(f) for f in gt.frames])


def fusion_sigma(sigma_n: float, config: Config) -> float:
    """Kernel width of the gaze term in the gaze-conditioned density."""
    return max(sigma_n, config.estimator.deposit_sigma)


# --- Table 1 analog -------------------------------------------------------------


@dataclass(frozen=True)
class DenoiseRow:
    sigma_n: float
    raw_mae: float
    obj_mae: float
    sal_mae: float
    cond_mae: float


def _climb(start, density, ms):
    try:
        return meanshift(start, density, ms)
    except ValueError:
        return np.asarray(start, dtype=float)


def denoise_gaze(noisy: GazeFrame, density: np.ndarray, ms: MeanShiftConfig) -> GazeFrame:
    """Move each valid point to the mode reached by meanshift on ``density``."""
    shape = density.shape
    pts = noisy.points.copy()
    px = to_pixels(noisy.points, shape)
    for i in np.nonzero(noisy.valid)[0]:
        pts[i] = _climb(px[i], density, ms) / np.array([shape[1] - 1, shape[0] - 1])
    return GazeFrame(noisy.frame_index, pts, noisy.valid)


def denoise_benchmark(gts: list[GroundTruth], sigmas, config: Config, seed: int, saliency=None) -> list[DenoiseRow]:
    """Mean pixel distance between recovered and true gaze for raw, OBJ, SAL and gaze-conditioned maps."""
    if saliency is None:
        saliency = [saliency_stack(gt) for gt in gts]
    rows = []
    for si, sigma in enumerate(sigmas):
        ms = replace(config.meanshift, sigma_n=max(sigma, MIN_BANDWIDTH_SIGMA))
        errs = {k: [] for k in ("raw", "obj", "sal", "cond")}
        for gi, gt in enumerate(gts):
            if len(saliency[gi]) != gt.spec.frames:
                raise ValueError("missing saliency maps for some frames")
            model = replace(config.noise, sigma_n=sigma, seed=sub_seed(seed, 1, si, gi))
            noisy = apply_noise(gt.scanpath, model)
            h, w = gt.shape
            for t, (true, obs) in enumerate(zip(gt.scanpath, noisy)):
                if not obs.valid.any():
                    continue
                maps = {
                    "obj": gt.masks[t].astype(float),
                    "sal": saliency[gi][t],
                    "cond": gaze_conditioned_density(saliency[gi][t], obs, config.bench.fusion_lambda, fusion_sigma(sigma, config)),
                }
                true_px = to_pixels(true.points, (h, w))
                obs_px = to_pixels(obs.points, (h, w))
                for i in np.nonzero(obs.valid)[0]:
                    errs["raw"].append(np.hypot(*(obs_px[i] - true_px[i])))
                    for k, m in maps.items():
                        errs[k].append(np.hypot(*(_climb(obs_px[i], m, ms) - true_px[i])))
        rows.append(DenoiseRow(sigma, *(float(np.mean(errs[k])) for k in ("raw", "obj", "sal", "cond"))))
    return rows


# --- Table 2 analog -------------------------------------------------------------


@dataclass(frozen=True)
class RecalibrateRow:
    sigma_n: float
    before: float
    after: float


def identity_map(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)


def recalibrate_benchmark(config: Config, seed: int, mode: str = "supervised", fit: FitConfig | None = None) -> list[RecalibrateRow]:
    """Calibration error of the uncorrected and the fitted mapping, averaged over seeded runs."""
    rows = []
    runs = config.bench.recalibrate_runs
    gts = [make_ground_truth(sub_seed(seed, 4, r), config.synth, config.estimator, config.weights) for r in range(runs)]
    sal = [saliency_stack(gt) for gt in gts] if mode == "self-supervised" else [None] * runs
    for si, sigma in enumerate(config.bench.sigma_recalibrate):
        before, after = [], []
        for r, gt in enumerate(gts):
            corrupted, transform = apply_affine_corruption(gt.scanpath, sigma, sub_seed(seed, 5, si, r))
            density = None if sal[r] is None else (lambda f, s=sal[r]: s[f])
            net, _ = fit_correction(corrupted, density, mode, fit, true_gaze=gt.scanpath)
            before.append(calibration_error(identity_map, transform))
            after.append(calibration_error(net, transform))
        rows.append(RecalibrateRow(sigma, float(np.mean(before)), float(np.mean(after))))
    return rows


# --- Table 3 analog and ablation -------------------------------------------------


def pooled_denoise(noisy: list[GazeFrame], saliency: np.ndarray, sigma_n: float, config: Config) -> list[GazeFrame]:
    """One denoised gaze point per frame, repeated in every valid slot.

    The density mixes saliency with a kernel estimate of the valid samples of
    nearby frames; meanshift starts from the mean of the frame's own samples.
    """
    ms = replace(config.meanshift, sigma_n=POOL_BANDWIDTH)
    lam = config.bench.fusion_lambda
    h, w = saliency.shape[1:]
    scale = np.array([w - 1, h - 1], dtype=float)
    out = []
    for t, g in enumerate(noisy):
        if not g.valid.any():
            out.append(g)
            continue
        near = range(max(0, t - POOL_RADIUS), min(len(noisy), t + POOL_RADIUS + 1))
        pts = np.concatenate([noisy[u].valid_points for u in near])
        kde = normalize(gaussian_bumps(pts, fusion_sigma(sigma_n, config), (h, w), reduce="sum"))
        density = (1 - lam) * saliency[t] + lam * kde
        start = to_pixels(g.valid_points.mean(axis=0, keepdims=True), (h, w))[0]
        p = _climb(start, density, ms) / scale
        out.append(GazeFrame(g.frame_index, np.tile(p, (3, 1)), g.valid))
    return out


def variational_estimate(batch: SequenceBatch, config: Config, sigma_n: float, weights=None, saliency=None) -> FitResult:
    """Denoise the batch gaze against saliency, then fit the variational objective."""
    if saliency is None:
        saliency = np.stack([compute_saliency(f) for f in batch.images])
    gaze = pooled_denoise(batch.gaze, saliency, sigma_n, config)
    est = replace(config.estimator, max_iter=config.bench.fit_iters)
    return variational_fit(replace(batch, gaze=gaze), weights or config.variational, est)


def split_annotations(annotations: list[AnnotationRecord], fraction: float, seed: int):
    """Seeded split into fitting and held-out evaluation sets."""
    order = np.random.default_rng(seed).permutation(len(annotations))
    k = int(round(fraction * len(annotations)))
    return [annotations[i] for i in sorted(order[:k])], [annotations[i] for i in sorted(order[k:])]


@dataclass(frozen=True)
class AwarenessRow:
    sigma_n: float
    mse_fg: float
    mse_var: float


def _awareness_case(gt: GroundTruth, sal: np.ndarray, sigma: float, config: Config, noise_seed: int, split_seed: int):
    noisy = apply_noise(gt.scanpath, replace(config.noise, sigma_n=sigma, seed=noise_seed))
    fit, held = split_annotations(gt.annotations, config.bench.fit_fraction, split_seed)
    batch = SequenceBatch(gt.frames, noisy, gt.flows, annotations=fit)
    return noisy, batch, held


def awareness_benchmark(gts: list[GroundTruth], sigmas, config: Config, seed: int, saliency=None) -> list[AwarenessRow]:
    """Held-out annotation MSE of the filtered-gaze baseline and the variational estimate."""
    if saliency is None:
        saliency = [saliency_stack(gt) for gt in gts]
    rows = []
    for si, sigma in enumerate(sigmas):
        fg, var = [], []
        for gi, gt in enumerate(gts):
            noisy, batch, held = _awareness_case(gt, saliency[gi], sigma, config, sub_seed(seed, 2, si, gi), sub_seed(seed, 9, gi))
            fg.append(eval_awareness(fg_estimate(noisy, gt.flows, config.estimator, shape=gt.shape), held))
            var.append(eval_awareness(variational_estimate(batch, config, sigma, saliency=saliency[gi]).awareness, held))
            log.info("awareness sigma %.3g scene %d: fg %.4f var %.4f", sigma, gi, fg[-1], var[-1])
        rows.append(AwarenessRow(float(sigma), float(np.mean(fg)), float(np.mean(var))))
    return rows


@dataclass(frozen=True)
class AblationRow:
    removed: str
    mse: float


def ablation(gts: list[GroundTruth], config: Config, seed: int, saliency=None) -> list[AblationRow]:
    """Held-out MSE of the full objective and of each leave-one-out variant at ``bench.ablate_sigma``.

    Only terms with nonzero weight are removed; the first row (``none``) is the full objective.
    """
    if saliency is None:
        saliency = [saliency_stack(gt) for gt in gts]
    full = config.variational
    variants = [("none", full)] + [(t, full.without(t)) for t in AWARENESS_TERMS if full.alpha(t) > 0]
    sigma = config.bench.ablate_sigma
    cases = [
        _awareness_case(gt, saliency[gi], sigma, config, sub_seed(seed, 3, gi), sub_seed(seed, 9, gi))
        for gi, gt in enumerate(gts)
    ]
    rows = []
    for name, weights in variants:
        mse = [
            eval_awareness(variational_estimate(batch, config, sigma, weights, saliency[gi]).awareness, held)
            for gi, (_, batch, held) in enumerate(cases)
        ]
        log.info("ablation %s: %.4f", name, np.mean(mse))
        rows.append(AblationRow(name, float(np.mean(mse))))
    return rows


# --- saliency metrics -----------------------------------------------------------


@dataclass(frozen=True)
class SaliencyRow:
    method: str
    kl: float
    cc: float
    ig: float


def fixation_density(g: GazeFrame, sigma: float, shape) -> np.ndarray:
    h, w = shape
    return normalize(gaussian_splat(g, sigma, w, h))


def eval_saliency(gts: list[GroundTruth], config: Config, seed: int, saliency=None) -> list[SaliencyRow]:
    """KL(truth || pred), CC and IG (bits over the center prior) of several predictors.

    Truth per frame is a splat of the true gaze; frames without valid gaze are skipped.
    """
    if saliency is None:
        saliency = [saliency_stack(gt) for gt in gts]
    sigma = config.noise.sigma_n
    scores: dict[str, list] = {k: [] for k in ("center_prior", "saliency", "gaze_conditioned")}
    fix: dict[str, list] = {k: [] for k in scores}
    for gi, gt in enumerate(gts):
        h, w = gt.shape
        prior = center_prior(w, h)
        noisy = apply_noise(gt.scanpath, replace(config.noise, seed=sub_seed(seed, 6, gi)))
        for t, (true, obs) in enumerate(zip(gt.scanpath, noisy)):
            if not true.valid.any():
                continue
            truth = fixation_density(true, config.estimator.deposit_sigma, (h, w))
            preds = {
                "center_prior": prior,
                "saliency": saliency[gi][t],
                "gaze_conditioned": gaze_conditioned_density(
                    saliency[gi][t], obs, config.bench.fusion_lambda, fusion_sigma(sigma, config)
                ),
            }
            pts = [(t, x, y) for x, y in true.valid_points]
            for k, p in preds.items():
                scores[k].append((kl_divergence(truth, p), cross_correlation(truth, p)))
                fix[k].append(information_gain(p, pts, prior))
    rows = []
    for k in scores:
        kl, cc = np.mean(scores[k], axis=0)
        rows.append(SaliencyRow(k, float(kl), float(cc), float(np.mean(fix[k]))))
    return rows


# --- gradient check -------------------------------------------------------------


@dataclass(frozen=True)
class GradcheckRow:
    term: str
    max_rel_error: float
    passed: bool


GRADCHECK_TOL = 1e-4


def gradcheck_rows(seed: int, n_seeds: int = 5) -> list[GradcheckRow]:
    """Worst relative error per objective term over ``n_seeds`` random batches."""
    seeds = [sub_seed(seed, 7, i) % (2**32) for i in range(n_seeds)]
    worst = gradcheck_suite(seeds)
    return [GradcheckRow(t, e, e < GRADCHECK_TOL) for t, e in worst.items()]
