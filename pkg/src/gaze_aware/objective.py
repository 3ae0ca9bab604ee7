"""Loss terms over gaze-density and awareness map sequences, with analytic gradients.

All terms are plain sums over pixels, frames, gaze points and annotations.
Map stacks are ``(T, H, W)`` arrays; frame ``t`` of a batch corresponds to the
absolute frame index ``start + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from gaze_aware.config import TERMS, LossWeights
from gaze_aware.grid import FlowField, GazeFrame, advect, bilinear_footprint, warp_by_flow

NLL_FLOOR = 1e-12
EPS_SPATIAL = 1e-4


@dataclass(frozen=True)
class AnnotationRecord:
    frame_index: int
    x: float
    y: float
    label: float

    def __post_init__(self):
        if not 0 <= self.label <= 1:
            raise ValueError(f"awareness label {self.label} outside [0, 1]")


@dataclass(frozen=True)
class SequenceBatch:
    images: np.ndarray
    gaze: list[GazeFrame]
    flows: list[FlowField]
    awareness: np.ndarray | None = None
    gaze_density: np.ndarray | None = None
    annotations: list[AnnotationRecord] = field(default_factory=list)
    start: int = 0

    def __post_init__(self):
        images = np.asarray(self.images, dtype=float)
        if images.ndim != 3:
            raise ValueError("images must be a (T, H, W) stack")
        object.__setattr__(self, "images", images)
        for name in ("awareness", "gaze_density"):
            m = getattr(self, name)
            if m is not None:
                m = np.asarray(m, dtype=float)
                if m.shape != images.shape:
                    raise ValueError(f"{name} shape {m.shape} does not match images {images.shape}")
                object.__setattr__(self, name, m)
        if len(self.gaze) not in (0, self.T):
            raise ValueError(f"expected {self.T} gaze frames, got {len(self.gaze)}")
        for f in self.flows[: self.T - 1]:
            if f.shape != self.shape:
                raise ValueError(f"flow shape {f.shape} does not match frames {self.shape}")

    @property
    def T(self) -> int:
        return self.images.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1:]

    @cached_property
    def diffusivity(self) -> np.ndarray:
        """Edge weights of the image stack, shared by copies made with :meth:`with_maps`."""
        return diffusivity(self.images)

    def with_maps(self, awareness=None, gaze_density=None) -> "SequenceBatch":
        kw = {}
        if awareness is not None:
            kw["awareness"] = awareness
        if gaze_density is not None:
            kw["gaze_density"] = gaze_density
        out = replace(self, **kw)
        out.__dict__["diffusivity"] = self.diffusivity
        return out


# --- sampling helpers over (T, H, W) stacks -------------------------------


def gaze_samples(batch: SequenceBatch):
    """Frame indices and pixel coordinates of every valid gaze point."""
    h, w = batch.shape
    ts, xs, ys = [], [], []
    for t, g in enumerate(batch.gaze):
        p = g.valid_points
        ts.extend([t] * len(p))
        xs.extend(p[:, 0] * (w - 1))
        ys.extend(p[:, 1] * (h - 1))
    return np.array(ts, dtype=np.intp), np.array(xs, dtype=float), np.array(ys, dtype=float)


def annotation_samples(batch: SequenceBatch):
    h, w = batch.shape
    rows = [
        (a.frame_index - batch.start, a.x * (w - 1), a.y * (h - 1), a.label)
        for a in batch.annotations
        if 0 <= a.frame_index - batch.start < batch.T
    ]
    if not rows:
        return np.zeros(0, np.intp), np.zeros(0), np.zeros(0), np.zeros(0)
    arr = np.array(rows, dtype=float)
    return arr[:, 0].astype(np.intp), arr[:, 1], arr[:, 2], arr[:, 3]


def _footprint3(shape3, t, x, y):
    _, h, w = shape3
    idx, wts = bilinear_footprint((h, w), x, y)
    return idx + t * h * w, wts


def sample_stack(stack: np.ndarray, t, x, y) -> np.ndarray:
    idx, wts = _footprint3(stack.shape, t, x, y)
    return (stack.ravel()[idx] * wts).sum(axis=0)


def scatter_stack(shape3, t, x, y, values) -> np.ndarray:
    idx, wts = _footprint3(shape3, t, x, y)
    acc = np.bincount(idx.ravel(), weights=(wts * values).ravel(), minlength=int(np.prod(shape3)))
    return acc.reshape(shape3)


def _require_flows(batch: SequenceBatch):
    if len(batch.flows) < batch.T - 1:
        raise ValueError(f"temporal term needs {batch.T - 1} flow fields, got {len(batch.flows)}")


def _require(m, name):
    if m is None:
        raise ValueError(f"batch has no {name} maps")
    return m


# --- supervisory terms ------------------------------------------------------


def loss_gaze_nll(batch: SequenceBatch) -> float:
    p = _require(batch.gaze_density, "gaze_density")
    t, x, y = gaze_samples(batch)
    if len(t) == 0:
        return 0.0
    return float(-np.sum(np.log(np.maximum(sample_stack(p, t, x, y), NLL_FLOOR))))


def grad_gaze_nll(batch: SequenceBatch) -> np.ndarray:
    p = _require(batch.gaze_density, "gaze_density")
    t, x, y = gaze_samples(batch)
    if len(t) == 0:
        return np.zeros_like(p)
    s = sample_stack(p, t, x, y)
    g = np.where(s > NLL_FLOOR, -1.0 / np.maximum(s, NLL_FLOOR), 0.0)
    return scatter_stack(p.shape, t, x, y, g)


def loss_att(batch: SequenceBatch) -> float:
    m = _require(batch.awareness, "awareness")
    t, x, y, label = annotation_samples(batch)
    if len(t) == 0:
        return 0.0
    return float(np.sum((sample_stack(m, t, x, y) - label) ** 2))


def grad_att(batch: SequenceBatch) -> np.ndarray:
    m = _require(batch.awareness, "awareness")
    t, x, y, label = annotation_samples(batch)
    if len(t) == 0:
        return np.zeros_like(m)
    return scatter_stack(m.shape, t, x, y, 2 * (sample_stack(m, t, x, y) - label))


def loss_aa(batch: SequenceBatch) -> float:
    m = _require(batch.awareness, "awareness")
    t, x, y = gaze_samples(batch)
    if len(t) == 0:
        return 0.0
    return float(np.sum((sample_stack(m, t, x, y) - 1.0) ** 2))


def grad_aa(batch: SequenceBatch) -> np.ndarray:
    m = _require(batch.awareness, "awareness")
    t, x, y = gaze_samples(batch)
    if len(t) == 0:
        return np.zeros_like(m)
    return scatter_stack(m.shape, t, x, y, 2 * (sample_stack(m, t, x, y) - 1.0))


# --- spatial smoothness -----------------------------------------------------


def forward_diff(phi: np.ndarray, axis: int) -> np.ndarray:
    """Forward difference along ``axis``; the last slice repeats the backward difference."""
    phi = np.moveaxis(np.asarray(phi, dtype=float), axis, -1)
    d = np.empty_like(phi)
    d[..., :-1] = phi[..., 1:] - phi[..., :-1]
    d[..., -1] = phi[..., -1] - phi[..., -2]
    return np.moveaxis(d, -1, axis)


def forward_diff_adjoint(r: np.ndarray, axis: int) -> np.ndarray:
    r = np.moveaxis(np.asarray(r, dtype=float), axis, -1)
    out = np.zeros_like(r)
    out[..., 1:] += r[..., :-1]
    out[..., :-1] -= r[..., :-1]
    out[..., -1] += r[..., -1]
    out[..., -2] -= r[..., -1]
    return np.moveaxis(out, -1, axis)


def diffusivity(image: np.ndarray) -> np.ndarray:
    """Per-pixel weight ``1 / sqrt(|grad I|^2 + eps)``."""
    gx = forward_diff(image, -1)
    gy = forward_diff(image, -2)
    return 1.0 / np.sqrt(gx**2 + gy**2 + EPS_SPATIAL)


def loss_spatial(phi: np.ndarray, image: np.ndarray, k: np.ndarray | None = None) -> float:
    """Edge-aware smoothness of ``phi``; works on single maps or (T, H, W) stacks.

    ``k`` is the precomputed :func:`diffusivity` of ``image``, if available.
    """
    phi = np.asarray(phi, dtype=float)
    image = np.asarray(image, dtype=float)
    if phi.shape != image.shape:
        raise ValueError(f"shape mismatch: {phi.shape} vs {image.shape}")
    if k is None:
        k = diffusivity(image)
    return float(np.sum(k * (forward_diff(phi, -1) ** 2 + forward_diff(phi, -2) ** 2)))


def grad_spatial(phi: np.ndarray, image: np.ndarray, k: np.ndarray | None = None) -> np.ndarray:
    if k is None:
        k = diffusivity(image)
    gx = forward_diff(phi, -1)
    gy = forward_diff(phi, -2)
    return 2 * (forward_diff_adjoint(k * gx, -1) + forward_diff_adjoint(k * gy, -2))


# --- temporal terms -----------------------------------------------------------


def temporal_residuals(batch: SequenceBatch, weights: LossWeights) -> np.ndarray:
    """``a - w_OF * b`` per pixel and frame pair, shape ``(T-1, H, W)``."""
    m = _require(batch.awareness, "awareness")
    _require_flows(batch)
    return np.stack(
        [warp_by_flow(m[t + 1], batch.flows[t]) - weights.w_OF * m[t] for t in range(batch.T - 1)]
    )


def loss_temporal(batch: SequenceBatch, weights: LossWeights) -> float:
    if batch.T < 2:
        return 0.0
    d = temporal_residuals(batch, weights)
    return float(np.sum(weights.c1 * np.maximum(d, 0.0) + weights.c2 * np.minimum(d, 0.0) ** 2))


def grad_temporal(batch: SequenceBatch, weights: LossWeights) -> np.ndarray:
    m = _require(batch.awareness, "awareness")
    g = np.zeros_like(m)
    if batch.T < 2:
        return g
    d = temporal_residuals(batch, weights)
    # subgradient 0 at the hinge
    ga = weights.c1 * (d > 0) + 2 * weights.c2 * np.minimum(d, 0.0)
    for t in range(batch.T - 1):
        g[t] -= weights.w_OF * ga[t]
        g[t + 1] += advect(ga[t], batch.flows[t])
    return g


def loss_decay(batch: SequenceBatch, weights: LossWeights) -> float:
    m = _require(batch.awareness, "awareness")
    r = (1 - weights.eps_DEC) * m[:-1] - m[1:]
    return float(np.sum(r**2))


def grad_decay(batch: SequenceBatch, weights: LossWeights) -> np.ndarray:
    m = _require(batch.awareness, "awareness")
    r = (1 - weights.eps_DEC) * m[:-1] - m[1:]
    g = np.zeros_like(m)
    g[:-1] += 2 * (1 - weights.eps_DEC) * r
    g[1:] -= 2 * r
    return g


def loss_capacity(batch: SequenceBatch) -> float:
    s = _require(batch.awareness, "awareness").sum(axis=(1, 2))
    return float(np.sum((s[:-1] - s[1:]) ** 2))


def grad_capacity(batch: SequenceBatch) -> np.ndarray:
    m = _require(batch.awareness, "awareness")
    s = m.sum(axis=(1, 2))
    r = s[:-1] - s[1:]
    gs = np.zeros_like(s)
    gs[:-1] += 2 * r
    gs[1:] -= 2 * r
    return np.broadcast_to(gs[:, None, None], m.shape).copy()


# --- block consistency --------------------------------------------------------


def _field(batch: SequenceBatch, which: str) -> np.ndarray:
    if which == "awareness":
        return _require(batch.awareness, "awareness")
    if which == "gaze":
        return _require(batch.gaze_density, "gaze_density")
    raise ValueError(f"consistency target must be 'gaze' or 'awareness', got {which!r}")


def _overlap(a: SequenceBatch, b: SequenceBatch):
    lo = max(a.start, b.start)
    hi = min(a.start + a.T, b.start + b.T)
    if hi <= lo:
        raise ValueError("runs share no frames")
    return slice(lo - a.start, hi - a.start), slice(lo - b.start, hi - b.start)


def loss_consistency(run_a: SequenceBatch, run_b: SequenceBatch, which: str) -> float:
    sa, sb = _overlap(run_a, run_b)
    return float(np.sum((_field(run_a, which)[sa] - _field(run_b, which)[sb]) ** 2))


def grad_consistency(run_a: SequenceBatch, run_b: SequenceBatch, which: str) -> np.ndarray:
    """Gradient with respect to ``run_a``'s maps."""
    sa, sb = _overlap(run_a, run_b)
    fa = _field(run_a, which)
    g = np.zeros_like(fa)
    g[sa] = 2 * (fa[sa] - _field(run_b, which)[sb])
    return g


# --- dispatch -------------------------------------------------------------------

GAZE_TERMS = ("G", "S_G", "CON_G")


def _precondition(batch: SequenceBatch, term: str, runs) -> str | None:
    """Reason the term cannot be evaluated, or None."""
    has_gaze = any(g.valid.any() for g in batch.gaze)
    need_pg = term in GAZE_TERMS
    if need_pg and batch.gaze_density is None:
        return "no gaze density"
    if not need_pg and batch.awareness is None:
        return "no awareness maps"
    if term in ("G", "AA") and not has_gaze:
        return "no valid gaze"
    if term == "ATT" and len(annotation_samples(batch)[0]) == 0:
        return "no annotations"
    if term in ("T", "DEC", "CAP") and batch.T < 2:
        return "fewer than 2 frames"
    if term in ("CON_G", "CON_A") and (runs is None or len(runs) < 2):
        return "no runs for consistency"
    return None


def term_value(batch: SequenceBatch, weights: LossWeights, term: str, runs=None) -> float:
    if term == "G":
        return loss_gaze_nll(batch)
    if term == "ATT":
        return loss_att(batch)
    if term == "AA":
        return loss_aa(batch)
    if term == "S_A":
        return loss_spatial(_require(batch.awareness, "awareness"), batch.images, batch.diffusivity)
    if term == "S_G":
        return loss_spatial(_require(batch.gaze_density, "gaze_density"), batch.images, batch.diffusivity)
    if term == "T":
        return loss_temporal(batch, weights)
    if term == "DEC":
        return loss_decay(batch, weights)
    if term == "CAP":
        return loss_capacity(batch)
    if term in ("CON_G", "CON_A"):
        which = "gaze" if term == "CON_G" else "awareness"
        return sum(loss_consistency(a, b, which) for a, b in zip(runs[:-1], runs[1:]))
    raise KeyError(f"unknown term {term!r}")


def grad(batch: SequenceBatch, weights: LossWeights, term: str, other: SequenceBatch | None = None):
    """Analytic gradient of one unweighted term.

    Returns a dict keyed by ``"awareness"`` or ``"gaze_density"``. For the
    consistency terms the gradient is taken with respect to ``batch`` with
    ``other`` held fixed.
    """
    if term == "G":
        return {"gaze_density": grad_gaze_nll(batch)}
    if term == "ATT":
        return {"awareness": grad_att(batch)}
    if term == "AA":
        return {"awareness": grad_aa(batch)}
    if term == "S_A":
        return {"awareness": grad_spatial(_require(batch.awareness, "awareness"), batch.images, batch.diffusivity)}
    if term == "S_G":
        return {"gaze_density": grad_spatial(_require(batch.gaze_density, "gaze_density"), batch.images, batch.diffusivity)}
    if term == "T":
        return {"awareness": grad_temporal(batch, weights)}
    if term == "DEC":
        return {"awareness": grad_decay(batch, weights)}
    if term == "CAP":
        return {"awareness": grad_capacity(batch)}
    if term in ("CON_G", "CON_A"):
        if other is None:
            raise ValueError("consistency gradient needs the other run")
        which = "gaze" if term == "CON_G" else "awareness"
        key = "gaze_density" if which == "gaze" else "awareness"
        return {key: grad_consistency(batch, other, which)}
    raise KeyError(f"unknown term {term!r}")


@dataclass(frozen=True)
class TermValue:
    term: str
    value: float
    weighted: float
    skipped: str | None = None


@dataclass(frozen=True)
class LossReport:
    total: float
    terms: list[TermValue]

    def __getitem__(self, term: str) -> TermValue:
        for tv in self.terms:
            if tv.term == term:
                return tv
        raise KeyError(term)

    def csv_rows(self) -> list[tuple[str, float, float]]:
        return [(tv.term, tv.value, tv.weighted) for tv in self.terms if tv.skipped is None]


def total_loss(batch: SequenceBatch, weights: LossWeights, runs=None) -> LossReport:
    """Weighted sum of every evaluable term, with a per-term breakdown.

    ``runs`` is an optional list of overlapping passes; the consistency terms
    sum over consecutive pairs.
    """
    rows = []
    total = 0.0
    for term in TERMS:
        why = _precondition(batch, term, runs)
        if why is not None:
            rows.append(TermValue(term, 0.0, 0.0, why))
            continue
        v = term_value(batch, weights, term, runs)
        wv = weights.alpha(term) * v
        total += wv
        rows.append(TermValue(term, v, wv))
    return LossReport(total, rows)


AWARENESS_TERMS = ("ATT", "AA", "S_A", "T", "DEC", "CAP")


def awareness_objective(batch: SequenceBatch, weights: LossWeights) -> float:
    """Weighted sum of the awareness terms with nonzero weight (used by the fitters)."""
    total = 0.0
    for term in AWARENESS_TERMS:
        a = weights.alpha(term)
        if a and _precondition(batch, term, None) is None:
            total += a * term_value(batch, weights, term)
    return total


def awareness_objective_grad(batch: SequenceBatch, weights: LossWeights) -> np.ndarray:
    g = np.zeros_like(_require(batch.awareness, "awareness"))
    for term in AWARENESS_TERMS:
        a = weights.alpha(term)
        if a and _precondition(batch, term, None) is None:
            g += a * grad(batch, weights, term)["awareness"]
    return g
