"""Synthetic moving-rectangle scenes with exact flow, scanpaths, awareness and annotations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import binary_erosion

from gaze_aware.awareness import recursive_run
from gaze_aware.config import EstimatorConfig, LossWeights, SynthConfig
from gaze_aware.grid import FlowField, GazeFrame
from gaze_aware.objective import AnnotationRecord

log = logging.getLogger(__name__)

BACKGROUND = -1
NEAR_MARGIN = 20  # px around the focus object where background glances land


@dataclass(frozen=True)
class ObjectSpec:
    """Axis-aligned rectangle; ``x, y`` is the top-left corner in pixels at frame 0."""

    x: float
    y: float
    w: int
    h: int
    vx: float = 0.0
    vy: float = 0.0
    intensity: float = 1.0

    def corner(self, t: int) -> tuple[int, int]:
        return int(round(self.x + self.vx * t)), int(round(self.y + self.vy * t))

    def center(self, t: int) -> tuple[float, float]:
        x0, y0 = self.corner(t)
        return x0 + (self.w - 1) / 2, y0 + (self.h - 1) / 2


@dataclass(frozen=True)
class SceneSpec:
    width: int = 240
    height: int = 135
    frames: int = 20
    objects: tuple[ObjectSpec, ...] = ()
    background: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects))
        if self.frames < 2:
            raise ValueError("a scene needs at least 2 frames")
        for i, o in enumerate(self.objects):
            x0, y0 = o.corner(0)
            if x0 < 0 or y0 < 0 or x0 + o.w > self.width or y0 + o.h > self.height:
                raise ValueError(f"object {i} is not inside the canvas at frame 0")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "frames": self.frames,
            "background": self.background,
            "seed": self.seed,
            "objects": [vars(o).copy() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["objects"] = tuple(ObjectSpec(**o) for o in d.get("objects", ()))
        return cls(**d)


@dataclass
class GroundTruth:
    spec: SceneSpec
    frames: np.ndarray
    labels: np.ndarray
    flows: list[FlowField]
    clipped: list[int] = field(default_factory=list)
    scanpath: list[GazeFrame] = field(default_factory=list)
    awareness: np.ndarray | None = None
    annotations: list[AnnotationRecord] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]

    @property
    def masks(self) -> np.ndarray:
        """Union of all objects per frame, ``(T, H, W)`` bool."""
        return self.labels != BACKGROUND

    def object_mask(self, k: int, t: int) -> np.ndarray:
        return self.labels[t] == k


def random_scene_spec(seed: int, width: int = 240, height: int = 135, frames: int = 20, n_objects: int = 3) -> SceneSpec:
    """Rectangles with integer velocities, one per vertical strip of the canvas.

    Each object stays inside its own strip for the whole sequence, so objects
    never overlap. The middle object is a large high-contrast lead; the others are
    smaller, dimmer, and kept to the far side of their strips.
    """
    rng = np.random.default_rng(seed)
    objects = []
    span = frames - 1
    strip = width // max(n_objects, 1)
    lead = n_objects // 2
    for k in range(n_objects):
        left, span_x = k * strip, strip
        if k != lead:
            # keep side objects in the part of their strip away from the lead
            span_x = int(round(0.6 * strip))
            if k > lead:
                left += strip - span_x
        if k == lead:
            w = int(rng.integers(max(4, strip * 2 // 5), max(5, strip // 2) + 1))
            h = int(rng.integers(max(4, height // 7), max(5, height // 5) + 1))
        else:
            w = int(rng.integers(max(4, strip // 4), max(5, strip // 3) + 1))
            h = int(rng.integers(max(4, height // 10), max(5, height // 7) + 1))
        vmax_x = max(0, min(3, (span_x - w) // max(span, 1)))
        vmax_y = max(0, min(2, (height - h) // max(span, 1) // 2))
        vx = int(rng.integers(-vmax_x, vmax_x + 1))
        vy = int(rng.integers(-vmax_y, vmax_y + 1))
        x_lo, x_hi = left + max(0, -vx * span), left + span_x - w - max(0, vx * span)
        y_lo, y_hi = max(0, -vy * span), height - h - max(0, vy * span)
        x = int(rng.integers(x_lo, max(x_lo, x_hi) + 1))
        y = int(rng.integers(y_lo, max(y_lo, y_hi) + 1))
        intensity = float(rng.uniform(0.9, 1.0) if k == lead else rng.uniform(0.45, 0.6))
        objects.append(ObjectSpec(x, y, w, h, vx, vy, intensity))
    return SceneSpec(width, height, frames, tuple(objects), 0.2, seed)


def gen_scene(spec: SceneSpec) -> GroundTruth:
    """Rasterize the rectangles; later objects occlude earlier ones and own the flow there."""
    t_n, h, w = spec.frames, spec.height, spec.width
    frames = np.full((t_n, h, w), float(spec.background))
    labels = np.full((t_n, h, w), BACKGROUND, dtype=np.int32)
    clipped = []
    for k, o in enumerate(spec.objects):
        for t in range(t_n):
            x0, y0 = o.corner(t)
            xa, xb = max(0, x0), min(w, x0 + o.w)
            ya, yb = max(0, y0), min(h, y0 + o.h)
            if (xa, xb, ya, yb) != (x0, x0 + o.w, y0, y0 + o.h) and k not in clipped:
                clipped.append(k)
                log.warning("object %d leaves the canvas at frame %d; clipped", k, t)
            if xa < xb and ya < yb:
                frames[t, ya:yb, xa:xb] = o.intensity
                labels[t, ya:yb, xa:xb] = k
    vel = np.array([[o.vx, o.vy] for o in spec.objects] + [[0.0, 0.0]])
    flows = []
    for t in range(t_n - 1):
        lab = labels[t]
        flows.append(FlowField(vel[lab, 0], vel[lab, 1]))  # index -1 hits the zero row
    return GroundTruth(spec, frames, labels, flows, clipped)


def gen_scanpath(
    gt: GroundTruth,
    fixation_range: tuple[int, int] = (3, 6),
    seed: int = 0,
    p_object: float = 0.85,
    blink_rate: float = 0.05,
) -> list[GazeFrame]:
    """Fixations that either track an object's center or rest on a background point
    close to the most salient object.

    Objects are chosen with probability proportional to their contrast times
    area. All three slots carry the fixated point; blink frames have every slot
    invalid.
    """
    if not gt.spec.objects:
        raise ValueError("scanpath generation needs at least one object")
    rng = np.random.default_rng(seed)
    salience = np.array([abs(o.intensity - gt.spec.background) * o.w * o.h for o in gt.spec.objects])
    salience = salience / salience.sum() if salience.sum() > 0 else np.full(len(salience), 1 / len(salience))
    h, w = gt.shape
    scale = np.array([w - 1, h - 1], dtype=float)
    lo, hi = fixation_range
    focus = int(np.argmax(salience))
    path = []
    t = 0
    while t < gt.spec.frames:
        dur = int(rng.integers(lo, hi + 1))
        on_object = rng.random() < p_object
        k = int(rng.choice(len(salience), p=salience))
        bg = _random_pixel(rng, (gt.labels[t] == BACKGROUND) & _near(gt.spec.objects[focus], t, (h, w), NEAR_MARGIN))
        for s in range(t, min(t + dur, gt.spec.frames)):
            if on_object or bg is None:
                p = np.array(gt.spec.objects[k].center(s)) / scale
            else:
                p = np.array(bg, dtype=float) / scale
            p = np.clip(p, 0.0, 1.0)
            blink = rng.random() < blink_rate
            path.append(GazeFrame(s, np.tile(p, (3, 1)), np.full(3, not blink)))
        t += dur
    return path


def _near(o: ObjectSpec, t: int, shape, margin: int) -> np.ndarray:
    h, w = shape
    x0, y0 = o.corner(t)
    m = np.zeros(shape, dtype=bool)
    m[max(0, y0 - margin) : min(h, y0 + o.h + margin), max(0, x0 - margin) : min(w, x0 + o.w + margin)] = True
    return m


def _random_pixel(rng, mask):
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    i = int(rng.integers(len(xs)))
    return xs[i], ys[i]


def gen_awareness_gt(gt: GroundTruth, config: EstimatorConfig, weights: LossWeights) -> np.ndarray:
    """Oracle awareness: the recursive dynamics driven by the true scanpath and exact flow."""
    if not gt.scanpath:
        raise ValueError("ground truth has no scanpath")
    return recursive_run(gt.scanpath, gt.flows, config, weights, shape=gt.shape)


def quantize_label(value: float) -> float:
    """Five-level annotation scale mapped back to [0, 1]."""
    return float(np.round(np.clip(value, 0.0, 1.0) * 4) / 4)


def gen_annotations(gt: GroundTruth, n: int, mix=(0.4, 0.2, 0.4), seed: int = 0) -> list[AnnotationRecord]:
    """Sample annotated locations on objects, object edges and background."""
    if n < 1:
        raise ValueError("need at least one annotation")
    if gt.awareness is None:
        raise ValueError("ground truth has no awareness")
    rng = np.random.default_rng(seed)
    p = np.asarray(mix, dtype=float)
    p = p / p.sum()
    h, w = gt.shape
    out = []
    for _ in range(n):
        t = int(rng.integers(gt.spec.frames))
        kind = int(rng.choice(3, p=p))
        obj = gt.labels[t] != BACKGROUND
        if kind == 0:
            region = obj
        elif kind == 1:
            region = obj & ~binary_erosion(obj)
        else:
            region = ~obj
        px = _random_pixel(rng, region)
        if px is None:
            px = _random_pixel(rng, np.ones((h, w), dtype=bool))
        x, y = px
        out.append(AnnotationRecord(t, x / (w - 1), y / (h - 1), quantize_label(gt.awareness[t, y, x])))
    return out


def make_ground_truth(
    seed: int,
    synth: SynthConfig | None = None,
    estimator: EstimatorConfig | None = None,
    weights: LossWeights | None = None,
    spec: SceneSpec | None = None,
) -> GroundTruth:
    """Scene, scanpath, oracle awareness and annotations from one seed."""
    synth = synth or SynthConfig()
    estimator = estimator or EstimatorConfig()
    weights = weights or LossWeights()
    seeds = np.random.SeedSequence(seed).generate_state(3)
    if spec is None:
        spec = random_scene_spec(seed, synth.width, synth.height, synth.frames, synth.n_objects)
    gt = gen_scene(spec)
    gt.scanpath = gen_scanpath(gt, (synth.fixation_min, synth.fixation_max), int(seeds[0]), synth.p_object, synth.blink_rate)
    gt.awareness = gen_awareness_gt(gt, estimator, weights)
    gt.annotations = gen_annotations(gt, synth.n_annotations, synth.annotation_mix, int(seeds[1]))
    return gt


def with_scanpath(gt: GroundTruth, scanpath: list[GazeFrame]) -> GroundTruth:
    return replace(gt, scanpath=scanpath)
