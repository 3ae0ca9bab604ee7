"""Dataclass configuration objects and strict JSON loading."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

TERMS = ("G", "ATT", "AA", "S_A", "S_G", "T", "DEC", "CAP", "CON_G", "CON_A")


class ConfigError(ValueError):
    """Raised when a configuration cannot be parsed; ``key`` names the culprit."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class LossWeights:
    """Objective coefficients. Defaults are the published training coefficients."""

    alpha_G: float = 1.2
    alpha_ATT: float = 12.0
    alpha_AA: float = 1.0
    alpha_S_A: float = 100.0
    alpha_S_G: float = 5e10
    alpha_T: float = 600.0
    alpha_DEC: float = 1.5e6
    alpha_CAP: float = 0.01
    alpha_CON_G: float = 1e7
    alpha_CON_A: float = 10.0
    w_OF: float = 0.5
    eps_DEC: float = 0.2
    c1: float = 0.1
    c2: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ConfigError(f.name, "must be finite")
            if f.name.startswith("alpha_") and v < 0:
                raise ConfigError(f.name, "must be >= 0")
        if not 0 < self.w_OF <= 1:
            raise ConfigError("w_OF", "must lie in (0, 1]")
        if not 0 <= self.eps_DEC < 1:
            raise ConfigError("eps_DEC", "must lie in [0, 1)")
        if self.c1 < 0:
            raise ConfigError("c1", "must be >= 0")
        if self.c2 < 0:
            raise ConfigError("c2", "must be >= 0")

    def alpha(self, term: str) -> float:
        if term not in TERMS:
            raise KeyError(f"unknown term {term!r}")
        return getattr(self, f"alpha_{term}")

    def only(self, term: str) -> "LossWeights":
        """Copy with every alpha zeroed except ``term``'s."""
        zeros = {f"alpha_{t}": 0.0 for t in TERMS if t != term}
        self.alpha(term)
        return replace(self, **zeros)

    def without(self, *terms: str) -> "LossWeights":
        for t in terms:
            self.alpha(t)
        return replace(self, **{f"alpha_{t}": 0.0 for t in terms})


@dataclass(frozen=True)
class EstimatorConfig:
    # normalized units; gaze-uncertainty sigma of the side-channel noise
    deposit_sigma: float = 0.0347
    fg_sigma0: float = 0.0347
    fg_sigma_growth: float = 0.01
    fg_amplitude_decay: float = 0.8
    capacity_budget: float = 0.05
    step_size: float = 1e-2
    max_iter: int = 500
    tol: float = 1e-7

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f.name, "must be positive")
        if self.capacity_budget > 1:
            raise ConfigError("capacity_budget", "must lie in (0, 1]")


@dataclass(frozen=True)
class NoiseModel:
    sigma_n: float = 0.03
    w: float = 0.1
    center: tuple[float, float] = (0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        if self.sigma_n < 0:
            raise ConfigError("sigma_n", "must be >= 0")
        if self.w < 0:
            raise ConfigError("w", "must be >= 0")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 2:
            raise ConfigError("center", "must have two coordinates")


@dataclass(frozen=True)
class MeanShiftConfig:
    """Gaussian-kernel meanshift; bandwidth is ``sigma_n * sqrt(H**2 + W**2)`` pixels."""

    sigma_n: float = 0.03
    max_iter: int = 100
    eps: float = 0.01

    def __post_init__(self):
        if self.sigma_n <= 0:
            raise ConfigError("sigma_n", "bandwidth must be positive")

    def bandwidth(self, width: int, height: int) -> float:
        return self.sigma_n * math.sqrt(height**2 + width**2)


@dataclass(frozen=True)
class SynthConfig:
    width: int = 240
    height: int = 135
    frames: int = 20
    n_objects: int = 3
    blink_rate: float = 0.05
    p_object: float = 0.85
    fixation_min: int = 3
    fixation_max: int = 6
    n_annotations: int = 1000
    annotation_mix: tuple[float, float, float] = (0.4, 0.2, 0.4)

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ConfigError("width", "scene must be at least 16x16")
        if self.frames < 2:
            raise ConfigError("frames", "need at least 2 frames")
        if not 1 <= self.fixation_min <= self.fixation_max:
            raise ConfigError("fixation_min", "need 1 <= fixation_min <= fixation_max")
        object.__setattr__(self, "annotation_mix", tuple(float(m) for m in self.annotation_mix))


@dataclass(frozen=True)
class BenchConfig:
    scenes: int = 5
    sigma_denoise: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20)
    sigma_awareness: tuple[float, ...] = (0.01, 0.05, 0.1, 0.15)
    sigma_recalibrate: tuple[float, ...] = (0.1, 0.2, 0.3)
    recalibrate_runs: int = 8
    ablate_sigma: float = 0.1
    fusion_lambda: float = 0.5
    fit_fraction: float = 0.5
    fit_iters: int = 150

    def __post_init__(self):
        for name in ("sigma_denoise", "sigma_awareness", "sigma_recalibrate"):
            object.__setattr__(self, name, tuple(float(s) for s in getattr(self, name)))
        if not 0 < self.fit_fraction < 1:
            raise ConfigError("fit_fraction", "must lie in (0, 1)")
        if self.fit_iters < 1:
            raise ConfigError("fit_iters", "must be >= 1")


def _default_variational() -> LossWeights:
    # per-sequence fit: no smoothing or decay terms, a one-sided temporal term
    return LossWeights(
        alpha_ATT=12.0,
        alpha_AA=1.0,
        alpha_T=1.0,
        alpha_S_A=0.0,
        alpha_DEC=0.0,
        alpha_CAP=0.0,
        w_OF=0.8,
        c1=0.0,
    )


@dataclass(frozen=True)
class Config:
    weights: LossWeights = field(default_factory=LossWeights)
    variational: LossWeights = field(default_factory=_default_variational)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    meanshift: MeanShiftConfig = field(default_factory=MeanShiftConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    paths: dict[str, str] = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Config":
        return _build(cls, data, prefix="")


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected an object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = prefix + key
        if key not in known:
            raise ConfigError(path, "unknown key")
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, path + ".")
        elif isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(path, "expected an object")
            kwargs[key] = {str(k): str(v) for k, v in value.items()}
        elif isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(path, "expected a list")
            kwargs[key] = tuple(value)
        elif isinstance(default, bool) or not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(path, f"expected a number, got {value!r}")
        else:
            kwargs[key] = type(default)(value) if isinstance(default, int) and float(value).is_integer() else value
            if isinstance(default, int) and not float(value).is_integer():
                raise ConfigError(path, "expected an integer")
    try:
        return cls(**kwargs)
    except ConfigError as err:
        raise ConfigError(prefix + err.key, str(err).split(": ", 1)[-1]) from None


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError("<json>", f"line {err.lineno}: {err.msg}") from None
    return Config.from_dict(data)
