import json

import pytest

from gaze_aware.config import (
    BenchConfig,
    Config,
    ConfigError,
    EstimatorConfig,
    LossWeights,
    MeanShiftConfig,
    NoiseModel,
    SynthConfig,
    load_config,
)


def test_defaults_load_from_none():
    assert load_config(None) == Config()


def test_published_coefficients():
    w = LossWeights()
    assert (w.alpha_G, w.alpha_ATT, w.alpha_AA, w.alpha_T, w.alpha_DEC) == (1.2, 12.0, 1.0, 600.0, 1.5e6)
    assert w.eps_DEC == 0.2 and w.w_OF == 0.5


def test_partial_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 9, "noise": {"sigma_n": 0.1}, "bench": {"sigma_awareness": [0.05]}}))
    cfg = load_config(p)
    assert cfg.seed == 9 and cfg.noise.sigma_n == 0.1 and cfg.noise.w == NoiseModel().w
    assert cfg.bench.sigma_awareness == (0.05,)


@pytest.mark.parametrize(
    "data, key",
    [
        ({"nope": 1}, "nope"),
        ({"weights": {"alpha_X": 1}}, "weights.alpha_X"),
        ({"weights": {"alpha_ATT": -1}}, "weights.alpha_ATT"),
        ({"weights": {"w_OF": 0}}, "weights.w_OF"),
        ({"estimator": {"max_iter": 2.5}}, "estimator.max_iter"),
        ({"synth": {"width": 8}}, "synth.width"),
        ({"meanshift": {"sigma_n": 0}}, "meanshift.sigma_n"),
        ({"bench": {"fit_fraction": 1.0}}, "bench.fit_fraction"),
        ({"seed": "x"}, "seed"),
        ({"noise": 3}, "noise"),
    ],
)
def test_errors_name_the_key(data, key):
    with pytest.raises(ConfigError) as err:
        Config.from_dict(data)
    assert err.value.key == key


def test_bad_json_reports_line(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n "seed": \n}')
    with pytest.raises(ConfigError, match="line"):
        load_config(p)


def test_digest_tracks_content():
    a, b = Config(), Config(seed=1)
    assert a.digest() == Config().digest() != b.digest()


def test_nested_validation():
    with pytest.raises(ConfigError):
        EstimatorConfig(capacity_budget=2.0)
    with pytest.raises(ConfigError):
        NoiseModel(center=(0.5,))
    with pytest.raises(ConfigError):
        SynthConfig(fixation_min=4, fixation_max=3)
    with pytest.raises(ConfigError):
        BenchConfig(fit_iters=0)
    assert MeanShiftConfig(sigma_n=0.1).bandwidth(3, 4) == pytest.approx(0.5)
