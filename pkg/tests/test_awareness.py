import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaze_aware.awareness import (
    deposit,
    eval_awareness,
    fg_estimate,
    recursive_run,
    recursive_step,
    variational_fit,
)
from gaze_aware.config import EstimatorConfig, LossWeights
from gaze_aware.grid import FlowField, GazeFrame
from gaze_aware.objective import AnnotationRecord, SequenceBatch, awareness_objective

EST = EstimatorConfig()
W = LossWeights()


def no_gaze(n):
    return [GazeFrame.empty(t) for t in range(n)]


def test_decay_law_without_gaze():
    rng = np.random.default_rng(0)
    m0 = rng.uniform(0, 0.2, (30, 40))
    # a generous budget so the capacity cap never binds
    est = EstimatorConfig(capacity_budget=1.0)
    flows = [FlowField.zeros(30, 40)] * 9
    out = recursive_run(no_gaze(10), flows, est, W, initial=m0)
    masses = np.concatenate([[m0.sum()], out.sum(axis=(1, 2))])
    assert np.allclose(masses[1:] / masses[:-1], 0.8, atol=1e-6)


def test_capacity_budget_caps_mass():
    h, w = 20, 30
    est = EstimatorConfig(capacity_budget=0.01)
    gaze = [GazeFrame.at(t, (0.2, 0.2), (0.5, 0.5), (0.8, 0.8)) for t in range(5)]
    out = recursive_run(gaze, [FlowField.zeros(h, w)] * 4, est, W, shape=(h, w))
    assert np.all(out.sum(axis=(1, 2)) <= 0.01 * h * w + 1e-9)
    assert out.min() >= 0 and out.max() <= 1


def test_deposit_peaks_at_gaze():
    d = deposit(GazeFrame.at(0, (0.5, 0.5)), EST.deposit_sigma, (41, 61))
    assert d[20, 30] == pytest.approx(1.0)
    assert np.unravel_index(np.argmax(d), d.shape) == (20, 30)


def test_step_clamps_to_unit_interval():
    prev = np.ones((11, 11))
    nxt = recursive_step(prev, GazeFrame.at(0, (0.5, 0.5)), None, EstimatorConfig(capacity_budget=1.0), W)
    assert nxt.max() == 1.0


def test_translation_equivariance():
    h, w, n = 40, 60, 6
    m0 = np.zeros((h, w))
    m0[15:25, 10:20] = 0.5
    flows = [FlowField.constant(h, w, 2.0, 1.0)] * (n - 1)
    est = EstimatorConfig(capacity_budget=1.0)
    out = recursive_run(no_gaze(n), flows, est, W, initial=m0)
    for t in range(n):
        ref = np.zeros((h, w))
        ref[15 + t : 25 + t, 10 + 2 * t : 20 + 2 * t] = 0.5 * 0.8 ** (t + 1)
        assert np.max(np.abs(out[t] - ref)[3:-3, 3:-3]) < 1e-3


def test_length_checks():
    with pytest.raises(ValueError):
        recursive_run(no_gaze(3), [FlowField.zeros(4, 4)], EST, W)
    with pytest.raises(ValueError):
        fg_estimate(no_gaze(1), [], EST)


def test_fg_follows_gaze_and_fades():
    h, w = 31, 41
    gaze = [GazeFrame.at(0, (0.5, 0.5))] + no_gaze(3)[1:]
    out = fg_estimate(gaze, [FlowField.zeros(h, w)] * 2, EST, shape=(h, w))
    peaks = out.max(axis=(1, 2))
    assert peaks[0] == pytest.approx(1.0)
    assert np.allclose(peaks[1:] / peaks[:-1], EST.fg_amplitude_decay)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**20))
def test_recursive_bounds(seed):
    rng = np.random.default_rng(seed)
    h, w, n = 12, 16, 5
    gaze = [GazeFrame(t, rng.random((3, 2)), rng.random(3) < 0.6) for t in range(n)]
    flows = [FlowField(*rng.normal(0, 1.5, (2, h, w))) for _ in range(n - 1)]
    out = recursive_run(gaze, flows, EST, W, shape=(h, w))
    assert out.min() >= 0 and out.max() <= 1
    assert np.all(out.sum(axis=(1, 2)) <= EST.capacity_budget * h * w + 1e-9)


def small_batch(seed=0):
    rng = np.random.default_rng(seed)
    h, w, n = 12, 16, 4
    gaze = [GazeFrame.at(t, tuple(rng.uniform(0.2, 0.8, 2))) for t in range(n)]
    ann = [AnnotationRecord(int(rng.integers(n)), *rng.random(2), float(rng.integers(5)) / 4) for _ in range(30)]
    return SequenceBatch(rng.random((n, h, w)), gaze, [FlowField.zeros(h, w)] * (n - 1), annotations=ann)


def test_variational_fit_descends_and_stays_in_box():
    b = small_batch()
    r = variational_fit(b, W, EstimatorConfig(max_iter=50))
    assert r.loss <= r.initial_loss
    assert all(a >= b_ for a, b_ in zip(r.history, r.history[1:]))
    assert r.awareness.min() >= 0 and r.awareness.max() <= 1
    assert r.loss == pytest.approx(awareness_objective(b.with_maps(awareness=r.awareness), W))


def test_variational_fit_fits_annotations():
    b = small_batch(1)
    wts = LossWeights().only("ATT")
    r = variational_fit(b, wts, EstimatorConfig(max_iter=300), init=np.full((4, 12, 16), 0.5))
    assert eval_awareness(r.awareness, b.annotations) < 0.2 * eval_awareness(np.full((4, 12, 16), 0.5), b.annotations)


def test_eval_awareness():
    est = np.full((2, 5, 5), 0.5)
    ann = [AnnotationRecord(0, 0.5, 0.5, 1.0), AnnotationRecord(1, 0.0, 1.0, 0.0)]
    assert eval_awareness(est, ann) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        eval_awareness(est, [AnnotationRecord(9, 0.5, 0.5, 1.0)])
