import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaze_aware.config import MeanShiftConfig, NoiseModel
from gaze_aware.grid import GazeFrame, gaussian_splat
from gaze_aware.refine import (
    Affine2D,
    CorrectionNet,
    FitConfig,
    apply_affine_corruption,
    apply_noise,
    best_affine,
    calibration_error,
    fit_correction,
    meanshift,
    noise_sigma,
)


def path(n=50, seed=0):
    rng = np.random.default_rng(seed)
    return [GazeFrame(t, rng.uniform(0.1, 0.9, (3, 2)), np.ones(3, bool)) for t in range(n)]


# --- noise ---------------------------------------------------------------------------


def test_noise_sigma_floor_and_growth():
    m = NoiseModel(sigma_n=0.05, w=0.2)
    s = noise_sigma(np.array([[0.5, 0.5], [1.0, 0.5]]), m)
    assert np.allclose(s, [[0.05, 0.05], [0.1, 0.05]])


def test_zero_noise_is_identity():
    g = path(5)
    out = apply_noise(g, NoiseModel(sigma_n=0.0, w=0.0))
    assert all(np.array_equal(a.points, b.points) for a, b in zip(g, out))


def test_noise_is_seeded_and_keeps_invalid_slots():
    g = [GazeFrame(0, np.full((3, 2), 0.5), np.array([True, False, True]))]
    a = apply_noise(g, NoiseModel(sigma_n=0.1, seed=3))
    b = apply_noise(g, NoiseModel(sigma_n=0.1, seed=3))
    assert np.array_equal(a[0].points, b[0].points)
    assert np.array_equal(a[0].points[1], [0.5, 0.5])
    assert np.all((a[0].points >= 0) & (a[0].points <= 1))


def test_noise_std_matches_model():
    g = [GazeFrame(t, np.full((3, 2), 0.5), np.ones(3, bool)) for t in range(4000)]
    out = apply_noise(g, NoiseModel(sigma_n=0.04, w=0.1, seed=1), clip=False)
    d = np.concatenate([o.points for o in out]) - 0.5
    assert d.std() == pytest.approx(0.04, rel=0.05)


# --- affine corruption ---------------------------------------------------------------


def test_affine_inverse_roundtrip():
    g = path(10)
    bad, t = apply_affine_corruption(g, 0.2, seed=4)
    back = [t.inverse()(b.points) for b in bad]
    assert all(np.allclose(x, o.points) for x, o in zip(back, g))


def test_singular_affine():
    with pytest.raises(np.linalg.LinAlgError):
        Affine2D(np.zeros((2, 2))).inverse()


def test_identity_net_calibration_error_is_zero_for_identity():
    net = CorrectionNet.from_affine(Affine2D())
    assert calibration_error(net, Affine2D()) == pytest.approx(0.0, abs=1e-20)


@settings(max_examples=25)
@given(st.lists(st.floats(-0.5, 0.5), min_size=6, max_size=6))
def test_best_affine_recovers_affine_maps(p):
    t = Affine2D(np.eye(2) + np.reshape(p[:4], (2, 2)) * 0.5, p[4:])
    assert np.allclose(best_affine(t).elements(), t.elements(), atol=1e-10)


def test_net_backward_matches_finite_difference():
    rng = np.random.default_rng(0)
    net = CorrectionNet.near_identity(4, scale=0.3)
    x, dy = rng.random((7, 2)), rng.normal(size=(7, 2))
    grads = net.backward(x, dy)
    for p in net.PARAMS:
        arr = getattr(net, p)
        num = np.zeros_like(arr)
        for i in range(arr.size):
            old = arr.flat[i]
            arr.flat[i] = old + 1e-6
            fp = np.sum(net(x) * dy)
            arr.flat[i] = old - 1e-6
            fm = np.sum(net(x) * dy)
            arr.flat[i] = old
            num.flat[i] = (fp - fm) / 2e-6
        assert np.allclose(grads[p], num, atol=1e-6)


# --- meanshift ---------------------------------------------------------------------


def test_meanshift_finds_single_mode():
    d = gaussian_splat(GazeFrame.at(0, (0.3, 0.6)), 0.05, 101, 61)
    x = meanshift((60.0, 20.0), d, MeanShiftConfig(sigma_n=0.05))
    assert np.hypot(x[0] - 30, x[1] - 36) < 1.0


def test_meanshift_path_and_empty_density():
    d = gaussian_splat(GazeFrame.at(0, (0.5, 0.5)), 0.05, 41, 41)
    x, p = meanshift((5.0, 5.0), d, MeanShiftConfig(sigma_n=0.1), return_path=True)
    assert np.array_equal(p[0], [5.0, 5.0]) and np.array_equal(p[-1], x)
    with pytest.raises(ValueError):
        meanshift((5.0, 5.0), np.zeros((20, 20)), MeanShiftConfig())


# --- recalibration ---------------------------------------------------------------------


def test_fit_needs_enough_samples():
    with pytest.raises(ValueError):
        fit_correction(path(5), mode="supervised", true_gaze=path(5))


def test_fit_unknown_mode():
    g = path(20)
    with pytest.raises(ValueError):
        fit_correction(g, mode="magic")


def test_supervised_fit_undoes_corruption():
    g = path(40, seed=2)
    bad, t = apply_affine_corruption(g, 0.2, seed=9)
    net, rep = fit_correction(bad, mode="supervised", true_gaze=g, config=FitConfig(iters=800))
    assert rep.final_loss < rep.initial_loss
    before = calibration_error(CorrectionNet.from_affine(Affine2D()), t)
    assert calibration_error(net, t) < 0.5 * before


def test_self_supervised_fit_reduces_loss():
    g = [GazeFrame.at(i, (0.5, 0.5)) for i in range(60)]
    bad, _ = apply_affine_corruption(g, 0.0, transform=Affine2D(np.eye(2), [0.1, 0.05]))
    dens = gaussian_splat(GazeFrame.at(0, (0.5, 0.5)), 0.1, 48, 27)
    net, rep = fit_correction(bad, density=lambda f: dens, mode="self-supervised", config=FitConfig(iters=300))
    assert rep.final_loss < rep.initial_loss
    assert np.hypot(*(net(np.array([[0.6, 0.55]]))[0] - 0.5)) < 0.05
