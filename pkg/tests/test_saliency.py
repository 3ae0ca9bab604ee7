import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaze_aware.grid import GazeFrame, center_prior, gaussian_splat, is_density, normalize
from gaze_aware.io import write_density_pgm
from gaze_aware.saliency import (
    SaliencyProvider,
    compute_saliency,
    cross_correlation,
    gaze_conditioned_density,
    information_gain,
    kl_divergence,
)


def argmax_xy(m):
    y, x = np.unravel_index(np.argmax(m), m.shape)
    return x, y


def test_constant_frame_gives_center_prior():
    s = compute_saliency(np.full((27, 48), 0.4))
    assert np.array_equal(s, center_prior(48, 27))
    assert argmax_xy(s) in {(23, 13), (24, 13)}


def test_single_blob_argmax_near_blob():
    w, h = 240, 135
    frame = np.zeros((h, w))
    cx, cy = round(0.7 * (w - 1)), round(0.3 * (h - 1))
    frame[cy - 2 : cy + 3, cx - 2 : cx + 3] = 1.0
    s = compute_saliency(frame, prior_weight=0.2)
    x, y = argmax_xy(s)
    assert np.hypot(x - cx, y - cy) <= 2
    assert is_density(s)


def test_saliency_rejects_tiny_frames():
    with pytest.raises(ValueError):
        compute_saliency(np.zeros((8, 40)))


def test_provider_modes(tmp_path):
    frame = np.random.default_rng(0).random((20, 30))
    computed = SaliencyProvider()
    assert np.allclose(computed(3, frame), compute_saliency(frame))
    with pytest.raises(ValueError):
        computed(3)
    with pytest.raises(ValueError):
        SaliencyProvider(mode="file-backed")
    with pytest.raises(ValueError):
        SaliencyProvider(mode="learned")
    dens = compute_saliency(frame)
    write_density_pgm(dens, tmp_path / "sal_000003.pgm")
    loaded = SaliencyProvider(mode="file-backed", directory=str(tmp_path))(3)
    assert is_density(loaded)
    assert np.allclose(loaded, dens, atol=1e-4 * dens.max())


# --- gaze-conditioned density ---------------------------------------------------


def test_lambda_zero_is_saliency():
    sal = compute_saliency(np.random.default_rng(1).random((20, 30)))
    out = gaze_conditioned_density(sal, GazeFrame.at(0, (0.2, 0.2)), 0.0, 0.05)
    assert np.array_equal(out, sal)


def test_no_valid_gaze_returns_saliency():
    sal = compute_saliency(np.random.default_rng(1).random((20, 30)))
    assert np.array_equal(gaze_conditioned_density(sal, GazeFrame.empty(0), 0.5, 0.05), sal)


def test_lambda_one_is_gaze_splat():
    sal = compute_saliency(np.random.default_rng(1).random((20, 30)))
    g = GazeFrame.at(0, (0.3, 0.6))
    assert np.allclose(gaze_conditioned_density(sal, g, 1.0, 0.05), gaussian_splat(g, 0.05, 30, 20))


def test_lambda_out_of_range():
    with pytest.raises(ValueError):
        gaze_conditioned_density(np.ones((4, 4)) / 16, GazeFrame.at(0, (0.5, 0.5)), 1.5, 0.1)


def test_fused_argmax_between_modes():
    w, h = 101, 41
    a, b = (0.3, 0.5), (0.6, 0.5)
    sal = gaussian_splat(GazeFrame.at(0, a), 0.1, w, h)
    fused = gaze_conditioned_density(sal, GazeFrame.at(0, b), 0.5, 0.1)
    x, y = argmax_xy(fused)
    assert y == 20
    assert a[0] * (w - 1) <= x <= b[0] * (w - 1)


@settings(max_examples=25)
@given(st.floats(0, 1), st.floats(0, 1))
def test_fusion_is_affine_in_lambda(l1, l2):
    rng = np.random.default_rng(2)
    sal = normalize(rng.random((12, 16)))
    g = GazeFrame.at(0, (0.4, 0.7))
    f = lambda lam: gaze_conditioned_density(sal, g, lam, 0.1)
    mid = f(0.5 * (l1 + l2))
    assert np.allclose(mid, 0.5 * (f(l1) + f(l2)), atol=1e-15)
    assert is_density(f(l1))


# --- metrics ---------------------------------------------------------------------


def test_kl_identity_and_delta():
    p = normalize(np.random.default_rng(0).random((6, 7)))
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-6)
    delta = np.zeros((4, 4))
    delta[1, 2] = 1.0
    assert kl_divergence(delta, np.full((4, 4), 1 / 16)) == pytest.approx(np.log(16), abs=1e-6)


def test_kl_dimension_mismatch():
    with pytest.raises(ValueError):
        kl_divergence(np.ones((2, 2)) / 4, np.ones((2, 3)) / 6)


def test_kl_nonnegative_random_pairs():
    rng = np.random.default_rng(5)
    for _ in range(100):
        p, q = normalize(rng.random((5, 5))), normalize(rng.random((5, 5)))
        assert kl_divergence(p, q) >= -1e-6


def test_cc_examples():
    rng = np.random.default_rng(0)
    p = rng.random((8, 8))
    assert cross_correlation(p, p) == pytest.approx(1.0, abs=1e-9)
    assert cross_correlation(p, 3.0 - p) == pytest.approx(-1.0, abs=1e-9)
    with pytest.raises(ValueError):
        cross_correlation(p, np.ones((8, 8)))


def test_cc_independent_maps_near_zero():
    rng = np.random.default_rng(11)
    ccs = [cross_correlation(rng.random((32, 32)), rng.random((32, 32))) for _ in range(50)]
    assert abs(np.mean(ccs)) < 0.2


def test_ig_examples():
    base = normalize(np.random.default_rng(3).random((8, 8)))
    fix = [(0, 0.2, 0.3), (1, 0.9, 0.1)]
    assert information_gain(base, fix, base) == pytest.approx(0.0, abs=1e-9)
    doubled = base.copy()
    for _, x, y in fix:
        doubled[round(y * 7), round(x * 7)] *= 2
    assert information_gain(doubled, fix, base) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        information_gain(base, [], base)


def test_ig_matches_direct_summation():
    rng = np.random.default_rng(8)
    pred, base = normalize(rng.random((8, 8))), normalize(rng.random((8, 8)))
    fix = [(0, *rng.random(2)) for _ in range(10)]
    direct = np.mean(
        [np.log2(pred[round(y * 7), round(x * 7)] + 1e-8) - np.log2(base[round(y * 7), round(x * 7)] + 1e-8) for _, x, y in fix]
    )
    assert information_gain(pred, fix, base) == pytest.approx(direct, abs=1e-12)


def test_ig_default_baseline_is_center_prior():
    pred = normalize(np.random.default_rng(4).random((9, 12)))
    fix = [(0, 0.5, 0.5)]
    assert information_gain(pred, fix) == pytest.approx(information_gain(pred, fix, center_prior(12, 9)))
