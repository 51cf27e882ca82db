import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nettdsr.metrics import RenderSpec, pearson, render, rmse_d, rmse_v


def test_rmse_d_basics():
    x = np.random.default_rng(0).random((6, 7))
    assert rmse_d(x, x) == 0.0
    assert rmse_d(x + 0.25, x) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(ValueError):
        rmse_d(np.zeros((2, 2)), np.zeros((2, 3)))


def test_rmse_d_matches_direct_formula():
    rng = np.random.default_rng(1)
    a, b = rng.random((9, 9)), rng.random((9, 9))
    direct = np.sqrt(((a - b) ** 2).sum() / a.size)
    assert abs(rmse_d(a, b) - direct) <= 1e-14


def test_render_flat_plane_is_white():
    np.testing.assert_array_equal(render(np.full((5, 5), 0.7)), np.ones((5, 5)))


def test_render_ramp_interior():
    g = 0.3
    z = np.tile(np.arange(10.0) * g, (6, 1))
    img = render(z)
    np.testing.assert_allclose(img[:, 1:-1], 1.0 / np.sqrt(1 + g * g), atol=1e-14)


def test_render_offset_invariance_and_range():
    z = np.random.default_rng(2).random((8, 8))
    # offsets only perturb the differences by rounding
    np.testing.assert_allclose(render(z), render(z + 3.0), atol=1e-12)
    img = render(z * 50, RenderSpec(light=(1.0, 1.0, 0.2)))
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_light_is_normalised():
    spec = RenderSpec(light=(0.0, 3.0, 4.0))
    assert np.linalg.norm(spec.light) == pytest.approx(1.0, abs=1e-12)


def test_rmse_v_ignores_offsets_but_rmse_d_does_not():
    gt = np.random.default_rng(3).random((8, 8))
    assert rmse_v(gt, gt) == 0.0
    assert rmse_v(gt + 0.5, gt) < 1e-12
    assert rmse_d(gt + 0.5, gt) == pytest.approx(0.5)


def test_rmse_v_prefers_smooth_errors_over_noise():
    rng = np.random.default_rng(4)
    flat = np.full((32, 32), 0.5)
    noise = rng.normal(size=flat.shape)
    ii, jj = np.mgrid[0:32, 0:32]
    warp = np.sin(2 * np.pi * ii / 32) * np.cos(2 * np.pi * jj / 32)
    target = 0.05
    noisy = flat + noise * target / np.sqrt(np.mean(noise ** 2))
    smooth = flat + warp * target / np.sqrt(np.mean(warp ** 2))
    assert rmse_d(noisy, flat) == pytest.approx(rmse_d(smooth, flat))
    assert rmse_v(noisy, flat) > rmse_v(smooth, flat)


@settings(max_examples=30)
@given(arrays(np.float64, (6, 6), elements=st.floats(0, 1)), arrays(np.float64, (6, 6), elements=st.floats(0, 1)))
def test_metrics_symmetric(a, b):
    assert rmse_d(a, b) == rmse_d(b, a)
    assert rmse_v(a, b) == rmse_v(b, a)


def test_pearson_edge_cases():
    f = np.array([3.0, 1.0, 2.0, 5.0])
    assert pearson(f, f) == pytest.approx(1.0)
    assert pearson(f, 7.0 - f) == pytest.approx(-1.0)
    assert pearson(f, np.full(4, 2.0)) is None
