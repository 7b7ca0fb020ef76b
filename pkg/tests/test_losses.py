import numpy as np
import pytest

from slicesplat.losses import DSSIM_WEIGHT, photometric_loss
from slicesplat.metrics import ssim


def test_default_weight():
    assert DSSIM_WEIGHT == 0.2


def test_loss_value_composition():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(32, 32))
    y = rng.uniform(size=(32, 32))
    loss, grad, l1, dssim = photometric_loss(x, y)
    assert l1 == pytest.approx(np.mean(np.abs(x - y)), abs=1e-15)
    assert dssim == pytest.approx((1.0 - ssim(x, y)) / 2.0, abs=1e-12)
    assert loss == pytest.approx(0.8 * l1 + 0.2 * dssim, abs=1e-12)
    assert grad.shape == x.shape


def test_identical_images_zero_loss():
    x = np.random.default_rng(1).uniform(size=(16, 16))
    loss, grad, l1, dssim = photometric_loss(x, x.copy())
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert l1 == 0.0
    assert dssim == pytest.approx(0.0, abs=1e-12)


def test_pure_l1_mode():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(16, 16))
    y = rng.uniform(size=(16, 16))
    loss, grad, l1, dssim = photometric_loss(x, y, dssim_weight=0.0)
    assert loss == l1
    assert dssim == 0.0
    want = np.sign(x - y) / x.size
    assert np.allclose(grad, want, atol=1e-15)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.uniform(0.2, 0.8, size=(32, 32))
    y = np.clip(x + rng.normal(0, 0.1, size=(32, 32)), 0, 1)
    _, grad, _, _ = photometric_loss(x, y)
    h = 1e-6
    probe = rng.choice(x.size, size=40, replace=False)
    for flat in probe:
        idx = np.unravel_index(flat, x.shape)
        orig = x[idx]
        x[idx] = orig + h
        hi, _, _, _ = photometric_loss(x, y)
        x[idx] = orig - h
        lo, _, _, _ = photometric_loss(x, y)
        x[idx] = orig
        numeric = (hi - lo) / (2 * h)
        assert abs(grad[idx] - numeric) <= max(1e-3 * abs(numeric), 1e-6)


def test_dssim_weight_interpolates():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(24, 24))
    y = rng.uniform(size=(24, 24))
    l_full, _, l1, dssim = photometric_loss(x, y, dssim_weight=1.0)
    assert l_full == pytest.approx(dssim, abs=1e-12)
    l_half, _, _, _ = photometric_loss(x, y, dssim_weight=0.5)
    assert l_half == pytest.approx(0.5 * l1 + 0.5 * dssim, abs=1e-12)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        photometric_loss(np.zeros((8, 8)), np.zeros((8, 9)))
