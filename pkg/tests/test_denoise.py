"""
Tests for the denoising stage
"""

import numpy as np
import pytest

from src.data_models import EventActivity, RgbImage
from src.denoise import METHODS, denoise, event_weight_map
from src.errors import ConfigError, ShapeError


@pytest.fixture
def noisy_flat(rng):
    """Flat 0.5 field with 2% Gaussian noise"""
    return RgbImage(np.clip(0.5 + rng.normal(0.0, 0.02, size=(48, 48, 3)), 0.0, 1.0))


class TestDenoise:
    """Test bilateral and non-local-means filtering"""

    @pytest.mark.parametrize("method", METHODS)
    def test_sigma_zero_is_identity(self, method, noisy_flat):
        out = denoise(noisy_flat, method, sigma=0.0)
        assert np.array_equal(out.data, noisy_flat.data)

    @pytest.mark.parametrize("method", ["bilateral", "nlm"])
    def test_constant_image_unchanged(self, method):
        img = RgbImage(np.full((16, 16, 3), 0.3))
        assert np.array_equal(denoise(img, method, 0.2).data, img.data)

    @pytest.mark.parametrize("method", ["bilateral", "nlm"])
    def test_unit_weight_is_identity(self, method, noisy_flat):
        """A weight of one keeps every input pixel"""
        out = denoise(noisy_flat, method, 0.196, weight=np.ones((48, 48)))
        assert np.allclose(out.data, noisy_flat.data, atol=1e-12)

    @pytest.mark.parametrize("method", ["bilateral", "nlm"])
    def test_reduces_variance_keeps_mean(self, method, noisy_flat):
        out = denoise(noisy_flat, method, 0.196)
        assert out.data.var() <= noisy_flat.data.var()
        assert abs(out.data.mean() - noisy_flat.data.mean()) < 1e-3

    def test_unknown_method(self, noisy_flat):
        with pytest.raises(ConfigError):
            denoise(noisy_flat, "bm3d", 0.1)

    def test_negative_sigma(self, noisy_flat):
        with pytest.raises(ConfigError):
            denoise(noisy_flat, "bilateral", -0.1)

    def test_weight_shape_checked(self, noisy_flat):
        with pytest.raises(ShapeError):
            denoise(noisy_flat, "bilateral", 0.1, weight=np.ones((4, 4)))

    def test_partial_weight_blends(self, noisy_flat):
        full = denoise(noisy_flat, "bilateral", 0.196)
        half = denoise(noisy_flat, "bilateral", 0.196, weight=np.full((48, 48), 0.5))
        assert np.allclose(half.data, 0.5 * noisy_flat.data + 0.5 * full.data)


class TestEventWeightMap:
    """Test activity-derived detail weights"""

    def test_zero_activity_gives_zero_weight(self):
        activity = EventActivity(np.zeros((2, 3)), (0.0, 1.0))
        assert not event_weight_map(activity, 0.5, (4, 6)).any()

    def test_dense_activity_approaches_one(self):
        activity = EventActivity(np.array([[0.0, 1.0], [4.0, 100.0]]), (0.0, 1.0))
        weight = event_weight_map(activity, 0.5, (4, 4))
        assert weight[0, 2] == pytest.approx(1 - np.exp(-0.5))
        assert weight[2, 0] == pytest.approx(1 - np.exp(-2.0))
        assert weight[3, 3] == pytest.approx(1.0)
        assert weight.shape == (4, 4)

    def test_negative_decay(self):
        with pytest.raises(ConfigError):
            event_weight_map(EventActivity(np.zeros((1, 1)), (0.0, 1.0)), -1.0, (2, 2))
