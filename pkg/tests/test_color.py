"""
Tests for the colorimetric core

Tests cover:
- sRGB transfer curves and CIELAB conversion
- CIEDE2000 against published reference pairs
- Patch geometry and extraction
- White balance, highlight clipping and CCM fitting
"""

import numpy as np
import pytest

from src.color import (
    D65_WHITE, apply_ccm, apply_wb, ccm_objective, ciede2000, delta_e_ab, estimate_wb, extract_patches, fit_ccm,
    highlight_clip, lab_image, least_squares_ccm, linear_to_lab, patch_centers, patch_delta_e, patch_means,
    srgb_decode, srgb_encode,
)
from src.data_models import GRAY_PATCH_INDEX, CheckerAnnotation, ColorSpace, PatchColors, RgbImage, WbGains
from src.errors import ConfigError, IlluminantError, RangeError
from src.synthetic import default_annotation, render_checker


# (L1, a1, b1), (L2, a2, b2), CIEDE2000
CIEDE2000_PAIRS = [
    ((50.0000, 2.6772, -79.7751), (50.0000, 0.0000, -82.7485), 2.0425),
    ((50.0000, 3.1571, -77.2803), (50.0000, 0.0000, -82.7485), 2.8615),
    ((50.0000, 2.8361, -74.0200), (50.0000, 0.0000, -82.7485), 3.4412),
    ((50.0000, -1.3802, -84.2814), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, -1.1848, -84.8006), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, -0.9009, -85.5211), (50.0000, 0.0000, -82.7485), 1.0000),
    ((50.0000, 0.0000, 0.0000), (50.0000, -1.0000, 2.0000), 2.3669),
    ((50.0000, -1.0000, 2.0000), (50.0000, 0.0000, 0.0000), 2.3669),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0009), 7.1792),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0010), 7.1792),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0011), 7.2195),
    ((50.0000, 2.4900, -0.0010), (50.0000, -2.4900, 0.0012), 7.2195),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0009, -2.4900), 4.8045),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0010, -2.4900), 4.8045),
    ((50.0000, -0.0010, 2.4900), (50.0000, 0.0011, -2.4900), 4.7461),
    ((50.0000, 2.5000, 0.0000), (50.0000, 0.0000, -2.5000), 4.3065),
    ((50.0000, 2.5000, 0.0000), (73.0000, 25.0000, -18.0000), 27.1492),
    ((50.0000, 2.5000, 0.0000), (61.0000, -5.0000, 29.0000), 22.8977),
    ((50.0000, 2.5000, 0.0000), (56.0000, -27.0000, -3.0000), 31.9030),
    ((50.0000, 2.5000, 0.0000), (58.0000, 24.0000, 15.0000), 19.4535),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.1736, 0.5854), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.2972, 0.0000), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 1.8634, 0.5757), 1.0000),
    ((50.0000, 2.5000, 0.0000), (50.0000, 3.2592, 0.3350), 1.0000),
    ((60.2574, -34.0099, 36.2677), (60.4626, -34.1751, 39.4387), 1.2644),
    ((63.0109, -31.0961, -5.8663), (62.8187, -29.7946, -4.0864), 1.2630),
    ((61.2901, 3.7196, -5.3901), (61.4292, 2.2480, -4.9620), 1.8731),
    ((35.0831, -44.1164, 3.7933), (35.0232, -40.0716, 1.5901), 1.8645),
    ((22.7233, 20.0904, -46.6940), (23.0331, 14.9730, -42.5619), 2.0373),
    ((36.4612, 47.8580, 18.3852), (36.2715, 50.5065, 21.2231), 1.4146),
    ((90.8027, -2.0831, 1.4410), (91.1528, -1.6435, 0.0447), 1.4441),
    ((90.9257, -0.5406, -0.9208), (88.6381, -0.8985, -0.7239), 1.5381),
    ((6.7747, -0.2908, -2.4247), (5.8714, -0.0985, -2.2286), 0.6377),
    ((2.0776, 0.0795, -1.1350), (0.9033, -0.0636, -0.5514), 0.9082),
]


class TestTransferCurves:
    """Test sRGB encode/decode"""

    def test_endpoints(self):
        assert srgb_encode(0.0) == 0.0
        assert srgb_encode(1.0) == pytest.approx(1.0, abs=1e-12)
        assert srgb_decode(1.0) == pytest.approx(1.0, abs=1e-12)

    def test_linear_segment(self):
        assert srgb_encode(0.002) == pytest.approx(12.92 * 0.002)
        assert srgb_decode(0.02) == pytest.approx(0.02 / 12.92)

    def test_inverse(self, rng):
        """decode(encode(x)) == x across the unit range"""
        x = rng.random(1000)
        assert np.allclose(srgb_decode(srgb_encode(x)), x, atol=1e-12)

    def test_monotonic(self):
        x = np.linspace(0, 1, 2001)
        assert (np.diff(srgb_encode(x)) > 0).all()


class TestLab:
    """Test linear sRGB to CIELAB"""

    def test_white_and_black(self):
        white = linear_to_lab([1.0, 1.0, 1.0])
        assert white == pytest.approx([100.0, 0.0, 0.0], abs=1e-6)
        assert linear_to_lab([0.0, 0.0, 0.0]) == pytest.approx([0.0, 0.0, 0.0], abs=1e-9)

    def test_mid_gray_lightness(self):
        """Linear 0.5 gray has L* of about 76.07"""
        lab = linear_to_lab([0.5, 0.5, 0.5])
        assert lab[0] == pytest.approx(76.069261, abs=1e-5)
        assert lab[1:] == pytest.approx([0.0, 0.0], abs=1e-6)

    def test_white_point(self):
        assert D65_WHITE == pytest.approx([0.95047, 1.0, 1.08883], abs=1e-4)

    def test_vectorised_shapes(self, rng):
        image = rng.random((4, 5, 3))
        assert linear_to_lab(image).shape == (4, 5, 3)

    def test_lab_image_decodes_encoded_input(self, rng):
        """Encoded and linear versions of one image give the same Lab"""
        linear = rng.random((3, 4, 3))
        from_linear = lab_image(RgbImage(linear, ColorSpace.LINEAR))
        from_encoded = lab_image(RgbImage(srgb_encode(linear), ColorSpace.SRGB))
        assert from_linear.shape == (3, 4, 3)
        assert np.allclose(from_linear, linear_to_lab(linear))
        assert np.allclose(from_encoded, from_linear, atol=1e-8)


class TestCiede2000:
    """Test CIEDE2000 against the published test set"""

    @pytest.mark.parametrize("lab1,lab2,expected", CIEDE2000_PAIRS)
    def test_reference_pairs(self, lab1, lab2, expected):
        assert float(ciede2000(lab1, lab2)) == pytest.approx(expected, abs=1e-4)

    def test_vectorised_matches_scalar(self):
        lab1 = np.array([pair[0] for pair in CIEDE2000_PAIRS])
        lab2 = np.array([pair[1] for pair in CIEDE2000_PAIRS])
        expected = np.array([pair[2] for pair in CIEDE2000_PAIRS])
        assert np.allclose(ciede2000(lab1, lab2), expected, atol=1e-4)

    def test_symmetric_and_zero(self, rng):
        lab1 = rng.uniform([0, -60, -60], [100, 60, 60], size=(50, 3))
        lab2 = rng.uniform([0, -60, -60], [100, 60, 60], size=(50, 3))
        assert np.allclose(ciede2000(lab1, lab2), ciede2000(lab2, lab1), atol=1e-9)
        assert np.allclose(ciede2000(lab1, lab1), 0.0)

    def test_cie76(self):
        assert float(delta_e_ab([50, 0, 0], [53, 4, 0])) == pytest.approx(5.0)


class TestPatchGeometry:
    """Test patch centres and window means"""

    def test_centres_follow_labels(self):
        ann = CheckerAnnotation({"brown": (10, 20), "cyan": (60, 20), "white": (10, 50), "black": (60, 50)}, 100, 80)
        centers = patch_centers(ann)
        assert centers.shape == (24, 2)
        assert centers[0].tolist() == [10.0, 20.0]
        assert centers[5].tolist() == [60.0, 20.0]
        assert centers[18].tolist() == [10.0, 50.0]
        assert centers[23].tolist() == [60.0, 50.0]
        assert centers[1].tolist() == pytest.approx([20.0, 20.0])
        assert centers[6].tolist() == pytest.approx([10.0, 30.0])

    def test_rotated_chart(self):
        """A chart upside down still maps brown to patch 1"""
        ann = CheckerAnnotation({"brown": (60, 50), "cyan": (10, 50), "white": (60, 20), "black": (10, 20)}, 100, 80)
        centers = patch_centers(ann)
        assert centers[0].tolist() == [60.0, 50.0]
        assert centers[23].tolist() == [10.0, 20.0]

    def test_rendered_chart_extracts_exactly(self, checker_scene, reference_patches):
        """Flat rendered patches are recovered exactly"""
        scene, ann = checker_scene
        measured = extract_patches(scene, patch_centers(ann))
        assert np.allclose(measured.values, reference_patches.values)

    def test_srgb_input_is_decoded(self, checker_scene, reference_patches):
        scene, ann = checker_scene
        encoded = RgbImage(srgb_encode(scene.data), ColorSpace.SRGB)
        measured = extract_patches(encoded, patch_centers(ann))
        assert np.allclose(measured.values, reference_patches.values, atol=1e-12)

    def test_window_fraction_must_be_positive(self, checker_scene):
        scene, ann = checker_scene
        with pytest.raises(ConfigError):
            patch_means(scene.data, patch_centers(ann), window_fraction=0)

    def test_centre_outside_image(self):
        data = np.zeros((20, 20, 3))
        centers = np.array([[x, y] for y in range(4) for x in range(6)], dtype=float) * 5
        centers[0] = [-1.0, 0.0]
        with pytest.raises(RangeError):
            patch_means(data, centers)


class TestWhiteBalance:
    """Test gray-patch white balance and highlight handling"""

    def _patches_with_gray(self, gray):
        values = np.full((24, 3), 0.2)
        values[GRAY_PATCH_INDEX] = gray
        return PatchColors(values)

    def test_neutralises_gray(self):
        gray = np.array([0.1, 0.2, 0.25])
        gains = estimate_wb(self._patches_with_gray(gray))
        assert gains.g == 1.0
        assert gains.as_array() * gray == pytest.approx([0.2, 0.2, 0.2])

    def test_dark_gray_patch(self):
        """A channel at or below epsilon means the illuminant cannot be estimated"""
        with pytest.raises(IlluminantError):
            estimate_wb(self._patches_with_gray([0.0, 0.2, 0.2]))

    def test_apply_wb_clips(self):
        img = RgbImage(np.full((2, 2, 3), 0.6))
        out = apply_wb(img, WbGains(r=2.0, b=0.5))
        assert out.data[0, 0].tolist() == [1.0, 0.6, 0.3]
        unclipped = apply_wb(img, WbGains(r=2.0, b=0.5), clip=False)
        assert unclipped.data[0, 0, 0] == pytest.approx(1.2)

    def test_highlight_clip_joint(self):
        """One saturated channel turns the whole pixel white"""
        data = np.array([[[0.2, 0.96, 0.3], [0.2, 0.5, 0.3]]])
        out = highlight_clip(RgbImage(data), 0.95)
        assert out.data[0, 0].tolist() == [1.0, 1.0, 1.0]
        assert out.data[0, 1].tolist() == [0.2, 0.5, 0.3]

    def test_highlight_fraction_range(self):
        with pytest.raises(ConfigError):
            highlight_clip(RgbImage(np.zeros((1, 1, 3))), 0.0)


class TestCcm:
    """Test CCM application and fitting"""

    def _random_mixing(self, rng):
        """Positive, diagonally dominant and well-conditioned"""
        while True:
            mixing = np.eye(3) * rng.uniform(0.6, 0.9, size=3) + rng.uniform(0.0, 0.15, size=(3, 3)) * (1 - np.eye(3))
            if np.linalg.cond(mixing) < 10:
                return mixing

    def test_apply_identity(self, rng):
        img = RgbImage(rng.random((3, 4, 3)))
        assert np.allclose(apply_ccm(img, np.eye(3)).data, img.data)

    def test_row_vector_convention(self):
        img = RgbImage(np.array([[[0.5, 0.25, 0.0]]]))
        matrix = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        assert apply_ccm(img, matrix).data[0, 0].tolist() == [0.75, 0.25, 0.0]

    def test_least_squares_white_preserve(self, rng, reference_patches):
        measured = reference_patches.values @ self._random_mixing(rng)
        matrix = least_squares_ccm(measured, reference_patches.values, white_preserve=True)
        assert np.allclose(matrix.sum(axis=0), 1.0)

    def test_recovers_random_matrices(self, rng, reference_patches):
        """Patches generated through a known mixing are corrected to the reference"""
        for _ in range(20):
            mixing = self._random_mixing(rng)
            measured = PatchColors(reference_patches.values @ mixing)
            matrix, report = fit_ccm(measured, reference_patches)
            assert report.final_objective <= report.initial_objective
            assert report.mean_delta_e00 < 0.5
            corrected = np.clip(measured.values @ matrix, 0, 1)
            de00, _ = patch_delta_e(corrected, reference_patches.values)
            assert de00.mean() < 0.5

    def test_exposure_scale_folded_into_matrix(self, reference_patches):
        """A darker capture is corrected by a proportionally larger matrix"""
        measured = PatchColors(reference_patches.values * 0.5)
        matrix, report = fit_ccm(measured, reference_patches)
        assert report.exposure_scale == pytest.approx(2.0)
        assert np.allclose(measured.values @ matrix, reference_patches.values, atol=1e-3)

    def test_white_preserving_fit(self, rng, reference_patches):
        measured = PatchColors(reference_patches.values @ self._random_mixing(rng))
        matrix, report = fit_ccm(measured, reference_patches, white_preserve=True, exposure_normalize=False)
        assert report.white_preserve
        assert np.allclose(np.ones(3) @ matrix, 1.0)

    def test_never_worse_than_start(self, rng, reference_patches):
        noisy = np.clip(reference_patches.values + rng.normal(0, 0.02, size=(24, 3)), 0.001, None)
        matrix, report = fit_ccm(PatchColors(noisy), reference_patches, max_iterations=200)
        assert report.final_objective <= min(report.initial_objective, report.identity_objective) + 1e-12
        ref_lab = linear_to_lab(reference_patches.values)
        scaled = noisy * report.exposure_scale
        assert ccm_objective(scaled, ref_lab, matrix / report.exposure_scale) == pytest.approx(
            report.final_objective, abs=1e-9)

    def test_dark_gray_cannot_normalise(self, reference_patches):
        values = reference_patches.values.copy()
        values[GRAY_PATCH_INDEX] = 0.0
        with pytest.raises(IlluminantError):
            fit_ccm(PatchColors(values), reference_patches)


class TestPatchDeltaE:

    def test_identical_tables(self, reference_patches):
        de00, deab = patch_delta_e(reference_patches.values, reference_patches.values)
        assert np.allclose(de00, 0.0)
        assert np.allclose(deab, 0.0)

    def test_render_and_measure(self, reference_patches):
        ann = default_annotation(96, 64)
        scene = render_checker(reference_patches, ann, 96, 64)
        measured = extract_patches(scene, patch_centers(ann))
        de00, _ = patch_delta_e(measured.values, reference_patches.values)
        assert de00.max() < 1e-9
