"""
Colorimetric core of the ISP.

ColorChecker patch extraction, green-anchored white balance, sRGB transfer
curves, CIELAB / CIEDE2000 and the CCM fit that minimises mean CIEDE2000
over the 24 chart patches.

All functions take numpy arrays whose last axis holds a colour triplet, so a
single pixel, a (24, 3) patch table and an (H, W, 3) image go through the
same code.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from .data_models import (
    CheckerAnnotation, ColorSpace, FitReport, GRAY_PATCH_INDEX, PatchColors, RgbImage, WbGains,
)
from .errors import ConfigError, FitError, IlluminantError, RangeError

logger = logging.getLogger(__name__)


# IEC 61966-2-1 primaries, D65 white
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
D65_WHITE = SRGB_TO_XYZ.sum(axis=1)
LUMINANCE_WEIGHTS = SRGB_TO_XYZ[1]

SRGB_LINEAR_BREAK = 0.0031308
SRGB_ENCODED_BREAK = 0.04045
_LAB_DELTA = 6.0 / 29.0
_POW25_7 = 25.0 ** 7

CHART_ROWS = 4
CHART_COLS = 6
WB_EPSILON = 1e-4


# --------------------------------------------------------------------------
# Transfer curves and CIELAB
# --------------------------------------------------------------------------

def srgb_encode(linear) -> np.ndarray:
    """Linear [0, 1] -> sRGB-encoded values (piecewise gamma)."""
    x = np.asarray(linear, dtype=np.float64)
    power = 1.055 * np.power(np.maximum(x, SRGB_LINEAR_BREAK), 1.0 / 2.4) - 0.055
    return np.where(x <= SRGB_LINEAR_BREAK, 12.92 * x, power)


def srgb_decode(encoded) -> np.ndarray:
    """Inverse of srgb_encode."""
    e = np.asarray(encoded, dtype=np.float64)
    power = np.power((np.maximum(e, SRGB_ENCODED_BREAK) + 0.055) / 1.055, 2.4)
    return np.where(e <= SRGB_ENCODED_BREAK, e / 12.92, power)


def luminance(rgb) -> np.ndarray:
    """Relative luminance Y of linear sRGB triplets."""
    return np.asarray(rgb, dtype=np.float64) @ LUMINANCE_WEIGHTS


def _lab_f(t: np.ndarray) -> np.ndarray:
    linear = t / (3.0 * _LAB_DELTA ** 2) + 4.0 / 29.0
    return np.where(t > _LAB_DELTA ** 3, np.cbrt(t), linear)


def linear_to_lab(rgb) -> np.ndarray:
    """Linear sRGB -> CIELAB (D65, 2 degree observer).

    Out-of-gamut values are not clipped; they pass through the arithmetic.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    xyz = rgb @ SRGB_TO_XYZ.T
    f = _lab_f(xyz / D65_WHITE)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_image(img: RgbImage) -> np.ndarray:
    """Lab of every pixel of a linear image."""
    if img.colorspace != ColorSpace.LINEAR:
        return linear_to_lab(srgb_decode(img.data))
    return linear_to_lab(img.data)


def delta_e_ab(lab1, lab2) -> np.ndarray:
    """CIE76 colour difference (Euclidean distance in Lab)."""
    diff = np.asarray(lab1, dtype=np.float64) - np.asarray(lab2, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def ciede2000(lab1, lab2) -> np.ndarray:
    """CIEDE2000 colour difference with kL = kC = kH = 1.

    Follows Sharma, Wu and Dalal's formulation, including the branch rules
    for the hue difference and hue mean when either chroma is zero.
    """
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c_bar = 0.5 * (np.hypot(a1, b1) + np.hypot(a2, b2))
    c_bar7 = c_bar ** 7
    g = 0.5 * (1.0 - np.sqrt(c_bar7 / (c_bar7 + _POW25_7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0

    chroma_product = c1p * c2p
    zero_chroma = chroma_product == 0

    dLp = L2 - L1
    dCp = c2p - c1p
    dhp = h2p - h1p
    dhp = np.where(dhp > 180.0, dhp - 360.0, dhp)
    dhp = np.where(dhp < -180.0, dhp + 360.0, dhp)
    dhp = np.where(zero_chroma, 0.0, dhp)
    dHp = 2.0 * np.sqrt(chroma_product) * np.sin(np.radians(dhp) / 2.0)

    L_bar = 0.5 * (L1 + L2)
    c_bar_p = 0.5 * (c1p + c2p)
    h_sum = h1p + h2p
    h_bar = np.where(
        np.abs(h1p - h2p) <= 180.0,
        0.5 * h_sum,
        np.where(h_sum < 360.0, 0.5 * (h_sum + 360.0), 0.5 * (h_sum - 360.0)),
    )
    h_bar = np.where(zero_chroma, h_sum, h_bar)

    t = (1.0
         - 0.17 * np.cos(np.radians(h_bar - 30.0))
         + 0.24 * np.cos(np.radians(2.0 * h_bar))
         + 0.32 * np.cos(np.radians(3.0 * h_bar + 6.0))
         - 0.20 * np.cos(np.radians(4.0 * h_bar - 63.0)))
    d_theta = 30.0 * np.exp(-(((h_bar - 275.0) / 25.0) ** 2))
    c_bar_p7 = c_bar_p ** 7
    r_c = 2.0 * np.sqrt(c_bar_p7 / (c_bar_p7 + _POW25_7))
    l_term = (L_bar - 50.0) ** 2
    s_l = 1.0 + 0.015 * l_term / np.sqrt(20.0 + l_term)
    s_c = 1.0 + 0.045 * c_bar_p
    s_h = 1.0 + 0.015 * c_bar_p * t
    r_t = -np.sin(np.radians(2.0 * d_theta)) * r_c

    dl = dLp / s_l
    dc = dCp / s_c
    dh = dHp / s_h
    return np.sqrt(np.maximum(dl * dl + dc * dc + dh * dh + r_t * dc * dh, 0.0))


# --------------------------------------------------------------------------
# ColorChecker geometry and patch statistics
# --------------------------------------------------------------------------

def patch_centers(ann: CheckerAnnotation) -> np.ndarray:
    """Centres of all 24 patches as a (24, 2) array of (x, y), row-major chart order.

    Corner patches anchor the grid: brown is (row 1, col 1), cyan (row 1, col 6),
    white (row 4, col 1) and black (row 4, col 6). The rest are bilinear in
    between, so the grid follows the labels rather than the image axes.
    """
    ann.validate()
    brown, cyan, white, black = (np.asarray(ann.corners[k], dtype=np.float64)
                                 for k in ("brown", "cyan", "white", "black"))
    v = (np.arange(CHART_ROWS) / (CHART_ROWS - 1))[:, None, None]
    u = (np.arange(CHART_COLS) / (CHART_COLS - 1))[None, :, None]
    grid = ((1 - u) * (1 - v) * brown + u * (1 - v) * cyan
            + (1 - u) * v * white + u * v * black)
    return grid.reshape(CHART_ROWS * CHART_COLS, 2)


def patch_window_side(centers: np.ndarray, window_fraction: float = 0.25) -> int:
    grid = np.asarray(centers, dtype=np.float64).reshape(CHART_ROWS, CHART_COLS, 2)
    horizontal = np.linalg.norm(np.diff(grid, axis=1), axis=-1).mean()
    vertical = np.linalg.norm(np.diff(grid, axis=0), axis=-1).mean()
    spacing = min(horizontal, vertical)
    return max(3, int(round(window_fraction * spacing)))


def patch_means(data: np.ndarray, centers: np.ndarray, window_fraction: float = 0.25) -> np.ndarray:
    """Mean colour in a square window around each centre, window clamped to the image."""
    if not window_fraction > 0:
        raise ConfigError(f"window_fraction must be > 0, got {window_fraction}", "patches")
    height, width = data.shape[:2]
    centers = np.asarray(centers, dtype=np.float64)
    side = patch_window_side(centers, window_fraction)
    half = side // 2
    means = np.empty((centers.shape[0], data.shape[2]), dtype=np.float64)
    for i, (x, y) in enumerate(centers):
        if not (0 <= x <= width - 1 and 0 <= y <= height - 1):
            raise RangeError(f"patch {i + 1} centre ({x:.1f}, {y:.1f}) outside {width}x{height} image", "patches")
        cx, cy = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
        x0, y0 = max(cx - half, 0), max(cy - half, 0)
        x1, y1 = min(cx - half + side, width), min(cy - half + side, height)
        means[i] = data[y0:y1, x0:x1].reshape(-1, data.shape[2]).mean(axis=0)
    return means


def extract_patches(img: RgbImage, centers: np.ndarray, window_fraction: float = 0.25) -> PatchColors:
    """Mean linear colour of each ColorChecker patch."""
    data = img.data if img.colorspace == ColorSpace.LINEAR else srgb_decode(img.data)
    return PatchColors(patch_means(data, centers, window_fraction))


# --------------------------------------------------------------------------
# White balance and highlights
# --------------------------------------------------------------------------

def estimate_wb(patches: PatchColors, epsilon: float = WB_EPSILON) -> WbGains:
    """Gains that make the gray patch (21) neutral, anchored on green."""
    r, g, b = patches.gray
    if min(r, g, b) <= epsilon:
        raise IlluminantError(
            f"gray patch 21 = ({r:.4g}, {g:.4g}, {b:.4g}) has a channel <= {epsilon:g}; "
            "patch is over- or under-exposed", "wb")
    return WbGains(r=float(g / r), b=float(g / b))


def apply_wb(img: RgbImage, gains: WbGains, clip: bool = True) -> RgbImage:
    out = img.data * gains.as_array()
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return RgbImage(out, ColorSpace.LINEAR)


def highlight_clip(img: RgbImage, saturation_fraction: float = 0.95) -> RgbImage:
    """Pixels with any channel at or above the fraction become white.

    A joint clip keeps a green-only saturation from tinting highlights.
    """
    if not 0 < saturation_fraction <= 1:
        raise ConfigError(f"saturation fraction must lie in (0, 1], got {saturation_fraction}", "highlight")
    out = img.data.copy()
    out[(out >= saturation_fraction).any(axis=-1)] = 1.0
    return RgbImage(out, img.colorspace)


# --------------------------------------------------------------------------
# Color correction matrix
# --------------------------------------------------------------------------

def apply_ccm(img: RgbImage, matrix: np.ndarray) -> RgbImage:
    """Row-vector multiply each pixel by the CCM and clamp to [0, 1]."""
    out = np.clip(img.data @ np.asarray(matrix, dtype=np.float64), 0.0, 1.0)
    return RgbImage(out, ColorSpace.LINEAR)


def ccm_objective(measured: np.ndarray, reference_lab: np.ndarray, matrix: np.ndarray) -> float:
    """Mean CIEDE2000 between the clamped corrected patches and the reference."""
    corrected = np.clip(measured @ matrix, 0.0, 1.0)
    return float(np.mean(ciede2000(linear_to_lab(corrected), reference_lab)))


def least_squares_ccm(measured: np.ndarray, reference: np.ndarray, white_preserve: bool = False) -> np.ndarray:
    """Linear least-squares CCM, optionally with (1, 1, 1) mapped to itself.

    White preservation under the row-vector convention means every column of
    the matrix sums to one; it is solved per column through the KKT system.
    """
    if not white_preserve:
        matrix, *_ = np.linalg.lstsq(measured, reference, rcond=None)
        return matrix
    ata = measured.T @ measured
    kkt = np.zeros((4, 4))
    kkt[:3, :3] = ata
    kkt[:3, 3] = 1.0
    kkt[3, :3] = 1.0
    rhs = np.vstack([measured.T @ reference, np.ones((1, 3))])
    solution, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    return solution[:3]


def _to_params(matrix: np.ndarray, white_preserve: bool) -> np.ndarray:
    return (matrix[:2] if white_preserve else matrix).ravel().copy()


def _from_params(params: np.ndarray, white_preserve: bool) -> np.ndarray:
    if not white_preserve:
        return params.reshape(3, 3)
    top = params.reshape(2, 3)
    return np.vstack([top, 1.0 - top.sum(axis=0)])


def fit_ccm(measured: PatchColors, reference: PatchColors, white_preserve: bool = False,
            exposure_normalize: bool = True, max_iterations: int = 2000,
            tolerance: float = 1e-6) -> Tuple[np.ndarray, FitReport]:
    """Fit a 3x3 CCM by minimising mean CIEDE2000 over the chart.

    Starts from the better of the least-squares solution and the identity,
    then refines with Nelder-Mead. The result is never worse than its start.

    Args:
        measured: White-balanced linear patch colours from the image.
        reference: Linear reference colours of the chart.
        white_preserve: Constrain (1, 1, 1) to map onto itself.
        exposure_normalize: Scale measured patches so the gray patch matches
            the reference luminance before fitting; the scale is folded into
            the returned matrix.
        max_iterations: Nelder-Mead iteration cap.
        tolerance: Simplex objective spread that counts as converged.

    Returns:
        Tuple of (matrix, FitReport)
    """
    m = measured.values
    ref = reference.values
    ref_lab = linear_to_lab(ref)

    scale = 1.0
    if exposure_normalize:
        y_measured = float(luminance(m[GRAY_PATCH_INDEX]))
        if y_measured <= WB_EPSILON:
            raise IlluminantError("gray patch 21 is too dark to normalise exposure", "ccm")
        scale = float(luminance(ref[GRAY_PATCH_INDEX])) / y_measured
    m = m * scale

    def objective(params: np.ndarray) -> float:
        return ccm_objective(m, ref_lab, _from_params(params, white_preserve))

    identity = np.eye(3)
    init = least_squares_ccm(m, ref, white_preserve)
    initial_objective = ccm_objective(m, ref_lab, init)
    identity_objective = ccm_objective(m, ref_lab, identity)
    if not (np.isfinite(initial_objective) and np.isfinite(identity_objective)):
        raise FitError("objective is not finite at the starting point", "ccm")

    start = init if initial_objective <= identity_objective else identity
    start_objective = min(initial_objective, identity_objective)

    result = minimize(
        objective,
        _to_params(start, white_preserve),
        method="Nelder-Mead",
        options={"maxiter": max_iterations, "fatol": tolerance, "xatol": np.inf},
    )
    fitted = _from_params(np.asarray(result.x, dtype=np.float64), white_preserve)
    final_objective = ccm_objective(m, ref_lab, fitted)
    if not np.isfinite(final_objective):
        raise FitError("objective became non-finite during optimisation", "ccm")

    warnings = []
    if final_objective > start_objective:
        warnings.append("Nelder-Mead ended above its start; keeping the starting matrix")
        logger.warning(warnings[-1])
        fitted, final_objective = start, start_objective

    per_patch = ciede2000(linear_to_lab(np.clip(m @ fitted, 0.0, 1.0)), ref_lab)
    report = FitReport(
        initial_objective=initial_objective,
        final_objective=final_objective,
        identity_objective=identity_objective,
        iterations=int(result.nit),
        converged=bool(result.success),
        exposure_scale=scale,
        white_preserve=white_preserve,
        clamped=True,
        mean_delta_e00=float(per_patch.mean()),
        max_delta_e00=float(per_patch.max()),
        warnings=warnings,
    )
    logger.info(f"CCM fit: objective {initial_objective:.4f} -> {final_objective:.4f} "
                f"in {report.iterations} iterations")
    return fitted * scale, report


def patch_delta_e(measured_linear: np.ndarray, reference_linear: np.ndarray,
                  reference_lab: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-patch (CIEDE2000, CIE76) between two linear patch tables."""
    lab_measured = linear_to_lab(measured_linear)
    lab_reference = linear_to_lab(reference_linear) if reference_lab is None else reference_lab
    return ciede2000(lab_measured, lab_reference), delta_e_ab(lab_measured, lab_reference)
