"""
Spatial denoising stage.

OpenCV's bilateral filter and scikit-image's non-local means fill the
denoiser slot of the pipeline. An optional per-pixel weight blends the
filtered image back towards the input, which is how event activity
preserves detail.
"""

import logging
from typing import Optional, Tuple

import cv2
import numpy as np
from skimage.restoration import denoise_nl_means

from .data_models import EventActivity, RgbImage
from .demosaic import upsample_activity
from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

METHODS = ("none", "bilateral", "nlm")

BILATERAL_WINDOW = 7
BILATERAL_SIGMA_SPATIAL = 3.0
NLM_PATCH_SIZE = 3
NLM_PATCH_DISTANCE = 5  # 11x11 search window


def _bilateral(data: np.ndarray, sigma: float) -> np.ndarray:
    # float32 in, float32 out; each output pixel depends only on its window
    filtered = cv2.bilateralFilter(
        np.ascontiguousarray(data, dtype=np.float32),
        BILATERAL_WINDOW,
        float(sigma),
        BILATERAL_SIGMA_SPATIAL,
        borderType=cv2.BORDER_REPLICATE,
    )
    return filtered.astype(np.float64)


def _nlm(data: np.ndarray, sigma: float) -> np.ndarray:
    return denoise_nl_means(
        data,
        patch_size=NLM_PATCH_SIZE,
        patch_distance=NLM_PATCH_DISTANCE,
        h=sigma,
        fast_mode=True,
        channel_axis=-1,
    )


def denoise(img: RgbImage, method: str = "bilateral", sigma: float = 50.0 / 255.0,
            weight: Optional[np.ndarray] = None) -> RgbImage:
    """Denoise a linear image.

    Args:
        img: Linear RGB image.
        method: "none", "bilateral" or "nlm".
        sigma: Range sigma (bilateral) or filter strength h (nlm) in
            normalised intensity units; 50/255 mirrors sigma=50 on an 8-bit scale.
        weight: Optional (H, W) map in [0, 1]; output = w*img + (1-w)*denoised.

    Returns:
        Denoised linear RgbImage
    """
    if method not in METHODS:
        raise ConfigError(f"unknown denoise method {method!r}; expected one of {', '.join(METHODS)}", "denoise")
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}", "denoise")
    if method == "none" or sigma == 0:
        return RgbImage(img.data.copy(), img.colorspace)

    data = np.asarray(img.data, dtype=np.float64)
    if np.ptp(data) == 0:
        return RgbImage(data.copy(), img.colorspace)
    filtered = _bilateral(data, sigma) if method == "bilateral" else _nlm(data, sigma)

    if weight is not None:
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != data.shape[:2]:
            raise ShapeError(f"weight map {weight.shape} does not match image {data.shape[:2]}", "denoise")
        w = np.clip(weight, 0.0, 1.0)[..., None]
        filtered = w * data + (1.0 - w) * filtered
    return RgbImage(np.clip(filtered, 0.0, 1.0), img.colorspace)


def event_weight_map(activity: EventActivity, decay: float, shape: Tuple[int, int]) -> np.ndarray:
    """Per-pixel detail weight 1 - exp(-decay * activity) at frame resolution.

    Zero activity gives 0 (fully denoised); dense activity approaches 1
    (input kept).
    """
    if decay < 0:
        raise ConfigError(f"activity decay must be >= 0, got {decay}", "denoise")
    counts = upsample_activity(activity, shape)
    return 1.0 - np.exp(-decay * counts)
