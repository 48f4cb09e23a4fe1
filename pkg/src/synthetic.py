"""
Synthetic HVS captures.

A forward sensor model (unit gain plus Gaussian read noise) that turns a
linear scene into a quad-Bayer RAW frame by running the colour pipeline
backwards: inverse CCM, inverse white balance, mosaic sampling, scaling to
counts and adding the dark offsets. Used to build fixtures with a known
ground truth.
"""

import logging
from typing import List, Optional, Union

import numpy as np

from .color import patch_centers
from .data_models import CheckerAnnotation, EventStream, PatchColors, PatternPhase, QuadBayerFrame, RgbImage, WbGains
from .demosaic import HOLE, color_site_map
from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


def default_annotation(width: int, height: int, margin: float = 0.05) -> CheckerAnnotation:
    """Axis-aligned chart filling the image apart from a relative border."""
    spacing_x = width * (1 - 2 * margin) / 6
    spacing_y = height * (1 - 2 * margin) / 4
    left = width * margin + 0.5 * spacing_x
    top = height * margin + 0.5 * spacing_y
    right = left + 5 * spacing_x
    bottom = top + 3 * spacing_y
    corners = {
        "brown": (left, top),
        "cyan": (right, top),
        "white": (left, bottom),
        "black": (right, bottom),
    }
    return CheckerAnnotation(corners, width, height).validate()


def render_checker(patches: Union[PatchColors, np.ndarray], ann: CheckerAnnotation, width: int, height: int,
                   background: float = 0.18, fill_fraction: float = 0.8) -> RgbImage:
    """Linear image of the chart: flat squares on a flat gray background."""
    values = patches.values if isinstance(patches, PatchColors) else np.asarray(patches, dtype=np.float64)
    brown, cyan, white = (np.asarray(ann.corners[k], dtype=np.float64) for k in ("brown", "cyan", "white"))
    if not (np.isclose(brown[1], cyan[1]) and np.isclose(brown[0], white[0])):
        raise ConfigError("only axis-aligned annotations can be rendered", "synthetic")
    spacing = min(abs(cyan[0] - brown[0]) / 5, abs(white[1] - brown[1]) / 3)
    side = max(1, int(round(fill_fraction * spacing)))

    img = np.full((height, width, 3), background, dtype=np.float64)
    for (cx, cy), color in zip(patch_centers(ann), values):
        x0 = int(round(cx - side / 2))
        y0 = int(round(cy - side / 2))
        img[max(y0, 0):max(y0 + side, 0), max(x0, 0):max(x0 + side, 0)] = color
    return RgbImage(img)


def invert_pipeline(scene: RgbImage, ccm: np.ndarray, wb_gains: WbGains,
                    pattern_phase: PatternPhase = PatternPhase.BOTTOM_RIGHT, channel_order: str = "RGB",
                    bit_depth: int = 10, blc: float = 0.0, fpn: Optional[np.ndarray] = None,
                    noise_sigma: float = 0.0, rng: Optional[np.random.Generator] = None) -> QuadBayerFrame:
    """RAW frame that run_isp maps back onto `scene`.

    Args:
        scene: Linear target image.
        ccm: Colour correction matrix the pipeline will apply (row-vector convention).
        wb_gains: White balance gains the pipeline will apply.
        pattern_phase: Hole position in each block.
        channel_order: Colour-site order in each block.
        bit_depth: Sample bit depth.
        blc: Black level in counts.
        fpn: Per-row offsets in counts.
        noise_sigma: Gaussian noise as a fraction of full scale.
        rng: Generator for the noise; required when noise_sigma > 0.

    Returns:
        QuadBayerFrame with unfilled holes (hole sites carry only dark offsets)
    """
    height, width = scene.data.shape[:2]
    sensor = scene.data @ np.linalg.inv(np.asarray(ccm, dtype=np.float64))
    sensor = sensor / wb_gains.as_array()

    sites = color_site_map(height, width, pattern_phase, channel_order)
    rows, cols = np.indices((height, width))
    mosaic = sensor[rows, cols, np.maximum(sites, 0)]
    mosaic[sites == HOLE] = 0.0

    max_value = (1 << bit_depth) - 1
    counts = mosaic * max_value
    if noise_sigma > 0:
        if rng is None:
            raise ConfigError("noise needs a random generator", "synthetic")
        counts = counts + rng.normal(0.0, noise_sigma * max_value, size=counts.shape)
    counts = counts + blc
    if fpn is not None:
        fpn = np.asarray(fpn, dtype=np.float64)
        if fpn.shape != (height,):
            raise ShapeError(f"fpn needs {height} rows, got {fpn.shape}", "synthetic")
        counts = counts + fpn[:, None]
    data = np.clip(np.rint(counts), 0, max_value).astype(np.uint16)
    return QuadBayerFrame(data, bit_depth=bit_depth, pattern_phase=pattern_phase, channel_order=channel_order)


def dark_frames(n: int, height: int, width: int, blc: float, fpn: np.ndarray, noise_sigma_counts: float = 0.0,
                rng: Optional[np.random.Generator] = None, bit_depth: int = 10) -> List[QuadBayerFrame]:
    """Lens-capped captures: black level, row offsets and read noise only."""
    if noise_sigma_counts > 0 and rng is None:
        raise ConfigError("noise needs a random generator", "synthetic")
    max_value = (1 << bit_depth) - 1
    base = blc + np.asarray(fpn, dtype=np.float64)[:, None] * np.ones((1, width))
    frames = []
    for _ in range(n):
        counts = base
        if noise_sigma_counts > 0:
            counts = base + rng.normal(0.0, noise_sigma_counts, size=base.shape)
        data = np.clip(np.rint(counts), 0, max_value).astype(np.uint16)
        frames.append(QuadBayerFrame(data, bit_depth=bit_depth))
    return frames


def flicker_stream(frequency_hz: float = 100.0, duration_us: int = 500_000, bin_width: int = 1000,
                   base_rate: float = 100.0, modulation: float = 0.5, width: int = 4,
                   height: int = 4) -> EventStream:
    """Stream whose per-bin count is round(base * (1 + m * sin(2 pi f t))) at each bin centre.

    Events inside a bin are evenly spaced and cycle over the pixels with
    alternating polarity, so the count sequence is exact.
    """
    if not 0 <= modulation < 1:
        raise ConfigError(f"modulation must lie in [0, 1), got {modulation}", "synthetic")
    bins = int(duration_us // bin_width)
    centres = (np.arange(bins) + 0.5) * bin_width * 1e-6
    counts = np.rint(base_rate * (1 + modulation * np.sin(2 * np.pi * frequency_hz * centres))).astype(np.int64)

    t = np.concatenate([i * bin_width + (np.arange(c) * bin_width) // c for i, c in enumerate(counts) if c > 0])
    pixel = np.arange(t.size) % (width * height)
    y, x = np.divmod(pixel, width)
    p = np.where(np.arange(t.size) % 2 == 0, 1, -1)
    return EventStream(width, height, t, x, y, p)
