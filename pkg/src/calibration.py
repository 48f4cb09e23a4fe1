"""
Dark-frame calibration: global black level and per-row fixed pattern noise.

Dark frames are averaged per pixel; the black level is the minimum of the
average and the fixed pattern is the row mean of what remains above it.
"""

import logging
from typing import Dict, Iterable, List, Optional

import numpy as np

from .data_models import DarkCalibration, DarkCalibrationLibrary, QuadBayerFrame
from .errors import EmptyInputError, ShapeError

logger = logging.getLogger(__name__)

RECOMMENDED_DARK_FRAMES = 5


def average_frames(frames: List[QuadBayerFrame]) -> np.ndarray:
    """Per-pixel mean of same-geometry frames (float64)."""
    if not frames:
        raise EmptyInputError("no dark frames given", "calibrate_dark")
    first = frames[0]
    for i, frame in enumerate(frames[1:], start=2):
        if frame.data.shape != first.data.shape or frame.bit_depth != first.bit_depth:
            raise ShapeError(
                f"frame {i} is {frame.width}x{frame.height}@{frame.bit_depth}b, "
                f"expected {first.width}x{first.height}@{first.bit_depth}b", "calibrate_dark")
    # integer sum is exact, so the average does not depend on frame order
    total = np.zeros(first.data.shape, dtype=np.int64)
    for frame in frames:
        total += frame.data
    return total / float(len(frames))


def calibrate_dark(frames: List[QuadBayerFrame], exposure_time: Optional[float] = None) -> DarkCalibration:
    """Derive (blc, fpn) from dark frames.

    Args:
        frames: Dark frames of one exposure setting.
        exposure_time: Optional exposure tag stored with the calibration.

    Returns:
        DarkCalibration with blc = min of the averaged frame and
        fpn[r] = mean of row r above blc.
    """
    average = average_frames(frames)
    if len(frames) < RECOMMENDED_DARK_FRAMES:
        logger.warning(f"Only {len(frames)} dark frame(s); at least {RECOMMENDED_DARK_FRAMES} are recommended")
    blc = float(average.min())
    fpn = np.maximum((average - blc).mean(axis=1), 0.0)
    logger.info(f"Dark calibration from {len(frames)} frame(s): blc={blc:.3f}, "
                f"fpn range [{fpn.min():.3f}, {fpn.max():.3f}]")
    return DarkCalibration(blc=blc, fpn=fpn, exposure_time=exposure_time)


def calibrate_dark_library(groups: Dict[float, List[QuadBayerFrame]]) -> DarkCalibrationLibrary:
    """One calibration per exposure time."""
    if not groups:
        raise EmptyInputError("no exposure groups given", "calibrate_dark")
    library = DarkCalibrationLibrary()
    for exposure_time in sorted(groups):
        library.add(calibrate_dark(groups[exposure_time], exposure_time=exposure_time))
    return library


def apply_dark_correction(frame: QuadBayerFrame, calib: DarkCalibration) -> QuadBayerFrame:
    """out = max(0, round(in - blc - fpn[row])), bit depth unchanged."""
    if calib.height != frame.height:
        raise ShapeError(f"calibration covers {calib.height} rows, frame has {frame.height}", "dark")
    offset = calib.blc + calib.fpn[:, None]
    corrected = np.maximum(np.rint(frame.data - offset), 0.0)
    return frame.with_data(corrected.astype(frame.data.dtype))


def merge_into_library(library: Optional[DarkCalibrationLibrary],
                       calibrations: Iterable[DarkCalibration]) -> DarkCalibrationLibrary:
    library = library or DarkCalibrationLibrary()
    for calib in calibrations:
        library.add(calib)
    return library
