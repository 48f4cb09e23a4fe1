"""
Event-stream analytics and simulation.

Voxel grids, per-pixel activity, a two-frame DVS contrast model, global
event-rate series with flicker and illumination-change detection, and the
rolling-shutter alignment between RAW rows and event rows.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy import fft
from scipy.ndimage import uniform_filter1d

from .color import luminance, srgb_decode
from .data_models import (
    ColorSpace, EventActivity, EventRateSeries, EventStream, ExposureMeta, FlickerReport, RgbImage, VoxelGrid,
)
from .errors import ConfigError, InsufficientDataError, RangeError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_LOG_FLOOR = 1e-3
DEFAULT_FLICKER_BIN_US = 1000
MIN_FLICKER_BINS = 20
FLICKER_THRESHOLD = 0.3


def voxelize(stream: EventStream, t0: float, t1: float, bins: int) -> VoxelGrid:
    """Accumulate polarities into `bins` temporal bins with linear weights.

    Bin i is centred at t0 + (i + 0.5) * (t1 - t0) / bins. Events in [t0, t1)
    split their polarity between the two nearest centres; before the first
    or after the last centre the whole polarity goes to the edge bin.
    """
    if bins < 1:
        raise ConfigError(f"voxel grid needs at least one bin, got {bins}", "voxelize")
    if not t1 > t0:
        raise ConfigError(f"voxel window must have t1 > t0, got [{t0}, {t1})", "voxelize")

    grid = np.zeros((bins, stream.height, stream.width), dtype=np.float64)
    inside = (stream.t >= t0) & (stream.t < t1)
    if not inside.any():
        return VoxelGrid(grid.astype(np.float32))

    t = stream.t[inside].astype(np.float64)
    x, y = stream.x[inside], stream.y[inside]
    p = stream.p[inside].astype(np.float64)

    position = (t - t0) / (t1 - t0) * bins - 0.5
    lower = np.floor(position)
    frac = position - lower
    lower = lower.astype(np.int64)
    upper = lower + 1
    w_lower, w_upper = 1.0 - frac, frac

    before = lower < 0
    lower[before], upper[before] = 0, 0
    w_lower[before], w_upper[before] = 1.0, 0.0
    after = upper > bins - 1
    lower[after], upper[after] = bins - 1, bins - 1
    w_lower[after], w_upper[after] = 1.0, 0.0

    np.add.at(grid, (lower, y, x), p * w_lower)
    np.add.at(grid, (upper, y, x), p * w_upper)
    return VoxelGrid(grid.astype(np.float32))


def log_intensity(img, floor: float = DEFAULT_LOG_FLOOR) -> np.ndarray:
    """ln(max(img, floor)); the floor keeps black pixels finite."""
    if not floor > 0:
        raise ConfigError(f"log floor must be > 0, got {floor}", "log_intensity")
    return np.log(np.maximum(np.asarray(img, dtype=np.float64), floor))


def simulate_events(l0: np.ndarray, l1: np.ndarray, theta: float, t0: int, t1: int) -> EventStream:
    """Two-frame contrast model.

    Each pixel emits floor(|L1 - L0| / theta) events of polarity sign(L1 - L0).
    The k-th of n events at a pixel fires at t0 + ceil(k * (t1 - t0) / n), so
    timestamps are integers in (t0, t1]. The residual below theta is dropped.

    Args:
        l0: Log intensity at t0, shape (H, W).
        l1: Log intensity at t1, same shape.
        theta: Contrast threshold in log units.
        t0: Start time (us).
        t1: End time (us).

    Returns:
        EventStream sorted by time, then pixel (row-major), then k.
    """
    if not theta > 0:
        raise ConfigError(f"contrast threshold must be > 0, got {theta}", "simulate")
    l0 = np.asarray(l0, dtype=np.float64)
    l1 = np.asarray(l1, dtype=np.float64)
    if l0.shape != l1.shape or l0.ndim != 2:
        raise ShapeError(f"log frames must share a 2-D shape, got {l0.shape} and {l1.shape}", "simulate")
    if not (np.isfinite(l0).all() and np.isfinite(l1).all()):
        raise RangeError("log frames must be finite", "simulate")
    t0, t1 = int(t0), int(t1)
    if not t1 > t0:
        raise ConfigError(f"simulation window must have t1 > t0, got [{t0}, {t1}]", "simulate")

    height, width = l0.shape
    delta = (l1 - l0).ravel()
    counts = np.floor(np.abs(delta) / theta).astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        return EventStream(width, height)

    pixel = np.repeat(np.arange(delta.size, dtype=np.int64), counts)
    n = counts[pixel]
    first = np.repeat(np.cumsum(counts) - counts, counts)
    k = np.arange(total, dtype=np.int64) - first + 1
    t = t0 - (-(k * (t1 - t0)) // n)

    order = np.lexsort((k, pixel, t))
    pixel, t = pixel[order], t[order]
    y, x = np.divmod(pixel, width)
    p = np.sign(delta[pixel]).astype(np.int8)
    logger.debug(f"Simulated {total} events over {width}x{height} at theta={theta}")
    return EventStream(width, height, t, x, y, p)


def frame_luminance(img: RgbImage, half_resolution: bool = True) -> np.ndarray:
    """Rec. 709 luminance of a linear image, optionally 2x2 block-averaged to event resolution."""
    data = img.data if img.colorspace == ColorSpace.LINEAR else srgb_decode(img.data)
    y = luminance(data)
    if not half_resolution:
        return y
    height, width = y.shape
    if height % 2 or width % 2:
        raise ShapeError(f"frame {width}x{height} cannot be halved", "frame_luminance")
    return y.reshape(height // 2, 2, width // 2, 2).mean(axis=(1, 3))


def events_from_frames(frame0: RgbImage, frame1: RgbImage, theta: float, t0: int, t1: int,
                       floor: float = DEFAULT_LOG_FLOOR, half_resolution: bool = True) -> EventStream:
    """Simulate the events between two RGB frames."""
    l0 = log_intensity(frame_luminance(frame0, half_resolution), floor)
    l1 = log_intensity(frame_luminance(frame1, half_resolution), floor)
    return simulate_events(l0, l1, theta, t0, t1)


def activity_map(stream: EventStream, t0: float, t1: float) -> EventActivity:
    """Per-pixel count of events of either polarity in [t0, t1)."""
    if not t1 > t0:
        raise ConfigError(f"activity window must have t1 > t0, got [{t0}, {t1})", "activity")
    inside = (stream.t >= t0) & (stream.t < t1)
    flat = stream.y[inside] * stream.width + stream.x[inside]
    counts = np.bincount(flat, minlength=stream.width * stream.height)
    return EventActivity(counts.reshape(stream.height, stream.width).astype(np.float64), (t0, t1))


def event_rate(stream: EventStream, bin_width: float) -> EventRateSeries:
    """Global event counts per bin from the first to the last event (inclusive)."""
    if not bin_width > 0:
        raise ConfigError(f"bin width must be > 0, got {bin_width}", "event_rate")
    if not len(stream):
        return EventRateSeries(np.zeros(0, dtype=np.float64), np.zeros(0, dtype=np.int64), bin_width)
    first, last = stream.span
    index = np.floor((stream.t - first) / bin_width).astype(np.int64)
    bins = int(np.floor((last - first) / bin_width)) + 1
    counts = np.bincount(index, minlength=bins)
    return EventRateSeries(first + np.arange(bins) * float(bin_width), counts, bin_width)


def smooth_rate(series: EventRateSeries, period_us: float) -> EventRateSeries:
    """Moving average of the counts over one flicker period."""
    if not period_us > 0:
        raise ConfigError(f"smoothing period must be > 0, got {period_us}", "event_rate")
    if not len(series):
        return series
    size = max(1, int(round(period_us / series.bin_width)))
    smoothed = uniform_filter1d(series.counts.astype(np.float64), size=size, mode="nearest")
    return EventRateSeries(series.bin_start.copy(), smoothed, series.bin_width)


def flicker_score(stream: EventStream, bin_width: float = DEFAULT_FLICKER_BIN_US,
                  threshold: float = FLICKER_THRESHOLD) -> FlickerReport:
    """Dominant periodicity of the global event rate.

    The score is the spectral peak magnitude over the summed magnitude of all
    non-DC frequencies; a flat rate scores 0.
    """
    series = event_rate(stream, bin_width)
    if len(series) < MIN_FLICKER_BINS:
        raise InsufficientDataError(
            f"flicker analysis needs at least {MIN_FLICKER_BINS} bins, stream spans {len(series)}", "flicker")

    counts = series.counts.astype(np.float64)
    spectrum = np.abs(fft.rfft(counts - counts.mean()))[1:]
    frequencies = fft.rfftfreq(counts.size, d=bin_width * 1e-6)[1:]
    total = float(spectrum.sum())
    if total <= 0 or not spectrum.size:
        return FlickerReport(0.0, 0.0, bin_width, bins=len(series), threshold=threshold)

    peak = int(np.argmax(spectrum))
    score = float(spectrum[peak] / total)
    logger.debug(f"Flicker peak at {frequencies[peak]:.2f} Hz, score {score:.3f}")
    return FlickerReport(float(frequencies[peak]), score, bin_width, bins=len(series), threshold=threshold)


def illumination_changes(stream: EventStream, bin_width: float, ratio: float = 2.0,
                         min_count: int = 1) -> List[int]:
    """Start times of bins whose event count jumps by `ratio` from the previous bin.

    Either direction counts; pairs where neither bin reaches min_count are
    ignored so idle stretches do not trigger.
    """
    if not ratio > 1:
        raise ConfigError(f"change ratio must be > 1, got {ratio}", "illumination")
    series = event_rate(stream, bin_width)
    counts = series.counts.astype(np.float64)
    changes = []
    for i in range(1, counts.size):
        prev, cur = counts[i - 1], counts[i]
        if max(prev, cur) < min_count:
            continue
        if cur >= ratio * prev or prev >= ratio * cur:
            changes.append(int(series.bin_start[i]))
    return changes


def row_exposure_window(meta: ExposureMeta, row: int) -> Tuple[float, float]:
    """Half-open exposure window [t_start, t_end) of a RAW row."""
    if row < 0:
        raise RangeError(f"row must be >= 0, got {row}", "rolling_shutter")
    start = meta.frame_start + row * meta.row_readout_delta
    return start, start + meta.exposure_time


def frame_exposure_span(meta: ExposureMeta, height: int) -> Tuple[float, float]:
    """From the first row's start to the last row's end."""
    return meta.frame_start, row_exposure_window(meta, height - 1)[1]


def events_in_row_exposure(stream: EventStream, meta: ExposureMeta, row: int) -> EventStream:
    """Events on the event row under RAW row `row` during its exposure."""
    start, end = row_exposure_window(meta, row)
    mask = (stream.y == row // 2) & (stream.t >= start) & (stream.t < end)
    return stream.select(mask)


def dynamic_range_db(i_max: float, i_min: float) -> float:
    if not (i_min > 0 and i_max > i_min):
        raise RangeError(f"need i_max > i_min > 0, got {i_max} and {i_min}", "dynamic_range")
    return float(20.0 * np.log10(i_max / i_min))


def temporal_resolution_hz(delta_t: float) -> float:
    if not delta_t > 0:
        raise RangeError(f"time step must be > 0, got {delta_t}", "temporal_resolution")
    return 1.0 / delta_t


def activity_window(stream: EventStream, meta: Optional[ExposureMeta], height: int) -> Tuple[float, float]:
    """Window a frame's activity is counted over: its exposure span, else the whole stream."""
    if meta is not None:
        return frame_exposure_span(meta, height)
    first, last = stream.span
    return float(first), float(last + 1)
