"""
Custom assertion helpers for HVS ISP tests
"""

from typing import Dict

import numpy as np

from src.data_models import EventStream, QuadBayerFrame, RgbImage


def assert_images_close(actual: RgbImage, expected: RgbImage, atol: float = 1e-6):
    """Assert two images share geometry, colorspace and samples"""
    assert actual.data.shape == expected.data.shape, \
        f"Shape mismatch: {actual.data.shape} vs {expected.data.shape}"
    assert actual.colorspace == expected.colorspace, \
        f"Colorspace mismatch: {actual.colorspace} vs {expected.colorspace}"
    worst = float(np.max(np.abs(actual.data - expected.data))) if actual.data.size else 0.0
    assert worst <= atol, f"Images differ by up to {worst:.3g} (tolerance {atol:.3g})"


def assert_frames_equal(actual: QuadBayerFrame, expected: QuadBayerFrame):
    """Assert two RAW frames are identical in samples and metadata"""
    assert actual.data.shape == expected.data.shape, "Mosaic geometry differs"
    assert np.array_equal(actual.data, expected.data), "Mosaic samples differ"
    assert actual.bit_depth == expected.bit_depth, "Bit depth differs"
    assert actual.pattern_phase == expected.pattern_phase, "Pattern phase differs"
    assert actual.channel_order == expected.channel_order, "Channel order differs"
    assert actual.holes_filled == expected.holes_filled, "Hole state differs"
    assert actual.exposure == expected.exposure, "Exposure metadata differs"


def assert_streams_equal(actual: EventStream, expected: EventStream):
    """Assert two event streams are identical"""
    assert (actual.width, actual.height) == (expected.width, expected.height), \
        f"Geometry differs: {actual.width}x{actual.height} vs {expected.width}x{expected.height}"
    for name in ("t", "x", "y", "p"):
        assert np.array_equal(getattr(actual, name), getattr(expected, name)), f"Field {name} differs"


def assert_valid_stage_stats(stats: Dict):
    """Assert every plane of a stage record carries ordered min/mean/max"""
    assert stats, "Stage statistics are empty"
    for plane, values in stats.items():
        assert set(values) == {"min", "max", "mean"}, f"Plane {plane} has keys {sorted(values)}"
        assert values["min"] <= values["mean"] <= values["max"], f"Plane {plane} statistics are not ordered"


def assert_stream_sorted(stream: EventStream):
    """Assert non-decreasing timestamps"""
    if len(stream) > 1:
        assert (np.diff(stream.t) >= 0).all(), "Event timestamps are not sorted"
