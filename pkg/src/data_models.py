"""
Data models for the HVS controllable ISP.

Frames, event streams and checker annotations are kept as small dataclasses
around numpy arrays; every type validates its own invariants so readers and
pipeline stages can rely on them.
"""

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Tuple

import logging

import numpy as np

from .errors import AnnotationError, EmptyInputError, InvariantError, OrderError, RangeError

logger = logging.getLogger(__name__)


CHECKER_LABELS = ("brown", "cyan", "white", "black")
NUM_PATCHES = 24
GRAY_PATCH_INDEX = 20  # patch 21 in 1-based chart order


class PatternPhase(IntEnum):
    """Position of the event-pixel hole inside each 2x2 block."""
    TOP_LEFT = 0
    TOP_RIGHT = 1
    BOTTOM_LEFT = 2
    BOTTOM_RIGHT = 3

    @property
    def offset(self) -> Tuple[int, int]:
        """(row, col) of the hole within its block."""
        return divmod(int(self), 2)


class Direction(IntEnum):
    """Interpolation preference for a pixel."""
    NONE = 0
    HORIZONTAL = 1
    VERTICAL = 2


class ColorSpace(str, Enum):
    LINEAR = "linear"
    SRGB = "srgb"


@dataclass(frozen=True)
class ExposureMeta:
    """Rolling-shutter timing of a frame, all values in microseconds."""
    frame_start: float = 0.0
    row_readout_delta: float = 0.0
    exposure_time: float = 1.0

    def __post_init__(self):
        if not self.exposure_time > 0:
            raise InvariantError(f"exposure_time must be > 0, got {self.exposure_time}", "exposure")
        if self.row_readout_delta < 0:
            raise InvariantError(f"row_readout_delta must be >= 0, got {self.row_readout_delta}", "exposure")


@dataclass
class QuadBayerFrame:
    """Single-channel RAW mosaic with one event-pixel hole per 2x2 block."""
    data: np.ndarray
    bit_depth: int = 10
    pattern_phase: PatternPhase = PatternPhase.BOTTOM_RIGHT
    channel_order: str = "RGB"
    exposure: Optional[ExposureMeta] = None
    holes_filled: bool = False

    def __post_init__(self):
        self.pattern_phase = PatternPhase(self.pattern_phase)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1

    def validate(self) -> "QuadBayerFrame":
        """Check every structural invariant; returns self for chaining."""
        if not 1 <= self.bit_depth <= 16:
            raise InvariantError(f"bit_depth must be in 1..16, got {self.bit_depth}", "frame")
        if self.data.ndim != 2:
            raise InvariantError(f"mosaic must be 2-D, got shape {self.data.shape}", "frame")
        if self.width % 2 or self.height % 2:
            raise InvariantError(f"width and height must be even, got {self.width}x{self.height}", "frame")
        if not np.issubdtype(self.data.dtype, np.integer):
            raise InvariantError(f"mosaic samples must be integers, got {self.data.dtype}", "frame")
        if sorted(self.channel_order) != ["B", "G", "R"]:
            raise InvariantError(f"channel_order must be a permutation of RGB, got {self.channel_order!r}", "frame")
        if self.data.size and (self.data.min() < 0 or self.data.max() > self.max_value):
            raise RangeError(f"samples must lie in [0, {self.max_value}] for bit_depth={self.bit_depth}", "frame")
        return self

    def with_data(self, data: np.ndarray, **changes) -> "QuadBayerFrame":
        """Copy of this frame with new samples and optionally changed fields."""
        fields = dict(
            bit_depth=self.bit_depth,
            pattern_phase=self.pattern_phase,
            channel_order=self.channel_order,
            exposure=self.exposure,
            holes_filled=self.holes_filled,
        )
        fields.update(changes)
        return QuadBayerFrame(data=data, **fields)


@dataclass
class EventStream:
    """Time-ordered events at event-sensor resolution."""
    width: int
    height: int
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int8)

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def span(self) -> Tuple[int, int]:
        """(first, last) timestamp; (0, 0) for an empty stream."""
        if not len(self):
            return (0, 0)
        return (int(self.t[0]), int(self.t[-1]))

    def select(self, mask: np.ndarray) -> "EventStream":
        return EventStream(self.width, self.height, self.t[mask], self.x[mask], self.y[mask], self.p[mask])

    def validate(self) -> "EventStream":
        n = self.t.size
        if not (self.x.size == self.y.size == self.p.size == n):
            raise InvariantError("event field arrays differ in length", "events")
        if self.width <= 0 or self.height <= 0:
            raise InvariantError(f"invalid event geometry {self.width}x{self.height}", "events")
        if n == 0:
            return self
        if not np.isin(self.p, (-1, 1)).all():
            raise RangeError("polarity must be -1 or +1", "events")
        if (self.x < 0).any() or (self.x >= self.width).any() or (self.y < 0).any() or (self.y >= self.height).any():
            raise RangeError(f"event coordinates outside {self.width}x{self.height}", "events")
        if (self.t < 0).any():
            raise RangeError("timestamps must be non-negative", "events")
        if (np.diff(self.t) < 0).any():
            raise OrderError("timestamps are not sorted", "events")
        return self


@dataclass
class CheckerAnnotation:
    """Four labelled ColorChecker corner-patch centres in image coordinates."""
    corners: Dict[str, Tuple[float, float]]
    image_width: int
    image_height: int

    def validate(self) -> "CheckerAnnotation":
        for label in CHECKER_LABELS:
            if label not in self.corners:
                raise AnnotationError(label, "annotation")
        for label in CHECKER_LABELS:
            x, y = self.corners[label]
            if not (np.isfinite(x) and np.isfinite(y)):
                raise AnnotationError(f"{label} point is not finite", "annotation")
            if not (0 <= x <= self.image_width - 1 and 0 <= y <= self.image_height - 1):
                raise AnnotationError(f"{label} point ({x}, {y}) outside image", "annotation")

        # brown -> cyan -> black -> white walks the chart outline
        quad = np.array([self.corners[k] for k in ("brown", "cyan", "black", "white")], dtype=np.float64)
        for i in range(4):
            for j in range(i + 1, 4):
                if np.allclose(quad[i], quad[j]):
                    raise AnnotationError("degenerate: coincident corners", "annotation")
        xs, ys = quad[:, 0], quad[:, 1]
        area = 0.5 * abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1)))
        if area <= 1e-9:
            raise AnnotationError("degenerate: zero-area quad", "annotation")
        return self


@dataclass
class RgbImage:
    """(H, W, 3) float image tagged with its colorspace."""
    data: np.ndarray
    colorspace: ColorSpace = ColorSpace.LINEAR

    def __post_init__(self):
        self.colorspace = ColorSpace(self.colorspace)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    def validate(self) -> "RgbImage":
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise InvariantError(f"RGB image must be (H, W, 3), got {self.data.shape}", "image")
        if not np.isfinite(self.data).all():
            raise RangeError("image contains non-finite samples", "image")
        return self


@dataclass
class DarkCalibration:
    """Global black level plus per-row fixed-pattern offsets, in sensor counts."""
    blc: float
    fpn: np.ndarray
    exposure_time: Optional[float] = None

    def __post_init__(self):
        self.fpn = np.asarray(self.fpn, dtype=np.float64)
        if self.blc < 0:
            raise InvariantError(f"blc must be >= 0, got {self.blc}", "calibration")
        if self.fpn.ndim != 1:
            raise InvariantError("fpn must be a vector", "calibration")
        if (self.fpn < 0).any():
            raise InvariantError("fpn values must be >= 0", "calibration")

    @property
    def height(self) -> int:
        return int(self.fpn.size)

    def to_dict(self) -> Dict:
        doc = {"blc": float(self.blc), "fpn": [float(v) for v in self.fpn]}
        if self.exposure_time is not None:
            doc["exposure_time"] = float(self.exposure_time)
        return doc


@dataclass
class DarkCalibrationLibrary:
    """Dark calibrations keyed by exposure time (microseconds)."""
    calibrations: Dict[float, DarkCalibration] = field(default_factory=dict)

    def add(self, calib: DarkCalibration) -> None:
        if calib.exposure_time is None:
            raise InvariantError("library entries need an exposure_time", "calibration")
        self.calibrations[float(calib.exposure_time)] = calib

    def select(self, exposure_time: float) -> DarkCalibration:
        """Calibration for an exposure time, falling back to the nearest one."""
        if not self.calibrations:
            raise EmptyInputError("calibration library is empty", "calibration")
        key = float(exposure_time)
        if key in self.calibrations:
            return self.calibrations[key]
        nearest = min(self.calibrations, key=lambda t: (abs(t - key), t))
        logger.warning(f"No dark calibration for exposure {key:g} us, using nearest ({nearest:g} us)")
        return self.calibrations[nearest]

    def to_dict(self) -> Dict:
        return {"calibrations": [self.calibrations[t].to_dict() for t in sorted(self.calibrations)]}


@dataclass
class PatchColors:
    """24 ColorChecker patch colours, row-major chart order."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (NUM_PATCHES, 3):
            raise InvariantError(f"expected {NUM_PATCHES} RGB patches, got shape {self.values.shape}", "patches")
        if not np.isfinite(self.values).all():
            raise RangeError("patch colours must be finite", "patches")
        if (self.values < 0).any():
            raise RangeError("patch colours must be >= 0", "patches")

    @property
    def gray(self) -> np.ndarray:
        return self.values[GRAY_PATCH_INDEX]


@dataclass(frozen=True)
class WbGains:
    """Green-anchored white balance gains."""
    r: float
    b: float
    g: float = 1.0

    def __post_init__(self):
        if self.g != 1.0:
            raise InvariantError("green gain is anchored at 1", "wb")
        if not (self.r > 0 and self.b > 0):
            raise InvariantError(f"gains must be positive, got r={self.r} b={self.b}", "wb")

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=np.float64)


@dataclass
class FitReport:
    """Outcome of a CCM fit."""
    initial_objective: float
    final_objective: float
    identity_objective: float
    iterations: int
    converged: bool
    exposure_scale: float = 1.0
    white_preserve: bool = False
    clamped: bool = True
    mean_delta_e00: float = 0.0
    max_delta_e00: float = 0.0
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "initial_objective": float(self.initial_objective),
            "final_objective": float(self.final_objective),
            "identity_objective": float(self.identity_objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "exposure_scale": float(self.exposure_scale),
            "white_preserve": bool(self.white_preserve),
            "clamped": bool(self.clamped),
            "mean_delta_e00": float(self.mean_delta_e00),
            "max_delta_e00": float(self.max_delta_e00),
            "warnings": list(self.warnings),
        }


@dataclass
class VoxelGrid:
    """Signed event polarity accumulated into B temporal bins."""
    values: np.ndarray  # float32 [bins][y][x]

    @property
    def bins(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])


@dataclass
class EventActivity:
    """Per-pixel event counts over a half-open time window."""
    counts: np.ndarray
    window: Tuple[float, float]

    def __post_init__(self):
        if not self.window[1] > self.window[0]:
            raise InvariantError(f"activity window must have t1 > t0, got {self.window}", "activity")
        if (self.counts < 0).any():
            raise InvariantError("activity counts must be >= 0", "activity")

    @property
    def height(self) -> int:
        return int(self.counts.shape[0])

    @property
    def width(self) -> int:
        return int(self.counts.shape[1])


@dataclass
class EventRateSeries:
    """Global event counts per fixed-width time bin."""
    bin_start: np.ndarray
    counts: np.ndarray
    bin_width: float

    def __len__(self) -> int:
        return int(self.counts.size)

    @property
    def rates(self) -> np.ndarray:
        """Events per microsecond."""
        return self.counts / float(self.bin_width)

    @property
    def rates_per_second(self) -> np.ndarray:
        return self.rates * 1e6


@dataclass
class FlickerReport:
    dominant_frequency: float
    periodicity_score: float
    bin_width: float
    bins: int = 0
    threshold: float = 0.3

    @property
    def is_flickering(self) -> bool:
        return self.periodicity_score > self.threshold

    def to_dict(self) -> Dict:
        return {
            "dominant_frequency": float(self.dominant_frequency),
            "periodicity_score": float(self.periodicity_score),
            "bin_width": float(self.bin_width),
            "bins": int(self.bins),
            "is_flickering": self.is_flickering,
        }
