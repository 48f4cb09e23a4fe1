"""
Controllable ISP pipeline.

run_isp executes the stages in a fixed order:

    dark correction -> hole fill -> demosaic -> white balance
    -> highlight clip -> denoise -> CCM -> gamma

Each executed stage appends a StageRecord (timing, per-channel statistics and
stage details) to the StageReport, so a run can be audited stage by stage.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .calibration import apply_dark_correction
from .color import (
    apply_ccm, apply_wb, estimate_wb, extract_patches, fit_ccm, highlight_clip, patch_centers, srgb_encode,
)
from .data_models import (
    CheckerAnnotation, ColorSpace, DarkCalibration, DarkCalibrationLibrary, EventStream, FitReport, PatchColors,
    QuadBayerFrame, RgbImage, WbGains,
)
from .demosaic import demosaic, event_guided_direction, fill_event_holes
from .denoise import denoise, event_weight_map
from .errors import ConfigError, ShapeError
from .events import activity_map, activity_window
from .frame_io import read_ccm, read_dark_calibration, read_reference_checker
from .isp_config import IspConfig

logger = logging.getLogger(__name__)

STAGE_ORDER = ("dark", "holes", "demosaic", "wb", "highlight", "denoise", "ccm", "gamma")


@dataclass
class IspResources:
    """Files a configuration refers to, loaded once and reused across frames."""
    dark: Optional[Union[DarkCalibration, DarkCalibrationLibrary]] = None
    reference: Optional[PatchColors] = None
    ccm: Optional[np.ndarray] = None


def load_resources(config: IspConfig, calib_path: Optional[Union[str, Path]] = None,
                   reference_path: Optional[Union[str, Path]] = None,
                   ccm_path: Optional[Union[str, Path]] = None) -> IspResources:
    """Load calibration, reference chart and CCM files; explicit paths override the config."""
    resources = IspResources()

    if config.dark.enabled:
        path = calib_path or config.dark.calibration
        if path is None:
            raise ConfigError("dark correction is enabled but no calibration file was given", "dark")
        resources.dark = read_dark_calibration(path)

    if config.ccm.mode == "fit":
        path = reference_path or config.ccm.reference
        if path is not None:
            resources.reference = read_reference_checker(path)
    elif config.ccm.mode == "file":
        path = ccm_path or config.ccm.path
        if path is None:
            raise ConfigError("ccm mode 'file' needs ccm.path", "ccm")
        resources.ccm = read_ccm(path)
    return resources


@dataclass
class StageRecord:
    name: str
    elapsed_ms: float
    stats: Dict[str, Dict[str, float]]
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self, include_timing: bool = True) -> Dict:
        doc = {"name": self.name, "stats": self.stats, "details": self.details}
        if include_timing:
            doc["elapsed_ms"] = round(self.elapsed_ms, 3)
        return doc


@dataclass
class StageReport:
    """Per-stage audit trail of one run_isp call."""
    stages: List[StageRecord] = field(default_factory=list)
    wb_gains: Optional[WbGains] = None
    ccm: Optional[np.ndarray] = None
    fit: Optional[FitReport] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def stage_names(self) -> List[str]:
        return [stage.name for stage in self.stages]

    def warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)

    def to_dict(self, include_timing: bool = True) -> Dict:
        return {
            "stages": [stage.to_dict(include_timing) for stage in self.stages],
            "wb_gains": None if self.wb_gains is None else {
                "r": self.wb_gains.r, "g": self.wb_gains.g, "b": self.wb_gains.b},
            "ccm": None if self.ccm is None else np.asarray(self.ccm).tolist(),
            "fit": None if self.fit is None else self.fit.to_dict(),
            "warnings": list(self.warnings),
        }


def _stats(data: np.ndarray) -> Dict[str, Dict[str, float]]:
    if data.ndim == 2:
        planes = {"raw": data}
    else:
        planes = {name: data[..., i] for i, name in enumerate("rgb")}
    return {
        name: {"min": float(plane.min()), "max": float(plane.max()), "mean": float(plane.mean())}
        for name, plane in planes.items()
    }


def _check_inputs(config: IspConfig, ann: Optional[CheckerAnnotation], events: Optional[EventStream],
                  resources: IspResources, wb_gains: Optional[WbGains], ccm: Optional[np.ndarray]) -> None:
    if config.dark.enabled and resources.dark is None:
        raise ConfigError("dark correction is enabled but no calibration was loaded", "dark")
    if config.holes.guided and events is None:
        raise ConfigError("guided hole filling needs an event stream", "holes")
    if config.demosaic.event_guided and events is None:
        raise ConfigError("event-guided demosaicing needs an event stream", "demosaic")
    if config.wb.enabled and config.wb.mode == "checker" and wb_gains is None and ann is None:
        raise ConfigError("checker white balance needs a ColorChecker annotation", "wb")
    if config.denoise.event_weighted and config.denoise.method != "none" and events is None:
        raise ConfigError("event-weighted denoising needs an event stream", "denoise")
    if config.ccm.mode == "fit" and ccm is None:
        if ann is None:
            raise ConfigError("CCM fitting needs a ColorChecker annotation", "ccm")
        if resources.reference is None:
            raise ConfigError("CCM fitting needs a reference checker file (ccm.reference)", "ccm")
    if config.ccm.mode == "file" and ccm is None and resources.ccm is None:
        raise ConfigError("ccm mode 'file' needs a loaded matrix", "ccm")


def _select_dark(resources: IspResources, config: IspConfig, raw: QuadBayerFrame,
                 report: StageReport) -> DarkCalibration:
    dark = resources.dark
    if isinstance(dark, DarkCalibration):
        return dark
    exposure_time = config.dark.exposure_time
    if exposure_time is None and raw.exposure is not None:
        exposure_time = raw.exposure.exposure_time
    if exposure_time is None:
        raise ConfigError("a calibration library needs dark.exposure_time or frame exposure metadata", "dark")
    if float(exposure_time) not in dark.calibrations:
        report.warnings.append(f"no dark calibration for exposure {exposure_time:g} us; nearest one used")
    return dark.select(exposure_time)


def run_isp(raw: QuadBayerFrame, config: IspConfig, ann: Optional[CheckerAnnotation] = None,
            events: Optional[EventStream] = None, resources: Optional[IspResources] = None,
            wb_gains: Optional[WbGains] = None,
            ccm: Optional[np.ndarray] = None) -> Tuple[RgbImage, StageReport]:
    """Process one RAW frame into an encoded sRGB image.

    Args:
        raw: Quad-Bayer mosaic.
        config: Stage configuration.
        ann: ColorChecker annotation (checker WB and CCM fitting).
        events: Event stream aligned with the frame (guided fill, weighted denoise).
        resources: Pre-loaded files; loaded from the config when omitted.
        wb_gains: Frozen white balance gains, used instead of estimating them.
        ccm: Frozen colour correction matrix, used instead of fitting or loading one.

    Returns:
        Tuple of (sRGB RgbImage, StageReport)
    """
    raw.validate()
    config.validate()
    if resources is None:
        resources = load_resources(config)
    _check_inputs(config, ann, events, resources, wb_gains, ccm)

    report = StageReport()
    activity = None
    wants_activity = (config.holes.guided or config.demosaic.event_guided
                      or (config.denoise.event_weighted and config.denoise.method != "none"))
    if wants_activity:
        if (events.width * 2, events.height * 2) != (raw.width, raw.height):
            raise ShapeError(f"events {events.width}x{events.height} are not half of RAW {raw.width}x{raw.height}",
                             "events")
        window = activity_window(events, raw.exposure, raw.height)
        activity = activity_map(events, *window)

    def record(name: str, started: float, data: np.ndarray, **details) -> None:
        report.stages.append(StageRecord(name, (time.perf_counter() - started) * 1e3, _stats(data), details))

    frame = raw
    if config.dark.enabled:
        started = time.perf_counter()
        calib = _select_dark(resources, config, raw, report)
        frame = apply_dark_correction(frame, calib)
        record("dark", started, frame.data, blc=calib.blc, exposure_time=calib.exposure_time)

    started = time.perf_counter()
    guide = activity if config.holes.guided else None
    frame = fill_event_holes(frame, guide)
    record("holes", started, frame.data, guided=guide is not None)

    started = time.perf_counter()
    direction = None
    if config.demosaic.event_guided:
        direction = event_guided_direction(activity, frame.data.shape, config.demosaic.margin)
    img = demosaic(frame, config.demosaic.margin, direction)
    record("demosaic", started, img.data, margin=config.demosaic.margin, event_guided=direction is not None)

    centers = patch_centers(ann) if ann is not None else None

    if config.wb.enabled:
        started = time.perf_counter()
        if wb_gains is not None:
            gains, source = wb_gains, "frozen"
        elif config.wb.mode == "checker":
            gains, source = estimate_wb(extract_patches(img, centers)), "checker"
        else:
            r, _, b = config.wb.gains
            gains, source = WbGains(r=r, b=b), "fixed"
        img = apply_wb(img, gains)
        report.wb_gains = gains
        record("wb", started, img.data, source=source, gains=[gains.r, gains.g, gains.b])

    if config.highlight.enabled:
        started = time.perf_counter()
        img = highlight_clip(img, config.highlight.fraction)
        record("highlight", started, img.data, fraction=config.highlight.fraction)

    if config.denoise.method != "none":
        started = time.perf_counter()
        weight = None
        if config.denoise.event_weighted:
            weight = event_weight_map(activity, config.denoise.decay, img.data.shape[:2])
        img = denoise(img, config.denoise.method, config.denoise.sigma, weight)
        record("denoise", started, img.data, method=config.denoise.method, sigma=config.denoise.sigma,
               event_weighted=weight is not None)

    if config.ccm.mode != "identity":
        started = time.perf_counter()
        if ccm is not None:
            matrix, source = np.asarray(ccm, dtype=np.float64), "frozen"
        elif config.ccm.mode == "file":
            matrix, source = resources.ccm, "file"
        else:
            measured = extract_patches(img, centers, config.ccm.window_fraction)
            matrix, fit = fit_ccm(measured, resources.reference, white_preserve=config.ccm.white_preserve,
                                  exposure_normalize=config.ccm.exposure_normalize)
            report.fit = fit
            report.warnings.extend(fit.warnings)
            source = "fit"
        img = apply_ccm(img, matrix)
        report.ccm = matrix
        record("ccm", started, img.data, source=source)

    if config.gamma.enabled:
        started = time.perf_counter()
        img = RgbImage(srgb_encode(img.data), ColorSpace.SRGB)
        record("gamma", started, img.data)
    else:
        img = RgbImage(img.data, ColorSpace.SRGB)
        report.warn("gamma disabled; linear values are tagged sRGB for output")

    logger.info(f"ISP run finished: {' -> '.join(report.stage_names)}")
    return img, report
