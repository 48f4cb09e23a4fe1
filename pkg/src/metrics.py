"""
Image-quality and colour-accuracy measurement.

PSNR and SSIM come from scikit-image; colour accuracy is CIEDE2000 / CIE76
between extracted ColorChecker patches and a reference chart, and temporal
stability tracks encoded patch values across a frame sequence. Reports turn
into pandas tables for CSV output.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from skimage.metrics import mean_squared_error, peak_signal_noise_ratio, structural_similarity

from .color import extract_patches, linear_to_lab, patch_centers, patch_delta_e, patch_means, srgb_encode
from .data_models import NUM_PATCHES, CheckerAnnotation, ColorSpace, PatchColors, RgbImage
from .errors import ConfigError, EmptyInputError, InsufficientDataError, ShapeError

logger = logging.getLogger(__name__)

METRICS = ("psnr", "ssim", "l1")
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
ALL_SCENES = "All-Average"


def _pair(a: RgbImage, b: RgbImage, stage: str) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a.data, dtype=np.float64)
    y = np.asarray(b.data, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {y.shape}", stage)
    return x, y


def psnr(a: RgbImage, b: RgbImage, peak: float = 1.0) -> float:
    """PSNR in dB over all channels; identical images give math.inf."""
    x, y = _pair(a, b, "psnr")
    if mean_squared_error(x, y) == 0:
        return math.inf
    return float(peak_signal_noise_ratio(x, y, data_range=peak))


def ssim(a: RgbImage, b: RgbImage) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5, range 1), averaged over channels."""
    x, y = _pair(a, b, "ssim")
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {x.shape[1]}x{x.shape[0]}",
                         "ssim")
    return float(structural_similarity(
        x, y,
        data_range=1.0,
        channel_axis=-1,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
    ))


def l1(a: RgbImage, b: RgbImage) -> float:
    x, y = _pair(a, b, "l1")
    return float(np.mean(np.abs(x - y)))


def image_quality(pred: RgbImage, ref: RgbImage, metrics: Sequence[str] = METRICS,
                  peak: float = 1.0) -> Dict[str, float]:
    """Selected full-reference metrics of one prediction."""
    unknown = [name for name in metrics if name not in METRICS]
    if unknown:
        raise ConfigError(f"unknown metric(s) {', '.join(unknown)}; expected {', '.join(METRICS)}", "metrics")
    results = {}
    for name in metrics:
        if name == "psnr":
            results[name] = psnr(pred, ref, peak)
        elif name == "ssim":
            results[name] = ssim(pred, ref)
        else:
            results[name] = l1(pred, ref)
    return results


def _finite_mean(values: pd.Series) -> float:
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if len(finite) else math.inf


def summarize_by_scene(rows: Iterable[Dict]) -> pd.DataFrame:
    """Average metrics per scene tag plus an overall row.

    Infinite PSNR values are left out of the mean; a group whose PSNRs are
    all infinite keeps inf.
    """
    df = pd.DataFrame(list(rows))
    if df.empty:
        raise EmptyInputError("no metric rows to summarize", "metrics")
    if "scene" not in df.columns:
        df["scene"] = "unlabelled"
    df["scene"] = df["scene"].fillna("unlabelled")
    columns = [name for name in METRICS if name in df.columns]

    def aggregate(group: pd.DataFrame) -> Dict:
        summary = {"count": int(len(group))}
        for name in columns:
            summary[name] = _finite_mean(group[name]) if name == "psnr" else float(group[name].mean())
        return summary

    records = []
    for scene, group in df.groupby("scene", sort=True):
        records.append({"scene": scene, **aggregate(group)})
    records.append({"scene": ALL_SCENES, **aggregate(df)})
    return pd.DataFrame(records, columns=["scene", "count"] + columns)


@dataclass
class ColorAccuracyReport:
    """Per-frame, per-patch colour differences against the reference chart."""
    delta_e00: np.ndarray  # (frames, 24)
    delta_e_ab: np.ndarray
    labels: List[str] = field(default_factory=list)

    @property
    def frames(self) -> int:
        return int(self.delta_e00.shape[0])

    def aggregates(self) -> Dict[str, float]:
        return {
            "mean_de00": float(self.delta_e00.mean()),
            "median_de00": float(np.median(self.delta_e00)),
            "mean_max_de00": float(self.delta_e00.max(axis=1).mean()),
            "max_de00": float(self.delta_e00.max()),
            "mean_deab": float(self.delta_e_ab.mean()),
            "median_deab": float(np.median(self.delta_e_ab)),
            "mean_max_deab": float(self.delta_e_ab.max(axis=1).mean()),
            "frames": self.frames,
            "patches": int(self.delta_e00.shape[1]),
        }

    def to_frame(self) -> pd.DataFrame:
        labels = self.labels or [str(i) for i in range(self.frames)]
        return pd.DataFrame({
            "frame": np.repeat(labels, NUM_PATCHES),
            "patch": np.tile(np.arange(1, NUM_PATCHES + 1), self.frames),
            "delta_e00": self.delta_e00.ravel(),
            "delta_e_ab": self.delta_e_ab.ravel(),
        })


def frame_color_error(img: RgbImage, ann: CheckerAnnotation, reference: PatchColors,
                      window_fraction: float = 0.25,
                      reference_lab: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(CIEDE2000, CIE76) per patch of one annotated frame."""
    measured = extract_patches(img, patch_centers(ann), window_fraction)
    return patch_delta_e(measured.values, reference.values, reference_lab)


def color_accuracy(frames: Sequence[Tuple[RgbImage, CheckerAnnotation]], reference: PatchColors,
                   window_fraction: float = 0.25, labels: Optional[List[str]] = None) -> ColorAccuracyReport:
    """Colour error of every annotated frame against the reference chart."""
    if not frames:
        raise EmptyInputError("no frames to evaluate", "color_accuracy")
    reference_lab = linear_to_lab(reference.values)
    de00, deab = [], []
    for img, ann in frames:
        e00, eab = frame_color_error(img, ann, reference, window_fraction, reference_lab)
        de00.append(e00)
        deab.append(eab)
    report = ColorAccuracyReport(np.vstack(de00), np.vstack(deab), list(labels or []))
    logger.info(f"Colour accuracy over {report.frames} frame(s): mean dE00 {report.aggregates()['mean_de00']:.3f}")
    return report


@dataclass
class StabilityReport:
    """Encoded patch colours over time."""
    series: np.ndarray  # (frames, 24, 3)
    labels: List[str] = field(default_factory=list)

    @property
    def frames(self) -> int:
        return int(self.series.shape[0])

    @property
    def max_diff(self) -> np.ndarray:
        """Largest frame-to-frame change of any channel, per patch."""
        return np.abs(np.diff(self.series, axis=0)).max(axis=(0, 2))

    @property
    def overall_max(self) -> float:
        return float(self.max_diff.max())

    def aggregates(self) -> Dict:
        return {
            "frames": self.frames,
            "max_diff": [float(v) for v in self.max_diff],
            "overall_max": self.overall_max,
        }

    def to_frame(self) -> pd.DataFrame:
        labels = self.labels or [str(i) for i in range(self.frames)]
        flat = self.series.reshape(-1, 3)
        return pd.DataFrame({
            "frame": np.repeat(labels, NUM_PATCHES),
            "patch": np.tile(np.arange(1, NUM_PATCHES + 1), self.frames),
            "r": flat[:, 0],
            "g": flat[:, 1],
            "b": flat[:, 2],
        })


def encoded_patch_values(img: RgbImage, ann: CheckerAnnotation, window_fraction: float = 0.25) -> np.ndarray:
    data = img.data if img.colorspace == ColorSpace.SRGB else srgb_encode(img.data)
    return patch_means(data, patch_centers(ann), window_fraction)


def temporal_stability(frames: Sequence[Tuple[RgbImage, CheckerAnnotation]], window_fraction: float = 0.25,
                       labels: Optional[List[str]] = None) -> StabilityReport:
    """Per-patch encoded sRGB means over a frame sequence."""
    if len(frames) < 2:
        raise InsufficientDataError(f"stability needs at least 2 frames, got {len(frames)}", "stability")
    series = np.stack([encoded_patch_values(img, ann, window_fraction) for img, ann in frames])
    return StabilityReport(series, list(labels or []))


def json_safe(value):
    """Recursively convert numpy scalars/arrays and infinities into JSON-friendly values."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
    return value
