"""
Batch evaluation over manifests.

A manifest is a JSON list of entries, either annotated frames
({"frame", "annotation"}) for colour reports or prediction/reference pairs
({"pred", "ref", "scene"?}) for image-quality evaluation. Entries are
processed in parallel and the results are put back in manifest order, so the
aggregates never depend on which worker finished first.
"""

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .data_models import PatchColors
from .errors import EmptyInputError, HvsIspError, InsufficientDataError, ParseError
from .frame_io import read_checker_annotation, read_json, read_rgb_png
from .metrics import (
    METRICS, ColorAccuracyReport, StabilityReport, encoded_patch_values, frame_color_error, image_quality,
    summarize_by_scene,
)

logger = logging.getLogger(__name__)

FRAME_KEYS = ("frame", "annotation")
PAIR_KEYS = ("pred", "ref")


def load_manifest(path: Union[str, Path], kind: str = "frames") -> List[Dict]:
    """Read a manifest and resolve its paths against the manifest directory.

    Args:
        path: Manifest JSON file.
        kind: "frames" for {"frame", "annotation"} entries, "pairs" for {"pred", "ref"}.

    Returns:
        List of entry dicts with absolute paths and a "label"
    """
    path = Path(path)
    document = read_json(path, stage="manifest")
    if not isinstance(document, list) or not document:
        raise ParseError(f"{path}: manifest must be a non-empty JSON list", "manifest")

    required = FRAME_KEYS if kind == "frames" else PAIR_KEYS
    base = path.parent
    entries = []
    for i, item in enumerate(document):
        if not isinstance(item, dict):
            raise ParseError(f"{path}: entry {i} is not an object", "manifest")
        missing = [key for key in required if key not in item]
        if missing:
            raise ParseError(f"{path}: entry {i} is missing {', '.join(missing)}", "manifest")
        entry = dict(item)
        for key in required:
            entry[key] = str(base / item[key])
        entry.setdefault("label", Path(item[required[0]]).stem)
        entries.append(entry)
    logger.info(f"Loaded {len(entries)} manifest entries from {path}")
    return entries


def _color_entry(entry: Dict, reference: np.ndarray, window_fraction: float) -> Dict:
    img = read_rgb_png(entry["frame"])
    ann = read_checker_annotation(entry["annotation"])
    de00, deab = frame_color_error(img, ann, PatchColors(reference), window_fraction)
    return {"delta_e00": de00, "delta_e_ab": deab}


def _stability_entry(entry: Dict, window_fraction: float) -> Dict:
    img = read_rgb_png(entry["frame"])
    ann = read_checker_annotation(entry["annotation"])
    return {"values": encoded_patch_values(img, ann, window_fraction)}


def _quality_entry(entry: Dict, metrics: Sequence[str], peak: float) -> Dict:
    scores = image_quality(read_rgb_png(entry["pred"]), read_rgb_png(entry["ref"]), metrics, peak)
    return {"scene": entry.get("scene"), **scores}


def _run_entry(func: Callable, entry: Dict, args: tuple) -> Dict:
    result = {"label": entry["label"], "success": False, "message": "", "processing_time": 0.0}
    start_time = time.time()
    try:
        result.update(func(entry, *args))
        result["success"] = True
    except HvsIspError as e:
        result["message"] = str(e)
        result["error"] = e
    except OSError as e:
        result["message"] = f"Error: {e}"
        result["error"] = e
    finally:
        result["processing_time"] = time.time() - start_time
    return result


class BatchConfig:
    """Configuration for batch evaluation."""

    def __init__(self, **kwargs):
        env_threads = os.getenv("HVSISP_THREADS")
        default_workers = int(env_threads) if env_threads else (os.cpu_count() or 1)
        self.max_workers = max(1, int(kwargs.get("max_workers", default_workers)))
        self.parallel_processing = kwargs.get("parallel_processing", True)
        self.window_fraction = kwargs.get("window_fraction", 0.25)
        # re-raise the first failed entry instead of only recording it
        self.strict = kwargs.get("strict", True)

    def to_dict(self):
        return {
            "max_workers": self.max_workers,
            "parallel_processing": self.parallel_processing,
            "window_fraction": self.window_fraction,
            "strict": self.strict,
        }


class BatchProcessor:
    """Evaluates manifest entries in a process pool."""

    def __init__(self, config: Optional[BatchConfig] = None):
        self.config = config or BatchConfig()
        self.results: List[Dict] = []

    def process_entries(self, func: Callable, entries: List[Dict], *args,
                        progress_callback: Optional[Callable] = None) -> List[Dict]:
        """Apply func to every entry; results come back in manifest order."""
        results: List[Optional[Dict]] = [None] * len(entries)

        if self.config.parallel_processing and len(entries) > 1 and self.config.max_workers > 1:
            with ProcessPoolExecutor(max_workers=self.config.max_workers) as executor:
                future_to_index = {
                    executor.submit(_run_entry, func, entry, args): i
                    for i, entry in enumerate(entries)
                }
                for done, future in enumerate(as_completed(future_to_index), start=1):
                    i = future_to_index[future]
                    try:
                        results[i] = future.result()
                    except Exception as e:
                        results[i] = {"label": entries[i]["label"], "success": False,
                                      "message": f"Processing error: {e}", "error": e}
                    if progress_callback:
                        progress_callback(done, len(entries))
        else:
            for done, entry in enumerate(entries, start=1):
                results[done - 1] = _run_entry(func, entry, args)
                if progress_callback:
                    progress_callback(done, len(entries))

        self.results = results
        failures = [r for r in results if not r["success"]]
        for failure in failures:
            logger.error(f"Entry {failure['label']} failed: {failure['message']}")
        if failures and self.config.strict:
            raise failures[0]["error"]
        return results

    def _successful(self) -> List[Dict]:
        done = [r for r in self.results if r["success"]]
        if not done:
            raise EmptyInputError("no manifest entry could be evaluated", "batch")
        return done

    def color_accuracy(self, entries: List[Dict], reference: PatchColors) -> ColorAccuracyReport:
        self.process_entries(_color_entry, entries, reference.values, self.config.window_fraction)
        done = self._successful()
        return ColorAccuracyReport(
            np.vstack([r["delta_e00"] for r in done]),
            np.vstack([r["delta_e_ab"] for r in done]),
            [r["label"] for r in done],
        )

    def stability(self, entries: List[Dict]) -> StabilityReport:
        if len(entries) < 2:
            raise InsufficientDataError(f"stability needs at least 2 frames, got {len(entries)}", "stability")
        self.process_entries(_stability_entry, entries, self.config.window_fraction)
        done = self._successful()
        return StabilityReport(np.stack([r["values"] for r in done]), [r["label"] for r in done])

    def image_quality(self, entries: List[Dict], metrics: Sequence[str] = METRICS,
                      peak: float = 1.0) -> pd.DataFrame:
        """One row per pair with the requested metrics."""
        self.process_entries(_quality_entry, entries, tuple(metrics), peak)
        rows = [{"label": r["label"], "scene": r["scene"], **{m: r[m] for m in metrics}}
                for r in self._successful()]
        return pd.DataFrame(rows, columns=["label", "scene"] + list(metrics))

    def scene_summary(self, rows: pd.DataFrame) -> pd.DataFrame:
        return summarize_by_scene(rows.to_dict("records"))

    def generate_summary_report(self) -> Dict:
        """Success counts and timing of the last batch."""
        if not self.results:
            return {}
        successful = sum(1 for r in self.results if r["success"])
        total_time = sum(r.get("processing_time", 0) for r in self.results)
        summary = {
            "total_entries": len(self.results),
            "successful_entries": successful,
            "failed_entries": len(self.results) - successful,
            "total_processing_time": total_time,
            "configuration": self.config.to_dict(),
        }
        if summary["failed_entries"]:
            summary["failures"] = {r["label"]: r["message"] for r in self.results if not r["success"]}
        return summary
