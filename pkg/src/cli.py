#!/usr/bin/env python3
"""
Command-line front end of the HVS ISP.

Usage:
    hvsisp calibrate-dark dark_*.pgm --out dark.json
    hvsisp run frame.pgm --config config/isp_config.yaml --checker frame.json --out frame.png --report run.json
    hvsisp ccm-fit measured.json config/colorchecker_reference.json --out ccm.json
    hvsisp events flicker stream.evt --bin-width 1000
    hvsisp eval pred.png ref.png --metrics psnr,ssim,l1
    hvsisp report color-accuracy --reference config/colorchecker_reference.json --manifest m.json \\
        --out-csv de.csv --out-json de.json

Exit codes: 0 success, 1 input or configuration error, 2 internal error.
With --json every command prints one JSON document on stdout.
"""

import argparse
import json
import logging
import os
import sys
from collections import defaultdict
from typing import Dict, List, Optional

import pandas as pd
from dotenv import load_dotenv

from .batch_processor import BatchConfig, BatchProcessor, load_manifest
from .calibration import RECOMMENDED_DARK_FRAMES, calibrate_dark, calibrate_dark_library, merge_into_library
from .color import fit_ccm
from .data_models import DarkCalibration
from .errors import ConfigError, HvsIspError
from .events import (
    DEFAULT_FLICKER_BIN_US, DEFAULT_LOG_FLOOR, activity_map, event_rate, events_from_frames, flicker_score,
    illumination_changes, smooth_rate, voxelize,
)
from .frame_io import (
    atomic_write_text, read_checker_annotation, read_dark_calibration, read_events, read_patch_colors, read_raw,
    read_reference_checker, read_rgb_png, write_ccm, write_dark_calibration, write_events, write_json, write_rgb_png,
    write_voxel,
)
from .isp_config import load_isp_config
from .metrics import METRICS, image_quality, json_safe
from .pipeline import load_resources, run_isp

logger = logging.getLogger(__name__)


def _write_csv(df: pd.DataFrame, path: str) -> None:
    atomic_write_text(path, df.to_csv(index=False))


def cmd_calibrate_dark(args) -> Dict:
    frames = [read_raw(path) for path in args.raw]
    warnings = []
    if frames and len(frames) < RECOMMENDED_DARK_FRAMES:
        warnings.append(f"only {len(frames)} dark frame(s); at least {RECOMMENDED_DARK_FRAMES} are recommended")

    if args.library or args.append:
        groups = defaultdict(list)
        for path, frame in zip(args.raw, frames):
            exposure_time = frame.exposure.exposure_time if frame.exposure is not None else args.exposure_time
            if exposure_time is None:
                raise ConfigError(f"{path} has no exposure metadata; pass --exposure-time", "calibrate_dark")
            groups[float(exposure_time)].append(frame)
        calib = calibrate_dark_library(dict(groups))
        if args.append and os.path.exists(args.out):
            existing = read_dark_calibration(args.out)
            if isinstance(existing, DarkCalibration):
                if existing.exposure_time is None:
                    raise ConfigError(f"{args.out} holds a calibration without exposure time; "
                                      "it cannot join a library", "calibrate_dark")
                existing = merge_into_library(None, [existing])
            replaced = sorted(set(existing.calibrations) & set(calib.calibrations))
            if replaced:
                warnings.append(f"replaced calibrations for exposure time(s) {', '.join(map(str, replaced))}")
            logger.info(f"Appending {len(calib.calibrations)} calibration(s) to {args.out}")
            calib = merge_into_library(existing, calib.calibrations.values())
        summary = {"calibrations": [{"exposure_time": t, "blc": c.blc} for t, c in sorted(calib.calibrations.items())]}
    else:
        calib = calibrate_dark(frames, exposure_time=args.exposure_time)
        summary = {"blc": calib.blc, "fpn_max": float(calib.fpn.max()) if calib.fpn.size else 0.0}

    write_dark_calibration(calib, args.out)
    return {"out": args.out, "frames": len(frames), **summary, "warnings": warnings}


def cmd_run(args) -> Dict:
    raw = read_raw(args.raw)
    config = load_isp_config(args.config)
    if args.calib:
        config = config.with_overrides(dark={"enabled": True})
    if args.ccm:
        config = config.with_overrides(ccm={"mode": "file"})
    resources = load_resources(config, calib_path=args.calib, reference_path=args.reference, ccm_path=args.ccm)
    ann = read_checker_annotation(args.checker) if args.checker else None
    events = read_events(args.events) if args.events else None

    img, report = run_isp(raw, config, ann=ann, events=events, resources=resources)
    write_rgb_png(img, args.out)
    if args.report:
        write_json(args.report, json_safe(report.to_dict()))

    document = report.to_dict()
    return {
        "out": args.out,
        "stages": report.stage_names,
        "wb_gains": document["wb_gains"],
        "ccm": document["ccm"],
        "fit": document["fit"],
        "warnings": report.warnings,
    }


def cmd_ccm_fit(args) -> Dict:
    measured = read_patch_colors(args.measured)
    reference = read_reference_checker(args.reference)
    matrix, report = fit_ccm(measured, reference, white_preserve=args.white_preserve,
                             exposure_normalize=not args.no_exposure_normalize)
    write_ccm(matrix, args.out, report)
    return {"out": args.out, "matrix": matrix.tolist(), "fit": report.to_dict()}


def cmd_events(args) -> Dict:
    if args.events_command == "simulate":
        frame0, frame1 = read_rgb_png(args.frame0), read_rgb_png(args.frame1)
        stream = events_from_frames(frame0, frame1, args.theta, args.t0, args.t1, floor=args.log_floor)
        write_events(stream, args.out)
        return {"out": args.out, "events": len(stream), "width": stream.width, "height": stream.height}

    stream = read_events(args.events)
    if args.events_command == "voxelize":
        grid = voxelize(stream, args.t0, args.t1, args.bins)
        write_voxel(grid, args.out)
        return {"out": args.out, "bins": grid.bins, "signed_mass": float(grid.values.sum(dtype="float64"))}

    if args.events_command == "activity":
        activity = activity_map(stream, args.t0, args.t1)
        _write_csv(pd.DataFrame(activity.counts.astype("int64")), args.out)
        return {"out": args.out, "total": int(activity.counts.sum())}

    if args.events_command == "rate":
        series = event_rate(stream, args.bin_width)
        table = pd.DataFrame({
            "bin_start_us": series.bin_start,
            "count": series.counts,
            "rate_per_second": series.rates_per_second,
        })
        if args.smooth_period:
            table["smoothed_rate_per_second"] = smooth_rate(series, args.smooth_period).rates_per_second
        _write_csv(table, args.out)
        return {"out": args.out, "bins": len(series)}

    if args.events_command == "flicker":
        return flicker_score(stream, args.bin_width).to_dict()

    changes = illumination_changes(stream, args.bin_width, ratio=args.ratio)
    return {"changes": changes, "count": len(changes)}


def _metric_list(text: str) -> List[str]:
    names = [name.strip() for name in text.split(",") if name.strip()]
    unknown = [name for name in names if name not in METRICS]
    if unknown or not names:
        raise ConfigError(f"unknown metric(s) {', '.join(unknown) or text!r}; expected {', '.join(METRICS)}",
                          "metrics")
    return names


def cmd_eval(args) -> Dict:
    metrics = _metric_list(args.metrics)
    if args.manifest:
        if not args.out_csv:
            raise ConfigError("--manifest needs --out-csv", "eval")
        processor = BatchProcessor(BatchConfig())
        rows = processor.image_quality(load_manifest(args.manifest, kind="pairs"), metrics, args.peak)
        _write_csv(rows, args.out_csv)
        summary = processor.scene_summary(rows)
        return {"out_csv": args.out_csv, "rows": len(rows), "summary": summary.to_dict("records"),
                "batch": processor.generate_summary_report()}

    if not (args.pred and args.ref):
        raise ConfigError("eval needs PRED and REF images or --manifest", "eval")
    return image_quality(read_rgb_png(args.pred), read_rgb_png(args.ref), metrics, args.peak)


def cmd_report(args) -> Dict:
    processor = BatchProcessor(BatchConfig())
    entries = load_manifest(args.manifest, kind="frames")
    if args.report_command == "color-accuracy":
        report = processor.color_accuracy(entries, read_reference_checker(args.reference))
    else:
        report = processor.stability(entries)
    aggregates = report.aggregates()
    _write_csv(report.to_frame(), args.out_csv)
    write_json(args.out_json, json_safe({"aggregates": aggregates, "batch": processor.generate_summary_report()}))
    return {"out_csv": args.out_csv, "out_json": args.out_json, **aggregates}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hvsisp",
        description="Controllable ISP and event analytics for quad-Bayer hybrid vision sensors.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--json", action="store_true", help="Print a JSON document on stdout")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate-dark", help="Black level and row FPN from dark frames")
    p.add_argument("raw", nargs="*", help="Dark RAW frames (PGM)")
    p.add_argument("--out", required=True, help="Calibration JSON")
    p.add_argument("--exposure-time", type=float, default=None, help="Exposure tag in microseconds")
    p.add_argument("--library", action="store_true", help="One calibration per exposure time")
    p.add_argument("--append", action="store_true",
                   help="Merge into the library already at --out (implies --library)")
    p.set_defaults(handler=cmd_calibrate_dark)

    p = sub.add_parser("run", help="Process one RAW frame")
    p.add_argument("raw", help="RAW frame (PGM)")
    p.add_argument("--config", required=True, help="ISP config (.yaml or flat key=value)")
    p.add_argument("--calib", help="Dark calibration JSON (enables dark correction)")
    p.add_argument("--checker", help="ColorChecker annotation JSON")
    p.add_argument("--events", help="Event stream (.evt or .csv)")
    p.add_argument("--reference", help="Reference checker JSON for CCM fitting")
    p.add_argument("--ccm", help="CCM JSON (sets ccm mode to file)")
    p.add_argument("--out", required=True, help="Output PNG")
    p.add_argument("--report", help="StageReport JSON")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("ccm-fit", help="Fit a CCM from measured and reference patches")
    p.add_argument("measured", help="Measured linear patch colours JSON")
    p.add_argument("reference", help="Reference checker JSON")
    p.add_argument("--out", required=True, help="CCM JSON")
    p.add_argument("--white-preserve", action="store_true", help="Map (1, 1, 1) onto itself")
    p.add_argument("--no-exposure-normalize", action="store_true", help="Skip gray-patch exposure matching")
    p.set_defaults(handler=cmd_ccm_fit)

    p = sub.add_parser("events", help="Event-stream tools")
    p.set_defaults(handler=cmd_events)
    ev = p.add_subparsers(dest="events_command", required=True)

    e = ev.add_parser("voxelize", help="Voxel grid (VOX1)")
    e.add_argument("events")
    e.add_argument("--t0", type=float, required=True)
    e.add_argument("--t1", type=float, required=True)
    e.add_argument("--bins", type=int, required=True)
    e.add_argument("--out", required=True)

    e = ev.add_parser("simulate", help="Events between two sRGB PNG frames")
    e.add_argument("frame0")
    e.add_argument("frame1")
    e.add_argument("--theta", type=float, required=True, help="Contrast threshold (log units)")
    e.add_argument("--t0", type=int, required=True)
    e.add_argument("--t1", type=int, required=True)
    e.add_argument("--log-floor", type=float, default=DEFAULT_LOG_FLOOR)
    e.add_argument("--out", required=True, help="Event file (.evt or .csv)")

    e = ev.add_parser("activity", help="Per-pixel event counts (CSV)")
    e.add_argument("events")
    e.add_argument("--t0", type=float, required=True)
    e.add_argument("--t1", type=float, required=True)
    e.add_argument("--out", required=True)

    e = ev.add_parser("rate", help="Global event rate per bin (CSV)")
    e.add_argument("events")
    e.add_argument("--bin-width", type=float, required=True, help="Microseconds")
    e.add_argument("--smooth-period", type=float, default=None, help="Moving-average period in microseconds")
    e.add_argument("--out", required=True)

    e = ev.add_parser("flicker", help="Periodicity of the event rate")
    e.add_argument("events")
    e.add_argument("--bin-width", type=float, default=DEFAULT_FLICKER_BIN_US)

    e = ev.add_parser("illumination", help="Bins where the event rate jumps")
    e.add_argument("events")
    e.add_argument("--bin-width", type=float, required=True)
    e.add_argument("--ratio", type=float, default=2.0)

    p = sub.add_parser("eval", help="PSNR / SSIM / L1 of images")
    p.add_argument("pred", nargs="?", help="Predicted sRGB PNG")
    p.add_argument("ref", nargs="?", help="Reference sRGB PNG")
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--manifest", help="JSON list of {pred, ref, scene}")
    p.add_argument("--out-csv", help="Per-pair CSV (with --manifest)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("report", help="Colour accuracy or temporal stability over a manifest")
    rep = p.add_subparsers(dest="report_command", required=True)
    for name in ("color-accuracy", "stability"):
        r = rep.add_parser(name)
        if name == "color-accuracy":
            r.add_argument("--reference", required=True, help="Reference checker JSON")
        r.add_argument("--manifest", required=True, help="JSON list of {frame, annotation}")
        r.add_argument("--out-csv", required=True)
        r.add_argument("--out-json", required=True)
    p.set_defaults(handler=cmd_report)
    return parser


def _emit(document: Dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(json_safe(document), indent=2))
        return
    for key, value in json_safe(document).items():
        if key in ("command", "status"):
            continue
        if isinstance(value, list) and value and isinstance(value[0], list):
            print(f"{key}:")
            for row in value:
                print("  " + " ".join(f"{v: .6f}" if isinstance(v, float) else str(v) for v in row))
        else:
            print(f"{key}: {value}")


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, os.getenv("HVSISP_LOG_LEVEL", "INFO").upper(),
                                                  logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s - %(levelname)s - %(message)s", stream=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    argv = list(sys.argv[1:] if argv is None else argv)
    as_json = "--json" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code in (0, None):
            return 0
        if as_json:
            _emit({"command": None, "status": "error", "stage": "cli", "error": "UsageError",
                   "message": "invalid command line", "exit_code": 1}, True)
        return 1

    _configure_logging(args.verbose)
    command = args.command if args.command not in ("events", "report") else \
        f"{args.command} {getattr(args, 'events_command', None) or getattr(args, 'report_command', None)}"

    try:
        payload = args.handler(args)
    except (HvsIspError, OSError) as e:
        stage = getattr(e, "stage", None) or args.command
        logger.error(f"{command} failed: {e}")
        if as_json:
            _emit({"command": command, "status": "error", "stage": stage, "error": type(e).__name__,
                   "message": getattr(e, "message", None) or str(e), "exit_code": 1}, True)
        return 1
    except Exception as e:
        logger.error(f"{command} failed with an internal error: {e}")
        logger.debug("Traceback", exc_info=True)
        if as_json:
            _emit({"command": command, "status": "error", "stage": args.command, "error": type(e).__name__,
                   "message": str(e), "exit_code": 2}, True)
        return 2

    _emit({"command": command, "status": "ok", **payload}, as_json)
    return 0


if __name__ == "__main__":
    sys.exit(main())
