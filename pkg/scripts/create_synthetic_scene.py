#!/usr/bin/env python3
"""
Synthetic HVS fixture generator.

Renders a ColorChecker scene, runs the colour pipeline backwards into a
quad-Bayer RAW frame and writes everything `hvsisp` needs to process it:

    frame.pgm             RAW mosaic (blc + row FPN + optional noise)
    frame_checker.json    LabelMe-style corner annotation
    dark_NN.pgm           dark frames for `hvsisp calibrate-dark`
    truth.png             the encoded scene the pipeline should reproduce
    truth_checker.json    annotation of truth.png (same geometry)
    flicker.evt           100 Hz modulated event stream at half resolution
    manifest.json         report manifest over truth.png

Usage:
    python scripts/create_synthetic_scene.py --out-dir fixtures/scene
    python scripts/create_synthetic_scene.py --out-dir fixtures/noisy --noise 0.02 --seed 7
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

# Ensure project root is importable
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.color import srgb_encode  # noqa: E402
from src.data_models import ColorSpace, RgbImage, WbGains  # noqa: E402
from src.frame_io import (  # noqa: E402
    read_reference_checker, write_checker_annotation, write_events, write_json, write_raw, write_rgb_png,
)
from src.synthetic import (  # noqa: E402
    dark_frames, default_annotation, flicker_stream, invert_pipeline, render_checker,
)

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).parent.parent
DEFAULT_REFERENCE = PROJECT_ROOT / "config" / "colorchecker_reference.json"

# Sensor-space mixing the fitted CCM has to undo (row-vector convention)
SENSOR_MIXING = np.array([
    [0.80, 0.10, 0.05],
    [0.10, 0.75, 0.10],
    [0.05, 0.10, 0.80],
])


def create_scene(out_dir: Path, width: int, height: int, noise: float, seed: int, blc: float,
                 n_dark: int, reference: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    patches = read_reference_checker(reference)
    ann = default_annotation(width, height)
    scene = render_checker(patches, ann, width, height)
    fpn = rng.integers(0, 6, size=height).astype(np.float64)
    fpn[0] = 0.0

    raw = invert_pipeline(
        scene,
        ccm=np.linalg.inv(SENSOR_MIXING),
        wb_gains=WbGains(r=1.8, b=1.5),
        blc=blc,
        fpn=fpn,
        noise_sigma=noise,
        rng=rng,
    )
    write_raw(raw, out_dir / "frame.pgm")
    write_checker_annotation(ann, out_dir / "frame_checker.json")
    logger.info(f"Wrote {width}x{height} RAW frame (noise {noise:.3f} of full scale)")

    for i, frame in enumerate(dark_frames(n_dark, height, width, blc, fpn, noise_sigma_counts=1.0, rng=rng)):
        write_raw(frame, out_dir / f"dark_{i:02d}.pgm")
    logger.info(f"Wrote {n_dark} dark frames")

    write_rgb_png(RgbImage(srgb_encode(scene.data), ColorSpace.SRGB), out_dir / "truth.png")
    write_checker_annotation(ann, out_dir / "truth_checker.json")
    write_events(flicker_stream(width=width // 2, height=height // 2), out_dir / "flicker.evt")
    write_json(out_dir / "manifest.json", [
        {"frame": "truth.png", "annotation": "truth_checker.json"},
        {"frame": "truth.png", "annotation": "truth_checker.json", "label": "truth_repeat"},
    ])
    logger.info(f"Fixture set written to {out_dir}")


def main():
    parser = argparse.ArgumentParser(
        description="Create a synthetic HVS capture with known ground truth.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--out-dir", required=True, help="Output directory")
    parser.add_argument("--width", type=int, default=512, help="RAW width (even, default: 512)")
    parser.add_argument("--height", type=int, default=512, help="RAW height (even, default: 512)")
    parser.add_argument("--noise", type=float, default=0.0, help="Gaussian noise, fraction of full scale")
    parser.add_argument("--seed", type=int, default=0, help="Noise seed (default: 0)")
    parser.add_argument("--blc", type=float, default=64.0, help="Black level in counts (default: 64)")
    parser.add_argument("--dark-frames", type=int, default=5, help="Number of dark frames (default: 5)")
    parser.add_argument("--reference", default=str(DEFAULT_REFERENCE), help="Reference checker JSON")
    args = parser.parse_args()

    try:
        create_scene(Path(args.out_dir), args.width, args.height, args.noise, args.seed, args.blc,
                     args.dark_frames, Path(args.reference))
    except Exception as e:
        logger.error(f"Failed to create synthetic scene: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
