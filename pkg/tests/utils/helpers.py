import json
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from src.data_models import EventStream


PROJECT_ROOT = Path(__file__).parent.parent.parent
CONFIG_DIR = PROJECT_ROOT / "config"


def write_json_file(document: Any, output_path: Path) -> Path:
    """Write a JSON document for a test, bypassing the library writers"""
    with open(output_path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2)
    return output_path


def load_json_file(path: Path) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def create_test_manifest(entries: List[Dict], output_path: Path) -> Path:
    """Create a manifest JSON list for batch testing"""
    return write_json_file(entries, output_path)


def brute_force_polarity_sum(stream: EventStream, t0: float, t1: float) -> float:
    """Signed polarity of in-window events, accumulated one event at a time"""
    total = 0.0
    for t, p in zip(stream.t.tolist(), stream.p.tolist()):
        if t0 <= t < t1:
            total += p
    return total


def brute_force_row_filter(stream: EventStream, start: float, end: float, event_row: int) -> List[int]:
    """Indices of events on one event row inside [start, end)"""
    return [
        i for i in range(len(stream))
        if stream.y[i] == event_row and start <= stream.t[i] < end
    ]


def brute_force_bilinear_green(mosaic: np.ndarray, green_sites: np.ndarray) -> np.ndarray:
    """Green plane by bilinear interpolation: native at green sites, else the mean of green 4-neighbours"""
    height, width = mosaic.shape
    out = np.zeros((height, width))
    for y in range(height):
        for x in range(width):
            if green_sites[y, x]:
                out[y, x] = mosaic[y, x]
                continue
            values = [
                mosaic[y + dy, x + dx]
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1))
                if 0 <= y + dy < height and 0 <= x + dx < width and green_sites[y + dy, x + dx]
            ]
            out[y, x] = sum(values) / len(values)
    return out


def random_event_stream(rng: np.random.Generator, width: int = 16, height: int = 12,
                        count: int = 200, t_max: int = 10_000) -> EventStream:
    """Sorted random stream with both polarities"""
    t = np.sort(rng.integers(0, t_max, size=count))
    x = rng.integers(0, width, size=count)
    y = rng.integers(0, height, size=count)
    p = rng.choice([-1, 1], size=count)
    return EventStream(width, height, t, x, y, p)
