"""
Bit-exact file formats for RAW mosaics, events, voxel grids and reports.

Formats:
    RAW      16-bit big-endian binary PGM (P5, maxval 65535) whose comment line
             `# hvs bit_depth=<n> phase=<p> [...]` carries the mosaic metadata.
    EVT1     16-byte little-endian header (magic, version, width, height,
             reserved, count) followed by 14-byte event records.
    CSV      `# hvs width=<W> height=<H>` then `t_us,x,y,p` rows.
    VOX1     10-byte header (magic, bins, height, width) then float32 values.
    PNG      8-bit RGB via Pillow.
    JSON     dark calibration, patch tables, CCMs, LabelMe annotations.

Every writer is atomic: it writes a temporary file next to the target and
renames it into place.
"""

import io
import json
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image

from .color import srgb_decode
from .data_models import (
    CHECKER_LABELS, CheckerAnnotation, ColorSpace, DarkCalibration, DarkCalibrationLibrary,
    EventStream, ExposureMeta, FitReport, NUM_PATCHES, PatchColors, PatternPhase,
    QuadBayerFrame, RgbImage, VoxelGrid,
)
from .errors import AnnotationError, HvsIspError, IoError, ParseError, PreconditionError, RangeError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PGM_MAXVAL = 65535
DEFAULT_BIT_DEPTH = 10
DEFAULT_PHASE = PatternPhase.BOTTOM_RIGHT

EVT_MAGIC = b"EVT1"
EVT_VERSION = 1
EVT_HEADER = struct.Struct("<4sHHHHI")
EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1")])
EVENT_CSV_COLUMNS = ["t_us", "x", "y", "p"]

VOX_MAGIC = b"VOX1"
VOX_HEADER = struct.Struct("<4sHHH")


# --------------------------------------------------------------------------
# Plumbing
# --------------------------------------------------------------------------

def atomic_write(path: PathLike, writer: Callable[[io.BufferedWriter], None]) -> None:
    """Run `writer` on a temp file in the target directory, then rename it over `path`."""
    path = Path(path)
    tmp_name = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile("wb", dir=path.parent, prefix=f".{path.name}.",
                                         suffix=".tmp", delete=False) as handle:
            tmp_name = handle.name
            writer(handle)
        os.replace(tmp_name, path)
        tmp_name = None
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", "write") from e
    finally:
        if tmp_name is not None and os.path.exists(tmp_name):
            os.unlink(tmp_name)


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    atomic_write(path, lambda handle: handle.write(payload))


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: PathLike, document) -> None:
    atomic_write_text(path, json.dumps(document, indent=2) + "\n")


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}", "read") from e


def read_json(path: PathLike, stage: str = "read"):
    text = _read_bytes(path).decode("utf-8", errors="replace")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})", stage) from e


# --------------------------------------------------------------------------
# RAW mosaics (PGM)
# --------------------------------------------------------------------------

def _format_number(value: float) -> str:
    return repr(float(value))


def raw_header(frame: QuadBayerFrame) -> bytes:
    tokens = [f"bit_depth={frame.bit_depth}", f"phase={int(frame.pattern_phase)}"]
    if frame.channel_order != "RGB":
        tokens.append(f"order={frame.channel_order}")
    if frame.holes_filled:
        tokens.append("holes=filled")
    if frame.exposure is not None:
        tokens += [
            f"frame_start={_format_number(frame.exposure.frame_start)}",
            f"row_delta={_format_number(frame.exposure.row_readout_delta)}",
            f"exposure={_format_number(frame.exposure.exposure_time)}",
        ]
    comment = "# hvs " + " ".join(tokens)
    return f"P5\n{comment}\n{frame.width} {frame.height}\n{PGM_MAXVAL}\n".encode("ascii")


def write_raw(frame: QuadBayerFrame, path: PathLike) -> None:
    """Write a mosaic as 16-bit big-endian PGM."""
    frame.validate()
    body = np.ascontiguousarray(frame.data, dtype=">u2").tobytes()
    atomic_write_bytes(path, raw_header(frame) + body)


def _parse_pgm_header(blob: bytes) -> Tuple[int, int, int, list, int]:
    """Return (width, height, maxval, comments, body_offset)."""
    if blob[:2] != b"P5":
        raise ParseError("not a binary PGM (missing P5 magic)", "read_raw")
    pos = 2
    values, comments = [], []
    while len(values) < 3:
        if pos >= len(blob):
            raise ParseError("truncated PGM header", "read_raw")
        ch = blob[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = blob.find(b"\n", pos)
            if end < 0:
                raise ParseError("unterminated PGM comment", "read_raw")
            comments.append(blob[pos + 1:end].decode("ascii", errors="replace").strip())
            pos = end + 1
        else:
            start = pos
            while pos < len(blob) and blob[pos:pos + 1].isdigit():
                pos += 1
            if start == pos:
                raise ParseError(f"unexpected byte {blob[start:start + 1]!r} in PGM header", "read_raw")
            values.append(int(blob[start:pos]))
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise ParseError("PGM header must end with a single whitespace byte", "read_raw")
    width, height, maxval = values
    return width, height, maxval, comments, pos + 1


def _parse_raw_metadata(comments: list) -> Dict:
    meta = {"bit_depth": DEFAULT_BIT_DEPTH, "pattern_phase": DEFAULT_PHASE,
            "channel_order": "RGB", "holes_filled": False}
    exposure = {}
    hvs = [c for c in comments if c.split()[:1] == ["hvs"]]
    if not hvs:
        return meta
    for token in hvs[0].split()[1:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise ParseError(f"metadata token {token!r} is not key=value", "read_raw")
        try:
            if key == "bit_depth":
                meta["bit_depth"] = int(value)
                if not 1 <= meta["bit_depth"] <= 16:
                    raise ParseError(f"bit_depth {value} outside 1..16", "read_raw")
            elif key == "phase":
                meta["pattern_phase"] = PatternPhase(int(value))
            elif key == "order":
                if sorted(value) != ["B", "G", "R"]:
                    raise ParseError(f"order {value!r} is not a permutation of RGB", "read_raw")
                meta["channel_order"] = value
            elif key == "holes":
                if value != "filled":
                    raise ParseError(f"unknown holes value {value!r}", "read_raw")
                meta["holes_filled"] = True
            elif key in ("frame_start", "row_delta", "exposure"):
                exposure[key] = float(value)
            else:
                raise ParseError(f"unknown metadata key {key!r}", "read_raw")
        except ValueError as e:
            if isinstance(e, ParseError):
                raise
            raise ParseError(f"bad value in metadata token {token!r}", "read_raw") from e
    if exposure:
        meta["exposure"] = ExposureMeta(
            frame_start=exposure.get("frame_start", 0.0),
            row_readout_delta=exposure.get("row_delta", 0.0),
            exposure_time=exposure.get("exposure", 1.0),
        )
    return meta


def read_raw(path: PathLike) -> QuadBayerFrame:
    """Read a mosaic written by write_raw (or any P5 PGM with maxval 65535)."""
    blob = _read_bytes(path)
    width, height, maxval, comments, offset = _parse_pgm_header(blob)
    if maxval != PGM_MAXVAL:
        raise ParseError(f"maxval must be {PGM_MAXVAL}, got {maxval}", "read_raw")
    meta = _parse_raw_metadata(comments)
    expected = width * height * 2
    body = blob[offset:]
    if len(body) != expected:
        raise ParseError(f"expected {expected} sample bytes, found {len(body)}", "read_raw")
    data = np.frombuffer(body, dtype=">u2").reshape(height, width).astype(np.uint16)
    limit = 1 << meta["bit_depth"]
    if data.size and int(data.max()) >= limit:
        raise RangeError(f"sample {int(data.max())} >= 2^{meta['bit_depth']}", "read_raw")
    return QuadBayerFrame(data=data, **meta).validate()


# --------------------------------------------------------------------------
# Events
# --------------------------------------------------------------------------

def _check_u16_geometry(width: int, height: int, stage: str) -> None:
    if not (0 < width <= 0xFFFF and 0 < height <= 0xFFFF):
        raise RangeError(f"geometry {width}x{height} does not fit u16", stage)


def encode_events(stream: EventStream) -> bytes:
    stream.validate()
    _check_u16_geometry(stream.width, stream.height, "write_events")
    records = np.zeros(len(stream), dtype=EVENT_DTYPE)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.p
    header = EVT_HEADER.pack(EVT_MAGIC, EVT_VERSION, stream.width, stream.height, 0, len(stream))
    return header + records.tobytes()


def decode_events(blob: bytes) -> EventStream:
    if len(blob) < EVT_HEADER.size:
        raise ParseError("truncated EVT1 header", "read_events")
    magic, version, width, height, reserved, count = EVT_HEADER.unpack_from(blob)
    if magic != EVT_MAGIC:
        raise ParseError(f"bad magic {magic!r}", "read_events")
    if version != EVT_VERSION:
        raise ParseError(f"unsupported EVT1 version {version}", "read_events")
    if reserved != 0:
        raise ParseError("reserved header field must be zero", "read_events")
    payload = blob[EVT_HEADER.size:]
    if len(payload) != count * EVENT_DTYPE.itemsize:
        raise ParseError(f"header announces {count} events, payload holds {len(payload)} bytes", "read_events")
    records = np.frombuffer(payload, dtype=EVENT_DTYPE)
    if (records["pad"] != 0).any():
        raise ParseError("nonzero pad byte in event record", "read_events")
    if (records["t"] > np.iinfo(np.int64).max).any():
        raise RangeError("timestamp exceeds int64", "read_events")
    stream = EventStream(width, height, records["t"].astype(np.int64), records["x"].astype(np.int64),
                         records["y"].astype(np.int64), records["p"].astype(np.int8))
    return stream.validate()


def write_events_csv(stream: EventStream, path: PathLike) -> None:
    stream.validate()
    frame = pd.DataFrame({"t_us": stream.t, "x": stream.x, "y": stream.y, "p": stream.p.astype(np.int64)},
                         columns=EVENT_CSV_COLUMNS)
    text = f"# hvs width={stream.width} height={stream.height}\n" + frame.to_csv(index=False)
    atomic_write_text(path, text)


def read_events_csv(path: PathLike, width: Optional[int] = None, height: Optional[int] = None) -> EventStream:
    text = _read_bytes(path).decode("utf-8", errors="replace")
    first = text.split("\n", 1)[0].strip()
    if first.startswith("#"):
        tokens = dict(tok.partition("=")[::2] for tok in first.lstrip("#").split()[1:])
        try:
            width, height = int(tokens["width"]), int(tokens["height"])
        except (KeyError, ValueError) as e:
            raise ParseError(f"bad geometry comment {first!r}", "read_events") from e
    try:
        frame = pd.read_csv(io.StringIO(text), comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"{path}: {e}", "read_events") from e
    if list(frame.columns) != EVENT_CSV_COLUMNS:
        raise ParseError(f"CSV header must be {','.join(EVENT_CSV_COLUMNS)}, got {','.join(map(str, frame.columns))}",
                         "read_events")
    if len(frame) and not all(pd.api.types.is_integer_dtype(frame[c]) for c in EVENT_CSV_COLUMNS):
        raise ParseError("event CSV fields must be integers", "read_events")
    if len(frame) and not frame["p"].isin([-1, 1]).all():
        raise RangeError("polarity must be -1 or +1", "read_events")
    if width is None or height is None:
        width = int(frame["x"].max()) + 1 if len(frame) else 1
        height = int(frame["y"].max()) + 1 if len(frame) else 1
        logger.warning(f"{path}: no geometry comment, inferred {width}x{height}")
    return EventStream(width, height, frame["t_us"].to_numpy(), frame["x"].to_numpy(),
                       frame["y"].to_numpy(), frame["p"].to_numpy()).validate()


def write_events(stream: EventStream, path: PathLike) -> None:
    """Write EVT1 binary, or CSV when the path ends in .csv."""
    if Path(path).suffix.lower() == ".csv":
        write_events_csv(stream, path)
    else:
        atomic_write_bytes(path, encode_events(stream))


def read_events(path: PathLike) -> EventStream:
    if Path(path).suffix.lower() == ".csv":
        return read_events_csv(path)
    return decode_events(_read_bytes(path))


# --------------------------------------------------------------------------
# Voxel grids
# --------------------------------------------------------------------------

def write_voxel(grid: VoxelGrid, path: PathLike) -> None:
    values = np.asarray(grid.values)
    if values.ndim != 3:
        raise RangeError(f"voxel grid must be 3-D, got shape {values.shape}", "write_voxel")
    if not np.isfinite(values).all():
        raise RangeError("voxel grid contains non-finite values", "write_voxel")
    bins, height, width = values.shape
    if max(bins, height, width) > 0xFFFF:
        raise RangeError(f"voxel dimensions {values.shape} do not fit u16", "write_voxel")
    header = VOX_HEADER.pack(VOX_MAGIC, bins, height, width)
    atomic_write_bytes(path, header + np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_voxel(path: PathLike) -> VoxelGrid:
    blob = _read_bytes(path)
    if len(blob) < VOX_HEADER.size:
        raise ParseError("truncated VOX1 header", "read_voxel")
    magic, bins, height, width = VOX_HEADER.unpack_from(blob)
    if magic != VOX_MAGIC:
        raise ParseError(f"bad magic {magic!r}", "read_voxel")
    payload = blob[VOX_HEADER.size:]
    if len(payload) != bins * height * width * 4:
        raise ParseError("VOX1 payload size does not match header", "read_voxel")
    values = np.frombuffer(payload, dtype="<f4").reshape(bins, height, width).astype(np.float32)
    return VoxelGrid(values)


# --------------------------------------------------------------------------
# RGB images
# --------------------------------------------------------------------------

def quantize_8bit(data: np.ndarray) -> np.ndarray:
    """floor(clamp(s, 0, 1) * 255 + 0.5) as uint8."""
    if np.isnan(data).any():
        raise RangeError("image contains NaN samples", "write_png")
    return np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_rgb_png(img: RgbImage, path: PathLike) -> None:
    """Write an sRGB-encoded image as an 8-bit RGB PNG."""
    if img.colorspace != ColorSpace.SRGB:
        raise PreconditionError("PNG output expects an sRGB-encoded image", "write_png")
    pixels = quantize_8bit(np.asarray(img.data, dtype=np.float64))

    def _save(handle):
        Image.fromarray(pixels).save(handle, format="PNG")

    atomic_write(path, _save)


def read_rgb_png(path: PathLike, colorspace: ColorSpace = ColorSpace.SRGB) -> RgbImage:
    try:
        with Image.open(path) as image:
            pixels = np.asarray(image.convert("RGB"), dtype=np.float64)
    except FileNotFoundError as e:
        raise IoError(f"cannot read {path}: {e}", "read_png") from e
    except (OSError, SyntaxError) as e:
        raise ParseError(f"{path}: not a readable PNG ({e})", "read_png") from e
    return RgbImage(pixels / 255.0, colorspace)


# --------------------------------------------------------------------------
# Annotations
# --------------------------------------------------------------------------

def parse_checker_annotation(json_text: str) -> CheckerAnnotation:
    """Parse a LabelMe document with cyan / white / brown / black point shapes."""
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as e:
        raise ParseError(f"annotation is not valid JSON ({e})", "annotation") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("shapes"), list):
        raise ParseError("annotation needs a top-level 'shapes' array", "annotation")
    try:
        width, height = int(doc["imageWidth"]), int(doc["imageHeight"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError("annotation needs integer imageWidth and imageHeight", "annotation") from e

    corners = {}
    for shape in doc["shapes"]:
        if not isinstance(shape, dict):
            continue
        label = str(shape.get("label", "")).strip().lower()
        if label not in CHECKER_LABELS or label in corners:
            continue
        points = shape.get("points") or []
        try:
            x, y = float(points[0][0]), float(points[0][1])
        except (IndexError, TypeError, ValueError) as e:
            raise AnnotationError(f"{label} shape has no usable point", "annotation") from e
        corners[label] = (x, y)

    for label in CHECKER_LABELS:
        if label not in corners:
            raise AnnotationError(label, "annotation")
    return CheckerAnnotation(corners, width, height).validate()


def read_checker_annotation(path: PathLike) -> CheckerAnnotation:
    return parse_checker_annotation(_read_bytes(path).decode("utf-8", errors="replace"))


def annotation_document(ann: CheckerAnnotation) -> Dict:
    shapes = [{"label": label, "points": [list(map(float, ann.corners[label]))], "shape_type": "point"}
              for label in CHECKER_LABELS]
    return {"shapes": shapes, "imageWidth": ann.image_width, "imageHeight": ann.image_height}


def write_checker_annotation(ann: CheckerAnnotation, path: PathLike) -> None:
    write_json(path, annotation_document(ann))


# --------------------------------------------------------------------------
# Calibration, patches, CCMs
# --------------------------------------------------------------------------

def _calibration_from_dict(doc: Dict) -> DarkCalibration:
    try:
        return DarkCalibration(blc=float(doc["blc"]), fpn=np.asarray(doc["fpn"], dtype=np.float64),
                               exposure_time=doc.get("exposure_time"))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, HvsIspError):
            raise
        raise ParseError(f"bad dark calibration document: {e}", "calibration") from e


def write_dark_calibration(calib: Union[DarkCalibration, DarkCalibrationLibrary], path: PathLike) -> None:
    write_json(path, calib.to_dict())


def read_dark_calibration(path: PathLike) -> Union[DarkCalibration, DarkCalibrationLibrary]:
    """Single calibration `{"blc", "fpn"}` or library `{"calibrations": [...]}`."""
    doc = read_json(path, "calibration")
    if isinstance(doc, dict) and "calibrations" in doc:
        library = DarkCalibrationLibrary()
        for entry in doc["calibrations"]:
            library.add(_calibration_from_dict(entry))
        return library
    if not isinstance(doc, dict):
        raise ParseError("dark calibration must be a JSON object", "calibration")
    return _calibration_from_dict(doc)


def _patch_table(doc, stage: str) -> np.ndarray:
    rows = doc.get("patches") if isinstance(doc, dict) else doc
    try:
        table = np.asarray(rows, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ParseError(f"patch table is not numeric: {e}", stage) from e
    if table.shape != (NUM_PATCHES, 3):
        raise ParseError(f"expected {NUM_PATCHES} [r, g, b] patches, got shape {table.shape}", stage)
    if not np.isfinite(table).all():
        raise RangeError("patch values must be finite", stage)
    return table


def write_patch_colors(patches: PatchColors, path: PathLike) -> None:
    write_json(path, {"patches": patches.values.tolist()})


def read_patch_colors(path: PathLike) -> PatchColors:
    """Linear patch colours, as `{"patches": [...]}` or a bare array."""
    return PatchColors(_patch_table(read_json(path, "patches"), "patches"))


def read_reference_checker(path: PathLike) -> PatchColors:
    """Reference chart in encoded sRGB [0, 1], decoded to linear."""
    doc = read_json(path, "reference")
    table = _patch_table(doc, "reference")
    if (table < 0).any() or (table > 1).any():
        raise RangeError("reference values must be encoded sRGB in [0, 1]", "reference")
    if isinstance(doc, dict) and doc.get("source"):
        logger.debug(f"Reference chart: {doc['source']}")
    return PatchColors(srgb_decode(table))


def write_ccm(matrix: np.ndarray, path: PathLike, report: Optional[FitReport] = None) -> None:
    doc = {"matrix": np.asarray(matrix, dtype=np.float64).tolist()}
    if report is not None:
        doc["fit"] = report.to_dict()
    write_json(path, doc)


def read_ccm(path: PathLike) -> np.ndarray:
    doc = read_json(path, "ccm")
    rows = doc.get("matrix") if isinstance(doc, dict) else doc
    try:
        matrix = np.asarray(rows, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ParseError(f"CCM is not numeric: {e}", "ccm") from e
    if matrix.shape != (3, 3):
        raise ParseError(f"CCM must be 3x3, got shape {matrix.shape}", "ccm")
    if not np.isfinite(matrix).all():
        raise RangeError("CCM entries must be finite", "ccm")
    return matrix
