"""
Hole filling and demosaicing for the quad-Bayer HVS mosaic.

Each 2x2 block holds three colour sites and one event-pixel hole. Holes are
filled from their nearest green sites (optionally weighted by event-activity
gradients), after which the hole position counts as a green site and the
mosaic is demosaiced with edge-aware directional interpolation.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .data_models import ColorSpace, Direction, EventActivity, PatternPhase, QuadBayerFrame, RgbImage
from .errors import PreconditionError, ShapeError

logger = logging.getLogger(__name__)

CHANNELS = "RGB"
HOLE = -1
GREEN = 1
DEFAULT_MARGIN = 0.2

_COMPASS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def block_layout(pattern_phase: PatternPhase, channel_order: str = "RGB") -> np.ndarray:
    """2x2 channel indices (0=R, 1=G, 2=B, -1=hole) of one block."""
    hole = PatternPhase(pattern_phase).offset
    layout = np.full((2, 2), HOLE, dtype=np.int8)
    letters = iter(channel_order)
    for pos in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        if pos != hole:
            layout[pos] = CHANNELS.index(next(letters))
    return layout


def color_site_map(height: int, width: int, pattern_phase: PatternPhase = PatternPhase.BOTTOM_RIGHT,
                   channel_order: str = "RGB") -> np.ndarray:
    """Per-pixel channel index over the whole mosaic."""
    if height % 2 or width % 2:
        raise ShapeError(f"mosaic geometry must be even, got {width}x{height}", "site_map")
    return np.tile(block_layout(pattern_phase, channel_order), (height // 2, width // 2))


def hole_neighbor_offsets(layout: np.ndarray) -> List[Tuple[int, int]]:
    """Offsets from the hole to its nearest green sites along the 8 compass directions."""
    hole = tuple(int(v) for v in np.argwhere(layout == HOLE)[0])
    found = []
    for dy, dx in _COMPASS:
        for step in (1, 2):
            oy, ox = dy * step, dx * step
            if layout[(hole[0] + oy) % 2, (hole[1] + ox) % 2] == GREEN:
                found.append(((oy, ox), float(np.hypot(oy, ox))))
                break
    nearest = min(dist for _, dist in found)
    return [offset for offset, dist in found if np.isclose(dist, nearest)]


def upsample_activity(activity: EventActivity, shape: Tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour x2 upsampling of a half-resolution activity map."""
    height, width = shape
    if activity.counts.shape != (height // 2, width // 2) or height % 2 or width % 2:
        raise ShapeError(
            f"activity {activity.width}x{activity.height} is not half of frame {width}x{height}", "activity")
    return np.repeat(np.repeat(activity.counts.astype(np.float64), 2, axis=0), 2, axis=1)


def activity_gradients(activity: EventActivity, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """(d/dx, d/dy) of the upsampled activity by central differences."""
    full = upsample_activity(activity, shape)
    grad_y, grad_x = np.gradient(full)
    return grad_x, grad_y


def directional_weighted_mean(values: np.ndarray, offsets: Sequence[Tuple[int, int]],
                              grad_x, grad_y) -> np.ndarray:
    """Average neighbour values, down-weighting neighbours that lie across an edge.

    Args:
        values: (K, ...) neighbour values; NaN marks a neighbour outside the image.
        offsets: (dy, dx) of each of the K neighbours.
        grad_x: Activity gradient along x, broadcastable to values[0].
        grad_y: Activity gradient along y.

    Returns:
        exp(-(a_k - min a)) weighted mean, a_k = |grad . unit(offset_k)|.
    """
    values = np.asarray(values, dtype=np.float64)
    grad_x = np.asarray(grad_x, dtype=np.float64)
    grad_y = np.asarray(grad_y, dtype=np.float64)
    valid = ~np.isnan(values)
    along = []
    for dy, dx in offsets:
        norm = np.hypot(dy, dx)
        along.append(np.abs(grad_x * (dx / norm) + grad_y * (dy / norm)) * np.ones(values.shape[1:]))
    along = np.stack(along)
    along = np.where(valid, along, np.inf)
    weights = np.where(valid, np.exp(-(along - along.min(axis=0))), 0.0)
    total = np.where(valid, values, 0.0)
    return (weights * total).sum(axis=0) / weights.sum(axis=0)


def _shifted(padded: np.ndarray, pad: int, dy: int, dx: int, shape: Tuple[int, int]) -> np.ndarray:
    height, width = shape
    return padded[pad + dy:pad + dy + height, pad + dx:pad + dx + width]


def _shifter(plane: np.ndarray, pad: int = 2, **pad_args) -> Callable[[int, int], np.ndarray]:
    """Return s(dy, dx) -> plane[y + dy, x + dx] over a padded copy."""
    pad_args = pad_args or {"mode": "reflect"}
    padded = np.pad(plane, pad, **pad_args)
    return lambda dy, dx: _shifted(padded, pad, dy, dx, plane.shape)


def cross_axis_stencil(layout: np.ndarray) -> Optional[Tuple[List[Tuple[int, int]], List[Tuple[int, int]],
                                                            List[Tuple[int, int]]]]:
    """Sites for a colour-difference fill across the green axis of the hole.

    Only defined when every nearest green lies on one axis (vertical green
    stripes in the default layout). Returns the pair of same-channel sites
    beside the hole across that axis, and the green and same-channel sites of
    the surrounding 5x5 window used for the G - C difference.
    """
    offsets = hole_neighbor_offsets(layout)
    if all(dx == 0 for _, dx in offsets):
        pair = [(0, -1), (0, 1)]
    elif all(dy == 0 for dy, _ in offsets):
        pair = [(-1, 0), (1, 0)]
    else:
        return None
    hy, hx = (int(v) for v in np.argwhere(layout == HOLE)[0])
    channel = layout[(hy + pair[0][0]) % 2, (hx + pair[0][1]) % 2]
    window = [(oy, ox) for oy in range(-2, 3) for ox in range(-2, 3)]
    greens = [(oy, ox) for oy, ox in window if layout[(hy + oy) % 2, (hx + ox) % 2] == GREEN]
    chroma = [(oy, ox) for oy, ox in window if layout[(hy + oy) % 2, (hx + ox) % 2] == channel]
    return pair, greens, chroma


def fill_event_holes(frame: QuadBayerFrame, guide: Optional[EventActivity] = None) -> QuadBayerFrame:
    """Fill every hole from its nearest green sites.

    Without a guide the fill is the plain mean of those sites; with a guide
    each site is weighted by how little the event activity changes towards it.
    When the nearest greens all lie on one axis, a guide whose activity
    changes along that axis more than across it hands the fill over to the
    colour-difference estimate from the same-channel pair across the axis.
    """
    layout = block_layout(frame.pattern_phase, frame.channel_order)
    offsets = hole_neighbor_offsets(layout)
    hy, hx = PatternPhase(frame.pattern_phase).offset

    shape = frame.data.shape
    s = _shifter(frame.data.astype(np.float64), mode="constant", constant_values=np.nan)

    def at(sites):
        return np.stack([s(dy, dx)[hy::2, hx::2] for dy, dx in sites])

    if guide is None:
        filled = np.nanmean(at(offsets), axis=0)
    else:
        grad_x, grad_y = activity_gradients(guide, shape)
        grad_x, grad_y = grad_x[hy::2, hx::2], grad_y[hy::2, hx::2]
        filled = directional_weighted_mean(at(offsets), offsets, grad_x, grad_y)
        stencil = cross_axis_stencil(layout)
        if stencil is not None:
            pair, greens, chroma = stencil
            across = np.nanmean(at(pair), axis=0) + np.nanmean(at(greens), axis=0) - np.nanmean(at(chroma), axis=0)
            along_green, along_pair = (np.abs(grad_y), np.abs(grad_x)) if pair[0][0] == 0 else \
                (np.abs(grad_x), np.abs(grad_y))
            take = 1.0 - np.exp(-np.maximum(along_green - along_pair, 0.0))
            filled = np.where(take > 0.0, filled + take * (across - filled), filled)

    data = frame.data.copy()
    data[hy::2, hx::2] = np.clip(np.rint(filled), 0, frame.max_value).astype(data.dtype)
    return frame.with_data(data, holes_filled=True)


def event_guided_direction(activity: EventActivity, shape: Tuple[int, int],
                           margin: float = DEFAULT_MARGIN) -> np.ndarray:
    """Per-pixel interpolation preference from event-activity gradients.

    A strong horizontal change marks a vertical edge, so interpolation runs
    vertically along it, and vice versa. Within the relative margin neither
    direction is preferred.
    """
    grad_x, grad_y = activity_gradients(activity, shape)
    ax, ay = np.abs(grad_x), np.abs(grad_y)
    field = np.full(shape, Direction.NONE, dtype=np.int8)
    field[ax > (1.0 + margin) * ay] = Direction.VERTICAL
    field[ay > (1.0 + margin) * ax] = Direction.HORIZONTAL
    return field


def demosaic_array(mosaic: np.ndarray, layout: np.ndarray, margin: float = DEFAULT_MARGIN,
                   direction: Optional[np.ndarray] = None) -> np.ndarray:
    """Demosaic a normalised mosaic whose holes already carry green.

    Green comes first. At a colour site C each axis offers an estimate: the
    mean of the green pair on that axis plus a second-difference correction
    from C, or, on an axis without green neighbours, C plus the colour
    difference G - C of the same-channel sites two pixels away along it.
    The axis whose second difference of C is smaller wins by the relative
    margin; on a tie the two estimates are averaged when both axes hold
    greens, otherwise the green-pair estimate is kept. A direction field
    overrides the choice wherever it is not NONE.

    Red and blue follow as green plus the colour difference C - G averaged
    over the nearest same-channel sites (axis pair or four diagonals).
    """
    cfa = np.where(layout == HOLE, GREEN, layout)
    shape = mosaic.shape
    s = _shifter(mosaic.astype(np.float64))
    center = s(0, 0)

    green_h = 0.5 * (s(0, -1) + s(0, 1)) + 0.25 * (2.0 * center - s(0, -2) - s(0, 2))
    green_v = 0.5 * (s(-1, 0) + s(1, 0)) + 0.25 * (2.0 * center - s(-2, 0) - s(2, 0))
    diff_h = _shifter(green_h - center)
    diff_v = _shifter(green_v - center)

    grad_h = np.abs(2.0 * center - s(0, -2) - s(0, 2))
    grad_v = np.abs(2.0 * center - s(-2, 0) - s(2, 0))
    prefer_h = grad_h * (1.0 + margin) < grad_v
    prefer_v = grad_v * (1.0 + margin) < grad_h
    if direction is not None:
        if direction.shape != shape:
            raise ShapeError(f"direction field {direction.shape} does not match mosaic {shape}", "demosaic")
        prefer_h = np.where(direction == Direction.HORIZONTAL, True,
                            np.where(direction == Direction.VERTICAL, False, prefer_h))
        prefer_v = np.where(direction == Direction.VERTICAL, True,
                            np.where(direction == Direction.HORIZONTAL, False, prefer_v))

    green = center.copy()
    for by in range(2):
        for bx in range(2):
            if cfa[by, bx] == GREEN:
                continue
            sites = (slice(by, None, 2), slice(bx, None, 2))
            h_green = cfa[by, 1 - bx] == GREEN
            v_green = cfa[1 - by, bx] == GREEN
            native = center[sites]
            est_h = green_h[sites] if h_green else native + 0.5 * (diff_v(0, -2)[sites] + diff_v(0, 2)[sites])
            est_v = green_v[sites] if v_green else native + 0.5 * (diff_h(-2, 0)[sites] + diff_h(2, 0)[sites])
            if h_green and v_green:
                tie = 0.5 * (est_h + est_v)
            else:
                tie = est_h if h_green else est_v
            green[sites] = np.where(prefer_h[sites], est_h, np.where(prefer_v[sites], est_v, tie))

    out = np.empty(shape + (3,), dtype=np.float64)
    out[..., GREEN] = green
    for channel in (0, 2):
        d = _shifter(center - green)
        for by in range(2):
            for bx in range(2):
                sites = (slice(by, None, 2), slice(bx, None, 2))
                if cfa[by, bx] == channel:
                    value = center[sites]
                elif cfa[by, 1 - bx] == channel:
                    value = green[sites] + 0.5 * (d(0, -1)[sites] + d(0, 1)[sites])
                elif cfa[1 - by, bx] == channel:
                    value = green[sites] + 0.5 * (d(-1, 0)[sites] + d(1, 0)[sites])
                else:
                    value = green[sites] + 0.25 * (d(-1, -1)[sites] + d(-1, 1)[sites]
                                                   + d(1, -1)[sites] + d(1, 1)[sites])
                out[sites + (channel,)] = value
    return out


def demosaic(frame: QuadBayerFrame, margin: float = DEFAULT_MARGIN,
             direction: Optional[np.ndarray] = None) -> RgbImage:
    """Full-resolution linear RGB from a hole-filled mosaic, normalised to [0, 1].

    Second-difference corrections can overshoot at sharp edges; the result
    is clipped back to [0, 1].
    """
    if not frame.holes_filled:
        raise PreconditionError("event holes must be filled before demosaicing", "demosaic")
    layout = block_layout(frame.pattern_phase, frame.channel_order)
    mosaic = frame.data.astype(np.float64) / float(frame.max_value)
    rgb = demosaic_array(mosaic, layout, margin, direction)
    return RgbImage(np.clip(rgb, 0.0, 1.0), ColorSpace.LINEAR)
