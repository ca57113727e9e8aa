"""Classical denoisers: background-activity, nearest-neighbour and inceptive-event filters.

All filters are causal and take a time-ordered stream. Neighbour support never counts
the event's own pixel; the temporal test is inclusive, so an event ``dt_us`` older than
the current one still supports it.
"""

import logging
import time
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from epmb_core.core_types import EventStream
from epmb_core.errors import ConfigError
from epmb_pipeline.config import bench_config
from epmb_pipeline.denoise.store import NO_EVENT

logger = logging.getLogger(__name__)


class EventRole(IntEnum):
    INCEPTIVE = 0
    TRAILING = 1


@dataclass(frozen=True)
class FilterResult:
    """A stream split into kept and removed events; ``keep`` is the mask over the input."""

    kept: EventStream
    removed: EventStream
    keep: np.ndarray

    @classmethod
    def split(cls, stream: EventStream, keep: np.ndarray) -> "FilterResult":
        keep = np.asarray(keep, dtype=bool)
        return cls(kept=stream.select(keep), removed=stream.select(~keep), keep=keep)


def _check_dt(dt_us: int) -> None:
    if dt_us < 0:
        raise ConfigError(f"dt_us must be non-negative, got {dt_us}")


def _check_params(dt_us: int, radius: int) -> None:
    _check_dt(dt_us)
    if radius < 1:
        raise ConfigError(f"radius must be at least 1, got {radius}")


def baf(stream: EventStream, dt_us: int | None = None, radius: int | None = None) -> FilterResult:
    """Background-activity filter.

    Keeps an event iff a neighbour within Chebyshev ``radius`` fired, in either polarity,
    at most ``dt_us`` before it.

    Every event stamps its timestamp onto its neighbours; an event then only has to look
    up its own entry.
    """
    dt_us = bench_config.baseline_dt_us if dt_us is None else dt_us
    radius = bench_config.baseline_radius if radius is None else radius
    _check_params(dt_us, radius)
    geometry = stream.geometry
    support = np.full((geometry.height + 2 * radius, geometry.width + 2 * radius), NO_EVENT, dtype=np.int64)
    keep = np.zeros(len(stream), dtype=bool)
    for i, (t, x, y) in enumerate(zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist())):
        cy, cx = y + radius, x + radius
        own = support[cy, cx]
        keep[i] = t - own <= dt_us
        support[cy - radius : cy + radius + 1, cx - radius : cx + radius + 1] = t
        support[cy, cx] = own
    return FilterResult.split(stream, keep)


def nn_filter(
    stream: EventStream, dt_us: int | None = None, radius: int | None = None, min_count: int = 1
) -> FilterResult:
    """Nearest-neighbour support filter.

    Keeps an event iff at least ``min_count`` neighbour events within Chebyshev ``radius``
    occurred at most ``dt_us`` before it. NN is ``min_count=1``, NN2 ``min_count=2``.
    """
    dt_us = bench_config.baseline_dt_us if dt_us is None else dt_us
    radius = bench_config.baseline_radius if radius is None else radius
    _check_params(dt_us, radius)
    if min_count < 1:
        raise ConfigError(f"min_count must be at least 1, got {min_count}")
    geometry = stream.geometry
    # Per pixel, the last min_count timestamps (newest first) are enough to decide the count.
    recent = np.full(
        (geometry.height + 2 * radius, geometry.width + 2 * radius, min_count), NO_EVENT, dtype=np.int64
    )
    size = 2 * radius + 1
    not_center = np.ones((size, size, 1), dtype=bool)
    not_center[radius, radius] = False
    keep = np.zeros(len(stream), dtype=bool)
    for i, (t, x, y) in enumerate(zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist())):
        block = recent[y : y + size, x : x + size]
        count = int(np.count_nonzero((t - block <= dt_us) & not_center))
        keep[i] = count >= min_count
        slot = recent[y + radius, x + radius]
        slot[1:] = slot[:-1].copy()
        slot[0] = t
    return FilterResult.split(stream, keep)


def _pixel_polarity_order(stream: EventStream) -> tuple[np.ndarray, np.ndarray]:
    key = stream.pixel_index * 2 + (stream.p < 0)
    order = np.lexsort((np.arange(len(stream)), stream.t, key))
    return order, key[order]


def ie_label(stream: EventStream, dt_us: int | None = None) -> np.ndarray:
    """Role of every event: inceptive unless the same pixel and polarity fired at most ``dt_us`` earlier.

    Returns:
        ``EventRole`` values as uint8, one per event
    """
    dt_us = bench_config.baseline_dt_us if dt_us is None else dt_us
    _check_dt(dt_us)
    roles = np.full(len(stream), EventRole.INCEPTIVE, dtype=np.uint8)
    if len(stream) < 2:
        return roles
    order, key = _pixel_polarity_order(stream)
    t = stream.t[order]
    trailing = np.zeros(len(stream), dtype=bool)
    trailing[1:] = (key[1:] == key[:-1]) & (t[1:] - t[:-1] <= dt_us)
    roles[order[trailing]] = EventRole.TRAILING
    return roles


def ie_filter(stream: EventStream, dt_us: int | None = None) -> FilterResult:
    """Keep inceptive events only."""
    return FilterResult.split(stream, ie_label(stream, dt_us) == EventRole.INCEPTIVE)


def ie_te_filter(stream: EventStream, dt_us: int | None = None) -> tuple[FilterResult, np.ndarray]:
    """Keep trailing events and the inceptive events that a trailing event follows.

    Returns:
        The split and the role of every input event
    """
    dt_us = bench_config.baseline_dt_us if dt_us is None else dt_us
    roles = ie_label(stream, dt_us)
    keep = roles == EventRole.TRAILING
    if len(stream) > 1:
        order, key = _pixel_polarity_order(stream)
        t = stream.t[order]
        followed = np.zeros(len(stream), dtype=bool)
        followed[:-1] = (key[:-1] == key[1:]) & (t[1:] - t[:-1] <= dt_us)
        keep[order[followed]] = True
    return FilterResult.split(stream, keep), roles


BASELINES = ("baf", "nn", "nn2", "ie", "ie+te")


def run_baseline(
    stream: EventStream, method: str, dt_us: int | None = None, radius: int | None = None
) -> FilterResult:
    """Apply a classical filter by name.

    Raises:
        ConfigError: If ``method`` is not one of ``BASELINES`` or a parameter is out of range
    """
    started = time.perf_counter()
    match method:
        case "baf":
            result = baf(stream, dt_us, radius)
        case "nn":
            result = nn_filter(stream, dt_us, radius, min_count=1)
        case "nn2":
            result = nn_filter(stream, dt_us, radius, min_count=2)
        case "ie":
            result = ie_filter(stream, dt_us)
        case "ie+te":
            result, _ = ie_te_filter(stream, dt_us)
        case _:
            raise ConfigError(f"Unknown denoiser {method!r}, expected one of {', '.join(BASELINES)}")
    elapsed_ms = (time.perf_counter() - started) * 1000
    logger.info(f"Filter {method}: kept {len(result.kept)} of {len(stream)} events ({elapsed_ms:.0f} ms)")
    return result
