"""Exposure-window bookkeeping: windows of an APS sequence, stream slicing and event indicators."""

import logging
from collections.abc import Sequence

import numpy as np

from epmb_core.core_types import ApsSequence, EventIndicatorFrame, EventStream, TimeWindow
from epmb_core.errors import EmptySequenceError, WindowError

logger = logging.getLogger(__name__)


def exposure_windows(aps: ApsSequence) -> list[TimeWindow]:
    """List the exposure window ``[start_t, start_t + tau)`` of every frame.

    Args:
        aps: Frame sequence

    Returns:
        One window per frame, in frame order

    Raises:
        EmptySequenceError: If the sequence holds no frame
    """
    if not aps.frames:
        raise EmptySequenceError("APS sequence has no frames")
    return [frame.window for frame in aps.frames]


def slice_stream(stream: EventStream, t0: int, t1: int) -> EventStream:
    """Return the events with ``t0 <= t < t1``; the result shares memory with ``stream``.

    Raises:
        WindowError: If ``t0 > t1``
    """
    if t0 > t1:
        raise WindowError(f"Slice start {t0} is after its end {t1}")
    lo, hi = np.searchsorted(stream.t, [t0, t1], side="left")
    return EventStream(stream.geometry, stream.t[lo:hi], stream.x[lo:hi], stream.y[lo:hi], stream.p[lo:hi])


def event_indicator(stream: EventStream, window: tuple[int, int]) -> EventIndicatorFrame:
    """Mark every pixel that fired at least once inside ``window``, ignoring polarity.

    Args:
        stream: Sorted event stream
        window: ``(start, tau)`` in microseconds, half-open

    Returns:
        Indicator frame with the stream's geometry

    Raises:
        WindowError: If ``tau <= 0``
    """
    start, tau = window
    if tau <= 0:
        raise WindowError(f"Window length must be positive, got {tau}")
    inside = slice_stream(stream, start, start + tau)
    values = np.zeros(stream.geometry.shape, dtype=np.uint8)
    values[inside.y, inside.x] = 1
    return EventIndicatorFrame(window_start=start, window_len=tau, values=values)


def check_disjoint(windows: Sequence[tuple[int, int]]) -> None:
    """Raise WindowError unless the windows have positive length and do not overlap."""
    ordered = sorted(TimeWindow(*w) for w in windows)
    for window in ordered:
        if window.tau <= 0:
            raise WindowError(f"Window {tuple(window)} has non-positive length")
    for previous, window in zip(ordered, ordered[1:]):
        if window.start < previous.end:
            raise WindowError(f"Windows {tuple(previous)} and {tuple(window)} overlap")


def in_any_window(t: np.ndarray, windows: Sequence[tuple[int, int]]) -> np.ndarray:
    """Boolean mask of the timestamps that fall inside at least one of the disjoint ``windows``."""
    return window_of(t, windows) >= 0


def window_of(t: np.ndarray, windows: Sequence[tuple[int, int]]) -> np.ndarray:
    """Index into ``windows`` (as given) of the window holding each timestamp, or -1."""
    t = np.asarray(t, dtype=np.int64)
    result = np.full(t.shape, -1, dtype=np.int64)
    if not windows:
        return result
    order = sorted(range(len(windows)), key=lambda i: windows[i][0])
    starts = np.array([windows[i][0] for i in order], dtype=np.int64)
    ends = np.array([windows[i][0] + windows[i][1] for i in order], dtype=np.int64)
    position = np.searchsorted(starts, t, side="right") - 1
    hit = position >= 0
    hit[hit] = t[hit] < ends[position[hit]]
    result[hit] = np.asarray(order, dtype=np.int64)[position[hit]]
    return result
