"""RPMD benchmark: how plausible a denoised stream is under the event probability masks.

Every pixel of a window is an independent Bernoulli variable with success probability
``M``. A stream is scored by the log-probability of its event indicator, relative to
the most probable indicator ``E_opt`` and normalized by the number of valid pixels.
"""

import logging
import time
from collections.abc import Callable, Mapping, Sequence
from typing import Any

import numpy as np
from pydantic import BaseModel, Field

from epmb_core.core_types import EpmFrame, EventIndicatorFrame, EventStream, TimeWindow
from epmb_core.errors import GeometryMismatchError, NoValidPixelsError, WindowError
from epmb_core.windows import check_disjoint, event_indicator
from epmb_pipeline.config import bench_config
from epmb_pipeline.worker import WorkerPool, default_pool

logger = logging.getLogger(__name__)

RAW_METHOD = "raw"
BOUND_METHOD = "e_opt"


def _check_aligned(indicator: EventIndicatorFrame, mask: EpmFrame) -> None:
    if indicator.values.shape != mask.values.shape:
        raise GeometryMismatchError(f"Indicator {indicator.values.shape} and EPM {mask.values.shape} differ in shape")


def clamped(mask: EpmFrame, clamp: float | None = None) -> np.ndarray:
    """Valid EPM values clamped to ``[delta, 1 - delta]``, flattened."""
    delta = bench_config.prob_clamp if clamp is None else clamp
    return np.clip(mask.values[mask.valid.values], delta, 1.0 - delta)


def log_prob(indicator: EventIndicatorFrame, mask: EpmFrame, clamp: float | None = None) -> float:
    """Bernoulli log-probability of ``indicator`` over the valid pixels of ``mask``.

    Raises:
        GeometryMismatchError: If the frames differ in shape
    """
    _check_aligned(indicator, mask)
    m = clamped(mask, clamp)
    e = indicator.values[mask.valid.values].astype(bool)
    return float(np.sum(np.where(e, np.log(m), np.log1p(-m))))


def e_opt(mask: EpmFrame) -> EventIndicatorFrame:
    """The most probable indicator: 1 where ``M > 0.5``, 0 elsewhere and on invalid pixels."""
    values = np.where(mask.valid.values, np.nan_to_num(mask.values, nan=0.0) > 0.5, False)
    return EventIndicatorFrame(mask.window_start, mask.window_len, values.astype(np.uint8))


def rpmd(indicator: EventIndicatorFrame, mask: EpmFrame, clamp: float | None = None) -> float:
    """``(log Pr[E_opt] - log Pr[E]) / N`` over the ``N`` valid pixels of ``mask``.

    Raises:
        NoValidPixelsError: If ``mask`` has no valid pixel
        GeometryMismatchError: If the frames differ in shape
    """
    count = mask.valid.count
    if count == 0:
        raise NoValidPixelsError(f"EPM of window {mask.window_start} has no valid pixel")
    return (log_prob(e_opt(mask), mask, clamp) - log_prob(indicator, mask, clamp)) / count


def log_prob_improvement(before: EventIndicatorFrame, after: EventIndicatorFrame, mask: EpmFrame) -> float:
    """``log Pr[E'] - log Pr[E]``: positive when ``after`` is more plausible than ``before``."""
    return log_prob(after, mask) - log_prob(before, mask)


class WindowScore(BaseModel):
    """RPMD of one exposure window."""

    window_start: int
    window_len: int
    rpmd: float
    valid_pixels: int = Field(gt=0)


class BenchmarkReport(BaseModel):
    """Per-window and aggregate RPMD of one method on one recording."""

    method: str
    parameters: dict[str, Any] = Field(default_factory=dict)
    windows: list[WindowScore]
    aggregate_rpmd: float
    skipped_windows: int = 0

    @property
    def valid_pixels(self) -> int:
        return sum(window.valid_pixels for window in self.windows)


def aggregate(scores: Sequence[WindowScore]) -> float:
    """Mean RPMD weighted by the valid-pixel count of each window."""
    weights = np.array([score.valid_pixels for score in scores], dtype=np.float64)
    values = np.array([score.rpmd for score in scores], dtype=np.float64)
    return float(np.sum(weights * values) / np.sum(weights))


def _score_indicators(
    indicators: Sequence[EventIndicatorFrame], masks: Sequence[EpmFrame], method: str, parameters: Mapping[str, Any]
) -> BenchmarkReport:
    scores, skipped = [], 0
    for indicator, mask in zip(indicators, masks):
        if mask.valid.count == 0:
            skipped += 1
            logger.debug(f"Skipping window {mask.window_start}: no valid EPM pixel")
            continue
        scores.append(
            WindowScore(
                window_start=mask.window_start,
                window_len=mask.window_len,
                rpmd=rpmd(indicator, mask),
                valid_pixels=mask.valid.count,
            )
        )
    if not scores:
        raise NoValidPixelsError(f"No window with valid EPM pixels for method {method}")
    return BenchmarkReport(
        method=method,
        parameters=dict(parameters),
        windows=scores,
        aggregate_rpmd=aggregate(scores),
        skipped_windows=skipped,
    )


def bench_method(
    stream: EventStream,
    masks: Sequence[EpmFrame],
    windows: Sequence[TimeWindow] | None = None,
    method: str = RAW_METHOD,
    parameters: Mapping[str, Any] | None = None,
    pool: WorkerPool | None = None,
) -> BenchmarkReport:
    """Score a (denoised) stream against the EPM of every window.

    Args:
        stream: Events to score
        masks: One EPM frame per window
        windows: Exposure windows; default the windows of ``masks``
        method: Name recorded in the report
        parameters: Method parameters recorded in the report
        pool: Worker pool for per-window indicators

    Raises:
        WindowError: If windows overlap or do not match the EPM frames
        NoValidPixelsError: If no window has a valid pixel
    """
    windows = [mask.window for mask in masks] if windows is None else [TimeWindow(*w) for w in windows]
    if len(windows) != len(masks) or any(w != mask.window for w, mask in zip(windows, masks)):
        raise WindowError("Windows do not match the EPM frames")
    check_disjoint(windows)
    for mask in masks:
        stream.geometry.check_frame(mask.values, f"EPM of window {mask.window_start}")
    started = time.perf_counter()
    indicators = default_pool(pool).map(lambda window: event_indicator(stream, window), windows)
    report = _score_indicators(indicators, masks, method, parameters or {})
    elapsed_ms = (time.perf_counter() - started) * 1000
    logger.info(
        f"Method {method}: RPMD {report.aggregate_rpmd:.4f} over {len(report.windows)} windows ({elapsed_ms:.0f} ms)"
    )
    return report


def bound_report(masks: Sequence[EpmFrame]) -> BenchmarkReport:
    """The ``e_opt`` row: scores of the optimal indicators, zero by construction."""
    return _score_indicators([e_opt(mask) for mask in masks], masks, BOUND_METHOD, {})


class SweepPoint(BaseModel):
    """Aggregate RPMD of one method at one BA level."""

    noise_percent: float
    method: str
    rpmd: float
    events: int


def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> float:
    """Coefficient of determination of the least-squares line through ``(x, y)``."""
    x_arr, y_arr = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x_arr, y_arr, 1)
    residual = np.sum((y_arr - (slope * x_arr + intercept)) ** 2)
    total = np.sum((y_arr - y_arr.mean()) ** 2)
    return 1.0 - residual / total if total > 0 else 1.0


def noise_sweep(
    clean: EventStream,
    masks: Sequence[EpmFrame],
    noise_percents: Sequence[float],
    inject: Callable[[EventStream, float], EventStream],
    denoisers: Mapping[str, Callable[[EventStream], EventStream]] | None = None,
    pool: WorkerPool | None = None,
) -> list[SweepPoint]:
    """RPMD of the raw stream and of every denoiser as the BA percentage grows.

    Args:
        clean: Noise-free events
        masks: EPM frames of the recording
        noise_percents: BA levels as a percentage of the clean event count
        inject: Returns ``clean`` with the given fraction (0-1) of BA events added
        denoisers: Name and function of every denoiser to score next to the raw stream
        pool: Worker pool for the per-window scoring
    """
    points = []
    for percent in noise_percents:
        noisy = inject(clean, percent / 100)
        candidates = {RAW_METHOD: noisy}
        for name, denoise in (denoisers or {}).items():
            candidates[name] = denoise(noisy)
        for name, stream in candidates.items():
            report = bench_method(stream, masks, method=name, parameters={"noise_percent": percent}, pool=pool)
            points.append(
                SweepPoint(noise_percent=percent, method=name, rpmd=report.aggregate_rpmd, events=len(stream))
            )
        logger.info(f"Noise level {percent}%: {len(noisy)} events")
    return points
