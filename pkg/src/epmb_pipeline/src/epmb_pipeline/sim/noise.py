"""Injection of the four DVS noise types into an event stream.

Every random draw uses a per-pixel generator derived from ``(rng_seed, stage, pixel)``,
so the result for a fixed seed does not depend on how pixels are scheduled.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.stats import truncnorm

from epmb_core.core_types import EventStream, SensorGeometry
from epmb_pipeline.sim.specs import NoiseSpec

logger = logging.getLogger(__name__)

JITTER_TRUNCATION = 3.0


class NoiseStage(IntEnum):
    """Salt of each independent random stream."""

    HOLES = 1
    COUNT = 2
    JITTER = 3
    BACKGROUND = 4


@dataclass(frozen=True, eq=False)
class NoisyStream:
    """A stream with its hidden provenance: ``is_signal[i]`` is False for injected BA events."""

    stream: EventStream
    is_signal: np.ndarray

    def __len__(self) -> int:
        return len(self.stream)

    @property
    def signal_count(self) -> int:
        return int(self.is_signal.sum())

    @property
    def noise_count(self) -> int:
        return len(self) - self.signal_count


def pixel_rng(seed: int, stage: NoiseStage, pixel: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, int(stage), pixel]))


def _per_pixel(stream: EventStream) -> list[tuple[int, np.ndarray]]:
    """Event indices grouped by pixel, in pixel order then stream order."""
    pixels = stream.pixel_index
    order = np.argsort(pixels, kind="stable")
    unique, starts = np.unique(pixels[order], return_index=True)
    return [(int(pixel), group) for pixel, group in zip(unique, np.split(order, starts[1:]))]


def _drop_holes(stream: EventStream, spec: NoiseSpec) -> np.ndarray:
    keep = np.ones(len(stream), dtype=bool)
    if spec.hole_prob == 0:
        return keep
    for pixel, events in _per_pixel(stream):
        rng = pixel_rng(spec.rng_seed, NoiseStage.HOLES, pixel)
        keep[events] = rng.random(len(events)) >= spec.hole_prob
    return keep


def _count_repeats(stream: EventStream, spec: NoiseSpec) -> np.ndarray:
    """Copies of each event: a stochastically rounded ``1 / g`` with ``g ~ LogNormal(0, sigma)``."""
    repeats = np.ones(len(stream), dtype=np.int64)
    if spec.count_gain_sigma == 0:
        return repeats
    for pixel, events in _per_pixel(stream):
        rng = pixel_rng(spec.rng_seed, NoiseStage.COUNT, pixel)
        expected = 1.0 / rng.lognormal(mean=0.0, sigma=spec.count_gain_sigma, size=len(events))
        base = np.floor(expected)
        repeats[events] = (base + (rng.random(len(events)) < expected - base)).astype(np.int64)
    return repeats


def _jitter(stream: EventStream, spec: NoiseSpec) -> np.ndarray:
    offsets = np.zeros(len(stream), dtype=np.int64)
    if spec.jitter_sigma == 0:
        return offsets
    for pixel, events in _per_pixel(stream):
        rng = pixel_rng(spec.rng_seed, NoiseStage.JITTER, pixel)
        draws = truncnorm.rvs(
            -JITTER_TRUNCATION, JITTER_TRUNCATION, scale=spec.jitter_sigma, size=len(events), random_state=rng
        )
        offsets[events] = np.rint(draws).astype(np.int64)
    return offsets


def background_activity(
    geometry: SensorGeometry, rate: float, duration_us: int, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Homogeneous Poisson events of fair-coin polarity at every pixel over ``[0, duration_us)``."""
    columns: list[list[np.ndarray]] = [[], [], [], []]
    if rate == 0 or duration_us <= 0:
        empty = np.empty(0, np.int64)
        return empty, empty, empty, empty
    for pixel in range(geometry.pixel_count):
        rng = pixel_rng(seed, NoiseStage.BACKGROUND, pixel)
        count = rng.poisson(rate * duration_us * 1e-6)
        if count == 0:
            continue
        columns[0].append(rng.integers(0, duration_us, size=count))
        columns[1].append(np.full(count, pixel % geometry.width))
        columns[2].append(np.full(count, pixel // geometry.width))
        columns[3].append(np.where(rng.random(count) < 0.5, 1, -1))
    if not columns[0]:
        empty = np.empty(0, np.int64)
        return empty, empty, empty, empty
    t, x, y, p = (np.concatenate(column).astype(np.int64) for column in columns)
    return t, x, y, p


def inject_noise(stream: EventStream, spec: NoiseSpec, duration_us: int | None = None) -> NoisyStream:
    """Apply holes, count variance, timestamp jitter and background activity.

    Real events are dropped i.i.d. with ``hole_prob``, repeated according to the count
    variance (copies 1 µs apart), shifted by a Gaussian truncated at 3 sigma and clipped
    at ``t >= 0``. BA events are then drawn over ``[0, duration_us)`` (default: last
    timestamp + 1). The result is re-sorted stably by time, real events before BA events.

    Args:
        stream: Input events, all tagged as signal
        spec: Noise levels and seed
        duration_us: Recording duration for the BA process
    """
    if spec.is_identity:
        return NoisyStream(stream=stream, is_signal=np.ones(len(stream), dtype=bool))
    keep = _drop_holes(stream, spec)
    kept = stream.select(keep)
    repeats = _count_repeats(kept, spec)
    source = np.repeat(np.arange(len(kept)), repeats)
    copy_rank = np.arange(len(source)) - np.repeat(np.cumsum(repeats) - repeats, repeats)
    t = kept.t[source] + copy_rank
    x, y, p = kept.x[source], kept.y[source], kept.p[source]
    repeated = EventStream.from_unsorted(stream.geometry, t, x, y, p)
    t = np.maximum(repeated.t + _jitter(repeated, spec), 0)

    if duration_us is None:
        duration_us = int(stream.t[-1]) + 1 if len(stream) else 0
    ba_t, ba_x, ba_y, ba_p = background_activity(stream.geometry, spec.ba_rate, duration_us, spec.rng_seed)

    all_t = np.concatenate([t, ba_t])
    is_signal = np.concatenate([np.ones(len(t), dtype=bool), np.zeros(len(ba_t), dtype=bool)])
    order = np.argsort(all_t, kind="stable")
    noisy = EventStream(
        stream.geometry,
        all_t[order],
        np.concatenate([repeated.x, ba_x])[order],
        np.concatenate([repeated.y, ba_y])[order],
        np.concatenate([repeated.p, ba_p])[order],
    )
    logger.info(
        f"Injected noise: {len(stream)} -> {len(noisy)} events "
        f"({len(stream) - len(kept)} dropped, {len(ba_t)} background)"
    )
    return NoisyStream(stream=noisy, is_signal=is_signal[order])


def ba_rate_for_fraction(signal_count: int, fraction: float, geometry: SensorGeometry, duration_us: int) -> float:
    """BA rate (events per pixel per second) that adds ``fraction * signal_count`` events on average."""
    if duration_us <= 0:
        raise ValueError(f"Duration must be positive, got {duration_us}")
    return fraction * signal_count / (geometry.pixel_count * duration_us * 1e-6)
