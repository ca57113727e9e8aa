"""Per-pixel history of recent events and the time-surface features built from it."""

import logging
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np

from epmb_core.core_types import Event, EventStream, SensorGeometry
from epmb_core.errors import FeatureShapeError, OutOfOrderEventError
from epmb_pipeline.config import bench_config

logger = logging.getLogger(__name__)

# Timestamp of an empty slot; far enough in the past that every age is capped at T_max.
NO_EVENT = -(2**62)


def polarity_channel(p: int) -> int:
    """Channel of a polarity: 0 for ON (+1), 1 for OFF (-1)."""
    return 0 if p > 0 else 1


@dataclass(frozen=True)
class FeatureSpec:
    """Neighbourhood size ``m`` (odd), history depth ``k`` and age cap ``t_max_us``."""

    m: int = field(default_factory=lambda: bench_config.feature_m)
    k: int = field(default_factory=lambda: bench_config.feature_k)
    t_max_us: int = field(default_factory=lambda: bench_config.feature_t_max_us)

    def __post_init__(self) -> None:
        if self.m < 1 or self.m % 2 == 0:
            raise FeatureShapeError(f"Neighbourhood size must be odd and positive, got m={self.m}")
        if self.k < 1:
            raise FeatureShapeError(f"History depth must be positive, got k={self.k}")
        if self.t_max_us <= 0:
            raise FeatureShapeError(f"Age cap must be positive, got {self.t_max_us}")

    @property
    def radius(self) -> int:
        return self.m // 2

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.m, self.m, self.k, 2)

    @property
    def size(self) -> int:
        return self.m * self.m * self.k * 2


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """Capped event ages around one event.

    ``values[i, j, r, c]`` is the age in microseconds of the ``r``-th most recent event of
    channel ``c`` at neighbour row ``i``, column ``j``, capped at ``t_max_us``.
    """

    values: np.ndarray
    t_max_us: int

    def normalized(self) -> np.ndarray:
        """Ages divided by ``t_max_us``, in ``[0, 1]``."""
        return (self.values / self.t_max_us).astype(np.float32)


class RecentEventStore:
    """Ring buffers of the ``k`` latest timestamps per pixel and polarity, newest first.

    Timestamps in a buffer are strictly decreasing: an event identical to the buffer
    head (same pixel, polarity and timestamp) is not stored twice.
    """

    def __init__(self, geometry: SensorGeometry, k: int) -> None:
        if k < 1:
            raise FeatureShapeError(f"History depth must be positive, got k={k}")
        self.geometry = geometry
        self.k = k
        self._times = np.full((geometry.height, geometry.width, k, 2), NO_EVENT, dtype=np.int64)
        self._latest = NO_EVENT

    @property
    def slots(self) -> int:
        return self._times.size

    @property
    def nbytes(self) -> int:
        return self._times.nbytes

    @property
    def latest(self) -> int | None:
        return None if self._latest == NO_EVENT else self._latest

    def push(self, x: int, y: int, t: int, p: int) -> None:
        """Record an event.

        Raises:
            OutOfOrderEventError: If ``t`` is older than an event already recorded
        """
        if t < self._latest:
            raise OutOfOrderEventError(f"Event at t={t} arrives after t={self._latest}")
        self._latest = t
        buffer = self._times[y, x, :, polarity_channel(p)]
        if buffer[0] == t:
            return
        buffer[1:] = buffer[:-1].copy()
        buffer[0] = t

    def update(self, event: Event) -> None:
        self.push(event.x, event.y, event.t, event.p)

    def history(self, x: int, y: int, p: int) -> list[int]:
        """Stored timestamps of one pixel and polarity, newest first."""
        buffer = self._times[y, x, :, polarity_channel(p)]
        return [int(t) for t in buffer if t != NO_EVENT]

    def neighbourhood(self, x: int, y: int, radius: int, k: int) -> np.ndarray:
        """Timestamps of the ``(2 * radius + 1)^2`` pixels around ``(x, y)``, ``NO_EVENT`` off the sensor."""
        if k > self.k:
            raise FeatureShapeError(f"Store keeps {self.k} events per pixel, {k} requested")
        size = 2 * radius + 1
        block = np.full((size, size, k, 2), NO_EVENT, dtype=np.int64)
        y0, y1 = max(y - radius, 0), min(y + radius + 1, self.geometry.height)
        x0, x1 = max(x - radius, 0), min(x + radius + 1, self.geometry.width)
        block[y0 - y + radius : y1 - y + radius, x0 - x + radius : x1 - x + radius] = self._times[y0:y1, x0:x1, :k]
        return block

    def ages(self, x: int, y: int, t: int, spec: FeatureSpec) -> np.ndarray:
        """``min(t - t_r, T_max)`` over the neighbourhood of ``(x, y)``, shape ``spec.shape``."""
        return np.minimum(t - self.neighbourhood(x, y, spec.radius, spec.k), spec.t_max_us)


def extract_features(store: RecentEventStore, event: Event, spec: FeatureSpec | None = None) -> FeatureTensor:
    """Time-surface tensor of ``event`` from the history in ``store``.

    The store must hold exactly the events that precede ``event``; the result does not
    depend on anything recorded at or after ``event.t``.
    """
    spec = spec or FeatureSpec()
    return FeatureTensor(values=store.ages(event.x, event.y, event.t, spec), t_max_us=spec.t_max_us)


def timestamp_groups(t: np.ndarray) -> Iterator[tuple[int, int]]:
    """``[begin, end)`` index ranges of equal timestamps in a sorted column."""
    if not len(t):
        return
    bounds = np.flatnonzero(np.diff(t)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [len(t)]))
    yield from zip(starts.tolist(), ends.tolist())


def replay_features(
    stream: EventStream, spec: FeatureSpec, select: np.ndarray | None = None, batch_size: int | None = None
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Replay ``stream`` through a fresh store and yield normalized features in batches.

    Events sharing a timestamp form one group: the features of every event in the group
    are taken before any of them is recorded. Every event updates the store, selected or not.

    Args:
        stream: Time-ordered events
        spec: Feature geometry
        select: Boolean mask of the events to extract features for; default all
        batch_size: Events per yielded batch

    Yields:
        Indices into ``stream`` and their features, shape ``(len(indices), spec.size)``, float32
    """
    batch_size = batch_size or bench_config.classify_batch_size
    select = np.ones(len(stream), dtype=bool) if select is None else np.asarray(select, dtype=bool)
    store = RecentEventStore(stream.geometry, spec.k)
    ts, xs, ys, ps = (column.tolist() for column in (stream.t, stream.x, stream.y, stream.p))
    batch = np.empty((batch_size, spec.size), dtype=np.float32)
    indices: list[int] = []
    scale = 1.0 / spec.t_max_us
    for begin, end in timestamp_groups(stream.t):
        for i in range(begin, end):
            if select[i]:
                batch[len(indices)] = store.ages(xs[i], ys[i], ts[i], spec).reshape(-1) * scale
                indices.append(i)
                if len(indices) == batch_size:
                    yield np.array(indices, dtype=np.int64), batch.copy()
                    indices.clear()
        for i in range(begin, end):
            store.push(xs[i], ys[i], ts[i], ps[i])
    if indices:
        yield np.array(indices, dtype=np.int64), batch[: len(indices)].copy()
