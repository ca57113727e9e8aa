"""Domain types shared by every stage of the pipeline.

Pixel coordinates are ``(x=column, y=row)`` with the origin at the top-left corner.
Per-pixel arrays have shape ``(height, width)`` and are indexed ``[y, x]``.
Timestamps are integer microseconds.

All types are immutable after construction: their numpy arrays are made read-only,
so instances can be shared between threads.
"""

from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from typing import NamedTuple, Self

import numpy as np

from epmb_core.errors import (
    GeometryMismatchError,
    InvalidPolarityError,
    NegativeTimestampError,
    NonFiniteValueError,
    NonMonotonicTimestampsError,
    OutOfBoundsError,
    UnsortedEventsError,
    WindowError,
)


def _readonly(values: object, dtype: type | np.dtype) -> np.ndarray:
    """Return ``values`` as a read-only array of ``dtype``, copying only writable inputs."""
    array = np.asarray(values, dtype=dtype)
    if array.flags.writeable:
        array = array.copy()
        array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SensorGeometry:
    """Spatial resolution of a sensor."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Sensor geometry must be positive, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(height, width)`` of a per-pixel frame."""
        return (self.height, self.width)

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def check_frame(self, values: np.ndarray, what: str = "frame") -> None:
        """Raise GeometryMismatchError if ``values`` is not a per-pixel array of this geometry."""
        if values.shape != self.shape:
            raise GeometryMismatchError(f"{what} has shape {values.shape}, expected {self.shape}")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal length ``f``, principal point ``(cx, cy)`` and skew ``kappa`` (pixels)."""

    f: float
    cx: float
    cy: float
    kappa: float = 0.0

    def __post_init__(self) -> None:
        if not self.f > 0:
            raise ValueError(f"Focal length must be positive, got {self.f}")

    @property
    def matrix(self) -> np.ndarray:
        """The 3x3 calibration matrix K."""
        return np.array([[self.f, self.kappa, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        """Closed-form inverse of K."""
        f, kappa, cx, cy = self.f, self.kappa, self.cx, self.cy
        return np.array(
            [
                [1.0 / f, -kappa / (f * f), (kappa * cy - f * cx) / (f * f)],
                [0.0, 1.0 / f, -cy / f],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class Event:
    """A single polarity spike."""

    x: int
    y: int
    t: int
    p: int


class TimeWindow(NamedTuple):
    """Half-open window ``[start, start + tau)`` in microseconds."""

    start: int
    tau: int

    @property
    def end(self) -> int:
        return self.start + self.tau


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered events of one sensor, stored column-wise.

    Construction validates that timestamps are non-negative and non-decreasing,
    coordinates lie inside ``geometry`` and polarities are +1 or -1.
    """

    geometry: SensorGeometry
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        t = _readonly(self.t, np.int64).reshape(-1)
        x, y, p = (np.asarray(column).reshape(-1) for column in (self.x, self.y, self.p))
        if not len(t) == len(x) == len(y) == len(p):
            raise ValueError(f"Column lengths differ: t={len(t)}, x={len(x)}, y={len(y)}, p={len(p)}")
        if len(t):
            self._validate(t, x.astype(np.int64), y.astype(np.int64), p.astype(np.int64))
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", _readonly(x, np.int32))
        object.__setattr__(self, "y", _readonly(y, np.int32))
        object.__setattr__(self, "p", _readonly(p, np.int8))

    def _validate(self, t: np.ndarray, x: np.ndarray, y: np.ndarray, p: np.ndarray) -> None:
        if t[0] < 0:
            raise NegativeTimestampError(f"Negative timestamp {t[0]}")
        decreasing = np.flatnonzero(np.diff(t) < 0)
        if decreasing.size:
            i = int(decreasing[0])
            raise UnsortedEventsError(f"Event {i + 1} at t={t[i + 1]} precedes event {i} at t={t[i]}")
        outside = (x < 0) | (x >= self.geometry.width) | (y < 0) | (y >= self.geometry.height)
        if outside.any():
            i = int(np.flatnonzero(outside)[0])
            raise OutOfBoundsError(
                f"Event {i} at ({x[i]}, {y[i]}) outside {self.geometry.width}x{self.geometry.height} sensor"
            )
        bad_polarity = (p != 1) & (p != -1)
        if bad_polarity.any():
            i = int(np.flatnonzero(bad_polarity)[0])
            raise InvalidPolarityError(f"Event {i} has polarity {p[i]}")

    @classmethod
    def empty(cls, geometry: SensorGeometry) -> Self:
        return cls(geometry, np.empty(0, np.int64), np.empty(0, np.int32), np.empty(0, np.int32), np.empty(0, np.int8))

    @classmethod
    def from_events(cls, geometry: SensorGeometry, events: Iterable[Event]) -> Self:
        """Build a stream from already ordered events."""
        rows = [(e.t, e.x, e.y, e.p) for e in events]
        if not rows:
            return cls.empty(geometry)
        t, x, y, p = zip(*rows)
        return cls(geometry, np.array(t), np.array(x), np.array(y), np.array(p))

    @classmethod
    def from_unsorted(
        cls, geometry: SensorGeometry, t: np.ndarray, x: np.ndarray, y: np.ndarray, p: np.ndarray
    ) -> Self:
        """Build a stream from columns in any order.

        Events are sorted by timestamp, ties broken by pixel index, then polarity, then input order.
        """
        t = np.asarray(t, dtype=np.int64)
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        p = np.asarray(p, dtype=np.int64)
        pixel = y * geometry.width + x
        order = np.lexsort((np.arange(len(t)), p, pixel, t))
        return cls(geometry, t[order], x[order], y[order], p[order])

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, index: int) -> Event:
        return Event(x=int(self.x[index]), y=int(self.y[index]), t=int(self.t[index]), p=int(self.p[index]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def events(self) -> list[Event]:
        return list(self)

    @property
    def pixel_index(self) -> np.ndarray:
        """Flat row-major pixel index ``y * width + x`` of every event."""
        return self.y.astype(np.int64) * self.geometry.width + self.x

    def select(self, keep: np.ndarray) -> Self:
        """Return the sub-stream of events where the boolean mask ``keep`` is set."""
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != self.t.shape:
            raise ValueError(f"Mask has shape {keep.shape}, stream has {len(self)} events")
        return type(self)(self.geometry, self.t[keep], self.x[keep], self.y[keep], self.p[keep])

    def shifted(self, offset_us: int) -> Self:
        """Return the stream translated in time by ``offset_us``."""
        return type(self)(self.geometry, self.t + offset_us, self.x, self.y, self.p)

    def with_polarity(self, p: np.ndarray) -> Self:
        return type(self)(self.geometry, self.t, self.x, self.y, p)


@dataclass(frozen=True, eq=False)
class ApsFrame:
    """Linear intensity ``A(X, k)`` of one exposure, in digital counts."""

    k: int
    start_t: int
    tau: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise WindowError(f"Frame {self.k} has non-positive exposure {self.tau}")
        values = _readonly(self.values, np.float64)
        if values.ndim != 2:
            raise ValueError(f"Frame {self.k} values must be 2-D, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise NonFiniteValueError(f"Frame {self.k} contains non-finite values")
        object.__setattr__(self, "values", values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ApsFrame):
            return NotImplemented
        return (
            (self.k, self.start_t, self.tau) == (other.k, other.start_t, other.tau)
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def window(self) -> TimeWindow:
        return TimeWindow(self.start_t, self.tau)

    @property
    def geometry(self) -> SensorGeometry:
        return SensorGeometry(width=self.values.shape[1], height=self.values.shape[0])


@dataclass(frozen=True)
class ApsSequence:
    """Synchronous frames with period ``eta`` (µs)."""

    geometry: SensorGeometry
    frames: tuple[ApsFrame, ...]
    eta: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.eta <= 0:
            raise WindowError(f"Frame period must be positive, got {self.eta}")
        for frame in self.frames:
            self.geometry.check_frame(frame.values, f"APS frame {frame.k}")
            if frame.tau >= self.eta:
                raise WindowError(f"Frame {frame.k} exposure {frame.tau} is not shorter than period {self.eta}")
        for previous, frame in zip(self.frames, self.frames[1:]):
            if frame.k <= previous.k or frame.start_t - previous.start_t != self.eta * (frame.k - previous.k):
                raise WindowError(
                    f"Frames {previous.k} and {frame.k} start at {previous.start_t} and {frame.start_t}, "
                    f"not spaced by period {self.eta}"
                )

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class ImuSample:
    """Gyroscope reading: angular velocity ``theta`` (rad/s) at time ``t`` (µs)."""

    t: int
    theta: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class ImuTrace:
    """Gyroscope samples stored as a ``(n,)`` timestamp column and an ``(n, 3)`` angular velocity array."""

    t: np.ndarray
    theta: np.ndarray
    rate: float

    def __post_init__(self) -> None:
        t = _readonly(self.t, np.int64).reshape(-1)
        theta = _readonly(self.theta, np.float64).reshape(-1, 3)
        if len(t) != len(theta):
            raise ValueError(f"IMU trace has {len(t)} timestamps and {len(theta)} readings")
        if not np.isfinite(theta).all():
            raise NonFiniteValueError("IMU trace contains non-finite angular velocities")
        if (np.diff(t) < 0).any():
            raise NonMonotonicTimestampsError("IMU samples are not sorted by timestamp")
        if not self.rate > 0:
            raise ValueError(f"IMU rate must be positive, got {self.rate}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_samples(cls, samples: Iterable[ImuSample], rate: float) -> Self:
        samples = list(samples)
        t = np.array([s.t for s in samples], dtype=np.int64)
        theta = np.array([s.theta for s in samples], dtype=np.float64).reshape(-1, 3)
        return cls(t, theta, rate)

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImuTrace):
            return NotImplemented
        return self.rate == other.rate and np.array_equal(self.t, other.t) and np.array_equal(self.theta, other.theta)

    __hash__ = None  # type: ignore[assignment]

    @property
    def samples(self) -> list[ImuSample]:
        return [ImuSample(int(t), (float(w[0]), float(w[1]), float(w[2]))) for t, w in zip(self.t, self.theta)]

    def in_window(self, window: TimeWindow) -> np.ndarray:
        """Angular velocities of the samples with ``t`` in ``[start, start + tau)``."""
        lo, hi = np.searchsorted(self.t, [window.start, window.end], side="left")
        return self.theta[lo:hi]

    def shifted(self, offset_us: int) -> Self:
        return type(self)(self.t + offset_us, self.theta, self.rate)


@dataclass(frozen=True, eq=False)
class ValidityMask:
    """Pixels on which a per-pixel quantity is defined."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = _readonly(self.values, np.bool_)
        if values.ndim != 2:
            raise ValueError(f"Validity mask must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ValidityMask):
            return NotImplemented
        return self.values.shape == other.values.shape and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]

    @property
    def count(self) -> int:
        return int(self.values.sum())

    @classmethod
    def all_valid(cls, geometry: SensorGeometry) -> Self:
        return cls(np.ones(geometry.shape, dtype=bool))


@dataclass(frozen=True, eq=False)
class EventIndicatorFrame:
    """Binary map ``E(X)``: 1 where at least one event fell inside the window."""

    window_start: int
    window_len: int
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"Indicator values must be 2-D, got shape {values.shape}")
        if not np.isin(values, (0, 1)).all():
            raise ValueError("Indicator values must be 0 or 1")
        object.__setattr__(self, "values", _readonly(values, np.uint8))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventIndicatorFrame):
            return NotImplemented
        return (
            (self.window_start, self.window_len) == (other.window_start, other.window_len)
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def window(self) -> TimeWindow:
        return TimeWindow(self.window_start, self.window_len)

    @property
    def geometry(self) -> SensorGeometry:
        return SensorGeometry(width=self.values.shape[1], height=self.values.shape[0])


@dataclass(frozen=True, eq=False)
class EpmFrame:
    """Event probability mask ``M(X)`` of one window; NaN outside ``valid``."""

    window_start: int
    window_len: int
    values: np.ndarray
    valid: ValidityMask

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.valid.values.shape:
            raise GeometryMismatchError(f"EPM values {values.shape} and mask {self.valid.values.shape} differ")
        inside = values[self.valid.values]
        if not np.isfinite(inside).all():
            raise NonFiniteValueError("EPM has non-finite values on valid pixels")
        if ((inside < 0.0) | (inside > 1.0)).any():
            raise ValueError("EPM values must lie in [0, 1] on valid pixels")
        values[~self.valid.values] = np.nan
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EpmFrame):
            return NotImplemented
        return (
            (self.window_start, self.window_len) == (other.window_start, other.window_len)
            and self.valid == other.valid
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def window(self) -> TimeWindow:
        return TimeWindow(self.window_start, self.window_len)

    @property
    def geometry(self) -> SensorGeometry:
        return SensorGeometry(width=self.values.shape[1], height=self.values.shape[0])


@dataclass(frozen=True)
class Recording:
    """Everything captured by one sensor over one sequence."""

    stream: EventStream
    aps: ApsSequence
    imu: ImuTrace
    intrinsics: CameraIntrinsics

    def __post_init__(self) -> None:
        if self.stream.geometry != self.aps.geometry:
            raise GeometryMismatchError(
                f"Event geometry {self.stream.geometry} differs from APS geometry {self.aps.geometry}"
            )

    @property
    def geometry(self) -> SensorGeometry:
        return self.stream.geometry

    def shifted(self, offset_us: int) -> Self:
        """Translate every timestamp of the recording by ``offset_us``."""
        frames = tuple(
            ApsFrame(frame.k, frame.start_t + offset_us, frame.tau, frame.values) for frame in self.aps.frames
        )
        return type(self)(
            stream=self.stream.shifted(offset_us),
            aps=ApsSequence(self.aps.geometry, frames, self.aps.eta),
            imu=self.imu.shifted(offset_us),
            intrinsics=self.intrinsics,
        )
