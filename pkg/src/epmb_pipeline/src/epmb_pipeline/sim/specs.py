"""JSON-configurable descriptions of a simulated recording."""

from enum import StrEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from epmb_core.core_types import CameraIntrinsics, SensorGeometry
from epmb_core.errors import SimulationError
from epmb_pipeline.config import bench_config


class SceneKind(StrEnum):
    """Panoramic log-intensity patterns."""

    CHECKERBOARD = "checkerboard"
    SINUSOID = "sinusoid"
    LINEAR_RAMP = "linear-ramp"
    GAUSSIAN_BLOBS = "gaussian-blobs"


class SceneSpec(BaseModel):
    """A log-intensity pattern painted on the sphere of viewing directions.

    Angles are radians. ``period`` is the angular period of the pattern along its
    ``orientation``; ``amplitude`` and ``offset`` are in log-intensity units.
    """

    model_config = ConfigDict(extra="forbid")

    kind: SceneKind = SceneKind.SINUSOID
    period: float = Field(default=0.1, gt=0)
    amplitude: float = Field(default=0.5, ge=0)
    orientation: float = 0.0
    phase: float = 0.0
    offset: float = 0.0
    edge_width: float = Field(default=0.3, gt=0)  # checkerboard edge softness, in units of sin()
    blob_seed: int = 0


class MotionSegment(BaseModel):
    """Angular velocity over one segment: per axis, polynomial coefficients in ascending powers of local time (s)."""

    model_config = ConfigDict(extra="forbid")

    duration_s: float = Field(gt=0)
    coefficients: list[list[float]]

    @field_validator("coefficients")
    @classmethod
    def _three_axes(cls, value: list[list[float]]) -> list[list[float]]:
        if len(value) != 3 or any(len(axis) == 0 for axis in value):
            raise ValueError("coefficients need one non-empty polynomial per axis (x, y, z)")
        if not np.isfinite(np.concatenate([np.asarray(axis, dtype=float) for axis in value])).all():
            raise ValueError("coefficients must be finite")
        return value


class MotionProfile(BaseModel):
    """Piecewise-polynomial 3-axis angular velocity over ``[0, duration]``, continuous at breakpoints."""

    model_config = ConfigDict(extra="forbid")

    segments: list[MotionSegment] = Field(min_length=1)

    @model_validator(mode="after")
    def _continuous(self) -> "MotionProfile":
        for i, (previous, segment) in enumerate(zip(self.segments, self.segments[1:])):
            end = np.array([np.polyval(axis[::-1], previous.duration_s) for axis in previous.coefficients])
            start = np.array([axis[0] for axis in segment.coefficients])
            if not np.allclose(end, start, rtol=1e-9, atol=1e-9):
                raise ValueError(f"angular velocity jumps between segments {i} and {i + 1}: {end} -> {start}")
        return self

    @classmethod
    def constant(cls, theta: tuple[float, float, float], duration_s: float) -> "MotionProfile":
        return cls(segments=[MotionSegment(duration_s=duration_s, coefficients=[[w] for w in theta])])

    @classmethod
    def linear(
        cls, theta_start: tuple[float, float, float], theta_end: tuple[float, float, float], duration_s: float
    ) -> "MotionProfile":
        slopes = [(b - a) / duration_s for a, b in zip(theta_start, theta_end)]
        return cls(
            segments=[
                MotionSegment(duration_s=duration_s, coefficients=[[a, s] for a, s in zip(theta_start, slopes)])
            ]
        )

    def reversed_direction(self) -> "MotionProfile":
        """The same profile with every angular velocity negated."""
        return MotionProfile(
            segments=[
                MotionSegment(duration_s=s.duration_s, coefficients=[[-c for c in axis] for axis in s.coefficients])
                for s in self.segments
            ]
        )

    @property
    def duration_s(self) -> float:
        return float(sum(segment.duration_s for segment in self.segments))

    @property
    def duration_us(self) -> int:
        return int(round(self.duration_s * 1e6))

    def _locate(self, t_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Segment index and local time of every time in seconds."""
        t_s = np.asarray(t_s, dtype=np.float64)
        if (t_s < -1e-12).any() or (t_s > self.duration_s + 1e-12).any():
            raise SimulationError(f"Time outside the motion domain [0, {self.duration_s}] s")
        starts = self.breakpoints_s[:-1]
        index = np.clip(np.searchsorted(starts, t_s, side="right") - 1, 0, len(self.segments) - 1)
        return index, np.maximum(t_s - starts[index], 0.0)

    def theta(self, t_s: np.ndarray | float) -> np.ndarray:
        """Angular velocity (rad/s) at each time; shape ``(..., 3)``."""
        shape = np.shape(t_s)
        t_s = np.atleast_1d(np.asarray(t_s, dtype=np.float64)).ravel()
        index, local = self._locate(t_s)
        result = np.zeros(t_s.shape + (3,))
        for i, segment in enumerate(self.segments):
            mask = index == i
            if not mask.any():
                continue
            for axis, coefficients in enumerate(segment.coefficients):
                result[mask, axis] = np.polyval(coefficients[::-1], local[mask])
        return result.reshape(shape + (3,))

    def integral(self, t_s: np.ndarray | float) -> np.ndarray:
        """Exact ``integral(theta, 0, t)`` (rad) at each time; shape ``(..., 3)``."""
        shape = np.shape(t_s)
        t_s = np.atleast_1d(np.asarray(t_s, dtype=np.float64)).ravel()
        index, local = self._locate(t_s)
        antiderivatives = [
            [[0.0] + [c / (n + 1) for n, c in enumerate(axis)] for axis in segment.coefficients]
            for segment in self.segments
        ]
        totals = np.zeros((len(self.segments) + 1, 3))
        for i, (segment, polys) in enumerate(zip(self.segments, antiderivatives)):
            totals[i + 1] = totals[i] + [np.polyval(poly[::-1], segment.duration_s) for poly in polys]
        result = np.zeros(t_s.shape + (3,))
        for i, polys in enumerate(antiderivatives):
            mask = index == i
            if not mask.any():
                continue
            for axis, poly in enumerate(polys):
                result[mask, axis] = totals[i, axis] + np.polyval(poly[::-1], local[mask])
        return result.reshape(shape + (3,))

    @property
    def breakpoints_s(self) -> np.ndarray:
        return np.cumsum([0.0] + [segment.duration_s for segment in self.segments])


class CameraSpec(BaseModel):
    """Simulated sensor geometry and pinhole intrinsics; the principal point defaults to the image centre."""

    model_config = ConfigDict(extra="forbid")

    width: int = Field(default=64, gt=0)
    height: int = Field(default=48, gt=0)
    f: float = Field(default=400.0, gt=0)
    cx: float | None = None
    cy: float | None = None
    kappa: float = 0.0

    @property
    def geometry(self) -> SensorGeometry:
        return SensorGeometry(width=self.width, height=self.height)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        cx = self.cx if self.cx is not None else (self.width - 1) / 2
        cy = self.cy if self.cy is not None else (self.height - 1) / 2
        return CameraIntrinsics(f=self.f, cx=cx, cy=cy, kappa=self.kappa)


class SensorParams(BaseModel):
    """DVS thresholds and amplifier, APS gain/offset and timing.

    ``J = log(a * I + b)``; ``A = alpha * integral(I dt over tau seconds) + beta``.
    """

    model_config = ConfigDict(extra="forbid")

    eps_pos: float = Field(default=0.2, gt=0)
    eps_neg: float = Field(default=0.2, gt=0)
    a: float = Field(default=1.0, gt=0)
    b: float = 0.0
    alpha: float = Field(default=2e6, gt=0)
    beta: float = 0.0
    tau_us: int = Field(default=5000, gt=0)
    eta_us: int = Field(default=20000, gt=0)

    @model_validator(mode="after")
    def _exposure_within_period(self) -> "SensorParams":
        if self.tau_us >= self.eta_us:
            raise ValueError(f"exposure tau_us={self.tau_us} must be shorter than period eta_us={self.eta_us}")
        return self

    @property
    def offset(self) -> float:
        """APS count at which ``a * I + b`` vanishes; the O of the EPM model."""
        return self.beta - self.alpha * (self.tau_us * 1e-6) * self.b / self.a

    @property
    def eps_min(self) -> float:
        return min(self.eps_pos, self.eps_neg)


class NoiseSpec(BaseModel):
    """Background activity, holes, timestamp jitter and count variance."""

    model_config = ConfigDict(extra="forbid")

    ba_rate: float = Field(default=0.0, ge=0)  # events per pixel per second
    hole_prob: float = Field(default=0.0, ge=0, le=1)
    jitter_sigma: float = Field(default=0.0, ge=0)  # us
    count_gain_sigma: float = Field(default=0.0, ge=0)
    rng_seed: int = 0

    @property
    def is_identity(self) -> bool:
        return self.ba_rate == 0 and self.hole_prob == 0 and self.jitter_sigma == 0 and self.count_gain_sigma == 0


class SimulationConfig(BaseModel):
    """Everything ``simulate`` needs to write one dataset."""

    model_config = ConfigDict(extra="forbid")

    name: str = "demo"
    camera: CameraSpec = Field(default_factory=CameraSpec)
    scene: SceneSpec = Field(default_factory=SceneSpec)
    motion: MotionProfile = Field(default_factory=lambda: MotionProfile.constant((0.0, 0.5, 0.0), 0.2))
    sensor: SensorParams = Field(default_factory=SensorParams)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    imu_rate: float = Field(default_factory=lambda: bench_config.imu_rate, gt=0)
    step_us: float = Field(default=50.0, gt=0)
