"""Event probability masks from APS frames and gyroscope readings.

For a rotating camera the pixel velocity follows from the angular velocity and the
intrinsics alone. Combined with the spatial gradient of an APS frame it predicts the
log-intensity change rate ``J_t`` of every pixel, and from it the probability
``M = min(tau * |J_t| / eps, 1)`` that the pixel fires at least once during the exposure.

Units: velocities in pixels/s, ``J_t`` in 1/s, ``tau`` in seconds inside the formulas.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from epmb_core.core_types import ApsFrame, ApsSequence, CameraIntrinsics, EpmFrame, ImuTrace, ValidityMask
from epmb_core.errors import MissingImuError
from epmb_pipeline.config import bench_config
from epmb_pipeline.worker import WorkerPool, default_pool

logger = logging.getLogger(__name__)


def skew(theta: np.ndarray) -> np.ndarray:
    """Cross-product matrix ``[theta]x``."""
    wx, wy, wz = (float(w) for w in theta)
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel velocity ``(vx, vy)`` in pixels/s during one exposure."""

    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self) -> None:
        if self.vx.shape != self.vy.shape:
            raise ValueError(f"Flow components differ in shape: {self.vx.shape} vs {self.vy.shape}")
        if not (np.isfinite(self.vx).all() and np.isfinite(self.vy).all()):
            raise ValueError("Flow field must be finite")

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)


@dataclass(frozen=True, eq=False)
class GradientField:
    """Central-difference gradient ``(Ax, Ay)`` in counts/pixel; zero and invalid on the border."""

    ax: np.ndarray
    ay: np.ndarray
    valid: ValidityMask


@dataclass(frozen=True)
class DvsParams:
    """Calibrated DVS thresholds and the APS offset ``O`` (counts)."""

    eps_pos: float
    eps_neg: float
    offset: float

    def __post_init__(self) -> None:
        if not (self.eps_pos > 0 and self.eps_neg > 0):
            raise ValueError(f"Thresholds must be positive, got {self.eps_pos}, {self.eps_neg}")


@dataclass(frozen=True)
class EpmOptions:
    """Validity thresholds and the blur-correction switch."""

    blur_correction: bool = True
    floor_fraction: float = field(default_factory=lambda: bench_config.epm_floor_fraction)
    saturation_fraction: float = field(default_factory=lambda: bench_config.epm_saturation_fraction)
    max_count: float = field(default_factory=lambda: bench_config.aps_max_count)


def pixel_velocity(
    intrinsics: CameraIntrinsics, theta: np.ndarray, x: np.ndarray | float, y: np.ndarray | float
) -> tuple[np.ndarray, np.ndarray]:
    """Rotational pixel velocity ``K ([theta]x r - r ([theta]x r)_z)`` of the ray ``r = K^-1 (x, y, 1)``.

    The component along the ray is removed so that the third coordinate of the velocity
    is zero; at the principal point this is ``K[:2] @ [theta]x @ K^-1 @ (x, y, 1)``.

    Args:
        intrinsics: Camera calibration
        theta: Angular velocity (rad/s), shape ``(3,)``
        x, y: Pixel coordinates, any matching shapes

    Returns:
        ``(vx, vy)`` in pixels/s with the shape of ``x``
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    rays = np.stack([x, y, np.ones_like(x)], axis=-1) @ intrinsics.inverse.T
    spin = rays @ skew(theta).T
    spin -= spin[..., 2:] * rays
    velocity = spin @ intrinsics.matrix.T
    return velocity[..., 0], velocity[..., 1]


def flow_field(intrinsics: CameraIntrinsics, theta: np.ndarray, shape: tuple[int, int]) -> FlowField:
    ys, xs = np.indices(shape)
    vx, vy = pixel_velocity(intrinsics, theta, xs, ys)
    return FlowField(vx=vx, vy=vy)


def spatial_gradient(frame: ApsFrame) -> GradientField:
    """Central differences on interior pixels; the one-pixel border is masked."""
    values = frame.values
    ax = np.zeros_like(values)
    ay = np.zeros_like(values)
    ax[:, 1:-1] = (values[:, 2:] - values[:, :-2]) / 2
    ay[1:-1, :] = (values[2:, :] - values[:-2, :]) / 2
    valid = np.zeros(values.shape, dtype=bool)
    valid[1:-1, 1:-1] = True
    ax[~valid] = 0.0
    ay[~valid] = 0.0
    return GradientField(ax=ax, ay=ay, valid=ValidityMask(valid))


def validity(frame: ApsFrame, gradient: GradientField, params: DvsParams, options: EpmOptions) -> ValidityMask:
    """Pixels with an interior gradient, unsaturated counts and ``A - O`` above the floor."""
    values = frame.values
    peak = float(values.max()) if values.size else 0.0
    margin = options.saturation_fraction * options.max_count
    unsaturated = (values > margin) & (values < options.max_count - margin)
    above_floor = values - params.offset >= options.floor_fraction * peak
    if peak <= 0:
        above_floor[...] = False
    return ValidityMask(gradient.valid.values & unsaturated & above_floor)


def rate_numerator(gradient: GradientField, flow: FlowField, tau_us: int, blur_correction: bool) -> np.ndarray:
    """The factor of ``J_t`` that does not depend on ``A - O``.

    With blur correction each gradient component is scaled by the blur length along its
    axis, ``max(tau |v|, 1)`` pixels.
    """
    if blur_correction:
        tau_s = tau_us * 1e-6
        blur_x = np.maximum(tau_s * np.abs(flow.vx), 1.0)
        blur_y = np.maximum(tau_s * np.abs(flow.vy), 1.0)
        return -(gradient.ax * blur_x * flow.vx + gradient.ay * blur_y * flow.vy)
    return -(gradient.ax * flow.vx + gradient.ay * flow.vy)


def log_temporal_derivative(
    frame: ApsFrame, flow: FlowField, params: DvsParams, options: EpmOptions | None = None
) -> tuple[np.ndarray, ValidityMask]:
    """Per-pixel ``J_t`` (1/s) from the frame gradient and the flow; NaN where invalid.

    With blur correction, ``J_t = -(Ax bx vx + Ay by vy) / (A - O)`` with ``bx = max(tau |vx|, 1)`` and
    ``by = max(tau |vy|, 1)``, which is ``-(tau / (A - O)) * (Ax |vx| vx + Ay |vy| vy)`` once the blur spans a pixel;
    without it, ``J_t = -(Ax vx + Ay vy) / (A - O)``.
    """
    options = options or EpmOptions()
    gradient = spatial_gradient(frame)
    mask = validity(frame, gradient, params, options)
    frame.geometry.check_frame(flow.vx, "flow field")
    numerator = rate_numerator(gradient, flow, frame.tau, options.blur_correction)
    j_t = np.full(frame.values.shape, np.nan)
    inside = mask.values
    j_t[inside] = numerator[inside] / (frame.values[inside] - params.offset)
    return j_t, mask


def window_theta(imu: ImuTrace, frame: ApsFrame) -> np.ndarray:
    """Mean angular velocity of the IMU samples inside the frame's exposure.

    Raises:
        MissingImuError: If no sample falls inside ``[start, start + tau)``
    """
    samples = imu.in_window(frame.window)
    if not len(samples):
        raise MissingImuError(f"No IMU samples in exposure [{frame.start_t}, {frame.window.end}) of frame {frame.k}")
    return samples.mean(axis=0)


def probability_from_derivative(j_t: np.ndarray, mask: ValidityMask, tau_us: int, params: DvsParams) -> np.ndarray:
    """``min(tau |J_t| / eps, 1)`` with ``eps`` chosen by the sign of ``J_t``; float32-rounded."""
    values = np.full(j_t.shape, np.nan)
    inside = mask.values
    rate = j_t[inside]
    eps = np.where(rate > 0, params.eps_pos, params.eps_neg)
    values[inside] = np.minimum(tau_us * 1e-6 * np.abs(rate) / eps, 1.0)
    return values.astype(np.float32).astype(np.float64)


def epm_frame(
    aps_frame: ApsFrame,
    imu: ImuTrace,
    intrinsics: CameraIntrinsics,
    params: DvsParams,
    options: EpmOptions | None = None,
) -> EpmFrame:
    """EPM of one exposure window.

    Raises:
        MissingImuError: If the IMU has no sample inside the exposure
    """
    theta = window_theta(imu, aps_frame)
    flow = flow_field(intrinsics, theta, aps_frame.values.shape)
    j_t, mask = log_temporal_derivative(aps_frame, flow, params, options)
    values = probability_from_derivative(j_t, mask, aps_frame.tau, params)
    if not mask.count:
        logger.debug(f"Frame {aps_frame.k} has no valid EPM pixel")
    return EpmFrame(window_start=aps_frame.start_t, window_len=aps_frame.tau, values=values, valid=mask)


def label_sequence(
    aps: ApsSequence,
    imu: ImuTrace,
    intrinsics: CameraIntrinsics,
    params: DvsParams,
    options: EpmOptions | None = None,
    pool: WorkerPool | None = None,
) -> list[EpmFrame]:
    """One EPM frame per exposure window, in frame order."""
    started = time.perf_counter()
    frames = default_pool(pool).map(lambda frame: epm_frame(frame, imu, intrinsics, params, options), aps.frames)
    elapsed_ms = (time.perf_counter() - started) * 1000
    logger.info(f"Labeled {len(frames)} windows in {elapsed_ms:.0f} ms")
    return frames
