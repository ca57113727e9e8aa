"""Synthetic APS frames and gyroscope traces."""

import logging

import numpy as np
from scipy.special import roots_legendre

from epmb_core.core_types import ApsFrame, ApsSequence, ImuTrace
from epmb_core.errors import SimulationError
from epmb_pipeline.sim.scenes import SceneRenderer
from epmb_pipeline.sim.specs import MotionProfile
from epmb_pipeline.worker import WorkerPool, default_pool

logger = logging.getLogger(__name__)

GAUSS_POINTS = 8
QUADRATURE_REL_TOL = 1e-6
MAX_PANELS = 1024


def _integrate_radiance(renderer: SceneRenderer, start_s: float, end_s: float, panels: int) -> np.ndarray:
    """Composite Gauss-Legendre integral of the radiance of every pixel over ``[start, end]``."""
    geometry = renderer.camera.geometry
    ys, xs = np.indices(geometry.shape)
    nodes, weights = roots_legendre(GAUSS_POINTS)
    edges = np.linspace(start_s, end_s, panels + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    times = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    radiance = renderer.radiance(xs.ravel(), ys.ravel(), times)
    return (w @ radiance).reshape(geometry.shape)


def exposure_integral(renderer: SceneRenderer, start_s: float, end_s: float) -> np.ndarray:
    """``integral(I dt)`` per pixel, doubling the panels until the relative change drops below 1e-6."""
    panels = 1
    previous = _integrate_radiance(renderer, start_s, end_s, panels)
    while panels < MAX_PANELS:
        panels *= 2
        current = _integrate_radiance(renderer, start_s, end_s, panels)
        change = np.abs(current - previous).max() / max(np.abs(current).max(), np.finfo(float).tiny)
        if change < QUADRATURE_REL_TOL:
            return current
        previous = current
    logger.warning(f"Exposure quadrature over [{start_s}, {end_s}] s did not converge with {MAX_PANELS} panels")
    return previous


def synth_aps(renderer: SceneRenderer, pool: WorkerPool | None = None) -> ApsSequence:
    """Render one APS frame per exposure that fits inside the motion.

    Frame ``k`` is exposed over ``[k * eta, k * eta + tau)`` and holds
    ``A = alpha * integral(I dt) + beta`` with time in seconds. Values are not quantized.

    Raises:
        SimulationError: If not even the first exposure fits inside the motion
    """
    sensor = renderer.sensor
    duration_us = renderer.duration_us
    count = (duration_us - sensor.tau_us) // sensor.eta_us + 1 if duration_us >= sensor.tau_us else 0
    if count <= 0:
        raise SimulationError(f"Motion of {duration_us} us is shorter than one exposure of {sensor.tau_us} us")

    def render(k: int) -> ApsFrame:
        start_us = k * sensor.eta_us
        integral = exposure_integral(renderer, start_us * 1e-6, (start_us + sensor.tau_us) * 1e-6)
        return ApsFrame(k=k, start_t=start_us, tau=sensor.tau_us, values=sensor.alpha * integral + sensor.beta)

    frames = tuple(default_pool(pool).map(render, range(count)))
    logger.info(f"Synthesized {count} APS frames (tau={sensor.tau_us} us, eta={sensor.eta_us} us)")
    return ApsSequence(geometry=renderer.camera.geometry, frames=frames, eta=sensor.eta_us)


def synth_imu(motion: MotionProfile, rate: float) -> ImuTrace:
    """Sample the angular velocity at ``i / rate`` seconds for every ``i`` with ``i / rate < duration``.

    Timestamps are rounded to microseconds and the angular velocity is evaluated at the
    rounded time, so every sample is exact for its timestamp.
    """
    if not rate > 0:
        raise SimulationError(f"IMU rate must be positive, got {rate}")
    count = int(np.ceil(motion.duration_s * rate - 1e-9))
    t_us = np.rint(np.arange(count) / rate * 1e6).astype(np.int64)
    t_us = t_us[t_us <= motion.duration_us]
    theta = motion.theta(np.minimum(t_us * 1e-6, motion.duration_s))
    logger.debug(f"Sampled {len(t_us)} IMU readings at {rate} Hz")
    return ImuTrace(t=t_us, theta=theta, rate=rate)
