"""Ground truth derived from the simulator: exact temporal derivatives and hit frequencies."""

import logging
from collections.abc import Sequence

import numpy as np

from epmb_core.core_types import EpmFrame, EventStream, TimeWindow, ValidityMask
from epmb_core.windows import event_indicator
from epmb_pipeline.sim.dvs import crossing_sides, step_times
from epmb_pipeline.sim.scenes import SceneRenderer

logger = logging.getLogger(__name__)

DERIVATIVE_STEP_S = 1e-5


def _pixel_grid(renderer: SceneRenderer) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.indices(renderer.camera.geometry.shape)
    return xs.ravel().astype(np.float64), ys.ravel().astype(np.float64)


def analytic_temporal_derivative(renderer: SceneRenderer, t_s: float) -> np.ndarray:
    """``dJ/dt`` (1/s) of every pixel at ``t_s`` by a central difference, one-sided at the domain ends."""
    x, y = _pixel_grid(renderer)
    lo = max(0.0, t_s - DERIVATIVE_STEP_S)
    hi = min(renderer.motion.duration_s, t_s + DERIVATIVE_STEP_S)
    values = renderer.log_intensity(x, y, np.array([lo, hi]))
    return ((values[1] - values[0]) / (hi - lo)).reshape(renderer.camera.geometry.shape)


def analytic_epm(renderer: SceneRenderer, window: TimeWindow) -> EpmFrame:
    """EPM from the exact ``J_t`` at the window midpoint; every pixel is valid."""
    sensor = renderer.sensor
    j_t = analytic_temporal_derivative(renderer, (window.start + window.tau / 2) * 1e-6)
    eps = np.where(j_t > 0, sensor.eps_pos, sensor.eps_neg)
    values = np.minimum(window.tau * 1e-6 * np.abs(j_t) / eps, 1.0)
    mask = ValidityMask.all_valid(renderer.camera.geometry)
    return EpmFrame(window_start=window.start, window_len=window.tau, values=values, valid=mask)


def window_hit_frequency(stream: EventStream, windows: Sequence[TimeWindow]) -> np.ndarray:
    """Fraction of ``windows`` in which each pixel has at least one event; shape ``(height, width)``."""
    if not windows:
        raise ValueError("No windows given")
    hits = np.zeros(stream.geometry.shape)
    for window in windows:
        hits += event_indicator(stream, window).values
    return hits / len(windows)


def phase_hit_frequency(
    renderer: SceneRenderer, window: TimeWindow, replicas: int = 200, step_us: float = 10.0, seed: int = 0
) -> np.ndarray:
    """Monte Carlo probability that each pixel fires in ``window`` for a random reference phase.

    Each replica starts the DVS at the window start with its reference level placed
    uniformly inside the threshold band on the side ``J`` is heading, then fires
    by level crossing until the window end.
    """
    x, y = _pixel_grid(renderer)
    sensor = renderer.sensor
    times = step_times(window.start, window.end, step_us)
    values = renderer.log_intensity(x, y, times)
    rising = values[-1] >= values[0]
    rng = np.random.default_rng(np.random.SeedSequence([seed, window.start]))
    distance = rng.random((replicas, len(x)))
    reference = np.where(
        rising, values[0] + sensor.eps_pos * (distance - 1.0), values[0] + sensor.eps_neg * (1.0 - distance)
    )
    fired = np.zeros(reference.shape, dtype=bool)
    for current in values[1:]:
        up, down, level = crossing_sides(reference, current, sensor.eps_pos, sensor.eps_neg)
        reference = np.where(up | down, level, reference)
        fired |= up | down
    frequency = fired.mean(axis=0)
    logger.debug(f"Phase Monte Carlo over window {window.start}: {replicas} replicas")
    return frequency.reshape(renderer.camera.geometry.shape)


def binomial_sigma(probability: np.ndarray, trials: int) -> np.ndarray:
    """Binomial standard error with ``p`` clipped to ``[1/n, 1 - 1/n]``."""
    p = np.clip(probability, 1.0 / trials, 1.0 - 1.0 / trials)
    return np.sqrt(p * (1 - p) / trials)
