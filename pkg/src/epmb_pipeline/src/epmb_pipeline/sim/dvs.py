"""Ideal (noise-free) DVS rendering by per-pixel reference-level crossing."""

import logging
import time
from dataclasses import dataclass

import numpy as np

from epmb_core.core_types import EventStream
from epmb_core.errors import SimulationError
from epmb_pipeline.config import bench_config
from epmb_pipeline.sim.scenes import SceneRenderer
from epmb_pipeline.worker import WorkerPool, default_pool

logger = logging.getLogger(__name__)

TIME_BATCH_STEPS = 256


@dataclass
class CrossingState:
    """Reference level per pixel carried between time batches."""

    reference: np.ndarray


def crossing_sides(
    reference: np.ndarray, current: np.ndarray, eps_pos: float, eps_neg: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Which references ``current`` has crossed upwards and downwards, and the crossed levels."""
    up = current - reference >= eps_pos
    down = reference - current >= eps_neg
    return up, down, np.where(up, reference + eps_pos, reference - eps_neg)


def level_crossings(
    times_s: np.ndarray, values: np.ndarray, state: CrossingState, eps_pos: float, eps_neg: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance the reference levels through one batch of samples.

    ``values`` has shape ``(S, P)`` and ``times_s`` shape ``(S,)``; the first row is the
    sample the state already reflects. At most one crossing per step is expected.

    Returns:
        Column index, crossing time (µs, rounded) and polarity of every crossing, in step order
    """
    columns, stamps, polarities = [], [], []
    for step in range(1, len(times_s)):
        previous, current = values[step - 1], values[step]
        up, down, level = crossing_sides(state.reference, current, eps_pos, eps_neg)
        crossing = up | down
        if not crossing.any():
            continue
        delta = current[crossing] - previous[crossing]
        safe_delta = np.where(delta != 0, delta, 1.0)
        fraction = np.where(delta != 0, (level[crossing] - previous[crossing]) / safe_delta, 1.0)
        fraction = np.clip(fraction, 0.0, 1.0)
        t = times_s[step - 1] + fraction * (times_s[step] - times_s[step - 1])
        columns.append(np.flatnonzero(crossing))
        stamps.append(np.rint(t * 1e6).astype(np.int64))
        polarities.append(np.where(up[crossing], 1, -1).astype(np.int8))
        state.reference = np.where(crossing, level, state.reference)
    if not columns:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int8)
    return np.concatenate(columns), np.concatenate(stamps), np.concatenate(polarities)


def refined_samples(
    renderer: SceneRenderer,
    x: np.ndarray,
    y: np.ndarray,
    times_s: np.ndarray,
    values: np.ndarray,
    limit: float,
    max_subdivisions: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Insert samples inside every step whose largest ``|dJ|`` over the pixels reaches ``limit``.

    Raises:
        SimulationError: If a step still changes by ``limit`` or more after ``max_subdivisions`` halvings
    """
    coarse = np.flatnonzero(np.abs(np.diff(values, axis=0)).max(axis=1, initial=0.0) >= limit)
    if not coarse.size:
        return times_s, values
    pieces_t, pieces_v = [times_s[: coarse[0] + 1]], [values[: coarse[0] + 1]]
    for n, step in enumerate(coarse):
        t0, t1 = times_s[step], times_s[step + 1]
        for level in range(1, max(max_subdivisions, 1) + 1):
            inner_t = np.linspace(t0, t1, 2**level + 1)
            middle = renderer.log_intensity(x, y, inner_t[1:-1])
            inner_v = np.concatenate([values[step : step + 1], middle, values[step + 1 : step + 2]])
            if np.abs(np.diff(inner_v, axis=0)).max() < limit:
                break
        else:
            worst = float(np.abs(np.diff(inner_v, axis=0)).max())
            raise SimulationError(
                f"Step [{t0 * 1e6:.1f}, {t1 * 1e6:.1f}] us still changes J by {worst:.4f} >= {limit:.4f} "
                f"after {max_subdivisions} subdivisions; lower step_us"
            )
        logger.debug(f"Subdivided step at {t0 * 1e6:.1f} us into {2**level} parts")
        pieces_t.append(inner_t[1:])
        pieces_v.append(inner_v[1:])
        following = coarse[n + 1] if n + 1 < len(coarse) else len(times_s) - 1
        pieces_t.append(times_s[step + 2 : following + 1])
        pieces_v.append(values[step + 2 : following + 1])
    return np.concatenate(pieces_t), np.concatenate(pieces_v)


def step_times(start_us: int, end_us: int, step_us: float) -> np.ndarray:
    """Uniform sample times (s) from ``start`` to ``end`` inclusive, the last step possibly shorter."""
    count = max(1, int(np.ceil((end_us - start_us) / step_us)))
    times = start_us + step_us * np.arange(count + 1)
    times[-1] = end_us
    return times * 1e-6


def _simulate_chunk(
    renderer: SceneRenderer, pixels: np.ndarray, step_us: float, max_subdivisions: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    geometry = renderer.camera.geometry
    x = (pixels % geometry.width).astype(np.float64)
    y = (pixels // geometry.width).astype(np.float64)
    sensor = renderer.sensor
    limit = sensor.eps_min / 4
    times = step_times(0, renderer.duration_us, step_us)

    state: CrossingState | None = None
    found_x, found_y, found_t, found_p = [], [], [], []
    for start in range(0, len(times) - 1, TIME_BATCH_STEPS):
        batch_t = times[start : start + TIME_BATCH_STEPS + 1]
        batch_v = renderer.log_intensity(x, y, batch_t)
        if state is None:
            state = CrossingState(reference=batch_v[0].copy())
        batch_t, batch_v = refined_samples(renderer, x, y, batch_t, batch_v, limit, max_subdivisions)
        columns, stamps, polarities = level_crossings(batch_t, batch_v, state, sensor.eps_pos, sensor.eps_neg)
        found_x.append(x[columns].astype(np.int64))
        found_y.append(y[columns].astype(np.int64))
        found_t.append(stamps)
        found_p.append(polarities)
    if not found_t:
        empty = np.empty(0, np.int64)
        return empty, empty, empty, empty
    return np.concatenate(found_t), np.concatenate(found_x), np.concatenate(found_y), np.concatenate(found_p)


def ideal_dvs(renderer: SceneRenderer, step_us: float = 50.0, pool: WorkerPool | None = None) -> EventStream:
    """Render the noise-free event stream of a scene under camera rotation.

    Every pixel starts with its reference level at ``J(X, 0)`` and emits an event each
    time ``J`` moves ``eps_pos`` above or ``eps_neg`` below the reference, which then
    moves by that threshold. Crossing times are interpolated linearly between samples.

    Args:
        renderer: Scene, motion, camera and sensor to simulate
        step_us: Base sampling step; steps are subdivided while ``|dJ| >= min(eps) / 4``
        pool: Worker pool for pixel chunks; results do not depend on its size

    Raises:
        SimulationError: If the motion has zero duration or a step cannot be refined enough
    """
    if renderer.duration_us <= 0:
        raise SimulationError("Motion profile has zero duration")
    if step_us <= 0:
        raise SimulationError(f"Step must be positive, got {step_us}")
    geometry = renderer.camera.geometry
    chunk = max(1, bench_config.sim_chunk_pixels)
    chunks = [np.arange(i, min(i + chunk, geometry.pixel_count)) for i in range(0, geometry.pixel_count, chunk)]
    started = time.perf_counter()
    results = default_pool(pool).map(
        lambda pixels: _simulate_chunk(renderer, pixels, step_us, bench_config.sim_max_subdivisions), chunks
    )
    t, x, y, p = (np.concatenate(column) for column in zip(*results))
    stream = EventStream.from_unsorted(geometry, t, x, y, p)
    elapsed_ms = (time.perf_counter() - started) * 1000
    logger.info(
        f"Simulated {len(stream)} events on {geometry.width}x{geometry.height} pixels "
        f"over {renderer.duration_us} us in {elapsed_ms:.0f} ms"
    )
    return stream
