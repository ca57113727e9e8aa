"""Maximum-likelihood estimation of the DVS thresholds and the APS offset.

The raw events of every exposure window are scored under the EPM that a candidate
``(eps_pos, eps_neg, O)`` predicts. The search is a cascade of 1-D golden-section
searches: an outer one over ``O`` and, for each ``O``, independent inner ones over
``eps_pos`` and ``eps_neg``. Each threshold only affects the pixels whose ``J_t`` has
the matching sign, so the log-likelihood splits into independent parts.
"""

import hashlib
import logging
import math
import time
from collections.abc import Callable
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from epmb_core.core_types import Recording
from epmb_core.errors import NoValidPixelsError, SidecarError
from epmb_core.windows import event_indicator
from epmb_pipeline.config import bench_config
from epmb_pipeline.epm import DvsParams, EpmOptions, flow_field, rate_numerator, spatial_gradient, window_theta
from epmb_pipeline.worker import WorkerPool, default_pool

logger = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5) - 1) / 2
OFFSET_KEEP_QUANTILE = 0.05


class ConvergenceFlag(StrEnum):
    CONVERGED = "converged"
    NON_UNIMODAL = "non-unimodal"
    DEGENERATE = "degenerate"


class SearchConfig(BaseModel):
    """Search ranges and stopping rule; ``offset_fraction`` is relative to ``max(A)``."""

    eps_min: float = Field(default_factory=lambda: bench_config.eps_search_min, gt=0)
    eps_max: float = Field(default_factory=lambda: bench_config.eps_search_max, gt=0)
    offset_fraction: float = Field(default_factory=lambda: bench_config.offset_search_fraction, ge=0)
    rel_tol: float = Field(default_factory=lambda: bench_config.search_rel_tol, gt=0)
    prescan_points: int = Field(default_factory=lambda: bench_config.prescan_points, ge=3)
    blur_correction: bool = True


class Evaluation(BaseModel):
    eps_pos: float
    eps_neg: float
    offset: float
    log_likelihood: float


class CalibrationResult(BaseModel):
    """Estimated parameters, the likelihood they reach and the full search trace."""

    eps_pos: float = Field(gt=0)
    eps_neg: float = Field(gt=0)
    offset: float
    log_likelihood: float
    flag: ConvergenceFlag
    trace: list[Evaluation] = Field(default_factory=list)
    fingerprint: str | None = None

    @property
    def params(self) -> DvsParams:
        return DvsParams(eps_pos=self.eps_pos, eps_neg=self.eps_neg, offset=self.offset)


@dataclass(frozen=True, eq=False)
class WindowData:
    """What the likelihood needs from one window, restricted to its candidate pixels."""

    counts: np.ndarray
    numerator: np.ndarray
    fired: np.ndarray
    peak: float
    tau_us: int


@dataclass(frozen=True, eq=False)
class CalibrationData:
    windows: tuple[WindowData, ...]
    floor_fraction: float
    peak: float
    low_count: float

    @property
    def pixel_count(self) -> int:
        return sum(len(window.counts) for window in self.windows)


def prepare(recording: Recording, options: EpmOptions | None = None, pool: WorkerPool | None = None) -> CalibrationData:
    """Gradients, flows and raw-event indicators of every window.

    Candidate pixels are interior and unsaturated; the offset-dependent part of the
    validity rule is applied at evaluation time.

    Raises:
        MissingImuError: If a window has no IMU sample
    """
    options = options or EpmOptions()
    margin = options.saturation_fraction * options.max_count

    def window(frame_index: int) -> WindowData:
        frame = recording.aps.frames[frame_index]
        gradient = spatial_gradient(frame)
        flow = flow_field(recording.intrinsics, window_theta(recording.imu, frame), frame.values.shape)
        numerator = rate_numerator(gradient, flow, frame.tau, options.blur_correction)
        values = frame.values
        candidate = gradient.valid.values & (values > margin) & (values < options.max_count - margin)
        fired = event_indicator(recording.stream, frame.window).values.astype(bool)
        return WindowData(
            counts=values[candidate],
            numerator=numerator[candidate],
            fired=fired[candidate],
            peak=float(values.max()),
            tau_us=frame.tau,
        )

    windows = tuple(default_pool(pool).map(window, range(len(recording.aps))))
    counts = np.concatenate([w.counts for w in windows]) if windows else np.empty(0)
    peak = float(max((w.peak for w in windows), default=0.0))
    low = float(np.quantile(counts, OFFSET_KEEP_QUANTILE)) if counts.size else 0.0
    return CalibrationData(windows=windows, floor_fraction=options.floor_fraction, peak=peak, low_count=low)


def _bernoulli_terms(m: np.ndarray, fired: np.ndarray) -> np.ndarray:
    delta = bench_config.prob_clamp
    m = np.clip(m, delta, 1.0 - delta)
    return np.where(fired, np.log(m), np.log1p(-m))


def _window_parts(
    window: WindowData, floor_fraction: float, eps_pos: float, eps_neg: float, offset: float, floor_offset: float
) -> tuple[float, float, float, int]:
    valid = window.counts - floor_offset >= floor_fraction * window.peak
    if window.peak <= 0 or not valid.any():
        return 0.0, 0.0, 0.0, 0
    j_t = window.numerator[valid] / (window.counts[valid] - offset)
    fired = window.fired[valid]
    tau_s = window.tau_us * 1e-6
    rising, falling = j_t > 0, j_t < 0
    still = ~(rising | falling)
    m_pos = np.minimum(tau_s * j_t[rising] / eps_pos, 1.0).astype(np.float32).astype(np.float64)
    m_neg = np.minimum(tau_s * -j_t[falling] / eps_neg, 1.0).astype(np.float32).astype(np.float64)
    return (
        float(_bernoulli_terms(m_pos, fired[rising]).sum()),
        float(_bernoulli_terms(m_neg, fired[falling]).sum()),
        float(_bernoulli_terms(np.zeros(int(still.sum())), fired[still]).sum()),
        int(valid.sum()),
    )


def likelihood_parts(
    data: CalibrationData,
    eps_pos: float,
    eps_neg: float,
    offset: float,
    offset_max: float | None = None,
    pool: WorkerPool | None = None,
) -> tuple[float, float, float, int]:
    """Log-likelihood split into pixels with ``J_t > 0``, ``J_t < 0`` and ``J_t == 0``.

    Pixels are valid when ``A - O`` reaches the floor; with ``offset_max`` the floor is
    checked at ``offset_max`` instead so that the pixel set does not depend on ``offset``.
    Without a pool the windows are scored inline.

    Returns:
        Positive, negative and zero parts, and the number of valid pixels
    """
    floor_offset = offset if offset_max is None else offset_max

    def score(window: WindowData) -> tuple[float, float, float, int]:
        return _window_parts(window, data.floor_fraction, eps_pos, eps_neg, offset, floor_offset)

    parts = (pool or WorkerPool(threads=1)).map(score, data.windows)
    positive = sum(part[0] for part in parts)
    negative = sum(part[1] for part in parts)
    zero = sum(part[2] for part in parts)
    return positive, negative, zero, sum(part[3] for part in parts)


def likelihood(
    data: CalibrationData, eps_pos: float, eps_neg: float, offset: float, pool: WorkerPool | None = None
) -> float:
    """Sum over windows of the log-probability of the raw-event indicator under the EPM.

    Raises:
        ValueError: If a threshold is not positive
        NoValidPixelsError: If no pixel is valid at ``offset``
    """
    if not (eps_pos > 0 and eps_neg > 0):
        raise ValueError(f"Thresholds must be positive, got {eps_pos}, {eps_neg}")
    positive, negative, zero, count = likelihood_parts(data, eps_pos, eps_neg, offset, pool=pool)
    if count == 0:
        raise NoValidPixelsError(f"No valid pixel at offset {offset}")
    return positive + negative + zero


@dataclass
class LineSearch:
    """Outcome of one 1-D maximization."""

    x: float
    value: float
    flag: ConvergenceFlag


def golden_section_max(
    fn: Callable[[float], float], lo: float, hi: float, rel_tol: float, prescan_points: int
) -> LineSearch:
    """Maximize ``fn`` on ``[lo, hi]``: coarse pre-scan, then golden-section inside the best bracket.

    The bracket shrinks until its width is at most ``rel_tol * max(|x|, hi - lo)``, with ``x``
    the bracket centre: relative to the parameter for intervals narrow against their
    position, relative to the interval otherwise.

    A pre-scan with more than one local maximum is flagged non-unimodal and a flat one
    degenerate; both still return the best point found.
    """
    grid = np.linspace(lo, hi, prescan_points)
    values = np.array([fn(float(x)) for x in grid])
    best = int(np.argmax(values))
    spread = float(values.max() - values.min())
    if spread <= 1e-12 * max(1.0, float(np.abs(values).max())):
        return LineSearch(x=float(grid[best]), value=float(values[best]), flag=ConvergenceFlag.DEGENERATE)
    steps = np.sign(np.diff(values))
    steps = steps[steps != 0]
    peaks = int(np.sum((steps[:-1] > 0) & (steps[1:] < 0))) + int(steps[0] < 0) + int(steps[-1] > 0)
    flag = ConvergenceFlag.NON_UNIMODAL if peaks > 1 else ConvergenceFlag.CONVERGED

    a, b = float(grid[max(best - 1, 0)]), float(grid[min(best + 1, len(grid) - 1)])
    c, d = b - INV_PHI * (b - a), a + INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > rel_tol * max(abs(a + b) / 2, hi - lo):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = fn(d)
    x, value = (c, fc) if fc > fd else (d, fd)
    if values[best] > value:
        x, value = float(grid[best]), float(values[best])
    return LineSearch(x=x, value=value, flag=flag)


def offset_range(data: CalibrationData, config: SearchConfig) -> tuple[float, float]:
    """Search interval of ``O``.

    Nominally ``+-offset_fraction * max(A)``; the upper end is capped so that all but the
    darkest few percent of candidate pixels keep ``A - O`` above the floor.
    """
    lo = -config.offset_fraction * data.peak
    hi = min(config.offset_fraction * data.peak, data.low_count - data.floor_fraction * data.peak)
    return lo, max(hi, lo)


def _overall_flag(flags: list[ConvergenceFlag]) -> ConvergenceFlag:
    if all(flag is ConvergenceFlag.DEGENERATE for flag in flags):
        logger.warning("Likelihood is flat in every parameter; the recording carries no calibration information")
        return ConvergenceFlag.DEGENERATE
    for flag in (ConvergenceFlag.NON_UNIMODAL, ConvergenceFlag.DEGENERATE):
        if flag in flags:
            logger.warning(f"Calibration search flagged {flag}; returning the best point found")
            return flag
    return ConvergenceFlag.CONVERGED


def search(
    data: CalibrationData, config: SearchConfig | None = None, pool: WorkerPool | None = None
) -> CalibrationResult:
    """Cascaded search: golden-section over ``O`` outside, over each threshold inside.

    The valid pixels are those that stay above the floor at the largest ``O`` searched,
    so every evaluation scores the same pixels.

    Raises:
        NoValidPixelsError: If the recording has no candidate pixel
    """
    config = config or SearchConfig()
    if data.pixel_count == 0 or data.peak <= 0:
        raise NoValidPixelsError("Recording has no pixel usable for calibration")
    offset_lo, offset_hi = offset_range(data, config)
    trace: list[Evaluation] = []
    flags: list[ConvergenceFlag] = []
    started = time.perf_counter()

    def inner(offset: float) -> tuple[LineSearch, LineSearch, float]:
        def part(eps_pos: float, eps_neg: float, index: int) -> float:
            return likelihood_parts(data, eps_pos, eps_neg, offset, offset_hi, pool)[index]

        zero = part(1.0, 1.0, 2)
        pos = golden_section_max(
            lambda eps: part(eps, 1.0, 0), config.eps_min, config.eps_max, config.rel_tol, config.prescan_points
        )
        neg = golden_section_max(
            lambda eps: part(1.0, eps, 1), config.eps_min, config.eps_max, config.rel_tol, config.prescan_points
        )
        total = pos.value + neg.value + zero
        trace.append(Evaluation(eps_pos=pos.x, eps_neg=neg.x, offset=offset, log_likelihood=total))
        logger.debug(f"O={offset:.2f}: eps_pos={pos.x:.4f} eps_neg={neg.x:.4f} log-likelihood {total:.3f}")
        return pos, neg, total

    offset = offset_lo
    if offset_hi > offset_lo:
        outer = golden_section_max(lambda o: inner(o)[2], offset_lo, offset_hi, config.rel_tol, config.prescan_points)
        offset = outer.x
        flags.append(outer.flag)
    pos, neg, total = inner(offset)
    flag = _overall_flag(flags + [pos.flag, neg.flag])
    elapsed_ms = (time.perf_counter() - started) * 1000
    logger.info(
        f"Calibrated eps_pos={pos.x:.4f} eps_neg={neg.x:.4f} O={offset:.1f} "
        f"(log-likelihood {total:.2f}, {len(trace)} offset evaluations, {elapsed_ms:.0f} ms)"
    )
    return CalibrationResult(eps_pos=pos.x, eps_neg=neg.x, offset=offset, log_likelihood=total, flag=flag, trace=trace)


def calibrate(
    recording: Recording, config: SearchConfig | None = None, pool: WorkerPool | None = None
) -> CalibrationResult:
    """Estimate ``(eps_pos, eps_neg, O)`` of a recording by maximum likelihood.

    Raises:
        MissingImuError: If an exposure window has no IMU sample
        NoValidPixelsError: If no pixel is usable
    """
    config = config or SearchConfig()
    options = EpmOptions(blur_correction=config.blur_correction)
    if pool is not None:
        return search(prepare(recording, options, pool), config, pool)
    with WorkerPool() as workers:
        return search(prepare(recording, options, workers), config, workers)


class GridResult(BaseModel):
    eps: float
    offset: float
    log_likelihood: float
    eps_values: list[float]
    offset_values: list[float]
    table: list[list[float]]


def grid_search(
    data: CalibrationData, eps_values: np.ndarray, offset_values: np.ndarray, pool: WorkerPool | None = None
) -> GridResult:
    """Brute-force likelihood over ``(eps, O)`` with ``eps_pos = eps_neg = eps``.

    The pixel set is fixed by the largest offset so every cell scores the same pixels.
    """
    offset_max = float(np.max(offset_values))

    def cell(eps: float, offset: float) -> float:
        return sum(likelihood_parts(data, eps, eps, offset, offset_max, pool)[:3])

    table = np.array([[cell(float(eps), float(offset)) for offset in offset_values] for eps in eps_values])
    i, j = np.unravel_index(int(np.argmax(table)), table.shape)
    return GridResult(
        eps=float(eps_values[i]),
        offset=float(offset_values[j]),
        log_likelihood=float(table[i, j]),
        eps_values=[float(v) for v in eps_values],
        offset_values=[float(v) for v in offset_values],
        table=table.tolist(),
    )


def fingerprint(events_path: Path, config: SearchConfig) -> str:
    """SHA-256 of the event file and the search config."""
    digest = hashlib.sha256()
    with events_path.open("rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    digest.update(config.model_dump_json().encode("utf-8"))
    return digest.hexdigest()


def read_calibration(path: Path) -> CalibrationResult:
    try:
        return CalibrationResult.model_validate_json(path.read_bytes())
    except ValidationError as e:
        raise SidecarError(f"Invalid calibration {path}: {e.errors()[0]['msg']}") from e


def write_calibration(path: Path, result: CalibrationResult) -> None:
    path.write_text(result.model_dump_json(indent=2), encoding="utf-8")


def cached_calibration(path: Path, expected_fingerprint: str) -> CalibrationResult | None:
    """The stored result if it was computed for the same events and config."""
    if not path.is_file():
        return None
    try:
        result = read_calibration(path)
    except SidecarError as e:
        logger.warning(f"Ignoring unreadable calibration cache: {e}")
        return None
    if result.fingerprint != expected_fingerprint:
        logger.info(f"Calibration cache {path} is stale")
        return None
    return result
