"""Gyroscope traces as ``t_us,wx,wy,wz`` CSV tables (angular velocity in rad/s)."""

import io
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from epmb_core.core_types import ImuTrace
from epmb_core.errors import CsvFormatError, NonMonotonicTimestampsError

logger = logging.getLogger(__name__)

IMU_COLUMNS = ["t_us", "wx", "wy", "wz"]
DEFAULT_IMU_RATE = 1000.0


def imu_to_csv(trace: ImuTrace) -> str:
    frame = pd.DataFrame(
        {"t_us": trace.t, "wx": trace.theta[:, 0], "wy": trace.theta[:, 1], "wz": trace.theta[:, 2]},
        columns=IMU_COLUMNS,
    )
    return frame.to_csv(index=False, lineterminator="\n")


def imu_from_csv(text: str, rate: float | None = None) -> ImuTrace:
    """Parse a ``t_us,wx,wy,wz`` table.

    Args:
        text: CSV content
        rate: Nominal sample rate in Hz; estimated from the median sample spacing when omitted

    Returns:
        The trace; an empty text or a header-only table yields an empty trace

    Raises:
        CsvFormatError: On a wrong header or a non-numeric cell
        NonMonotonicTimestampsError: If timestamps decrease
    """
    if not text.strip():
        logger.warning("IMU file is empty, returning an empty trace")
        return ImuTrace(np.empty(0, np.int64), np.empty((0, 3)), rate or DEFAULT_IMU_RATE)
    try:
        frame = pd.read_csv(
            io.StringIO(text), dtype={"t_us": str}, float_precision="round_trip", skipinitialspace=True
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise CsvFormatError(f"Unreadable IMU table: {e}") from e
    if list(frame.columns) != IMU_COLUMNS:
        raise CsvFormatError(f"Expected header {','.join(IMU_COLUMNS)}, got {','.join(map(str, frame.columns))}")
    if frame.empty:
        logger.warning("IMU file has no samples, returning an empty trace")
        return ImuTrace(np.empty(0, np.int64), np.empty((0, 3)), rate or DEFAULT_IMU_RATE)

    stamps = frame["t_us"].fillna("").str.strip()
    if not stamps.str.fullmatch(r"[+-]?\d{1,18}").all():
        raise CsvFormatError("IMU timestamps must be integers")
    t = stamps.astype(np.int64).to_numpy()
    try:
        theta = frame[["wx", "wy", "wz"]].apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as e:
        raise CsvFormatError(f"IMU angular velocities must be numeric: {e}") from e
    if not np.isfinite(theta).all():
        raise CsvFormatError("IMU table contains missing or non-finite angular velocities")
    if (np.diff(t) < 0).any():
        raise NonMonotonicTimestampsError("IMU timestamps are not sorted")
    if rate is None:
        rate = _estimate_rate(t)
    return ImuTrace(t, theta, rate)


def _estimate_rate(t: np.ndarray) -> float:
    spacing = np.diff(t)
    spacing = spacing[spacing > 0]
    if spacing.size == 0:
        return DEFAULT_IMU_RATE
    return 1e6 / float(np.median(spacing))


def write_imu(path: Path, trace: ImuTrace) -> None:
    path.write_text(imu_to_csv(trace), encoding="utf-8")
    logger.debug(f"Wrote {len(trace)} IMU samples to {path}")


def read_imu(path: Path, rate: float | None = None) -> ImuTrace:
    """Read a gyroscope CSV; see ``imu_from_csv``."""
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise CsvFormatError(f"{path} is not UTF-8 text") from e
    return imu_from_csv(text, rate)
