"""Event stream files: the EVT1 binary container and ``t_us,x,y,p`` CSV tables.

EVT1 layout (little-endian)::

    header  magic "EVT1" | u16 version | u16 width | u16 height | u64 count      18 bytes
    record  u64 t_us | u16 x | u16 y | i8 p | u8 pad (0)                         14 bytes
"""

import io
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from epmb_core.core_types import EventStream, SensorGeometry
from epmb_core.errors import (
    BadMagicError,
    CsvFormatError,
    EpmbError,
    FormatError,
    InvalidPolarityError,
    SizeMismatchError,
    TruncatedFileError,
)

logger = logging.getLogger(__name__)

EVT_MAGIC = b"EVT1"
EVT_VERSION = 1
EVT_HEADER = np.dtype([("magic", "S4"), ("version", "<u2"), ("width", "<u2"), ("height", "<u2"), ("count", "<u8")])
EVT_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1")])
CSV_COLUMNS = ["t_us", "x", "y", "p"]
_U16_MAX = 0xFFFF


def encode_events(stream: EventStream) -> bytes:
    """Serialize a stream to EVT1 bytes."""
    geometry = stream.geometry
    if geometry.width > _U16_MAX or geometry.height > _U16_MAX:
        raise FormatError(f"Geometry {geometry.width}x{geometry.height} does not fit EVT1 16-bit fields")
    header = np.zeros(1, dtype=EVT_HEADER)
    header["magic"] = EVT_MAGIC
    header["version"] = EVT_VERSION
    header["width"] = geometry.width
    header["height"] = geometry.height
    header["count"] = len(stream)
    records = np.zeros(len(stream), dtype=EVT_RECORD)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.p
    return header.tobytes() + records.tobytes()


def decode_events(data: bytes) -> EventStream:
    """Parse EVT1 bytes.

    Raises:
        BadMagicError: If the data does not start with ``EVT1``
        TruncatedFileError: If the header or a record is cut short
        SizeMismatchError: If bytes follow the last announced record
        FormatError: On an unsupported version, zero geometry or a timestamp beyond the int64 range
        UnsortedEventsError: If timestamps decrease
        OutOfBoundsError: If a coordinate lies outside the header geometry
        InvalidPolarityError: If a polarity is not +1 or -1
    """
    if len(data) < len(EVT_MAGIC) or data[: len(EVT_MAGIC)] != EVT_MAGIC:
        raise BadMagicError(f"Expected magic {EVT_MAGIC!r}, got {bytes(data[:4])!r}")
    if len(data) < EVT_HEADER.itemsize:
        raise TruncatedFileError(f"Header needs {EVT_HEADER.itemsize} bytes, file has {len(data)}")
    header = np.frombuffer(data, dtype=EVT_HEADER, count=1)[0]
    if int(header["version"]) != EVT_VERSION:
        raise FormatError(f"Unsupported EVT version {int(header['version'])}")
    count = int(header["count"])
    payload = len(data) - EVT_HEADER.itemsize
    expected = count * EVT_RECORD.itemsize
    if payload < expected:
        raise TruncatedFileError(
            f"Header announces {count} records ({expected} bytes), only {payload} bytes follow"
        )
    if payload > expected:
        raise SizeMismatchError(f"{payload - expected} trailing bytes after {count} records")
    try:
        geometry = SensorGeometry(width=int(header["width"]), height=int(header["height"]))
    except ValueError as e:
        raise FormatError(f"Invalid geometry in header: {e}") from e

    records = np.frombuffer(data, dtype=EVT_RECORD, count=count, offset=EVT_HEADER.itemsize)
    if count and int(records["t"].max()) > np.iinfo(np.int64).max:
        raise FormatError("Timestamp exceeds the signed 64-bit range")
    if (records["pad"] != 0).any():
        logger.debug("EVT1 records carry non-zero padding bytes")
    p = records["p"]
    bad = (p != 1) & (p != -1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise InvalidPolarityError(f"Record {i} has polarity {int(p[i])}")
    return EventStream(
        geometry,
        records["t"].astype(np.int64),
        records["x"].astype(np.int32),
        records["y"].astype(np.int32),
        p.astype(np.int8),
    )


def write_events(path: Path, stream: EventStream) -> None:
    """Write a stream to an EVT1 file."""
    path.write_bytes(encode_events(stream))
    logger.debug(f"Wrote {len(stream)} events to {path}")


def read_events(path: Path) -> EventStream:
    """Read an EVT1 file; see ``decode_events`` for the raised errors."""
    stream = decode_events(path.read_bytes())
    logger.debug(f"Read {len(stream)} events from {path}")
    return stream


def events_to_csv(stream: EventStream) -> str:
    """Render a stream as a ``t_us,x,y,p`` table."""
    frame = pd.DataFrame({"t_us": stream.t, "x": stream.x, "y": stream.y, "p": stream.p}, columns=CSV_COLUMNS)
    return frame.to_csv(index=False, lineterminator="\n")


def events_from_csv(text: str, geometry: SensorGeometry) -> EventStream:
    """Parse a ``t_us,x,y,p`` table.

    Args:
        text: CSV content with a header row
        geometry: Sensor the coordinates refer to (CSV carries no geometry)

    Returns:
        The parsed stream

    Raises:
        CsvFormatError: On a wrong header, a non-integer cell or a polarity outside {+1, -1}
        UnsortedEventsError: If timestamps decrease
        OutOfBoundsError: If a coordinate lies outside ``geometry``
    """
    columns = _parse_integer_table(text, CSV_COLUMNS)
    p = columns["p"]
    bad = (p != 1) & (p != -1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise CsvFormatError(f"Row {i + 1}: polarity must be 1 or -1, got {int(p[i])}")
    try:
        return EventStream(geometry, columns["t_us"], columns["x"], columns["y"], p)
    except EpmbError:
        raise
    except (ValueError, OverflowError) as e:
        raise CsvFormatError(f"Invalid event table: {e}") from e


def write_events_csv(path: Path, stream: EventStream) -> None:
    path.write_text(events_to_csv(stream), encoding="utf-8")


def read_events_csv(path: Path, geometry: SensorGeometry) -> EventStream:
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise CsvFormatError(f"{path} is not UTF-8 text") from e
    return events_from_csv(text, geometry)


def _parse_integer_table(text: str, columns: list[str]) -> dict[str, np.ndarray]:
    """Parse a CSV whose header is exactly ``columns`` and whose cells are all integers."""
    try:
        frame = pd.read_csv(io.StringIO(text), header=None, dtype=str, keep_default_na=False, index_col=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeError, ValueError) as e:
        raise CsvFormatError(f"Unreadable CSV: {e}") from e
    header = [str(cell).strip() for cell in frame.iloc[0]]
    if header != columns:
        raise CsvFormatError(f"Expected header {','.join(columns)}, got {','.join(header)}")
    body = frame.iloc[1:].fillna("")
    result = {}
    for position, name in enumerate(columns):
        cells = body[body.columns[position]].astype(str).str.strip()
        malformed = ~cells.str.fullmatch(r"[+-]?\d{1,19}").astype(bool)
        if malformed.any():
            row = int(np.flatnonzero(malformed.to_numpy())[0])
            raise CsvFormatError(f"Row {row + 1}: column {name} is not an integer: {cells.iloc[row]!r}")
        try:
            result[name] = cells.astype(np.int64).to_numpy()
        except (ValueError, OverflowError) as e:
            raise CsvFormatError(f"Column {name} out of range: {e}") from e
    return result
