"""APS frame files: one 16-bit binary PGM (P5, maxval 65535) per frame plus a JSON sidecar.

The sidecar sits next to the image with the ``.json`` suffix and holds ``{"k", "start_t", "tau"}``.
Values are digital counts; the writer rounds to the nearest count and clips to ``[0, 65535]``,
so frames holding integer counts round-trip exactly.
"""

import io
import logging
import re
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, ValidationError

from epmb_core.core_types import ApsFrame, ApsSequence, SensorGeometry
from epmb_core.errors import EpmbError, PgmFormatError, SidecarError

logger = logging.getLogger(__name__)

PGM_MAXVAL = 65535
_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)\s")


class ApsSidecar(BaseModel):
    """Per-frame metadata stored next to the PGM image."""

    model_config = ConfigDict(extra="forbid")

    k: int
    start_t: int
    tau: int


def sidecar_path(image_path: Path) -> Path:
    return image_path.with_suffix(".json")


def to_counts(values: np.ndarray) -> np.ndarray:
    """Round intensities to the nearest digital count inside the 16-bit range."""
    clipped = np.clip(np.rint(values), 0, PGM_MAXVAL)
    if (clipped != np.rint(values)).any():
        logger.warning(f"Clipped {int((clipped != np.rint(values)).sum())} APS values to [0, {PGM_MAXVAL}]")
    return clipped.astype(np.uint16)


def encode_pgm(values: np.ndarray) -> bytes:
    """Encode a frame as a 16-bit binary PGM."""
    buffer = io.BytesIO()
    Image.fromarray(to_counts(values).astype(np.int32)).save(buffer, format="PPM")
    return buffer.getvalue()


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode a 16-bit binary PGM into a float64 ``(height, width)`` array.

    Raises:
        PgmFormatError: If the data is not a P5 image with maxval 65535 or is cut short
    """
    match = _PGM_HEADER.match(data)
    if match is None:
        raise PgmFormatError("Not a binary PGM (P5) header")
    width, height, maxval = (int(group) for group in match.groups())
    if maxval != PGM_MAXVAL:
        raise PgmFormatError(f"PGM maxval must be {PGM_MAXVAL}, got {maxval}")
    if width == 0 or height == 0:
        raise PgmFormatError(f"PGM has empty size {width}x{height}")
    expected = match.end() + 2 * width * height
    if len(data) < expected:
        raise PgmFormatError(f"PGM pixel data truncated: {len(data)} bytes, expected {expected}")
    try:
        with Image.open(io.BytesIO(data), formats=["PPM"]) as image:
            image.load()
            values = np.asarray(image, dtype=np.float64)
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as e:
        raise PgmFormatError(f"Unreadable PGM: {e}") from e
    if values.shape != (height, width):
        raise PgmFormatError(f"Decoded shape {values.shape} differs from header {height}x{width}")
    return values


def write_aps(path: Path, frame: ApsFrame) -> None:
    """Write a frame image to ``path`` and its sidecar next to it."""
    path.write_bytes(encode_pgm(frame.values))
    sidecar = ApsSidecar(k=frame.k, start_t=frame.start_t, tau=frame.tau)
    sidecar_path(path).write_text(sidecar.model_dump_json(indent=2), encoding="utf-8")


def read_aps(path: Path, geometry: SensorGeometry | None = None) -> ApsFrame:
    """Read a frame image and its sidecar.

    Args:
        path: PGM image path
        geometry: Expected sensor geometry, checked when given

    Raises:
        PgmFormatError: If the image is malformed
        SidecarError: If the sidecar is missing or lacks a field
        GeometryMismatchError: If the image size differs from ``geometry``
    """
    values = decode_pgm(path.read_bytes())
    meta = read_sidecar(sidecar_path(path))
    if geometry is not None:
        geometry.check_frame(values, f"APS frame {path.name}")
    try:
        return ApsFrame(k=meta.k, start_t=meta.start_t, tau=meta.tau, values=values)
    except EpmbError:
        raise
    except ValueError as e:
        raise SidecarError(f"{sidecar_path(path)}: {e}") from e


def read_sidecar(path: Path) -> ApsSidecar:
    try:
        return ApsSidecar.model_validate_json(path.read_bytes())
    except FileNotFoundError as e:
        raise SidecarError(f"Missing sidecar {path}") from e
    except ValidationError as e:
        raise SidecarError(f"Invalid sidecar {path}: {e.error_count()} error(s), first: {e.errors()[0]['msg']}") from e


def frame_filename(k: int) -> str:
    return f"frame_{k:06d}.pgm"


def write_aps_sequence(directory: Path, aps: ApsSequence) -> list[Path]:
    """Write every frame of a sequence into ``directory``; returns the image paths in frame order."""
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for frame in aps.frames:
        path = directory / frame_filename(frame.k)
        write_aps(path, frame)
        paths.append(path)
    logger.debug(f"Wrote {len(paths)} APS frames to {directory}")
    return paths


def read_aps_sequence(paths: Sequence[Path], geometry: SensorGeometry, eta: int) -> ApsSequence:
    frames = [read_aps(path, geometry) for path in paths]
    if not frames:
        logger.warning("APS sequence has no frames")
    return ApsSequence(geometry=geometry, frames=tuple(frames), eta=eta)
