"""EPM frame files.

A frame stored at ``name.epm`` consists of three files:

- ``name.epm``: row-major little-endian float32 grid, ``height * width`` values, NaN outside the valid region
- ``name.mask``: validity bitmap, row-major, packed 8 pixels per byte, most significant bit first
- ``name.json``: sidecar ``{"version", "width", "height", "window_start", "window_len"}``
"""

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from epmb_core.core_types import EpmFrame, SensorGeometry, ValidityMask
from epmb_core.errors import FormatError, NonFiniteValueError, SidecarError, SizeMismatchError

logger = logging.getLogger(__name__)

EPM_VERSION = 1


class EpmSidecar(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = EPM_VERSION
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    window_start: int
    window_len: int = Field(gt=0)


def epm_paths(path: Path) -> tuple[Path, Path, Path]:
    """Grid, bitmap and sidecar paths of the frame stored at ``path``."""
    return path.with_suffix(".epm"), path.with_suffix(".mask"), path.with_suffix(".json")


def write_epm(path: Path, frame: EpmFrame) -> None:
    grid_path, mask_path, meta_path = epm_paths(path)
    height, width = frame.values.shape
    grid_path.write_bytes(frame.values.astype("<f4").tobytes(order="C"))
    mask_path.write_bytes(np.packbits(frame.valid.values.reshape(-1)).tobytes())
    sidecar = EpmSidecar(
        width=width, height=height, window_start=frame.window_start, window_len=frame.window_len
    )
    meta_path.write_text(sidecar.model_dump_json(indent=2), encoding="utf-8")


def read_epm(path: Path, geometry: SensorGeometry | None = None) -> EpmFrame:
    """Read a frame written by ``write_epm``.

    Raises:
        SidecarError: If the sidecar is missing or invalid
        SizeMismatchError: If the grid or bitmap size disagrees with the sidecar, or the sidecar with ``geometry``
        NonFiniteValueError: If a valid pixel holds NaN or infinity
        FormatError: If a valid pixel lies outside [0, 1]
    """
    grid_path, mask_path, meta_path = epm_paths(path)
    try:
        meta = EpmSidecar.model_validate_json(meta_path.read_bytes())
    except FileNotFoundError as e:
        raise SidecarError(f"Missing EPM sidecar {meta_path}") from e
    except ValidationError as e:
        raise SidecarError(f"Invalid EPM sidecar {meta_path}: {e.errors()[0]['msg']}") from e
    if meta.version != EPM_VERSION:
        raise SidecarError(f"Unsupported EPM version {meta.version}")
    if geometry is not None and (meta.width, meta.height) != (geometry.width, geometry.height):
        raise SizeMismatchError(
            f"EPM is {meta.width}x{meta.height}, expected {geometry.width}x{geometry.height}"
        )

    pixels = meta.width * meta.height
    grid = grid_path.read_bytes()
    if len(grid) != 4 * pixels:
        raise SizeMismatchError(f"EPM grid has {len(grid)} bytes, expected {4 * pixels}")
    bitmap = mask_path.read_bytes()
    if len(bitmap) != (pixels + 7) // 8:
        raise SizeMismatchError(f"Validity bitmap has {len(bitmap)} bytes, expected {(pixels + 7) // 8}")

    shape = (meta.height, meta.width)
    values = np.frombuffer(grid, dtype="<f4").astype(np.float64).reshape(shape)
    valid = np.unpackbits(np.frombuffer(bitmap, dtype=np.uint8), count=pixels).astype(bool).reshape(shape)
    if not np.isfinite(values[valid]).all():
        raise NonFiniteValueError(f"{grid_path} has non-finite values on valid pixels")
    try:
        return EpmFrame(meta.window_start, meta.window_len, values, ValidityMask(valid))
    except ValueError as e:
        raise FormatError(f"{grid_path}: {e}") from e
