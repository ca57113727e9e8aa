"""Dataset manifests: one JSON file tying together the files of a recording.

Paths inside a manifest are relative to the manifest's directory.
"""

import logging
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from epmb_core.core_types import CameraIntrinsics, EventStream, ImuTrace, Recording, SensorGeometry
from epmb_core.errors import GeometryMismatchError, ManifestError, MissingImuError, SidecarError
from epmb_core.io.aps import read_aps_sequence
from epmb_core.io.events import read_events, read_events_csv
from epmb_core.io.imu import read_imu

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class IntrinsicsModel(BaseModel):
    """JSON form of the camera intrinsics."""

    model_config = ConfigDict(extra="forbid")

    f: float = Field(gt=0)
    cx: float
    cy: float
    kappa: float = 0.0

    def to_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(f=self.f, cx=self.cx, cy=self.cy, kappa=self.kappa)

    @classmethod
    def from_intrinsics(cls, intrinsics: CameraIntrinsics) -> "IntrinsicsModel":
        return cls(f=intrinsics.f, cx=intrinsics.cx, cy=intrinsics.cy, kappa=intrinsics.kappa)


class GroundTruth(BaseModel):
    """Hidden sensor parameters of a simulated recording."""

    eps_pos: float = Field(gt=0)
    eps_neg: float = Field(gt=0)
    offset: float


class DatasetManifest(BaseModel):
    """Files and metadata of one recording."""

    model_config = ConfigDict(extra="forbid")

    name: str
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    eta: int = Field(gt=0)
    events: str
    aps_frames: list[str]
    imu: str | None = None
    imu_rate: float | None = Field(default=None, gt=0)
    intrinsics: str
    ground_truth: str | None = None
    provenance: str | None = None
    calibration: str = "calibration.json"
    scene: dict[str, Any] = Field(default_factory=dict)

    @property
    def geometry(self) -> SensorGeometry:
        return SensorGeometry(width=self.width, height=self.height)


def manifest_root(path: Path) -> Path:
    return path.parent


def write_manifest(path: Path, manifest: DatasetManifest) -> None:
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")


def read_manifest(path: Path) -> DatasetManifest:
    """Parse a manifest and check that every referenced file exists.

    Raises:
        ManifestError: If the manifest is unreadable or references a missing file
    """
    try:
        manifest = DatasetManifest.model_validate_json(path.read_bytes())
    except FileNotFoundError as e:
        raise ManifestError(f"Manifest {path} not found") from e
    except ValidationError as e:
        raise ManifestError(f"Invalid manifest {path}: {e.errors()[0]['loc']}: {e.errors()[0]['msg']}") from e
    root = manifest_root(path)
    referenced = [manifest.events, manifest.intrinsics, *manifest.aps_frames]
    referenced += [name for name in (manifest.imu, manifest.ground_truth, manifest.provenance) if name]
    missing = [name for name in referenced if not (root / name).is_file()]
    if missing:
        raise ManifestError(f"Manifest {path} references missing files: {', '.join(missing)}")
    return manifest


def read_stream(path: Path, manifest: DatasetManifest) -> EventStream:
    """Read the manifest's event file, EVT1 or CSV by suffix."""
    events_path = manifest_root(path) / manifest.events
    if events_path.suffix == ".csv":
        return read_events_csv(events_path, manifest.geometry)
    stream = read_events(events_path)
    if stream.geometry != manifest.geometry:
        raise GeometryMismatchError(f"Event file geometry {stream.geometry} differs from manifest {manifest.geometry}")
    return stream


def read_intrinsics(path: Path) -> CameraIntrinsics:
    try:
        return IntrinsicsModel.model_validate_json(path.read_bytes()).to_intrinsics()
    except ValidationError as e:
        raise SidecarError(f"Invalid intrinsics {path}: {e.errors()[0]['msg']}") from e


def write_intrinsics(path: Path, intrinsics: CameraIntrinsics) -> None:
    path.write_text(IntrinsicsModel.from_intrinsics(intrinsics).model_dump_json(indent=2), encoding="utf-8")


def read_ground_truth(path: Path, manifest: DatasetManifest) -> GroundTruth | None:
    if manifest.ground_truth is None:
        return None
    truth_path = manifest_root(path) / manifest.ground_truth
    try:
        return GroundTruth.model_validate_json(truth_path.read_bytes())
    except ValidationError as e:
        raise SidecarError(f"Invalid ground truth {truth_path}: {e.errors()[0]['msg']}") from e


def write_provenance(path: Path, is_signal: np.ndarray) -> None:
    """Store per-event signal (1) / noise (0) tags as a raw uint8 column."""
    path.write_bytes(np.asarray(is_signal, dtype=np.uint8).tobytes())


def read_provenance(path: Path, manifest: DatasetManifest, count: int) -> np.ndarray | None:
    if manifest.provenance is None:
        return None
    tags = np.frombuffer((manifest_root(path) / manifest.provenance).read_bytes(), dtype=np.uint8)
    if len(tags) != count:
        raise ManifestError(f"Provenance has {len(tags)} tags for {count} events")
    return tags.astype(bool)


def load_recording(path: Path, require_imu: bool = True) -> Recording:
    """Read every file of a manifest into a Recording.

    Args:
        path: Manifest path
        require_imu: Raise if the manifest has no IMU file; otherwise an empty trace is used

    Raises:
        ManifestError: If a file is missing
        MissingImuError: If the IMU is required but the manifest has none
        GeometryMismatchError: If the files disagree on the sensor geometry
    """
    manifest = read_manifest(path)
    root = manifest_root(path)
    stream = read_stream(path, manifest)
    aps = read_aps_sequence([root / name for name in manifest.aps_frames], manifest.geometry, manifest.eta)
    if manifest.imu is not None:
        imu = read_imu(root / manifest.imu, manifest.imu_rate)
    elif require_imu:
        raise MissingImuError(f"Dataset {manifest.name} has no IMU trace")
    else:
        imu = ImuTrace(np.empty(0, np.int64), np.empty((0, 3)), 1.0)
    intrinsics = read_intrinsics(root / manifest.intrinsics)
    logger.info(f"Loaded dataset {manifest.name}: {len(stream)} events, {len(aps)} frames, {len(imu)} IMU samples")
    return Recording(stream=stream, aps=aps, imu=imu, intrinsics=intrinsics)
