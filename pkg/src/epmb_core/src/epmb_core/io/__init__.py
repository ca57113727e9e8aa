from .aps import read_aps, read_aps_sequence, write_aps, write_aps_sequence
from .epm import read_epm, write_epm
from .events import read_events, read_events_csv, write_events, write_events_csv
from .imu import read_imu, write_imu
from .manifest import DatasetManifest, load_recording, read_manifest, write_manifest

__all__ = [
    "DatasetManifest",
    "load_recording",
    "read_aps",
    "read_aps_sequence",
    "read_epm",
    "read_events",
    "read_events_csv",
    "read_imu",
    "read_manifest",
    "write_aps",
    "write_aps_sequence",
    "write_epm",
    "write_events",
    "write_events_csv",
    "write_imu",
    "write_manifest",
]
