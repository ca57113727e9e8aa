"""Shared test fixtures for epmb_pipeline tests: tiny deterministic simulated datasets."""

import tempfile
from collections.abc import Callable
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

from epmb_core.core_types import EpmFrame, EventStream, SensorGeometry
from epmb_pipeline.commands import write_dataset
from epmb_pipeline.epm import DvsParams, EpmOptions, label_sequence
from epmb_pipeline.sim.recording import SimulatedRecording, simulate_recording
from epmb_pipeline.sim.scenes import SceneRenderer
from epmb_pipeline.sim.specs import CameraSpec, MotionProfile, SceneKind, SceneSpec, SensorParams, SimulationConfig
from epmb_pipeline.worker import WorkerPool

StreamFactory = Callable[[list[tuple[int, int, int, int]]], EventStream]


@pytest.fixture
def geometry() -> SensorGeometry:
    """A small 8x6 sensor."""
    return SensorGeometry(width=8, height=6)


@pytest.fixture
def make_stream(geometry: SensorGeometry) -> StreamFactory:
    """Build a stream on ``geometry`` from time-ordered (t, x, y, p) rows."""

    def build(rows: list[tuple[int, int, int, int]]) -> EventStream:
        if not rows:
            return EventStream.empty(geometry)
        t, x, y, p = zip(*rows)
        return EventStream(geometry, np.array(t), np.array(x), np.array(y), np.array(p))

    return build


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for file outputs."""
    with tempfile.TemporaryDirectory() as directory:
        yield Path(directory)


@pytest.fixture(scope="session")
def tiny_config() -> SimulationConfig:
    """16x12 sensor panning across a sinusoid for 0.1 s: five exposures of 5 ms."""
    return SimulationConfig(
        name="tiny",
        camera=CameraSpec(width=16, height=12, f=40.0),
        scene=SceneSpec(kind=SceneKind.SINUSOID, period=0.5, amplitude=0.5),
        motion=MotionProfile.constant((0.0, 4.0, 0.0), 0.1),
        sensor=SensorParams(eps_pos=0.2, eps_neg=0.2, b=-0.2),
    )


@pytest.fixture(scope="session")
def tiny_simulation(tiny_config: SimulationConfig) -> SimulatedRecording:
    return simulate_recording(tiny_config, WorkerPool(threads=1))


@pytest.fixture(scope="session")
def tiny_params(tiny_simulation: SimulatedRecording) -> DvsParams:
    truth = tiny_simulation.ground_truth
    return DvsParams(eps_pos=truth.eps_pos, eps_neg=truth.eps_neg, offset=truth.offset)


@pytest.fixture(scope="session")
def tiny_masks(tiny_simulation: SimulatedRecording, tiny_params: DvsParams) -> list[EpmFrame]:
    """EPM of every exposure from the true parameters, without blur correction."""
    recording = tiny_simulation.recording
    return label_sequence(
        recording.aps, recording.imu, recording.intrinsics, tiny_params, EpmOptions(blur_correction=False)
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory: pytest.TempPathFactory, tiny_config: SimulationConfig) -> Path:
    """Manifest of the tiny recording written to disk; tests must copy it before modifying it."""
    directory = tmp_path_factory.mktemp("tiny")
    return write_dataset(directory, tiny_config, WorkerPool(threads=1))


PAN_SCENES = {
    SceneKind.CHECKERBOARD: SceneSpec(kind=SceneKind.CHECKERBOARD, period=0.4, amplitude=0.5, edge_width=1.0),
    SceneKind.SINUSOID: SceneSpec(kind=SceneKind.SINUSOID, period=0.4, amplitude=0.5),
    # Kinks at +-0.4 rad stay outside the field of view for the whole pan.
    SceneKind.LINEAR_RAMP: SceneSpec(kind=SceneKind.LINEAR_RAMP, period=1.6, amplitude=1.0, phase=np.pi / 2),
    SceneKind.GAUSSIAN_BLOBS: SceneSpec(kind=SceneKind.GAUSSIAN_BLOBS, period=0.4, amplitude=0.5),
}


@pytest.fixture(scope="session")
def pan_renderer() -> Callable[[SceneKind], SceneRenderer]:
    """64x48 sensor (f=100) panning at 1.5 rad/s for 45 ms: three 5 ms exposures, under a pixel of blur."""

    def build(kind: SceneKind) -> SceneRenderer:
        motion = MotionProfile.constant((0.0, 1.5, 0.0), 0.045)
        return SceneRenderer(PAN_SCENES[kind], motion, CameraSpec(width=64, height=48, f=100.0))

    return build
