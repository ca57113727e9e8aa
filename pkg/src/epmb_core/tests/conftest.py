"""Shared test fixtures and strategies for epmb_core tests."""

import tempfile
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

from epmb_core.core_types import ApsFrame, ApsSequence, EventStream, ImuTrace, SensorGeometry


@pytest.fixture
def geometry() -> SensorGeometry:
    """A small 8x6 sensor."""
    return SensorGeometry(width=8, height=6)


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for file round trips."""
    with tempfile.TemporaryDirectory() as directory:
        yield Path(directory)


@pytest.fixture
def sample_stream(geometry: SensorGeometry) -> EventStream:
    """Five events spread over two pixels and both polarities."""
    return EventStream(
        geometry,
        t=np.array([0, 10, 10, 250, 5000]),
        x=np.array([3, 3, 7, 0, 3]),
        y=np.array([4, 4, 5, 0, 4]),
        p=np.array([1, -1, 1, 1, -1]),
    )


@pytest.fixture
def sample_aps(geometry: SensorGeometry) -> ApsSequence:
    """Three frames at eta=20000 us with tau=5000 us and integer counts."""
    rng = np.random.default_rng(0)
    frames = tuple(
        ApsFrame(k=k, start_t=20000 * k, tau=5000, values=rng.integers(0, 65536, geometry.shape).astype(float))
        for k in range(3)
    )
    return ApsSequence(geometry=geometry, frames=frames, eta=20000)


@pytest.fixture
def sample_imu() -> ImuTrace:
    """Ten samples at 1 kHz."""
    t = np.arange(10, dtype=np.int64) * 1000
    theta = np.column_stack([np.linspace(0.0, 0.9, 10), np.full(10, 0.5), np.zeros(10)])
    return ImuTrace(t, theta, rate=1000.0)

