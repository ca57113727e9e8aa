"""Whole simulated recordings: events, frames, gyroscope and ground truth from one config."""

import logging
from dataclasses import dataclass

import numpy as np

from epmb_core.core_types import Recording
from epmb_core.io.manifest import GroundTruth
from epmb_pipeline.sim.aps import synth_aps, synth_imu
from epmb_pipeline.sim.dvs import ideal_dvs
from epmb_pipeline.sim.noise import NoisyStream, inject_noise
from epmb_pipeline.sim.scenes import SceneRenderer
from epmb_pipeline.sim.specs import SimulationConfig
from epmb_pipeline.worker import WorkerPool

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimulatedRecording:
    """A noisy recording plus what only the simulator knows about it."""

    recording: Recording
    clean_count: int
    is_signal: np.ndarray
    ground_truth: GroundTruth
    renderer: SceneRenderer


def renderer_for(config: SimulationConfig) -> SceneRenderer:
    return SceneRenderer(config.scene, config.motion, config.camera, config.sensor)


def simulate_recording(config: SimulationConfig, pool: WorkerPool | None = None) -> SimulatedRecording:
    """Run the ideal DVS, APS and IMU synthesis and noise injection for ``config``.

    Raises:
        SimulationError: If the config cannot be simulated
    """
    renderer = renderer_for(config)
    clean = ideal_dvs(renderer, step_us=config.step_us, pool=pool)
    noisy: NoisyStream = inject_noise(clean, config.noise, duration_us=renderer.duration_us)
    aps = synth_aps(renderer, pool=pool)
    imu = synth_imu(config.motion, config.imu_rate)
    recording = Recording(stream=noisy.stream, aps=aps, imu=imu, intrinsics=config.camera.intrinsics)
    truth = GroundTruth(eps_pos=config.sensor.eps_pos, eps_neg=config.sensor.eps_neg, offset=config.sensor.offset)
    logger.info(f"Simulated recording {config.name}: {len(noisy)} events ({len(clean)} clean), {len(aps)} frames")
    return SimulatedRecording(
        recording=recording, clean_count=len(clean), is_signal=noisy.is_signal, ground_truth=truth, renderer=renderer
    )
