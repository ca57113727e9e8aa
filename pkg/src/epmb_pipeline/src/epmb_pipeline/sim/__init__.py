from epmb_pipeline.sim.aps import synth_aps, synth_imu
from epmb_pipeline.sim.dvs import ideal_dvs
from epmb_pipeline.sim.noise import NoisyStream, ba_rate_for_fraction, inject_noise
from epmb_pipeline.sim.oracle import analytic_epm, phase_hit_frequency, window_hit_frequency
from epmb_pipeline.sim.recording import SimulatedRecording, simulate_recording
from epmb_pipeline.sim.scenes import SceneRenderer, sample_log_intensity
from epmb_pipeline.sim.specs import (
    CameraSpec,
    MotionProfile,
    MotionSegment,
    NoiseSpec,
    SceneKind,
    SceneSpec,
    SensorParams,
    SimulationConfig,
)

__all__ = [
    "CameraSpec",
    "MotionProfile",
    "MotionSegment",
    "NoiseSpec",
    "NoisyStream",
    "SceneKind",
    "SceneRenderer",
    "SceneSpec",
    "SensorParams",
    "SimulatedRecording",
    "SimulationConfig",
    "analytic_epm",
    "ba_rate_for_fraction",
    "ideal_dvs",
    "inject_noise",
    "phase_hit_frequency",
    "sample_log_intensity",
    "simulate_recording",
    "synth_aps",
    "synth_imu",
    "window_hit_frequency",
]
