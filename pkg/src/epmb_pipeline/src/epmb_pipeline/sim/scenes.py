"""Panoramic scenes seen through a rotating pinhole camera.

Scenes are functions of the world viewing direction, so a rotation-only camera
induces an exact, occlusion-free pixel flow. The camera orientation ``C(t)`` maps
world directions to camera rays and evolves as ``dC/dt = [theta]x C``.
"""

import logging

import numpy as np
from scipy.spatial.transform import Rotation

from epmb_core.errors import SimulationError
from epmb_pipeline.sim.specs import CameraSpec, MotionProfile, SceneKind, SceneSpec, SensorParams

logger = logging.getLogger(__name__)

KNOT_SPACING_S = 1e-4

_HASH_MULTIPLIERS = (np.uint64(0x9E3779B97F4A7C15), np.uint64(0xC2B2AE3D27D4EB4F), np.uint64(0x165667B19E3779F9))


def _mix(value: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on uint64 arrays."""
    with np.errstate(over="ignore"):
        value = (value ^ (value >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        value = (value ^ (value >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return value ^ (value >> np.uint64(31))


def _cell_uniform(i: np.ndarray, j: np.ndarray, seed: int, salt: int) -> np.ndarray:
    """Deterministic uniform [0, 1) value per integer lattice cell."""
    with np.errstate(over="ignore"):
        key = (
            i.astype(np.int64).astype(np.uint64) * _HASH_MULTIPLIERS[0]
            + j.astype(np.int64).astype(np.uint64) * _HASH_MULTIPLIERS[1]
            + np.uint64(seed * 1000003 + salt) * _HASH_MULTIPLIERS[2]
        )
    return (_mix(key) >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def scene_pattern(scene: SceneSpec, azimuth: np.ndarray, elevation: np.ndarray) -> np.ndarray:
    """Unit-amplitude pattern in ``[-1, 1]`` at the given panoramic angles (rad)."""
    cos_o, sin_o = np.cos(scene.orientation), np.sin(scene.orientation)
    s = cos_o * azimuth + sin_o * elevation
    r = -sin_o * azimuth + cos_o * elevation
    period = scene.period

    match scene.kind:
        case SceneKind.LINEAR_RAMP:
            w = np.mod(s / period + scene.phase / (2 * np.pi), 1.0)
            return 1.0 - 4.0 * np.abs(w - 0.5)
        case SceneKind.SINUSOID:
            return np.sin(2 * np.pi * s / period + scene.phase)
        case SceneKind.CHECKERBOARD:
            width = scene.edge_width
            along = np.tanh(np.sin(2 * np.pi * s / period + scene.phase) / width)
            across = np.tanh(np.sin(2 * np.pi * r / period) / width)
            return along * across / np.tanh(1.0 / width) ** 2
        case SceneKind.GAUSSIAN_BLOBS:
            return _blobs(scene, s, r)
    raise ValueError(f"Unknown scene kind {scene.kind}")


def _blobs(scene: SceneSpec, s: np.ndarray, r: np.ndarray) -> np.ndarray:
    """One signed Gaussian per lattice cell of side ``period``, jittered inside its cell."""
    period = scene.period
    sigma = period / 8
    ci = np.floor(s / period).astype(np.int64)
    cj = np.floor(r / period).astype(np.int64)
    total = np.zeros(np.broadcast(s, r).shape)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            i, j = ci + di, cj + dj
            center_s = (i + 0.25 + 0.5 * _cell_uniform(i, j, scene.blob_seed, 1)) * period
            center_r = (j + 0.25 + 0.5 * _cell_uniform(i, j, scene.blob_seed, 2)) * period
            sign = np.where(_cell_uniform(i, j, scene.blob_seed, 3) < 0.5, -1.0, 1.0)
            total += sign * np.exp(-((s - center_s) ** 2 + (r - center_r) ** 2) / (2 * sigma**2))
    return np.clip(total, -1.0, 1.0)


class CameraTrajectory:
    """Camera orientation over the motion domain.

    Orientations are stored at knots no further apart than ``knot_spacing_s`` and at
    every segment breakpoint; between knots the exact integral of the angular
    velocity since the previous knot is applied as one rotation.
    """

    def __init__(self, motion: MotionProfile, knot_spacing_s: float = KNOT_SPACING_S) -> None:
        self.motion = motion
        grid = np.arange(0.0, motion.duration_s, knot_spacing_s)
        self.knots_s = np.unique(np.concatenate([grid, motion.breakpoints_s]))
        angles = motion.integral(self.knots_s)
        steps = Rotation.from_rotvec(np.diff(angles, axis=0))
        matrices = np.empty((len(self.knots_s), 3, 3))
        matrices[0] = np.eye(3)
        for i, step in enumerate(steps.as_matrix()):
            matrices[i + 1] = step @ matrices[i]
        self._knot_matrices = matrices
        self._knot_angles = angles

    def orientation(self, t_s: np.ndarray | float) -> np.ndarray:
        """World-to-camera rotation matrices at each time; shape ``(..., 3, 3)``."""
        t_s = np.asarray(t_s, dtype=np.float64)
        flat = np.atleast_1d(t_s).ravel()
        k = np.clip(np.searchsorted(self.knots_s, flat, side="right") - 1, 0, len(self.knots_s) - 1)
        partial = Rotation.from_rotvec(self.motion.integral(flat) - self._knot_angles[k]).as_matrix()
        return np.matmul(partial, self._knot_matrices[k]).reshape(t_s.shape + (3, 3))


class SceneRenderer:
    """Evaluates radiance and DVS log-intensity of a scene for any pixel and time."""

    def __init__(
        self,
        scene: SceneSpec,
        motion: MotionProfile,
        camera: CameraSpec | None = None,
        sensor: SensorParams | None = None,
    ) -> None:
        self.scene = scene
        self.motion = motion
        self.camera = camera or CameraSpec()
        self.sensor = sensor or SensorParams()
        self.trajectory = CameraTrajectory(motion)
        self._k = self.camera.intrinsics.matrix
        self._k_inv = self.camera.intrinsics.inverse

    @property
    def duration_us(self) -> int:
        return self.motion.duration_us

    def rays(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Camera-frame rays ``K^-1 (x, y, 1)`` of the given pixels; shape ``(P, 3)``."""
        pixels = np.stack([np.ravel(x), np.ravel(y), np.ones(np.size(x))], axis=-1).astype(np.float64)
        return pixels @ self._k_inv.T

    def log_radiance(self, x: np.ndarray, y: np.ndarray, t_s: np.ndarray) -> np.ndarray:
        """Scene log-radiance ``log I``; shape ``(len(t_s), P)``."""
        rays = self.rays(x, y)
        orientations = self.trajectory.orientation(np.atleast_1d(t_s))
        directions = np.einsum("sji,pj->spi", orientations, rays)
        azimuth = np.arctan2(directions[..., 0], directions[..., 2])
        elevation = np.arctan2(directions[..., 1], np.hypot(directions[..., 0], directions[..., 2]))
        return self.scene.offset + self.scene.amplitude * scene_pattern(self.scene, azimuth, elevation)

    def radiance(self, x: np.ndarray, y: np.ndarray, t_s: np.ndarray) -> np.ndarray:
        return np.exp(self.log_radiance(x, y, t_s))

    def log_intensity(self, x: np.ndarray, y: np.ndarray, t_s: np.ndarray) -> np.ndarray:
        """DVS log-intensity ``J = log(a * I + b)``; shape ``(len(t_s), P)``."""
        if self.sensor.a == 1.0 and self.sensor.b == 0.0:
            return self.log_radiance(x, y, t_s)
        argument = self.sensor.a * self.radiance(x, y, t_s) + self.sensor.b
        if (argument <= 0).any():
            raise SimulationError(f"a * I + b is not positive for a={self.sensor.a}, b={self.sensor.b}")
        return np.log(argument)

    def project_forward(self, x: float, y: float, t0_s: float, t1_s: float) -> tuple[float, float]:
        """Where the scene point seen at pixel ``(x, y)`` at ``t0`` is seen at ``t1`` (sub-pixel)."""
        c0, c1 = self.trajectory.orientation(np.array([t0_s, t1_s]))
        moved = self._k @ c1 @ c0.T @ self.rays(np.array([x]), np.array([y]))[0]
        return float(moved[0] / moved[2]), float(moved[1] / moved[2])


def sample_log_intensity(
    scene: SceneSpec,
    motion: MotionProfile,
    x: float,
    y: float,
    t_us: float,
    camera: CameraSpec | None = None,
    sensor: SensorParams | None = None,
) -> float:
    """Log-intensity ``J`` at pixel ``(x, y)`` and time ``t_us``.

    Raises:
        SimulationError: If ``t_us`` lies outside the motion domain
    """
    renderer = SceneRenderer(scene, motion, camera, sensor)
    return float(renderer.log_intensity(np.array([x]), np.array([y]), np.array([t_us * 1e-6]))[0, 0])
