"""Subcommands of the ``epmbench`` command line.

Every command takes a validated ``RunConfig``, writes its outputs below ``config.out``
and returns the paths it wrote. Machine-readable results go to stdout; logs go to stderr.
"""

import json
import logging
import shutil
import sys
from collections.abc import Callable
from functools import partial
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from epmb_core.core_types import EpmFrame, EventStream, Recording
from epmb_core.errors import ConfigError, GeometryMismatchError, MissingCalibrationError
from epmb_core.io.aps import write_aps_sequence
from epmb_core.io.epm import read_epm, write_epm
from epmb_core.io.events import write_events
from epmb_core.io.imu import write_imu
from epmb_core.io.manifest import (
    DatasetManifest,
    load_recording,
    manifest_root,
    read_ground_truth,
    read_manifest,
    read_provenance,
    write_intrinsics,
    write_manifest,
    write_provenance,
)
from epmb_pipeline.bench import BenchmarkReport, bench_method, bound_report, noise_sweep
from epmb_pipeline.calib import (
    SearchConfig,
    cached_calibration,
    calibrate,
    fingerprint,
    read_calibration,
    write_calibration,
)
from epmb_pipeline.config import bench_config
from epmb_pipeline.denoise.filters import BASELINES, FilterResult, run_baseline
from epmb_pipeline.denoise.model import Objective, read_model, write_model
from epmb_pipeline.denoise.training import TrainingConfig, TrainingSet, build_training_set, classify, train
from epmb_pipeline.epm import DvsParams, EpmOptions, label_sequence
from epmb_pipeline.report import (
    ReportRow,
    read_rows_csv,
    render_scene_chart,
    render_sweep_chart,
    rows_from_reports,
    write_rows_csv,
    write_sweep_csv,
)
from epmb_pipeline.sim.noise import ba_rate_for_fraction, inject_noise
from epmb_pipeline.sim.recording import simulate_recording
from epmb_pipeline.sim.specs import NoiseSpec, SimulationConfig
from epmb_pipeline.worker import WorkerPool

logger = logging.getLogger(__name__)

ConfigT = TypeVar("ConfigT", bound=BaseModel)

MODEL_METHOD = "model"
DENOISE_METHODS = (*BASELINES, MODEL_METHOD)
EVENTS_NAME = "events.evt"
IMU_NAME = "imu.csv"
INTRINSICS_NAME = "intrinsics.json"
GROUND_TRUTH_NAME = "ground_truth.json"
PROVENANCE_NAME = "provenance.bin"
MODEL_NAME = "model.ednm"


class RunConfig(BaseModel):
    """One validated invocation of a subcommand."""

    model_config = ConfigDict(extra="forbid")

    command: str
    manifest: Path | None = None
    method: str | None = None
    parameters: dict[str, Any] = Field(default_factory=dict)
    seed: int | None = None
    out: Path = Path("out")
    threads: int = Field(default=1, ge=1)

    @property
    def effective_seed(self) -> int:
        return bench_config.seed if self.seed is None else self.seed

    def require_manifest(self) -> Path:
        if self.manifest is None:
            raise ConfigError(f"{self.command} needs --manifest")
        return self.manifest


def load_json_config(path: Path | None, model: type[ConfigT]) -> ConfigT:
    """Parse a JSON config file, or return the defaults without one.

    Raises:
        ConfigError: If the file is missing or does not match the schema
    """
    if path is None:
        return model()
    try:
        return model.model_validate_json(Path(path).read_bytes())
    except FileNotFoundError as e:
        raise ConfigError(f"Config file {path} not found") from e
    except ValidationError as e:
        error = e.errors()[0]
        location = ".".join(str(part) for part in error["loc"])
        raise ConfigError(f"Invalid config {path}: {location}: {error['msg']}") from e


def _emit(payload: str) -> None:
    sys.stdout.write(payload + "\n")
    sys.stdout.flush()


# simulate


def write_dataset(out: Path, config: SimulationConfig, pool: WorkerPool) -> Path:
    """Simulate ``config`` and write a complete dataset; returns the manifest path."""
    simulated = simulate_recording(config, pool)
    recording = simulated.recording
    out.mkdir(parents=True, exist_ok=True)
    write_events(out / EVENTS_NAME, recording.stream)
    frames = write_aps_sequence(out / "aps", recording.aps)
    write_imu(out / IMU_NAME, recording.imu)
    write_intrinsics(out / INTRINSICS_NAME, recording.intrinsics)
    (out / GROUND_TRUTH_NAME).write_text(simulated.ground_truth.model_dump_json(indent=2), encoding="utf-8")
    write_provenance(out / PROVENANCE_NAME, simulated.is_signal)
    scene = config.model_dump(mode="json")
    scene["duration_us"] = simulated.renderer.duration_us
    manifest = DatasetManifest(
        name=config.name,
        width=config.camera.width,
        height=config.camera.height,
        eta=config.sensor.eta_us,
        events=EVENTS_NAME,
        aps_frames=[path.relative_to(out).as_posix() for path in frames],
        imu=IMU_NAME,
        imu_rate=config.imu_rate,
        intrinsics=INTRINSICS_NAME,
        ground_truth=GROUND_TRUTH_NAME,
        provenance=PROVENANCE_NAME,
        scene=scene,
    )
    path = out / "manifest.json"
    write_manifest(path, manifest)
    return path


def cmd_simulate(config: RunConfig, pool: WorkerPool) -> list[Path]:
    sim_config = load_json_config(config.parameters.get("config"), SimulationConfig)
    if config.seed is not None:
        sim_config = sim_config.model_copy(
            update={"noise": sim_config.noise.model_copy(update={"rng_seed": config.seed})}
        )
    path = write_dataset(config.out, sim_config, pool)
    logger.info(f"Wrote dataset {sim_config.name} to {config.out}")
    return [path]


# inject-noise


def recording_duration(manifest: DatasetManifest, recording: Recording) -> int:
    """Simulated duration if recorded, else up to the last event or exposure end."""
    if "duration_us" in manifest.scene:
        return int(manifest.scene["duration_us"])
    ends = [int(recording.stream.t[-1]) + 1] if len(recording.stream) else [0]
    ends += [frame.window.end for frame in recording.aps.frames]
    return max(ends)


def cmd_inject(config: RunConfig, pool: WorkerPool) -> list[Path]:
    """Copy a dataset with fresh noise; starts from the signal-tagged events when provenance exists."""
    manifest_path = config.require_manifest()
    manifest = read_manifest(manifest_path)
    recording = load_recording(manifest_path, require_imu=False)
    tags = read_provenance(manifest_path, manifest, len(recording.stream))
    clean = recording.stream if tags is None else recording.stream.select(tags)
    duration = recording_duration(manifest, recording)
    params = config.parameters
    ba_rate = float(params.get("ba_rate") or 0.0)
    if params.get("ba_percent") is not None:
        ba_rate = ba_rate_for_fraction(len(clean), float(params["ba_percent"]) / 100, clean.geometry, duration)
    try:
        spec = NoiseSpec(
            ba_rate=ba_rate,
            hole_prob=float(params.get("hole_prob") or 0.0),
            jitter_sigma=float(params.get("jitter_sigma") or 0.0),
            count_gain_sigma=float(params.get("count_gain_sigma") or 0.0),
            rng_seed=config.effective_seed,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid noise parameters: {e.errors()[0]['msg']}") from e
    noisy = inject_noise(clean, spec, duration_us=duration)

    source, out = manifest_root(manifest_path), config.out
    if out.resolve() != source.resolve():
        shutil.copytree(source, out, dirs_exist_ok=True)
    write_events(out / EVENTS_NAME, noisy.stream)
    write_provenance(out / PROVENANCE_NAME, noisy.is_signal)
    updated = manifest.model_copy(update={"events": EVENTS_NAME, "provenance": PROVENANCE_NAME})
    path = out / "manifest.json"
    write_manifest(path, updated)
    (out / updated.calibration).unlink(missing_ok=True)
    logger.info(f"Wrote {len(noisy)} events ({noisy.noise_count} background) to {out}")
    return [path]


# calibrate


def search_config(config: RunConfig) -> SearchConfig:
    search = load_json_config(config.parameters.get("search_config"), SearchConfig)
    if config.parameters.get("no_blur_correction"):
        search = search.model_copy(update={"blur_correction": False})
    return search


def cmd_calibrate(config: RunConfig, pool: WorkerPool) -> list[Path]:
    """Estimate the thresholds and offset, reusing a cached result for the same events and search."""
    manifest_path = config.require_manifest()
    manifest = read_manifest(manifest_path)
    search = search_config(config)
    key = fingerprint(manifest_root(manifest_path) / manifest.events, search)
    cache_path = manifest_root(manifest_path) / manifest.calibration
    result = None if config.parameters.get("force") else cached_calibration(cache_path, key)
    if result is not None:
        logger.info(f"Reusing calibration {cache_path}")
    else:
        recording = load_recording(manifest_path)
        result = calibrate(recording, search, pool).model_copy(update={"fingerprint": key})
        write_calibration(cache_path, result)
    config.out.mkdir(parents=True, exist_ok=True)
    out_path = config.out / "calibration.json"
    write_calibration(out_path, result)
    _emit(result.model_dump_json())
    return [cache_path, out_path]


# label


def dataset_params(manifest_path: Path, use_ground_truth: bool) -> DvsParams:
    """Thresholds and offset of a dataset, from its calibration or its simulator ground truth.

    Raises:
        MissingCalibrationError: If the requested source does not exist
    """
    manifest = read_manifest(manifest_path)
    if use_ground_truth:
        truth = read_ground_truth(manifest_path, manifest)
        if truth is None:
            raise MissingCalibrationError(f"Dataset {manifest.name} has no ground truth; run calibrate instead")
        return DvsParams(eps_pos=truth.eps_pos, eps_neg=truth.eps_neg, offset=truth.offset)
    path = manifest_root(manifest_path) / manifest.calibration
    if not path.is_file():
        raise MissingCalibrationError(
            f"Dataset {manifest.name} is not calibrated; run `epmbench calibrate --manifest {manifest_path}` first"
        )
    return read_calibration(path).params


def dataset_masks(config: RunConfig, manifest_path: Path, recording: Recording, pool: WorkerPool) -> list[EpmFrame]:
    """EPM frames from ``--epm-dir`` if given, else labeled from the dataset's parameters."""
    epm_dir = config.parameters.get("epm_dir")
    if epm_dir is not None:
        paths = sorted(Path(epm_dir).glob("*.epm"))
        return [read_epm(path, recording.stream.geometry) for path in paths]
    params = dataset_params(manifest_path, bool(config.parameters.get("ground_truth")))
    options = EpmOptions(blur_correction=not config.parameters.get("no_blur_correction"))
    return label_sequence(recording.aps, recording.imu, recording.intrinsics, params, options, pool)


def cmd_label(config: RunConfig, pool: WorkerPool) -> list[Path]:
    """One EPM file set per exposure window."""
    manifest_path = config.require_manifest()
    recording = load_recording(manifest_path)
    params = dataset_params(manifest_path, bool(config.parameters.get("ground_truth")))
    options = EpmOptions(blur_correction=not config.parameters.get("no_blur_correction"))
    masks = label_sequence(recording.aps, recording.imu, recording.intrinsics, params, options, pool)
    directory = config.out / "epm"
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for frame, mask in zip(recording.aps.frames, masks):
        path = directory / f"window_{frame.k:06d}.epm"
        write_epm(path, mask)
        paths.append(path)
    logger.info(f"Wrote {len(paths)} EPM frames to {directory}")
    return paths


# denoise / train


def denoise_stream(config: RunConfig, method: str, stream: EventStream) -> FilterResult:
    """Run a baseline or the trained model named ``method`` on ``stream``."""
    if method == MODEL_METHOD:
        model_path = config.parameters.get("model")
        if model_path is None:
            raise ConfigError("Method 'model' needs --model")
        return classify(read_model(Path(model_path)), stream)
    dt_us, radius = config.parameters.get("dt_us"), config.parameters.get("radius")
    return run_baseline(stream, method, dt_us, radius)


def method_parameters(config: RunConfig, method: str) -> dict[str, Any]:
    if method == MODEL_METHOD:
        return {"model": str(config.parameters.get("model"))}
    keys = ("dt_us",) if method in ("ie", "ie+te") else ("dt_us", "radius")
    return {key: config.parameters[key] for key in keys if config.parameters.get(key) is not None}


def cmd_denoise(config: RunConfig, pool: WorkerPool) -> list[Path]:
    manifest_path = config.require_manifest()
    method = config.method or "baf"
    recording = load_recording(manifest_path, require_imu=False)
    result = denoise_stream(config, method, recording.stream)
    config.out.mkdir(parents=True, exist_ok=True)
    path = config.out / f"denoised_{method.replace('+', '_')}.evt"
    write_events(path, result.kept)
    return [path]


def cmd_train(config: RunConfig, pool: WorkerPool) -> list[Path]:
    """Train on the EPM-labeled in-window events of every given dataset."""
    manifests = [Path(p) for p in config.parameters.get("manifests") or []]
    if config.manifest is not None:
        manifests.insert(0, config.manifest)
    if not manifests:
        raise ConfigError("train needs at least one --manifest")
    training = load_json_config(config.parameters.get("training_config"), TrainingConfig)
    training = training.model_copy(update={"seed": config.effective_seed})
    if config.method is not None:
        try:
            training = training.model_copy(update={"objective": Objective(config.method)})
        except ValueError as e:
            raise ConfigError(f"Unknown training objective {config.method!r}") from e
    sets = []
    for manifest_path in manifests:
        recording = load_recording(manifest_path)
        masks = dataset_masks(config, manifest_path, recording, pool)
        sets.append(build_training_set(recording.stream, masks))
    model = train(TrainingSet.merge(sets), training)
    config.out.mkdir(parents=True, exist_ok=True)
    model_path, config_path = config.out / MODEL_NAME, config.out / "training.json"
    write_model(model_path, model)
    config_path.write_text(training.model_dump_json(indent=2), encoding="utf-8")
    return [model_path, config_path]


# bench / report


def _kept_events(config: RunConfig, method: str, stream: EventStream) -> EventStream:
    return denoise_stream(config, method, stream).kept


def _write_reports(path: Path, reports: list[BenchmarkReport]) -> None:
    path.write_text(json.dumps([r.model_dump(mode="json") for r in reports], indent=2), encoding="utf-8")


def cmd_bench(config: RunConfig, pool: WorkerPool) -> list[Path]:
    """RPMD of the E_opt bound, the raw stream and every requested method on one dataset."""
    manifest_path = config.require_manifest()
    manifest = read_manifest(manifest_path)
    recording = load_recording(manifest_path)
    masks = dataset_masks(config, manifest_path, recording, pool)
    if len(masks) != len(recording.aps):
        raise GeometryMismatchError(f"{len(masks)} EPM frames for {len(recording.aps)} exposures")
    methods: list[str] = list(config.parameters.get("methods") or [])
    reports = [bound_report(masks), bench_method(recording.stream, masks, pool=pool)]
    denoisers: dict[str, Callable[[EventStream], EventStream]] = {}
    for method in methods:
        result = denoise_stream(config, method, recording.stream)
        reports.append(
            bench_method(result.kept, masks, method=method, parameters=method_parameters(config, method), pool=pool)
        )
        denoisers[method] = partial(_kept_events, config, method)

    config.out.mkdir(parents=True, exist_ok=True)
    paths = [config.out / "bench.json", config.out / "bench.csv", config.out / "bench.svg"]
    _write_reports(paths[0], reports)
    rows = rows_from_reports(manifest.name, reports)
    write_rows_csv(paths[1], rows)
    render_scene_chart(paths[2], rows, title=f"RPMD on {manifest.name}")

    percents = config.parameters.get("sweep")
    if percents:
        tags = read_provenance(manifest_path, manifest, len(recording.stream))
        if tags is None:
            raise ConfigError(f"Noise sweep needs a dataset with provenance tags, {manifest.name} has none")
        clean = recording.stream.select(tags)
        duration = recording_duration(manifest, recording)

        def with_noise(stream: EventStream, fraction: float) -> EventStream:
            rate = ba_rate_for_fraction(len(stream), fraction, stream.geometry, duration)
            return inject_noise(stream, NoiseSpec(ba_rate=rate, rng_seed=config.effective_seed), duration).stream

        points = noise_sweep(clean, masks, [float(p) for p in percents], with_noise, denoisers, pool)
        paths += [config.out / "sweep.csv", config.out / "sweep.svg"]
        write_sweep_csv(paths[3], points)
        render_sweep_chart(paths[4], points)
    _emit(json.dumps({row.method: row.rpmd for row in rows}))
    return paths


def cmd_report(config: RunConfig, pool: WorkerPool) -> list[Path]:
    """Merge per-dataset benchmark tables into one table and chart."""
    inputs = [Path(p) for p in config.parameters.get("inputs") or []]
    if not inputs:
        raise ConfigError("report needs at least one benchmark table")
    rows: list[ReportRow] = [row for path in inputs for row in read_rows_csv(path)]
    config.out.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = config.out / "report.csv", config.out / "report.svg"
    write_rows_csv(csv_path, rows)
    render_scene_chart(svg_path, rows)
    means = {}
    for method in dict.fromkeys(row.method for row in rows):
        means[method] = float(np.mean([row.rpmd for row in rows if row.method == method]))
    _emit(json.dumps(means))
    return [csv_path, svg_path]


COMMANDS: dict[str, Callable[[RunConfig, WorkerPool], list[Path]]] = {
    "simulate": cmd_simulate,
    "inject-noise": cmd_inject,
    "label": cmd_label,
    "calibrate": cmd_calibrate,
    "denoise": cmd_denoise,
    "train": cmd_train,
    "bench": cmd_bench,
    "report": cmd_report,
}
