"""Configuration management for the benchmarking pipeline."""

from pydantic_settings import BaseSettings, SettingsConfigDict


class BenchConfig(BaseSettings):
    """Environment-driven defaults for every pipeline stage."""

    model_config = SettingsConfigDict(env_prefix="EPMBENCH_", env_file=".env", extra="ignore")

    # Runtime
    threads: int = 4
    seed: int = 0
    log_level: str = "INFO"

    # Simulator
    sim_chunk_pixels: int = 1024
    sim_max_subdivisions: int = 12
    imu_rate: float = 1000.0

    # EPM validity
    epm_floor_fraction: float = 1e-3  # of max(A)
    epm_saturation_fraction: float = 0.01  # of the digital range
    aps_max_count: float = 65535.0

    # Benchmark
    prob_clamp: float = 1e-6

    # Calibration search
    eps_search_min: float = 0.05
    eps_search_max: float = 1.0
    offset_search_fraction: float = 0.5  # of max(A), both sides of zero
    search_rel_tol: float = 1e-3
    prescan_points: int = 8

    # Baseline denoisers
    baseline_dt_us: int = 5000
    baseline_radius: int = 1

    # Learned denoiser
    feature_m: int = 25
    feature_k: int = 2
    feature_t_max_us: int = 5_000_000
    classify_batch_size: int = 4096


# Global configuration instance
bench_config = BenchConfig()
