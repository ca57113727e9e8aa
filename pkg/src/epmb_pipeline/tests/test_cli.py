"""Tests for the epmbench command line."""

import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from epmb_core.errors import ConfigError, MissingCalibrationError
from epmb_core.io.events import read_events
from epmb_core.io.epm import read_epm
from epmb_core.io.manifest import read_manifest, read_provenance
from epmb_pipeline import commands
from epmb_pipeline.calib import read_calibration
from epmb_pipeline.commands import COMMANDS, RunConfig, load_json_config
from epmb_pipeline.denoise.model import read_model
from epmb_pipeline.denoise.training import TrainingConfig
from epmb_pipeline.main import build_arg_parser, main, run_config
from epmb_pipeline.report import parse_chart_bars, read_rows_csv


@pytest.fixture
def dataset(tiny_dataset: Path, temp_dir: Path) -> Path:
    """A private copy of the tiny dataset; returns its manifest path."""
    directory = temp_dir / "tiny"
    shutil.copytree(tiny_dataset.parent, directory)
    return directory / tiny_dataset.name


def stdout_json(capsys: pytest.CaptureFixture[str]) -> dict:
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


@pytest.mark.unit
class TestArguments:
    """Test argument parsing and validation."""

    def test_subcommand_required(self):
        with pytest.raises(SystemExit) as e:
            build_arg_parser().parse_args([])
        assert e.value.code == 2

    def test_ba_options_exclusive(self):
        with pytest.raises(SystemExit) as e:
            build_arg_parser().parse_args(
                ["inject-noise", "--manifest", "m.json", "--ba-percent", "10", "--ba-rate", "0.5"]
            )
        assert e.value.code == 2

    def test_run_config(self):
        args = build_arg_parser().parse_args(["bench", "--manifest", "m.json", "--methods", "baf", "ie", "--seed", "3"])
        config = run_config(args)
        assert config.command == "bench"
        assert config.manifest == Path("m.json")
        assert config.parameters["methods"] == ["baf", "ie"]
        assert config.effective_seed == 3

    def test_zero_threads(self):
        args = build_arg_parser().parse_args(["label", "--manifest", "m.json", "--threads", "0"])
        with pytest.raises(ConfigError, match="threads"):
            run_config(args)

    def test_training_objective(self):
        argv = ["train", "--manifest", "a.json", "--manifest", "b.json", "--objective", "soft-l1"]
        args = build_arg_parser().parse_args(argv)
        config = run_config(args)
        assert config.method == "soft-l1"
        assert config.parameters["manifests"] == [Path("a.json"), Path("b.json")]

    def test_json_config(self, temp_dir):
        path = temp_dir / "training.json"
        path.write_text('{"epochs": 2, "hidden": [8]}', encoding="utf-8")
        assert load_json_config(path, TrainingConfig).hidden == (8,)
        path.write_text('{"epochs": 0}', encoding="utf-8")
        with pytest.raises(ConfigError, match="epochs"):
            load_json_config(path, TrainingConfig)
        with pytest.raises(ConfigError, match="not found"):
            load_json_config(temp_dir / "missing.json", TrainingConfig)

    def test_missing_manifest(self):
        with pytest.raises(ConfigError):
            RunConfig(command="label").require_manifest()


@pytest.mark.unit
class TestMain:
    """Test exit codes and error reporting."""

    def test_success(self, mocker, temp_dir):
        handler = mocker.Mock(return_value=[temp_dir / "out.txt"])
        mocker.patch.dict(COMMANDS, {"report": handler})
        assert main(["report", "a.csv", "--out", str(temp_dir)]) == 0
        config = handler.call_args.args[0]
        assert config.parameters["inputs"] == [Path("a.csv")]

    def test_domain_error(self, mocker, capsys):
        handler = mocker.Mock(side_effect=MissingCalibrationError("Dataset tiny\nis not calibrated"))
        mocker.patch.dict(COMMANDS, {"report": handler})
        assert main(["report", "a.csv"]) == 1
        last = capsys.readouterr().err.splitlines()[-1]
        assert last == "error: MissingCalibrationError: Dataset tiny is not calibrated"

    def test_interrupt(self, mocker):
        mocker.patch.dict(COMMANDS, {"report": mocker.Mock(side_effect=KeyboardInterrupt)})
        assert main(["report", "a.csv"]) == 130

    def test_invalid_option(self, capsys):
        assert main(["report", "a.csv", "--threads", "0"]) == 1
        assert "ConfigError" in capsys.readouterr().err


@pytest.mark.integration
class TestPipeline:
    """Run the subcommands against a simulated dataset on disk."""

    def test_simulate(self, tiny_config, temp_dir):
        config_path = temp_dir / "scene.json"
        config_path.write_text(tiny_config.model_dump_json(), encoding="utf-8")
        out = temp_dir / "sim"
        assert main(["simulate", "--config", str(config_path), "--seed", "5", "--out", str(out)]) == 0
        manifest = read_manifest(out / "manifest.json")
        assert manifest.name == "tiny"
        assert manifest.scene["noise"]["rng_seed"] == 5
        assert len(manifest.aps_frames) == 5
        assert (out / manifest.events).is_file()

    def test_label_with_ground_truth(self, dataset, temp_dir):
        out = temp_dir / "labels"
        argv = ["label", "--manifest", str(dataset), "--ground-truth", "--no-blur-correction", "--out", str(out)]
        assert main(argv) == 0
        paths = sorted((out / "epm").glob("*.epm"))
        assert len(paths) == 5
        frame = read_epm(paths[0])
        valid = frame.values[frame.valid.values]
        assert ((valid >= 0) & (valid <= 1)).all()

    def test_label_needs_calibration(self, dataset, temp_dir, capsys):
        assert main(["label", "--manifest", str(dataset), "--out", str(temp_dir / "labels")]) == 1
        assert "MissingCalibrationError" in capsys.readouterr().err

    def test_bench(self, dataset, temp_dir, capsys):
        out = temp_dir / "bench"
        argv = [
            "bench", "--manifest", str(dataset), "--methods", "baf", "ie",
            "--ground-truth", "--no-blur-correction", "--out", str(out),
        ]  # fmt: skip
        assert main(argv) == 0
        scores = stdout_json(capsys)
        assert list(scores) == ["e_opt", "raw", "baf", "ie"]
        assert scores["e_opt"] == 0.0
        assert scores["raw"] > 0
        rows = read_rows_csv(out / "bench.csv")
        assert [row.method for row in rows] == list(scores)
        bars = {method: value for method, _, value in parse_chart_bars(out / "bench.svg")}
        assert bars == pytest.approx(scores)
        assert len(json.loads((out / "bench.json").read_text(encoding="utf-8"))) == 4

    def test_bench_sweep(self, dataset, temp_dir):
        out = temp_dir / "bench"
        argv = [
            "bench", "--manifest", str(dataset), "--methods", "baf", "--sweep", "0", "100",
            "--ground-truth", "--no-blur-correction", "--out", str(out),
        ]  # fmt: skip
        assert main(argv) == 0
        lines = (out / "sweep.csv").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 1 + 2 * 2
        assert {group for _, group, _ in parse_chart_bars(out / "sweep.svg")} == {"0", "100"}

    def test_inject_noise(self, dataset, temp_dir):
        out = temp_dir / "noisy"
        assert main(["inject-noise", "--manifest", str(dataset), "--ba-percent", "50", "--out", str(out)]) == 0
        manifest = read_manifest(out / "manifest.json")
        stream = read_events(out / manifest.events)
        tags = read_provenance(out / "manifest.json", manifest, len(stream))
        assert tags is not None
        signal, noise = int(tags.sum()), int((~tags).sum())
        assert 0.3 * signal < noise < 0.7 * signal
        assert np.all(np.diff(stream.t) >= 0)
        assert not (out / manifest.calibration).exists()

    def test_denoise(self, dataset, temp_dir):
        out = temp_dir / "denoised"
        assert main(["denoise", "--manifest", str(dataset), "--method", "ie+te", "--out", str(out)]) == 0
        kept = read_events(out / "denoised_ie_te.evt")
        manifest = read_manifest(dataset)
        assert len(kept) <= len(read_events(dataset.parent / manifest.events))

    @pytest.mark.parametrize(
        ("option", "value", "message"),
        [("--radius", "0", "radius must be at least 1"), ("--dt-us", "-1", "dt_us must be non-negative")],
    )
    def test_denoise_rejects_bad_parameters(self, dataset, temp_dir, capsys, option, value, message):
        argv = ["denoise", "--manifest", str(dataset), "--method", "baf", option, value, "--out", str(temp_dir)]
        assert main(argv) == 1
        err = capsys.readouterr().err
        assert "Traceback" not in err
        errors = [line for line in err.splitlines() if line.startswith("error:")]
        assert errors == [f"error: ConfigError: {message}, got {value}"]

    def test_model_method_needs_model(self, dataset, temp_dir, capsys):
        assert main(["denoise", "--manifest", str(dataset), "--method", "model", "--out", str(temp_dir)]) == 1
        assert "--model" in capsys.readouterr().err

    def test_report(self, dataset, temp_dir, capsys):
        tables = []
        for name in ("a", "b"):
            out = temp_dir / name
            argv = ["bench", "--manifest", str(dataset), "--ground-truth", "--no-blur-correction", "--out", str(out)]
            assert main(argv) == 0
            tables.append(str(out / "bench.csv"))
        capsys.readouterr()
        assert main(["report", *tables, "--out", str(temp_dir / "report")]) == 0
        means = stdout_json(capsys)
        assert means["e_opt"] == 0.0
        assert len(read_rows_csv(temp_dir / "report" / "report.csv")) == 4

    def test_report_rejects_bad_table(self, temp_dir, capsys):
        table = temp_dir / "bench.csv"
        table.write_text("scene,score\n", encoding="utf-8")
        assert main(["report", str(table), "--out", str(temp_dir / "report")]) == 1
        assert "CsvFormatError" in capsys.readouterr().err


@pytest.mark.slow
class TestSlowPipeline:
    """Calibration and training through the command line."""

    def test_calibrate_reuses_cache(self, dataset, temp_dir, capsys, mocker):
        spy = mocker.spy(commands, "calibrate")
        argv = ["calibrate", "--manifest", str(dataset), "--no-blur-correction", "--out", str(temp_dir / "calib")]
        assert main(argv) == 0
        first = stdout_json(capsys)
        assert main(argv) == 0
        assert stdout_json(capsys) == first
        assert spy.call_count == 1
        result = read_calibration(temp_dir / "calib" / "calibration.json")
        assert result.eps_pos > 0 and result.eps_neg > 0
        assert (dataset.parent / "calibration.json").is_file()

        labels = temp_dir / "labels"
        assert main(["label", "--manifest", str(dataset), "--no-blur-correction", "--out", str(labels)]) == 0
        assert len(list((labels / "epm").glob("*.epm"))) == 5

    def test_train_then_denoise(self, dataset, temp_dir):
        training = temp_dir / "training.json"
        training.write_text('{"epochs": 1, "batch_size": 256, "hidden": [8]}', encoding="utf-8")
        out = temp_dir / "trained"
        argv = [
            "train", "--manifest", str(dataset), "--training-config", str(training),
            "--ground-truth", "--no-blur-correction", "--seed", "4", "--out", str(out),
        ]  # fmt: skip
        assert main(argv) == 0
        model = read_model(out / "model.ednm")
        assert model.epochs == 1
        assert json.loads((out / "training.json").read_text(encoding="utf-8"))["seed"] == 4

        denoised = temp_dir / "denoised"
        argv = ["denoise", "--manifest", str(dataset), "--method", "model", "--model", str(out / "model.ednm")]
        assert main([*argv, "--out", str(denoised)]) == 0
        assert (denoised / "denoised_model.evt").is_file()
