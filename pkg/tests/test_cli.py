"""Command-line behaviour: flags, exit codes, artifacts, resumption."""

import itertools
import json

import numpy as np
import pytest

from lamopt import cli, dataset as ds, export, nn
from lamopt.export import read_manifest, read_pgm


def synthetic_dataset(path, nx=4, ny=3):
    """Twelve fabricated entries with smooth parameter-dependent fields."""
    rng = np.random.default_rng(17)
    centres = rng.uniform(0, 1, (nx * ny, 2))
    entries = []
    cases = list(itertools.product([0.0, 0.30, 1.0], [0.0, 10.0, 20.0, 30.0]))
    for i, (eta1, eta2) in enumerate(cases):
        unit = np.array([eta1 / 2.3, eta2 / 59.0])
        theta = 1.0 / (1.0 + np.exp(-6.0 * (centres @ unit - 0.3)))
        entries.append(
            ds.DatasetEntry(
                entry_id=i,
                eta1=eta1,
                eta2=eta2,
                boundary="bottom" if eta1 <= 0.6 else "right",
                compliance=0.5 + 0.01 * i,
                volume=0.4,
                n_iterations=30 + i,
                theta=theta,
            )
        )
    ds.write_dataset(path, ds.Dataset(nx=nx, ny=ny, entries=entries))
    return path


@pytest.fixture()
def synth(tmp_path):
    return synthetic_dataset(tmp_path / "synth.lds")


def train_tiny(tmp_path, synth, architecture="ffd", extra=(), name=None):
    model_path = tmp_path / (name or f"{architecture}.nn")
    code = cli.main(
        [
            "train",
            "--dataset",
            str(synth),
            "--out",
            str(model_path),
            "--architecture",
            architecture,
            "--epochs",
            "40",
            "--seed",
            "5",
            *extra,
        ]
    )
    assert code == 0
    return model_path


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    # strides picked so one coarse-mesh case orbits without converging,
    # exercising the failure-recording path
    root = tmp_path_factory.mktemp("gen")
    out = root / "sweep.lds"
    code = cli.main(
        [
            "generate-dataset",
            "--out",
            str(out),
            "--nx",
            "16",
            "--ny",
            "8",
            "--positions-stride",
            "20",
            "--angles-stride",
            "25",
            "--jobs",
            "2",
        ]
    )
    return code, out


class TestGenerate:
    def test_exit_and_contents(self, generated):
        code, out = generated
        assert code == 0
        data = ds.read_dataset(out)
        assert (data.nx, data.ny) == (16, 8)
        assert len(data.entries) == 8

    def test_failure_recorded_not_fatal(self, generated):
        _, out = generated
        failures = out.with_suffix(".failures.csv").read_text().splitlines()
        assert failures[0] == "entry_id,eta1,eta2,error"
        assert len(failures) == 2
        assert failures[1].startswith("0,0.0,0.0,")
        manifest = read_manifest(out.with_suffix(".manifest.json"))
        assert manifest["config"]["n_failures"] == 1
        assert manifest["config"]["failed_ids"] == [0]
        assert set(manifest["artifacts"]) == {"dataset", "manifest_csv", "failures"}

    def test_manifest_csv_rows(self, generated):
        _, out = generated
        lines = out.with_suffix(".csv").read_text().splitlines()
        assert len(lines) == 9

    def test_ids_are_full_grid_canonical(self, generated):
        _, out = generated
        ids = sorted(ds.read_dataset(out).ids())
        # positions 0, 20, 40 and angles 0, 25, 50 on the 45 x 60 grid,
        # minus the failed corner case
        expected = sorted(
            p * 60 + a for p in (0, 20, 40) for a in (0, 25, 50)
        )
        expected.remove(0)
        assert ids == expected

    def test_existing_without_resume_is_usage_error(self, generated):
        _, out = generated
        code = cli.main(
            ["generate-dataset", "--out", str(out), "--nx", "16", "--ny", "8"]
        )
        assert code == 1

    def test_resume_mismatched_grid_rejected(self, generated):
        _, out = generated
        code = cli.main(
            [
                "generate-dataset",
                "--out",
                str(out),
                "--nx",
                "8",
                "--ny",
                "4",
                "--resume",
            ]
        )
        assert code == 1

    def test_resume_skips_stored_entries(self, generated, capsys):
        _, out = generated
        before = out.read_bytes()
        code = cli.main(
            [
                "generate-dataset",
                "--out",
                str(out),
                "--nx",
                "16",
                "--ny",
                "8",
                "--positions-stride",
                "20",
                "--angles-stride",
                "25",
                "--resume",
                "--max-iterations",
                "40",
            ]
        )
        assert code == 0
        assert "8 already stored, 1 to run" in capsys.readouterr().out
        # the lone pending case fails again, so the payload is unchanged
        assert out.read_bytes() == before


class TestTrain:
    def test_writes_model_history_manifest(self, tmp_path, synth):
        model_path = train_tiny(tmp_path, synth)
        model = nn.read_model(model_path)
        assert model.architecture == "ffd"
        assert model.n_cells == 12
        history = model_path.with_suffix(".history.csv").read_text().splitlines()
        assert history[0] == "stage,epoch,train_loss,val_loss"
        assert len(history) == 41
        manifest = read_manifest(model_path.with_suffix(".manifest.json"))
        assert manifest["config"]["n_train"] == 9
        assert manifest["config"]["n_val"] == 1
        assert manifest["config"]["n_test"] == 2

    def test_unknown_architecture_is_usage_error(self, tmp_path, synth):
        code = cli.main(
            [
                "train",
                "--dataset",
                str(synth),
                "--out",
                str(tmp_path / "m.nn"),
                "--architecture",
                "cnn",
            ]
        )
        assert code == 1

    def test_missing_dataset_is_runtime_error(self, tmp_path):
        code = cli.main(
            [
                "train",
                "--dataset",
                str(tmp_path / "absent.lds"),
                "--out",
                str(tmp_path / "m.nn"),
                "--architecture",
                "ffd",
            ]
        )
        assert code == 2

    def test_seed_flag_reproduces(self, tmp_path, synth):
        a = train_tiny(tmp_path, synth, name="a.nn")
        b = train_tiny(tmp_path, synth, name="b.nn")
        assert a.read_bytes() == b.read_bytes()

    def test_environment_seed_matches_flag(self, tmp_path, synth, monkeypatch):
        flagged = train_tiny(tmp_path, synth, name="flagged.nn")
        monkeypatch.setenv("LAMOPT_SEED", "5")
        out = tmp_path / "env.nn"
        code = cli.main(
            [
                "train",
                "--dataset",
                str(synth),
                "--out",
                str(out),
                "--architecture",
                "ffd",
                "--epochs",
                "40",
            ]
        )
        assert code == 0
        assert out.read_bytes() == flagged.read_bytes()

    def test_config_file_supplies_defaults_cli_wins(self, tmp_path, synth):
        config = tmp_path / "run.cfg"
        config.write_text("epochs = 7\nseed = 5  # comment\n")
        first = tmp_path / "from_file.nn"
        code = cli.main(
            [
                "train",
                "--dataset",
                str(synth),
                "--out",
                str(first),
                "--architecture",
                "ffd",
                "--config",
                str(config),
            ]
        )
        assert code == 0
        history = first.with_suffix(".history.csv").read_text().splitlines()
        assert len(history) == 8

        second = tmp_path / "cli_wins.nn"
        code = cli.main(
            [
                "train",
                "--dataset",
                str(synth),
                "--out",
                str(second),
                "--architecture",
                "ffd",
                "--config",
                str(config),
                "--epochs",
                "4",
            ]
        )
        assert code == 0
        history = second.with_suffix(".history.csv").read_text().splitlines()
        assert len(history) == 5

    def test_malformed_config_is_usage_error(self, tmp_path, synth):
        config = tmp_path / "bad.cfg"
        config.write_text("epochs 7\n")
        code = cli.main(
            [
                "train",
                "--dataset",
                str(synth),
                "--out",
                str(tmp_path / "m.nn"),
                "--architecture",
                "ffd",
                "--config",
                str(config),
            ]
        )
        assert code == 1

    def test_extrapolation_split_flags(self, tmp_path, synth):
        model_path = tmp_path / "extra.nn"
        code = cli.main(
            [
                "train",
                "--dataset",
                str(synth),
                "--out",
                str(model_path),
                "--architecture",
                "ffd",
                "--epochs",
                "10",
                "--seed",
                "1",
                "--split-kind",
                "angles",
                "--lower",
                "30",
                "--upper",
                "30",
            ]
        )
        assert code == 0
        manifest = read_manifest(model_path.with_suffix(".manifest.json"))
        assert manifest["config"]["n_test"] == 3
        assert manifest["config"]["n_train"] + manifest["config"]["n_val"] == 9


class TestPredict:
    def test_writes_image_and_csv(self, tmp_path, synth):
        model_path = train_tiny(tmp_path, synth)
        out = tmp_path / "pred.pgm"
        csv_out = tmp_path / "pred.csv"
        code = cli.main(
            [
                "predict",
                "--model",
                str(model_path),
                "--eta1",
                "0.30",
                "--eta2",
                "10",
                "--nx",
                "4",
                "--ny",
                "3",
                "--out",
                str(out),
                "--csv",
                str(csv_out),
            ]
        )
        assert code == 0
        assert read_pgm(out).shape == (3, 4)
        assert len(csv_out.read_text().splitlines()) == 13

    def test_nonpredictive_model_rejected(self, tmp_path, synth):
        model_path = train_tiny(tmp_path, synth, architecture="ae")
        code = cli.main(
            [
                "predict",
                "--model",
                str(model_path),
                "--eta1",
                "0.30",
                "--eta2",
                "10",
                "--nx",
                "4",
                "--ny",
                "3",
                "--out",
                str(tmp_path / "p.pgm"),
            ]
        )
        assert code == 1

    def test_grid_mismatch_rejected(self, tmp_path, synth):
        model_path = train_tiny(tmp_path, synth)
        code = cli.main(
            [
                "predict",
                "--model",
                str(model_path),
                "--eta1",
                "0.30",
                "--eta2",
                "10",
                "--nx",
                "5",
                "--ny",
                "3",
                "--out",
                str(tmp_path / "p.pgm"),
            ]
        )
        assert code == 1

    def test_gap_position_rejected(self, tmp_path, synth):
        model_path = train_tiny(tmp_path, synth)
        code = cli.main(
            [
                "predict",
                "--model",
                str(model_path),
                "--eta1",
                "0.65",
                "--eta2",
                "10",
                "--nx",
                "4",
                "--ny",
                "3",
                "--out",
                str(tmp_path / "p.pgm"),
            ]
        )
        assert code == 1


class TestOptimize:
    def test_high_fidelity_artifacts(self, tmp_path, capsys):
        prefix = tmp_path / "run"
        code = cli.main(
            [
                "optimize",
                "--eta1",
                "0.45",
                "--eta2",
                "55",
                "--nx",
                "16",
                "--ny",
                "8",
                "--algo",
                "hifi",
                "--out-prefix",
                str(prefix),
            ]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "J=" in printed and "iterations=" in printed
        image = read_pgm(tmp_path / "run.pgm")
        assert image.shape == (8, 16)
        stored = ds.read_dataset(tmp_path / "run.lds")
        assert len(stored.entries) == 1
        entry = stored.entries[0]
        assert (entry.eta1, entry.eta2) == (0.45, 55.0)
        assert entry.n_iterations >= 2
        trace_lines = (tmp_path / "run.trace.csv").read_text().splitlines()
        assert trace_lines[0] == "iteration,phase,compliance,volume,seconds"
        assert len(trace_lines) == entry.n_iterations + 1
        manifest = read_manifest(tmp_path / "run.manifest.json")
        assert manifest["config"]["final_volume"] == entry.volume

    def test_surrogate_needs_model(self, tmp_path):
        code = cli.main(
            [
                "optimize",
                "--eta1",
                "0.45",
                "--eta2",
                "55",
                "--nx",
                "16",
                "--ny",
                "8",
                "--algo",
                "surrogate",
                "--out-prefix",
                str(tmp_path / "run"),
            ]
        )
        assert code == 1

    def test_surrogate_rejects_nonpredictive(self, tmp_path):
        model_path = tmp_path / "ae.nn"
        nn.write_model(model_path, nn.build_model("ae", 128, seed=0))
        code = cli.main(
            [
                "optimize",
                "--eta1",
                "0.45",
                "--eta2",
                "55",
                "--nx",
                "16",
                "--ny",
                "8",
                "--algo",
                "surrogate",
                "--seed-model",
                str(model_path),
                "--out-prefix",
                str(tmp_path / "run"),
            ]
        )
        assert code == 1

    def test_surrogate_runs_with_matching_model(self, tmp_path):
        model_path = tmp_path / "ffd.nn"
        nn.write_model(model_path, nn.build_model("ffd", 128, seed=3))
        prefix = tmp_path / "seeded"
        code = cli.main(
            [
                "optimize",
                "--eta1",
                "0.45",
                "--eta2",
                "55",
                "--nx",
                "16",
                "--ny",
                "8",
                "--algo",
                "surrogate",
                "--seed-model",
                str(model_path),
                "--out-prefix",
                str(prefix),
            ]
        )
        assert code == 0
        trace_lines = (tmp_path / "seeded.trace.csv").read_text().splitlines()
        assert trace_lines[1].split(",")[1] == "seed"

    def test_grid_mismatch_rejected(self, tmp_path):
        model_path = tmp_path / "ffd.nn"
        nn.write_model(model_path, nn.build_model("ffd", 12, seed=3))
        code = cli.main(
            [
                "optimize",
                "--eta1",
                "0.45",
                "--eta2",
                "55",
                "--nx",
                "16",
                "--ny",
                "8",
                "--algo",
                "surrogate",
                "--seed-model",
                str(model_path),
                "--out-prefix",
                str(tmp_path / "run"),
            ]
        )
        assert code == 1


class TestEvaluate:
    def test_metrics_table_and_csv(self, tmp_path, synth, capsys):
        ffd_path = train_tiny(tmp_path, synth)
        ae_path = train_tiny(tmp_path, synth, architecture="ae")
        metrics_out = tmp_path / "metrics.csv"
        code = cli.main(
            [
                "evaluate",
                "--dataset",
                str(synth),
                "--models",
                str(ffd_path),
                str(ae_path),
                "--splits",
                "2",
                "--seed",
                "3",
                "--metrics-out",
                str(metrics_out),
            ]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "ffd[ffd]" in printed
        assert "ae[ae]" in printed
        assert "rmse" in printed
        lines = metrics_out.read_text().splitlines()
        assert lines[0] == "model,rmse,rmae,active_latent"
        assert len(lines) == 3

    def test_empty_extrapolation_split_fails(self, tmp_path, synth):
        model_path = train_tiny(tmp_path, synth)
        code = cli.main(
            [
                "evaluate",
                "--dataset",
                str(synth),
                "--models",
                str(model_path),
                "--split-kind",
                "angles",
                "--lower",
                "58",
                "--upper",
                "59",
            ]
        )
        assert code == 2

    def test_missing_model_file_fails(self, tmp_path, synth):
        code = cli.main(
            [
                "evaluate",
                "--dataset",
                str(synth),
                "--models",
                str(tmp_path / "absent.nn"),
            ]
        )
        assert code == 2


class TestExport:
    def test_stored_entry_rendered(self, tmp_path, synth):
        out = tmp_path / "entry.pgm"
        code = cli.main(
            [
                "export",
                "--dataset",
                str(synth),
                "--entry-id",
                "3",
                "--out",
                str(out),
                "--csv",
                str(tmp_path / "entry.csv"),
            ]
        )
        assert code == 0
        data = ds.read_dataset(synth)
        entry = [e for e in data.entries if e.entry_id == 3][0]
        np.testing.assert_array_equal(
            read_pgm(out),
            export.density_to_grey(entry.theta).reshape(3, 4)[::-1],
        )

    def test_threshold_flag_honoured(self, tmp_path):
        path = tmp_path / "low.lds"
        theta = np.full(12, 0.05)
        ds.write_dataset(
            path,
            ds.Dataset(
                nx=4,
                ny=3,
                entries=[
                    ds.DatasetEntry(0, 0.0, 0.0, "bottom", 1.0, 0.05, 5, theta)
                ],
            ),
        )
        out = tmp_path / "low.pgm"
        code = cli.main(
            [
                "export",
                "--dataset",
                str(path),
                "--entry-id",
                "0",
                "--out",
                str(out),
                "--export-threshold",
                "0.1",
            ]
        )
        assert code == 0
        assert np.all(read_pgm(out) == 255)

    def test_unknown_entry_is_usage_error(self, tmp_path, synth):
        code = cli.main(
            [
                "export",
                "--dataset",
                str(synth),
                "--entry-id",
                "99",
                "--out",
                str(tmp_path / "x.pgm"),
            ]
        )
        assert code == 1


class TestParser:
    def test_unknown_subcommand_is_usage_error(self):
        assert cli.main(["compress"]) == 1

    def test_missing_required_flag_is_usage_error(self):
        assert cli.main(["export", "--dataset", "x.lds"]) == 1

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["--help"])
        assert excinfo.value.code == 0
