import json

import numpy as np
import pytest

from learnphy import experiments as ex
from learnphy.autodiff import ConfigurationError
from learnphy.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, run
from learnphy.config import ExperimentConfig
from learnphy.graphs import CheckpointError
from learnphy.metrics import CerCurve, CerPoint, MetricsLog
from learnphy.plotting import render_run
from learnphy.protocol import DivergenceError


def small(**over):
    items = ["training.max_epochs=3", "link.seeds=[0]", "experiment.trials=200", "output.plots=false"]
    items += [f"{k.replace('__', '.')}={v}" for k, v in over.items()]
    return ExperimentConfig.preset("rf_flat").with_overrides(items)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """A converged rf link saved as a checkpoint (shared by the slower tests)."""
    out = tmp_path_factory.mktemp("trained")
    ex.cmd_train(small(training__max_epochs=120), out)
    return out


class TestTrain:
    def test_artifact_layout(self, tmp_path):
        art = ex.cmd_train(small(output__plots="true", output__transcript="true"), tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["status"] == "ok" and m["seeds"] == [0] and m["package_version"]
        for name in m["files"]:
            assert (tmp_path / name).is_file(), name
        assert {"config.toml", "convergence_seed0.csv", "checkpoint_seed0.json", "convergence.svg", "transcript_seed0.jsonl"} <= set(m["files"])
        assert len((tmp_path / "transcript_seed0.jsonl").read_text().splitlines()) == 3 * 4 * 256
        assert art.results["samples_per_epoch"] == 2048 and art.results["bits_per_sample"] == 1.0
        assert len(MetricsLog.read_csv(tmp_path / "convergence_seed0.csv")) == 6

    def test_zero_epochs(self, tmp_path):
        art = ex.cmd_train(small(training__max_epochs=0, output__plots="true"), tmp_path)
        assert len(MetricsLog.read_csv(tmp_path / "convergence_seed0.csv")) == 0
        assert art.results["per_seed"]["0"]["epochs_run"] == 0
        assert (tmp_path / "checkpoint_seed0.json").exists()

    def test_bitwise_reproducible(self, tmp_path):
        cfg = small(link__seeds="[0, 1]")
        ex.cmd_train(cfg, tmp_path / "a")
        ex.cmd_train(cfg, tmp_path / "b", workers=2)
        for s in (0, 1):
            name = f"convergence_seed{s}.csv"
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_snapshot_reruns_identically(self, tmp_path):
        ex.cmd_train(small(), tmp_path / "a")
        again = ExperimentConfig.load(tmp_path / "a" / "config.toml")
        ex.cmd_train(again, tmp_path / "b")
        assert (tmp_path / "a" / "convergence_seed0.csv").read_bytes() == (tmp_path / "b" / "convergence_seed0.csv").read_bytes()

    def test_resume_matches_straight_run(self, tmp_path):
        ex.cmd_train(small(training__max_epochs=4), tmp_path / "whole")
        ex.cmd_train(small(training__max_epochs=2), tmp_path / "split")
        ex.cmd_train(small(training__max_epochs=4), tmp_path / "split", resume=True)
        for name in ("convergence_seed0.csv",):
            assert (tmp_path / "whole" / name).read_bytes() == (tmp_path / "split" / name).read_bytes()

    def test_divergence_keeps_partial_artifacts(self, tmp_path, monkeypatch):
        def exploding(cfg, seed=None, session=None, tap=False, on_epoch=None):
            from learnphy.protocol import run_epoch

            for _ in range(2):
                ep = session.epoch
                on_epoch(ep, run_epoch(session))
            raise DivergenceError("non-finite loss")

        monkeypatch.setattr(ex, "train_link", exploding)
        with pytest.raises(DivergenceError):
            ex.cmd_train(small(), tmp_path)
        assert len(MetricsLog.read_csv(tmp_path / "convergence_seed0.csv")) == 4
        assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "diverged"


class TestCerSweep:
    def test_train_point_consistency_and_shape(self, tmp_path):
        cfg = small(training__max_epochs=100, experiment__trials=4000, experiment__test_snr_db="[0, 10, 20]")
        art = ex.cmd_cer_sweep(cfg, tmp_path)
        seed0 = art.results["per_seed"]["0"]
        assert seed0["train_point_gap"] < 0.05
        assert seed0["monotone_within_2se"]
        curve = CerCurve.read_csv(tmp_path / "cer.csv")
        assert [p.trials for p in curve.points] == [8000] * 3

    def test_from_checkpoint(self, tmp_path, trained_run):
        cfg = small(experiment__train_inline="false", experiment__checkpoint=json.dumps(str(trained_run / "checkpoint_seed0.json")), experiment__test_snr_db="[20]")
        art = ex.cmd_cer_sweep(cfg, tmp_path)
        assert art.results["per_seed"]["0"]["cer"]["20"] < 0.05

    def test_missing_checkpoint(self, tmp_path):
        cfg = small(experiment__train_inline="false", experiment__checkpoint='"nowhere.json"')
        with pytest.raises(FileNotFoundError):
            ex.cmd_cer_sweep(cfg, tmp_path)

    def test_zero_trials_rejected(self):
        with pytest.raises(ConfigurationError):
            small(experiment__trials=0)

    def test_checks_flag_violations(self):
        curve = CerCurve([CerPoint(0, 0.1, 10_000), CerPoint(5, 0.2, 10_000)])
        assert not ex.cer_checks(curve, 10.0, None)["monotone_within_2se"]


class TestStudy:
    def test_small_grid_rejected(self):
        with pytest.raises(ConfigurationError):
            small(experiment__kind='"train_snr_sweep"', experiment__train_snr_grid="[10]")

    def test_runs_and_reports(self, tmp_path):
        cfg = small(
            experiment__kind='"train_snr_sweep"',
            experiment__train_snr_grid="[0, 10, 20]",
            experiment__study_test_snr_db="[10]",
            output__plots="true",
        )
        art = ex.cmd_train_snr_study(cfg, tmp_path, workers=3)
        assert set(art.results["convexity"]["10"]["median_cer_by_train_snr"]) == {"0", "10", "20"}
        assert (tmp_path / "train_snr_cer.svg").exists() and (tmp_path / "train_snr_convergence.svg").exists()
        assert len((tmp_path / "study_traces.csv").read_text().splitlines()) == 1 + 3 * 3

    def test_convergence_kind_skips_cer(self, tmp_path):
        cfg = small(experiment__kind='"train_snr_convergence"', experiment__train_snr_grid="[0, 10, 20]")
        art = ex.cmd_train_snr_study(cfg, tmp_path)
        assert not (tmp_path / "study_cer.csv").exists()
        assert art.results["convexity"] == {}


class TestJammer:
    def jam(self, tmp_path, trained_run, power, retrain):
        cfg = small(
            experiment__train_inline="false",
            experiment__checkpoint=json.dumps(str(trained_run / "checkpoint_seed0.json")),
            experiment__jammer_power=power,
            experiment__retrain_epochs=retrain,
            experiment__trials=4000,
        )
        return ex.cmd_jammer_retrain(cfg, tmp_path).results["per_seed"][0]

    def test_null_jammer_changes_nothing(self, tmp_path, trained_run):
        r = self.jam(tmp_path, trained_run, 0.0, 0)
        se = np.sqrt(r["cer_clean"] * (1 - r["cer_clean"]) / 8000)
        assert abs(r["cer_jammed"] - r["cer_clean"]) < 4 * se + 1e-12

    def test_jammer_hurts_then_retraining_recovers(self, tmp_path, trained_run):
        r = self.jam(tmp_path, trained_run, 2.0, 120)
        assert r["cer_jammed"] > 10 * r["cer_clean"]
        assert r["recovery_epochs"] is not None
        assert r["cer_after_retrain"] < r["cer_jammed"] / 5


class TestPlot:
    def test_byte_identical(self, trained_run):
        render_run(trained_run)
        first = (trained_run / "convergence.svg").read_bytes()
        render_run(trained_run)
        assert (trained_run / "convergence.svg").read_bytes() == first
        assert len(first) > 1000

    def test_single_point_cer(self, tmp_path):
        CerCurve([CerPoint(10.0, 0.01, 1000)]).write_csv(tmp_path / "cer.csv")
        assert render_run(tmp_path) == ["cer.svg"]
        assert b"<svg" in (tmp_path / "cer.svg").read_bytes()

    def test_missing_inputs(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            render_run(tmp_path)


class TestVerify:
    def test_fresh_checkpoint(self, trained_run):
        assert ex.cmd_checkpoint_roundtrip(trained_run / "checkpoint_seed0.json")["bitwise_equal"]

    def test_truncated(self, tmp_path, trained_run):
        doc = json.loads((trained_run / "checkpoint_seed0.json").read_text())
        doc["nets"]["B.decoder"]["layers"] = doc["nets"]["B.decoder"]["layers"][:3]
        (tmp_path / "ck.json").write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match=r"B\.decoder: missing layer 'fc2\.bias'"):
            ex.cmd_checkpoint_roundtrip(tmp_path / "ck.json")


class TestCli:
    def test_train_ok(self, tmp_path, capsys):
        code = run(["train", "--config", "rf_flat", "--seed", "2", "--max-epochs", "1", "--out", str(tmp_path), "--deterministic"])
        assert code == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["results"]["per_seed"]["2"]["epochs_run"] == 1
        assert (tmp_path / "convergence.svg").exists()

    def test_config_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[training]\nlr = 1\n")
        assert run(["train", "--config", str(bad)]) == EXIT_CONFIG
        assert f"{bad}:2" in capsys.readouterr().err
        assert run(["train", "--config", "rf_flat", "--override", "nope.x=1"]) == EXIT_CONFIG
        assert run(["train", "--config", "missing-file.toml"]) == EXIT_CONFIG

    def test_divergence_exit(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise DivergenceError("nan")

        monkeypatch.setattr(ex, "train_link", boom)
        assert run(["train", "--config", "rf_flat", "--seed", "0", "--out", str(tmp_path)]) == EXIT_DIVERGED

    def test_io_exits(self, tmp_path, capsys):
        assert run(["plot", str(tmp_path / "none")]) == EXIT_IO
        bad = tmp_path / "ck.json"
        bad.write_text('{"version": 99}')
        assert run(["verify-checkpoint", str(bad)]) == EXIT_IO
        assert "unsupported checkpoint version" in capsys.readouterr().err
        cfg = ["cer-sweep", "--config", "rf_flat", "--out", str(tmp_path / "c"), "--override", "experiment.train_inline=false"]
        assert run(cfg) == EXIT_IO

    def test_verify_ok(self, trained_run, capsys):
        assert run(["verify-checkpoint", str(trained_run / "checkpoint_seed0.json")]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["bitwise_equal"]

    def test_presets_listed(self, capsys):
        assert run(["presets"]) == EXIT_OK
        assert "plc_selective" in capsys.readouterr().out
