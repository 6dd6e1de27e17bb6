import json

import pytest
from click.testing import CliRunner

from clickseg.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def run_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


class TestGenData:
    def test_writes_manifest_and_run_manifest(self, runner, tmp_path):
        out = tmp_path / "data"
        run_ok(runner, ["gen-data", "--out", str(out), "--n-cases", "3",
                        "--size", "24", "--spacing", "4.0", "--seed", "1"])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["n_cases"] == 3
        run_manifest = json.loads((out / "run_manifest.json").read_text())
        assert run_manifest["command"] == "gen-data"
        assert run_manifest["params"]["seed"] == 1
        assert run_manifest["config_hash"]

    def test_reruns_reproduce_hashes(self, runner, tmp_path):
        import time

        args = ["gen-data", "--n-cases", "2", "--size", "24",
                "--spacing", "4.0", "--seed", "9"]
        run_ok(runner, args + ["--out", str(tmp_path / "a")])
        time.sleep(1.1)  # force a gzip-mtime second boundary between runs
        run_ok(runner, args + ["--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "case_0000" / "pet.nii.gz").read_bytes()
        b = (tmp_path / "b" / "case_0000" / "pet.nii.gz").read_bytes()
        assert a == b

    def test_config_file_with_flag_override(self, runner, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"output": str(tmp_path / "from_cfg"),
                                   "n_cases": 2, "size": 24,
                                   "spacing": 4.0, "seed": 3}))
        run_ok(runner, ["gen-data", "--config", str(cfg),
                        "--n-cases", "4"])  # flag overrides config
        manifest = json.loads(
            (tmp_path / "from_cfg" / "manifest.json").read_text())
        assert manifest["n_cases"] == 4
        assert manifest["master_seed"] == 3


@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    runner = CliRunner()
    out = tmp_path_factory.mktemp("cli_data")
    result = runner.invoke(main, [
        "gen-data", "--out", str(out), "--n-cases", "4", "--size", "24",
        "--spacing", "4.0", "--seed", "2", "--negative-fraction", "0.0"],
        catch_exceptions=False)
    assert result.exit_code == 0
    return out


@pytest.fixture(scope="module")
def cli_trained(cli_data, tmp_path_factory):
    runner = CliRunner()
    out = tmp_path_factory.mktemp("cli_train")
    result = runner.invoke(main, [
        "train", "--data", str(cli_data), "--out", str(out),
        "--epochs", "1", "--steps-per-epoch", "2", "--batch-size", "1",
        "--features", "8,16", "--patch", "16", "--seed", "0",
        "--val-fraction", "0.25", "--model-id", "desk"],
        catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return out


class TestTrain:
    def test_outputs_exist(self, cli_trained):
        assert (cli_trained / "checkpoint_final.npz").exists()
        assert (cli_trained / "loss_curve.csv").exists()
        registry = json.loads((cli_trained / "registry.json").read_text())
        assert "desk" in registry["models"]
        run_manifest = json.loads(
            (cli_trained / "run_manifest.json").read_text())
        assert run_manifest["params"]["network"]["patch_size"] == [16, 16, 16]
        assert run_manifest["input_hashes"]

    def test_finetune_lr_flag(self, runner, cli_data, cli_trained, tmp_path):
        out = tmp_path / "finetune"
        result = run_ok(runner, [
            "train", "--data", str(cli_data), "--out", str(out),
            "--epochs", "1", "--steps-per-epoch", "1", "--batch-size", "1",
            "--features", "8,16", "--patch", "16", "--lr", "2e-4",
            "--pretrained", str(cli_trained / "checkpoint_final.npz"),
            "--curriculum", "V1_SPARSE"])
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["params"]["lr"] == pytest.approx(2e-4)
        assert manifest["params"]["curriculum"] == "V1_SPARSE"


class TestSweep:
    def test_sweep_writes_csv(self, runner, cli_data, cli_trained, tmp_path):
        out = tmp_path / "sweep"
        run_ok(runner, [
            "sweep", "--cases", str(cli_data),
            "--registry", str(cli_trained / "registry.json"),
            "--model", "desk", "--out", str(out),
            "--val-fraction", "0.5", "--seed", "0"])
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "k,dice,fpv_ml,fnv_ml,n_cases,model_id"
        assert len(lines) == 12
        assert all(line.endswith("desk") for line in lines[1:])


class TestPredict:
    def test_predict_writes_mask_and_provenance(self, runner, cli_data,
                                                cli_trained, tmp_path):
        out = tmp_path / "pred"
        run_ok(runner, [
            "predict", "--cases", str(cli_data), "--case-id", "case_0000",
            "--registry", str(cli_trained / "registry.json"),
            "--model", "desk", "--k", "2", "--out", str(out)])
        assert (out / "case_0000_mask.nii.gz").exists()
        prov = json.loads((out / "case_0000_provenance.json").read_text())
        assert prov["k_clicks"] == 2
        assert prov["model_id"] == "desk"

    def test_predict_with_clicks_file_honors_k(self, runner, cli_data,
                                               cli_trained, tmp_path):
        clicks = [{"pos": [12, 12, 12], "kind": "FG", "ordinal": 0},
                  {"pos": [4, 4, 4], "kind": "FG", "ordinal": 1},
                  {"pos": [2, 2, 2], "kind": "BG", "ordinal": 0}]
        clicks_path = tmp_path / "clicks.json"
        clicks_path.write_text(json.dumps(clicks))
        out = tmp_path / "pred2"
        run_ok(runner, [
            "predict", "--cases", str(cli_data), "--case-id", "case_0001",
            "--registry", str(cli_trained / "registry.json"), "--model",
            "desk", "--clicks", str(clicks_path), "--k", "1", "--out",
            str(out)])
        prov = json.loads((out / "case_0001_provenance.json").read_text())
        assert prov["n_fg_clicks"] == 1  # take_first_k applied
        assert prov["n_bg_clicks"] == 1


class TestHelp:
    def test_commands_listed(self, runner):
        result = run_ok(runner, ["--help"])
        for cmd in ("gen-data", "train", "train-classifier", "sweep",
                    "predict", "serve"):
            assert cmd in result.output

    def test_unknown_command_fails(self, runner):
        result = runner.invoke(main, ["frobnicate"])
        assert result.exit_code != 0
