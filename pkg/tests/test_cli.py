import json
from pathlib import Path

import pytest

from radsmith.cli.router import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from radsmith.core import config
from radsmith.services.imagecore import load_image


def _run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


@pytest.fixture
def dataset(tmp_path, hr_dir, tiny_config_file, capsys):
    out = tmp_path / "data"
    code, _ = _run(capsys, "synth", str(hr_dir), str(out), "--config", str(tiny_config_file),
                   "--seed", "7", "--profile", "mini", "-q")
    assert code == EXIT_OK
    return out


class TestParser:
    def test_version(self, capsys):
        code, out = _run(capsys, "--version")
        assert code == EXIT_OK
        assert out.startswith("radsmith ")

    def test_missing_subcommand(self, capsys):
        assert _run(capsys)[0] == EXIT_USAGE

    def test_unknown_profile(self, capsys, tmp_path):
        assert _run(capsys, "fixture", str(tmp_path), "--profile", "nope")[0] == EXIT_USAGE


class TestDataCommands:
    def test_fixture(self, tmp_path, capsys):
        code, out = _run(capsys, "fixture", str(tmp_path / "fx"), "--count", "2", "--size", "32", "-q")
        assert code == EXIT_OK
        assert json.loads(out)["count"] == 2
        assert len(list((tmp_path / "fx").glob("*.png"))) == 2

    def test_fixture_defaults_to_data_dir(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(config, "DATA_DIR", tmp_path / "data")
        code, out = _run(capsys, "fixture", "--count", "1", "--size", "16", "-q")
        assert code == EXIT_OK
        assert json.loads(out)["out_dir"] == (tmp_path / "data" / "fixture").as_posix()
        assert len(list((tmp_path / "data" / "fixture").glob("*.png"))) == 1

    def test_synth_then_verify(self, dataset, capsys):
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert manifest["profile"] == "mini"
        assert manifest["config"]["scale"] == 2
        assert manifest["master_seed"] == 7
        code, out = _run(capsys, "verify", str(dataset), "-q")
        assert code == EXIT_OK
        assert json.loads(out)["checked"] == 4

    def test_verify_reports_tampering(self, dataset, capsys):
        victim = next((dataset / "LRnoisy").glob("*.png"))
        victim.write_bytes((dataset / "LRclean" / victim.name).read_bytes())
        code, out = _run(capsys, "verify", str(dataset), "-q")
        assert code == EXIT_FAILURE
        assert json.loads(out)["mismatches"][0]["file"] == f"LRnoisy/{victim.name}"

    def test_verify_missing_manifest(self, tmp_path, capsys):
        assert _run(capsys, "verify", str(tmp_path), "-q")[0] == EXIT_FAILURE

    def test_degrade(self, hr_dir, tmp_path, tiny_config_file, capsys):
        noisy, clean = tmp_path / "noisy.png", tmp_path / "clean.png"
        code, out = _run(capsys, "degrade", str(hr_dir / "fixture_0000.png"), "--config", str(tiny_config_file),
                         "--seed", "5", "--out-noisy", str(noisy), "--out-clean", str(clean), "-q")
        assert code == EXIT_OK
        params = json.loads(out)
        assert params["scale"] == 2 and params["seed"] == 5
        assert load_image(noisy).data.shape == load_image(clean).data.shape == (1, 16, 16)

    def test_metrics_identical_files(self, hr_dir, capsys):
        path = str(hr_dir / "fixture_0001.png")
        code, out = _run(capsys, "metrics", path, path, "-q")
        assert code == EXIT_OK
        report = json.loads(out)
        assert report["mean_psnr_db"] == "inf"
        assert report["infinite_psnr_count"] == 1

    def test_metrics_directories(self, dataset, capsys):
        code, out = _run(capsys, "metrics", str(dataset / "LRnoisy"), str(dataset / "LRclean"), "--crop", "2", "-q")
        assert code == EXIT_OK
        report = json.loads(out)
        assert len(report["per_image"]) == 4
        assert report["crop_border"] == 2

    def test_metrics_mixed_arguments(self, dataset, capsys):
        image = next((dataset / "HR").glob("*.png"))
        assert _run(capsys, "metrics", str(image), str(dataset / "HR"), "-q")[0] == EXIT_USAGE


class TestGradcheck:
    def test_suite_passes(self, capsys):
        code, out = _run(capsys, "gradcheck", "-q")
        assert code == EXIT_OK
        assert "FAILED" not in out
        assert "conv2d" in out


class TestConfiguration:
    def test_invalid_values_are_usage_errors(self, tmp_path, hr_dir, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train": {"patch_size": 30}}))
        code = main(["train-denoise", str(hr_dir), "--config", str(bad), "-q"])
        assert code == EXIT_USAGE

    def test_unknown_keys_are_usage_errors(self, tmp_path, hr_dir, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"model": {"denoiser": {"depth": 3}}}))
        assert _run(capsys, "fixture", str(tmp_path / "fx"), "--config", str(bad), "-q")[0] == EXIT_USAGE

    def test_resolved_config_is_printed_even_when_quiet(self, tmp_path, capsys):
        code = main(["fixture", str(tmp_path / "fx"), "--count", "1", "--size", "16", "--seed", "4", "-q"])
        captured = capsys.readouterr()
        assert code == EXIT_OK
        line = next(l for l in captured.err.splitlines() if l.startswith("resolved config: "))
        assert json.loads(line[len("resolved config: "):])["train"]["seed"] == 4
        assert json.loads(captured.out)["count"] == 1

    def test_unreadable_config(self, tmp_path, capsys):
        (tmp_path / "broken.json").write_text("{not json")
        assert _run(capsys, "fixture", str(tmp_path / "fx"), "--config", str(tmp_path / "broken.json"))[0] == EXIT_USAGE
        assert _run(capsys, "fixture", str(tmp_path / "fx"), "--config", str(tmp_path / "absent.json"))[0] == EXIT_USAGE


class TestTrainingPipeline:
    def test_separate_joint_and_eval(self, tmp_path, hr_dir, dataset, tiny_config_file, capsys):
        common = ["--config", str(tiny_config_file), "--steps", "2", "--holdout", "2", "-q"]

        code, out = _run(capsys, "train-denoise", str(hr_dir), "--run-dir", str(tmp_path / "den"), *common)
        assert code == EXIT_OK
        denoise = json.loads(out)
        assert denoise["steps"] == 2
        assert Path(denoise["checkpoint"]).is_file()
        assert (tmp_path / "den" / "config.json").is_file()
        records = [json.loads(line) for line in (tmp_path / "den" / "train_log.jsonl").read_text().splitlines()]
        assert [r["step"] for r in records] == [0, 1, 2]

        code, out = _run(capsys, "train-sr", str(dataset), "--run-dir", str(tmp_path / "sr"), *common)
        assert code == EXIT_OK
        sr = json.loads(out)

        code, out = _run(capsys, "train-joint", str(hr_dir), "--run-dir", str(tmp_path / "joint"),
                         "--denoiser", denoise["checkpoint"], "--sr", sr["checkpoint"], *common)
        assert code == EXIT_OK
        joint = json.loads(out)
        assert joint["checkpoint"].endswith("joint.ckpt")

        report_path = tmp_path / "eval.json"
        code, out = _run(capsys, "eval", str(dataset), "--checkpoint", joint["checkpoint"],
                         "--out", str(report_path), "--domain-shift", "-q")
        assert code == EXIT_OK
        assert "PSNR" in out and "domain shift" in out
        payload = json.loads(report_path.read_text())
        assert payload["reports"][0]["scale"] == 2
        assert "domain_shift" in payload

    def test_direct_stage(self, tmp_path, hr_dir, tiny_config_file, capsys):
        code, out = _run(capsys, "train-sr", str(hr_dir), "--direct", "--config", str(tiny_config_file),
                         "--steps", "1", "--holdout", "0", "--run-dir", str(tmp_path / "direct"), "-q")
        assert code == EXIT_OK
        assert json.loads(out)["checkpoint"].endswith("direct.ckpt")

    def test_joint_with_differently_sized_pretrains(self, tmp_path, hr_dir, dataset, tiny_config_file, capsys):
        small = json.loads(tiny_config_file.read_text())
        small["model"]["denoiser"] = {"n_rca_blocks": 1, "channels": 3}
        small_file = tmp_path / "small.json"
        small_file.write_text(json.dumps(small))
        steps = ["--steps", "1", "--holdout", "0", "-q"]

        code, out = _run(capsys, "train-denoise", str(hr_dir), "--config", str(small_file),
                         "--run-dir", str(tmp_path / "den"), *steps)
        assert code == EXIT_OK
        denoiser = json.loads(out)["checkpoint"]
        code, out = _run(capsys, "train-sr", str(dataset), "--config", str(tiny_config_file),
                         "--run-dir", str(tmp_path / "sr"), *steps)
        assert code == EXIT_OK
        sr = json.loads(out)["checkpoint"]
        code, out = _run(capsys, "train-joint", str(hr_dir), "--config", str(tiny_config_file),
                         "--denoiser", denoiser, "--sr", sr, "--run-dir", str(tmp_path / "joint"), *steps)
        assert code == EXIT_OK
        joint = json.loads(out)["checkpoint"]
        code, _ = _run(capsys, "eval", str(dataset), "--checkpoint", joint, "-q")
        assert code == EXIT_OK

    def test_joint_rejects_swapped_checkpoints(self, tmp_path, hr_dir, tiny_config_file, capsys):
        common = ["--config", str(tiny_config_file), "--steps", "1", "--holdout", "0", "-q"]
        code, out = _run(capsys, "train-denoise", str(hr_dir), "--run-dir", str(tmp_path / "den"), *common)
        assert code == EXIT_OK
        checkpoint = json.loads(out)["checkpoint"]
        code, _ = _run(capsys, "train-joint", str(hr_dir), "--denoiser", checkpoint, "--sr", checkpoint,
                       "--run-dir", str(tmp_path / "joint"), *common)
        assert code == EXIT_USAGE


class TestEval:
    def test_fresh_model_ties_bicubic(self, dataset, tmp_path, tiny_config_file, capsys):
        report_path = tmp_path / "eval.json"
        code, _ = _run(capsys, "eval", str(dataset), "--config", str(tiny_config_file),
                       "--out", str(report_path), "-q")
        assert code == EXIT_OK
        report = json.loads(report_path.read_text())["reports"][0]
        assert report["model"]["mean_psnr_db"] == report["baseline"]["mean_psnr_db"]

    def test_missing_dataset(self, tmp_path, capsys):
        assert _run(capsys, "eval", str(tmp_path), "-q")[0] == EXIT_FAILURE

    def test_corrupt_checkpoint(self, dataset, tmp_path, capsys):
        bogus = tmp_path / "bogus.ckpt"
        bogus.write_bytes(b"garbage")
        assert _run(capsys, "eval", str(dataset), "--checkpoint", str(bogus), "-q")[0] == EXIT_FAILURE
