import json
import os

import pytest

from dlsr.cli import dispatch, resolve_run_config
from dlsr.data_pipeline import synthetic_images, write_images
from dlsr.genotype import load_genotype, parse


def run(capsys, argv):
    code = dispatch(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def desk_config_doc(tmp_path, steps=14, warmup=4, size=32, num_images=6):
    return {
        "supernet": {"channels": 8, "num_cells": 2, "scale": 2},
        "search": {"total_steps": steps, "warmup_steps": warmup,
                   "batch_size": 2, "seed": 3,
                   "snapshot_steps": [steps // 2, steps]},
        "train": {"total_steps": 4, "batch_size": 2, "seed": 3},
        "dataset": {"synthetic": {"num_images": num_images, "size": size,
                                  "seed": 0},
                    "scale": 2, "patch_size": 16, "train_fraction": 0.67},
    }


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(desk_config_doc(tmp_path)))
    return path


class TestUsage:
    def test_no_args_exits_two(self):
        with pytest.raises(SystemExit) as err:
            dispatch([])
        assert err.value.code == 2

    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as err:
            dispatch(["frobnicate"])
        assert err.value.code == 2

    def test_errors_are_single_line(self, capsys, tmp_path):
        code, _, err = run(capsys, ["analyze", "--genotype",
                                    str(tmp_path / "missing.json")])
        assert code == 1
        assert err.startswith("error: ")
        assert err.strip().count("\n") == 0


class TestAnalyze:
    def test_fixture_report(self, capsys, tmp_path):
        report_path = tmp_path / "report.json"
        code, out, _ = run(capsys, ["analyze", "--genotype", "fixtures/dlsr.json",
                                    "--scale", "2", "--report",
                                    str(report_path)])
        assert code == 0
        assert "87,480" in out
        assert "320,412" in out
        doc = json.loads(report_path.read_text())
        assert doc["total_params"] == 320_412
        assert doc["cardinality"]["paper_convention"] == 87_480
        assert doc["total_params"] == sum(l["params"] for l in doc["per_layer"])

    def test_bad_genotype_file(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"cells": "nope"}')
        code, _, err = run(capsys, ["analyze", "--genotype", str(bad)])
        assert code == 1 and "error:" in err


class TestSearchCli:
    def test_two_runs_same_seed_identical_genotypes(self, capsys, config_path,
                                                    tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        code_a, _, _ = run(capsys, ["search", "--config", str(config_path),
                                    "--out", str(out_a)])
        code_b, _, _ = run(capsys, ["search", "--config", str(config_path),
                                    "--out", str(out_b)])
        assert code_a == 0 and code_b == 0
        names = sorted(p.name for p in out_a.glob("genotype_step*.json"))
        assert len(names) == 2
        for name in names:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_run_dir_contains_resolved_config(self, capsys, config_path,
                                              tmp_path):
        out = tmp_path / "run"
        run(capsys, ["search", "--config", str(config_path), "--out", str(out)])
        doc = json.loads((out / "config.json").read_text())
        assert doc["search"]["seed"] == 3
        assert doc["supernet"]["channels"] == 8
        assert doc["dataset"]["train_fraction"] == 0.67

    def test_env_seed_override(self, capsys, config_path, tmp_path,
                               monkeypatch):
        monkeypatch.setenv("DLSR_SEED", "77")
        out = tmp_path / "env"
        code, _, _ = run(capsys, ["search", "--config", str(config_path),
                                  "--out", str(out)])
        assert code == 0
        doc = json.loads((out / "config.json").read_text())
        assert doc["search"]["seed"] == 77

    def test_flag_overrides_config(self, capsys, config_path, tmp_path):
        out = tmp_path / "flag"
        code, _, _ = run(capsys, ["search", "--config", str(config_path),
                                  "--out", str(out), "--seed", "11",
                                  "--gamma", "0.5"])
        assert code == 0
        doc = json.loads((out / "config.json").read_text())
        assert doc["search"]["seed"] == 11
        assert doc["loss"]["gamma"] == 0.5


@pytest.fixture(scope="module")
def search_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_flow")
    config = tmp / "config.json"
    config.write_text(json.dumps(desk_config_doc(tmp)))
    out = tmp / "search"
    assert dispatch(["search", "--config", str(config),
                     "--out", str(out)]) == 0
    return tmp, config, out


class TestExportTrainEvalCli:
    def test_export_matches_final_snapshot(self, capsys, search_run):
        tmp, _, out = search_run
        genotype_path = tmp / "exported.json"
        code, _, _ = run(capsys, ["export", "--checkpoint",
                                  str(out / "checkpoint.pt"),
                                  "--out", str(genotype_path)])
        assert code == 0
        exported = load_genotype(genotype_path)
        final_snapshot = sorted(out.glob("genotype_step*.json"))[-1]
        assert exported == parse(final_snapshot.read_text())

    def test_export_rejects_train_checkpoint(self, capsys, search_run,
                                             tmp_path):
        tmp, config, out = search_run
        train_out = tmp_path / "train"
        genotype_path = sorted(out.glob("genotype_step*.json"))[-1]
        assert dispatch(["train", "--genotype", str(genotype_path),
                         "--config", str(config), "--out",
                         str(train_out)]) == 0
        code, _, err = run(capsys, ["export", "--checkpoint",
                                    str(train_out / "checkpoint.pt"),
                                    "--out", str(tmp_path / "g.json")])
        assert code == 1 and "search checkpoint" in err

    def test_train_then_eval_and_scatter(self, capsys, search_run, tmp_path):
        tmp, config, out = search_run
        genotype_path = sorted(out.glob("genotype_step*.json"))[-1]
        train_out = tmp_path / "train"
        assert dispatch(["train", "--genotype", str(genotype_path),
                         "--config", str(config), "--out",
                         str(train_out)]) == 0
        assert (train_out / "checkpoint.pt").exists()
        assert (train_out / "train_log.jsonl").exists()

        hr_dir = tmp_path / "hr"
        write_images(synthetic_images(2, size=48, seed=5), hr_dir)
        report_path = tmp_path / "report.json"
        scatter_path = tmp_path / "scatter.csv"
        code, out_text, _ = run(capsys, [
            "eval", "--checkpoint", str(train_out / "checkpoint.pt"),
            "--genotype", str(genotype_path), "--hr-dir", str(hr_dir),
            "--scale", "2", "--report", str(report_path),
            "--scatter", str(scatter_path), "--name", "desk"])
        assert code == 0
        doc = json.loads(report_path.read_text())
        assert doc["aggregate"]["num_images"] == 2
        assert doc["complexity"]["params"] > 0
        assert "PSNR" in out_text
        assert scatter_path.read_text().splitlines()[1].startswith("desk,")

    def test_eval_genotype_mismatch_rejected(self, capsys, search_run,
                                             tmp_path):
        tmp, config, out = search_run
        genotype_path = sorted(out.glob("genotype_step*.json"))[-1]
        train_out = tmp_path / "train"
        assert dispatch(["train", "--genotype", str(genotype_path),
                         "--config", str(config), "--out",
                         str(train_out)]) == 0
        code, _, err = run(capsys, [
            "eval", "--checkpoint", str(train_out / "checkpoint.pt"),
            "--genotype", "fixtures/dlsr.json", "--hr-dir", ".",
            "--report", str(tmp_path / "r.json")])
        assert code == 1 and "does not match" in err


class TestResolveRunConfig:
    def test_defaults_complete(self):
        resolved = resolve_run_config(None, {})
        assert resolved["supernet"]["channels"] == 48
        assert resolved["search"]["total_steps"] == 2000
        assert resolved["train"]["total_steps"] == 5000
        assert resolved["loss"] == {"lambda_val": 1.0, "mu": 0.2, "gamma": 0.2}

    def test_scale_consistency_enforced(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"supernet": {"scale": 4},
                                    "dataset": {"scale": 2, "synthetic":
                                                {"num_images": 2}}}))
        with pytest.raises(ValueError):
            resolve_run_config(path, {})

    def test_dataset_scale_follows_supernet(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"supernet": {"scale": 4}}))
        resolved = resolve_run_config(path, {})
        assert resolved["dataset"]["scale"] == 4
