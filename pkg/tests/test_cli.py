import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from planeprompt.cli import main
from planeprompt.config import LossConfig, load_run_config, run_config_from_dict
from planeprompt.data.io import read_labels, read_manifest
from planeprompt.errors import ConfigError


TINY_YAML = {
    "backbone": {
        "image_size": 32,
        "patch_size": 8,
        "embed_dim": 32,
        "blocks": 2,
        "heads": 2,
        "cnn_channels": 4,
    },
    "data": {"d_max": 10.0},
    "train": {
        "phase": "finetune",
        "epochs": 2,
        "batch_size": 2,
        "lr0": 0.001,
        "weight_decay": 0.0,
        "seed": 1,
    },
}


@pytest.fixture
def workdir(tmp_path):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(TINY_YAML))
    return tmp_path


def gen(workdir, count=3, seed=5, size=32):
    rc = main(
        [
            "gen-synth",
            "--count",
            str(count),
            "--size",
            str(size),
            "--planes-min",
            "2",
            "--planes-max",
            "3",
            "--seed",
            str(seed),
            "--out-dir",
            str(workdir / "data"),
        ]
    )
    assert rc == 0
    return workdir / "data" / "manifest.jsonl"


class TestGenSynth:
    def test_deterministic_directories(self, tmp_path):
        m1 = gen(tmp_path / "a")
        m2 = gen(tmp_path / "b")
        e1, e2 = read_manifest(m1), read_manifest(m2)
        assert [r["id"] for r in e1] == [r["id"] for r in e2]
        for r1, r2 in zip(e1, e2):
            b1 = (m1.parent / r1["rgb_path"]).read_bytes()
            b2 = (m2.parent / r2["rgb_path"]).read_bytes()
            assert b1 == b2

    def test_manifest_line_count(self, tmp_path):
        manifest = gen(tmp_path, count=4)
        assert len(read_manifest(manifest)) == 4

    def test_labels_pass_disjointness(self, tmp_path):
        manifest = gen(tmp_path)
        for rec in read_manifest(manifest):
            labels = read_labels(manifest.parent / rec["label_path"])
            assert labels.max() >= 1  # at least one plane id
        # ids partition pixels by construction in an id raster

    def test_no_partial_marker_after_success(self, tmp_path):
        manifest = gen(tmp_path)
        assert not (manifest.parent / "manifest.jsonl.partial").exists()


class TestTrainCommands:
    def test_finetune_writes_log_and_checkpoint(self, workdir):
        manifest = gen(workdir)
        rc = main(
            [
                "finetune",
                "--config",
                str(workdir / "cfg.yaml"),
                "--manifest",
                str(manifest),
                "--out",
                str(workdir / "run"),
            ]
        )
        assert rc == 0
        log_rows = [
            json.loads(line)
            for line in (workdir / "run" / "finetune_log.jsonl").read_text().splitlines()
        ]
        assert len(log_rows) == TINY_YAML["train"]["epochs"]
        assert all("mean_loss" in row and "lr" in row and "skipped" in row for row in log_rows)
        assert (workdir / "run" / "finetune.pt").exists()

    def test_pretrain_then_finetune_init(self, workdir):
        manifest = gen(workdir)
        rc = main(
            [
                "pretrain",
                "--config",
                str(workdir / "cfg.yaml"),
                "--manifest",
                str(manifest),
                "--out",
                str(workdir / "pre"),
                "--epochs",
                "1",
            ]
        )
        assert rc == 0
        rc = main(
            [
                "finetune",
                "--config",
                str(workdir / "cfg.yaml"),
                "--manifest",
                str(manifest),
                "--out",
                str(workdir / "fin"),
                "--init",
                str(workdir / "pre" / "pretrain.pt"),
                "--epochs",
                "1",
            ]
        )
        assert rc == 0

    def test_missing_manifest_is_config_error(self, workdir):
        rc = main(["finetune", "--config", str(workdir / "cfg.yaml")])
        assert rc == 2


class TestInferEvalReport:
    def _train(self, workdir):
        manifest = gen(workdir)
        main(
            [
                "finetune",
                "--config",
                str(workdir / "cfg.yaml"),
                "--manifest",
                str(manifest),
                "--out",
                str(workdir / "run"),
            ]
        )
        return manifest, workdir / "run" / "finetune.pt"

    def test_infer_eval_round_trip(self, workdir):
        manifest, ckpt = self._train(workdir)
        rc = main(
            [
                "infer",
                "--config",
                str(workdir / "cfg.yaml"),
                "--checkpoint",
                str(ckpt),
                "--manifest",
                str(manifest),
                "--out",
                str(workdir / "preds"),
            ]
        )
        assert rc == 0
        pred_manifest = workdir / "preds" / "predictions.jsonl"
        assert pred_manifest.exists()
        # predicted rasters have input shape
        first = json.loads(pred_manifest.read_text().splitlines()[0])
        raster = read_labels(workdir / "preds" / first["pred_path"])
        assert raster.shape == (32, 32)
        # prompt summary records exist
        prompts = [
            json.loads(l)
            for l in (workdir / "preds" / "prompts.jsonl").read_text().splitlines()
        ]
        assert all(
            set(r) == {"image_id", "box", "chosen_mask_index", "iou_score"}
            for r in prompts
        )

        rc = main(
            [
                "eval",
                "--pred",
                str(pred_manifest),
                "--gt",
                str(manifest),
                "--out",
                str(workdir / "eval"),
            ]
        )
        assert rc == 0
        table = (workdir / "eval" / "eval.tsv").read_text().splitlines()
        assert table[0].split("\t") == ["id", "voi", "ri", "sc"]
        assert table[-1].startswith("mean\t")

    def test_eval_identity_predictions(self, workdir):
        # feeding ground truth as predictions: aggregate (0, 1, 1)
        manifest = gen(workdir)
        preds_dir = workdir / "idpreds"
        preds_dir.mkdir()
        lines = []
        for rec in read_manifest(manifest):
            labels = read_labels(manifest.parent / rec["label_path"])
            name = f"{rec['id']}_pred.png"
            from planeprompt.data.io import write_labels

            write_labels(preds_dir / name, labels)
            lines.append(json.dumps({"id": rec["id"], "pred_path": name}))
        (preds_dir / "predictions.jsonl").write_text("\n".join(lines) + "\n")
        rc = main(
            [
                "eval",
                "--pred",
                str(preds_dir / "predictions.jsonl"),
                "--gt",
                str(manifest),
                "--out",
                str(workdir / "eval2"),
            ]
        )
        assert rc == 0
        mean_row = (workdir / "eval2" / "eval.tsv").read_text().splitlines()[-1]
        _, voi, ri, sc = mean_row.split("\t")
        assert float(voi) == 0.0 and float(ri) == 1.0 and float(sc) == 1.0

    def test_eval_id_mismatch_lists_ids(self, workdir, capsys):
        manifest = gen(workdir)
        preds_dir = workdir / "badpreds"
        preds_dir.mkdir()
        (preds_dir / "predictions.jsonl").write_text(
            json.dumps({"id": "unknown-image", "pred_path": "x.png"}) + "\n"
        )
        rc = main(
            [
                "eval",
                "--pred",
                str(preds_dir / "predictions.jsonl"),
                "--gt",
                str(manifest),
                "--out",
                str(workdir / "eval3"),
            ]
        )
        assert rc == 3
        err = capsys.readouterr().err
        assert "unknown-image" in err

    def test_infer_with_box_file_and_skips(self, workdir):
        manifest, ckpt = self._train(workdir)
        recs = read_manifest(manifest)
        box_file = workdir / "boxes.jsonl"
        box_file.write_text(
            json.dumps(
                {"image_id": recs[0]["id"], "boxes": [[2.0, 2.0, 20.0, 20.0]], "scores": [0.9]}
            )
            + "\n"
        )
        rc = main(
            [
                "infer",
                "--config",
                str(workdir / "cfg.yaml"),
                "--checkpoint",
                str(ckpt),
                "--manifest",
                str(manifest),
                "--boxes",
                str(box_file),
                "--out",
                str(workdir / "preds2"),
            ]
        )
        assert rc == 0
        pred_lines = (workdir / "preds2" / "predictions.jsonl").read_text().splitlines()
        assert len(pred_lines) == 1  # images without boxes skipped and reported

    def test_report_noise_sweep_layout(self, workdir):
        manifest, ckpt = self._train(workdir)
        rc = main(
            [
                "report",
                "--config",
                str(workdir / "cfg.yaml"),
                "--checkpoint",
                str(ckpt),
                "--manifest",
                str(manifest),
                "--out",
                str(workdir / "rep"),
            ]
        )
        assert rc == 0
        text = (workdir / "rep" / "report.txt").read_text().splitlines()
        header = text[2].split("\t")
        assert header == ["metric", "0%", "10%", "20%", "30%"]
        assert text[3].startswith("voi\t")
        assert text[4].startswith("ri\t")
        assert text[5].startswith("sc\t")


class TestRunConfig:
    def test_unknown_key_fails_with_path(self):
        with pytest.raises(ConfigError, match="backbone.bogus"):
            run_config_from_dict({"backbone": {"bogus": 3}})

    def test_invalid_value_fails_with_path(self):
        with pytest.raises(ConfigError, match="train.lr0"):
            run_config_from_dict({"train": {"lr0": -1.0}})

    def test_loss_presets(self):
        paper = LossConfig.preset("paper")
        assert (paper.w_focal, paper.w_dice, paper.w_mse) == (1.0, 1.0, 0.0)
        esam = LossConfig.preset("efficientsam")
        assert (esam.w_focal, esam.w_dice, esam.w_mse) == (20.0, 1.0, 1.0)

    def test_preset_key_in_yaml(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"loss": {"preset": "efficientsam"}}))
        cfg = load_run_config(p)
        assert cfg.loss.w_focal == 20.0
        assert cfg.train.loss.w_focal == 20.0  # shared block becomes default

    def test_exit_code_on_bad_config(self, tmp_path, capsys):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"train": {"optimizer": "lion"}}))
        rc = main(["finetune", "--config", str(p)])
        assert rc == 2

    def test_defaults_match_two_phase_protocol(self):
        from planeprompt.config import TrainConfig

        pre = TrainConfig.pretrain_defaults()
        assert (pre.epochs, pre.batch_size, pre.lr0, pre.weight_decay) == (
            40,
            12,
            1e-4,
            0.01,
        )
        assert pre.freeze.prompt_encoder and pre.freeze.iou_head
        assert not pre.freeze.transformer_branch
        fin = TrainConfig.finetune_defaults()
        assert fin.epochs == 15
        assert fin.noise_frac == 0.1
        assert fin.flip_prob == 0.5
        assert fin.min_mask_area == 0
