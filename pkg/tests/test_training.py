import math

import numpy as np
import pytest
import torch

from planeprompt.config import BackboneConfig, FreezeConfig, LossConfig, TrainConfig
from planeprompt.data import corrupt_masks
from planeprompt.data.types import PseudoLabelSet
from planeprompt.errors import CheckpointError, ConfigError
from planeprompt.model import build_model
from planeprompt.training import (
    apply_freeze_policy,
    build_optimizer,
    cosine_lr,
    load_checkpoint,
    run_training,
    save_checkpoint,
)


def tiny_train_cfg(phase="finetune", **kwargs):
    base = dict(
        phase=phase,
        epochs=2,
        batch_size=2,
        lr0=1e-3,
        weight_decay=0.0,
        noise_frac=0.1 if phase == "finetune" else 0.0,
        flip_prob=0.5 if phase == "finetune" else 0.0,
        min_mask_area=0 if phase == "finetune" else None,
        seed=3,
        loss=LossConfig(),
    )
    base.update(kwargs)
    return TrainConfig(**base)


def pseudo_dataset(dataset64):
    return [
        (s, PseudoLabelSet(masks=[m.copy() for m in a.masks], source="synthetic"))
        for s, a in dataset64
    ]


def snapshot(model, prefix):
    return {
        n: p.detach().clone()
        for n, p in model.named_parameters()
        if n.startswith(prefix)
    }


def unchanged(model, saved):
    return all(
        torch.equal(dict(model.named_parameters())[n], v) for n, v in saved.items()
    )


class TestCosineLr:
    def test_schedule_start(self):
        assert cosine_lr(0, 100, 1e-4) == 1e-4

    def test_decays_to_zero_at_end(self):
        assert cosine_lr(100, 100, 1e-4) == pytest.approx(0.0, abs=1e-20)

    def test_midpoint(self):
        assert cosine_lr(50, 100, 2e-4) == pytest.approx(1e-4)

    def test_monotone_decreasing(self):
        vals = [cosine_lr(s, 50, 1.0) for s in range(51)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_bad_args(self):
        with pytest.raises(ConfigError):
            cosine_lr(5, 0, 1.0)
        with pytest.raises(ConfigError):
            cosine_lr(7, 5, 1.0)


class TestFreezePolicy:
    def test_default_trainable_set(self, small_cfg):
        model = build_model(small_cfg, seed=0)
        trainable = apply_freeze_policy(model, tiny_train_cfg())
        assert not any(n.startswith("prompt_encoder.") for n in trainable)
        assert not any(n.startswith("decoder.iou_head.") for n in trainable)
        assert any(n.startswith("backbone.transformer.") for n in trainable)
        assert any(n.startswith("backbone.cnn.") for n in trainable)
        assert any(n.startswith("backbone.stem") for n in trainable)
        assert any(n.startswith("decoder.") for n in trainable)

    def test_freeze_transformer_ablation(self, small_cfg):
        model = build_model(small_cfg, seed=0)
        cfg = tiny_train_cfg(freeze=FreezeConfig(transformer_branch=True))
        trainable = apply_freeze_policy(model, cfg)
        assert not any(n.startswith("backbone.transformer.") for n in trainable)
        assert any(n.startswith("backbone.cnn.") for n in trainable)

    def test_partition_of_all_parameters(self, small_cfg):
        model = build_model(small_cfg, seed=0)
        trainable = apply_freeze_policy(model, tiny_train_cfg())
        all_names = {n for n, _ in model.named_parameters()}
        frozen = {n for n, p in model.named_parameters() if not p.requires_grad}
        assert trainable | frozen == all_names
        assert trainable & frozen == set()


class TestStepsAndDeterminism:
    def test_finetune_loss_trajectory_reproducible(self, small_cfg, dataset64):
        histories = []
        for _ in range(2):
            model = build_model(small_cfg, seed=1)
            hist = run_training(model, dataset64, tiny_train_cfg())
            histories.append([row["mean_loss"] for row in hist])
        assert histories[0] == histories[1]

    def test_final_parameters_reproducible(self, small_cfg, dataset64):
        finals = []
        for _ in range(2):
            model = build_model(small_cfg, seed=1)
            run_training(model, dataset64, tiny_train_cfg())
            finals.append({n: p.detach().clone() for n, p in model.named_parameters()})
        assert all(torch.equal(finals[0][n], finals[1][n]) for n in finals[0])

    def test_pretrain_freeze_invariants(self, small_cfg, dataset64):
        model = build_model(small_cfg, seed=2)
        pe = snapshot(model, "prompt_encoder.")
        iou = snapshot(model, "decoder.iou_head.")
        run_training(model, pseudo_dataset(dataset64), tiny_train_cfg(phase="pretrain"))
        assert unchanged(model, pe)
        assert unchanged(model, iou)

    def test_finetune_freeze_invariants(self, small_cfg, dataset64):
        model = build_model(small_cfg, seed=2)
        pe = snapshot(model, "prompt_encoder.")
        iou = snapshot(model, "decoder.iou_head.")
        run_training(model, dataset64, tiny_train_cfg(epochs=3))
        assert unchanged(model, pe)
        assert unchanged(model, iou)

    def test_losses_finite(self, small_cfg, dataset64):
        model = build_model(small_cfg, seed=4)
        hist = run_training(model, dataset64, tiny_train_cfg())
        for row in hist:
            assert row["mean_loss"] is not None and math.isfinite(row["mean_loss"])

    def test_lr_sequence_matches_cosine(self, small_cfg, dataset64):
        model = build_model(small_cfg, seed=4)
        cfg = tiny_train_cfg(epochs=3, batch_size=2)
        hist = run_training(model, dataset64, cfg)
        steps_per_epoch = math.ceil(len(dataset64) / cfg.batch_size)
        total = cfg.epochs * steps_per_epoch
        for epoch, row in enumerate(hist):
            last_step_of_epoch = (epoch + 1) * steps_per_epoch - 1
            assert row["lr"] == pytest.approx(cosine_lr(last_step_of_epoch, total, cfg.lr0))

    def test_phase_contract_counters(self, small_cfg, dataset64):
        # pretrain filters small masks and does not jitter; finetune jitters
        # and never filters
        model = build_model(small_cfg, seed=5)
        pre_cfg = tiny_train_cfg(phase="pretrain", epochs=1, min_mask_area=None)
        hist = run_training(model, pseudo_dataset(dataset64), pre_cfg)
        assert hist[0]["jittered"] == 0

        model = build_model(small_cfg, seed=5)
        fin_cfg = tiny_train_cfg(phase="finetune", epochs=1, noise_frac=0.1)
        hist = run_training(model, dataset64, fin_cfg)
        assert hist[0]["filtered_masks"] == 0
        assert hist[0]["jittered"] == len(dataset64)

    def test_pretrain_min_area_default_resolves(self, small_cfg):
        cfg = tiny_train_cfg(phase="pretrain", min_mask_area=None)
        assert cfg.resolved_min_mask_area(small_cfg.image_size) == max(
            1, int(0.001 * 64 * 64)
        )

    def test_empty_pseudo_labels_skipped_and_counted(self, small_cfg, dataset64):
        model = build_model(small_cfg, seed=6)
        data = pseudo_dataset(dataset64)
        # make one sample's masks all tiny so the filter drops them
        s, labels = data[0]
        tiny_masks = []
        for m in labels.masks:
            t = np.zeros_like(m)
            ys, xs = np.nonzero(m)
            t[ys[0], xs[0]] = True
            tiny_masks.append(t)
        data[0] = (s, PseudoLabelSet(masks=tiny_masks, source="tiny"))
        cfg = tiny_train_cfg(phase="pretrain", epochs=1, min_mask_area=50)
        hist = run_training(model, data, cfg)
        assert hist[0]["skipped"] == 1

    def test_transformer_frozen_gradients_zero(self, small_cfg, dataset64):
        from planeprompt.training import finetune_step

        model = build_model(small_cfg, seed=7)
        cfg = tiny_train_cfg(freeze=FreezeConfig(transformer_branch=True))
        apply_freeze_policy(model, cfg)
        opt = build_optimizer(model, cfg)
        rng = np.random.default_rng(0)
        finetune_step(dataset64[:2], model, cfg, rng, opt, lr=1e-3)
        for name, p in model.named_parameters():
            if name.startswith("backbone.transformer."):
                assert p.grad is None or torch.all(p.grad == 0)


class TestFlipSymmetry:
    def _symmetrize(self, model):
        """Make every spatial kernel mirror-symmetric and disable positional
        terms so the network commutes with horizontal flips."""
        with torch.no_grad():
            for mod in model.modules():
                if isinstance(mod, (torch.nn.Conv2d, torch.nn.ConvTranspose2d)):
                    mod.weight.copy_((mod.weight + mod.weight.flip(-1)) / 2)
            model.backbone.transformer.pos_embed.zero_()
            model.prompt_encoder.positions.freqs.zero_()
            model.prompt_encoder.corner_type.weight[1] = (
                model.prompt_encoder.corner_type.weight[0]
            )

    def test_flip_preserves_loss_for_symmetric_model(self, tiny_cfg, tiny_scene_cfg):
        from planeprompt.data import generate_synthetic_scene, horizontal_flip, tight_box
        from planeprompt.losses import min_of_three
        from planeprompt.model.network import sample_to_tensors

        model = build_model(tiny_cfg, seed=0)
        self._symmetrize(model)
        sample, ann = generate_synthetic_scene(9, tiny_scene_cfg)
        mask = ann.plane_masks()[0]
        box = tight_box(mask)
        flipped, fboxes = horizontal_flip(sample, [box])
        fmask = np.ascontiguousarray(mask[:, ::-1])

        def loss_of(s, m, b):
            rgb, depth = sample_to_tensors(s, 10.0)
            boxes = torch.tensor([list(b.as_tuple())], dtype=torch.float32)
            trip = model(rgb.unsqueeze(0), depth.unsqueeze(0), boxes)
            val, _ = min_of_three(
                trip.logits[0], torch.from_numpy(m.astype(np.float32)), LossConfig()
            )
            return val.item()

        a = loss_of(sample, mask, box)
        b = loss_of(flipped, fmask, fboxes[0])
        assert a == pytest.approx(b, rel=1e-4, abs=1e-6)


class TestCheckpoints:
    def test_round_trip_bit_identical_forward(self, small_cfg, dataset64, tmp_path):
        model = build_model(small_cfg, seed=8)
        cfg = tiny_train_cfg(epochs=1)
        run_training(model, dataset64, cfg)
        save_checkpoint(model, None, cfg, tmp_path / "ck.pt", step=2, epoch=0)
        loaded, _, _, meta = load_checkpoint(tmp_path / "ck.pt")
        assert meta["step"] == 2

        s, _ = dataset64[0]
        from planeprompt.model.network import sample_to_tensors

        rgb, depth = sample_to_tensors(s, 10.0)
        boxes = torch.tensor([[4.0, 4.0, 30.0, 30.0]])
        model.eval(), loaded.eval()
        with torch.no_grad():
            a = model(rgb.unsqueeze(0), depth.unsqueeze(0), boxes)
            b = loaded(rgb.unsqueeze(0), depth.unsqueeze(0), boxes)
        assert torch.equal(a.logits, b.logits)
        assert torch.equal(a.iou_scores, b.iou_scores)

    def test_optimizer_state_round_trip(self, small_cfg, dataset64, tmp_path):
        model = build_model(small_cfg, seed=9)
        cfg = tiny_train_cfg(epochs=1)
        apply_freeze_policy(model, cfg)
        opt = build_optimizer(model, cfg)
        run_training(model, dataset64, cfg, optimizer=opt)
        save_checkpoint(model, opt, cfg, tmp_path / "ck.pt", step=2)
        _, opt2, cfg2, _ = load_checkpoint(tmp_path / "ck.pt")
        assert opt2 is not None
        assert cfg2.phase == cfg.phase
        assert cfg2.loss.w_focal == cfg.loss.w_focal

    def test_schedule_resumes_from_stored_step(self):
        # cosine continuity is a pure function of the stored step counter
        assert cosine_lr(30, 100, 1e-3) == pytest.approx(
            1e-3 * 0.5 * (1 + math.cos(math.pi * 0.3))
        )

    def test_truncated_file_is_load_error(self, small_cfg, tmp_path):
        model = build_model(small_cfg, seed=10)
        path = tmp_path / "ck.pt"
        save_checkpoint(model, None, tiny_train_cfg(), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch_is_explicit(self, small_cfg, tmp_path):
        model = build_model(small_cfg, seed=11)
        path = tmp_path / "ck.pt"
        save_checkpoint(model, None, tiny_train_cfg(), path)
        payload = torch.load(path, weights_only=False)
        payload["version"] = 999
        torch.save(payload, path)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.pt")


class TestPretrainingIngestion:
    def test_corrupted_pseudo_labels_still_train(self, small_cfg, dataset64):
        rng = np.random.default_rng(0)
        data = []
        for s, a in dataset64:
            masks = corrupt_masks([m.copy() for m in a.masks], 0.2, rng)
            data.append((s, PseudoLabelSet(masks=masks, source="corrupted")))
        model = build_model(small_cfg, seed=12)
        hist = run_training(model, data, tiny_train_cfg(phase="pretrain", epochs=1))
        assert hist[0]["mean_loss"] is not None
