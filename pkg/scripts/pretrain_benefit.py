"""Pretraining-benefit experiment: does segment-anything pretraining on
corrupted pseudo-labels cut the fine-tuning epochs needed to reach the
overfit thresholds?

Two arms per seed: fine-tune from scratch vs from a pretrained checkpoint;
reports the epoch counts and their ratio averaged over seeds.

    python scripts/pretrain_benefit.py --seeds 3 --out runs/pretrain_benefit
"""

import argparse
import json
from pathlib import Path

from planeprompt.config import BackboneConfig, LossConfig, SceneConfig, TrainConfig
from planeprompt.data import corrupt_masks, generate_synthetic_scene
from planeprompt.data.types import PseudoLabelSet
from planeprompt.inference import evaluate_model
from planeprompt.model import build_model
from planeprompt.training import run_training

import numpy as np

SMALL = BackboneConfig(
    image_size=64, patch_size=8, embed_dim=64, blocks=4, heads=2, cnn_channels=8
)


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--finetune-scenes", type=int, default=12)
    ap.add_argument("--pretrain-scenes", type=int, default=24)
    ap.add_argument("--max-epochs", type=int, default=300)
    ap.add_argument("--pretrain-epochs", type=int, default=60)
    ap.add_argument("--eval-every", type=int, default=5)
    ap.add_argument("--corrupt", type=float, default=0.2)
    ap.add_argument("--out", default="runs/pretrain_benefit")
    return ap.parse_args()


def epochs_to_threshold(model, data, samples, cfg, eval_every):
    state = {"epochs": None}

    def hook(epoch, m):
        if (epoch + 1) % eval_every:
            return False
        agg, _ = evaluate_model(m, samples, noise_frac=0.0, seed=7)
        if agg.sc >= 0.90 and agg.ri >= 0.95 and agg.voi <= 0.35:
            state["epochs"] = epoch + 1
            return True
        return False

    run_training(model, data, cfg, epoch_hook=hook)
    return state["epochs"]


def run_seed(seed, args):
    scene_cfg = SceneConfig(size=64, planes_min=2, planes_max=4, tilt_prob=0.0)
    fin_data = [
        generate_synthetic_scene(5000 + 100 * seed + i, scene_cfg)
        for i in range(args.finetune_scenes)
    ]
    fin_samples = [s for s, _ in fin_data]

    fin_cfg = TrainConfig(
        phase="finetune",
        epochs=args.max_epochs,
        batch_size=4,
        lr0=1e-3,
        weight_decay=0.0,
        noise_frac=0.0,
        flip_prob=0.0,
        seed=seed,
        loss=LossConfig(),
    )

    scratch = build_model(SMALL, seed=seed)
    ep_scratch = epochs_to_threshold(
        scratch, fin_data, fin_samples, fin_cfg, args.eval_every
    )

    # pretraining corpus: different scenes, every instance mask corrupted
    rng = np.random.default_rng(900 + seed)
    pre_data = []
    for i in range(args.pretrain_scenes):
        s, a = generate_synthetic_scene(8000 + 100 * seed + i, scene_cfg)
        masks = corrupt_masks([m.copy() for m in a.masks], args.corrupt, rng)
        pre_data.append((s, PseudoLabelSet(masks=masks, source="corrupted-synthetic")))

    pretrained = build_model(SMALL, seed=seed)
    pre_cfg = TrainConfig(
        phase="pretrain",
        epochs=args.pretrain_epochs,
        batch_size=4,
        lr0=1e-3,
        weight_decay=0.0,
        noise_frac=0.0,
        flip_prob=0.0,
        min_mask_area=None,
        seed=seed,
        loss=LossConfig(),
    )
    run_training(pretrained, pre_data, pre_cfg)
    ep_pretrained = epochs_to_threshold(
        pretrained, fin_data, fin_samples, fin_cfg, args.eval_every
    )
    return ep_scratch, ep_pretrained


def main():
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in range(args.seeds):
        ep_scratch, ep_pre = run_seed(seed, args)
        rows.append({"seed": seed, "scratch": ep_scratch, "pretrained": ep_pre})
        print(json.dumps(rows[-1]), flush=True)
    ok = [r for r in rows if r["scratch"] and r["pretrained"]]
    mean_scratch = sum(r["scratch"] for r in ok) / len(ok)
    mean_pre = sum(r["pretrained"] for r in ok) / len(ok)
    summary = {
        "per_seed": rows,
        "mean_scratch_epochs": mean_scratch,
        "mean_pretrained_epochs": mean_pre,
        "ratio": mean_pre / mean_scratch,
    }
    (out / "result.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
