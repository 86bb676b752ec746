"""Desk-scale overfit experiment: fine-tune the toy model on a handful of
synthetic scenes with exact oracle boxes, then sweep box noise.

Reproduces the overfit + noise-robustness numbers from the acceptance suite
as a standalone run:

    python scripts/desk_overfit.py --scenes 20 --epochs 300 --out runs/overfit
"""

import argparse
import json
import time
from pathlib import Path

from planeprompt.config import BackboneConfig, LossConfig, SceneConfig, TrainConfig
from planeprompt.data import generate_synthetic_scene
from planeprompt.inference import evaluate_model
from planeprompt.model import build_model
from planeprompt.training import run_training, save_checkpoint


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--lr", type=float, default=5e-4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-every", type=int, default=10)
    ap.add_argument("--out", default="runs/overfit")
    ap.add_argument(
        "--stop-at",
        nargs=3,
        type=float,
        default=(0.90, 0.95, 0.35),
        metavar=("SC", "RI", "VOI"),
        help="early-stop thresholds (SC>=, RI>=, VOI<=)",
    )
    return ap.parse_args()


def main():
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scene_cfg = SceneConfig(size=args.size, planes_min=2, planes_max=4)
    data = [generate_synthetic_scene(1000 + i, scene_cfg) for i in range(args.scenes)]
    samples = [s for s, _ in data]

    model = build_model(BackboneConfig(image_size=args.size), seed=args.seed)
    train_cfg = TrainConfig(
        phase="finetune",
        epochs=args.epochs,
        batch_size=args.batch,
        lr0=args.lr,
        weight_decay=0.0,
        noise_frac=0.0,
        flip_prob=0.0,
        seed=args.seed,
        loss=LossConfig(),
    )

    sc_min, ri_min, voi_max = args.stop_at
    t0 = time.time()
    trajectory = []

    def hook(epoch, m):
        if (epoch + 1) % args.eval_every:
            return False
        agg, _ = evaluate_model(m, samples, noise_frac=0.0, seed=7)
        row = {
            "epoch": epoch + 1,
            "voi": agg.voi,
            "ri": agg.ri,
            "sc": agg.sc,
            "elapsed_s": round(time.time() - t0, 1),
        }
        trajectory.append(row)
        print(json.dumps(row), flush=True)
        return agg.sc >= sc_min and agg.ri >= ri_min and agg.voi <= voi_max

    history = run_training(model, data, train_cfg, epoch_hook=hook)
    save_checkpoint(model, None, train_cfg, out / "overfit.pt", epoch=len(history) - 1)

    sweep = {}
    for noise in (0.0, 0.1, 0.2, 0.3):
        agg, _ = evaluate_model(model, samples, noise_frac=noise, seed=7)
        sweep[str(noise)] = {"voi": agg.voi, "ri": agg.ri, "sc": agg.sc}
        print(f"noise {noise:.1f}: voi={agg.voi:.3f} ri={agg.ri:.3f} sc={agg.sc:.3f}")

    (out / "result.json").write_text(
        json.dumps(
            {
                "epochs_run": len(history),
                "trajectory": trajectory,
                "noise_sweep": sweep,
                "elapsed_s": round(time.time() - t0, 1),
            },
            indent=2,
        )
    )
    print(f"wrote {out / 'result.json'}")


if __name__ == "__main__":
    main()
