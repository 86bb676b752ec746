"""Command-line entry point.

Subcommands: gen-synth, pretrain, finetune, infer, eval, report.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric fault.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml
from PIL import Image

from .config import (
    DetectorConfig,
    RunConfig,
    SceneConfig,
    TrainConfig,
    run_config_from_dict,
)
from .data import (
    generate_synthetic_scene,
    load_dataset,
    manifest_writer,
    save_sample,
)
from .data.io import read_labels, write_labels
from .data.types import BoxPrompt, PseudoLabelSet
from .detector import Detection, filter_detections, oracle_boxes
from .errors import ConfigError, DataError, PlanePromptError
from .inference import evaluate_model, predict_partition
from .metrics import evaluate_dataset
from .training import load_checkpoint, run_training, save_checkpoint
from .model.network import build_model


def _load_config(path: Optional[str]) -> tuple:
    """Returns (RunConfig, raw dict). Missing path gives pure defaults."""
    if path is None:
        return RunConfig(), {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    return run_config_from_dict(raw), raw


def _train_config_for_phase(cfg: RunConfig, raw: dict, phase: str) -> TrainConfig:
    """Use phase-appropriate defaults when the file has no train block."""
    if "train" not in raw:
        defaults = (
            TrainConfig.pretrain_defaults()
            if phase == "pretrain"
            else TrainConfig.finetune_defaults()
        )
        defaults.loss = cfg.train.loss
        return defaults
    cfg.train.phase = phase
    cfg.train.validate()
    return cfg.train


def cmd_gen_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = SceneConfig(
        size=args.size, planes_min=args.planes_min, planes_max=args.planes_max
    )
    scene.validate()
    manifest_path = out_dir / "manifest.jsonl"
    written = 0
    with manifest_writer(manifest_path) as emit:
        for i in range(args.count):
            sample, _ = generate_synthetic_scene(args.seed + i, scene)
            emit(save_sample(sample, out_dir))
            written += 1
    print(f"wrote {written} samples to {out_dir} (manifest {manifest_path.name})")
    return 0


def _epoch_log(log_path: Path):
    fh = open(log_path, "a", encoding="utf-8")

    def log(row: dict) -> None:
        fh.write(json.dumps(row) + "\n")
        fh.flush()

    return log


def _run_phase(args, phase: str) -> int:
    cfg, raw = _load_config(args.config)
    train_cfg = _train_config_for_phase(cfg, raw, phase)
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    if args.batch is not None:
        train_cfg.batch_size = args.batch
    manifest = args.manifest or cfg.data.manifest
    if manifest is None:
        raise ConfigError("no dataset: set data.manifest in the config or pass --manifest")

    samples = load_dataset(Path(manifest))
    if phase == "pretrain":
        dataset = []
        for s in samples:
            if s.annotation is None:
                continue
            labels = PseudoLabelSet(
                masks=[m.copy() for m in s.annotation.masks], source="raster"
            )
            dataset.append((s, labels))
    else:
        dataset = [(s, s.annotation) for s in samples if s.annotation is not None]
    if not dataset:
        raise DataError("no annotated samples in the dataset")

    if phase == "finetune" and args.init:
        model, _, _, _ = load_checkpoint(args.init)
        if dataclasses.asdict(model.cfg) != dataclasses.asdict(cfg.backbone):
            print(
                "note: backbone config taken from the init checkpoint", file=sys.stderr
            )
    else:
        model = build_model(cfg.backbone, seed=train_cfg.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = _epoch_log(out_dir / f"{phase}_log.jsonl")
    ckpt_path = out_dir / f"{phase}.pt"

    state = {"epoch": -1}

    def epoch_hook(epoch: int, current_model) -> bool:
        save_checkpoint(current_model, None, train_cfg, ckpt_path, epoch=epoch)
        state["epoch"] = epoch
        return False

    try:
        history = run_training(
            model,
            dataset,
            train_cfg,
            d_max=cfg.data.d_max,
            log=log,
            epoch_hook=epoch_hook,
        )
    except PlanePromptError:
        if state["epoch"] >= 0:
            print(
                f"aborted; last good checkpoint is epoch {state['epoch']} at {ckpt_path}",
                file=sys.stderr,
            )
        raise
    final_loss = history[-1]["mean_loss"]
    print(f"{phase} finished: {len(history)} epochs, final mean loss {final_loss}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_pretrain(args) -> int:
    return _run_phase(args, "pretrain")


def cmd_finetune(args) -> int:
    return _run_phase(args, "finetune")


def _read_box_file(path: Path) -> dict:
    """Per-image box lists: JSONL records {image_id, boxes, scores?}."""
    if not path.exists():
        raise DataError(f"box file not found: {path}")
    by_id = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: bad box record: {exc}") from exc
        boxes = rec.get("boxes", [])
        scores = rec.get("scores", [1.0] * len(boxes))
        dets = [
            Detection(box=BoxPrompt(*map(float, b)), score=float(s))
            for b, s in zip(boxes, scores)
        ]
        by_id[str(rec["image_id"])] = dets
    return by_id


def cmd_infer(args) -> int:
    cfg, _ = _load_config(args.config)
    det_cfg: DetectorConfig = cfg.detector
    if args.noise is not None:
        det_cfg.noise_frac = args.noise
        det_cfg.validate()
    model, _, _, _ = load_checkpoint(args.checkpoint)
    samples = load_dataset(Path(args.manifest))
    box_source = _read_box_file(Path(args.boxes)) if args.boxes else None
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    skipped: List[str] = []
    with manifest_writer(out_dir / "predictions.jsonl") as emit, open(
        out_dir / "prompts.jsonl", "w", encoding="utf-8"
    ) as prompts_fh:
        for sample in samples:
            if box_source is not None:
                if sample.id not in box_source:
                    skipped.append(sample.id)
                    continue
                dets = box_source[sample.id]
            else:
                if sample.annotation is None:
                    skipped.append(sample.id)
                    continue
                dets = oracle_boxes(
                    sample.annotation,
                    det_cfg.noise_frac,
                    rng,
                    sample.width,
                    sample.height,
                )
            dets = filter_detections(dets, det_cfg.score_thresh, det_cfg.max_dets)
            partition, records = predict_partition(
                model, sample, dets, d_max=cfg.data.d_max
            )
            pred_name = f"{sample.id}_pred.png"
            write_labels(out_dir / pred_name, partition)
            emit({"id": sample.id, "pred_path": pred_name})
            for k, rec in enumerate(records):
                # per-prompt binary mask raster alongside the partition
                mask = rec.pop("mask").astype(np.uint8) * 255
                mask_name = f"{sample.id}_prompt{k:03d}.png"
                Image.fromarray(mask, mode="L").save(out_dir / mask_name)
                rec["mask_path"] = mask_name
                prompts_fh.write(json.dumps(rec) + "\n")
    if skipped:
        print(f"skipped {len(skipped)} images without boxes: {', '.join(skipped)}")
    print(f"predictions written to {out_dir}")
    return 0


def _format_table(rows: List[tuple], header: tuple) -> str:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append(
            "\t".join(
                f"{v:.4f}" if isinstance(v, float) else str(v) for v in row
            )
        )
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    pred_manifest = Path(args.pred)
    gt_manifest = Path(args.gt)
    preds = {}
    for line in pred_manifest.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            preds[str(rec["id"])] = pred_manifest.parent / rec["pred_path"]
    from .data.io import read_manifest

    gts = {}
    for rec in read_manifest(gt_manifest):
        if rec.get("label_path"):
            gts[str(rec["id"])] = gt_manifest.parent / rec["label_path"]

    missing_pred = sorted(set(gts) - set(preds))
    missing_gt = sorted(set(preds) - set(gts))
    if missing_pred or missing_gt:
        raise DataError(
            "id mismatch between prediction and GT manifests; "
            f"missing predictions: {missing_pred or 'none'}; "
            f"missing ground truths: {missing_gt or 'none'}"
        )

    ids = sorted(preds)
    pairs = [(read_labels(preds[i]), read_labels(gts[i])) for i in ids]
    agg, per_image = evaluate_dataset(pairs, ids=ids)

    rows = [(i, m.voi, m.ri, m.sc) for i, m in zip(ids, per_image)]
    rows.append(("mean", agg.voi, agg.ri, agg.sc))
    table = _format_table(rows, header=("id", "voi", "ri", "sc"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.tsv").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_report(args) -> int:
    cfg, _ = _load_config(args.config)
    model, _, _, _ = load_checkpoint(args.checkpoint)
    samples = [
        s for s in load_dataset(Path(args.manifest)) if s.annotation is not None
    ]
    if not samples:
        raise DataError("report needs annotated samples")
    noise_levels = list(cfg.eval.noise_levels)
    seed = args.seed if args.seed is not None else 0

    sweep = {}
    for noise in noise_levels:
        agg, _ = evaluate_model(
            model, samples, noise_frac=noise, seed=seed, d_max=cfg.data.d_max
        )
        sweep[noise] = agg

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["box-noise sweep (oracle prompts)", ""]
    header = "metric\t" + "\t".join(f"{int(n * 100)}%" for n in noise_levels)
    lines.append(header)
    lines.append("voi\t" + "\t".join(f"{sweep[n].voi:.4f}" for n in noise_levels))
    lines.append("ri\t" + "\t".join(f"{sweep[n].ri:.4f}" for n in noise_levels))
    lines.append("sc\t" + "\t".join(f"{sweep[n].sc:.4f}" for n in noise_levels))
    report_text = "\n".join(lines) + "\n"
    (out_dir / "report.txt").write_text(report_text, encoding="utf-8")
    print(report_text, end="")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
        xs = [n * 100 for n in noise_levels]
        for ax, key, label in zip(
            axes, ("voi", "ri", "sc"), ("VOI (down)", "RI (up)", "SC (up)")
        ):
            ax.plot(xs, [getattr(sweep[n], key) for n in noise_levels], marker="o")
            ax.set_xlabel("box noise (%)")
            ax.set_title(label)
            ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_dir / "report.png", dpi=120)
        print(f"plot: {out_dir / 'report.png'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planeprompt",
        description="Box-prompted plane instance segmentation on RGB-D data.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="run config YAML")
    common.add_argument("--seed", type=int, default=None, help="seed override")
    common.add_argument("--out", default="runs", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--planes-min", type=int, default=2)
    p.add_argument("--planes-max", type=int, default=8)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_synth)

    for phase, fn in (("pretrain", cmd_pretrain), ("finetune", cmd_finetune)):
        p = sub.add_parser(phase, parents=[common], help=f"run the {phase} phase")
        p.add_argument("--manifest", default=None, help="dataset manifest path")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch", type=int, default=None)
        if phase == "finetune":
            p.add_argument("--init", default=None, help="pretrain checkpoint to start from")
        p.set_defaults(func=fn)

    p = sub.add_parser("infer", parents=[common], help="predict partitions from boxes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--boxes", default=None, help="JSONL per-image box lists")
    p.add_argument("--noise", type=float, default=None, help="oracle box noise override")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score predictions against GT")
    p.add_argument("--pred", required=True, help="predictions manifest JSONL")
    p.add_argument("--gt", required=True, help="dataset manifest with label paths")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="eval table + box-noise sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PlanePromptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 3)


if __name__ == "__main__":
    sys.exit(main())
