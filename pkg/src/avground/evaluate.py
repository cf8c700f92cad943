"""Evaluation harness: run inference over a manifest split and score it.

Task families and their ground-truth conventions:

* ``single``        matched pairs; ground truth is the target class's tight
                    bounding box rasterized to a mask (box protocol)
* ``segmentation``  matched pairs against exact pixel masks
* ``extended``      matched + mismatched + silent pairs; detection PR, AP,
                    max-F1, localization accuracy, confidence statistics
                    (box protocol for localization checks)
* ``interactive``   grouped pairings of one image with different sounds; all
                    pairings must localize their own class (pixel masks)
* ``multisource``   two-source mixtures scored per class with class-aware and
                    permutation-invariant average precision (pixel masks)

Each task can write a report bundle: JSON payload, scalar CSV, curve CSVs,
and rendered figures.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .captions import caption_embedding
from .config import Config
from .dataset import PairDataset, split_records
from .encoders import center_image
from .errors import InputError
from .heatmap_io import write_heatmap, write_overlay
from .metrics import (
    EvalRecord,
    MultiSourceRecord,
    auc,
    auc_from_curve,
    box_to_mask,
    ciou_success,
    detection_pr,
    group_records,
    interactive_metrics,
    iou_grid,
    loc_acc,
    multisource_metrics,
    record_iou,
    segmentation_metrics,
)
from .model import AudioVisualGrounder
from .synthdata import CLASS_NAMES, load_manifest, read_image, read_wav

TASKS = ("single", "segmentation", "extended", "interactive", "multisource")

TASK_VARIANTS = {
    "single": ("matched",),
    "segmentation": ("matched",),
    "extended": ("matched", "mismatched", "silent"),
    "interactive": ("interactive",),
    "multisource": ("mixture",),
}


def predict_heatmap(model: AudioVisualGrounder, pair) -> np.ndarray:
    return model.inference_heatmap(pair.image, pair.frames).numpy()


def _gt_for(dataset: PairDataset, record: dict, use_boxes: bool,
            shape: tuple[int, int]) -> np.ndarray:
    targets = record["target_classes"]
    if not targets:
        return np.zeros(shape, dtype=bool)
    target = targets[0]
    if use_boxes:
        return box_to_mask(record["boxes"][str(target)], shape)
    return dataset.gt_mask(record, target)


def build_eval_records(
    model: AudioVisualGrounder,
    dataset: PairDataset,
    task: str,
    heatmap_fn=None,
) -> list[EvalRecord]:
    use_boxes = task in ("single", "extended")
    out = []
    for index, record in enumerate(dataset.records):
        pair = dataset.load(index)
        heatmap = heatmap_fn(record) if heatmap_fn else predict_heatmap(model, pair)
        gt = _gt_for(dataset, record, use_boxes, heatmap.shape)
        out.append(EvalRecord(
            heatmap=heatmap,
            gt_mask=gt,
            pairing=record["pairing"],
            image_id=record["image"],
            class_id=record["target_classes"][0] if record["target_classes"] else None,
            group_id=record.get("group_id"),
        ))
    return out


def _argmax_inside(record: EvalRecord) -> bool:
    flat = int(np.argmax(record.heatmap))
    row, col = np.unravel_index(flat, record.heatmap.shape)
    return bool(record.gt_mask[row, col])


def _success_curve(records: list[EvalRecord], mode: str, cfg) -> tuple[np.ndarray, np.ndarray]:
    ious = [record_iou(r, mode, cfg) for r in records]
    grid = iou_grid()
    return grid, np.array([sum(v >= t for v in ious) / len(ious) for t in grid])


def evaluate_task(
    model: AudioVisualGrounder,
    cfg: Config,
    task: str,
    manifest: list[dict] | None = None,
    out_dir: str | Path | None = None,
    heatmap_fn=None,
) -> dict:
    """Score one task family on the test split; optionally write a report bundle."""
    if task not in TASKS:
        raise InputError(f"unknown task {task!r}; choose from {TASKS}")
    if manifest is None:
        manifest = load_manifest(cfg.data.root)
    records = [r for r in split_records(manifest, split="test")
               if r["variant"] in TASK_VARIANTS[task]]
    if not records:
        raise InputError(f"no test records with variants {TASK_VARIANTS[task]}")
    dataset = PairDataset(cfg.data.root, records, model.bank)
    ecfg = cfg.eval
    payload: dict = {"task": task, "records": len(records)}
    curves: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    if task == "multisource":
        payload.update(_evaluate_multisource(model, cfg, dataset, heatmap_fn))
    else:
        eval_records = build_eval_records(model, dataset, task, heatmap_fn)
        if task == "single":
            payload["metrics"] = {
                "ciou": ciou_success(eval_records, "fixed", ecfg),
                "ciou_adaptive": ciou_success(eval_records, "adaptive", ecfg),
                "auc": auc(eval_records, "fixed", ecfg),
                "auc_adaptive": auc(eval_records, "adaptive", ecfg),
            }
            curves["success_fixed"] = _success_curve(eval_records, "fixed", ecfg)
            curves["success_adaptive"] = _success_curve(eval_records, "adaptive", ecfg)
        elif task == "segmentation":
            miou, f = segmentation_metrics(eval_records, "fixed", ecfg)
            miou_a, f_a = segmentation_metrics(eval_records, "adaptive", ecfg)
            payload["metrics"] = {
                "miou": miou, "fscore": f,
                "miou_adaptive": miou_a, "fscore_adaptive": f_a,
            }
        elif task == "extended":
            pr = detection_pr(eval_records, ecfg)
            matched = [r for r in eval_records if r.pairing == "matched"]
            mismatched = [r for r in eval_records if r.pairing == "mismatched"]
            silent = [r for r in eval_records if r.pairing == "silent"]
            payload["metrics"] = {
                "ap": pr["ap"],
                "max_f1": pr["max_f1"],
                "loc_acc": loc_acc(eval_records, ecfg),
                "mean_confidence_matched": float(np.mean([r.confidence for r in matched])),
                "mean_confidence_mismatched": float(np.mean([r.confidence for r in mismatched])),
                "mean_confidence_silent": float(np.mean([r.confidence for r in silent])),
            }
            payload["pr_curve"] = {
                "precision": pr["precision"].tolist(),
                "recall": pr["recall"].tolist(),
                "thresholds": pr["thresholds"].tolist(),
            }
        elif task == "interactive":
            inter = interactive_metrics(eval_records, "fixed", ecfg)
            inter_a = interactive_metrics(eval_records, "adaptive", ecfg)
            groups, _skipped = group_records(eval_records)
            all_inside = [all(_argmax_inside(r) for r in members)
                          for members in groups.values()]
            payload["metrics"] = {
                "iiou": inter["iiou"],
                "iauc": inter["iauc"],
                "iiou_adaptive": inter_a["iiou"],
                "iauc_adaptive": inter_a["iauc"],
                "argmax_group_rate": sum(all_inside) / len(all_inside),
                "groups": inter["groups"],
            }

    if out_dir is not None:
        _write_bundle(Path(out_dir), task, payload, curves)
    return payload


def _evaluate_multisource(model, cfg: Config, dataset: PairDataset, heatmap_fn=None) -> dict:
    class_embeddings = torch.stack([
        caption_embedding(model.bank, name) for name in CLASS_NAMES
    ])
    k = cfg.eval.multisource_k
    ms_records = []
    top1_hits = 0
    for index, record in enumerate(dataset.records):
        pair = dataset.load(index)
        if heatmap_fn is not None:
            predictions = heatmap_fn(record)
        else:
            ranked = model.multisource_localize(pair.image, pair.frames, class_embeddings, k)
            predictions = [(cls, score, heat.numpy()) for cls, score, heat in ranked]
        gt_masks = {c: dataset.gt_mask(record, c) for c in record["target_classes"]}
        ms_records.append(MultiSourceRecord(record["image"], predictions, gt_masks))
        if predictions and predictions[0][0] in record["target_classes"]:
            top1_hits += 1
    metrics = multisource_metrics(ms_records, cfg.eval)
    metrics["top1_in_gt_rate"] = top1_hits / len(ms_records)
    return {"metrics": metrics, "k": k}


def _write_bundle(out_dir: Path, task: str, payload: dict, curves: dict) -> None:
    from . import reporting

    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_json(out_dir / f"{task}.json", payload)
    reporting.write_metrics_csv(out_dir / f"{task}.csv", payload.get("metrics", {}))
    if "pr_curve" in payload:
        pr = payload["pr_curve"]
        reporting.write_csv(
            out_dir / f"{task}_pr.csv",
            ["threshold", "precision", "recall"],
            list(map(list, zip(pr["thresholds"], pr["precision"], pr["recall"]))),
        )
        reporting.pr_curve_figure(out_dir / f"{task}_pr.png", pr["recall"],
                                  pr["precision"], payload["metrics"]["ap"])
    for name, (grid, success) in curves.items():
        reporting.write_csv(out_dir / f"{task}_{name}.csv", ["iou_threshold", "success"],
                            list(map(list, zip(grid.tolist(), success.tolist()))))
        reporting.success_curve_figure(out_dir / f"{task}_{name}.png", grid, success,
                                       f"{task} {name}")
        payload.setdefault("auc_check", {})[name] = auc_from_curve(grid, success)


def localize_pair(
    model: AudioVisualGrounder,
    image_path: str | Path,
    audio_path: str | Path,
    out_prefix: str | Path,
) -> dict:
    """Run one (image, audio) pair; write the raw heatmap and a PNG overlay."""
    try:
        image = read_image(Path(image_path))
        samples, _rate = read_wav(Path(audio_path))
    except FileNotFoundError as exc:
        raise InputError(f"cannot read input: {exc}") from exc
    frames = model.bank.encode_audio_frames(model.bank.compute_spectrogram(samples))
    heatmap = model.inference_heatmap(center_image(image), frames).numpy()
    out_prefix = Path(out_prefix)
    raw_path = out_prefix.with_suffix(".avh1")
    overlay_path = out_prefix.with_suffix(".png")
    write_heatmap(raw_path, heatmap)
    rgb = (image.permute(1, 2, 0).numpy() * 255).astype(np.uint8)
    write_overlay(overlay_path, rgb, heatmap)
    return {
        "heatmap": str(raw_path),
        "overlay": str(overlay_path),
        "confidence": float(heatmap.max()),
        "shape": list(heatmap.shape),
    }
