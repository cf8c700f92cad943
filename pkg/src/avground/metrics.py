"""Localization evaluation metrics.

All metrics consume plain numpy heatmaps and boolean ground-truth masks, are
pure functions, and are invariant to record order.  Conventions used
throughout (each is a config knob where the protocols differ between
benchmarks):

* binarization is ``value >= threshold``; the adaptive variant thresholds each
  heatmap at ``delta * max(heatmap)``
* IoU of two empty sets is 1.0; empty versus nonempty is 0.0
* success-ratio curves sweep the IoU threshold over 0..1 in fixed steps and
  are integrated with the trapezoid rule
* average precision integrates the monotone (envelope-interpolated) PR curve
* the F-measure weights precision via beta^2 (default 0.3)

Detection metrics treat a record as detected when its confidence (heatmap
maximum) clears the swept threshold.  A detection on a matched record is a
true positive only when its binarized map overlaps ground truth with IoU >=
0.5; detections on mismatched or silent records, and mislocalized detections
on matched records, are false positives.  Recall counts all matched records.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .config import EvalConfig
from .errors import InputError

IOU_GRID_STEP = 0.05


@dataclass
class EvalRecord:
    """One (image, audio) evaluation pair."""

    heatmap: np.ndarray
    gt_mask: np.ndarray  # boolean; all-false for silent/mismatched pairings
    pairing: str = "matched"  # matched | mismatched | silent
    image_id: str = ""
    class_id: int | None = None
    group_id: str | None = None

    def __post_init__(self) -> None:
        if self.heatmap.shape != self.gt_mask.shape:
            raise InputError("heatmap and ground truth must share a shape")
        if self.pairing not in ("matched", "mismatched", "silent"):
            raise InputError(f"unknown pairing {self.pairing!r}")

    @property
    def confidence(self) -> float:
        return float(self.heatmap.max())


@dataclass
class MultiSourceRecord:
    """Per-mixture predictions: (class, score, heatmap) triples plus per-class GT."""

    image_id: str
    predictions: list[tuple[int, float, np.ndarray]]
    gt_masks: dict[int, np.ndarray] = field(default_factory=dict)


# -- primitives -------------------------------------------------------------------


def binarize(heatmap: np.ndarray, threshold: float) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise InputError(f"threshold must lie in [0, 1], got {threshold}")
    return heatmap >= threshold


def adaptive_threshold(heatmap: np.ndarray, delta: float) -> float:
    return float(delta * heatmap.max())


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    if pred.shape != gt.shape:
        raise InputError("IoU inputs must share a shape")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def heatmap_binary(heatmap: np.ndarray, mode: str, cfg: EvalConfig) -> np.ndarray:
    if mode == "fixed":
        return binarize(heatmap, cfg.fixed_threshold)
    if mode == "adaptive":
        return heatmap >= adaptive_threshold(heatmap, cfg.adaptive_delta)
    raise InputError(f"mode must be fixed or adaptive, got {mode!r}")


def record_binary(record: EvalRecord, mode: str, cfg: EvalConfig) -> np.ndarray:
    return heatmap_binary(record.heatmap, mode, cfg)


def record_iou(record: EvalRecord, mode: str, cfg: EvalConfig) -> float:
    return iou(record_binary(record, mode, cfg), record.gt_mask)


def iou_grid() -> np.ndarray:
    return np.round(np.arange(0.0, 1.0 + IOU_GRID_STEP / 2, IOU_GRID_STEP), 10)


def auc_from_curve(thresholds: np.ndarray, success: np.ndarray) -> float:
    if len(thresholds) != len(success) or len(thresholds) < 2:
        raise InputError("curve needs matching threshold/success arrays of length >= 2")
    span = thresholds[-1] - thresholds[0]
    return float(np.trapezoid(success, thresholds) / span)


# -- single-source ------------------------------------------------------------------


def ciou_success(records: list[EvalRecord], mode: str, cfg: EvalConfig,
                 iou_threshold: float | None = None) -> float:
    if not records:
        raise InputError("cannot score an empty record set")
    bar = cfg.iou_success_threshold if iou_threshold is None else iou_threshold
    hits = sum(record_iou(r, mode, cfg) >= bar for r in records)
    return hits / len(records)


def auc(records: list[EvalRecord], mode: str, cfg: EvalConfig) -> float:
    if not records:
        raise InputError("cannot score an empty record set")
    ious = [record_iou(r, mode, cfg) for r in records]
    grid = iou_grid()
    success = np.array([sum(v >= t for v in ious) / len(ious) for t in grid])
    return auc_from_curve(grid, success)


def fscore(pred: np.ndarray, gt: np.ndarray, beta2: float) -> float:
    tp = np.logical_and(pred, gt).sum()
    if pred.sum() == 0 and gt.sum() == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision = tp / pred.sum()
    recall = tp / gt.sum()
    return float((1 + beta2) * precision * recall / (beta2 * precision + recall))


def segmentation_metrics(records: list[EvalRecord], mode: str, cfg: EvalConfig) -> tuple[float, float]:
    if not records:
        raise InputError("cannot score an empty record set")
    ious, fs = [], []
    for record in records:
        pred = record_binary(record, mode, cfg)
        ious.append(iou(pred, record.gt_mask))
        fs.append(fscore(pred, record.gt_mask, cfg.fscore_beta2))
    return float(np.mean(ious)), float(np.mean(fs))


# -- extended benchmark ----------------------------------------------------------------


def _localized(record: EvalRecord, cfg: EvalConfig, mode: str) -> bool:
    return record_iou(record, mode, cfg) >= cfg.iou_success_threshold


def detection_pr(records: list[EvalRecord], cfg: EvalConfig, mode: str = "adaptive") -> dict:
    """PR curve over the confidence sweep; returns AP, max-F1, and the raw arrays."""
    matched = [r for r in records if r.pairing == "matched"]
    negatives = [r for r in records if r.pairing != "matched"]
    if not matched or not negatives:
        raise InputError("detection PR needs both matched and mismatched/silent records")
    localized = {id(r): _localized(r, cfg, mode) for r in matched}
    thresholds = sorted({r.confidence for r in records}, reverse=True)
    precisions, recalls, f1s = [], [], []
    for c in thresholds:
        tp = sum(1 for r in matched if r.confidence >= c and localized[id(r)])
        fp = sum(1 for r in negatives if r.confidence >= c)
        fp += sum(1 for r in matched if r.confidence >= c and not localized[id(r)])
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / len(matched)
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    ap = average_precision(recalls, precisions)
    return {
        "ap": ap,
        "max_f1": max(f1s),
        "precision": np.array(precisions),
        "recall": np.array(recalls),
        "thresholds": np.array(thresholds),
    }


def average_precision(recalls: list[float], precisions: list[float]) -> float:
    """Area under the precision envelope as a function of recall."""
    order = np.argsort(recalls, kind="stable")
    r = np.array(recalls, dtype=np.float64)[order]
    p = np.array(precisions, dtype=np.float64)[order]
    # monotone envelope from the right: p_env(r) = max precision at recall >= r
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    ap = 0.0
    prev_r = 0.0
    for ri, pi in zip(r, p):
        ap += (ri - prev_r) * pi
        prev_r = ri
    return float(ap)


def loc_acc(records: list[EvalRecord], cfg: EvalConfig, mode: str = "adaptive") -> float:
    matched = [r for r in records if r.pairing == "matched"]
    if not matched:
        raise InputError("localization accuracy needs matched records")
    return sum(_localized(r, cfg, mode) for r in matched) / len(matched)


# -- interactive ------------------------------------------------------------------------


def group_records(records: list[EvalRecord]) -> tuple[dict[str, list[EvalRecord]], int]:
    """Group by group-id (falling back to image id); drop single-pairing groups."""
    groups: dict[str, list[EvalRecord]] = {}
    for record in records:
        key = record.group_id or record.image_id
        groups.setdefault(key, []).append(record)
    skipped = sum(1 for members in groups.values() if len(members) < 2)
    kept = {k: v for k, v in groups.items() if len(v) >= 2}
    return kept, skipped


def interactive_metrics(records: list[EvalRecord], mode: str, cfg: EvalConfig) -> dict:
    """Group success requires every pairing in a group to localize its own class."""
    groups, skipped = group_records(records)
    if not groups:
        raise InputError("interactive metrics need at least one multi-pairing group")
    group_min_iou = [
        min(record_iou(r, mode, cfg) for r in members) for members in groups.values()
    ]
    grid = iou_grid()
    success = np.array([sum(v >= t for v in group_min_iou) / len(group_min_iou) for t in grid])
    iiou = sum(v >= cfg.iou_success_threshold for v in group_min_iou) / len(group_min_iou)
    return {
        "iiou": iiou,
        "iauc": auc_from_curve(grid, success),
        "groups": len(group_min_iou),
        "skipped_groups": skipped,
    }


# -- multi-source -------------------------------------------------------------------------


def _class_detections(records: list[MultiSourceRecord], cfg: EvalConfig, mode: str):
    """Flatten per-class detections: class -> [(score, hit)], plus GT counts."""
    per_class: dict[int, list[tuple[float, bool]]] = {}
    gt_counts: dict[int, int] = {}
    for record in records:
        for class_id in record.gt_masks:
            gt_counts[class_id] = gt_counts.get(class_id, 0) + 1
        for class_id, score, heatmap in record.predictions:
            gt = record.gt_masks.get(class_id)
            hit = gt is not None and iou(heatmap_binary(heatmap, mode, cfg), gt) >= cfg.iou_success_threshold
            per_class.setdefault(class_id, []).append((score, hit))
    return per_class, gt_counts


def _detection_ap(detections: list[tuple[float, bool]], n_gt: int) -> float:
    """AP from scored detections against a known positive count."""
    if n_gt == 0:
        return 0.0
    ordered = sorted(detections, key=lambda item: -item[0])
    recalls, precisions = [], []
    tp = fp = 0
    for _score, hit in ordered:
        if hit:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_gt)
    if not recalls:
        return 0.0
    return average_precision(recalls, precisions)


def multisource_metrics(records: list[MultiSourceRecord], cfg: EvalConfig, mode: str = "adaptive") -> dict:
    if not records:
        raise InputError("cannot score an empty mixture set")
    for record in records:
        if len(record.gt_masks) > 4 or len(record.predictions) > 4:
            raise InputError("permutation search supports at most 4 sources per image")

    # class-aware AP: detections keep their predicted class labels
    per_class, gt_counts = _class_detections(records, cfg, mode)
    class_ids = sorted(gt_counts)
    cap = float(np.mean([
        _detection_ap(per_class.get(c, []), gt_counts[c]) for c in class_ids
    ]))

    # permutation-invariant AP: per image, re-label predictions by the
    # assignment to GT classes that maximizes total IoU, then score as above
    relabeled: list[MultiSourceRecord] = []
    for record in records:
        relabeled.append(MultiSourceRecord(
            record.image_id, _best_assignment(record, cfg, mode), record.gt_masks
        ))
    per_class_p, _ = _class_detections(relabeled, cfg, mode)
    piap = float(np.mean([
        _detection_ap(per_class_p.get(c, []), gt_counts[c]) for c in class_ids
    ]))

    # class-aware success ratios over all (image, GT class) pairs
    pair_ious = []
    for record in records:
        predicted = {c: heatmap for c, _s, heatmap in record.predictions}
        for class_id, gt in sorted(record.gt_masks.items()):
            if class_id in predicted:
                pair_ious.append(iou(heatmap_binary(predicted[class_id], mode, cfg), gt))
            else:
                pair_ious.append(0.0)
    grid = iou_grid()
    success = np.array([sum(v >= t for v in pair_ious) / len(pair_ious) for t in grid])
    out = {
        "cap": cap,
        "piap": piap,
        "auc": auc_from_curve(grid, success),
        "pairs": len(pair_ious),
    }
    for pct in (10, 30, 50):
        out[f"ciou@{pct}"] = sum(v >= pct / 100 for v in pair_ious) / len(pair_ious)
    return out


def _best_assignment(record: MultiSourceRecord, cfg: EvalConfig, mode: str) -> list[tuple[int, float, np.ndarray]]:
    """Relabel predictions with GT classes under the max-total-IoU assignment."""
    gt_ids = sorted(record.gt_masks)
    preds = record.predictions
    if not preds or not gt_ids:
        return list(preds)
    k = min(len(preds), len(gt_ids))
    best_total, best_map = -1.0, None
    for perm in permutations(gt_ids):
        total = sum(
            iou(heatmap_binary(preds[i][2], mode, cfg), record.gt_masks[perm[i]])
            for i in range(k)
        )
        if total > best_total:
            best_total, best_map = total, perm
    relabeled = []
    for i, (_cls, score, heatmap) in enumerate(preds):
        new_cls = best_map[i] if i < k else preds[i][0]
        relabeled.append((new_cls, score, heatmap))
    return relabeled


# -- boxes ------------------------------------------------------------------------------------


def mask_to_bbox(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    """Tight (x, y, w, h) box of on-pixels; None for an empty mask."""
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise InputError("mask must be binary")
        mask = mask.astype(bool)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    return (int(xs.min()), int(ys.min()),
            int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


def box_to_mask(box: tuple[int, int, int, int] | None, shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    if box is not None:
        x, y, w, h = box
        out[y:y + h, x:x + w] = True
    return out
