"""AP at IoU thresholds, overlap-region pseudo-mask accuracy, and a
nearest-centre baseline labeller."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, ModelParams, forward
from .pseudolabel import PseudoMasks, teacher_step
from .scene import RegionPartition, Scene, macc_oracle, partition_regions
from .tensor import _sigmoid, no_grad

AP_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))


@dataclass
class PredictionSet:
    masks: np.ndarray     # P x N boolean
    classes: np.ndarray   # P
    scores: np.ndarray    # P

    def __len__(self):
        return len(self.classes)

    @classmethod
    def empty(cls, n: int) -> "PredictionSet":
        return cls(np.zeros((0, n), dtype=bool), np.zeros(0, dtype=np.int64), np.zeros(0))


@dataclass
class MetricReport:
    ap: float
    ap50: float
    ap25: float
    macc: float = float("nan")
    per_class: dict = field(default_factory=dict)
    per_threshold: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"AP": self.ap, "AP50": self.ap50, "AP25": self.ap25,
                "mACC": None if np.isnan(self.macc) else self.macc,
                "per_class": self.per_class,
                "per_threshold": {f"{k:.2f}": v for k, v in self.per_threshold.items()}}


def extract_predictions(params: ModelParams, cfg: ModelConfig, scene: Scene) -> PredictionSet:
    """Hard masks (rho >= 0.5) with class = argmax over real classes and
    score = class probability x mean rho inside the mask. No-object and
    empty-mask queries are dropped."""
    with no_grad():
        out = forward(params, cfg, scene.points)
    rho = _sigmoid(out.logits.data.astype(np.float64))
    z = out.class_logits.data.astype(np.float64)
    prob = np.exp(z - z.max(axis=1, keepdims=True))
    prob /= prob.sum(axis=1, keepdims=True)
    best = prob.argmax(axis=1)
    masks = rho >= 0.5
    keep = (best != cfg.num_classes) & masks.any(axis=1)
    if not keep.any():
        return PredictionSet.empty(scene.num_points)
    masks = masks[keep]
    rho = rho[keep]
    cls = best[keep]
    mask_score = (rho * masks).sum(axis=1) / masks.sum(axis=1)
    return PredictionSet(masks, cls.astype(np.int64), prob[keep, cls] * mask_score)


def mask_iou(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """P x G IoU between boolean mask stacks."""
    p = pred.astype(np.float64)
    g = gt.astype(np.float64)
    inter = p @ g.T
    union = p.sum(axis=1)[:, None] + g.sum(axis=1)[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1), 0.0)


def average_precision(tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated area under the precision/recall curve."""
    if n_gt == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(((mrec[steps] - mrec[steps - 1]) * mpre[steps]).sum())


def _gt_sets(scene: Scene):
    return scene.instance_masks(), scene.classes


def compute_ap(preds: list[PredictionSet], scenes: list[Scene],
               thresholds=AP_THRESHOLDS + (0.25,)) -> dict:
    """AP per IoU threshold and per class over a corpus.

    Within each class predictions are ranked by score across the corpus and
    greedily matched to the free ground truth of the same class and scene
    with the highest IoU at or above the threshold.
    Returns ``{"per_threshold": {t: AP}, "per_class": {t: {cls: AP}}}``.
    """
    gts = [_gt_sets(s) for s in scenes]
    classes = sorted({int(c) for _, cl in gts for c in cl})
    ious = [mask_iou(p.masks, g) if len(p) else np.zeros((0, len(cl))) for p, (g, cl) in zip(preds, gts)]
    per_t, per_c = {}, {}
    for t in thresholds:
        class_ap = {}
        for c in classes:
            n_gt = sum(int((cl == c).sum()) for _, cl in gts)
            entries = [(-float(p.scores[i]), s, i) for s, p in enumerate(preds)
                       for i in np.flatnonzero(p.classes == c)]
            entries.sort()
            taken = [np.zeros(len(cl), dtype=bool) for _, cl in gts]
            tp = []
            for _, s, i in entries:
                cand = np.where((gts[s][1] == c) & ~taken[s], ious[s][i], -1.0)
                j = int(np.argmax(cand)) if len(cand) else -1
                if j >= 0 and cand[j] >= t:
                    taken[s][j] = True
                    tp.append(1)
                else:
                    tp.append(0)
            class_ap[c] = average_precision(np.array(tp), n_gt)
        per_c[float(t)] = class_ap
        per_t[float(t)] = float(np.mean(list(class_ap.values()))) if class_ap else 0.0
    return {"per_threshold": per_t, "per_class": per_c}


def summarize_ap(result: dict) -> tuple[float, float, float]:
    pt = result["per_threshold"]
    vals = [pt[float(t)] for t in AP_THRESHOLDS]
    ap = min(float(np.mean(vals)), max(vals))  # a mean never exceeds its largest term; undo rounding
    return ap, pt[0.5], pt[0.25]


def compute_macc(pseudo: PseudoMasks, truth: np.ndarray, partition: RegionPartition) -> float:
    """Binary pseudo-mask accuracy over all overlap points, averaged over the
    instances that are a candidate for at least one of them. NaN without
    overlap."""
    if partition.num_overlap == 0:
        return float("nan")
    truth = np.asarray(truth)
    accs = [float(((pseudo.assignment == k) == (truth == k)).mean())
            for k in np.flatnonzero(partition.m_u.any(axis=0))]
    return float(np.mean(accs)) if accs else float("nan")


def nearest_center_baseline(partition: RegionPartition, scene: Scene) -> PseudoMasks:
    """Give each overlap point to the candidate box with the nearest centre."""
    idx = partition.overlap_idx
    k = partition.num_instances
    if len(idx) == 0:
        return PseudoMasks(idx, np.empty(0, dtype=np.intp), np.zeros((k, 0), dtype=bool))
    d = ((scene.xyz[idx, None, :] - scene.centers[None, :, :]) ** 2).sum(axis=2)
    d = np.where(partition.inside[idx], d, np.inf)
    a = np.argmin(d, axis=1)
    return PseudoMasks(idx, a, a[None, :] == np.arange(k)[:, None])


def corpus_macc(values) -> float:
    vals = [v for v in values if not np.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def teacher_macc(params: ModelParams, cfg: ModelConfig, scenes: list[Scene],
                 center_refine: bool = True) -> float:
    vals = []
    for s in scenes:
        part = partition_regions(s)
        if part.num_overlap == 0:
            continue
        out = teacher_step(params, cfg, s, part, center_refine=center_refine)
        vals.append(compute_macc(out.pseudo, macc_oracle(part, s), part))
    return corpus_macc(vals)


def baseline_macc(scenes: list[Scene]) -> float:
    vals = []
    for s in scenes:
        part = partition_regions(s)
        if part.num_overlap:
            vals.append(compute_macc(nearest_center_baseline(part, s), macc_oracle(part, s), part))
    return corpus_macc(vals)


def evaluate(student: ModelParams, cfg: ModelConfig, scenes: list[Scene],
             teacher: ModelParams | None = None, center_refine: bool = True) -> MetricReport:
    preds = [extract_predictions(student, cfg, s) for s in scenes]
    res = compute_ap(preds, scenes)
    ap, ap50, ap25 = summarize_ap(res)
    per_class = {}
    for c in res["per_class"][0.5]:
        per_class[str(c)] = {
            "AP": float(np.mean([res["per_class"][float(t)][c] for t in AP_THRESHOLDS])),
            "AP50": res["per_class"][0.5][c],
            "AP25": res["per_class"][0.25][c],
        }
    macc = teacher_macc(teacher, cfg, scenes, center_refine) if teacher is not None else float("nan")
    return MetricReport(ap, ap50, ap25, macc, per_class, res["per_threshold"])
