"""Mask, classification and student-teacher consistency losses."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

TERMS = ("bce", "dice", "cls", "q", "f")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"loss term '{term}' is not finite ({value})")
        self.term = term


@dataclass
class LossWeights:
    bce: float = 1.0
    dice: float = 1.0
    cls: float = 0.5
    q: float = 0.5
    f: float = 0.5

    @classmethod
    def scannet(cls) -> "LossWeights":
        return cls(1.0, 1.0, 0.5, 0.5, 0.5)

    @classmethod
    def s3dis(cls) -> "LossWeights":
        return cls(5.0, 1.0, 2.0, 2.0, 2.0)

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    bce: float = 0.0
    dice: float = 0.0
    cls: float = 0.0
    q: float = 0.0
    f: float = 0.0
    total: float = 0.0

    def weighted(self, w: LossWeights) -> float:
        return sum(getattr(w, t) * getattr(self, t) for t in TERMS)


def _const(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=like.dtype))


def bce_mask_loss(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy over all entries, from mask logits."""
    t = _const(target, logits)
    return T.reduce("mean", T.softplus(logits) - t * logits)


def dice_loss(logits: Tensor, target) -> Tensor:
    """Mean over rows of 1 - (2 p.t + 1) / (sum p + sum t + 1), p = sigmoid(logits)."""
    t = _const(target, logits)
    p = T.sigmoid(logits)
    num = T.scale(T.reduce("sum", p * t, axis=1), 2.0) + 1.0
    den = T.reduce("sum", p, axis=1) + (t.data.sum(axis=1) + 1.0)
    return T.reduce("mean", 1.0 - num / den)


def classification_targets(num_queries: int, queries: np.ndarray, classes: np.ndarray,
                           num_classes: int) -> np.ndarray:
    tgt = np.full(num_queries, num_classes, dtype=np.intp)  # no-object
    tgt[np.asarray(queries, dtype=np.intp)] = classes
    return tgt


def classification_loss(class_logits: Tensor, queries: np.ndarray, classes: np.ndarray) -> Tensor:
    """Cross-entropy; unmatched queries target the last (no-object) class."""
    nq, nc1 = class_logits.shape
    tgt = classification_targets(nq, queries, classes, nc1 - 1)
    onehot = np.zeros((nq, nc1), dtype=class_logits.dtype)
    onehot[np.arange(nq), tgt] = 1
    picked = T.reduce("sum", T.log_softmax(class_logits) * Tensor(onehot), axis=1)
    return T.scale(T.reduce("mean", picked), -1.0)


def query_consistency(q_student: Tensor, q_teacher) -> Tensor:
    """Entrywise L1 distance between content queries, averaged over entries."""
    q_teacher = _const(q_teacher, q_student)
    if q_student.shape != q_teacher.shape:
        raise ShapeError(f"query shapes differ: {q_student.shape} vs {q_teacher.shape}")
    return T.scale(T.reduce("l1", q_student - q_teacher), 1.0 / q_student.data.size)


def masked_feature_mean(feats, mask) -> tuple[object, int]:
    """Mean feature of the rows selected by a binary mask, and the row count.

    Works on numpy arrays and on Tensors (the Tensor result is 1 x C_f);
    an empty mask gives ``(None, 0)``.
    """
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return None, 0
    if isinstance(feats, Tensor):
        w = Tensor((mask / n)[None, :].astype(feats.dtype))
        return w @ feats, n
    return np.asarray(feats)[mask].mean(axis=0), n


def masked_feature_consistency(feats_teacher: np.ndarray, teacher_masks: np.ndarray,
                               feats_student: Tensor, student_masks: np.ndarray) -> Tensor:
    """Squared L2 distance between per-instance mean features, averaged over instances.

    Masks are constant selectors; only the student features carry gradient.
    Instances empty on either side are skipped.
    """
    teacher_masks = np.asarray(teacher_masks, dtype=bool)
    student_masks = np.asarray(student_masks, dtype=bool)
    n_t = teacher_masks.sum(axis=1)
    n_s = student_masks.sum(axis=1)
    keep = (n_t > 0) & (n_s > 0)
    if not keep.any():
        log.warning("no instance has a non-empty student and teacher mask; L_f = 0")
        return Tensor(np.zeros((), dtype=feats_student.dtype))
    if not keep.all():
        log.debug("L_f skips empty instances %s", np.flatnonzero(~keep).tolist())
    w_s = (student_masks[keep] / n_s[keep, None]).astype(feats_student.dtype)
    mean_s = Tensor(w_s) @ feats_student
    mean_t = (teacher_masks[keep] / n_t[keep, None]) @ np.asarray(feats_teacher, dtype=np.float64)
    diff = mean_s - Tensor(mean_t.astype(feats_student.dtype))
    return T.scale(T.reduce("sql2", diff), 1.0 / int(keep.sum()))


def total_loss(parts: dict[str, Tensor], weights: LossWeights) -> tuple[Tensor, LossReport]:
    """L_mask + w_q L_q + w_f L_f. Missing parts count as zero."""
    report = LossReport()
    total = None
    for term in TERMS:
        part = parts.get(term)
        if part is None:
            continue
        value = float(part.data)
        if not math.isfinite(value):
            raise NonFiniteLossError(term, value)
        setattr(report, term, value)
        w = getattr(weights, term)
        if w == 0:
            continue
        contrib = T.scale(part, w)
        total = contrib if total is None else total + contrib
    if total is None:
        some = next(iter(parts.values()), None)
        dtype = some.dtype if some is not None else np.float64
        total = Tensor(np.zeros((), dtype=dtype))
    report.total = float(total.data)
    if not math.isfinite(report.total):
        raise NonFiniteLossError("total", report.total)
    return total, report
