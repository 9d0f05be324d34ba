"""Single-loop student-teacher training with an EMA teacher."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assign import hungarian
from .losses import (LossReport, LossWeights, NonFiniteLossError, bce_mask_loss,
                     classification_loss, dice_loss, masked_feature_consistency,
                     query_consistency, total_loss)
from .model import ModelConfig, ModelParams, forward, init_params
from .pseudolabel import TeacherOutput, matching_cost, teacher_step
from .scene import RegionPartition, Scene, partition_regions
from .tensor import Tape, Tensor, rows

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "bce", "dice", "cls", "q", "f", "total", "lr")


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    warmup_frac: float = 0.3
    max_lr_factor: float = 10.0
    final_div: float = 25.0
    ema_decay: float = 0.99
    grad_clip: float = 1.0
    seed: int = 0
    precision: str = "float32"
    center_refine: bool = True
    weights: LossWeights = field(default_factory=LossWeights)

    def validate(self):
        if not 0 <= self.ema_decay <= 1:
            raise ValueError(f"ema_decay must be in [0, 1], got {self.ema_decay}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")


def one_cycle_lr(step: int, cfg: TrainConfig) -> float:
    """Cosine warm-up from lr to max lr, then cosine decay to lr / final_div."""
    if not 0 <= step < cfg.steps:
        raise ValueError(f"step {step} outside [0, {cfg.steps})")
    peak = cfg.lr * cfg.max_lr_factor
    floor = cfg.lr / cfg.final_div
    last = cfg.steps - 1
    warm = int(round(cfg.warmup_frac * last))
    if step <= warm:
        if warm == 0:
            return cfg.lr if last == 0 else peak
        return peak + (cfg.lr - peak) * (1 + math.cos(math.pi * step / warm)) / 2
    return floor + (peak - floor) * (1 + math.cos(math.pi * (step - warm) / (last - warm))) / 2


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.05):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m[k] = b1 * self.m[k] + (1 - b1) * g
            v = self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data *= p.dtype.type(1 - lr * self.weight_decay)
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state(self):
        return self.t, {k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()}


def ema_update(teacher: ModelParams, student: ModelParams, alpha: float) -> ModelParams:
    """teacher <- alpha * teacher + (1 - alpha) * student, in place."""
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if teacher.shapes() != student.shapes():
        raise ValueError("teacher and student parameter shapes differ")
    for k, t in teacher.items():
        s = student[k].data
        t.data[...] = alpha * t.data + (1 - alpha) * s
    return teacher


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * grads[k].dtype.type(s)
    return norm


@dataclass
class StudentFrozen:
    """Decisions held constant while differentiating the student objective."""
    queries: np.ndarray          # student query matched to each instance
    hard_masks: np.ndarray       # K x N thresholded masks of those queries


def student_objective(params: ModelParams, cfg: ModelConfig, scene: Scene, teacher: TeacherOutput,
                      weights: LossWeights, frozen: StudentFrozen | None = None):
    """Student forward plus the full objective. Returns (total, report, frozen)."""
    out = forward(params, cfg, scene.points)
    targets = teacher.targets
    classes = scene.classes
    if frozen is None:
        cost = matching_cost(out.logits.data, out.class_logits.data, targets, classes, weights)
        queries = hungarian(cost)
        frozen = StudentFrozen(queries, out.logits.data[queries] >= 0)  # rho >= 0.5
    matched = rows(out.logits, frozen.queries)
    parts = {}
    if weights.bce:
        parts["bce"] = bce_mask_loss(matched, targets)
    if weights.dice:
        parts["dice"] = dice_loss(matched, targets)
    if weights.cls:
        parts["cls"] = classification_loss(out.class_logits, frozen.queries, classes)
    if weights.q:
        parts["q"] = query_consistency(out.content, teacher.content)
    if weights.f:
        parts["f"] = masked_feature_consistency(teacher.feats, targets, out.feats, frozen.hard_masks)
    total, report = total_loss(parts, weights)
    return total, report, frozen


@dataclass
class TrainState:
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    student: ModelParams
    teacher: ModelParams
    optimizer: AdamW
    step: int = 0
    metrics: list[dict] = field(default_factory=list)

    @classmethod
    def create(cls, model_cfg: ModelConfig, train_cfg: TrainConfig) -> "TrainState":
        train_cfg.validate()
        dtype = np.dtype(train_cfg.precision)
        student = init_params(model_cfg, seed=train_cfg.seed, dtype=dtype)
        teacher = student.copy(requires_grad=False)
        opt = AdamW(student, train_cfg.beta1, train_cfg.beta2, train_cfg.eps, train_cfg.weight_decay)
        return cls(model_cfg, train_cfg, student, teacher, opt)


def train_step(state: TrainState, scene: Scene, partition: RegionPartition) -> LossReport:
    """One optimisation step on one scene.

    Raises NonFiniteLossError before touching any state if the loss or the
    gradients are not finite.
    """
    cfg, tc = state.model_cfg, state.train_cfg
    try:
        teacher_out = teacher_step(state.teacher, cfg, scene, partition, tc.weights, tc.center_refine)
        state.student.zero_grad()
        with Tape() as tape:
            total, report, _ = student_objective(state.student, cfg, scene, teacher_out, tc.weights)
            tape.backward(total)
    except NonFiniteLossError:
        state.student.zero_grad()
        raise
    except FloatingPointError as exc:
        state.student.zero_grad()
        raise NonFiniteLossError("forward", float("nan")) from exc
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for k, t in state.student.items()}
    state.student.zero_grad()
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLossError(f"grad:{k}", float("nan"))

    lr = one_cycle_lr(state.step, tc)
    clip_grad_norm(grads, tc.grad_clip)
    state.optimizer.step(state.student, grads, lr)
    ema_update(state.teacher, state.student, tc.ema_decay)
    row = {"step": state.step, "bce": report.bce, "dice": report.dice, "cls": report.cls,
           "q": report.q, "f": report.f, "total": report.total, "lr": lr}
    state.metrics.append(row)
    state.step += 1
    return report


def train(scenes: list[Scene], model_cfg: ModelConfig, train_cfg: TrainConfig,
          state: TrainState | None = None, progress: bool = False) -> TrainState:
    """Run ``train_cfg.steps`` steps, one scene per step, epochs in shuffled order."""
    if not scenes:
        raise ValueError("empty corpus")
    state = state or TrainState.create(model_cfg, train_cfg)
    partitions = [partition_regions(s) for s in scenes]
    rng = np.random.default_rng(train_cfg.seed)
    order: list[int] = []
    attempts = 0
    while state.step < train_cfg.steps and attempts < 2 * train_cfg.steps:
        if not order:
            order = list(rng.permutation(len(scenes)))
        i = order.pop(0)
        attempts += 1
        try:
            report = train_step(state, scenes[i], partitions[i])
        except NonFiniteLossError as exc:
            log.error("step %d aborted (seed %d, scene %d): %s", state.step, train_cfg.seed, i, exc)
            continue
        if progress and (state.step % 50 == 0 or state.step == train_cfg.steps):
            log.info("step %d total %.4f", state.step, report.total)
    return state


def write_metrics(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r["step"]] + [repr(float(r[c])) for c in METRIC_COLUMNS[1:]])


def read_metrics(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()}
                for r in csv.DictReader(fh)]
