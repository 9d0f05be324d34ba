"""Teacher-side pseudo-labelling of points that fall inside several boxes."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .assign import hungarian
from .losses import LossWeights
from .model import ModelConfig, ModelParams, forward
from .scene import RegionPartition, Scene
from .tensor import _sigmoid, no_grad

log = logging.getLogger(__name__)


@dataclass
class Match:
    queries: np.ndarray     # query matched to each instance
    rho_prime: np.ndarray   # K x N, rows of rho in instance order
    cost: np.ndarray        # K x N_Q


@dataclass
class PseudoMasks:
    overlap_idx: np.ndarray     # global indices of overlap points
    assignment: np.ndarray      # instance chosen for each overlap point
    m_hat_u: np.ndarray         # K x N_u boolean
    merged_target: np.ndarray | None = None  # K x N boolean


@dataclass
class TeacherOutput:
    pseudo: PseudoMasks
    match: Match
    content: np.ndarray     # Q^T_{c,L}
    feats: np.ndarray       # F^T
    position: np.ndarray

    @property
    def targets(self) -> np.ndarray:
        return self.pseudo.merged_target


def _softplus(x):
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def _softmax(x):
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def matching_cost(logits: np.ndarray, class_logits: np.ndarray, targets: np.ndarray,
                  classes: np.ndarray, weights: LossWeights,
                  valid: np.ndarray | None = None) -> np.ndarray:
    """K x N_Q cost: weighted BCE + dice over ``valid`` points minus class probability.

    ``logits`` are the N_Q x N mask logits; ``targets`` is K x N binary.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if valid is not None:
        logits = logits[:, valid]
        targets = targets[:, valid]
    n = logits.shape[1]
    if n:
        bce = (_softplus(logits).sum(axis=1)[None, :] - targets @ logits.T) / n
    else:
        bce = np.zeros((targets.shape[0], logits.shape[0]))
    p = _sigmoid(logits)
    dice = 1 - (2 * targets @ p.T + 1) / (targets.sum(axis=1)[:, None] + p.sum(axis=1)[None, :] + 1)
    prob = _softmax(np.asarray(class_logits, dtype=np.float64))
    cls = -prob[:, classes].T
    return weights.bce * bce + weights.dice * dice + weights.cls * cls


def match_queries(logits: np.ndarray, class_logits: np.ndarray, partition: RegionPartition,
                  classes: np.ndarray, weights: LossWeights) -> Match:
    """Hungarian matching of instances to queries using box labels only.

    Overlap points are left out of the cost since their labels are unknown;
    background points count as negatives for every instance.
    """
    k = partition.num_instances
    if k > logits.shape[0]:
        raise ValueError(f"{k} instances but only {logits.shape[0]} queries")
    empty = np.flatnonzero(partition.m_l.sum(axis=0) == 0)
    if len(empty):
        log.warning("instances %s have no single-box points; matched on negatives only", empty.tolist())
    valid = partition.kind != partition.OVERLAP
    cost = matching_cost(logits, class_logits, partition.m_l_full(), classes, weights, valid)
    queries = hungarian(cost)
    return Match(queries=queries, rho_prime=_sigmoid(np.asarray(logits, dtype=np.float64))[queries], cost=cost)


def assign_overlap(rho_prime: np.ndarray, partition: RegionPartition) -> PseudoMasks:
    """Each overlap point goes to its box candidate with the highest matched score.

    Ties resolve to the smallest instance index.
    """
    idx = partition.overlap_idx
    k = partition.num_instances
    if len(idx) == 0:
        return PseudoMasks(idx, np.empty(0, dtype=np.intp), np.zeros((k, 0), dtype=bool))
    scores = np.where(partition.inside[idx], rho_prime[:, idx].T, -np.inf)
    a = np.argmax(scores, axis=1)
    m_hat_u = a[None, :] == np.arange(k)[:, None]
    return PseudoMasks(idx, a, m_hat_u)


def build_targets(pseudo: PseudoMasks, partition: RegionPartition) -> np.ndarray:
    """K x N union of box labels on single-box points and overlap pseudo-masks."""
    target = partition.m_l_full()
    target[:, pseudo.overlap_idx] = pseudo.m_hat_u
    pseudo.merged_target = target
    return target


def teacher_step(params: ModelParams, cfg: ModelConfig, scene: Scene, partition: RegionPartition,
                 weights: LossWeights | None = None, center_refine: bool = True) -> TeacherOutput:
    """Run the teacher with gradients off and produce the student's targets."""
    weights = weights or LossWeights()
    with no_grad():
        out = forward(params, cfg, scene.points, scene.centers if center_refine else None)
    match = match_queries(out.logits.data, out.class_logits.data, partition, scene.classes, weights)
    pseudo = assign_overlap(match.rho_prime, partition)
    build_targets(pseudo, partition)
    return TeacherOutput(pseudo=pseudo, match=match, content=out.content.data,
                         feats=out.feats.data, position=np.asarray(
                             out.position.data if hasattr(out.position, "data") else out.position))
