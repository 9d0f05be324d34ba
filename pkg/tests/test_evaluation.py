import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boxseg.evaluation import (AP_THRESHOLDS, PredictionSet, average_precision, compute_ap,
                               compute_macc, extract_predictions, mask_iou,
                               nearest_center_baseline, summarize_ap)
from boxseg.model import init_params
from boxseg.pseudolabel import PseudoMasks
from boxseg.scene import BACKGROUND, Instance, Scene, macc_oracle, partition_regions
from conftest import TINY_MODEL, hand_scene, tiny_scene


def toy_scene(masks, classes):
    """Scene whose instance masks are given directly (geometry irrelevant)."""
    masks = np.asarray(masks, dtype=bool)
    n = masks.shape[1]
    gt = np.full(n, BACKGROUND)
    for k, m in enumerate(masks):
        gt[m] = k
    inst = [Instance(np.zeros(3), np.ones(3), int(c)) for c in classes]
    return Scene(np.zeros((n, 6)), gt, inst)


def oracle_ap(preds, scenes, t, c):
    """Brute-force PR: enumerate every prediction of class c in score order,
    decide TP/FP against explicit python sets, then integrate the
    precision envelope at each recall step."""
    gts = []
    for s_i, s in enumerate(scenes):
        for k in range(s.num_instances):
            if s.instances[k].class_id == c:
                gts.append((s_i, k, set(np.flatnonzero(s.gt_instance == k))))
    if not gts:
        return None
    order = sorted(((-p.scores[i], s_i, i) for s_i, p in enumerate(preds)
                    for i in range(len(p)) if p.classes[i] == c))
    used, decisions = set(), []
    for _, s_i, i in order:
        pm = set(np.flatnonzero(preds[s_i].masks[i]))
        best, best_iou = None, -1.0
        for g_i, (gs, k, gm) in enumerate(gts):
            if gs != s_i or g_i in used:
                continue
            iou = len(pm & gm) / len(pm | gm) if pm | gm else 0.0
            if iou > best_iou:
                best, best_iou = g_i, iou
        hit = best is not None and best_iou >= t
        if hit:
            used.add(best)
        decisions.append(hit)
    prec, rec, tp = [], [], 0
    for r, hit in enumerate(decisions, 1):
        tp += hit
        prec.append(tp / r)
        rec.append(tp / len(gts))
    ap, last = 0.0, 0.0
    for r in range(len(rec)):
        if rec[r] > last:
            ap += (rec[r] - last) * max(prec[r:])
            last = rec[r]
    return ap


def random_corpus(rng, n_scenes=2, n=12):
    scenes, preds = [], []
    for _ in range(n_scenes):
        k = int(rng.integers(1, 4))
        labels = rng.integers(-1, k, size=n)
        labels[:k] = np.arange(k)
        masks = labels[None, :] == np.arange(k)[:, None]
        scenes.append(toy_scene(masks, rng.integers(0, 2, size=k)))
        p = int(rng.integers(0, 6))
        pm = rng.random((p, n)) < 0.4
        for j in range(p):
            if rng.random() < 0.5:
                src = masks[rng.integers(k)].copy()
                flip = rng.random(n) < 0.15
                pm[j] = src ^ flip
        preds.append(PredictionSet(pm, rng.integers(0, 2, size=p), rng.permutation(p) + rng.random()))
    return scenes, preds


def test_perfect_predictions():
    masks = np.array([[1, 1, 0, 0, 0], [0, 0, 1, 1, 0]], dtype=bool)
    s = toy_scene(masks, [0, 1])
    p = PredictionSet(masks.copy(), np.array([0, 1]), np.array([0.9, 0.8]))
    assert summarize_ap(compute_ap([p], [s])) == (1.0, 1.0, 1.0)


def test_empty_predictions():
    s = toy_scene([[1, 1, 0]], [0])
    assert summarize_ap(compute_ap([PredictionSet.empty(3)], [s])) == (0.0, 0.0, 0.0)


def test_two_instance_hand_case():
    gt = np.array([[1, 1, 1, 1, 0, 0, 0, 0, 0, 0],
                   [0, 0, 0, 0, 1, 1, 1, 1, 1, 0]], dtype=bool)
    s = toy_scene(gt, [0, 0])
    partial = np.array([0, 0, 0, 0, 1, 1, 0, 0, 0, 0], dtype=bool)   # 2 of 5 points
    assert mask_iou(partial[None], gt[1:])[0, 0] == pytest.approx(0.4)
    p = PredictionSet(np.stack([gt[0], partial]), np.array([0, 0]), np.array([0.9, 0.8]))
    res = compute_ap([p], [s])
    assert res["per_threshold"][0.5] == pytest.approx(0.5)
    assert res["per_threshold"][0.25] == pytest.approx(1.0)


def test_average_precision_reference():
    assert average_precision(np.array([1, 0, 1]), 2) == pytest.approx(1 * 0.5 + 2 / 3 * 0.5)
    assert average_precision(np.array([]), 3) == 0.0
    assert np.isnan(average_precision(np.array([1]), 0))


@pytest.mark.parametrize("seed", range(40))
def test_compute_ap_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    scenes, preds = random_corpus(rng, n_scenes=int(rng.integers(1, 4)))
    res = compute_ap(preds, scenes)
    for t, per_c in res["per_class"].items():
        for c, v in per_c.items():
            assert v == pytest.approx(oracle_ap(preds, scenes, t, c), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ap_ordering(seed):
    scenes, preds = random_corpus(np.random.default_rng(seed), 3)
    res = compute_ap(preds, scenes)
    ap, ap50, ap25 = summarize_ap(res)
    assert 0 <= ap <= ap50 <= ap25 <= 1
    vals = [res["per_threshold"][float(t)] for t in AP_THRESHOLDS]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def _pm(part, assignment):
    a = np.asarray(assignment)
    return PseudoMasks(part.overlap_idx, a, a[None, :] == np.arange(part.num_instances)[:, None])


def test_macc_oracle_and_inverse():
    s = hand_scene()
    p = partition_regions(s)
    truth = macc_oracle(p, s)
    assert compute_macc(_pm(p, truth), truth, p) == 1.0
    inv = np.where(truth == 1, 2, 1)    # both overlap points have candidates {1, 2}
    assert compute_macc(_pm(p, inv), truth, p) == 0.0


def test_macc_monte_carlo_half():
    rng = np.random.default_rng(0)
    n = 20000
    xyz = np.column_stack([rng.uniform(1.0, 2.0, n), rng.uniform(0, 1, n), rng.uniform(0, 1, n)])
    inst = [Instance(np.array([0.0, 0, 0]), np.array([2.0, 1, 1]), 0),
            Instance(np.array([1.0, 0, 0]), np.array([3.0, 1, 1]), 1)]
    gt = rng.integers(0, 2, n)
    s = Scene(np.column_stack([xyz, np.zeros((n, 3))]), gt, inst)
    p = partition_regions(s)
    assert p.num_overlap == n
    v = compute_macc(_pm(p, rng.integers(0, 2, n)), macc_oracle(p, s), p)
    assert abs(v - 0.5) < 0.02


def test_macc_no_overlap_is_nan():
    s = toy_scene([[1, 1, 0]], [0])
    p = partition_regions(s)
    assert np.isnan(compute_macc(_pm(p, []), macc_oracle(p, s), p))


def test_baseline_examples():
    inst = [Instance(np.array([0.0, 0, 0]), np.array([2.0, 2, 2]), 0),
            Instance(np.array([1.0, 0, 0]), np.array([3.0, 2, 2]), 1)]
    xyz = np.array([[1.0, 1, 1],      # centre of box 0
                    [2.0, 1, 1],      # centre of box 1
                    [1.5, 1, 1]])     # equidistant
    s = Scene(np.column_stack([xyz, np.zeros((3, 3))]), np.array([0, 1, 0]), inst)
    p = partition_regions(s)
    base = nearest_center_baseline(p, s)
    assert base.assignment.tolist() == [0, 1, 0]
    assert np.all(base.m_hat_u.sum(axis=0) == 1)


@pytest.mark.parametrize("seed", range(5))
def test_baseline_structure(seed):
    s = tiny_scene(seed)
    p = partition_regions(s)
    b = nearest_center_baseline(p, s)
    assert np.all(b.m_hat_u.sum(axis=0) == 1)
    assert np.all(~b.m_hat_u | p.inside[p.overlap_idx].T)


def test_extract_predictions():
    s = tiny_scene(0)
    params = init_params(TINY_MODEL, 0, np.float64)
    a = extract_predictions(params, TINY_MODEL, s)
    b = extract_predictions(params, TINY_MODEL, s)
    assert np.array_equal(a.masks, b.masks) and np.array_equal(a.scores, b.scores)
    assert np.all((a.scores >= 0) & (a.scores <= 1))
    assert a.masks.shape[1] == s.num_points and a.masks.any(axis=1).all()
    params["cls.b"].data[-1] = 100.0     # everything says no-object
    assert len(extract_predictions(params, TINY_MODEL, s)) == 0
