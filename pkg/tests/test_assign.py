import itertools

import numpy as np
import pytest

from boxseg.assign import (assignment_cost, farthest_point_sampling, hungarian,
                           normalize_coords)


def brute_force_min(cost):
    k, q = cost.shape
    best = None
    for cols in itertools.permutations(range(q), k):
        total = sum(cost[i, c] for i, c in enumerate(cols))
        best = total if best is None else min(best, total)
    return best


def fps_is_greedy_optimal(coords, picks):
    """Post-hoc: every pick has the largest squared distance to the chosen
    prefix, and no smaller index ties it."""
    mind = ((coords - coords[picks[0]]) ** 2).sum(axis=1)
    for p in picks[1:]:
        best = mind.max()
        if mind[p] != best or np.flatnonzero(mind == best)[0] != p:
            return False
        mind = np.minimum(mind, ((coords - coords[p]) ** 2).sum(axis=1))
    return True


def test_fps_unit_square():
    sq = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    picks = farthest_point_sampling(sq, 4, 0)
    assert picks[1] == 3  # diagonal corner at distance sqrt(2)
    assert sorted(picks.tolist()) == [0, 1, 2, 3]
    assert fps_is_greedy_optimal(sq, picks)


def test_fps_base_cases():
    rng = np.random.default_rng(0)
    pts = rng.uniform(size=(20, 3))
    assert farthest_point_sampling(pts, 1, 7).tolist() == [7]
    assert sorted(farthest_point_sampling(pts, 20, 0).tolist()) == list(range(20))
    with pytest.raises(ValueError):
        farthest_point_sampling(pts, 21)
    with pytest.raises(ValueError):
        farthest_point_sampling(pts, 2, start=20)


def test_fps_tie_breaks_to_smallest_index():
    # points 1 and 2 are equally far from point 0
    pts = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0]], dtype=float)
    assert farthest_point_sampling(pts, 2).tolist() == [0, 1]


def test_normalize_coords_unit_cube():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(50, 3)) * [3, 1, 0.5] + 10
    n = normalize_coords(x)
    assert n.min() == 0.0 and np.isclose(n.max(), 1.0)
    assert np.all(n.min(axis=0) == 0)


def test_hungarian_examples():
    cost = 1 - np.eye(3)
    assert hungarian(cost).tolist() == [0, 1, 2]
    cols = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert cols.tolist() == [0, 1]
    assert assignment_cost(np.array([[1.0, 2.0], [2.0, 1.0]]), cols) == 2.0


def test_hungarian_rejects_bad_input():
    with pytest.raises(ValueError):
        hungarian(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        hungarian(np.array([[0.0, np.inf]]))


@pytest.mark.parametrize("seed", range(5))
def test_hungarian_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        k = int(rng.integers(1, 6))
        q = int(rng.integers(k, 8))
        cost = rng.integers(-10, 30, size=(k, q)).astype(float)
        cols = hungarian(cost)
        assert len(set(cols.tolist())) == k
        assert assignment_cost(cost, cols) == brute_force_min(cost)


def test_hungarian_invariant_to_positive_scaling():
    rng = np.random.default_rng(9)
    cost = rng.integers(0, 50, size=(4, 6)).astype(float)
    cols = hungarian(cost)
    scaled = hungarian(cost * 3.0)
    assert assignment_cost(cost, scaled) == assignment_cost(cost, cols)
