"""Farthest point sampling and minimum-cost bipartite matching."""
from __future__ import annotations

import numpy as np


def normalize_coords(xyz: np.ndarray) -> np.ndarray:
    """Map a scene into the unit cube: (p - min) / max extent."""
    xyz = np.asarray(xyz, dtype=np.float64)
    lo = xyz.min(axis=0)
    extent = float((xyz.max(axis=0) - lo).max())
    if extent <= 0:
        return np.zeros_like(xyz)
    return (xyz - lo) / extent


def farthest_point_sampling(coords: np.ndarray, n: int, start: int = 0) -> np.ndarray:
    """Greedy FPS. Each pick maximises the squared distance to the chosen
    prefix; ties go to the smallest index."""
    coords = np.asarray(coords, dtype=np.float64)
    m = coords.shape[0]
    if not 1 <= n <= m:
        raise ValueError(f"cannot sample {n} points from {m}")
    if not 0 <= start < m:
        raise ValueError(f"start index {start} out of range for {m} points")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite")

    picked = np.empty(n, dtype=np.intp)
    picked[0] = start
    mind = ((coords - coords[start]) ** 2).sum(axis=1)
    for t in range(1, n):
        nxt = int(np.argmax(mind))  # first maximum -> smallest index
        picked[t] = nxt
        mind = np.minimum(mind, ((coords - coords[nxt]) ** 2).sum(axis=1))
    return picked


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost assignment of every row to a distinct column.

    ``cost`` is K x Q with K <= Q. Returns ``cols`` with ``cols[k]`` the
    column matched to row ``k``. Shortest augmenting paths with dual
    potentials, O(K^2 Q).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    k, q = cost.shape
    if k > q:
        raise ValueError(f"more rows than columns ({k} > {q})")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    if k == 0:
        return np.empty(0, dtype=np.intp)

    # 1-based arrays; column 0 is the virtual source
    u = np.zeros(k + 1)
    v = np.zeros(q + 1)
    owner = np.zeros(q + 1, dtype=np.intp)  # row matched to each column, 0 = free
    way = np.zeros(q + 1, dtype=np.intp)
    for row in range(1, k + 1):
        owner[0] = row
        j0 = 0
        minv = np.full(q + 1, np.inf)
        used = np.zeros(q + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    cols = np.empty(k, dtype=np.intp)
    for j in range(1, q + 1):
        if owner[j]:
            cols[owner[j] - 1] = j - 1
    return cols


def assignment_cost(cost: np.ndarray, cols: np.ndarray) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[i, c] for i, c in enumerate(cols)))
