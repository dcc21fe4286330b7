"""Minimum-cost bipartite assignment (shortest augmenting path, O(n^3)).

Rows and columns are scanned in ascending index order and ties in the
augmenting search resolve to the lowest column index, so the result is
deterministic.
"""

from __future__ import annotations

import numpy as np

INFEASIBLE = 1e9


def min_cost_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Assign every row of an n-by-m cost matrix (n <= m) to a distinct column.

    Returns (row, col) pairs sorted by row, minimizing total cost. For n > m
    the matrix is transposed internally. Empty dimensions yield an empty
    assignment.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    transposed = n > m
    if transposed:
        cost = np.ascontiguousarray(cost.T)
        n, m = m, n

    # Potentials u, v; col_to_row[m] is a virtual column holding the row
    # currently being inserted.
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    col_to_row = np.full(m + 1, -1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)

    for row in range(n):
        col_to_row[m] = row
        j0 = m
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_to_row[j0]
            cur = cost[i0, :] - u[i0] - v[:m]
            better = ~used[:m] & (cur < minv[:m])
            minv[:m][better] = cur[better]
            way[:m][better] = j0
            candidates = np.where(used[:m], np.inf, minv[:m])
            j1 = int(np.argmin(candidates))
            delta = candidates[j1]
            used_cols = np.flatnonzero(used)
            u[col_to_row[used_cols]] += delta
            v[used_cols] -= delta
            minv[~used] -= delta
            j0 = j1
            if col_to_row[j0] == -1:
                break
        while j0 != m:
            j1 = int(way[j0])
            col_to_row[j0] = col_to_row[j1]
            j0 = j1

    pairs = []
    for j in range(m):
        if col_to_row[j] != -1:
            pairs.append((int(col_to_row[j]), j))
    if transposed:
        pairs = [(j, i) for i, j in pairs]
    return sorted(pairs)
