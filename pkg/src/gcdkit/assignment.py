"""Exact minimum-cost bipartite assignment.

Shortest-augmenting-path implementation with row/column potentials
(the O(n^2 m) Hungarian variant). Handles rectangular cost matrices with
n_rows <= n_cols directly; callers with more rows than columns transpose.
"""

from __future__ import annotations

import numpy as np


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Assign each row to a distinct column minimizing total cost.

    Parameters
    ----------
    cost : (n, m) array with n <= m, all entries finite.

    Returns
    -------
    col_for_row : (n,) int array, the column matched to each row (injective).
    total : float, sum of the selected entries.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-d matrix")
    n, m = cost.shape
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    if n > m:
        raise ValueError(f"need n_rows <= n_cols, got {n} x {m}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")

    # 1-based potentials/matching with a virtual column 0.
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=int)  # match[j] = row occupying column j (0 = free)
    way = np.zeros(m + 1, dtype=int)

    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            # next column to scan: unused column with smallest tentative cost
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        # augment along the stored path
        while j0 != 0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    col_for_row = np.full(n, -1, dtype=int)
    for j in range(1, m + 1):
        if match[j] != 0:
            col_for_row[match[j] - 1] = j - 1
    total = float(cost[np.arange(n), col_for_row].sum())
    return col_for_row, total
