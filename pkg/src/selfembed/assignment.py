"""Minimum-cost perfect matching on dense square cost matrices.

``hungarian`` is the exact O(n^3) shortest-augmenting-path method with dual
potentials. ``auction`` is Bertsekas' epsilon-scaling auction; its final
assignment costs at most ``n * eps_final`` more than the optimum.
"""

import numpy as np

from ._accel import njit, use_numba


@njit
def _hungarian_kernel(cost):
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = INF
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row


def _hungarian_numpy(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    c = np.zeros((n + 1, n + 1))
    c[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = c[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[p[1:] - 1] = np.arange(n)
    return col_of_row


def hungarian(cost):
    """Exact assignment: returns ``col`` with ``col[i]`` the column matched to row ``i``."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"hungarian: expected a square matrix, got {cost.shape}")
    if cost.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    if use_numba():
        return _hungarian_kernel(cost)
    return _hungarian_numpy(cost)


@njit
def _auction_kernel(benefit, eps_start, eps_final, factor):
    n = benefit.shape[0]
    prices = np.zeros(n)
    owner = np.full(n, -1, dtype=np.int64)
    assigned = np.full(n, -1, dtype=np.int64)
    eps = eps_start
    while True:
        owner[:] = -1
        assigned[:] = -1
        unassigned = list(range(n))
        while len(unassigned) > 0:
            i = unassigned.pop()
            best = -np.inf
            second = -np.inf
            best_j = 0
            for j in range(n):
                val = benefit[i, j] - prices[j]
                if val > best:
                    second = best
                    best = val
                    best_j = j
                elif val > second:
                    second = val
            if n == 1:
                second = best
            prices[best_j] += best - second + eps
            prev = owner[best_j]
            owner[best_j] = i
            assigned[i] = best_j
            if prev >= 0:
                assigned[prev] = -1
                unassigned.append(prev)
        if eps <= eps_final:
            break
        eps = max(eps / factor, eps_final)
    return assigned


def _auction_numpy(benefit, eps_start, eps_final, factor):
    n = benefit.shape[0]
    prices = np.zeros(n)
    eps = eps_start
    while True:
        owner = np.full(n, -1, dtype=np.int64)
        assigned = np.full(n, -1, dtype=np.int64)
        unassigned = list(range(n))
        while unassigned:
            i = unassigned.pop()
            val = benefit[i] - prices
            best_j = int(np.argmax(val))
            best = val[best_j]
            if n > 1:
                val[best_j] = -np.inf
                second = val.max()
            else:
                second = best
            prices[best_j] += best - second + eps
            prev = owner[best_j]
            owner[best_j] = i
            assigned[i] = best_j
            if prev >= 0:
                assigned[prev] = -1
                unassigned.append(prev)
        if eps <= eps_final:
            return assigned
        eps = max(eps / factor, eps_final)


def auction(cost, eps_final=None, factor=4.0):
    """Approximate assignment by epsilon-scaling auction.

    Returns ``(col_of_row, bound)`` where ``bound = n * eps_final`` caps the
    excess of the returned total cost over the optimum.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.ndim != 2 or cost.shape[1] != n:
        raise ValueError(f"auction: expected a square matrix, got {cost.shape}")
    spread = float(cost.max() - cost.min()) if n else 0.0
    if eps_final is None:
        eps_final = max(spread, 1e-12) * 1e-4 / max(n, 1)
    eps_start = max(spread / 4.0, eps_final)
    if use_numba():
        assigned = _auction_kernel(-cost, eps_start, eps_final, factor)
    else:
        assigned = _auction_numpy(-cost, eps_start, eps_final, factor)
    return assigned, n * eps_final
