"""Square assignment solver used by the sub-trajectory matcher.

Shortest-augmenting-path Hungarian (O(n^3)) in min-cost form, returning dual
potentials. Every optimal assignment lies inside the subgraph of tight edges
(cost - u - v == 0), so the deterministic tie-break -- the lexicographically
smallest optimal assignment by (row, column) -- is found by greedy forcing
with augmenting-path feasibility checks on that subgraph.
"""

from __future__ import annotations

import numpy as np

# large enough that any assignment avoiding forbidden edges beats any using
# one (weights live in [0, 1]), small enough to keep float drift in the dual
# potentials far below the tie tolerance
FORBIDDEN = 1e3


def min_cost_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve the square min-cost assignment problem.

    Returns (col_of_row, u, v) where u, v are dual potentials satisfying
    u[i] + v[j] <= cost[i, j] with equality on assigned edges.
    """
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValueError("cost matrix must be square")
    if n == 0:
        return np.empty(0, dtype=np.int64), np.empty(0), np.empty(0)

    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row assigned to column j (1-based)
    way = np.zeros(n + 1, dtype=np.int64)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = -1
            cur = c[i0 - 1, :] - u[i0] - v[1:]
            better = ~used[1:] & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            free = ~used[1:]
            if np.any(free):
                idx = np.flatnonzero(free)
                k = idx[np.argmin(minv[1:][idx])]
                delta = minv[k + 1]
                j1 = k + 1
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][~used[1:]] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    col_of_row = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:].copy(), v[1:].copy()


def _kuhn_augment(row, adj, match_col, match_row, banned_col, banned_row):
    seen = set()

    def dfs(r):
        for c in adj[r]:
            if banned_col[c] or c in seen:
                continue
            seen.add(c)
            if match_col[c] == -1 or (not banned_row[match_col[c]] and dfs(match_col[c])):
                match_col[c] = r
                match_row[r] = c
                return True
        return False

    return dfs(row)


def lexicographic_optimal_assignment(cost: np.ndarray, tol: float = 1e-7) -> np.ndarray:
    """Min-cost assignment, ties broken toward the lexicographically smallest
    (row, column) pairing. Returns col_of_row.

    `tol` is an absolute slack threshold for tight edges: large enough to
    absorb float drift in the potentials, small enough that distinct affinity
    products are never merged into a spurious tie."""
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    col_of_row, u, v = min_cost_assignment(c)
    slack = c - u[:, None] - v[None, :]
    tight = slack <= tol
    adj = [np.flatnonzero(tight[i]).tolist() for i in range(n)]

    match_row = col_of_row.astype(np.int64).copy()
    match_col = np.full(n, -1, dtype=np.int64)
    for r, cc in enumerate(match_row):
        match_col[cc] = r

    banned_col = np.zeros(n, dtype=bool)
    banned_row = np.zeros(n, dtype=bool)
    result = np.full(n, -1, dtype=np.int64)
    for r in range(n):
        current = match_row[r]
        chosen = -1
        for cand in adj[r]:
            if banned_col[cand]:
                continue
            if cand == current:
                chosen = cand
                break
            if cand > current and current != -1 and not banned_col[current]:
                # candidates are ascending; current assignment is already best
                chosen = current
                break
            # tentatively reroute: give `cand` to r, let the displaced row
            # search for an alternative along tight edges
            displaced = match_col[cand]
            old = match_row[r]
            match_row[r] = cand
            match_col[cand] = r
            if old != -1:
                match_col[old] = -1
            if displaced == -1:
                chosen = cand
                break
            match_row[displaced] = -1
            banned_col[cand] = True  # cand is spoken for during the search
            banned_row[r] = True
            ok = _kuhn_augment(displaced, adj, match_col, match_row, banned_col, banned_row)
            banned_col[cand] = False
            banned_row[r] = False
            if ok:
                chosen = cand
                break
            # rollback
            match_row[displaced] = cand
            match_col[cand] = displaced
            match_row[r] = old
            if old != -1:
                match_col[old] = r
        if chosen == -1:
            raise RuntimeError("tight subgraph lost perfection; numerical tolerance too small")
        result[r] = chosen
        banned_col[chosen] = True
        banned_row[r] = True
        match_row[r] = chosen
        match_col[chosen] = r
    return result
