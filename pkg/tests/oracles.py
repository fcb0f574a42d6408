"""Slow, independent reference computations used only by the tests."""

import itertools

import numpy as np


def transport_vertices(a, b):
    """All basic feasible plans of the transportation polytope U(a, b).

    Every vertex is supported on a spanning tree of the complete bipartite
    graph (n + m - 1 cells). Enumerate the cell subsets, peel leaves to get the
    unique flow on each tree, and keep the non-negative ones.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = len(a), len(b)
    cells = [(i, j) for i in range(n) for j in range(m)]
    vertices = []
    for subset in itertools.combinations(cells, n + m - 1):
        plan = _tree_flow(subset, a, b)
        if plan is not None and plan.min() >= -1e-12:
            plan = np.maximum(plan, 0.0)
            # degenerate vertices are reached from several trees
            if not any(np.abs(plan - v).max() <= 1e-12 for v in vertices):
                vertices.append(plan)
    return vertices


def _tree_flow(subset, a, b):
    supply = a.copy()
    demand = b.copy()
    free = set(subset)
    plan = np.zeros((len(a), len(b)))
    while free:
        progress = False
        for i in range(len(a)):
            row = [c for c in free if c[0] == i]
            if len(row) == 1:
                _, j = row[0]
                plan[i, j] = supply[i]
                demand[j] -= supply[i]
                supply[i] = 0.0
                free.discard(row[0])
                progress = True
        for j in range(len(b)):
            col = [c for c in free if c[1] == j]
            if len(col) == 1:
                i, _ = col[0]
                plan[i, j] = demand[j]
                supply[i] -= demand[j]
                demand[j] = 0.0
                free.discard(col[0])
                progress = True
        if not progress:
            return None  # the subset contains a cycle
    if np.abs(plan.sum(1) - a).max() > 1e-12 or np.abs(plan.sum(0) - b).max() > 1e-12:
        return None
    return plan


def brute_force_ot(a, b, C):
    """Minimum of <plan, C> over the vertices of U(a, b)."""
    return min(float(np.sum(p * C)) for p in transport_vertices(a, b))


def simplex_projection_active_set(w):
    """Exhaustive search over supports of the projection onto the simplex."""
    w = np.asarray(w, dtype=float)
    best, best_dist = None, np.inf
    for r in range(1, len(w) + 1):
        for support in itertools.combinations(range(len(w)), r):
            idx = list(support)
            cand = np.zeros_like(w)
            cand[idx] = w[idx] - (w[idx].sum() - 1.0) / r
            if cand.min() < 0:
                continue
            dist = np.linalg.norm(w - cand)
            if dist < best_dist:
                best, best_dist = cand, dist
    return best


def simplex_grid(J, steps):
    """All points of the simplex with coordinates in multiples of 1/steps."""
    for combo in itertools.product(range(steps + 1), repeat=J - 1):
        if sum(combo) <= steps:
            yield np.array(list(combo) + [steps - sum(combo)], dtype=float) / steps


def central_difference(fun, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        grad[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def random_spd(rng, d, jitter=0.1):
    A = rng.standard_normal((d, d))
    return A @ A.T + jitter * np.eye(d)
