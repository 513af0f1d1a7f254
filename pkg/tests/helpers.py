"""Independent oracle implementations used to cross-check the package.

These deliberately avoid the production code paths: the naive archive keeps
every tell in a list, the Dijkstra agent oracle uses a heap over (cell,
orientation) states, and farthest-pair distances come from scipy's
Floyd-Warshall.
"""

from __future__ import annotations

import heapq

import numpy as np

MAZE_SPEC_ARGS = dict(lows=(0.0, 0.0), highs=(256.0, 648.0), cells=(256, 162))


class NaiveArchive:
    """Max-per-cell recomputation over the full tell history."""

    def __init__(self, spec):
        self.spec = spec
        self.tells = []

    def add(self, solution, objective, measures):
        self.tells.append((np.array(solution), float(objective), np.array(measures)))

    def best_per_cell(self):
        best = {}
        for sol, obj, meas in self.tells:
            cell = self.spec.discretize(meas)
            if cell not in best or obj > best[cell][1]:
                best[cell] = (sol, obj, meas)
        return best

    def qd_score(self):
        return sum(v[1] for v in self.best_per_cell().values())

    def coverage(self):
        return len(self.best_per_cell()) / self.spec.total_cells


def dijkstra_action_distance(env) -> int:
    """Shortest action-count from (start, North) to the goal cell, by heap
    Dijkstra over (row, col, orientation) states with unit action costs."""
    walls = env.walls
    h, w = walls.shape
    deltas = ((-1, 0), (0, 1), (1, 0), (0, -1))
    start = (env.start[0], env.start[1], 0)
    dist = {start: 0}
    heap = [(0, start)]
    while heap:
        d, (r, c, o) = heapq.heappop(heap)
        if (r, c) == env.goal:
            return d
        if d > dist.get((r, c, o), np.inf):
            continue
        succs = [(r, c, (o + 1) % 4), (r, c, (o + 3) % 4)]
        nr, nc = r + deltas[o][0], c + deltas[o][1]
        if 0 <= nr < h and 0 <= nc < w and not walls[nr, nc]:
            succs.append((nr, nc, o))
        for nxt in succs:
            nd = d + 1
            if nd < dist.get(nxt, np.inf):
                dist[nxt] = nd
                heapq.heappush(heap, (nd, nxt))
    raise AssertionError("goal unreachable in action space")


def floyd_warshall_extremes(walls: np.ndarray):
    """Maximum finite empty-cell distance and the lexicographically first
    (start, goal) pair achieving it, computed via scipy Floyd-Warshall."""
    from scipy.sparse.csgraph import floyd_warshall

    h, w = walls.shape
    n = h * w
    adj = np.zeros((n, n))
    for r in range(h):
        for c in range(w):
            if walls[r, c]:
                continue
            for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w and not walls[nr, nc]:
                    adj[r * w + c, nr * w + nc] = 1
    dist = floyd_warshall(adj, unweighted=True)
    empties = [r * w + c for r in range(h) for c in range(w) if not walls[r, c]]
    best, pair = 0, None
    for a in empties:
        for b in empties:
            d = dist[a, b]
            if np.isfinite(d) and d > best:
                best, pair = int(d), (divmod(a, w), divmod(b, w))
    return best, pair
