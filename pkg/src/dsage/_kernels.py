"""Numba kernels for maze analysis and agent simulation.

Everything here operates on the 16x16 interior wall bitmap (1 = wall) with
out-of-bounds treated as wall, so the surrounding border never has to be
materialized. All randomness comes from an explicit splitmix64 stream seeded
per episode, which keeps trajectories bit-reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Orientation order: N, E, S, W. The agent turns left/right by +/-1 mod 4.
_DR = np.array([-1, 0, 1, 0], dtype=np.int64)
_DC = np.array([0, 1, 0, -1], dtype=np.int64)

FORWARD, TURN_LEFT, TURN_RIGHT = 0, 1, 2

_U64 = np.uint64


@njit(cache=True, inline="always")
def _splitmix64(state):
    state = state + _U64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return state, z ^ (z >> _U64(31))


@njit(cache=True, inline="always")
def _rand_double(state):
    state, z = _splitmix64(state)
    return state, (z >> _U64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def grid_distances(walls, sr, sc):
    """BFS distances (in 4-connected moves) from (sr, sc); -1 = unreachable."""
    h, w = walls.shape
    dist = np.full(h * w, -1, dtype=np.int64)
    queue = np.empty(h * w, dtype=np.int64)
    head, tail = 0, 0
    dist[sr * w + sc] = 0
    queue[tail] = sr * w + sc
    tail += 1
    while head < tail:
        cur = queue[head]
        head += 1
        r, c = cur // w, cur % w
        d = dist[cur]
        for k in range(4):
            nr, nc = r + _DR[k], c + _DC[k]
            if 0 <= nr < h and 0 <= nc < w and walls[nr, nc] == 0:
                nxt = nr * w + nc
                if dist[nxt] < 0:
                    dist[nxt] = d + 1
                    queue[tail] = nxt
                    tail += 1
    return dist


@njit(cache=True)
def farthest_pair(walls):
    """Farthest mutually reachable empty-cell pair, lexicographic tie-break.

    Returns (found, start_r, start_c, goal_r, goal_c). Iterating sources and
    targets in row-major order and only accepting strict improvements makes
    the tie-break `smallest (row, col) of start, then of goal`.
    """
    h, w = walls.shape
    best = -1
    sr = sc = gr = gc = -1
    for r in range(h):
        for c in range(w):
            if walls[r, c] != 0:
                continue
            dist = grid_distances(walls, r, c)
            for t in range(h * w):
                d = dist[t]
                if d > best:
                    best = d
                    sr, sc, gr, gc = r, c, t // w, t % w
    if best < 1:
        return False, -1, -1, -1, -1
    return True, sr, sc, gr, gc


@njit(cache=True)
def reachable_count(walls, sr, sc):
    """Number of empty cells reachable from (sr, sc), including itself."""
    dist = grid_distances(walls, sr, sc)
    count = 0
    for i in range(dist.size):
        if dist[i] >= 0:
            count += 1
    return count


@njit(cache=True)
def _window_first_action(walls, r, c, orient, gr, gc):
    """First action of a shortest action path to the goal inside the 5x5
    window centered on the agent; -1 if no in-window path exists.

    States are (window row, window col, orientation); actions are expanded in
    the order forward, turn-left, turn-right.
    """
    h, w = walls.shape
    goal_wr, goal_wc = gr - r + 2, gc - c + 2
    dist = np.full(100, -1, dtype=np.int64)
    first = np.full(100, -1, dtype=np.int64)
    queue = np.empty(400, dtype=np.int64)
    start = (2 * 5 + 2) * 4 + orient
    dist[start] = 0
    head, tail = 0, 0
    queue[tail] = start
    tail += 1
    while head < tail:
        cur = queue[head]
        head += 1
        o = cur % 4
        cell = cur // 4
        wr, wc = cell // 5, cell % 5
        if wr == goal_wr and wc == goal_wc:
            return first[cur]
        for action in range(3):
            if action == FORWARD:
                nwr, nwc, no = wr + _DR[o], wc + _DC[o], o
                if not (0 <= nwr < 5 and 0 <= nwc < 5):
                    continue
                ar, ac = r - 2 + nwr, c - 2 + nwc
                if not (0 <= ar < h and 0 <= ac < w) or walls[ar, ac] != 0:
                    continue
            elif action == TURN_LEFT:
                nwr, nwc, no = wr, wc, (o + 3) % 4
            else:
                nwr, nwc, no = wr, wc, (o + 1) % 4
            nxt = (nwr * 5 + nwc) * 4 + no
            if dist[nxt] < 0:
                dist[nxt] = dist[cur] + 1
                first[nxt] = action if cur == start else first[cur]
                queue[tail] = nxt
                tail += 1
    return -1


@njit(cache=True)
def greedy_episode(walls, sr, sc, gr, gc, time_limit, tau, seed, occupancy):
    """One episode of the limited-vision stochastic agent.

    The agent sees the 5x5 window around itself. With the goal in view it
    follows a shortest in-window action path; otherwise it softmax-samples
    among {forward, left, right} scored by the visit count of the cell each
    action heads into (forward into a wall is pruned outright). `occupancy`
    accumulates one count per timestep at the agent's post-action cell.

    Returns (timesteps, reached goal).
    """
    h, w = walls.shape
    state = _U64(seed)
    r, c, orient = sr, sc, 0  # facing North
    t = 0
    reached = False
    scores = np.empty(3, dtype=np.float64)
    while t < time_limit:
        action = -1
        if abs(gr - r) <= 2 and abs(gc - c) <= 2:
            action = _window_first_action(walls, r, c, orient, gr, gc)
        if action < 0:
            for a in range(3):
                if a == FORWARD:
                    o = orient
                elif a == TURN_LEFT:
                    o = (orient + 3) % 4
                else:
                    o = (orient + 1) % 4
                nr, nc = r + _DR[o], c + _DC[o]
                blocked = not (0 <= nr < h and 0 <= nc < w) or walls[nr, nc] != 0
                # visit counts dominate the scores so the agent is strongly
                # frontier-seeking; stochasticity comes from tie-breaks among
                # equally-visited cells, which keeps trajectories shaped by
                # the maze structure rather than by policy noise
                if a == FORWARD:
                    scores[a] = -np.inf if blocked else 2.0 - 4.0 * occupancy[nr, nc]
                else:
                    scores[a] = -24.0 if blocked else -4.0 * float(occupancy[nr, nc])
            m = max(scores[0], max(scores[1], scores[2]))
            p0 = np.exp((scores[0] - m) / tau)
            p1 = np.exp((scores[1] - m) / tau)
            p2 = np.exp((scores[2] - m) / tau)
            total = p0 + p1 + p2
            state, u = _rand_double(state)
            u *= total
            if u < p0:
                action = FORWARD
            elif u < p0 + p1:
                action = TURN_LEFT
            else:
                action = TURN_RIGHT
        if action == FORWARD:
            nr, nc = r + _DR[orient], c + _DC[orient]
            if 0 <= nr < h and 0 <= nc < w and walls[nr, nc] == 0:
                r, c = nr, nc
        elif action == TURN_LEFT:
            orient = (orient + 3) % 4
        else:
            orient = (orient + 1) % 4
        occupancy[r, c] += 1
        t += 1
        if r == gr and c == gc:
            reached = True
            break
    return t, reached
