"""Maze environments: construction from genotypes, agents, and evaluation.

A genotype is a flat vector of 256 bits laid out as the 16x16 interior of the
maze (1 = wall). Building an environment adds the surrounding wall border and
places start/goal at the farthest-apart pair of mutually reachable empty
cells (all-pairs shortest 4-connected grid distance, unit cost), so a maze is
unsolvable only when no such pair exists.

Agents act in the MiniGrid style: state is (cell, orientation), actions are
forward / turn-left / turn-right, and each action costs one timestep. Agents
start at the start cell facing North. Every timestep adds one count to the
occupancy grid at the agent's cell after the action, which makes the episode
occupancy sum equal the episode path length by construction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from ._kernels import FORWARD, TURN_LEFT, TURN_RIGHT

INTERIOR = 16
TIME_LIMIT = 648

ACTION_NAMES = ("forward", "turn-left", "turn-right")

# Orientation 0..3 = N, E, S, W; agents start facing North.
ORIENT_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))
START_ORIENT = 0

MEASURE_SETS = ("walls+path", "exploration+repeats", "walls+repeats")


@dataclass(frozen=True)
class MazeEnv:
    """Built maze: bordered grid plus start/goal in interior coordinates."""

    grid: np.ndarray  # (18, 18) int8, 1 = wall, border all walls
    start: Optional[Tuple[int, int]]
    goal: Optional[Tuple[int, int]]
    solvable: bool

    @property
    def walls(self) -> np.ndarray:
        """Interior wall bitmap, (16, 16)."""
        return self.grid[1:-1, 1:-1]

    @property
    def wall_count(self) -> int:
        return int(self.walls.sum())

    def reachable_from_start(self) -> int:
        if self.start is None:
            return 0
        return int(_kernels.reachable_count(self.walls, self.start[0], self.start[1]))


@dataclass(frozen=True)
class AgentSpec:
    """Which agent simulates the maze and for how many episodes."""

    kind: str = "greedy-vision"  # or "optimal"
    episodes: int = 50
    time_limit: int = TIME_LIMIT
    tau: float = 0.5

    def __post_init__(self):
        if self.kind not in ("optimal", "greedy-vision"):
            raise ValueError(f"unknown agent kind: {self.kind}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")


@dataclass
class EvaluationResult:
    """Outputs of simulating an agent: objective, measures, and occupancy."""

    objective: float
    measures: np.ndarray
    occupancy: np.ndarray  # (16, 16) mean per-tile visit counts
    path_lengths: np.ndarray  # per episode
    reward: float
    per_episode_distinct: np.ndarray
    per_episode_occupancy_sum: np.ndarray
    measure_set: str = "walls+path"


def random_genotype(rng: np.random.Generator) -> np.ndarray:
    """Uniform random bitmap: each cell wall or empty with probability 1/2."""
    return rng.integers(0, 2, INTERIOR * INTERIOR, dtype=np.int8)


def build_maze(genotype: Sequence[int]) -> MazeEnv:
    """Decode a 256-bit genotype into a bordered maze with start/goal."""
    bitmap = np.asarray(genotype).reshape(INTERIOR, INTERIOR)
    if not np.isin(bitmap, (0, 1)).all():
        raise ValueError("genotype values must be 0 or 1")
    return build_from_bitmap(bitmap.astype(np.int8))


def build_from_bitmap(walls: np.ndarray) -> MazeEnv:
    """Size-generic builder used by build_maze and the exhaustive tests."""
    h, w = walls.shape
    grid = np.ones((h + 2, w + 2), dtype=np.int8)
    grid[1:-1, 1:-1] = walls
    found, sr, sc, gr, gc = _kernels.farthest_pair(np.ascontiguousarray(walls))
    if not found:
        return MazeEnv(grid, None, None, False)
    return MazeEnv(grid, (int(sr), int(sc)), (int(gr), int(gc)), True)


def is_solvable(env: MazeEnv) -> int:
    """The domain objective: 1 if start and goal exist and are connected."""
    return int(env.solvable)


def optimal_agent_policy(env: MazeEnv) -> List[int]:
    """Minimum-length action sequence from (start, North) to the goal.

    Breadth-first search over (cell, orientation) states with actions tried
    in the order forward < turn-left < turn-right.
    """
    if not env.solvable:
        raise ValueError("no policy for an unsolvable maze")
    walls = env.walls
    h, w = walls.shape
    start = (env.start[0], env.start[1], START_ORIENT)
    parents = {start: None}
    queue = deque([start])
    goal_state = None
    while queue:
        state = queue.popleft()
        r, c, o = state
        if (r, c) == env.goal:
            goal_state = state
            break
        for action in (FORWARD, TURN_LEFT, TURN_RIGHT):
            if action == FORWARD:
                dr, dc = ORIENT_DELTAS[o]
                nr, nc, no = r + dr, c + dc, o
                if not (0 <= nr < h and 0 <= nc < w) or walls[nr, nc]:
                    continue
            elif action == TURN_LEFT:
                nr, nc, no = r, c, (o + 3) % 4
            else:
                nr, nc, no = r, c, (o + 1) % 4
            nxt = (nr, nc, no)
            if nxt not in parents:
                parents[nxt] = (state, action)
                queue.append(nxt)
    assert goal_state is not None, "farthest-pair construction guarantees a path"
    actions = []
    state = goal_state
    while parents[state] is not None:
        state, action = parents[state]
        actions.append(action)
    actions.reverse()
    return actions


def replay_actions(env: MazeEnv, actions: Sequence[int]) -> Tuple[int, bool, np.ndarray]:
    """Apply an action sequence; returns (timesteps, reached, occupancy)."""
    walls = env.walls
    h, w = walls.shape
    r, c = env.start
    orient = START_ORIENT
    occupancy = np.zeros((h, w), dtype=np.int64)
    t = 0
    for action in actions:
        if action == FORWARD:
            dr, dc = ORIENT_DELTAS[orient]
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not walls[nr, nc]:
                r, c = nr, nc
        elif action == TURN_LEFT:
            orient = (orient + 3) % 4
        else:
            orient = (orient + 1) % 4
        occupancy[r, c] += 1
        t += 1
        if (r, c) == env.goal:
            return t, True, occupancy
    return t, False, occupancy


def run_greedy_episode(env: MazeEnv, seed: int, time_limit: int = TIME_LIMIT,
                       tau: float = 0.5) -> Tuple[int, bool, np.ndarray]:
    """One stochastic limited-vision episode; see _kernels.greedy_episode."""
    occupancy = np.zeros((INTERIOR, INTERIOR), dtype=np.int64)
    t, reached = _kernels.greedy_episode(
        np.ascontiguousarray(env.walls), env.start[0], env.start[1],
        env.goal[0], env.goal[1], time_limit, tau, np.uint64(seed), occupancy,
    )
    return int(t), bool(reached), occupancy


def simulate(env: MazeEnv, agent: AgentSpec, rng: np.random.Generator,
             measure_set: str = "walls+path") -> EvaluationResult:
    """Run the agent for agent.episodes episodes and aggregate the outputs.

    An unsolvable maze is not simulated at all: objective 0, path length
    fixed at the time limit, all-zero occupancy.
    """
    T = agent.time_limit
    n = agent.episodes
    if not env.solvable:
        result = EvaluationResult(
            objective=0.0,
            measures=np.zeros(2),
            occupancy=np.zeros((INTERIOR, INTERIOR)),
            path_lengths=np.full(n, float(T)),
            reward=0.0,
            per_episode_distinct=np.zeros(n, dtype=np.int64),
            per_episode_occupancy_sum=np.zeros(n, dtype=np.int64),
            measure_set=measure_set,
        )
        result.measures = measure_values(result, env, measure_set)
        return result

    if agent.kind == "optimal":
        actions = optimal_agent_policy(env)
        t, reached, occ = replay_actions(env, actions)
        episodes = [(t, reached, occ)] * n
    else:
        episodes = []
        for _ in range(n):
            seed = int(rng.integers(0, 2**63, dtype=np.int64))
            episodes.append(run_greedy_episode(env, seed, T, agent.tau))

    occupancy = np.zeros((INTERIOR, INTERIOR), dtype=np.float64)
    path_lengths = np.empty(n)
    distinct = np.empty(n, dtype=np.int64)
    occ_sums = np.empty(n, dtype=np.int64)
    rewards = np.empty(n)
    for i, (t, reached, occ) in enumerate(episodes):
        occupancy += occ
        path_lengths[i] = float(t)
        distinct[i] = int((occ > 0).sum())
        occ_sums[i] = int(occ.sum())
        rewards[i] = 1.0 - 0.9 * t / T if reached else 0.0
    occupancy /= n

    result = EvaluationResult(
        objective=float(is_solvable(env)),
        measures=np.zeros(2),
        occupancy=occupancy,
        path_lengths=path_lengths,
        reward=float(rewards.mean()),
        per_episode_distinct=distinct,
        per_episode_occupancy_sum=occ_sums,
        measure_set=measure_set,
    )
    result.measures = measure_values(result, env, measure_set)
    _check_measure_ranges(result.measures, measure_set)
    return result


def measure_values(result: EvaluationResult, env: MazeEnv, measure_set: str) -> np.ndarray:
    """Compute a measure vector for one of the supported measure sets."""
    if measure_set not in MEASURE_SETS:
        raise ValueError(f"unknown measure set: {measure_set}")
    walls = float(env.wall_count)
    mean_path = float(result.path_lengths.mean())
    if measure_set == "walls+path":
        return np.array([walls, mean_path])
    repeats = float((result.path_lengths - result.per_episode_distinct).mean())
    if measure_set == "walls+repeats":
        return np.array([walls, repeats])
    reachable = env.reachable_from_start()
    explored = int((result.occupancy > 0).sum())
    exploration = explored / reachable if reachable > 0 else 0.0
    return np.array([exploration, repeats])


def _check_measure_ranges(measures: np.ndarray, measure_set: str) -> None:
    lows, highs = measure_ranges(measure_set)
    for m, lo, hi in zip(measures, lows, highs):
        if not (lo <= m <= hi):
            raise AssertionError(f"measure {m} outside [{lo}, {hi}] for {measure_set}")


def measure_ranges(measure_set: str) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    if measure_set == "walls+path":
        return (0.0, 0.0), (256.0, 648.0)
    if measure_set == "walls+repeats":
        return (0.0, 0.0), (256.0, 648.0)
    if measure_set == "exploration+repeats":
        return (0.0, 0.0), (1.0, 648.0)
    raise ValueError(f"unknown measure set: {measure_set}")


def encode_env(env: MazeEnv) -> np.ndarray:
    """One-hot (4, 16, 16) uint8 encoding: channels wall/empty/start/goal."""
    walls = env.walls
    enc = np.zeros((4, INTERIOR, INTERIOR), dtype=np.uint8)
    enc[0] = walls
    enc[1] = 1 - walls
    if env.start is not None:
        enc[1][env.start] = 0
        enc[2][env.start] = 1
    if env.goal is not None:
        enc[1][env.goal] = 0
        enc[3][env.goal] = 1
    return enc


def render_text(env: MazeEnv) -> str:
    """18 lines of 18 chars: '#' wall, '.' empty, 'S' start, 'G' goal."""
    chars = [["#" if env.grid[r, c] else "." for c in range(env.grid.shape[1])]
             for r in range(env.grid.shape[0])]
    if env.start is not None:
        chars[env.start[0] + 1][env.start[1] + 1] = "S"
    if env.goal is not None:
        chars[env.goal[0] + 1][env.goal[1] + 1] = "G"
    return "\n".join("".join(row) for row in chars)
