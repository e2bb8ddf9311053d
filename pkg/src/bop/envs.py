"""Desk-scale episodic environments for deep-exploration experiments.

All observations are one-hot vectors.  Every environment is deterministic
given its structure seed and its stream seed (only ``NChain`` with a
nonzero slip probability consumes random numbers while stepping).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .diffcore import ContractError


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Continuous:
    dim: int
    low: float
    high: float


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    action_space: Discrete | Continuous
    horizon: int
    seed: int

    def __post_init__(self):
        if self.obs_dim < 1 or self.horizon < 1:
            raise ContractError("obs_dim and horizon must be positive")
        if isinstance(self.action_space, Discrete) and self.action_space.n < 2:
            raise ContractError("discrete action spaces need n >= 2")


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    t: int


class Env:
    """Shared episode bookkeeping; subclasses implement ``_reset``/``_step``."""

    spec: EnvSpec

    def __init__(self):
        self.t = 0
        self.done = True
        self._obs: np.ndarray | None = None

    def reset(self) -> np.ndarray:
        self.t = 0
        self.done = False
        self._obs = self._reset()
        return self._obs

    def step(self, action) -> Transition:
        if self.done:
            raise ContractError("step() called on a finished episode; call reset()")
        n = self.spec.action_space.n
        if not (isinstance(action, (int, np.integer)) and 0 <= action < n):
            raise ContractError(f"action {action!r} outside Discrete({n})")
        obs, reward, terminal = self._step(int(action))
        t = self.t
        self.t += 1
        self.done = terminal or self.t >= self.spec.horizon
        tr = Transition(self._obs, int(action), float(reward), obs, self.done, t)
        self._obs = obs
        return tr

    def get_state(self) -> dict:
        return {"t": self.t, "done": self.done, **self._get_state()}

    def set_state(self, state: dict) -> None:
        self.t = state["t"]
        self.done = state["done"]
        self._set_state(state)
        self._obs = self._observe()

    def _get_state(self) -> dict:
        raise NotImplementedError

    def _set_state(self, state: dict) -> None:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError


def _one_hot(i: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


class DeepSea(Env):
    """N x N grid descended one row per step.

    Each cell has a seeded flip bit deciding which action index moves right.
    Moving right costs 0.01/N; moving right from the bottom-right cell pays +1.
    """

    def __init__(self, size: int, seed: int = 0, stream_seed: int | None = None):
        super().__init__()
        if size < 2:
            raise ContractError("DeepSea size must be >= 2")
        self.size = size
        self.flip = np.random.default_rng(seed).integers(0, 2, size=(size, size)).astype(bool)
        self.spec = EnvSpec(size * size, Discrete(2), size, seed)
        self.row = self.col = 0

    def right_action(self, row: int, col: int) -> int:
        return 0 if self.flip[row, col] else 1

    def _observe(self) -> np.ndarray:
        if self.row >= self.size:
            return np.zeros(self.size * self.size)
        return _one_hot(self.row * self.size + self.col, self.size * self.size)

    def _reset(self):
        self.row = self.col = 0
        return self._observe()

    def _step(self, action):
        n = self.size
        reward = 0.0
        if action == self.right_action(self.row, self.col):
            reward -= 0.01 / n
            if self.row == n - 1 and self.col == n - 1:
                reward += 1.0
            self.col = min(self.col + 1, n - 1)
        else:
            self.col = max(self.col - 1, 0)
        self.row += 1
        return self._observe(), reward, self.row >= n

    def _get_state(self):
        return {"row": self.row, "col": self.col}

    def _set_state(self, state):
        self.row, self.col = state["row"], state["col"]


class NChain(Env):
    """Chain of N states with horizon 2N.

    Action 1 moves forward (reward 0, or +10 while at the last state);
    action 0 returns to the start with +0.1.  With ``slip`` > 0 the
    chosen action is swapped with that probability.
    """

    FORWARD, BACKWARD = 1, 0

    def __init__(self, length: int, seed: int = 0, slip: float = 0.0,
                 stream_seed: int | None = None):
        super().__init__()
        if length < 3:
            raise ContractError("NChain length must be >= 3")
        self.length = length
        self.slip = slip
        self.rng = np.random.default_rng(seed if stream_seed is None else stream_seed)
        self.spec = EnvSpec(length, Discrete(2), 2 * length, seed)
        self.pos = 0

    def _observe(self):
        return _one_hot(self.pos, self.length)

    def _reset(self):
        self.pos = 0
        return self._observe()

    def _step(self, action):
        if self.slip > 0 and self.rng.random() < self.slip:
            action = 1 - action
        if action == self.FORWARD:
            if self.pos == self.length - 1:
                reward = 10.0
            else:
                reward = 0.0
                self.pos += 1
        else:
            reward = 0.1
            self.pos = 0
        return self._observe(), reward, False

    def _get_state(self):
        return {"pos": self.pos, "rng": self.rng.bit_generator.state}

    def _set_state(self, state):
        self.pos = state["pos"]
        self.rng.bit_generator.state = state["rng"]

    def optimal_return(self) -> float:
        """Best undiscounted episode return by finite-horizon value iteration."""
        return float(chain_value_iteration(self.length, 2 * self.length, self.slip)[0])


def chain_value_iteration(length: int, horizon: int, slip: float = 0.0) -> np.ndarray:
    """Optimal undiscounted values-to-go from every chain state at t = 0."""
    v = np.zeros(length)
    for _ in range(horizon):
        fwd_next = np.minimum(np.arange(length) + 1, length - 1)
        fwd_r = np.where(np.arange(length) == length - 1, 10.0, 0.0)
        q_fwd = fwd_r + v[fwd_next]
        q_back = 0.1 + v[0]
        q = np.stack([
            (1 - slip) * q_back + slip * q_fwd,
            (1 - slip) * q_fwd + slip * q_back,
        ])
        v = q.max(axis=0)
    return v


class SparseMaze(Env):
    """Grid maze, 4 actions (up, right, down, left), +1 on reaching the goal.

    Walls come from a seeded depth-first carve over the even-coordinate
    lattice, or from an explicit ``layout`` of strings using ``#`` for walls,
    ``S`` for the start and ``G`` for the goal.
    """

    MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))

    def __init__(self, width: int = 8, height: int = 8, seed: int = 0,
                 layout: list[str] | None = None, stream_seed: int | None = None):
        super().__init__()
        if layout is not None:
            self.walls, self.start, self.goal = _parse_layout(layout)
            height, width = self.walls.shape
        else:
            if width < 4 or height < 4:
                raise ContractError("maze width and height must be >= 4")
            self.walls = _carve_maze(width, height, np.random.default_rng(seed))
            self.start = (0, 0)
            self.goal = _farthest_open(self.walls, self.start)
        self.width, self.height = width, height
        self.spec = EnvSpec(width * height, Discrete(4), 4 * width * height, seed)
        self.pos = self.start

    def _observe(self):
        return _one_hot(self.pos[0] * self.width + self.pos[1], self.width * self.height)

    def _reset(self):
        self.pos = self.start
        return self._observe()

    def _step(self, action):
        dr, dc = self.MOVES[action]
        r, c = self.pos[0] + dr, self.pos[1] + dc
        if 0 <= r < self.height and 0 <= c < self.width and not self.walls[r, c]:
            self.pos = (r, c)
        if self.pos == self.goal:
            return self._observe(), 1.0, True
        return self._observe(), 0.0, False

    def shortest_path(self) -> int | None:
        return bfs_distance(self.walls, self.start, self.goal)

    def _get_state(self):
        return {"pos": list(self.pos)}

    def _set_state(self, state):
        self.pos = tuple(state["pos"])


def _parse_layout(layout):
    walls = np.array([[ch == "#" for ch in row] for row in layout], dtype=bool)
    start = goal = None
    for r, row in enumerate(layout):
        for c, ch in enumerate(row):
            if ch == "S":
                start = (r, c)
            elif ch == "G":
                goal = (r, c)
    if start is None or goal is None:
        raise ContractError("layout needs one S and one G")
    return walls, start, goal


def _carve_maze(width, height, rng):
    walls = np.ones((height, width), dtype=bool)
    cells = [(r, c) for r in range(0, height, 2) for c in range(0, width, 2)]
    walls[0, 0] = False
    seen = {(0, 0)}
    stack = [(0, 0)]
    while stack:
        r, c = stack[-1]
        options = [(r + dr, c + dc, r + dr // 2, c + dc // 2)
                   for dr, dc in ((-2, 0), (0, 2), (2, 0), (0, -2))
                   if 0 <= r + dr < height and 0 <= c + dc < width and (r + dr, c + dc) not in seen]
        if not options:
            stack.pop()
            continue
        nr, nc, wr, wc = options[rng.integers(len(options))]
        walls[wr, wc] = walls[nr, nc] = False
        seen.add((nr, nc))
        stack.append((nr, nc))
    assert len(seen) == len(cells)
    return walls


def _farthest_open(walls, start):
    dist = _bfs_all(walls, start)
    best = max(dist.items(), key=lambda kv: (kv[1], kv[0]))
    return best[0]


def _bfs_all(walls, start):
    h, w = walls.shape
    dist = {start: 0}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in SparseMaze.MOVES:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not walls[nr, nc] and (nr, nc) not in dist:
                dist[(nr, nc)] = dist[(r, c)] + 1
                queue.append((nr, nc))
    return dist


def bfs_distance(walls, start, goal) -> int | None:
    return _bfs_all(walls, start).get(goal)


class VecEnv:
    """Independent environment instances stepped one by one."""

    def __init__(self, envs: list[Env]):
        self.envs = envs

    def __len__(self):
        return len(self.envs)

    def __getitem__(self, i) -> Env:
        return self.envs[i]

    @property
    def spec(self) -> EnvSpec:
        return self.envs[0].spec

    def reset(self) -> list[np.ndarray]:
        return [e.reset() for e in self.envs]

    def step(self, actions) -> list[Transition]:
        return [e.step(a) for e, a in zip(self.envs, actions, strict=True)]


def parse_env_name(name: str) -> tuple[str, tuple[int, ...]]:
    try:
        kind, arg = name.split(":")
        if kind == "maze":
            w, h = arg.lower().split("x")
            return kind, (int(w), int(h))
        if kind in ("deep_sea", "nchain"):
            return kind, (int(arg),)
    except ValueError:
        pass
    raise ContractError(f"unknown environment {name!r} (try deep_sea:10, nchain:20, maze:8x8)")


def make_env(name: str, seed: int = 0, stream_seed: int | None = None) -> Env:
    """Build an environment from ``deep_sea:N``, ``nchain:N`` or ``maze:WxH``.

    ``seed`` fixes the MDP structure; ``stream_seed`` the stepping randomness.
    """
    kind, args = parse_env_name(name)
    if kind == "deep_sea":
        return DeepSea(args[0], seed, stream_seed)
    if kind == "nchain":
        return NChain(args[0], seed, stream_seed=stream_seed)
    return SparseMaze(args[0], args[1], seed, stream_seed=stream_seed)


def make_vec_env(name: str, n: int, seed: int = 0) -> VecEnv:
    """``n`` instances of one MDP, each with its own RNG stream."""
    streams = np.random.SeedSequence(seed).spawn(n)
    return VecEnv([make_env(name, seed, int(s.generate_state(1)[0])) for s in streams])
