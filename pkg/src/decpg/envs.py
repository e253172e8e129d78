"""Cooperative multi-agent environments with shared team rewards.

Four concrete instances: a stateless 3-agent coordination game, two
continuous-action tasks (Aggregation, Mill), and a seeded random tabular
generator used as the substrate for exact-evaluation oracle tests.

Joint actions are flat-indexed row-major with agent 0 outermost; this
convention is shared by every module in the repo.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, ShapeError


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Box:
    dim: int
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise InputError("Box requires low < high")


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    action_space: Discrete | Box
    obs_dim: int
    state_dim: int
    episode_limit: int
    gamma: float

    def __post_init__(self):
        if self.n_agents < 2:
            raise InputError("need at least 2 agents")
        if self.episode_limit < 1:
            raise InputError("episode_limit must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise InputError("gamma must be in [0, 1)")

    @property
    def discrete(self) -> bool:
        return isinstance(self.action_space, Discrete)


@dataclass
class StepResult:
    observations: np.ndarray  # (n_agents, obs_dim)
    state: np.ndarray  # (state_dim,)
    reward: float
    terminated: bool
    truncated: bool


@dataclass
class Episode:
    """One rollout. observations/states carry T+1 rows (final obs included)."""

    observations: np.ndarray  # (T+1, n_agents, obs_dim)
    states: np.ndarray  # (T+1, state_dim)
    actions: np.ndarray  # (T, n_agents) int64, or (T, n_agents, adim) float64
    rewards: np.ndarray  # (T,)
    terminated: bool  # True: env terminal; False: cut off at the time limit
    behavior_probs: np.ndarray | None = None  # (T, n_agents), discrete only
    policy_version: int = -1

    def __post_init__(self):
        if self.behavior_probs is not None and np.any(self.behavior_probs <= 0.0):
            raise InputError("behavior probabilities must be strictly positive")

    @property
    def length(self) -> int:
        return len(self.rewards)


class Env:
    """Single-threaded environment state machine.

    reset(rng) -> (observations, state); step(joint_action) -> StepResult.
    Randomness only enters through the generator passed to reset, so
    replaying stored actions from the same seed is bit-exact.
    """

    spec: EnvSpec

    def reset(self, rng: np.random.Generator):
        raise NotImplementedError

    def step(self, joint_action) -> StepResult:
        raise NotImplementedError


class MatrixGame(Env):
    """Stateless one-shot game: 3 agents, 14 actions, one rewarding joint action."""

    GOOD = (1, 5, 9)
    N_ACTIONS = 14

    def __init__(self, gamma: float = 0.99):
        self.spec = EnvSpec(3, Discrete(self.N_ACTIONS), obs_dim=1, state_dim=1,
                            episode_limit=1, gamma=gamma)

    def reset(self, rng):
        obs = np.zeros((3, 1))
        return obs, np.zeros(1)

    def step(self, joint_action) -> StepResult:
        a = np.asarray(joint_action, dtype=np.int64)
        if a.shape != (3,):
            raise InputError("matrix game takes exactly 3 actions")
        if np.any(a < 0) or np.any(a >= self.N_ACTIONS):
            raise InputError(f"action index out of range [0, {self.N_ACTIONS})")
        reward = 10.0 if tuple(a) == self.GOOD else -10.0
        return StepResult(np.zeros((3, 1)), np.zeros(1), reward,
                          terminated=True, truncated=False)

    def payoff_table(self) -> np.ndarray:
        """Exact (14, 14, 14) team payoff, for oracle tests and bias reports."""
        table = np.full((self.N_ACTIONS,) * 3, -10.0)
        table[self.GOOD] = 10.0
        return table


class Aggregation(Env):
    """5 point-mass agents must all stand within 0.1 of the origin landmark.

    Actions are 2-d forces in [-1, 1]; positions advance by 0.2 * action and
    are kept inside [-1, 1]^2. Success pays 10 and ends the episode; reaching
    step 25 without success pays -10 and truncates; other steps pay 0.
    start_box scales the uniform start distribution (positions drawn from
    [-start_box, start_box]^2).
    """

    N_AGENTS = 5
    SPEED = 0.2
    RADIUS = 0.1
    LIMIT = 25

    def __init__(self, gamma: float = 0.95, start_box: float = 1.0):
        if not 0.0 < start_box <= 1.0:
            raise ConfigError("start_box must be in (0, 1]")
        self.start_box = float(start_box)
        self.spec = EnvSpec(self.N_AGENTS, Box(2, -1.0, 1.0), obs_dim=4,
                            state_dim=2 * self.N_AGENTS,
                            episode_limit=self.LIMIT, gamma=gamma)
        self.positions = np.zeros((self.N_AGENTS, 2))
        self.t = 0

    def _obs(self) -> np.ndarray:
        # own position, then own position relative to the landmark (origin)
        return np.concatenate([self.positions, self.positions], axis=1)

    def _state(self) -> np.ndarray:
        return self.positions.reshape(-1).copy()

    def reset(self, rng):
        self.positions = rng.uniform(-self.start_box, self.start_box,
                                     size=(self.N_AGENTS, 2))
        self.t = 0
        return self._obs(), self._state()

    def step(self, joint_action) -> StepResult:
        a = np.asarray(joint_action, dtype=np.float64)
        if a.shape != (self.N_AGENTS, 2):
            raise InputError(f"expected ({self.N_AGENTS}, 2) actions, got {a.shape}")
        self.positions = np.clip(self.positions + self.SPEED * np.clip(a, -1.0, 1.0),
                                 -1.0, 1.0)
        self.t += 1
        reached = bool(np.all(np.linalg.norm(self.positions, axis=1) <= self.RADIUS))
        if reached:
            reward, terminated, truncated = 10.0, True, False
        elif self.t >= self.LIMIT:
            reward, terminated, truncated = -10.0, False, True
        else:
            reward, terminated, truncated = 0.0, False, False
        return StepResult(self._obs(), self._state(), reward, terminated, truncated)


class Mill(Env):
    """10 agents apply signed force to a millstone; clockwise spin pays off.

    Each step the angular velocity gains 1.5 * sum(clip(a_i, -1, 1)). Steps
    with velocity above 30 pay 3. At step 10 the episode ends: velocity of at
    least 100 pays a +10 terminal bonus, anything less pays -10.
    """

    N_AGENTS = 10
    FORCE = 1.5
    LIMIT = 10

    def __init__(self, gamma: float = 0.95):
        self.spec = EnvSpec(self.N_AGENTS, Box(1, -1.0, 1.0), obs_dim=2,
                            state_dim=2, episode_limit=self.LIMIT, gamma=gamma)
        self.omega = 0.0
        self.t = 0

    def _obs_vec(self) -> np.ndarray:
        return np.array([self.omega / 100.0, self.t / 10.0])

    def reset(self, rng):
        self.omega = 0.0
        self.t = 0
        return np.tile(self._obs_vec(), (self.N_AGENTS, 1)), self._obs_vec()

    def step(self, joint_action) -> StepResult:
        a = np.asarray(joint_action, dtype=np.float64).reshape(-1)
        if a.shape != (self.N_AGENTS,):
            raise InputError(f"expected {self.N_AGENTS} scalar actions, got {a.shape}")
        self.omega += self.FORCE * float(np.clip(a, -1.0, 1.0).sum())
        self.t += 1
        reward = 3.0 if self.omega > 30.0 else 0.0
        terminated = truncated = False
        if self.t >= self.LIMIT:
            if self.omega >= 100.0:
                reward += 10.0
                terminated = True
            else:
                reward += -10.0
                truncated = True
        return StepResult(np.tile(self._obs_vec(), (self.N_AGENTS, 1)),
                          self._obs_vec(), reward, terminated, truncated)


@dataclass
class TabularDecMDP:
    """Exact finite cooperative MDP with shared reward, for oracle tests.

    transition[s, a_flat, s'] and reward[s, a_flat] index joint actions
    row-major with agent 0 outermost.
    """

    n_states: int
    n_agents: int
    n_actions: int
    transition: np.ndarray  # (S, A^n, S)
    reward: np.ndarray  # (S, A^n)
    initial_dist: np.ndarray  # (S,)
    gamma: float

    def __post_init__(self):
        n_joint = self.n_actions ** self.n_agents
        if self.transition.shape != (self.n_states, n_joint, self.n_states):
            raise ShapeError("transition table shape mismatch")
        if self.reward.shape != (self.n_states, n_joint):
            raise ShapeError("reward table shape mismatch")
        rows = self.transition.sum(axis=2)
        if np.max(np.abs(rows - 1.0)) > 1e-12:
            raise InputError("transition rows must sum to 1 within 1e-12")

    @property
    def n_joint_actions(self) -> int:
        return self.n_actions ** self.n_agents

    def flat_action(self, joint_action) -> int:
        """Row-major flat index, agent 0 outermost."""
        idx = 0
        for a in joint_action:
            idx = idx * self.n_actions + int(a)
        return idx

    def joint_action(self, flat: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.n_agents):
            out.append(flat % self.n_actions)
            flat //= self.n_actions
        return tuple(reversed(out))


def enumerate_joint_actions(n_agents: int, n_actions: int) -> np.ndarray:
    """All joint actions as an (n_actions**n_agents, n_agents) int array.

    Rows follow the repo-wide flat-index convention: row-major with agent 0
    outermost, so row j of the output is the joint action with flat index j.
    """
    grids = np.meshgrid(*[np.arange(n_actions)] * n_agents, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


MAX_TABULAR_CELLS = 10 ** 6


def random_tabular(seed: int, n_states: int, n_agents: int, n_actions: int,
                   gamma: float = 0.9) -> TabularDecMDP:
    """Seeded random instance: normalized uniform transitions, rewards in [-1, 1]."""
    if n_states * n_actions ** n_agents > MAX_TABULAR_CELLS:
        raise ConfigError("instance too large for exact evaluation")
    rng = np.random.default_rng(seed)
    n_joint = n_actions ** n_agents
    raw = rng.uniform(1e-3, 1.0, size=(n_states, n_joint, n_states))
    transition = raw / raw.sum(axis=2, keepdims=True)
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_joint))
    init_raw = rng.uniform(1e-3, 1.0, size=n_states)
    return TabularDecMDP(n_states, n_agents, n_actions, transition, reward,
                         init_raw / init_raw.sum(), gamma)


ENV_BUILDERS = {
    "matrix_game": MatrixGame,
    "aggregation": Aggregation,
    "mill": Mill,
}


def make_env(name: str, **params) -> Env:
    if name not in ENV_BUILDERS:
        raise ConfigError(f"unknown environment {name!r}")
    return ENV_BUILDERS[name](**params)
