"""Off-policy training for deterministic continuous policies.

Transition-level replay, a TD(0) critic loss against target networks, and
per-agent actor ascent along k_i * dQ_i/da_i. Actor and target updates are
delayed relative to critic updates; targets track slowly via soft updates.
"""

from __future__ import annotations

import time

import numpy as np

from .critic import DecomposedCritic
from .envs import Box
from .errors import ConfigError, InputError, ShapeError, StateError, TrainingError
from .metrics import MetricRecord
from .nets import Mlp, RmsProp, hard_sync, soft_sync


class DeterministicPolicySet:
    """Per-agent actors with tanh squashing into the action box."""

    def __init__(self, n_agents: int, obs_in: int, box: Box,
                 hidden=(64, 64), rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.n_agents = n_agents
        self.box = box
        self.mid = 0.5 * (box.high + box.low)
        self.half = 0.5 * (box.high - box.low)
        self.nets = [Mlp([obs_in, *hidden, box.dim], rng=rng)
                     for _ in range(n_agents)]
        self.target_nets = [net.clone() for net in self.nets]

    def _squash(self, raw: np.ndarray) -> np.ndarray:
        return self.mid + self.half * np.tanh(raw)

    def actions(self, obs: np.ndarray, target: bool = False) -> np.ndarray:
        """Squashed actions for (B, n, d) observations -> (B, n, adim)."""
        obs = np.asarray(obs, dtype=np.float64)
        nets = self.target_nets if target else self.nets
        return np.stack([self._squash(nets[i].forward(obs[:, i]))
                         for i in range(self.n_agents)], axis=1)

    def actions_train(self, obs: np.ndarray):
        """Like actions(), but caches for backward_actor. Returns (actions, tanhs)."""
        obs = np.asarray(obs, dtype=np.float64)
        tanhs = [np.tanh(self.nets[i].forward_train(obs[:, i]))
                 for i in range(self.n_agents)]
        actions = np.stack([self.mid + self.half * t for t in tanhs], axis=1)
        return actions, tanhs

    def backward_actor(self, agent: int, tanh_cache: np.ndarray,
                       upstream_action: np.ndarray):
        """Chain an action-space gradient through the squash into the net."""
        d_raw = upstream_action * self.half * (1.0 - tanh_cache ** 2)
        return self.nets[agent].backward(d_raw)

    def sync_targets(self) -> None:
        for net, tgt in zip(self.nets, self.target_nets):
            hard_sync(tgt.params, net.params)

    def soft_sync_targets(self, alpha: float) -> None:
        for net, tgt in zip(self.nets, self.target_nets):
            soft_sync(tgt.params, net.params, alpha)


class OrnsteinUhlenbeckNoise:
    """Temporally correlated exploration noise, reset at episode starts."""

    def __init__(self, shape, theta: float, sigma: float):
        self.shape = shape
        self.theta = theta
        self.sigma = sigma
        self.state = np.zeros(shape)

    def reset(self) -> None:
        self.state = np.zeros(self.shape)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        self.state = (self.state - self.theta * self.state
                      + self.sigma * rng.standard_normal(self.shape))
        return self.state


class TransitionBuffer:
    """Fixed-capacity ring buffer of environment transitions."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int,
                 state_dim: int, act_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.obs = np.zeros((capacity, n_agents, obs_dim))
        self.actions = np.zeros((capacity, n_agents, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.next_obs = np.zeros((capacity, n_agents, obs_dim))
        self.terminated = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def add(self, state, obs, action, reward, next_state, next_obs,
            terminated: bool) -> None:
        i = self.pos
        self.states[i] = state
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.next_obs[i] = next_obs
        self.terminated[i] = terminated
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise StateError("transition buffer is empty")
        return rng.integers(self.size, size=batch)


def soft_update(target_params, online_params, alpha: float) -> None:
    """target <- alpha * online + (1 - alpha) * target for each tensor."""
    if not 0.0 < alpha <= 1.0:
        raise InputError("alpha must be in (0, 1]")
    target_params = list(target_params)
    online_params = list(online_params)
    for t, p in zip(target_params, online_params):
        if t.shape != p.shape:
            raise ShapeError(f"shape mismatch {t.shape} vs {p.shape}")
    soft_sync(target_params, online_params, alpha)


def det_critic_update(critic: DecomposedCritic, optimizers: dict[str, RmsProp],
                      buffer: TransitionBuffer, idx: np.ndarray,
                      actors: DeterministicPolicySet, gamma: float) -> float:
    """TD(0) step: targets r + gamma * Q'(s', mu'(o')), zero past terminals."""
    if buffer.size == 0:
        raise StateError("transition buffer is empty")
    states = buffer.states[idx]
    actions = buffer.actions[idx]
    next_actions = actors.actions(buffer.next_obs[idx], target=True)
    q_next = critic.q_tot(buffer.next_states[idx], next_actions, target=True)
    y = buffer.rewards[idx] + gamma * np.where(buffer.terminated[idx], 0.0, q_next)
    q, cache = critic.q_tot_train(states, actions)
    err = q - y
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise TrainingError("non-finite critic loss")
    grads = critic.backward_q_tot(cache, 2.0 * err / len(err))
    for name, grad in grads.items():
        optimizers[name].step(grad)
    return loss


def det_actor_update(critic: DecomposedCritic, actors: DeterministicPolicySet,
                     optimizers: list[RmsProp], buffer: TransitionBuffer,
                     idx: np.ndarray) -> None:
    """Ascend mean of sum_i k_i * dQ_i/da_i * dmu_i/dtheta_i at a = mu(o)."""
    states = buffer.states[idx]
    obs = buffer.obs[idx]
    actions, tanhs = actors.actions_train(obs)
    dqda = critic.action_gradients(states, actions)  # (B, n, adim), includes k_i
    batch = len(states)
    for i in range(actors.n_agents):
        grad, _ = actors.backward_actor(i, tanhs[i], dqda[:, i] / batch)
        optimizers[i].step(grad)  # maximize mode


class DeterministicTrainer:
    """Replay-driven actor-critic loop for continuous-action tasks."""

    def __init__(self, env_factory, hp: dict, seed: int, run_id: str = "run"):
        self.hp = hp
        self.run_id = run_id
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        init_ss, env_ss, act_ss, sample_ss, eval_ss = ss.spawn(5)
        self.rng_init = np.random.default_rng(init_ss)
        self.rng_env = np.random.default_rng(env_ss)
        self.rng_act = np.random.default_rng(act_ss)
        self.rng_sample = np.random.default_rng(sample_ss)
        self.rng_eval = np.random.default_rng(eval_ss)

        self.env = env_factory()
        self.eval_env = env_factory()
        spec = self.env.spec
        if spec.discrete:
            raise ConfigError("deterministic training needs a continuous action space")
        box: Box = spec.action_space
        self.gamma = spec.gamma
        hidden = (hp["hidden"], hp["hidden"])
        self.critic = DecomposedCritic(
            spec.n_agents, spec.state_dim, box, hidden=hidden,
            shared_utility=hp["shared_utility"],
            normalize_weights=hp["normalize_weights"], rng=self.rng_init)
        self.actors = DeterministicPolicySet(spec.n_agents, spec.obs_dim, box,
                                             hidden=hidden, rng=self.rng_init)
        self.buffer = TransitionBuffer(hp["buffer_size"], spec.n_agents,
                                       spec.obs_dim, spec.state_dim, box.dim)
        self.critic_opt = {
            name: RmsProp(params, hp["critic_lr"], hp["rms_alpha"], hp["rms_eps"])
            for name, params in self.critic.components().items()}
        self.actor_opt = [RmsProp(net.params, hp["actor_lr"], hp["rms_alpha"],
                                  hp["rms_eps"], maximize=True)
                          for net in self.actors.nets]
        if hp["noise_kind"] == "ou":
            self.noise = OrnsteinUhlenbeckNoise((spec.n_agents, box.dim),
                                                hp["ou_theta"], hp["noise_sigma"])
        elif hp["noise_kind"] == "gaussian":
            self.noise = None
        else:
            raise ConfigError(f"unknown noise kind {hp['noise_kind']!r}")
        self.env_steps = 0
        self.critic_updates = 0

    def _explore_action(self, obs: np.ndarray) -> np.ndarray:
        hp = self.hp
        box = self.env.spec.action_space
        if self.env_steps < hp["warmup_steps"]:
            return self.rng_act.uniform(box.low, box.high,
                                        size=(self.env.spec.n_agents, box.dim))
        base = self.actors.actions(obs[None])[0]
        if self.noise is not None:
            noise = self.noise.sample(self.rng_act)
        else:
            noise = hp["noise_sigma"] * self.rng_act.standard_normal(base.shape)
        return np.clip(base + noise, box.low, box.high)

    def greedy_return(self, episodes: int) -> float:
        total = 0.0
        for _ in range(episodes):
            obs, _ = self.eval_env.reset(self.rng_eval)
            for _ in range(self.eval_env.spec.episode_limit):
                result = self.eval_env.step(self.actors.actions(obs[None])[0])
                total += result.reward
                obs = result.observations
                if result.terminated or result.truncated:
                    break
        return total / episodes

    def eval_states(self, episodes: int = 1):
        """States and observations visited by the greedy policy (for probes)."""
        states, observations = [], []
        for _ in range(episodes):
            obs, state = self.eval_env.reset(self.rng_eval)
            for _ in range(self.eval_env.spec.episode_limit):
                states.append(state)
                observations.append(obs)
                result = self.eval_env.step(self.actors.actions(obs[None])[0])
                obs, state = result.observations, result.state
                if result.terminated or result.truncated:
                    break
        return np.asarray(states), np.asarray(observations)

    def run(self, total_steps: int, metric_period: int, sink, probe=None,
            record_wall_clock: bool = False):
        hp = self.hp
        start = time.perf_counter()
        next_metric = metric_period
        obs, state = self.env.reset(self.rng_env)
        if self.noise is not None:
            self.noise.reset()
        episode_return = 0.0
        recent_returns: list[float] = []
        last_loss = None
        last_spread = None
        while self.env_steps < total_steps:
            action = self._explore_action(obs)
            result = self.env.step(action)
            self.buffer.add(state, obs, action, result.reward,
                            result.state, result.observations, result.terminated)
            episode_return += result.reward
            obs, state = result.observations, result.state
            self.env_steps += 1
            if result.terminated or result.truncated:
                recent_returns.append(episode_return)
                episode_return = 0.0
                obs, state = self.env.reset(self.rng_env)
                if self.noise is not None:
                    self.noise.reset()

            try:
                if (self.env_steps >= hp["warmup_steps"]
                        and self.env_steps % hp["train_every"] == 0):
                    idx = self.buffer.sample(hp["batch_size"], self.rng_sample)
                    last_loss = det_critic_update(self.critic, self.critic_opt,
                                                  self.buffer, idx, self.actors,
                                                  self.gamma)
                    self.critic_updates += 1
                    if self.critic_updates % hp["actor_delay"] == 0:
                        det_actor_update(self.critic, self.actors, self.actor_opt,
                                         self.buffer, idx)
                        alpha = hp["soft_alpha"]
                        self.critic.soft_sync_target(alpha)
                        self.actors.soft_sync_targets(alpha)
                        k, _ = self.critic.mixing(state[None])
                        last_spread = float(k.max() - k.min())
            except TrainingError as exc:
                exc.step = self.env_steps  # type: ignore[attr-defined]
                raise

            if self.env_steps >= next_metric:
                record = MetricRecord(
                    run_id=self.run_id, seed=self.seed, step=self.env_steps,
                    return_train=(float(np.mean(recent_returns))
                                  if recent_returns else None),
                    return_greedy=self.greedy_return(hp["eval_episodes"]),
                    loss_tb=last_loss, k_spread=last_spread,
                    wall_clock=(time.perf_counter() - start
                                if record_wall_clock else None))
                if probe is not None:
                    for key, value in probe(self).items():
                        setattr(record, key, value)
                sink.emit(record)
                recent_returns = []
                next_metric = (self.env_steps // metric_period + 1) * metric_period
        return self


def train_deterministic(env_factory, hp: dict, seed: int, total_steps: int,
                        metric_period: int, sink, run_id: str = "run",
                        probe=None, record_wall_clock: bool = False) -> DeterministicTrainer:
    trainer = DeterministicTrainer(env_factory, hp, seed, run_id)
    trainer.run(total_steps, metric_period, sink, probe, record_wall_clock)
    return trainer
