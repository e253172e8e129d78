"""Joint-critic comparators: counterfactual-advantage training and
deterministic gradients through an undecomposed critic.

These share the environment, network, and optimizer stack with the
decomposed trainers so head-to-head runs differ only in the algorithm.
"""

from __future__ import annotations

import time

import numpy as np

from .envs import Box, Discrete
from .errors import ConfigError, DataError, StateError, TrainingError, UnsupportedOperation
from .metrics import MetricRecord
from .nets import Mlp, RmsProp, hard_sync, soft_sync, softmax
from .deterministic import (DeterministicPolicySet, OrnsteinUhlenbeckNoise,
                            TransitionBuffer, soft_update)
from .stochastic import (EpisodeBuffers, StochasticPolicySet, epsilon_at,
                         history_input, rollout_discrete, window_inputs)


class JointCritic:
    """One network over the full joint action.

    mode="scalar": input state + encoded joint action, scalar output.
    mode="counterfactual": input state + agent one-hot + other agents'
    action one-hots (own block zeroed), one output per own action, so all
    |A| counterfactuals for one agent come from a single pass.
    """

    def __init__(self, n_agents: int, state_dim: int, action_space,
                 hidden=(64, 64), mode: str = "scalar",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.action_space = action_space
        self.discrete = isinstance(action_space, Discrete)
        self.mode = mode
        if mode == "scalar":
            act_width = (n_agents * action_space.n if self.discrete
                         else n_agents * action_space.dim)
            self.net = Mlp([state_dim + act_width, *hidden, 1], rng=rng)
        elif mode == "counterfactual":
            if not self.discrete:
                raise UnsupportedOperation("counterfactual mode needs discrete actions")
            in_dim = state_dim + n_agents + n_agents * action_space.n
            self.net = Mlp([in_dim, *hidden, action_space.n], rng=rng)
        else:
            raise ConfigError(f"unknown joint critic mode {mode!r}")
        self.target_net = self.net.clone()

    def sync_target(self) -> None:
        hard_sync(self.target_net.params, self.net.params)

    # -- scalar mode ------------------------------------------------------------

    def _scalar_input(self, states, action_vecs):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        action_vecs = np.asarray(action_vecs, dtype=np.float64)
        return np.concatenate([states, action_vecs.reshape(len(states), -1)], axis=1)

    def q(self, states, action_vecs, target: bool = False) -> np.ndarray:
        net = self.target_net if target else self.net
        return net.forward(self._scalar_input(states, action_vecs))[:, 0]

    def q_train(self, states, action_vecs) -> np.ndarray:
        return self.net.forward_train(self._scalar_input(states, action_vecs))[:, 0]

    def q_with_action_grad(self, states, action_vecs):
        """Q values plus dQ/d(action encoding), shape (B, act_width)."""
        x = self._scalar_input(states, action_vecs)
        q = self.net.forward_train(x)[:, 0]
        _, dx = self.net.backward(np.ones((len(x), 1)))
        return q, dx[:, self.state_dim:]

    # -- counterfactual mode ------------------------------------------------------

    def _cf_input(self, states, actions, agent: int):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.asarray(actions, dtype=np.int64)
        batch = len(states)
        n, n_a = self.n_agents, self.action_space.n
        onehots = np.zeros((batch, n, n_a))
        np.put_along_axis(onehots, actions[..., None], 1.0, axis=2)
        onehots[:, agent] = 0.0  # own action marginalized out
        agent_id = np.zeros((batch, n))
        agent_id[:, agent] = 1.0
        return np.concatenate([states, agent_id, onehots.reshape(batch, -1)], axis=1)

    def counterfactuals(self, states, actions, agent: int,
                        target: bool = False, train: bool = False) -> np.ndarray:
        """Q(s, (a_-agent, .)) for every own action, shape (B, |A|)."""
        if self.mode != "counterfactual":
            raise UnsupportedOperation("critic not in counterfactual mode")
        net = self.target_net if target else self.net
        x = self._cf_input(states, actions, agent)
        return net.forward_train(x) if train else net.forward(x)


def coma_advantage(joint_critic: JointCritic, state, joint_action,
                   agent: int, policy_probs: np.ndarray) -> float:
    """Counterfactual advantage: Q(s, a) minus own-policy average over a_i."""
    if not joint_critic.discrete:
        raise UnsupportedOperation("counterfactual advantage needs discrete actions")
    actions = np.asarray(joint_action, dtype=np.int64)[None]
    values = joint_critic.counterfactuals(np.atleast_2d(state), actions, agent)[0]
    taken = values[actions[0, agent]]
    return float(taken - np.asarray(policy_probs) @ values)


def coma_grad_term(joint_critic: JointCritic, policies: StochasticPolicySet,
                   state, obs_win, joint_action, agent: int) -> np.ndarray:
    """Per-sample actor gradient under the counterfactual-advantage estimator."""
    obs_row = np.atleast_2d(obs_win[agent])
    logits = policies.nets[agent].forward_train(obs_row)
    p = softmax(logits)[0]
    adv = coma_advantage(joint_critic, state, joint_action, agent, p)
    a = int(joint_action[agent])
    upstream = adv * (np.eye(policies.n_actions)[a] - p)
    grad, _ = policies.nets[agent].backward(upstream[None])
    return grad.flat()


# -- COMA training ---------------------------------------------------------------

class ComaTrainer:
    """On-policy actor-critic with a counterfactual joint critic.

    The critic learns per-agent value heads by TD(lambda) on recent episodes;
    actors ascend log-prob gradients weighted by the counterfactual advantage.
    Collection, exploration, and logging mirror the decomposed trainer.
    """

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
        if not spec.discrete:
            raise ConfigError("counterfactual training needs a discrete action space")
        self.gamma = spec.gamma
        self.window = hp["window"]
        hidden = (hp["hidden"], hp["hidden"])
        self.critic = JointCritic(spec.n_agents, spec.state_dim, spec.action_space,
                                  hidden=hidden, mode="counterfactual",
                                  rng=self.rng_init)
        self.policies = StochasticPolicySet(
            spec.n_agents, spec.obs_dim * self.window, spec.action_space.n,
            hidden=hidden, rng=self.rng_init)
        self.buffers = EpisodeBuffers(hp["buffer_off"], hp["buffer_on"])
        self.critic_opt = RmsProp(self.net_params(), hp["critic_lr"],
                                  hp["rms_alpha"], hp["rms_eps"])
        self.actor_opt = [RmsProp(net.params, hp["actor_lr"], hp["rms_alpha"],
                                  hp["rms_eps"], maximize=True)
                          for net in self.policies.nets]
        self.env_steps = 0
        self.critic_updates = 0
        self.fresh: list = []

    def net_params(self):
        return self.critic.net.params

    def _critic_update(self, episodes) -> float:
        """Per-head TD(lambda) regression on every step of the batch."""
        n = self.policies.n_agents
        lam = self.hp["lambda_on"]
        x_rows, y_rows, slots = [], [], []
        for ep in episodes:
            t_len = ep.length
            states = ep.states[:t_len]
            q_heads = np.stack(
                [self.critic.counterfactuals(states, ep.actions, i, target=True)
                 for i in range(n)], axis=1)  # (T, n, A)
            q_taken = np.take_along_axis(q_heads, ep.actions[..., None],
                                         axis=2)[..., 0]  # (T, n)
            q_next = np.zeros((t_len, n))
            q_next[:t_len - 1] = q_taken[1:]
            delta = ep.rewards[:, None] + self.gamma * q_next - q_taken
            y = np.empty((t_len, n))
            acc = np.zeros(n)
            for t in range(t_len - 1, -1, -1):
                acc = delta[t] + self.gamma * lam * acc
                y[t] = q_taken[t] + acc
            for i in range(n):
                x_rows.append(self.critic._cf_input(states, ep.actions, i))
                y_rows.append(y[:, i])
                slots.append(ep.actions[:, i])
        x = np.concatenate(x_rows)
        targets = np.concatenate(y_rows)
        slots = np.concatenate(slots)
        out = self.critic.net.forward_train(x)
        taken = out[np.arange(len(out)), slots]
        err = taken - targets
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise TrainingError("non-finite critic loss")
        upstream = np.zeros_like(out)
        upstream[np.arange(len(out)), slots] = 2.0 * err / len(err)
        grad, _ = self.critic.net.backward(upstream)
        self.critic_opt.step(grad)
        return loss

    def _actor_update(self, episodes) -> None:
        for ep in episodes:
            if ep.policy_version != self.policies.version:
                raise DataError("actor batch contains stale-policy episodes")
        states = np.concatenate([ep.states[:ep.length] for ep in episodes])
        wins = np.concatenate([window_inputs(ep.observations, self.window)[:ep.length]
                               for ep in episodes])
        actions = np.concatenate([ep.actions for ep in episodes])
        batch = len(states)
        for i in range(self.policies.n_agents):
            values = self.critic.counterfactuals(states, actions, i)  # (B, A)
            logits = self.policies.nets[i].forward_train(wins[:, i])
            p_i = softmax(logits)
            a_i = actions[:, i]
            adv = values[np.arange(batch), a_i] - (p_i * values).sum(axis=1)
            upstream = (adv / batch)[:, None] * (np.eye(self.policies.n_actions)[a_i] - p_i)
            grad, _ = self.policies.nets[i].backward(upstream)
            self.actor_opt[i].step(grad)
        self.policies.version += 1

    def greedy_return(self, episodes: int) -> float:
        total = 0.0
        for _ in range(episodes):
            obs, _ = self.eval_env.reset(self.rng_eval)
            obs_seq = [obs]
            for _ in range(self.eval_env.spec.episode_limit):
                actions = self.policies.greedy(history_input(obs_seq, self.window))
                result = self.eval_env.step(actions)
                total += result.reward
                obs_seq.append(result.observations)
                if result.terminated or result.truncated:
                    break
        return total / episodes

    def run(self, total_steps: int, metric_period: int, sink, probe=None,
            record_wall_clock: bool = False):
        hp = self.hp
        start = time.perf_counter()
        next_metric = metric_period
        recent_returns: list[float] = []
        last_loss = None
        while self.env_steps < total_steps:
            for _ in range(hp["n_envs"]):
                eps = epsilon_at(self.env_steps, hp["eps_start"], hp["eps_end"],
                                 hp["eps_anneal"])
                episode = rollout_discrete(self.env, self.policies, self.window,
                                           eps, self.rng_env, self.rng_act)
                self.buffers.add(episode)
                self.fresh.append(episode)
                self.env_steps += episode.length
                recent_returns.append(float(episode.rewards.sum()))
            try:
                if len(self.fresh) >= hp["actor_batch"]:
                    self._actor_update(self.fresh[:hp["actor_batch"]])
                    self.fresh = []
                if len(self.buffers.on) >= 1:
                    batch = self.buffers.sample_on(hp["batch_on"], self.rng_sample)
                    last_loss = self._critic_update(batch)
                    self.critic_updates += 1
                    if self.critic_updates % hp["target_period"] == 0:
                        self.critic.sync_target()
                        self.policies.sync_targets()
            except TrainingError as exc:
                exc.step = self.env_steps  # type: ignore[attr-defined]
                raise
            if self.env_steps >= next_metric:
                record = MetricRecord(
                    run_id=self.run_id, seed=self.seed, step=self.env_steps,
                    return_train=(float(np.mean(recent_returns))
                                  if recent_returns else None),
                    return_greedy=self.greedy_return(hp["eval_episodes"]),
                    loss_on=last_loss,
                    wall_clock=(time.perf_counter() - start
                                if record_wall_clock else None))
                if probe is not None:
                    for key, value in probe(self).items():
                        setattr(record, key, value)
                sink.emit(record)
                recent_returns = []
                next_metric = (self.env_steps // metric_period + 1) * metric_period
        return self


def coma_train(env_factory, hp: dict, seed: int, total_steps: int,
               metric_period: int, sink, run_id: str = "run", probe=None,
               record_wall_clock: bool = False) -> ComaTrainer:
    trainer = ComaTrainer(env_factory, hp, seed, run_id)
    trainer.run(total_steps, metric_period, sink, probe, record_wall_clock)
    return trainer


# -- Gumbel-Softmax machinery ------------------------------------------------------

GUMBEL_EPS = 1e-20


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(u + GUMBEL_EPS) + GUMBEL_EPS)


def gumbel_softmax(logits: np.ndarray, noise: np.ndarray,
                   temperature: float = 1.0, hard: bool = False) -> np.ndarray:
    """Relaxed categorical sample; argmax equals a Gumbel-max hard sample."""
    y = softmax((logits + noise) / temperature)
    if hard:
        hard_y = np.zeros_like(y)
        hard_y[np.arange(len(y)), y.argmax(axis=1)] = 1.0
        return hard_y
    return y


def gumbel_softmax_backward(y: np.ndarray, upstream: np.ndarray,
                            temperature: float) -> np.ndarray:
    """d(relaxed sample)/d(logits) applied to an upstream gradient."""
    inner = (upstream * y).sum(axis=1, keepdims=True)
    return y * (upstream - inner) / temperature


class RelaxedCategoricalActors:
    """Per-agent logits networks acting through Gumbel-Softmax relaxation."""

    def __init__(self, n_agents: int, obs_in: int, n_actions: int,
                 hidden=(64, 64), temperature: float = 1.0,
                 straight_through: bool = False,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.temperature = temperature
        self.straight_through = straight_through
        self.nets = [Mlp([obs_in, *hidden, n_actions], rng=rng)
                     for _ in range(n_agents)]
        self.target_nets = [net.clone() for net in self.nets]

    def sample(self, obs: np.ndarray, rng: np.random.Generator,
               target: bool = False) -> np.ndarray:
        """Relaxed action vectors (B, n, A); env actions are their argmax."""
        obs = np.asarray(obs, dtype=np.float64)
        nets = self.target_nets if target else self.nets
        out = []
        for i in range(self.n_agents):
            logits = nets[i].forward(obs[:, i])
            noise = gumbel_noise(rng, logits.shape)
            relaxed = gumbel_softmax(logits, noise, self.temperature)
            if self.straight_through:
                hard = np.zeros_like(relaxed)
                hard[np.arange(len(relaxed)), relaxed.argmax(axis=1)] = 1.0
                relaxed = hard  # gradients still flow via the relaxed sample
            out.append(relaxed)
        return np.stack(out, axis=1)

    def probs(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        return np.stack([softmax(self.nets[i].forward(obs[:, i]))
                         for i in range(self.n_agents)], axis=1)

    def greedy(self, obs: np.ndarray) -> np.ndarray:
        return self.probs(obs[None])[0].argmax(axis=1)

    def sync_targets(self) -> None:
        for net, tgt in zip(self.nets, self.target_nets):
            hard_sync(tgt.params, net.params)

    def soft_sync_targets(self, alpha: float) -> None:
        for net, tgt in zip(self.nets, self.target_nets):
            soft_sync(tgt.params, net.params, alpha)


def maddpg_grad_term(joint_critic: JointCritic, actors: RelaxedCategoricalActors,
                     state, obs_win, joint_action, agent: int,
                     noise_row: np.ndarray) -> np.ndarray:
    """Per-sample actor gradient under the relaxed joint-critic estimator.

    The agent's own relaxed sample is pinned by noise_row; the other agents'
    actions enter the critic as hard one-hots, so the term varies with them.
    """
    n, n_a = actors.n_agents, actors.n_actions
    logits = actors.nets[agent].forward_train(np.atleast_2d(obs_win[agent]))
    relaxed = gumbel_softmax(logits, noise_row[None], actors.temperature)
    action_mat = np.zeros((1, n, n_a))
    for j in range(n):
        if j == agent:
            action_mat[0, j] = relaxed[0]
        else:
            action_mat[0, j, int(joint_action[j])] = 1.0
    _, dact = joint_critic.q_with_action_grad(np.atleast_2d(state), action_mat)
    d_relaxed = dact[:, agent * n_a:(agent + 1) * n_a]
    d_logits = gumbel_softmax_backward(relaxed, d_relaxed, actors.temperature)
    grad, _ = actors.nets[agent].backward(d_logits)
    return grad.flat()


# -- MADDPG training ---------------------------------------------------------------

class MaddpgTrainer:
    """Deterministic gradients through a joint critic with replay.

    Continuous tasks use tanh-squashed actors; discrete tasks require the
    relaxation flag and act through Gumbel-Softmax samples whose argmax is
    executed in the environment while the relaxed vector feeds the critic.
    """

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
        self.gamma = spec.gamma
        self.discrete = spec.discrete
        hidden = (hp["hidden"], hp["hidden"])
        if self.discrete:
            if not hp["discrete_relaxation"]:
                raise ConfigError("discrete env needs discrete_relaxation=true")
            n_a = spec.action_space.n
            self.actors = RelaxedCategoricalActors(
                spec.n_agents, spec.obs_dim, n_a, hidden=hidden,
                temperature=hp["gumbel_temperature"],
                straight_through=hp["straight_through"], rng=self.rng_init)
            act_dim = n_a
            self.noise = None
        else:
            box: Box = spec.action_space
            self.actors = DeterministicPolicySet(spec.n_agents, spec.obs_dim, box,
                                                 hidden=hidden, rng=self.rng_init)
            act_dim = box.dim
            if hp["noise_kind"] == "ou":
                self.noise = OrnsteinUhlenbeckNoise((spec.n_agents, box.dim),
                                                    hp["ou_theta"], hp["noise_sigma"])
            else:
                self.noise = None
        self.critic = JointCritic(spec.n_agents, spec.state_dim, spec.action_space,
                                  hidden=hidden, mode="scalar", rng=self.rng_init)
        self.buffer = TransitionBuffer(hp["buffer_size"], spec.n_agents,
                                       spec.obs_dim, spec.state_dim, act_dim)
        self.critic_opt = RmsProp(self.critic.net.params, hp["critic_lr"],
                                  hp["rms_alpha"], hp["rms_eps"])
        self.actor_opt = [RmsProp(net.params, hp["actor_lr"], hp["rms_alpha"],
                                  hp["rms_eps"], maximize=True)
                          for net in self.actors.nets]
        self.env_steps = 0
        self.critic_updates = 0

    # -- acting -----------------------------------------------------------------

    def _explore(self, obs):
        hp = self.hp
        spec = self.env.spec
        if self.discrete:
            if self.env_steps < hp["warmup_steps"]:
                logits = np.zeros((spec.n_agents, spec.action_space.n))
            else:
                logits = np.stack([self.actors.nets[i].forward(obs[None][:, i])[0]
                                   for i in range(spec.n_agents)])
            noise = gumbel_noise(self.rng_act, logits.shape)
            relaxed = gumbel_softmax(logits, noise, self.actors.temperature)
            return relaxed, relaxed.argmax(axis=1)
        box = spec.action_space
        if self.env_steps < hp["warmup_steps"]:
            action = self.rng_act.uniform(box.low, box.high,
                                          size=(spec.n_agents, box.dim))
            return action, action
        base = self.actors.actions(obs[None])[0]
        if self.noise is not None:
            extra = self.noise.sample(self.rng_act)
        else:
            extra = hp["noise_sigma"] * self.rng_act.standard_normal(base.shape)
        action = np.clip(base + extra, box.low, box.high)
        return action, action

    # -- updates ----------------------------------------------------------------

    def _critic_update(self, idx) -> float:
        if self.discrete:
            next_actions = self.actors.sample(self.buffer.next_obs[idx],
                                              self.rng_sample, target=True)
        else:
            next_actions = self.actors.actions(self.buffer.next_obs[idx], target=True)
        q_next = self.critic.q(self.buffer.next_states[idx], next_actions, target=True)
        y = self.buffer.rewards[idx] + self.gamma * np.where(
            self.buffer.terminated[idx], 0.0, q_next)
        q = self.critic.q_train(self.buffer.states[idx], self.buffer.actions[idx])
        err = q - y
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise TrainingError("non-finite critic loss")
        upstream = (2.0 * err / len(err))[:, None]
        grad, _ = self.critic.net.backward(upstream)
        self.critic_opt.step(grad)
        return loss

    def _actor_update(self, idx) -> None:
        states = self.buffer.states[idx]
        obs = self.buffer.obs[idx]
        batch = len(idx)
        n = self.actors.n_agents
        if self.discrete:
            n_a = self.actors.n_actions
            for i in range(n):
                logits = self.actors.nets[i].forward_train(obs[:, i])
                noise = gumbel_noise(self.rng_sample, logits.shape)
                relaxed = gumbel_softmax(logits, noise, self.actors.temperature)
                action_mat = self.buffer.actions[idx].copy()
                action_mat[:, i] = relaxed
                _, dact = self.critic.q_with_action_grad(states, action_mat)
                d_relaxed = dact[:, i * n_a:(i + 1) * n_a] / batch
                d_logits = gumbel_softmax_backward(relaxed, d_relaxed,
                                                   self.actors.temperature)
                grad, _ = self.actors.nets[i].backward(d_logits)
                self.actor_opt[i].step(grad)
        else:
            adim = self.env.spec.action_space.dim
            for i in range(n):
                raw = self.actors.nets[i].forward_train(obs[:, i])
                tanh = np.tanh(raw)
                action_mat = self.buffer.actions[idx].copy()
                action_mat[:, i] = self.actors.mid + self.actors.half * tanh
                _, dact = self.critic.q_with_action_grad(states, action_mat)
                d_own = dact[:, i * adim:(i + 1) * adim] / batch
                d_raw = d_own * self.actors.half * (1.0 - tanh ** 2)
                grad, _ = self.actors.nets[i].backward(d_raw)
                self.actor_opt[i].step(grad)

    def greedy_return(self, episodes: int) -> float:
        total = 0.0
        for _ in range(episodes):
            obs, _ = self.eval_env.reset(self.rng_eval)
            for _ in range(self.eval_env.spec.episode_limit):
                if self.discrete:
                    action = self.actors.greedy(obs)
                else:
                    action = self.actors.actions(obs[None])[0]
                result = self.eval_env.step(action)
                total += result.reward
                obs = result.observations
                if result.terminated or result.truncated:
                    break
        return total / episodes

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
        while self.env_steps < total_steps:
            stored_action, env_action = self._explore(obs)
            result = self.env.step(env_action)
            self.buffer.add(state, obs, stored_action, result.reward,
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
                    last_loss = self._critic_update(idx)
                    self.critic_updates += 1
                    if self.critic_updates % hp["actor_delay"] == 0:
                        self._actor_update(idx)
                        alpha = hp["soft_alpha"]
                        soft_update(self.critic.target_net.params,
                                    self.critic.net.params, alpha)
                        self.actors.soft_sync_targets(alpha)
            except TrainingError as exc:
                exc.step = self.env_steps  # type: ignore[attr-defined]
                raise
            if self.env_steps >= next_metric:
                record = MetricRecord(
                    run_id=self.run_id, seed=self.seed, step=self.env_steps,
                    return_train=(float(np.mean(recent_returns))
                                  if recent_returns else None),
                    return_greedy=self.greedy_return(hp["eval_episodes"]),
                    loss_tb=last_loss,
                    wall_clock=(time.perf_counter() - start
                                if record_wall_clock else None))
                if probe is not None:
                    for key, value in probe(self).items():
                        setattr(record, key, value)
                sink.emit(record)
                recent_returns = []
                next_metric = (self.env_steps // metric_period + 1) * metric_period
        return self


def maddpg_train(env_factory, hp: dict, seed: int, total_steps: int,
                 metric_period: int, sink, run_id: str = "run", probe=None,
                 record_wall_clock: bool = False) -> MaddpgTrainer:
    trainer = MaddpgTrainer(env_factory, hp, seed, run_id)
    trainer.run(total_steps, metric_period, sink, probe, record_wall_clock)
    return trainer


def common_tree_backup_trainer(env_factory, hp: dict, seed: int,
                               run_id: str = "run"):
    """Decomposed trainer whose backup expectation is Monte-Carlo estimated.

    Same update rules, but E_pi[Q_tot] inside the backup target is formed
    from hp['expectation_samples'] sampled joint actions instead of the
    n*|A| closed form.
    """
    from .stochastic import StochasticTrainer

    hp = {**hp, "expectation_mode": "sampled"}
    return StochasticTrainer(env_factory, hp, seed, run_id)
