"""Off-policy training for stochastic (categorical) decentralized policies.

The critic learns from a mixed loss: a k-step tree-backup target computed
from replayed episodes (behavior-policy data, corrected through the target
policy's action probabilities) blended with an on-policy TD(lambda) target.
Actors ascend per-agent gradients that read only the agent's own local value
and mixing weight, so one agent's update is unaffected by how the others
happened to act in the batch.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .critic import DecomposedCritic
from .envs import Episode, enumerate_joint_actions
from .errors import ConfigError, DataError, InputError, StateError, TrainingError
from .metrics import MetricRecord
from .nets import Mlp, RmsProp, hard_sync, softmax


def window_inputs(observations: np.ndarray, window: int) -> np.ndarray:
    """Stack each step with its window-1 predecessors (zero-padded at start).

    observations: (T, n, d) -> (T, n, d*window), oldest slice first.
    """
    if window == 1:
        return observations
    t_len, n, d = observations.shape
    out = np.zeros((t_len, n, d * window))
    for w in range(window):
        shift = window - 1 - w  # how far back this slice looks
        out[shift:, :, w * d:(w + 1) * d] = observations[:t_len - shift]
    return out


def history_input(obs_seq: list[np.ndarray], window: int) -> np.ndarray:
    """Actor input for the latest step of an in-progress rollout."""
    if window == 1:
        return obs_seq[-1]
    hist = np.zeros((window, *obs_seq[-1].shape))
    tail = obs_seq[-window:]
    hist[window - len(tail):] = tail
    return np.concatenate(list(hist), axis=1)


class StochasticPolicySet:
    """Per-agent categorical policies: logits networks with softmax sampling."""

    def __init__(self, n_agents: int, obs_in: int, n_actions: int,
                 hidden=(64, 64), rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.nets = [Mlp([obs_in, *hidden, n_actions], rng=rng)
                     for _ in range(n_agents)]
        self.target_nets = [net.clone() for net in self.nets]
        self.version = 0

    def probs(self, obs: np.ndarray, target: bool = False) -> np.ndarray:
        """Action distributions for (B, n, d) observation windows -> (B, n, A)."""
        obs = np.asarray(obs, dtype=np.float64)
        nets = self.target_nets if target else self.nets
        return np.stack([softmax(nets[i].forward(obs[:, i]))
                         for i in range(self.n_agents)], axis=1)

    def act(self, obs: np.ndarray, epsilon: float, rng: np.random.Generator):
        """Sample from the (1-eps) pi + eps/|A| mixture per agent.

        Returns (actions (n,), behavior probabilities (n,)); the recorded
        probability is the mixture mass of the sampled action, so it is
        always at least eps/|A|.
        """
        if not 0.0 <= epsilon <= 1.0:
            raise InputError("epsilon must be in [0, 1]")
        probs = self.probs(obs[None])[0]
        mixture = (1.0 - epsilon) * probs + epsilon / self.n_actions
        cdf = np.cumsum(mixture, axis=1)
        draws = rng.random(self.n_agents) * cdf[:, -1]
        actions = np.empty(self.n_agents, dtype=np.int64)
        taken = np.empty(self.n_agents)
        for i in range(self.n_agents):
            actions[i] = np.searchsorted(cdf[i], draws[i], side="right")
            taken[i] = mixture[i, actions[i]]
        return actions, taken

    def greedy(self, obs: np.ndarray) -> np.ndarray:
        return self.probs(obs[None])[0].argmax(axis=1)

    def sync_targets(self) -> None:
        for net, tgt in zip(self.nets, self.target_nets):
            hard_sync(tgt.params, net.params)


@dataclass
class TbConfig:
    """Knobs of the mixed critic objective."""

    kappa: float = 0.5
    tb_steps: int = 5
    lambda_tb: float = 1.0
    lambda_on: float = 0.8
    target_period: int = 200
    batch_off: int = 32
    batch_on: int = 16

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigError("kappa must be in [0, 1]")
        if self.tb_steps < 1:
            raise ConfigError("tb_steps must be >= 1")


class EpisodeBuffers:
    """Ring buffer of replayed episodes plus a small recent-episode buffer."""

    def __init__(self, capacity_off: int = 5000, capacity_on: int = 32):
        self.off: deque[Episode] = deque(maxlen=capacity_off)
        self.on: deque[Episode] = deque(maxlen=capacity_on)

    def add(self, episode: Episode) -> None:
        self.off.append(episode)
        self.on.append(episode)

    def sample_off(self, n: int, rng: np.random.Generator) -> list[Episode]:
        if not self.off:
            raise StateError("off-policy buffer is empty")
        idx = rng.integers(len(self.off), size=n)
        return [self.off[i] for i in idx]

    def sample_on(self, n: int, rng: np.random.Generator) -> list[Episode]:
        if not self.on:
            raise StateError("on-policy buffer is empty")
        idx = rng.integers(len(self.on), size=n)
        return [self.on[i] for i in idx]


def rollout_discrete(env, policies: StochasticPolicySet, window: int,
                     epsilon: float, rng_env: np.random.Generator,
                     rng_act: np.random.Generator) -> Episode:
    obs, state = env.reset(rng_env)
    obs_seq, state_seq = [obs], [state]
    actions, probs, rewards = [], [], []
    terminated = False
    for _ in range(env.spec.episode_limit):
        a, p = policies.act(history_input(obs_seq, window), epsilon, rng_act)
        result = env.step(a)
        actions.append(a)
        probs.append(p)
        rewards.append(result.reward)
        obs_seq.append(result.observations)
        state_seq.append(result.state)
        if result.terminated or result.truncated:
            terminated = result.terminated
            break
    return Episode(np.asarray(obs_seq), np.asarray(state_seq),
                   np.asarray(actions, dtype=np.int64), np.asarray(rewards),
                   terminated, np.asarray(probs), policies.version)


# -- expectations --------------------------------------------------------------

def _expectation_from_parts(critic: DecomposedCritic, vals: np.ndarray,
                            k: np.ndarray, b: np.ndarray, probs: np.ndarray,
                            mode: str, n_samples: int,
                            rng: np.random.Generator | None) -> np.ndarray:
    """E_pi[Q_tot] from precomputed local values (B, n, A) and mixing terms."""
    batch, n, n_a = vals.shape
    if mode == "decomposed":
        critic.local_reads += batch * n * n_a
        return (k * (probs * vals).sum(axis=2)).sum(axis=1) + b
    if mode == "exhaustive":
        joint = enumerate_joint_actions(n, n_a)  # (U, n)
        w = np.ones((batch, len(joint)))
        for i in range(n):
            w *= probs[:, i, joint[:, i]]
        q = np.einsum("bi,bui->bu", k, vals[:, np.arange(n)[None, :], joint]) + b[:, None]
        critic.local_reads += batch * len(joint)
        return (w * q).sum(axis=1)
    if mode != "sampled":
        raise ConfigError(f"unknown expectation mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng()
    # inverse-CDF sampling per agent, vectorized over the batch
    cdf = np.cumsum(probs, axis=2)
    u = rng.random((batch, n, n_samples))
    idx = np.minimum((u[..., None] > cdf[:, :, None, :]).sum(axis=3), n_a - 1)
    gathered = np.take_along_axis(vals, idx, axis=2)  # (B, n, M)
    critic.local_reads += batch * n_samples
    return (k[:, :, None] * gathered).sum(axis=1).mean(axis=1) + b


def joint_expectation(critic: DecomposedCritic, states: np.ndarray,
                      probs: np.ndarray, mode: str = "decomposed",
                      n_samples: int = 200,
                      rng: np.random.Generator | None = None,
                      target: bool = False) -> np.ndarray:
    """E_pi[Q_tot(s, .)] per state row, under one of three estimators.

    decomposed: n*|A| local-value reads via the linear structure (exact).
    sampled:    Monte Carlo over n_samples joint actions drawn from pi.
    exhaustive: explicit summation over all |A|**n joint actions.
    """
    if mode == "decomposed":
        return critic.expected_q(states, probs, target=target)
    vals = critic.local_values(states, target=target)
    k, b = critic.mixing(states, target=target)
    return _expectation_from_parts(critic, vals, k, b, probs, mode, n_samples, rng)


# -- update targets ------------------------------------------------------------

class _EpisodeBatch:
    """Concatenated per-step arrays for a list of episodes.

    Full arrays carry T+1 rows per episode (including the final observation
    and state); step arrays carry the T acted steps.
    """

    def __init__(self, episodes: list[Episode], window: int):
        self.episodes = episodes
        self.lengths = [ep.length for ep in episodes]
        self.full_states = np.concatenate([ep.states for ep in episodes])
        self.full_wins = np.concatenate(
            [window_inputs(ep.observations, window) for ep in episodes])
        self.step_states = np.concatenate([ep.states[:ep.length] for ep in episodes])
        self.step_actions = np.concatenate([ep.actions for ep in episodes])
        self.rewards = np.concatenate([ep.rewards for ep in episodes])
        self.terminated = np.array([ep.terminated for ep in episodes])
        self.full_offsets = np.cumsum([0] + [t + 1 for t in self.lengths])
        self.step_offsets = np.cumsum([0] + self.lengths)
        # full-array index of each acted step (skips the per-episode final row)
        self.step_to_full = np.concatenate(
            [np.arange(f0, f0 + t) for f0, t in
             zip(self.full_offsets[:-1], self.lengths)])


def _batch_targets(episodes: list[Episode], critic: DecomposedCritic,
                   policies: StochasticPolicySet, cfg: TbConfig, gamma: float,
                   window: int, expectation_mode: str = "decomposed",
                   expectation_samples: int = 200,
                   rng: np.random.Generator | None = None):
    """Tree-backup and TD(lambda) targets for every step of every episode.

    Returns (batch, y_tb, y_on) with targets aligned to the batch's step
    arrays. All value reads use the target critic; action probabilities come
    from the current policies.
    """
    batch = _EpisodeBatch(episodes, window)
    n_steps = batch.step_offsets[-1]
    probs = policies.probs(batch.full_wins)  # (M1, n, A)
    # one target-critic pass over the full rows serves both the expectation
    # and the taken-action values
    vals = critic.local_values(batch.full_states, target=True)  # (M1, n, A)
    k, b = critic.mixing(batch.full_states, target=True)
    eq = _expectation_from_parts(critic, vals, k, b, probs, expectation_mode,
                                 expectation_samples, rng)
    m0 = np.arange(n_steps)
    n_agents = vals.shape[1]
    agent_idx = np.arange(n_agents)[None, :]
    step_vals = vals[batch.step_to_full]
    taken_vals = step_vals[m0[:, None], agent_idx, batch.step_actions]
    q_taken = ((k[batch.step_to_full] * taken_vals).sum(axis=1)
               + b[batch.step_to_full])

    step_probs = probs[batch.step_to_full]  # (M0, n, A)
    pi_joint = np.prod(step_probs[m0[:, None], agent_idx, batch.step_actions],
                       axis=1)

    last_steps = batch.step_offsets[1:] - 1  # final acted step per episode
    finals = batch.full_offsets[1:] - 1  # final observation row per episode

    eq_next = eq[batch.step_to_full + 1].copy()
    eq_next[last_steps[batch.terminated]] = 0.0  # no bootstrap past a terminal
    delta_tb = batch.rewards + gamma * eq_next - q_taken

    q_next = np.empty(n_steps)
    q_next[:n_steps - 1] = q_taken[1:]
    q_next[last_steps] = np.where(batch.terminated, 0.0, eq[finals])
    delta_on = batch.rewards + gamma * q_next - q_taken

    y_tb = np.empty(n_steps)
    y_on = np.empty(n_steps)
    lam_tb, lam_on, k_steps = cfg.lambda_tb, cfg.lambda_on, cfg.tb_steps
    d_tb, d_on, pij, qt = (delta_tb.tolist(), delta_on.tolist(),
                           pi_joint.tolist(), q_taken.tolist())
    for e, t_len in enumerate(batch.lengths):
        s0 = batch.step_offsets[e]
        acc = 0.0
        for t in range(t_len - 1, -1, -1):
            acc = d_on[s0 + t] + gamma * lam_on * acc
            y_on[s0 + t] = qt[s0 + t] + acc
        for t0 in range(t_len):
            horizon = min(k_steps, t_len - t0)
            coef, disc, acc = 1.0, 1.0, 0.0
            for u in range(horizon):
                if u > 0:
                    coef *= lam_tb * pij[s0 + t0 + u]
                acc += disc * coef * d_tb[s0 + t0 + u]
                disc *= gamma
            y_tb[s0 + t0] = qt[s0 + t0] + acc
    return batch, y_tb, y_on


def tb_target(episode: Episode, t0: int, critic: DecomposedCritic,
              policies: StochasticPolicySet, cfg: TbConfig, gamma: float,
              window: int = 1) -> float:
    """k-step tree-backup target from step t0 (target critic, current policies)."""
    if episode.behavior_probs is None:
        raise DataError("episode lacks behavior probabilities")
    if not 0 <= t0 < episode.length:
        raise InputError("t0 outside episode")
    _, y_tb, _ = _batch_targets([episode], critic, policies, cfg, gamma, window)
    return float(y_tb[t0])


def on_target(episode: Episode, t0: int, critic: DecomposedCritic,
              lambda_on: float, gamma: float) -> float:
    """TD(lambda) target from step t0 using the target critic, zero tail value."""
    if not 0 <= t0 < episode.length:
        raise InputError("t0 outside episode")
    t_len = episode.length
    q_taken = critic.q_tot(episode.states[:t_len], episode.actions, target=True)
    q_next = np.concatenate([q_taken[1:], [0.0]])
    delta = episode.rewards + gamma * q_next - q_taken
    acc = 0.0
    for t in range(t_len - 1, t0 - 1, -1):
        acc = delta[t] + gamma * lambda_on * acc
    return float(q_taken[t0] + acc)


# -- critic update -------------------------------------------------------------

def critic_update(critic: DecomposedCritic, optimizers: dict[str, RmsProp],
                  off_batch: list[Episode], on_batch: list[Episode],
                  policies: StochasticPolicySet, cfg: TbConfig, gamma: float,
                  window: int = 1, expectation_mode: str = "decomposed",
                  expectation_samples: int = 200,
                  rng: np.random.Generator | None = None):
    """One RMSProp step on kappa * L_backup + (1-kappa) * L_onpolicy.

    Targets are treated as constants (target critic); the gradient flows
    only through the online prediction. Returns (loss_tb, loss_on, k_spread).
    """
    use_off = cfg.kappa > 0.0
    use_on = cfg.kappa < 1.0
    if use_off and not off_batch:
        raise StateError("off-policy batch is empty")
    if use_on and not on_batch:
        raise StateError("on-policy batch is empty")
    episodes = (off_batch if use_off else []) + (on_batch if use_on else [])
    for ep in episodes:
        if ep.behavior_probs is None:
            raise DataError("episode lacks behavior probabilities")

    batch, y_tb, y_on = _batch_targets(episodes, critic, policies, cfg, gamma,
                                       window, expectation_mode,
                                       expectation_samples, rng)
    m_off = sum(ep.length for ep in off_batch) if use_off else 0
    groups = []  # (weight, target slice, label)
    if use_off:
        groups.append((cfg.kappa, y_tb[:m_off], "tb"))
    if use_on:
        groups.append((1.0 - cfg.kappa, y_on[m_off:], "on"))
    targets = np.concatenate([g[1] for g in groups])
    scale = np.concatenate([np.full(len(g[1]), g[0] / len(g[1])) for g in groups])

    q, cache = critic.q_tot_train(batch.step_states, batch.step_actions)
    err = q - targets
    losses = {}
    pos = 0
    for _, part, label in groups:
        m = len(part)
        losses[label] = float(np.mean(err[pos:pos + m] ** 2))
        pos += m
    total = sum(w * losses[label] for w, _, label in groups)
    if not np.isfinite(total):
        raise TrainingError("non-finite critic loss")

    grads = critic.backward_q_tot(cache, 2.0 * scale * err)
    for name, grad in grads.items():
        optimizers[name].step(grad)
    k = cache["k"]
    k_spread = float(np.mean(k.max(axis=1) - k.min(axis=1)))
    return losses.get("tb"), losses.get("on"), k_spread


# -- actor updates -------------------------------------------------------------

def aristocrat_utility(local_values: np.ndarray, policy_probs: np.ndarray,
                       weight: float, action: int) -> float:
    """Centered local credit: k_i * (Q_i(a) - E_{pi_i} Q_i). Zero mean under pi_i."""
    local_values = np.asarray(local_values, dtype=np.float64)
    policy_probs = np.asarray(policy_probs, dtype=np.float64)
    return float(weight * (local_values[action] - policy_probs @ local_values))


def _actor_pairs(episodes: list[Episode], window: int):
    states = np.concatenate([ep.states[:ep.length] for ep in episodes])
    wins = np.concatenate([window_inputs(ep.observations, window)[:ep.length]
                           for ep in episodes])
    actions = np.concatenate([ep.actions for ep in episodes])
    return states, wins, actions


def actor_update(policies: StochasticPolicySet, optimizers: list[RmsProp],
                 episodes: list[Episode], critic: DecomposedCritic,
                 window: int = 1, advantage: bool = False) -> None:
    """Ascend mean of sum_i k_i * grad log pi_i(a_i) * Q_i over fresh pairs.

    With advantage=True the local value is centered by its policy mean (the
    expected update is identical; per-sample variance is lower).
    """
    for ep in episodes:
        if ep.policy_version != policies.version:
            raise DataError("actor batch contains stale-policy episodes")
    states, wins, actions = _actor_pairs(episodes, window)
    batch = len(states)
    k, _ = critic.mixing(states)
    vals = critic.local_values(states)  # (B, n, A)
    for i in range(policies.n_agents):
        logits = policies.nets[i].forward_train(wins[:, i])
        p_i = softmax(logits)
        a_i = actions[:, i]
        q_taken = vals[np.arange(batch), i, a_i]
        if advantage:
            coef = k[:, i] * (q_taken - (p_i * vals[:, i]).sum(axis=1))
        else:
            coef = k[:, i] * q_taken
        upstream = (coef / batch)[:, None] * (np.eye(policies.n_actions)[a_i] - p_i)
        grad, _ = policies.nets[i].backward(upstream)
        optimizers[i].step(grad)  # optimizers are in maximize mode
    policies.version += 1


def offpolicy_actor_update(policies: StochasticPolicySet, optimizers: list[RmsProp],
                           episodes: list[Episode], critic: DecomposedCritic,
                           window: int = 1, ratio_clip: float = 10.0) -> None:
    """Importance-weighted actor step usable on replayed episodes.

    Each sample is weighted by the joint ratio prod_i pi_i/beta_i, clipped
    at ratio_clip.
    """
    for ep in episodes:
        if ep.behavior_probs is None:
            raise DataError("episode lacks behavior probabilities")
    states, wins, actions = _actor_pairs(episodes, window)
    behavior = np.concatenate([ep.behavior_probs for ep in episodes])
    if np.any(behavior <= 0.0):
        raise DataError("zero behavior probability in batch")
    batch = len(states)
    probs = policies.probs(wins)
    pi_taken = np.take_along_axis(probs, actions[..., None], axis=2)[..., 0]
    ratio = np.minimum(np.prod(pi_taken / behavior, axis=1), ratio_clip)
    k, _ = critic.mixing(states)
    vals = critic.local_values(states)
    for i in range(policies.n_agents):
        logits = policies.nets[i].forward_train(wins[:, i])
        p_i = softmax(logits)
        a_i = actions[:, i]
        coef = ratio * k[:, i] * vals[np.arange(batch), i, a_i]
        upstream = (coef / batch)[:, None] * (np.eye(policies.n_actions)[a_i] - p_i)
        grad, _ = policies.nets[i].backward(upstream)
        optimizers[i].step(grad)
    policies.version += 1


def dop_grad_term(critic: DecomposedCritic, policies: StochasticPolicySet,
                  state, obs_win, joint_action, agent: int) -> np.ndarray:
    """Flat per-sample actor gradient for one agent: k_i grad log pi_i Q_i."""
    state = np.atleast_2d(state)
    evaluation = critic.eval_single(state, joint_action)
    logits = policies.nets[agent].forward_train(np.atleast_2d(obs_win[agent]))
    p = softmax(logits)[0]
    a = int(joint_action[agent])
    coef = evaluation.weights[agent] * evaluation.q_locals[agent]
    upstream = coef * (np.eye(policies.n_actions)[a] - p)
    grad, _ = policies.nets[agent].backward(upstream[None])
    return grad.flat()


# -- the training loop ---------------------------------------------------------

def epsilon_at(step: int, start: float, end: float, anneal: int) -> float:
    if anneal <= 0 or step >= anneal:
        return end
    return start + (end - start) * (step / anneal)


class StochasticTrainer:
    """Episode collection, mixed critic updates, and fresh-batch actor updates.

    Actors update once `actor_batch` episodes exist under the current
    parameters; replayed (stale) episodes never enter actor updates. The
    critic updates every iteration from the mixed replay/recent batches once
    the replay buffer holds a full batch.
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
            raise ConfigError("stochastic training needs a discrete action space")
        self.gamma = spec.gamma
        self.window = hp["window"]
        hidden = (hp["hidden"], hp["hidden"])
        self.critic = DecomposedCritic(
            spec.n_agents, spec.state_dim, spec.action_space, hidden=hidden,
            shared_utility=hp["shared_utility"],
            normalize_weights=hp["normalize_weights"], rng=self.rng_init)
        self.policies = StochasticPolicySet(
            spec.n_agents, spec.obs_dim * self.window, spec.action_space.n,
            hidden=hidden, rng=self.rng_init)
        self.cfg = TbConfig(kappa=hp["kappa"], tb_steps=hp["tb_steps"],
                            lambda_tb=hp["lambda_tb"], lambda_on=hp["lambda_on"],
                            target_period=hp["target_period"],
                            batch_off=hp["batch_off"], batch_on=hp["batch_on"])
        self.buffers = EpisodeBuffers(hp["buffer_off"], hp["buffer_on"])
        self.critic_opt = {
            name: RmsProp(params, hp["critic_lr"], hp["rms_alpha"], hp["rms_eps"])
            for name, params in self.critic.components().items()}
        self.actor_opt = [RmsProp(net.params, hp["actor_lr"], hp["rms_alpha"],
                                  hp["rms_eps"], maximize=True)
                          for net in self.policies.nets]
        self.env_steps = 0
        self.critic_updates = 0
        self.fresh: list[Episode] = []

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
        last_losses: tuple = (None, None, None)
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
                    if hp["offpolicy_actor"]:
                        batch = self.buffers.sample_off(hp["actor_batch"],
                                                        self.rng_sample)
                        offpolicy_actor_update(self.policies, self.actor_opt, batch,
                                               self.critic, self.window,
                                               hp["ratio_clip"])
                    else:
                        actor_update(self.policies, self.actor_opt,
                                     self.fresh[:hp["actor_batch"]], self.critic,
                                     self.window, hp["advantage_actor"])
                    self.fresh = []

                if len(self.buffers.off) >= min(self.cfg.batch_off, hp["buffer_off"]):
                    off_batch = self.buffers.sample_off(self.cfg.batch_off,
                                                        self.rng_sample)
                    on_batch = self.buffers.sample_on(self.cfg.batch_on,
                                                      self.rng_sample)
                    last_losses = critic_update(
                        self.critic, self.critic_opt, off_batch, on_batch,
                        self.policies, self.cfg, self.gamma, self.window,
                        hp["expectation_mode"], hp["expectation_samples"],
                        self.rng_sample)
                    self.critic_updates += 1
                    if self.critic_updates % self.cfg.target_period == 0:
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
                    loss_tb=last_losses[0], loss_on=last_losses[1],
                    k_spread=last_losses[2],
                    wall_clock=(time.perf_counter() - start
                                if record_wall_clock else None))
                if probe is not None:
                    for key, value in probe(self).items():
                        setattr(record, key, value)
                sink.emit(record)
                recent_returns = []
                next_metric = (self.env_steps // metric_period + 1) * metric_period
        return self


def train_stochastic(env_factory, hp: dict, seed: int, total_steps: int,
                     metric_period: int, sink, run_id: str = "run",
                     probe=None, record_wall_clock: bool = False) -> StochasticTrainer:
    trainer = StochasticTrainer(env_factory, hp, seed, run_id)
    trainer.run(total_steps, metric_period, sink, probe, record_wall_clock)
    return trainer
