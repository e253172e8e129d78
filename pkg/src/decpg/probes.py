"""Per-checkpoint measurement probes wired into training runs.

On the one-shot coordination game the exact payoff table is known, so each
algorithm's runs can log (a) the per-agent gradient variance induced by
resampling the other agents' actions under the current policies, (b) the
mean absolute error of the critic over all joint actions, and (c) for the
decomposed critic, each agent's locally greedy action.

The variance computations here are exact enumerations, restructured for
speed: each algorithm's per-sample gradient term factors into a fixed
vector (or fixed linear map) times a piece that depends on the other
agents' actions, so whole-complement batches replace per-sample backward
passes. tests/test_analysis.py checks these fast paths against the generic
term-by-term enumeration.
"""

from __future__ import annotations

import numpy as np

from .baselines import (ComaTrainer, MaddpgTrainer, gumbel_noise,
                        gumbel_softmax, gumbel_softmax_backward)
from .envs import MatrixGame, enumerate_joint_actions
from .nets import softmax
from .stochastic import StochasticTrainer


def weighted_variance(values: np.ndarray, weights: np.ndarray) -> float:
    """Weighted population variance; exactly 0.0 for identical values."""
    shifted = values - values[0]
    mean = weights @ shifted
    dev = shifted - mean
    return float(weights @ (dev * dev))


def _complement_weights(probs: np.ndarray, agent: int):
    """All other-agent action rows and their joint probabilities."""
    n, n_a = probs.shape
    others = [j for j in range(n) if j != agent]
    complements = enumerate_joint_actions(n - 1, n_a)
    weights = np.ones(len(complements))
    for pos, j in enumerate(others):
        weights *= probs[j, complements[:, pos]]
    return others, complements, weights


def _logprob_grad_sqnorm(net, obs_row: np.ndarray, action: int,
                         p: np.ndarray) -> float:
    """||grad_theta log pi(action)||^2 for a softmax policy head."""
    net.forward_train(obs_row)
    upstream = (np.eye(len(p))[action] - p)[None]
    grad, _ = net.backward(upstream)
    flat = grad.flat()
    return float(flat @ flat)


def _decomposed_table(critic, state) -> np.ndarray:
    """Full joint-value table of a decomposed critic on a single state."""
    vals = critic.local_values(state)[0]  # (n, A)
    k, b = critic.mixing(state)
    n, n_a = vals.shape
    table = np.full((n_a,) * n, float(b[0]))
    for i in range(n):
        shape = [1] * n
        shape[i] = n_a
        table = table + k[0, i] * vals[i].reshape(shape)
    return table


def dop_variance_report(critic, policies, state, obs_win) -> np.ndarray:
    """Exact per-agent gradient variance for the decomposed estimator.

    The per-sample term k_i * grad log pi_i(a_i) * Q_i(s, a_i) does not read
    the other agents' actions, so every enumerated sample is identical and
    each variance is exactly zero; the computation below keeps the honest
    form Var(coefficient) * ||grad||^2 with a constant coefficient.
    """
    probs = policies.probs(obs_win[None])[0]
    n, n_a = probs.shape
    vals = critic.local_values(state)[0]
    k, _ = critic.mixing(state)
    out = np.zeros(n)
    for i in range(n):
        _, _, weights = _complement_weights(probs, i)
        total = 0.0
        for a in range(n_a):
            coef = np.full(len(weights), k[0, i] * vals[i, a])
            var_coef = weighted_variance(coef, weights)
            if var_coef == 0.0:
                total += 0.0
                continue
            sq = _logprob_grad_sqnorm(policies.nets[i], obs_win[i][None], a,
                                      probs[i])
            total += probs[i, a] * var_coef * sq
        out[i] = total
    return out


def coma_variance_report(joint_critic, policies, state, obs_win) -> np.ndarray:
    """Exact per-agent gradient variance for the counterfactual estimator.

    term(a_-i) = A_i(s, (a_i, a_-i)) * grad log pi_i(a_i): a scalar that
    varies with the complement times a fixed vector, so the covariance trace
    is Var(A_i) * ||grad log pi_i||^2, with A_i read off one batched pass.
    """
    probs = policies.probs(obs_win[None])[0]
    n, n_a = probs.shape
    out = np.zeros(n)
    for i in range(n):
        others, complements, weights = _complement_weights(probs, i)
        joints = np.zeros((len(complements), n), dtype=np.int64)
        for pos, j in enumerate(others):
            joints[:, j] = complements[:, pos]
        states = np.repeat(state, len(joints), axis=0)
        values = joint_critic.counterfactuals(states, joints, i)  # (M, A)
        baseline = values @ probs[i]
        total = 0.0
        for a in range(n_a):
            advantage = values[:, a] - baseline
            var_coef = weighted_variance(advantage, weights)
            sq = _logprob_grad_sqnorm(policies.nets[i], obs_win[i][None], a,
                                      probs[i])
            total += probs[i, a] * var_coef * sq
        out[i] = total
    return out


def maddpg_variance_report(joint_critic, actors, state, obs,
                           noise_for) -> np.ndarray:
    """Exact per-agent gradient variance for the relaxed joint-critic estimator.

    With the agent's own relaxed sample pinned, the per-sample term is a
    fixed linear map (Gumbel-Softmax jacobian then actor backward) applied
    to the critic's input gradient at the own-action slot. The trace of the
    term covariance is sum_r lambda_r ||B^T u_r||^2 over the eigensystem of
    the input-gradient covariance.
    """
    probs = actors.probs(obs[None])[0]
    n, n_a = probs.shape
    out = np.zeros(n)
    for i in range(n):
        others, complements, weights = _complement_weights(probs, i)
        logits = actors.nets[i].forward_train(obs[i][None])
        total = 0.0
        for a in range(n_a):
            relaxed = gumbel_softmax(logits, noise_for(i, a)[None],
                                     actors.temperature)
            actions = np.zeros((len(complements), n, n_a))
            actions[:, i] = relaxed[0]
            for pos, j in enumerate(others):
                actions[np.arange(len(complements)), j, complements[:, pos]] = 1.0
            states = np.repeat(state, len(complements), axis=0)
            _, dact = joint_critic.q_with_action_grad(states, actions)
            v = dact[:, i * n_a:(i + 1) * n_a]  # (M, A) per-sample input grads
            shifted = v - v[0]
            mean = weights @ shifted
            dev = shifted - mean
            cov = (dev * weights[:, None]).T @ dev
            eigvals, eigvecs = np.linalg.eigh(cov)
            actors.nets[i].forward_train(obs[i][None])  # restore caches
            var = 0.0
            for r in range(n_a):
                lam = max(float(eigvals[r]), 0.0)
                if lam == 0.0:
                    continue
                d_logits = gumbel_softmax_backward(relaxed, eigvecs[:, r][None],
                                                   actors.temperature)
                grad, _ = actors.nets[i].backward(d_logits)
                flat = grad.flat()
                var += lam * float(flat @ flat)
            total += probs[i, a] * var
        out[i] = total
    return out


def make_matrix_probe(trainer, variance_every: int = 1):
    """Probe for matrix-game runs of any of the three trainer families."""
    env = MatrixGame()
    truth = env.payoff_table()
    n, n_a = env.spec.n_agents, env.spec.action_space.n
    state = np.zeros((1, 1))
    calls = {"n": 0}

    if isinstance(trainer, StochasticTrainer):
        obs_win = np.zeros((n, trainer.window))

        def variances():
            return dop_variance_report(trainer.critic, trainer.policies,
                                       state, obs_win)

        def extras():
            table = _decomposed_table(trainer.critic, state)
            argmax = tuple(int(a) for a in
                           trainer.critic.local_values(state)[0].argmax(axis=1))
            return table, argmax

    elif isinstance(trainer, ComaTrainer):
        obs_win = np.zeros((n, trainer.window))
        joints = enumerate_joint_actions(n, n_a)

        def variances():
            return coma_variance_report(trainer.critic, trainer.policies,
                                        state, obs_win)

        def extras():
            states = np.zeros((len(joints), 1))
            values = trainer.critic.counterfactuals(states, joints, 0)
            est = values[np.arange(len(joints)), joints[:, 0]]
            return est.reshape((n_a,) * n), None

    elif isinstance(trainer, MaddpgTrainer):
        obs = np.zeros((n, 1))
        noise_cache: dict[tuple[int, int], np.ndarray] = {}
        noise_rng = np.random.default_rng(
            np.random.SeedSequence(trainer.seed).spawn(6)[5])

        def noise_for(agent, action):
            key = (agent, action)
            if key not in noise_cache:
                noise_cache[key] = gumbel_noise(noise_rng, n_a)
            return noise_cache[key]

        joints = enumerate_joint_actions(n, n_a)
        onehot = np.zeros((len(joints), n, n_a))
        np.put_along_axis(onehot, joints[..., None], 1.0, axis=2)

        def variances():
            return maddpg_variance_report(trainer.critic, trainer.actors,
                                          state, obs, noise_for)

        def extras():
            states = np.zeros((len(joints), 1))
            est = trainer.critic.q(states, onehot)
            return est.reshape((n_a,) * n), None

    else:
        raise TypeError(f"no matrix-game probe for {type(trainer).__name__}")

    def probe(_trainer):
        calls["n"] += 1
        if (calls["n"] - 1) % variance_every != 0:
            return {}
        table, argmax = extras()
        out = {
            "grad_variance": float(variances().mean()),
            "q_bias": float(np.mean(np.abs(table - truth))),
        }
        if argmax is not None:
            out["argmax_actions"] = argmax
        return out

    return probe


def make_probe(trainer, env_name: str, variance_every: int = 1):
    """Returns the measurement probe for this (trainer, env), or None."""
    if env_name == "matrix_game":
        return make_matrix_probe(trainer, variance_every)
    return None
