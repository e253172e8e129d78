"""Linearly decomposed centralized critic.

Q_tot(s, a) = sum_i k_i(s) * Q_i(s, a_i) + b(s), with non-negative mixing
weights produced by an absolute-activation head (normalized to sum to 1 by
default). Local utilities condition on the global state plus an agent-id
one-hot (shared network) or on the state alone (per-agent networks).

The linear structure is what makes two things cheap: expectations over
product policies need only n*|A| local-value reads, and each agent's
action-gradient of Q_tot reduces to k_i * dQ_i/da_i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .envs import Box, Discrete
from .errors import InputError, ShapeError, UnsupportedOperation
from .nets import Grad, Mlp, hard_sync, soft_sync


@dataclass
class CriticEval:
    q_tot: float
    q_locals: np.ndarray  # (n_agents,)
    weights: np.ndarray  # (n_agents,)
    bias: float


class DecomposedCritic:
    """Utility networks plus a mixing head, with a target copy.

    hidden: tuple of hidden widths for the utility networks. The mixing
    weights and bias come from linear (no hidden layer) heads on the state.
    """

    def __init__(self, n_agents: int, state_dim: int, action_space,
                 hidden=(64, 64), shared_utility: bool = True,
                 normalize_weights: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.action_space = action_space
        self.discrete = isinstance(action_space, Discrete)
        if not self.discrete and not isinstance(action_space, Box):
            raise InputError("action_space must be Discrete or Box")
        self.shared_utility = shared_utility
        self.normalize_weights = normalize_weights
        self.local_reads = 0  # incremented by n*|A| per expectation computed

        if self.discrete:
            in_dim = state_dim + (n_agents if shared_utility else 0)
            out_dim = action_space.n
        else:
            in_dim = state_dim + (n_agents if shared_utility else 0) + action_space.dim
            out_dim = 1
        if shared_utility:
            self.utility = [Mlp([in_dim, *hidden, out_dim], rng=rng)]
        else:
            self.utility = [Mlp([in_dim, *hidden, out_dim], rng=rng)
                            for _ in range(n_agents)]
        self.weight_net = Mlp([state_dim, n_agents], out="absolute", rng=rng)
        self.bias_net = Mlp([state_dim, 1], rng=rng)

        self.target_utility = [net.clone() for net in self.utility]
        self.target_weight_net = self.weight_net.clone()
        self.target_bias_net = self.bias_net.clone()

    # -- parameter bookkeeping -------------------------------------------------

    def _nets(self, target: bool):
        if target:
            return self.target_utility, self.target_weight_net, self.target_bias_net
        return self.utility, self.weight_net, self.bias_net

    def online_params(self):
        params = []
        for net in (*self.utility, self.weight_net, self.bias_net):
            params.extend(net.params)
        return params

    def target_params(self):
        params = []
        for net in (*self.target_utility, self.target_weight_net, self.target_bias_net):
            params.extend(net.params)
        return params

    def sync_target(self) -> None:
        hard_sync(self.target_params(), self.online_params())

    def soft_sync_target(self, alpha: float) -> None:
        soft_sync(self.target_params(), self.online_params(), alpha)

    def components(self) -> dict[str, list[np.ndarray]]:
        comp = {f"utility_{i}": net.params for i, net in enumerate(self.utility)}
        comp["weights"] = self.weight_net.params
        comp["bias"] = self.bias_net.params
        return comp

    def save(self, path) -> None:
        checkpoint.save_components(path, self.components())

    def load(self, path) -> None:
        loaded = checkpoint.load_components(path)
        for name, nets in self.components().items():
            for i in range(len(nets)):
                if loaded[name][i].shape != nets[i].shape:
                    raise ShapeError(f"checkpoint mismatch for {name}[{i}]")
                np.copyto(nets[i], loaded[name][i])
        self.sync_target()

    # -- forward paths ---------------------------------------------------------

    def _check_states(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if states.shape[1] != self.state_dim:
            raise ShapeError(f"state width {states.shape[1]} != {self.state_dim}")
        return states

    def _utility_inputs(self, states: np.ndarray, actions: np.ndarray | None):
        """Rows for each (sample, agent) pair, grouped per network."""
        batch = states.shape[0]
        n = self.n_agents
        if self.shared_utility:
            rep = np.repeat(states, n, axis=0)
            ids = np.tile(np.eye(n), (batch, 1))
            parts = [rep, ids]
            if actions is not None:
                parts.append(actions.reshape(batch * n, -1))
            return [np.concatenate(parts, axis=1)]
        inputs = []
        for i in range(n):
            parts = [states]
            if actions is not None:
                parts.append(actions[:, i].reshape(batch, -1))
            inputs.append(np.concatenate(parts, axis=1))
        return inputs

    def local_values(self, states, target: bool = False, train: bool = False) -> np.ndarray:
        """Discrete only: Q_i(s, .) for every agent and action, shape (B, n, |A|)."""
        if not self.discrete:
            raise UnsupportedOperation("local action tables need a discrete space")
        states = self._check_states(states)
        utility, _, _ = self._nets(target)
        inputs = self._utility_inputs(states, None)
        run = (lambda net, x: net.forward_train(x)) if train else (lambda net, x: net.forward(x))
        if self.shared_utility:
            vals = run(utility[0], inputs[0])
            return vals.reshape(states.shape[0], self.n_agents, -1)
        return np.stack([run(utility[i], inputs[i]) for i in range(self.n_agents)], axis=1)

    def local_values_cont(self, states, actions, target: bool = False,
                          train: bool = False) -> np.ndarray:
        """Continuous only: Q_i(s, a_i), shape (B, n)."""
        if self.discrete:
            raise UnsupportedOperation("continuous local values need a Box space")
        states = self._check_states(states)
        actions = np.asarray(actions, dtype=np.float64)
        if actions.ndim == 2:
            actions = actions[None]
        utility, _, _ = self._nets(target)
        inputs = self._utility_inputs(states, actions)
        run = (lambda net, x: net.forward_train(x)) if train else (lambda net, x: net.forward(x))
        if self.shared_utility:
            vals = run(utility[0], inputs[0])
            return vals.reshape(states.shape[0], self.n_agents)
        return np.concatenate([run(utility[i], inputs[i]) for i in range(self.n_agents)],
                              axis=1)

    def mixing(self, states, target: bool = False, train: bool = False):
        """Normalized weights (B, n) and bias (B,). Caches when train=True."""
        states = self._check_states(states)
        _, weight_net, bias_net = self._nets(target)
        if train:
            raw = weight_net.forward_train(states)
            bias = bias_net.forward_train(states)[:, 0]
        else:
            raw = weight_net.forward(states)
            bias = bias_net.forward(states)[:, 0]
        if self.normalize_weights:
            total = raw.sum(axis=1, keepdims=True)
            k = np.divide(raw, total, out=np.zeros_like(raw), where=total > 0.0)
        else:
            k = raw
        return k, bias

    def q_tot(self, states, actions, target: bool = False) -> np.ndarray:
        """Q_tot for a batch; actions (B, n) int or (B, n, adim) float."""
        states = self._check_states(states)
        actions = np.asarray(actions)
        if actions.ndim == 1:
            actions = actions[None]
        if actions.shape[1] != self.n_agents:
            raise ShapeError(f"need {self.n_agents} actions per sample")
        k, b = self.mixing(states, target=target)
        if self.discrete:
            vals = self.local_values(states, target=target)
            taken = np.take_along_axis(vals, actions[..., None].astype(np.int64),
                                       axis=2)[..., 0]
        else:
            taken = self.local_values_cont(states, actions, target=target)
        return (k * taken).sum(axis=1) + b

    def eval_single(self, state, joint_action, target: bool = False) -> CriticEval:
        """Full decomposition at one (state, joint action)."""
        states = self._check_states(state)
        actions = np.asarray(joint_action)
        if self.discrete:
            actions = actions.reshape(1, self.n_agents)
            vals = self.local_values(states, target=target)[0]
            q_locals = vals[np.arange(self.n_agents), actions[0].astype(np.int64)]
        else:
            actions = actions.reshape(1, self.n_agents, self.action_space.dim)
            q_locals = self.local_values_cont(states, actions, target=target)[0]
        k, b = self.mixing(states, target=target)
        q = float((k[0] * q_locals).sum() + b[0])
        return CriticEval(q, q_locals, k[0], float(b[0]))

    def expected_q(self, states, policy_probs, target: bool = False) -> np.ndarray:
        """E over product policies of Q_tot, via n*|A| local-value reads per state.

        policy_probs has shape (B, n, |A|); rows must be distributions.
        """
        if not self.discrete:
            raise UnsupportedOperation("expectations need a discrete action space")
        states = self._check_states(states)
        probs = np.asarray(policy_probs, dtype=np.float64)
        if probs.ndim == 2:
            probs = probs[None]
        n_a = self.action_space.n
        if probs.shape[1:] != (self.n_agents, n_a):
            raise ShapeError(f"policy probs must be (B, {self.n_agents}, {n_a})")
        vals = self.local_values(states, target=target)
        self.local_reads += states.shape[0] * self.n_agents * n_a
        local_expect = (probs * vals).sum(axis=2)
        k, b = self.mixing(states, target=target)
        return (k * local_expect).sum(axis=1) + b

    def grad_wrt_action(self, state, joint_action, agent: int) -> np.ndarray:
        """k_i(s) * dQ_i/da_i for one agent. Continuous only."""
        grads = self.action_gradients(self._check_states(state),
                                      np.asarray(joint_action, dtype=np.float64)[None])
        return grads[0, agent]

    def action_gradients(self, states, actions) -> np.ndarray:
        """k_i * dQ_i/da_i for every sample and agent, shape (B, n, adim)."""
        if self.discrete:
            raise UnsupportedOperation("action gradients need a Box space")
        states = self._check_states(states)
        actions = np.asarray(actions, dtype=np.float64)
        batch, n = states.shape[0], self.n_agents
        adim = self.action_space.dim
        k, _ = self.mixing(states)
        inputs = self._utility_inputs(states, actions)
        if self.shared_utility:
            self.utility[0].forward_train(inputs[0])
            _, dx = self.utility[0].backward(np.ones((batch * n, 1)))
            dact = dx[:, -adim:].reshape(batch, n, adim)
        else:
            parts = []
            for i in range(n):
                self.utility[i].forward_train(inputs[i])
                _, dx = self.utility[i].backward(np.ones((batch, 1)))
                parts.append(dx[:, -adim:])
            dact = np.stack(parts, axis=1)
        return k[..., None] * dact

    # -- training path ---------------------------------------------------------

    def q_tot_train(self, states, actions):
        """Forward with caches; returns (q_tot (B,), cache for backward_q_tot)."""
        states = self._check_states(states)
        actions = np.asarray(actions)
        batch = states.shape[0]
        k, b = self.mixing(states, train=True)
        if self.discrete:
            vals = self.local_values(states, train=True)
            idx = actions[..., None].astype(np.int64)
            taken = np.take_along_axis(vals, idx, axis=2)[..., 0]
        else:
            taken = self.local_values_cont(states, actions, train=True)
        q = (k * taken).sum(axis=1) + b
        cache = {"batch": batch, "k": k, "taken": taken, "actions": actions}
        return q, cache

    def backward_q_tot(self, cache, dq: np.ndarray) -> dict[str, Grad]:
        """Backprop dL/dq_tot through utilities and mixing heads.

        Must follow q_tot_train with no intervening forward_train on the
        component networks. Returns per-component Grads keyed like
        components().
        """
        batch, k, taken = cache["batch"], cache["k"], cache["taken"]
        dq = np.asarray(dq, dtype=np.float64).reshape(batch)
        n = self.n_agents

        # utility networks: d/dQ_i(taken) = dq * k_i, routed to the taken slot
        d_taken = dq[:, None] * k
        grads: dict[str, Grad] = {}
        if self.discrete:
            n_a = self.action_space.n
            upstream = np.zeros((batch, n, n_a))
            np.put_along_axis(upstream, cache["actions"][..., None].astype(np.int64),
                              d_taken[..., None], axis=2)
            if self.shared_utility:
                g, _ = self.utility[0].backward(upstream.reshape(batch * n, n_a))
                grads["utility_0"] = g
            else:
                for i in range(n):
                    g, _ = self.utility[i].backward(upstream[:, i])
                    grads[f"utility_{i}"] = g
        else:
            if self.shared_utility:
                g, _ = self.utility[0].backward(d_taken.reshape(batch * n, 1))
                grads["utility_0"] = g
            else:
                for i in range(n):
                    g, _ = self.utility[i].backward(d_taken[:, i][:, None])
                    grads[f"utility_{i}"] = g

        # mixing head: dq/dk_i = Q_i(taken); chain through the normalization
        dk = dq[:, None] * taken
        if self.normalize_weights:
            raw = self.weight_net._cache[2]  # post-absolute output
            total = raw.sum(axis=1, keepdims=True)
            inner = (dk * k).sum(axis=1, keepdims=True)
            draw = np.divide(dk - inner, total, out=np.zeros_like(dk),
                             where=total > 0.0)
        else:
            draw = dk
        gw, _ = self.weight_net.backward(draw)
        grads["weights"] = gw
        gb, _ = self.bias_net.backward(dq[:, None])
        grads["bias"] = gb
        return grads


@dataclass
class DecompositionFit:
    """Result of the tabular weighted least-squares decomposition."""

    weights: np.ndarray  # (n,)
    bias: float
    q_tables: np.ndarray  # (n, |A|)
    residual: float  # weighted MSE at the returned point
    sweeps: int

    def predict(self) -> np.ndarray:
        """Reconstructed joint table, shape (|A|,)*n."""
        n, n_a = self.q_tables.shape
        pred = np.full((n_a,) * n, self.bias)
        for i in range(n):
            shape = [1] * n
            shape[i] = n_a
            pred = pred + self.weights[i] * self.q_tables[i].reshape(shape)
        return pred


def fit_least_squares_tabular(targets: np.ndarray, policies: np.ndarray,
                              weights: np.ndarray, max_sweeps: int = 200,
                              tol: float = 1e-12) -> DecompositionFit:
    """Fit sum_i k_i Q_i(a_i) + b to a joint table under product-policy weighting.

    Minimizes sum_a pi(a) (targets[a] - pred[a])^2 by alternating closed-form
    coordinate updates (each agent's table, then the bias), stopping after
    max_sweeps or when the weighted MSE improves by less than tol.

    targets: (|A|,)*n array (or flat, reshaped row-major, agent 0 outermost).
    policies: (n, |A|) per-agent action distributions, each row summing to 1.
    weights: (n,) strictly positive mixing coefficients, held fixed.
    """
    policies = np.asarray(policies, dtype=np.float64)
    k = np.asarray(weights, dtype=np.float64)
    n, n_a = policies.shape
    if np.any(k <= 0.0) or not np.all(np.isfinite(k)):
        raise InputError("mixing weights must be strictly positive")
    targets = np.asarray(targets, dtype=np.float64).reshape((n_a,) * n)
    if targets.size > 10 ** 5:
        raise InputError("instance too large for dense least squares")

    joint_w = np.ones(())
    for i in range(n):
        shape = [1] * n
        shape[i] = n_a
        joint_w = joint_w * policies[i].reshape(shape)

    q = np.zeros((n, n_a))
    b = float((joint_w * targets).sum())

    def broadcast(i):
        shape = [1] * n
        shape[i] = n_a
        return q[i].reshape(shape)

    def predict():
        pred = np.full_like(targets, b)
        for i in range(n):
            pred = pred + k[i] * broadcast(i)
        return pred

    other_axes = [tuple(j for j in range(n) if j != i) for i in range(n)]
    prev_mse = np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for i in range(n):
            resid_wo = targets - (predict() - k[i] * broadcast(i))
            numer = (joint_w * resid_wo).sum(axis=other_axes[i])
            denom = k[i] * policies[i]
            upd = np.divide(numer, denom, out=q[i].copy(), where=denom > 0.0)
            q[i] = upd
        b = float((joint_w * (targets - (predict() - b))).sum())
        mse = float((joint_w * (targets - predict()) ** 2).sum())
        if prev_mse - mse < tol:
            prev_mse = mse
            break
        prev_mse = mse
    return DecompositionFit(k.copy(), b, q, prev_mse, sweeps)
