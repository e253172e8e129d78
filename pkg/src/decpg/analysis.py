"""Oracles and diagnostics: exact tabular policy evaluation, brute-force
expectations, gradient-variance and value-bias measurement, and order checks.

Everything here is written independently of the code paths it verifies:
expectations are explicit joint-action summations, values come from dense
linear solves, and no decomposition shortcuts are shared with the critic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import TabularDecMDP, enumerate_joint_actions
from .errors import InputError


# -- brute-force expectation -------------------------------------------------

def brute_force_expected_q(q_tot_fn, state, policy_probs: np.ndarray):
    """E_pi[Q_tot(state, .)] by explicit summation over all joint actions.

    q_tot_fn(state, actions_batch (M, n)) -> (M,). Returns (value, n_terms)
    where n_terms is the number of joint-action summands (|A|**n).
    """
    probs = np.asarray(policy_probs, dtype=np.float64)
    n, n_a = probs.shape
    joint = enumerate_joint_actions(n, n_a)
    weights = np.ones(len(joint))
    for i in range(n):
        weights *= probs[i, joint[:, i]]
    values = np.asarray(q_tot_fn(state, joint), dtype=np.float64)
    return float((weights * values).sum()), len(joint)


# -- exact tabular evaluation ------------------------------------------------

@dataclass
class PolicyValue:
    """Exact evaluation of a product policy on a TabularDecMDP."""

    objective: float  # J = E[sum gamma^t r_t]
    state_values: np.ndarray  # (S,)
    q_joint: np.ndarray  # (S, |A|**n)
    q_local: np.ndarray  # (S, n, |A|): E over others of q_joint
    joint_probs: np.ndarray  # (S, |A|**n)


def _joint_policy_probs(mdp: TabularDecMDP, policies: np.ndarray) -> np.ndarray:
    policies = np.asarray(policies, dtype=np.float64)
    if policies.ndim == 2:
        policies = np.broadcast_to(policies, (mdp.n_states,) + policies.shape)
    joint = enumerate_joint_actions(mdp.n_agents, mdp.n_actions)
    probs = np.ones((mdp.n_states, len(joint)))
    for i in range(mdp.n_agents):
        probs *= policies[:, i, joint[:, i]]
    return probs


def exact_policy_value(mdp: TabularDecMDP, policies: np.ndarray) -> PolicyValue:
    """Solve the Bellman system directly. policies: (S, n, |A|) or (n, |A|)."""
    policies = np.asarray(policies, dtype=np.float64)
    if policies.ndim == 2:
        policies = np.broadcast_to(policies, (mdp.n_states,) + policies.shape).copy()
    joint_probs = _joint_policy_probs(mdp, policies)
    p_pi = np.einsum("su,sut->st", joint_probs, mdp.transition)
    r_pi = (joint_probs * mdp.reward).sum(axis=1)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)
    q_joint = mdp.reward + mdp.gamma * mdp.transition @ v

    joint = enumerate_joint_actions(mdp.n_agents, mdp.n_actions)
    q_local = np.zeros((mdp.n_states, mdp.n_agents, mdp.n_actions))
    for i in range(mdp.n_agents):
        others = np.ones((mdp.n_states, len(joint)))
        for j in range(mdp.n_agents):
            if j != i:
                others *= policies[:, j, joint[:, j]]
        for a in range(mdp.n_actions):
            mask = joint[:, i] == a
            q_local[:, i, a] = (others[:, mask] * q_joint[:, mask]).sum(axis=1)
    objective = float(mdp.initial_dist @ v)
    return PolicyValue(objective, v, q_joint, q_local, joint_probs)


def policy_value_iterative(mdp: TabularDecMDP, policies: np.ndarray,
                           tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Fixed-point iteration for V, as an independent cross-check of the solve."""
    joint_probs = _joint_policy_probs(mdp, policies)
    p_pi = np.einsum("su,sut->st", joint_probs, mdp.transition)
    r_pi = (joint_probs * mdp.reward).sum(axis=1)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        v_next = r_pi + mdp.gamma * p_pi @ v
        if np.max(np.abs(v_next - v)) < tol:
            return v_next
        v = v_next
    return v


def bellman_residual(mdp: TabularDecMDP, policies: np.ndarray,
                     values: PolicyValue) -> float:
    """Max |V - (r_pi + gamma P_pi V)| for the evaluated policy."""
    p_pi = np.einsum("su,sut->st", values.joint_probs, mdp.transition)
    r_pi = (values.joint_probs * mdp.reward).sum(axis=1)
    return float(np.max(np.abs(values.state_values - r_pi
                               - mdp.gamma * p_pi @ values.state_values)))


def discounted_occupancy(mdp: TabularDecMDP, policies: np.ndarray) -> np.ndarray:
    """Unnormalized discounted state occupancy d = (I - gamma P_pi^T)^-1 mu0."""
    joint_probs = _joint_policy_probs(mdp, policies)
    p_pi = np.einsum("su,sut->st", joint_probs, mdp.transition)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi.T,
                           mdp.initial_dist)


# -- bias and ordering -------------------------------------------------------

@dataclass
class BiasReport:
    mean_abs_error: float
    step: int = 0


def bias_report(estimated: np.ndarray, truth: np.ndarray, step: int = 0) -> BiasReport:
    """Mean |estimate - truth| over all joint actions, uniformly weighted."""
    est = np.asarray(estimated, dtype=np.float64).reshape(-1)
    tru = np.asarray(truth, dtype=np.float64).reshape(-1)
    if est.shape != tru.shape:
        raise InputError("estimate/truth tables must align")
    return BiasReport(float(np.mean(np.abs(est - tru))), step)


def order_preservation_check(fitted: np.ndarray, truth: np.ndarray,
                             tie_tol: float = 1e-9) -> int:
    """Count strictly reversed action-value orderings between two tables.

    fitted/truth: (..., |A|) with matching leading dims (agent, state, ...).
    A pair (a, a') counts as a violation only when both differences exceed
    tie_tol in magnitude and disagree in sign.
    """
    fitted = np.asarray(fitted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if fitted.shape != truth.shape:
        raise InputError("tables must have identical shapes")
    df = fitted[..., :, None] - fitted[..., None, :]
    dt = truth[..., :, None] - truth[..., None, :]
    reversed_pair = ((dt > tie_tol) & (df < -tie_tol)) | ((dt < -tie_tol) & (df > tie_tol))
    n_a = fitted.shape[-1]
    upper = np.triu(np.ones((n_a, n_a), dtype=bool), k=1)
    return int(reversed_pair[..., upper].sum())


# -- gradient variance -------------------------------------------------------

@dataclass
class GradientVarianceReport:
    variances: np.ndarray  # (n_agents,) trace of per-agent gradient covariance
    sample_count: int
    step: int


def _weighted_cov_trace(samples: np.ndarray, weights: np.ndarray) -> float:
    """Weighted population covariance trace, exactly 0 for identical rows."""
    shifted = samples - samples[0]
    mean = weights @ shifted
    dev = shifted - mean
    return float(weights @ (dev * dev).sum(axis=1))


def _sample_cov_trace(samples: np.ndarray) -> float:
    shifted = samples - samples[0]
    mean = shifted.mean(axis=0)
    dev = shifted - mean
    return float((dev * dev).sum() / (len(samples) - 1))


def grad_variance_at(term_fn, agent: int, fixed_action: int,
                     policy_probs: np.ndarray, n_samples: int | None = None,
                     rng: np.random.Generator | None = None) -> float:
    """Variance (covariance trace) of agent `agent`'s gradient term when the
    other agents' actions are drawn from their policies.

    term_fn(joint_action (n,)) -> flat gradient vector. With n_samples=None
    the variance is computed exactly by enumerating all complements; otherwise
    n_samples draws are used (n_samples >= 2).
    """
    probs = np.asarray(policy_probs, dtype=np.float64)
    n, n_a = probs.shape
    others = [j for j in range(n) if j != agent]

    def full_action(complement_row):
        joint = np.empty(n, dtype=np.int64)
        joint[agent] = fixed_action
        for pos, j in enumerate(others):
            joint[j] = complement_row[pos]
        return joint

    if n_samples is None:
        complements = enumerate_joint_actions(n - 1, n_a)
        weights = np.ones(len(complements))
        for pos, j in enumerate(others):
            weights *= probs[j, complements[:, pos]]
        samples = np.stack([term_fn(full_action(row)) for row in complements])
        return _weighted_cov_trace(samples, weights)

    if n_samples < 2:
        raise InputError("need at least 2 samples for a variance")
    rng = rng if rng is not None else np.random.default_rng()
    rows = np.stack([[rng.choice(n_a, p=probs[j]) for j in others]
                     for _ in range(n_samples)]).astype(np.int64)
    samples = np.stack([term_fn(full_action(row)) for row in rows])
    return _sample_cov_trace(samples)


def gradient_variance_report(term_fn, policy_probs: np.ndarray, step: int = 0,
                             n_samples: int | None = None,
                             rng: np.random.Generator | None = None) -> GradientVarianceReport:
    """Per-agent gradient variance, averaged over own actions weighted by pi_i.

    term_fn(joint_action, agent) -> flat gradient vector for that agent's
    update. Exact enumeration when n_samples is None.
    """
    probs = np.asarray(policy_probs, dtype=np.float64)
    n, n_a = probs.shape
    count = n_a ** (n - 1) if n_samples is None else n_samples
    if count < 30:
        raise InputError("variance reports need at least 30 samples per point")
    variances = np.zeros(n)
    for i in range(n):
        total = 0.0
        for a in range(n_a):
            if probs[i, a] <= 0.0:
                continue
            var = grad_variance_at(lambda joint: term_fn(joint, i), i, a,
                                   probs, n_samples=n_samples, rng=rng)
            total += probs[i, a] * var
        variances[i] = total
    return GradientVarianceReport(variances, count, step)


# -- local affine fits over action neighborhoods ------------------------------

def affine_fit_max_error(values: np.ndarray, points: np.ndarray) -> float:
    """Max |residual| of the best affine-per-agent fit c + sum_i w_i . a_i.

    Affine in the stacked action vector is exactly the decomposed affine
    family, so a single joint least squares suffices. points: (M, D) stacked
    joint actions, values: (M,).
    """
    design = np.concatenate([np.ones((len(points), 1)), points], axis=1)
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    return float(np.max(np.abs(values - design @ coef)))
