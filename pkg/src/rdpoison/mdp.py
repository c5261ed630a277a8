"""Finite tabular MDPs with a fixed transition kernel.

Conventions used throughout the package:

* reward is stored as a full ``(S, A, S')`` tensor,
* a kernel is an ``(A, S, S')`` array whose rows ``kernel[a, s]`` are distributions,
* a policy is either a tuple of action indices (deterministic) or an ``(S, A)``
  row-stochastic matrix.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

ROW_TOL = 1e-12
TIE_TOL = 1e-10


class RewardRangeWarning(UserWarning):
    """Reward entries fall outside [0, 1]."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TabularMdp:
    reward: np.ndarray
    discount: float
    strict_rewards: bool = True

    def __post_init__(self):
        reward = np.array(self.reward, dtype=float)
        if reward.ndim != 3 or reward.shape[0] != reward.shape[2]:
            raise ValueError(f"reward must have shape (S, A, S), got {reward.shape}")
        if not np.all(np.isfinite(reward)):
            raise ValueError("reward entries must be finite")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if reward.min() < 0.0 or reward.max() > 1.0:
            msg = f"reward range [{reward.min()}, {reward.max()}] exceeds [0, 1]"
            if self.strict_rewards:
                raise ValueError(msg)
            warnings.warn(msg, RewardRangeWarning, stacklevel=3)
        reward.setflags(write=False)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "discount", float(self.discount))

    @classmethod
    def from_state_reward(cls, r_ss, num_actions: int, discount: float, **kw) -> "TabularMdp":
        """Build from a reward table ``r(s, s')`` shared by every action."""
        r_ss = np.asarray(r_ss, dtype=float)
        return cls(np.repeat(r_ss[:, None, :], num_actions, axis=1), discount, **kw)

    @classmethod
    def from_action_reward(cls, r_sa, discount: float, **kw) -> "TabularMdp":
        """Build from a reward table ``r(s, a)`` independent of the next state."""
        r_sa = np.asarray(r_sa, dtype=float)
        S = r_sa.shape[0]
        return cls(np.repeat(r_sa[:, :, None], S, axis=2), discount, **kw)

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[1]

    def to_dict(self) -> dict:
        return {
            "S": self.num_states,
            "A": self.num_actions,
            "gamma": self.discount,
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, strict_rewards: bool = True) -> "TabularMdp":
        mdp = cls(np.array(doc["reward"], dtype=float), doc["gamma"], strict_rewards=strict_rewards)
        if (mdp.num_states, mdp.num_actions) != (doc["S"], doc["A"]):
            raise ValueError("S/A fields disagree with reward shape")
        return mdp


def check_kernel(kernel, mdp: TabularMdp | None = None) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 3 or kernel.shape[1] != kernel.shape[2]:
        raise ValueError(f"kernel must have shape (A, S, S), got {kernel.shape}")
    if mdp is not None and kernel.shape != (mdp.num_actions, mdp.num_states, mdp.num_states):
        raise ValueError(
            f"kernel shape {kernel.shape} does not match mdp (A={mdp.num_actions}, S={mdp.num_states})"
        )
    if np.any(kernel < 0):
        raise ValueError("kernel has negative entries")
    if np.max(np.abs(kernel.sum(axis=2) - 1.0)) > ROW_TOL:
        raise ValueError("kernel rows must sum to 1")
    return kernel


def kernel_to_dict(kernel) -> dict:
    return {"probs": np.asarray(kernel).tolist()}


def kernel_from_dict(doc: dict) -> np.ndarray:
    return check_kernel(doc["probs"])


PolicyLike = Union[Sequence[int], np.ndarray]


def policy_matrix(policy: PolicyLike, num_states: int, num_actions: int) -> np.ndarray:
    """Return the ``(S, A)`` action-probability matrix of a policy.

    Integer sequences of length S are read as deterministic policies.
    """
    arr = np.asarray(policy)
    if arr.ndim == 1:
        if arr.shape[0] != num_states:
            raise ValueError(f"deterministic policy needs {num_states} actions, got {arr.shape[0]}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise ValueError("deterministic policy entries must be action indices")
            arr = arr.astype(int)
        if arr.min() < 0 or arr.max() >= num_actions:
            raise ValueError("action index out of range")
        out = np.zeros((num_states, num_actions))
        out[np.arange(num_states), arr] = 1.0
        return out
    if arr.shape != (num_states, num_actions):
        raise ValueError(f"random policy must have shape ({num_states}, {num_actions}), got {arr.shape}")
    arr = arr.astype(float)
    if np.any(arr < 0) or np.max(np.abs(arr.sum(axis=1) - 1.0)) > ROW_TOL:
        raise ValueError("random policy rows must be distributions")
    return arr


def policy_to_dict(policy: PolicyLike) -> dict:
    arr = np.asarray(policy)
    if arr.ndim == 1:
        return {"det": [int(a) for a in arr]}
    return {"probs": arr.tolist()}


def policy_from_dict(doc: dict):
    if "det" in doc:
        return tuple(int(a) for a in doc["det"])
    return np.array(doc["probs"], dtype=float)


def induced_chain(mdp: TabularMdp, kernel: np.ndarray, policy: PolicyLike):
    """Markov chain ``X^pi`` and expected one-step reward ``rbar^pi`` under a policy."""
    pi = policy_matrix(policy, mdp.num_states, mdp.num_actions)
    chain = np.einsum("sa,ast->st", pi, kernel)
    rbar = np.einsum("sa,ast,sat->s", pi, kernel, mdp.reward)
    return chain, rbar


def expected_reward(mdp: TabularMdp, kernel: np.ndarray) -> np.ndarray:
    """``rbar(s, a) = sum_s' X(s'|s,a) r(s,a,s')``."""
    return np.einsum("ast,sat->sa", kernel, mdp.reward)


def evaluate_policy_exact(mdp: TabularMdp, kernel, policy: PolicyLike) -> np.ndarray:
    """Solve ``V = (I - gamma X^pi)^{-1} rbar^pi`` by dense LU."""
    kernel = check_kernel(kernel, mdp)
    chain, rbar = induced_chain(mdp, kernel, policy)
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * chain, rbar)


def sweep_evaluate(
    mdp: TabularMdp,
    kernels: np.ndarray,
    policy: PolicyLike,
    threshold: float,
    max_sweeps: int = 10**6,
) -> np.ndarray:
    """In-place (Gauss-Seidel) Bellman sweeps run in lockstep over a stack of kernels.

    Every kernel gets one sweep per round, starting from zero values; iteration
    stops once the largest absolute change seen during a round, across all
    kernels and states, drops below ``threshold``. Returns ``(K, S)`` values.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    kernels = np.asarray(kernels, dtype=float)
    if kernels.ndim == 3:
        kernels = kernels[None]
    chains, rbars = zip(*(induced_chain(mdp, k, policy) for k in kernels))
    chains = [c.tolist() for c in chains]
    rbars = [r.tolist() for r in rbars]
    S, g = mdp.num_states, mdp.discount
    values = [[0.0] * S for _ in kernels]
    for _ in range(max_sweeps):
        delta = 0.0
        for chain, rbar, v in zip(chains, rbars, values):
            for s in range(S):
                old = v[s]
                row = chain[s]
                v[s] = rbar[s] + g * sum(row[t] * v[t] for t in range(S))
                delta = max(delta, abs(old - v[s]))
        if delta < threshold:
            return np.array(values)
    raise ConvergenceError(f"sweep evaluation exceeded {max_sweeps} sweeps (last change {delta:g})")


def evaluate_policy_iterative(
    mdp: TabularMdp, kernel, policy: PolicyLike, threshold: float, max_sweeps: int = 10**6
) -> np.ndarray:
    kernel = check_kernel(kernel, mdp)
    return sweep_evaluate(mdp, kernel[None], policy, threshold, max_sweeps)[0]


def q_values(mdp: TabularMdp, kernel, values) -> np.ndarray:
    """``Q(s,a) = rbar(s,a) + gamma * sum_s' X(s'|s,a) v(s')``."""
    kernel = np.asarray(kernel, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (mdp.num_states,) or kernel.shape[1:] != (mdp.num_states,) * 2:
        raise ValueError("dimension mismatch between mdp, kernel and values")
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    return expected_reward(mdp, kernel) + mdp.discount * np.einsum("ast,t->sa", kernel, values)


def greedy(q: np.ndarray, tol: float = 0.0) -> tuple:
    """Row-wise argmax with lowest-index tie-breaking (ties within ``tol``)."""
    best = q.max(axis=1, keepdims=True)
    return tuple(int(a) for a in np.argmax(q >= best - tol, axis=1))


def optimal_action_sets(q: np.ndarray, tol: float = 1e-9) -> list[frozenset]:
    best = q.max(axis=1, keepdims=True)
    return [frozenset(np.flatnonzero(row).tolist()) for row in q >= best - tol]


def bellman_residual(mdp: TabularMdp, kernel, policy: PolicyLike, values) -> float:
    chain, rbar = induced_chain(mdp, np.asarray(kernel, dtype=float), policy)
    return float(np.max(np.abs(rbar + mdp.discount * chain @ values - values)))


def optimal_policy_fixed_kernel(mdp: TabularMdp, kernel, max_iters: int = 10_000):
    """Policy iteration on a single kernel.

    Returns ``(policy, values)``; among optimal actions the lowest index is kept.
    """
    kernel = check_kernel(kernel, mdp)
    policy = (0,) * mdp.num_states
    for _ in range(max_iters):
        v = evaluate_policy_exact(mdp, kernel, policy)
        q = q_values(mdp, kernel, v)
        current = q[np.arange(mdp.num_states), policy]
        # switch only on strict improvement so that PI cannot cycle on ties
        improve = q.max(axis=1) > current + 1e-12
        if not improve.any():
            break
        policy = tuple(int(np.argmax(q[s])) if improve[s] else policy[s] for s in range(mdp.num_states))
    else:
        raise ConvergenceError("policy iteration did not terminate")
    policy = greedy(q, tol=TIE_TOL)
    return policy, evaluate_policy_exact(mdp, kernel, policy)


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1)
