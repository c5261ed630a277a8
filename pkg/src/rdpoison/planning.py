"""Planning when the transition kernel is drawn once from a known finite prior."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mdp import (
    TIE_TOL,
    TabularMdp,
    check_kernel,
    evaluate_policy_exact,
    greedy,
    kernel_from_dict,
    kernel_to_dict,
    optimal_policy_fixed_kernel,
    policy_matrix,
    q_values,
    sweep_evaluate,
)

MAX_ENUMERATION = 10**7
OBJECTIVES = ("mean_sup_gap", "sup_mean_gap")


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelEnsemble:
    """Finite support of the random kernel with its prior."""

    kernels: np.ndarray  # (K, A, S, S)
    prior: np.ndarray

    def __post_init__(self):
        kernels = np.array(self.kernels, dtype=float)
        if kernels.ndim != 4 or len(kernels) == 0:
            raise ValueError("kernels must be a non-empty (K, A, S, S) stack")
        for k in kernels:
            check_kernel(k)
        prior = check_weights(self.prior, len(kernels))
        kernels.setflags(write=False)
        prior.setflags(write=False)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "prior", prior)

    def __len__(self):
        return len(self.kernels)

    @property
    def num_states(self) -> int:
        return self.kernels.shape[2]

    @property
    def num_actions(self) -> int:
        return self.kernels.shape[1]

    def check_mdp(self, mdp: TabularMdp):
        if (mdp.num_actions, mdp.num_states) != (self.num_actions, self.num_states):
            raise ValueError("ensemble kernels are not shape-compatible with the mdp")

    def to_dict(self) -> dict:
        return {"kernels": [kernel_to_dict(k) for k in self.kernels], "prior": self.prior.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelEnsemble":
        return cls(np.array([kernel_from_dict(k) for k in doc["kernels"]]), np.array(doc["prior"]))


def check_weights(weights, n: int) -> np.ndarray:
    w = np.array(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be a probability vector")
    return w


# -- evaluators ---------------------------------------------------------------
# An evaluator maps (mdp, kernels (K,A,S,S), policy) to values (K, S).


def exact_evaluator(mdp: TabularMdp, kernels: np.ndarray, policy) -> np.ndarray:
    return np.array([evaluate_policy_exact(mdp, k, policy) for k in kernels])


@dataclass(frozen=True)
class SweepEvaluator:
    """Truncated in-place sweeps run in lockstep over the ensemble.

    With ``threshold=0.1`` this reproduces the reference three-state values
    (e.g. 7.858 rather than the exact 8.7).
    """

    threshold: float = 0.1

    def __call__(self, mdp, kernels, policy):
        return sweep_evaluate(mdp, kernels, policy, self.threshold)


Evaluator = Callable[[TabularMdp, np.ndarray, object], np.ndarray]


def describe_evaluator(evaluator) -> str:
    if isinstance(evaluator, SweepEvaluator):
        return f"sweep(threshold={evaluator.threshold:g})"
    return "exact"


# -- enumeration ----------------------------------------------------------------


def num_policies(num_states: int, num_actions: int) -> int:
    return num_actions**num_states


def enumerate_policies(num_states: int, num_actions: int) -> list[tuple]:
    """All deterministic policies in lexicographic order."""
    n = num_policies(num_states, num_actions)
    if n > MAX_ENUMERATION:
        raise EnumerationTooLarge(f"A^S = {n} exceeds the enumeration bound {MAX_ENUMERATION}")
    return list(itertools.product(range(num_actions), repeat=num_states))


def policy_index(policy: Sequence[int], num_actions: int) -> int:
    idx = 0
    for a in policy:
        idx = idx * num_actions + int(a)
    return idx


def _exact_table(mdp, kernels, policies, chunk=4096):
    S = mdp.num_states
    rbar = np.einsum("kast,sat->kas", kernels, mdp.reward)  # (K, A, S)
    states = np.arange(S)
    eye = np.eye(S)
    out = []
    for start in range(0, len(policies), chunk):
        pol = np.array(policies[start : start + chunk])  # (n, S)
        chains = kernels[:, pol, states]  # (K, n, S, S)
        r = rbar[:, pol, states]  # (K, n, S)
        v = np.linalg.solve(eye - mdp.discount * chains, r[..., None])[..., 0]
        out.append(np.swapaxes(v, 0, 1))
    return np.concatenate(out)


@dataclass(eq=False)
class PolicyValueTable:
    """Values of every deterministic policy under every kernel of an ensemble.

    ``optimal`` holds, per kernel, the enumeration index of the kernel's own
    optimal policy (found by policy iteration); regret gaps are measured against
    the evaluator's values of those policies.
    """

    mdp: TabularMdp
    ensemble: KernelEnsemble
    policies: list
    values: np.ndarray  # (N, K, S)
    optimal: tuple
    evaluator_name: str = "exact"

    @classmethod
    def build(cls, mdp: TabularMdp, ensemble: KernelEnsemble, evaluator: Evaluator = exact_evaluator):
        ensemble.check_mdp(mdp)
        policies = enumerate_policies(mdp.num_states, mdp.num_actions)
        if evaluator is exact_evaluator:
            values = _exact_table(mdp, ensemble.kernels, policies)
        else:
            values = np.array([evaluator(mdp, ensemble.kernels, p) for p in policies])
        optimal = tuple(
            policy_index(optimal_policy_fixed_kernel(mdp, k)[0], mdp.num_actions) for k in ensemble.kernels
        )
        return cls(mdp, ensemble, policies, values, optimal, describe_evaluator(evaluator))

    @property
    def optimal_policies(self) -> list[tuple]:
        return [self.policies[i] for i in self.optimal]

    @property
    def optimal_values(self) -> np.ndarray:
        """``V^{pi*(X_k)}_{X_k}`` stacked as (K, S)."""
        return np.array([self.values[i, k] for k, i in enumerate(self.optimal)])

    @property
    def gaps(self) -> np.ndarray:
        """``V^{pi*(X_k)}_{X_k} - V^pi_{X_k}`` as (N, K, S)."""
        return self.optimal_values[None] - self.values

    @property
    def sup_gaps(self) -> np.ndarray:
        return np.abs(self.gaps).max(axis=2)

    def index(self, policy) -> int:
        return policy_index(policy, self.mdp.num_actions)

    def objectives(self, weights, objective: str = "mean_sup_gap") -> np.ndarray:
        """Planning objective of every policy; ``weights`` may be batched (..., K)."""
        w = np.asarray(weights, dtype=float)
        if objective == "mean_sup_gap":
            return w @ self.sup_gaps.T
        if objective == "sup_mean_gap":
            return np.abs(np.einsum("...k,nks->...ns", w, self.gaps)).max(axis=-1)
        raise ValueError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")

    def best(self, weights, objective: str = "mean_sup_gap", tol: float = 1e-12):
        """Index of the minimising policy; ties go to the lexicographically smallest."""
        f = self.objectives(weights, objective)
        mask = f <= f.min(axis=-1, keepdims=True) + tol
        return np.argmax(mask, axis=-1), mask


@dataclass
class PlanReport:
    policy: tuple
    expected_values: np.ndarray
    per_kernel_values: np.ndarray
    objective: float
    objective_name: str
    tied_policies: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "policy": list(self.policy),
            "expected_values": self.expected_values.tolist(),
            "per_kernel_values": self.per_kernel_values.tolist(),
            "objective": self.objective,
            "objective_name": self.objective_name,
            "tied_policies": [list(p) for p in self.tied_policies],
        }


def expected_values(mdp, ensemble: KernelEnsemble, weights, policy, evaluator: Evaluator = exact_evaluator):
    """``sum_i w_i V^pi_{X_i}`` per state."""
    ensemble.check_mdp(mdp)
    w = check_weights(weights, len(ensemble))
    return w @ evaluator(mdp, ensemble.kernels, policy)


def exhaustive_regret_optimal_policy(
    mdp,
    ensemble: KernelEnsemble,
    weights,
    evaluator: Evaluator = exact_evaluator,
    objective: str = "mean_sup_gap",
    table: PolicyValueTable | None = None,
) -> PlanReport:
    """Enumerate all deterministic policies and minimise the expected regret.

    ``mean_sup_gap`` is ``sum_i w_i ||V*_i - V^pi_i||_inf``; ``sup_mean_gap`` is
    ``||sum_i w_i (V*_i - V^pi_i)||_inf``.
    """
    w = check_weights(weights, len(ensemble))
    table = table or PolicyValueTable.build(mdp, ensemble, evaluator)
    best, mask = table.best(w, objective)
    best = int(best)
    values = table.values[best]
    ties = [table.policies[i] for i in np.flatnonzero(mask) if i != best]
    return PlanReport(
        policy=table.policies[best],
        expected_values=w @ values,
        per_kernel_values=values,
        objective=float(table.objectives(w, objective)[best]),
        objective_name=objective,
        tied_policies=ties,
    )


@dataclass
class MaximizerReport:
    argmax_sets: list  # per state, list of policies maximising E_w V(s)
    exists_common_optimum: bool
    common: list
    expected: np.ndarray  # (N, S)
    policies: list


def exhaustive_expected_value_maximizer(
    mdp,
    ensemble: KernelEnsemble,
    weights,
    evaluator: Evaluator = exact_evaluator,
    table: PolicyValueTable | None = None,
    tol: float = 1e-9,
) -> MaximizerReport:
    w = check_weights(weights, len(ensemble))
    table = table or PolicyValueTable.build(mdp, ensemble, evaluator)
    ev = np.einsum("k,nks->ns", w, table.values)
    winners = ev >= ev.max(axis=0) - tol
    sets = [[table.policies[i] for i in np.flatnonzero(winners[:, s])] for s in range(mdp.num_states)]
    common_idx = np.flatnonzero(winners.all(axis=1))
    return MaximizerReport(
        argmax_sets=sets,
        exists_common_optimum=bool(len(common_idx)),
        common=[table.policies[i] for i in common_idx],
        expected=ev,
        policies=table.policies,
    )


@dataclass
class ValueSurface:
    thetas: np.ndarray
    expected: np.ndarray  # (n, n, 2) indexed [theta0, theta1, state]
    argmax: list  # per state (theta0, theta1) of the first maximiser
    argmax_sets: list  # per state, set of (i0, i1) grid indices within tolerance
    common: bool

    def rows(self):
        for i, t0 in enumerate(self.thetas):
            for j, t1 in enumerate(self.thetas):
                yield (float(t0), float(t1), float(self.expected[i, j, 0]), float(self.expected[i, j, 1]))


SURFACE_HEADER = ("theta0", "theta1", "EV_state0", "EV_state1")


def random_policy_value_surface(
    mdp, ensemble: KernelEnsemble, weights, grid_resolution: int = 101, tol: float = 1e-9
) -> ValueSurface:
    """Expected values of ``pi(a|0)=theta0, pi(a|1)=theta1`` on a uniform grid."""
    if mdp.num_states != 2 or mdp.num_actions != 2:
        raise ValueError("value surface needs a 2-state, 2-action mdp")
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be at least 2")
    ensemble.check_mdp(mdp)
    w = check_weights(weights, len(ensemble))
    th = np.linspace(0.0, 1.0, grid_resolution)
    t0, t1 = np.meshgrid(th, th, indexing="ij")
    pi = np.stack([np.stack([t0, 1 - t0], -1), np.stack([t1, 1 - t1], -1)], axis=-2)  # (n,n,S,A)
    ev = np.zeros(t0.shape + (2,))
    for wk, kernel in zip(w, ensemble.kernels):
        chain = np.einsum("ijsa,ast->ijst", pi, kernel)
        rbar = np.einsum("ijsa,ast,sat->ijs", pi, kernel, mdp.reward)
        v = np.linalg.solve(np.eye(2) - mdp.discount * chain, rbar[..., None])[..., 0]
        ev += wk * v
    argmax, sets = [], []
    for s in range(2):
        i, j = np.unravel_index(np.argmax(ev[..., s]), t0.shape)
        argmax.append((float(th[i]), float(th[j])))
        sets.append({tuple(ix) for ix in np.argwhere(ev[..., s] >= ev[..., s].max() - tol).tolist()})
    return ValueSurface(th, ev, argmax, sets, bool(sets[0] & sets[1]))


@dataclass
class TraceStep:
    policy: tuple
    per_kernel_values: np.ndarray
    mixed_q: np.ndarray


@dataclass
class PolicyIterationTrace:
    policy: tuple
    steps: list
    converged: bool

    def to_dict(self) -> dict:
        return {
            "policy": list(self.policy),
            "converged": self.converged,
            "steps": [
                {
                    "policy": list(st.policy),
                    "per_kernel_values": st.per_kernel_values.tolist(),
                    "mixed_q": st.mixed_q.tolist(),
                }
                for st in self.steps
            ],
        }


def extended_policy_iteration(
    mdp,
    ensemble: KernelEnsemble,
    weights,
    initial_policy,
    max_iters: int = 100,
    evaluator: Evaluator = exact_evaluator,
) -> PolicyIterationTrace:
    """Greedy improvement on the weight-mixed Q of the per-kernel evaluations.

    Stops as soon as the improved policy equals the current one.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    ensemble.check_mdp(mdp)
    w = check_weights(weights, len(ensemble))
    policy = tuple(int(a) for a in initial_policy)
    policy_matrix(policy, mdp.num_states, mdp.num_actions)
    steps = []
    for _ in range(max_iters):
        values = evaluator(mdp, ensemble.kernels, policy)
        mixed = sum(wk * q_values(mdp, k, v) for wk, k, v in zip(w, ensemble.kernels, values))
        steps.append(TraceStep(policy, values, mixed))
        new = greedy(mixed, tol=TIE_TOL)
        if new == policy:
            return PolicyIterationTrace(policy, steps, True)
        policy = new
    return PolicyIterationTrace(policy, steps, False)
