"""Victim-side learning under attack: trajectories, the state-permutation
observation attack, empirical kernel estimation and tabular Q-learning."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .envs import EnvironmentSpec, compose, conjugate_kernel, state_permutations
from .info import JointChannel
from .mdp import (
    TabularMdp,
    check_kernel,
    evaluate_policy_exact,
    greedy,
    optimal_action_sets,
    optimal_policy_fixed_kernel,
    policy_matrix,
    q_values,
)
from .planning import KernelEnsemble, PolicyValueTable


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _seed(*words) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(w) for w in words])


def _cumulative(kernel: np.ndarray) -> list:
    cum = np.cumsum(kernel, axis=2)
    return cum.tolist()


def _draw(cum_row, u: float) -> int:
    return min(bisect.bisect_right(cum_row, u), len(cum_row) - 1)


# -- trajectories -----------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    steps: tuple  # (state, action, reward, next_state) per step

    def __post_init__(self):
        steps = tuple((int(s), int(a), float(r), int(t)) for s, a, r, t in self.steps)
        for (_, _, _, t), (s, _, _, _) in zip(steps, steps[1:]):
            if t != s:
                raise ValueError("trajectory steps do not chain")
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return len(self.steps)

    @property
    def states(self) -> list[int]:
        if not self.steps:
            return []
        return [s for s, _, _, _ in self.steps] + [self.steps[-1][3]]

    def check(self, num_states: int, num_actions: int):
        for s, a, _, t in self.steps:
            if not (0 <= s < num_states and 0 <= t < num_states and 0 <= a < num_actions):
                raise ValueError("trajectory index out of range")


def simulate_trajectory(
    mdp: TabularMdp, kernel, policy="uniform", T: int = 100, rng_seed=0, start_state=None
) -> Trajectory:
    """Sample ``T`` transitions.

    ``policy`` is a deterministic action tuple, an ``(S, A)`` matrix, or
    ``"uniform"`` for uniformly random actions. The start state is uniform over
    all states unless given.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    kernel = check_kernel(kernel, mdp)
    S, A = mdp.num_states, mdp.num_actions
    pi = np.full((S, A), 1.0 / A) if isinstance(policy, str) and policy == "uniform" else policy_matrix(policy, S, A)
    rng = _rng(rng_seed)
    cum_k = _cumulative(kernel)
    cum_pi = np.cumsum(pi, axis=1).tolist()
    reward = mdp.reward.tolist()
    u = rng.random((T, 2)).tolist()
    s = int(rng.integers(S)) if start_state is None else int(start_state)
    steps = []
    for ua, us in u:
        a = _draw(cum_pi[s], ua)
        t = _draw(cum_k[a][s], us)
        steps.append((s, a, reward[s][a][t], t))
        s = t
    return Trajectory(tuple(steps))


# -- permutation attack ---------------------------------------------------------------


@dataclass(frozen=True)
class PermutationAttack:
    """Relabel every observed state ``s`` as ``perm[s]``."""

    perm: tuple
    note: str = ""

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"{perm} is not a permutation")
        object.__setattr__(self, "perm", perm)

    def inverse(self) -> "PermutationAttack":
        inv = [0] * len(self.perm)
        for s, p in enumerate(self.perm):
            inv[p] = s
        return PermutationAttack(tuple(inv), self.note)

    @classmethod
    def random(cls, num_states: int, rng_seed) -> "PermutationAttack":
        rng = _rng(rng_seed)
        return cls(tuple(rng.permutation(num_states).tolist()), note=f"uniform draw, seed {rng_seed!r}")


def apply_permutation_attack(traj: Trajectory, attack: PermutationAttack) -> Trajectory:
    p = attack.perm
    return Trajectory(tuple((p[s], a, r, p[t]) for s, a, r, t in traj.steps))


def transition_counts(trajs, num_states: int, num_actions: int) -> np.ndarray:
    counts = np.zeros((num_actions, num_states, num_states))
    for traj in trajs:
        for s, a, _, t in traj.steps:
            counts[a, s, t] += 1
    return counts


def estimate_kernel(trajs, num_states: int, num_actions: int, smoothing: float = 0.0) -> np.ndarray:
    """Empirical transition frequencies with additive smoothing; unvisited rows are uniform."""
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    counts = transition_counts(trajs, num_states, num_actions) + smoothing
    totals = counts.sum(axis=2, keepdims=True)
    return np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / num_states)


def nearest_member(kernel, ensemble: KernelEnsemble) -> int:
    """Ensemble index closest in max-abs distance; ties go to the lowest index."""
    dist = np.abs(ensemble.kernels - np.asarray(kernel)[None]).max(axis=(1, 2, 3))
    return int(np.argmin(dist))


def posterior_after_observation(ensemble: KernelEnsemble, likelihood, observed_y: int) -> np.ndarray:
    return JointChannel(ensemble.prior, likelihood).posterior_column(observed_y)


# -- Q-learning -----------------------------------------------------------------------


@dataclass(frozen=True)
class QLearningSchedule:
    """Learning rate ``1 / n(s,a)^lr_power`` (or a constant when ``lr_power`` is None)
    and epsilon-greedy exploration decaying linearly over the first
    ``eps_decay_fraction`` of the episodes."""

    lr_power: float | None = 0.8
    lr_constant: float = 0.1
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.8

    def __post_init__(self):
        if self.lr_power is not None and not 0.5 < self.lr_power <= 1.0:
            raise ValueError("lr_power must lie in (0.5, 1]")
        if not 0.0 < self.lr_constant <= 1.0:
            raise ValueError("learning rate must lie in (0, 1]")
        for e in (self.eps_start, self.eps_end):
            if not 0.0 <= e <= 1.0:
                raise ValueError("exploration rates must lie in [0, 1]")
        if not 0.0 < self.eps_decay_fraction <= 1.0:
            raise ValueError("eps_decay_fraction must lie in (0, 1]")

    def learning_rate(self, n: int) -> float:
        if self.lr_power is None:
            return self.lr_constant
        return 1.0 / n**self.lr_power

    def epsilon(self, episode: int, episodes: int) -> float:
        horizon = max(1.0, self.eps_decay_fraction * episodes)
        frac = min(1.0, episode / horizon)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class QLearningResult:
    q: np.ndarray
    policy: tuple
    visits: np.ndarray


def tabular_q_learning(
    mdp: TabularMdp,
    kernel,
    episodes: int = 50_000,
    T: int = 100,
    schedule: QLearningSchedule = QLearningSchedule(),
    rng_seed=0,
    start_states=None,
    terminal_states=(),
) -> QLearningResult:
    """One-step Q-learning with epsilon-greedy behaviour.

    Each episode starts at a uniform draw from ``start_states`` (all
    non-terminal states by default) and ends after ``T`` steps or on entering a
    terminal state, whose value is taken as zero.
    """
    kernel = check_kernel(kernel, mdp)
    S, A, g = mdp.num_states, mdp.num_actions, mdp.discount
    terminal = set(int(s) for s in terminal_states)
    starts = [s for s in range(S) if s not in terminal] if start_states is None else [int(s) for s in start_states]
    if not starts:
        raise ValueError("no start states")
    rng = _rng(rng_seed)
    cum = _cumulative(kernel)
    reward = mdp.reward.tolist()
    q = [[0.0] * A for _ in range(S)]
    n = [[0] * A for _ in range(S)]
    lr_cache = [schedule.learning_rate(k) for k in range(1, 1 + min(episodes * T, 10**6))] or [1.0]
    acts = range(A)
    for ep in range(episodes):
        eps = schedule.epsilon(ep, episodes)
        u = rng.random((T + 1, 3)).tolist()
        s = starts[min(int(u[T][0] * len(starts)), len(starts) - 1)]
        for k in range(T):
            ue, ua, us = u[k]
            row = q[s]
            if ue < eps:
                a = min(int(ua * A), A - 1)
            else:
                best = max(row)
                a = next(b for b in acts if row[b] == best)
            t = _draw(cum[a][s], us)
            r = reward[s][a][t]
            c = n[s][a] + 1
            n[s][a] = c
            lr = lr_cache[c - 1] if c <= len(lr_cache) else schedule.learning_rate(c)
            if t in terminal:
                row[a] += lr * (r - row[a])
                break
            row[a] += lr * (r + g * max(q[t]) - row[a])
            s = t
    qa = np.array(q)
    return QLearningResult(qa, greedy(qa), np.array(n))


def planner_action_sets(mdp: TabularMdp, kernel, tol: float = 1e-9) -> list[frozenset]:
    """Per-state sets of optimal actions under the exact optimal values."""
    _, v = optimal_policy_fixed_kernel(mdp, kernel)
    return optimal_action_sets(q_values(mdp, kernel, v), tol)


def matches_planner(policy, action_sets, states) -> bool:
    return all(policy[s] in action_sets[s] for s in states)


# -- model-free rate-distortion experiment ----------------------------------------------


@dataclass
class ModelFreeResult:
    states: list  # start states reported
    regret: np.ndarray  # (runs, len(states)) under the attack channel
    baseline: np.ndarray  # (runs, len(states)) under the reversible deterministic attack
    policies: list  # per run, per kernel learned greedy policy
    sanity: list  # per kernel, fraction of runs whose policy matches the planner

    @property
    def mean_regret(self) -> np.ndarray:
        return self.regret.mean(axis=0)

    @property
    def mean_baseline(self) -> np.ndarray:
        return self.baseline.mean(axis=0)

    def rows(self):
        for j, s in enumerate(self.states):
            yield (s, float(self.mean_regret[j]), float(self.mean_baseline[j]))


MODEL_FREE_HEADER = ("start_state", "attack_regret", "deterministic_baseline_regret")


def run_rate_distortion_model_free(
    env: EnvironmentSpec,
    likelihood,
    runs: int = 20,
    rng_seed: int = 0,
    episodes: int = 50_000,
    T: int = 100,
    schedule: QLearningSchedule = QLearningSchedule(),
    start_states=None,
    terminal_states=(),
) -> ModelFreeResult:
    """Regret per start state of a Q-learning victim fooled by ``P(Y|X)``.

    In every run the victim learns one greedy policy per ensemble member (the
    dynamics it would perceive for each ``Y``). Regret at ``s`` is the exact
    channel expectation ``sum_{x,y} p(x) P(y|x) (V*_x(s) - V^{pi_y}_x(s))``.
    The deterministic-attack baseline assumes the victim inverts the map, so it
    plays ``pi_x`` on ``x`` and only learning error remains.
    """
    mdp, ens = env.mdp, env.ensemble
    channel = JointChannel(ens.prior, likelihood)
    K = len(ens)
    if channel.likelihood.shape != (K, K):
        raise ValueError("likelihood must be square over the ensemble")
    terminal = set(int(s) for s in terminal_states)
    states = [s for s in range(mdp.num_states) if s not in terminal] if start_states is None else list(start_states)
    optimal = [optimal_policy_fixed_kernel(mdp, k)[1] for k in ens.kernels]
    action_sets = [planner_action_sets(mdp, k) for k in ens.kernels]
    joint = channel.joint
    regret = np.zeros((runs, len(states)))
    baseline = np.zeros((runs, len(states)))
    policies, hits = [], np.zeros(K)
    for run in range(runs):
        learned = [
            tabular_q_learning(
                mdp, k, episodes, T, schedule, np.random.default_rng(_seed(rng_seed, run, i)), start_states, terminal
            ).policy
            for i, k in enumerate(ens.kernels)
        ]
        policies.append(learned)
        hits += [matches_planner(p, a, states) for p, a in zip(learned, action_sets)]
        # loss[x, y] = V*_x - V^{pi_y}_x
        loss = np.array([[optimal[x] - evaluate_policy_exact(mdp, ens.kernels[x], learned[y]) for y in range(K)] for x in range(K)])
        regret[run] = np.einsum("xy,xys->s", joint, loss)[states]
        baseline[run] = np.einsum("x,xs->s", ens.prior, loss[np.arange(K), np.arange(K)])[states]
    return ModelFreeResult(states, regret, baseline, policies, (hits / runs).tolist())


# -- permutation observation attack -------------------------------------------------------


def trajectory_log_likelihood(counts: np.ndarray, kernel: np.ndarray) -> float:
    """``sum N(a,s,s') log X(s'|s,a)``; ``-inf`` when an observed transition is impossible."""
    with np.errstate(divide="ignore"):
        logk = np.log(kernel)
    mask = counts > 0
    return float((counts[mask] * logk[mask]).sum())


def permutation_aware_log_likelihood(counts: np.ndarray, kernel: np.ndarray, perms) -> float:
    """Episode log-likelihood with the relabelling marginalised over uniform ``perms``."""
    lls = [trajectory_log_likelihood(counts, conjugate_kernel(kernel, p)) for p in perms]
    return float(logsumexp(lls) - math.log(len(perms)))


def permutation_aware_posterior(ensemble: KernelEnsemble, episode_counts, perms=None) -> np.ndarray:
    """Posterior over ensemble members given per-episode corrupted counts.

    Each episode's relabelling is an independent uniform draw from ``perms``
    (all state permutations by default), known to the victim only in law.
    """
    perms = state_permutations(ensemble.num_states) if perms is None else perms
    logp = np.log(ensemble.prior)
    for counts in episode_counts:
        logp = logp + np.array([permutation_aware_log_likelihood(counts, k, perms) for k in ensemble.kernels])
    return np.exp(logp - logsumexp(logp))


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class PermutationRun:
    truth: int
    posterior_tv: list  # per episode, TV distance of the aware posterior from uniform
    aware_regret: list  # per episode, regret of the posterior-planning victim on the truth
    naive_regret: list  # per episode, regret of the nearest-member victim on the truth
    naive_hits: list  # per episode, nearest member equals the truth
    permutations: list = field(default_factory=list)


@dataclass
class PermutationExperiment:
    runs: list
    zero_info_regret: float  # planner objective under the prior
    zero_info_policy: tuple
    attacked: bool

    def per_episode(self, key: str) -> np.ndarray:
        return np.array([getattr(r, key) for r in self.runs], dtype=float).mean(axis=0)

    @property
    def final_tv(self) -> np.ndarray:
        return np.array([r.posterior_tv[-1] for r in self.runs])

    @property
    def mean_aware_regret(self) -> float:
        return float(np.mean([r.aware_regret[-1] for r in self.runs]))

    @property
    def identification_rate(self) -> float:
        return float(np.mean([r.naive_hits[-1] for r in self.runs]))

    def rows(self):
        tv = self.per_episode("posterior_tv")
        aware = self.per_episode("aware_regret")
        naive = self.per_episode("naive_regret")
        hits = self.per_episode("naive_hits")
        for e in range(len(tv)):
            yield (e + 1, float(tv[e]), float(aware[e]), float(naive[e]), float(hits[e]), self.zero_info_regret)


PERMUTATION_HEADER = ("episode", "posterior_tv", "aware_regret", "naive_regret", "naive_identification", "zero_info_regret")


def run_permutation_attack(
    env: EnvironmentSpec,
    seeds=range(100),
    episodes: int = 20,
    T: int = 100,
    attacked: bool = True,
    table: PolicyValueTable | None = None,
) -> PermutationExperiment:
    """Model-based victim under per-episode random state relabelling.

    Per seed a true member is drawn from the prior; every episode is a uniform
    random-action trajectory relabelled by a fresh uniform permutation (identity
    when ``attacked`` is False). Two victims are scored after each episode: one
    plans on the permutation-aware posterior, the other on the ensemble member
    nearest its empirical kernel estimate.
    """
    mdp, ens = env.mdp, env.ensemble
    table = table or PolicyValueTable.build(mdp, ens)
    perms = state_permutations(mdp.num_states)
    identity = tuple(range(mdp.num_states))
    sup = table.sup_gaps  # (N, K)
    opt_idx = table.optimal
    zero_idx, _ = table.best(ens.prior)
    zero_idx = int(zero_idx)
    uniform = np.full(len(ens), 1.0 / len(ens))
    runs = []
    for seed in seeds:
        rng = np.random.default_rng(_seed(seed))
        truth = int(rng.choice(len(ens), p=ens.prior))
        counts_list, trajs, used = [], [], []
        tv, aware, naive, hits = [], [], [], []
        logp = np.log(ens.prior)
        for _ in range(episodes):
            perm = perms[int(rng.integers(len(perms)))] if attacked else identity
            used.append(perm)
            traj = simulate_trajectory(mdp, ens.kernels[truth], "uniform", T, rng)
            traj = apply_permutation_attack(traj, PermutationAttack(perm))
            trajs.append(traj)
            counts = transition_counts([traj], mdp.num_states, mdp.num_actions)
            counts_list.append(counts)
            if attacked:
                logp = logp + np.array([permutation_aware_log_likelihood(counts, k, perms) for k in ens.kernels])
            else:
                logp = logp + np.array([trajectory_log_likelihood(counts, k) for k in ens.kernels])
            post = np.exp(logp - logsumexp(logp))
            idx, _ = table.best(post)
            tv.append(total_variation(post, uniform))
            aware.append(float(sup[int(idx), truth]))
            guess = nearest_member(estimate_kernel(trajs, mdp.num_states, mdp.num_actions), ens)
            naive.append(float(sup[opt_idx[guess], truth]))
            hits.append(guess == truth)
        runs.append(PermutationRun(truth, tv, aware, naive, hits, used))
    zero = float(ens.prior @ sup[zero_idx])
    return PermutationExperiment(runs, zero, table.policies[zero_idx], attacked)


def conjugation_index(perms, i: int, j: int) -> int:
    """Index of ``perms[i] o perms[j]`` in ``perms``."""
    return perms.index(compose(perms[i], perms[j]))
