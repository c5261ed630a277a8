"""Discrete information measures, MAP decoding and Fano-type regret bounds.

All quantities are in bits unless ``base`` is given.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .mdp import TabularMdp
from .planning import Evaluator, KernelEnsemble, PolicyValueTable, check_weights, exact_evaluator


class GapHypothesisError(ValueError):
    """Per-kernel optima are not distinct, or some suboptimal policy has zero gap."""


def _log(x, base):
    return np.log(x) / np.log(base)


def entropy(p, base: float = 2.0) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0]
    return max(0.0, float(-(p * _log(p, base)).sum()))


def binary_entropy(p: float, base: float = 2.0) -> float:
    return entropy([p, 1.0 - p], base)


@dataclass(frozen=True, eq=False)
class JointChannel:
    prior: np.ndarray  # p(X)
    likelihood: np.ndarray  # P(Y|X), rows indexed by x

    def __post_init__(self):
        lik = np.array(self.likelihood, dtype=float)
        if lik.ndim != 2:
            raise ValueError("likelihood must be a matrix")
        prior = check_weights(self.prior, lik.shape[0])
        if np.any(lik < 0) or np.max(np.abs(lik.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("likelihood rows must be distributions")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "likelihood", lik)

    @property
    def joint(self) -> np.ndarray:
        return self.prior[:, None] * self.likelihood

    @property
    def marginal_y(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    @property
    def support_y(self) -> np.ndarray:
        return self.marginal_y > 0

    def posterior(self) -> np.ndarray:
        """``p(x|y)`` as columns; columns with ``p(y)=0`` are NaN."""
        py = self.marginal_y
        post = np.full_like(self.joint, np.nan)
        ok = py > 0
        post[:, ok] = self.joint[:, ok] / py[ok]
        return post

    def posterior_column(self, y: int) -> np.ndarray:
        if self.marginal_y[y] <= 0:
            raise ValueError(f"observation {y} has zero marginal probability")
        return self.joint[:, y] / self.marginal_y[y]

    def to_dict(self) -> dict:
        return {"prior": self.prior.tolist(), "likelihood": self.likelihood.tolist()}


def mutual_information(channel: JointChannel, base: float = 2.0) -> float:
    """Double sum ``sum p(x,y) log p(x,y) / (p(x) p(y))``."""
    joint = channel.joint
    outer = channel.prior[:, None] * channel.marginal_y[None, :]
    nz = joint > 0
    mi = float((joint[nz] * _log(joint[nz] / outer[nz], base)).sum())
    return max(mi, 0.0)


def conditional_entropy(channel: JointChannel, base: float = 2.0) -> float:
    """``H(X|Y)`` summed over posterior columns with positive ``p(y)``."""
    post = channel.posterior()
    py = channel.marginal_y
    return float(sum(py[y] * entropy(post[:, y], base) for y in np.flatnonzero(py > 0)))


def decoder_error(channel: JointChannel, decoder) -> float:
    joint = channel.joint
    hit = sum(joint[x, y] for y, x in enumerate(decoder))
    return float(1.0 - hit)


def map_decoder(channel: JointChannel):
    """Bayes-optimal decoder ``y -> argmax_x p(x|y)`` (ties to lowest x) and its error."""
    joint = channel.joint
    decoder = tuple(int(np.argmax(joint[:, y])) for y in range(joint.shape[1]))
    pe = float(np.sum(channel.marginal_y) - joint.max(axis=0).sum())
    return decoder, max(pe, 0.0)


def all_decoders(num_x: int, num_y: int):
    return itertools.product(range(num_x), repeat=num_y)


@dataclass
class EpsilonGap:
    epsilon: float
    per_kernel: list  # minimum gap per kernel
    attained_by: list  # (kernel index, policy) pairs attaining the minimum


def epsilon_gap(
    mdp: TabularMdp,
    ensemble: KernelEnsemble,
    evaluator: Evaluator = exact_evaluator,
    table: PolicyValueTable | None = None,
    tol: float = 1e-12,
) -> EpsilonGap:
    """Smallest sup-norm loss of any non-optimal deterministic policy, over kernels."""
    table = table or PolicyValueTable.build(mdp, ensemble, evaluator)
    if len(set(table.optimal)) != len(table.optimal):
        raise GapHypothesisError("two kernels share the same optimal policy")
    sup = table.sup_gaps  # (N, K)
    per_kernel, attained = [], []
    for k, opt in enumerate(table.optimal):
        others = np.delete(np.arange(len(sup)), opt)
        if len(others) == 0:
            raise GapHypothesisError("only one deterministic policy exists")
        g = sup[others, k]
        m = float(g.min())
        if m <= tol:
            bad = table.policies[int(others[np.argmin(g)])]
            raise GapHypothesisError(f"policy {bad} has zero gap to the optimum of kernel {k}")
        per_kernel.append(m)
        attained += [(k, table.policies[int(others[i])]) for i in np.flatnonzero(g <= m + tol)]
    eps = min(per_kernel)
    return EpsilonGap(eps, per_kernel, [a for a in attained if per_kernel[a[0]] <= eps + tol])


@dataclass
class FanoCertificate:
    pe_map: float
    h_pe: float
    hxy: float
    mi: float
    hx: float
    bound_lhs: float
    weakened_pe_lower: float | None
    epsilon_gap: float | None
    regret_lower: float | None
    base: float = 2.0

    def to_dict(self) -> dict:
        return asdict(self)

    def check(self, tol: float = 1e-9):
        assert self.bound_lhs >= self.hxy - tol, "Fano inequality violated"
        if self.weakened_pe_lower is not None:
            assert self.pe_map >= self.weakened_pe_lower - tol, "weakened Fano bound violated"
        if self.epsilon_gap is not None:
            assert abs(self.regret_lower - self.epsilon_gap * self.pe_map) <= tol

    def table(self) -> str:
        rows = [
            ("MAP error Pe", self.pe_map),
            ("H(Pe)", self.h_pe),
            ("H(X)", self.hx),
            ("H(X|Y)", self.hxy),
            ("I(X;Y)", self.mi),
            ("H(Pe) + Pe log|Omega|", self.bound_lhs),
            ("(H(X|Y) - 1) / log|Omega|", self.weakened_pe_lower),
            ("epsilon gap", self.epsilon_gap),
            ("regret lower bound eps*Pe", self.regret_lower),
        ]
        fmt = lambda v: "n/a" if v is None else f"{v:.6f}"
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {fmt(v)}" for name, v in rows)


def fano_certificate(channel: JointChannel, epsilon: float | None = None, base: float = 2.0) -> FanoCertificate:
    _, pe = map_decoder(channel)
    n = len(channel.prior)
    log_n = float(_log(n, base)) if n > 1 else 0.0
    hxy = conditional_entropy(channel, base)
    h_pe = binary_entropy(pe, base)
    weakened = None
    # the weakened form drops H(Pe) <= 1 bit; it is only meaningful in base 2
    if log_n > 0 and base == 2.0:
        weakened = (hxy - 1.0) / log_n
    cert = FanoCertificate(
        pe_map=pe,
        h_pe=h_pe,
        hxy=hxy,
        mi=mutual_information(channel, base),
        hx=entropy(channel.prior, base),
        bound_lhs=h_pe + pe * log_n,
        weakened_pe_lower=weakened,
        epsilon_gap=epsilon,
        regret_lower=None if epsilon is None else epsilon * pe,
        base=base,
    )
    cert.check()
    return cert


def certify_attack(
    mdp: TabularMdp,
    ensemble: KernelEnsemble,
    channel: JointChannel,
    evaluator: Evaluator = exact_evaluator,
    table: PolicyValueTable | None = None,
) -> FanoCertificate:
    """Fano certificate with the regret lower bound ``epsilon * Pe`` attached."""
    if not np.allclose(channel.prior, ensemble.prior, atol=1e-12):
        raise ValueError("channel prior differs from the ensemble prior")
    eps = epsilon_gap(mdp, ensemble, evaluator, table).epsilon
    return fano_certificate(channel, eps)
