"""Rate-distortion attack channels: regret measurement and budgeted design."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .info import (
    GapHypothesisError,
    JointChannel,
    epsilon_gap,
    fano_certificate,
    map_decoder,
    mutual_information,
)
from .mdp import TabularMdp
from .planning import Evaluator, KernelEnsemble, PolicyValueTable, exact_evaluator

COST_TOL = 1e-12
CURVE_HEADER = ("B", "p1", "p2", "regret", "regret_fraction", "mi_bits", "pe", "eps_pe")


@dataclass(frozen=True, eq=False)
class AttackChannel:
    channel: JointChannel
    cost: np.ndarray
    budget: float = np.inf

    def __post_init__(self):
        cost = np.asarray(self.cost, dtype=float)
        if cost.shape != self.channel.likelihood.shape:
            raise ValueError("cost matrix must match the likelihood shape")
        if np.any(cost < 0):
            raise ValueError("costs must be nonnegative")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        object.__setattr__(self, "cost", cost)

    @property
    def expected_cost(self) -> float:
        return float((self.channel.joint * self.cost).sum())

    @property
    def feasible(self) -> bool:
        return self.expected_cost <= self.budget + COST_TOL


def two_kernel_likelihood(p1: float, p2: float) -> np.ndarray:
    """``p1 = P(Y=X2|X1)``, ``p2 = P(Y=X1|X2)``."""
    return np.array([[1.0 - p1, p1], [p2, 1.0 - p2]])


def two_kernel_cost(c1: float, c2: float) -> np.ndarray:
    return np.array([[0.0, c1], [c2, 0.0]])


def uniform_prior_mi(p1, p2, base: float = 2.0):
    """Closed-form ``I(X;Y)`` of the two-kernel channel under a uniform prior."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)

    def xlogx(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)

    nats = (
        -xlogx(0.5 + 0.5 * (p2 - p1))
        - xlogx(0.5 + 0.5 * (p1 - p2))
        + 0.5 * (xlogx(p1) + xlogx(1 - p1))
        + 0.5 * (xlogx(p2) + xlogx(1 - p2))
    )
    return nats / np.log(base)


def two_kernel_joint(prior, p1, p2) -> np.ndarray:
    """Joint ``p(x, y)`` for arrays of (p1, p2); shape ``p1.shape + (2, 2)``."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    row1 = np.stack([1 - p1, p1], axis=-1) * prior[0]
    row2 = np.stack([p2, 1 - p2], axis=-1) * prior[1]
    return np.stack([row1, row2], axis=-2)


def joint_mi(joint: np.ndarray, base: float = 2.0) -> np.ndarray:
    """Vectorised ``I(X;Y)`` over a batch of joints (..., X, Y)."""
    px = joint.sum(axis=-1, keepdims=True)
    py = joint.sum(axis=-2, keepdims=True)
    outer = px * py
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(joint > 0, joint * np.log(np.where(joint > 0, joint / outer, 1.0)), 0.0)
    return np.maximum(terms.sum(axis=(-2, -1)) / np.log(base), 0.0)


@dataclass
class RegretReport:
    regret: float
    per_pair_regret: np.ndarray  # (X, Y); NaN where p(y)=0
    regret_fraction: float
    baseline_value: float
    victim_policies: list  # per y, None when p(y)=0
    attacked_value_expectation: list  # per y, E_{p(x|y)} V^{pi(y)}_x, None when p(y)=0
    expectation_form_regret: float
    mi: float
    pe: float
    fano: object = None
    fano_error: str | None = None
    expected_cost: float | None = None
    face_value_regret: float | None = None  # victim that trusts y and plays pi*(X_y)

    def to_dict(self) -> dict:
        return {
            "regret": self.regret,
            "per_pair_regret": [[None if np.isnan(v) else v for v in row] for row in self.per_pair_regret.tolist()],
            "regret_fraction": self.regret_fraction,
            "baseline_value": self.baseline_value,
            "victim_policies": [None if p is None else list(p) for p in self.victim_policies],
            "attacked_value_expectation": [
                None if v is None else v.tolist() for v in self.attacked_value_expectation
            ],
            "expectation_form_regret": self.expectation_form_regret,
            "mi_bits": self.mi,
            "pe": self.pe,
            "expected_cost": self.expected_cost,
            "face_value_regret": self.face_value_regret,
            "fano": None if self.fano is None else self.fano.to_dict(),
            "fano_error": self.fano_error,
        }


@dataclass(eq=False)
class RegretModel:
    """Victim planning and regret accounting over a fixed ensemble.

    The victim observing ``y`` plays the exhaustive regret-optimal policy under
    the posterior ``p(x|y)``. Regret is ``E_{p(x,y)} ||V*_x - V^{pi(y)}_x||_inf``.
    """

    table: PolicyValueTable
    objective: str = "mean_sup_gap"
    _eps: object = field(default=None, repr=False)

    @classmethod
    def build(cls, mdp, ensemble, evaluator: Evaluator = exact_evaluator, objective="mean_sup_gap"):
        return cls(PolicyValueTable.build(mdp, ensemble, evaluator), objective)

    @property
    def ensemble(self) -> KernelEnsemble:
        return self.table.ensemble

    @property
    def baseline_value(self) -> float:
        """``E_{p(X)} ||V^{pi*(X)}_X||_inf``: the unattacked optimal value scale."""
        return float(self.ensemble.prior @ np.abs(self.table.optimal_values).max(axis=1))

    def epsilon(self):
        """Epsilon gap, or the hypothesis violation message."""
        if self._eps is None:
            try:
                self._eps = epsilon_gap(self.table.mdp, self.ensemble, table=self.table)
            except GapHypothesisError as exc:
                self._eps = str(exc)
        return self._eps

    def victim_indices(self, joint: np.ndarray) -> np.ndarray:
        """Victim policy index per observation for a batch of joints (..., X, Y)."""
        py = joint.sum(axis=-2, keepdims=True)
        safe = np.where(py > 0, py, 1.0)
        post = np.where(py > 0, joint / safe, self.ensemble.prior[:, None])
        post = np.swapaxes(post, -1, -2)  # (..., Y, X)
        idx, _ = self.table.best(post, self.objective)
        return idx

    def regret_of_joints(self, joint: np.ndarray) -> np.ndarray:
        idx = self.victim_indices(joint)  # (..., Y)
        sup = self.table.sup_gaps  # (N, X)
        per_pair = np.swapaxes(sup[idx], -1, -2)  # (..., X, Y)
        return (joint * per_pair).sum(axis=(-2, -1))

    def report(self, attack: AttackChannel | JointChannel, certify: bool = True) -> RegretReport:
        if isinstance(attack, JointChannel):
            channel, cost = attack, None
        else:
            channel, cost = attack.channel, attack.expected_cost
        if not np.allclose(channel.prior, self.ensemble.prior, atol=1e-12):
            raise ValueError("channel prior differs from the ensemble prior")
        joint = channel.joint
        py = channel.marginal_y
        idx = self.victim_indices(joint)
        values = self.table.values
        opt = self.table.optimal_values
        nx, ny = joint.shape
        per_pair = np.full((nx, ny), np.nan)
        policies, attacked = [], []
        exp_form = 0.0
        for y in range(ny):
            if py[y] <= 0:
                policies.append(None)
                attacked.append(None)
                continue
            i = int(idx[y])
            policies.append(self.table.policies[i])
            per_pair[:, y] = self.table.sup_gaps[i]
            post = joint[:, y] / py[y]
            av = post @ values[i]
            attacked.append(av)
            exp_form += sum(joint[x, y] * np.abs(opt[x] - av).max() for x in range(nx))
        regret = float(np.nansum(joint * np.where(np.isnan(per_pair), 0.0, per_pair)))
        _, pe = map_decoder(channel)
        face = None
        if nx == ny:
            sup = self.table.sup_gaps
            face = float(sum(joint[x, y] * sup[self.table.optimal[y], x] for x in range(nx) for y in range(ny)))
        rep = RegretReport(
            regret=regret,
            per_pair_regret=per_pair,
            regret_fraction=regret / self.baseline_value,
            baseline_value=self.baseline_value,
            victim_policies=policies,
            attacked_value_expectation=attacked,
            expectation_form_regret=float(exp_form),
            mi=mutual_information(channel),
            pe=pe,
            expected_cost=cost,
            face_value_regret=face,
        )
        if certify:
            eps = self.epsilon()
            if isinstance(eps, str):
                rep.fano = fano_certificate(channel)
                rep.fano_error = eps
            else:
                rep.fano = fano_certificate(channel, eps.epsilon)
                if regret < rep.fano.regret_lower - 1e-9:
                    raise AssertionError(f"regret {regret} below the bound {rep.fano.regret_lower}")
        return rep


def measure_regret(
    mdp: TabularMdp,
    ensemble: KernelEnsemble,
    attack: AttackChannel | JointChannel,
    evaluator: Evaluator = exact_evaluator,
    objective: str = "mean_sup_gap",
) -> RegretReport:
    return RegretModel.build(mdp, ensemble, evaluator, objective).report(attack)


def parameter_grid(step: float) -> np.ndarray:
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} must divide 1")
    return np.round(np.linspace(0.0, 1.0, n + 1), 12)


@dataclass
class BudgetChoice:
    budget: float
    p1: float
    p2: float
    regret: float
    mi: float
    report: RegretReport | None = None


class BudgetSearch:
    """Grid search over the two-kernel channel ``(p1, p2)`` on ``[0, 1]^2``.

    Budget constraints are read as ``E C <= B``; ties go to the
    lexicographically smallest ``(p1, p2)``.
    """

    def __init__(self, model: RegretModel, cost, step: float = 0.005):
        if len(model.ensemble) != 2:
            raise ValueError("budgeted search is defined for two-kernel ensembles")
        self.model = model
        self.cost = np.asarray(cost, dtype=float)
        if self.cost.shape != (2, 2) or np.any(self.cost < 0):
            raise ValueError("cost must be a nonnegative 2x2 matrix")
        self.step = step
        self.grid = parameter_grid(step)
        p1, p2 = np.meshgrid(self.grid, self.grid, indexing="ij")
        self.p1, self.p2 = p1, p2
        prior = model.ensemble.prior
        self.joint = two_kernel_joint(prior, p1, p2)
        self.expected_cost = (self.joint * self.cost).sum(axis=(-2, -1))
        self.mi = joint_mi(self.joint)
        self._regret = None

    @property
    def regret(self) -> np.ndarray:
        if self._regret is None:
            self._regret = self.model.regret_of_joints(self.joint)
        return self._regret

    def feasible(self, budget: float) -> np.ndarray:
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        return self.expected_cost <= budget + COST_TOL

    def _pick(self, score: np.ndarray, budget: float, tol: float = 1e-12):
        feas = self.feasible(budget)
        best = score[feas].max()
        i, j = np.argwhere(feas & (score >= best - tol))[0]
        return int(i), int(j)

    def _choice(self, budget, i, j, with_report) -> BudgetChoice:
        p1, p2 = float(self.grid[i]), float(self.grid[j])
        rep = None
        if with_report:
            ch = AttackChannel(JointChannel(self.model.ensemble.prior, two_kernel_likelihood(p1, p2)), self.cost, budget)
            rep = self.model.report(ch)
        return BudgetChoice(budget, p1, p2, float(self.regret[i, j]), float(self.mi[i, j]), rep)

    def max_regret(self, budget: float, with_report: bool = True) -> BudgetChoice:
        i, j = self._pick(self.regret, budget)
        return self._choice(budget, i, j, with_report)

    def min_mi(self, budget: float, with_report: bool = True) -> BudgetChoice:
        i, j = self._pick(-self.mi, budget)
        return self._choice(budget, i, j, with_report)

    def curve(self, budgets, mode: str = "max_regret") -> list[dict]:
        budgets = list(budgets)
        if any(b2 < b1 for b1, b2 in zip(budgets, budgets[1:])):
            raise ValueError("budgets must be sorted ascending")
        pick = {"max_regret": self.max_regret, "min_mi": self.min_mi}[mode]
        eps = self.model.epsilon()
        eps = None if isinstance(eps, str) else eps.epsilon
        prior = self.model.ensemble.prior
        rows = []
        for b in budgets:
            c = pick(b, with_report=False)
            _, pe = map_decoder(JointChannel(prior, two_kernel_likelihood(c.p1, c.p2)))
            rows.append(
                {
                    "B": float(b),
                    "p1": c.p1,
                    "p2": c.p2,
                    "regret": c.regret,
                    "regret_fraction": c.regret / self.model.baseline_value,
                    "mi_bits": c.mi,
                    "pe": pe,
                    "eps_pe": None if eps is None else eps * pe,
                }
            )
        return rows


def maximize_regret_under_budget(
    mdp, ensemble, cost, budget, step=0.005, evaluator: Evaluator = exact_evaluator, objective="mean_sup_gap"
) -> BudgetChoice:
    model = RegretModel.build(mdp, ensemble, evaluator, objective)
    return BudgetSearch(model, cost, step).max_regret(budget)


def minimize_mutual_information_under_budget(prior, cost, budget, step=0.005):
    """Minimum-MI two-kernel channel under ``E C <= B``; returns ``(p1, p2, mi_bits)``."""
    prior = np.asarray(prior, dtype=float)
    grid = parameter_grid(step)
    p1, p2 = np.meshgrid(grid, grid, indexing="ij")
    joint = two_kernel_joint(prior, p1, p2)
    cost = np.asarray(cost, dtype=float)
    feas = (joint * cost).sum(axis=(-2, -1)) <= budget + COST_TOL
    mi = joint_mi(joint)
    best = mi[feas].min()
    i, j = np.argwhere(feas & (mi <= best + 1e-12))[0]
    if np.allclose(prior, 0.5):
        closed = float(uniform_prior_mi(grid[i], grid[j]))
        if abs(closed - mi[i, j]) > 1e-8:
            raise AssertionError(f"closed-form MI {closed} disagrees with the double sum {mi[i, j]}")
    return float(grid[i]), float(grid[j]), float(mi[i, j])


def regret_vs_budget_curve(
    mdp, ensemble, cost, budgets, mode="max_regret", step=0.005, evaluator: Evaluator = exact_evaluator,
    objective="mean_sup_gap",
) -> list[dict]:
    model = RegretModel.build(mdp, ensemble, evaluator, objective)
    return BudgetSearch(model, cost, step).curve(budgets, mode)


def saturation_budget(rows: list[dict], key: str = "regret_fraction", tol: float = 1e-9) -> float:
    """First budget whose ``key`` reaches the curve's final value."""
    final = rows[-1][key]
    return next(r["B"] for r in rows if r[key] >= final - tol)


def curve_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for r in rows:
        w.writerow(["" if r[k] is None else repr(float(r[k])) for k in CURVE_HEADER])
    return buf.getvalue()
