"""Golden-claim battery: every reference number the toolkit reproduces, with
measured vs expected values and a pass/fail verdict."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attack, envs, info, planning, victim
from .mdp import expected_reward

SWEEP = planning.SweepEvaluator(0.1)
UNIFORM2 = np.array([0.5, 0.5])
HALF = np.full((2, 2), 0.5)

TABLE2 = {(0, 0): (1.41, 5.89), (0, 1): (4.65, 5.17), (1, 0): (4.65, 5.17), (1, 1): (1.41, 5.89)}
V_X1 = (7.858, 7.858, 8.658)
V_X2 = (0.911, 0.911, 1.02)
TABLE8 = ((4.43, 4.02, 4.10), (4.08, 4.43, 4.01), (4.05, 4.47, 4.88))
PI_X1 = (0, 1, 2)
PI_X2 = (2, 0, 1)
PI_ATTACKED = (0, 0, 2)
REGRET = 3.84
FRACTION = 0.443
SAT_REGRET = 0.711
SAT_MI = 0.7285


@dataclass
class Claim:
    group: str
    name: str
    expected: str
    measured: str
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  [{self.group}] {self.name}: measured {self.measured}, expected {self.expected}"


def _close(group, name, measured, expected, tol) -> Claim:
    m, e = np.asarray(measured, dtype=float), np.asarray(expected, dtype=float)
    ok = bool(np.all(np.abs(m - e) <= tol))
    fmt = lambda x: np.array2string(x, precision=4, floatmode="maxprec", max_line_width=10**6).replace("\n", "") if x.ndim else f"{float(x):.4f}"
    return Claim(group, name, f"{fmt(e)} +/- {tol:g}", fmt(m), ok)


def _equal(group, name, measured, expected) -> Claim:
    return Claim(group, name, str(expected), str(measured), measured == expected)


def _true(group, name, cond: bool, measured="") -> Claim:
    return Claim(group, name, "true", str(measured) if measured != "" else str(bool(cond)), bool(cond))


# -- groups -----------------------------------------------------------------------


def claims_table2(params: dict):
    env = envs.two_state_env()
    if "reward" in params:
        env = envs.EnvironmentSpec(env.name, planning.TabularMdp.from_state_reward(params["reward"], 2, envs.GAMMA), env.ensemble)
    for pol, expected in TABLE2.items():
        ev = planning.expected_values(env.mdp, env.ensemble, UNIFORM2, pol)
        yield _close("table2", f"E V for policy {pol}", ev, expected, 0.01)
    mx = planning.exhaustive_expected_value_maximizer(env.mdp, env.ensemble, UNIFORM2)
    yield _equal("table2", "state-0 argmax set", mx.argmax_sets[0], [(0, 1), (1, 0)])
    yield _equal("table2", "state-1 argmax set", mx.argmax_sets[1], [(0, 0), (1, 1)])
    yield _equal("table2", "common expected-value optimum exists", mx.exists_common_optimum, False)


def claims_thm51(params: dict):
    env = envs.three_state_cycle_env(params.get("reward"))
    mdp, ens = env.mdp, env.ensemble
    trace = planning.extended_policy_iteration(mdp, ens, UNIFORM2, PI_X1, evaluator=SWEEP)
    first = trace.steps[0]
    yield _close("thm51", "V^pi0 under X1", first.per_kernel_values[0], V_X1, 0.005)
    yield _close("thm51", "V^pi0 under X2", first.per_kernel_values[1], V_X2, 0.005)
    yield _close("thm51", "mixed Q table", first.mixed_q, TABLE8, 0.01)
    yield _equal("thm51", "optimal policy of X1", planning.optimal_policy_fixed_kernel(mdp, ens.kernels[0])[0], PI_X1)
    yield _equal("thm51", "optimal policy of X2", planning.optimal_policy_fixed_kernel(mdp, ens.kernels[1])[0], PI_X2)
    yield _equal("thm51", "extended PI fixed point from pi*(X1)", trace.policy, PI_X1)
    table = planning.PolicyValueTable.build(mdp, ens, SWEEP)
    mx = planning.exhaustive_expected_value_maximizer(mdp, ens, UNIFORM2, SWEEP, table)
    yield _equal("thm51", "exhaustive expected-value optimum", mx.common, [PI_ATTACKED])
    yield _true("thm51", "extended PI misses the exhaustive optimum", trace.policy not in mx.common)


def claims_attack(params: dict):
    env = envs.three_state_cycle_env(params.get("reward"))
    model = attack.RegretModel.build(env.mdp, env.ensemble, SWEEP)
    rep = model.report(info.JointChannel(UNIFORM2, HALF))
    yield _close("attack", "regret under the all-1/2 channel", rep.regret, REGRET, 0.05)
    yield _close("attack", "regret fraction", rep.regret_fraction, FRACTION, 0.01)
    yield _true("attack", "victim policy independent of the observation", rep.victim_policies[0] == rep.victim_policies[1], rep.victim_policies)
    clean = model.report(info.JointChannel(UNIFORM2, np.eye(2)))
    yield _close("attack", "regret without attack", clean.regret, 0.0, 1e-12)


def claims_fano(params: dict):
    env = envs.three_state_cycle_env(params.get("reward"))
    model = attack.RegretModel.build(env.mdp, env.ensemble, SWEEP)
    rep = model.report(info.JointChannel(UNIFORM2, HALF))
    cert = rep.fano
    yield _close("fano", "MAP error Pe", cert.pe_map, 0.5, 1e-12)
    yield _close("fano", "I(X;Y) bits", cert.mi, 0.0, 1e-12)
    yield _close("fano", "H(X|Y) bits", cert.hxy, 1.0, 1e-12)
    yield _true("fano", "Fano inequality H(Pe)+Pe log|Omega| >= H(X|Y)", cert.bound_lhs >= cert.hxy - 1e-9, f"{cert.bound_lhs:.4f} >= {cert.hxy:.4f}")
    yield _true("fano", "regret >= eps * Pe", rep.regret >= cert.regret_lower - 1e-9, f"{rep.regret:.4f} >= {cert.regret_lower:.4f}")
    ident = info.fano_certificate(info.JointChannel(UNIFORM2, np.eye(2)))
    yield _close("fano", "identity channel Pe", ident.pe_map, 0.0, 1e-12)


def claims_budget(params: dict):
    env = envs.three_state_cycle_env(params.get("reward"))
    model = attack.RegretModel.build(env.mdp, env.ensemble, SWEEP)
    step = params.get("grid_step", 0.005)
    search = attack.BudgetSearch(model, attack.two_kernel_cost(params.get("c1", 1.5), params.get("c2", 2.0)), step)
    budgets = np.round(np.arange(0.0, 0.9 + 1e-9, 0.001), 6)
    rows = search.curve(budgets)
    reg = np.array([r["regret"] for r in rows])
    yield _true("budget", "max regret nondecreasing in B", np.all(np.diff(reg) >= -1e-12))
    yield _close("budget", "max-regret saturation budget", attack.saturation_budget(rows), SAT_REGRET, 0.01)
    yield _close("budget", "saturated regret fraction", rows[-1]["regret_fraction"], FRACTION, 0.01)
    mi_rows = search.curve(budgets, "min_mi")
    mi = np.array([r["mi_bits"] for r in mi_rows])
    yield _true("budget", "min MI nonincreasing in B", np.all(np.diff(mi) <= 1e-12))
    yield _close("budget", "min MI at B=0", mi[0], 1.0, 1e-12)
    yield _close("budget", "max min-MI for B >= 0.875", mi[budgets >= 0.875].max(), 0.0, 1e-12)
    yield _close("budget", "min-MI regret saturation budget", attack.saturation_budget(mi_rows), SAT_MI, 0.01)


def claims_surface(params: dict):
    env = envs.two_state_env()
    surf = planning.random_policy_value_surface(env.mdp, env.ensemble, UNIFORM2, params.get("grid_resolution", 101))
    cell = surf.thetas[1] - surf.thetas[0]
    # the reference point (1, 0.37) lists the coordinates in (theta1, theta0) order
    yield _close("surface", "state-0 argmax (theta1, theta0)", surf.argmax[0][::-1], (1.0, 0.37), cell + 1e-9)
    yield _close("surface", "state-1 argmax (theta0, theta1)", surf.argmax[1], (0.0, 0.0), cell + 1e-9)
    yield _equal("surface", "argmax sets intersect", surf.common, False)
    det = envs.two_state_env((1.0, 0.0))
    s2 = planning.random_policy_value_surface(det.mdp, det.ensemble, (1.0, 0.0), params.get("grid_resolution", 101))
    corners = {(0, 0), (0, len(s2.thetas) - 1), (len(s2.thetas) - 1, 0), (len(s2.thetas) - 1,) * 2}
    yield _true("surface", "point-mass prior: argmax sets share a deterministic corner", bool(s2.argmax_sets[0] & s2.argmax_sets[1] & corners))


def claims_env(params: dict):
    env = envs.three_state_cycle_env()
    x1, x2 = env.ensemble.kernels
    yield _true("env", "X2 is the action permutation of X1", np.array_equal(x2, x1[[1, 2, 0]]))
    yield _true(
        "env", "equal best immediate reward under X1 and X2",
        np.allclose(expected_reward(env.mdp, x1).max(axis=1), expected_reward(env.mdp, x2).max(axis=1)),
    )
    k = envs.block_world_kernel(0.8)
    grid = envs.GridWorldSpec()
    s = grid.state((2, 0))
    east = {grid.state((2, 1)): 0.8, grid.state((1, 0)): 0.1, s: 0.1}
    yield _true("env", "block world slip: east 0.8, north 0.1, south (wall) 0.1", all(abs(k[0, s, t] - p) < 1e-12 for t, p in east.items()))
    yield _equal("env", "permuted reward maximum at (2, right)", tuple(int(i) for i in np.unravel_index(np.argmax(envs.PERM_REWARD), (3, 3))), (2, 1))


def claims_blockworld(params: dict):
    grid = envs.GridWorldSpec()
    env = envs.block_world_ensemble()
    res = victim.run_rate_distortion_model_free(
        env, HALF, params.get("runs", 20), params.get("seed", 0), params.get("episodes", 50_000), 100,
        start_states=grid.open_states, terminal_states=grid.terminal_states,
    )
    gap = res.mean_regret - res.mean_baseline
    yield _true("blockworld", "random attack regret exceeds the reversible baseline at every start", bool(np.all(gap > 0)), f"min gap {gap.min():.4f}")
    for alpha, frac in zip((0.8, 0.2), res.sanity):
        yield _true("blockworld", f"Q-learning matches the planner for alpha={alpha} on >= 95% of runs", frac >= 0.95, f"{100 * frac:.0f}%")


def claims_permutation(params: dict):
    env = envs.permutation_family_env()
    ex = victim.run_permutation_attack(env, range(params.get("seeds", 100)))
    yield _true("permutation", "posterior uniform within TV 0.1", float(ex.final_tv.max()) <= 0.1, f"max TV {ex.final_tv.max():.3g}")
    ratio = ex.mean_aware_regret / ex.zero_info_regret
    yield _true("permutation", "regret >= 50% of the zero-information regret", ratio >= 0.5, f"ratio {ratio:.3f}")


GROUPS = {
    "table2": claims_table2,
    "thm51": claims_thm51,
    "attack": claims_attack,
    "fano": claims_fano,
    "budget": claims_budget,
    "surface": claims_surface,
    "env": claims_env,
    "blockworld": claims_blockworld,
    "permutation": claims_permutation,
}


def verify_all(groups=None, overrides: dict | None = None) -> list[Claim]:
    """Run the selected claim groups; ``overrides`` maps group name to parameters."""
    overrides = overrides or {}
    unknown = set(groups or ()) - set(GROUPS)
    if unknown:
        raise KeyError(f"unknown claim groups {sorted(unknown)}; choose from {sorted(GROUPS)}")
    claims = []
    for name, fn in GROUPS.items():
        if groups and name not in groups:
            continue
        try:
            claims.extend(fn(overrides.get(name, {})))
        except Exception as exc:  # a crashing group is a failed claim, not a crashed battery
            claims.append(Claim(name, "group raised", "no error", f"{type(exc).__name__}: {exc}", False))
    return claims
