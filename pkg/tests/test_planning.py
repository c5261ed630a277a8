import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdpoison.mdp import TabularMdp, evaluate_policy_exact, optimal_policy_fixed_kernel
from rdpoison.planning import (
    EnumerationTooLarge,
    KernelEnsemble,
    PolicyValueTable,
    SweepEvaluator,
    check_weights,
    enumerate_policies,
    exhaustive_expected_value_maximizer,
    exhaustive_regret_optimal_policy,
    expected_values,
    extended_policy_iteration,
    policy_index,
    random_policy_value_surface,
)

from conftest import random_kernel, random_mdp, seeds
from oracles import det_probs, optimal_values, value_iteration_policy

TABLE2 = {(0, 0): (1.41, 5.89), (0, 1): (4.65, 5.17), (1, 0): (4.65, 5.17), (1, 1): (1.41, 5.89)}
SWEEP = SweepEvaluator(0.1)


def random_ensemble(rng, S, A, K):
    kernels = np.array([random_kernel(rng, A, S, sparsity=0.4) for _ in range(K)])
    return KernelEnsemble(kernels, rng.dirichlet(np.ones(K)))


def test_weights_and_ensemble_validation():
    with pytest.raises(ValueError):
        check_weights([0.5, 0.6], 2)
    with pytest.raises(ValueError):
        check_weights([1.0], 2)
    with pytest.raises(ValueError):
        KernelEnsemble(np.zeros((0, 1, 2, 2)), [])
    ens = KernelEnsemble(np.array([np.eye(2)[None]] * 2), [0.25, 0.75])
    back = KernelEnsemble.from_dict(ens.to_dict())
    assert np.array_equal(back.kernels, ens.kernels) and np.array_equal(back.prior, ens.prior)
    with pytest.raises(ValueError):
        ens.check_mdp(TabularMdp(np.zeros((3, 1, 3)), 0.5))


def test_enumeration_order_and_guard():
    pols = enumerate_policies(3, 2)
    assert pols[0] == (0, 0, 0) and pols[1] == (0, 0, 1) and len(pols) == 8
    assert all(policy_index(p, 2) == i for i, p in enumerate(pols))
    with pytest.raises(EnumerationTooLarge, match="10000000"):
        enumerate_policies(24, 2)


def test_table2(two_state):
    for pol, expected in TABLE2.items():
        ev = expected_values(two_state.mdp, two_state.ensemble, [0.5, 0.5], pol)
        assert np.allclose(ev, expected, atol=0.01)


def test_table2_closed_form(two_state):
    # by hand: pi=(a,a) under X1 alternates 0,1; under X2 it stays put
    v1 = evaluate_policy_exact(two_state.mdp, two_state.ensemble.kernels[0], (0, 0))
    v2 = evaluate_policy_exact(two_state.mdp, two_state.ensemble.kernels[1], (0, 0))
    assert np.allclose(v1, [(0.15 + 0.9 * 0.3) / 0.19, (0.3 + 0.9 * 0.15) / 0.19])
    assert np.allclose(v2, [0.06 / 0.1, 0.95 / 0.1])


def test_point_mass_and_identical_kernels(two_state, cycle):
    for env in (two_state, cycle):
        for i, k in enumerate(env.ensemble.kernels):
            w = np.eye(len(env.ensemble))[i]
            assert np.allclose(expected_values(env.mdp, env.ensemble, w, (0,) * env.mdp.num_states),
                               evaluate_policy_exact(env.mdp, k, (0,) * env.mdp.num_states))
            rep = exhaustive_regret_optimal_policy(env.mdp, env.ensemble, w)
            assert rep.policy == optimal_policy_fixed_kernel(env.mdp, k)[0]
            assert rep.objective == pytest.approx(0.0, abs=1e-12)
    k = cycle.ensemble.kernels[0]
    twin = KernelEnsemble(np.array([k, k]), [0.5, 0.5])
    assert exhaustive_regret_optimal_policy(cycle.mdp, twin, [0.5, 0.5]).objective == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(expected_values(cycle.mdp, twin, [0.5, 0.5], (1, 1, 0)), evaluate_policy_exact(cycle.mdp, k, (1, 1, 0)))


def test_plan_report_mixture_consistency(cycle):
    rep = exhaustive_regret_optimal_policy(cycle.mdp, cycle.ensemble, [0.3, 0.7])
    assert np.allclose(rep.expected_values, np.array([0.3, 0.7]) @ rep.per_kernel_values, atol=1e-10)
    assert rep.to_dict()["objective_name"] == "mean_sup_gap"


def test_two_state_has_no_common_expected_value_optimum(two_state):
    rep = exhaustive_expected_value_maximizer(two_state.mdp, two_state.ensemble, [0.5, 0.5])
    assert rep.argmax_sets[0] == [(0, 1), (1, 0)]
    assert rep.argmax_sets[1] == [(0, 0), (1, 1)]
    assert rep.exists_common_optimum is False


def test_single_kernel_always_has_common_optimum():
    rng = np.random.default_rng(5)
    for _ in range(10):
        mdp = random_mdp(rng, 3, 2)
        ens = KernelEnsemble(random_kernel(rng, 2, 3)[None], [1.0])
        assert exhaustive_expected_value_maximizer(mdp, ens, [1.0]).exists_common_optimum


def test_three_state_common_optimum_by_enumeration(cycle):
    exact = exhaustive_expected_value_maximizer(cycle.mdp, cycle.ensemble, [0.5, 0.5])
    swept = exhaustive_expected_value_maximizer(cycle.mdp, cycle.ensemble, [0.5, 0.5], SWEEP)
    assert len(exact.policies) == 27
    assert exact.exists_common_optimum is False
    assert swept.common == [(0, 0, 2)]


def test_thm51_trace(cycle):
    trace = extended_policy_iteration(cycle.mdp, cycle.ensemble, [0.5, 0.5], (0, 1, 2), evaluator=SWEEP)
    assert trace.converged and trace.policy == (0, 1, 2) and len(trace.steps) == 1
    step = trace.steps[0]
    assert np.allclose(step.per_kernel_values, [[7.858, 7.858, 8.658], [0.911, 0.911, 1.02]], atol=5e-3)
    table8 = [[4.43, 4.02, 4.10], [4.08, 4.43, 4.01], [4.05, 4.47, 4.88]]
    assert np.allclose(step.mixed_q, table8, atol=0.01)
    assert trace.to_dict()["steps"][0]["policy"] == [0, 1, 2]


def test_thm51_stall_also_holds_with_exact_evaluation(cycle):
    trace = extended_policy_iteration(cycle.mdp, cycle.ensemble, [0.5, 0.5], (0, 1, 2))
    assert trace.policy == (0, 1, 2)


def test_regret_planner_objectives(cycle):
    table = PolicyValueTable.build(cycle.mdp, cycle.ensemble, SWEEP)
    mean_sup = exhaustive_regret_optimal_policy(cycle.mdp, cycle.ensemble, [0.5, 0.5], SWEEP, "mean_sup_gap", table)
    sup_mean = exhaustive_regret_optimal_policy(cycle.mdp, cycle.ensemble, [0.5, 0.5], SWEEP, "sup_mean_gap", table)
    assert mean_sup.policy == (0, 1, 2)
    assert sup_mean.policy == (0, 0, 2)
    with pytest.raises(ValueError):
        table.objectives([0.5, 0.5], "nope")


@settings(max_examples=30)
@given(seeds, st.integers(1, 3))
def test_regret_planner_matches_brute_force(seed, K):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 3, 2)
    ens = random_ensemble(rng, 3, 2, K)
    w = rng.dirichlet(np.ones(K))
    rep = exhaustive_regret_optimal_policy(mdp, ens, w)
    v_star = [optimal_values(mdp.reward, k, mdp.discount)[0] for k in ens.kernels]
    scores = {}
    for pol in itertools.product(range(2), repeat=3):
        vals = [value_iteration_policy(mdp.reward, k, det_probs(pol, 2), mdp.discount) for k in ens.kernels]
        scores[pol] = sum(w[i] * np.abs(v_star[i] - vals[i]).max() for i in range(K))
    best = min(scores.values())
    assert rep.objective == pytest.approx(best, abs=1e-8)
    assert rep.objective >= 0
    assert scores[rep.policy] <= best + 1e-8


@settings(max_examples=40)
@given(seeds)
def test_zero_objective_iff_shared_optimum(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 3, 2)
    ens = random_ensemble(rng, 3, 2, 2)
    table = PolicyValueTable.build(mdp, ens)
    rep = exhaustive_regret_optimal_policy(mdp, ens, ens.prior, table=table)
    shared = any(np.all(table.sup_gaps[i][ens.prior > 0] <= 1e-10) for i in range(len(table.policies)))
    assert (rep.objective <= 1e-10) == shared


def test_extended_pi_reduces_to_classical_pi():
    rng = np.random.default_rng(11)
    for _ in range(100):
        S, A = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        mdp = random_mdp(rng, S, A)
        k = random_kernel(rng, A, S, sparsity=0.3)
        ens = KernelEnsemble(k[None], [1.0])
        start = tuple(int(a) for a in rng.integers(A, size=S))
        trace = extended_policy_iteration(mdp, ens, [1.0], start, max_iters=200)
        pol, v = optimal_policy_fixed_kernel(mdp, k)
        assert trace.converged
        assert np.allclose(evaluate_policy_exact(mdp, k, trace.policy), v, atol=1e-9)
        assert trace.policy == pol


def test_extended_pi_trace_is_constant_after_stop(cycle):
    trace = extended_policy_iteration(cycle.mdp, cycle.ensemble, [0.5, 0.5], (1, 1, 1), evaluator=SWEEP)
    assert trace.converged
    assert trace.steps[-1].policy == trace.policy
    rerun = extended_policy_iteration(cycle.mdp, cycle.ensemble, [0.5, 0.5], trace.policy, evaluator=SWEEP)
    assert [s.policy for s in rerun.steps] == [trace.policy]


def test_extended_pi_agreement_rate_on_random_ensembles(capsys):
    rng = np.random.default_rng(2024)
    agree_regret = agree_ev = 0
    n = 40
    for _ in range(n):
        mdp = random_mdp(rng, 3, 2)
        ens = random_ensemble(rng, 3, 2, 2)
        trace = extended_policy_iteration(mdp, ens, ens.prior, (0, 0, 0))
        agree_regret += trace.policy == exhaustive_regret_optimal_policy(mdp, ens, ens.prior).policy
        agree_ev += trace.policy in exhaustive_expected_value_maximizer(mdp, ens, ens.prior).common
    with capsys.disabled():
        print(f"\nextended PI agreement over {n} ensembles: regret planner {agree_regret}/{n}, expected-value optimum {agree_ev}/{n}")
    assert 0 <= agree_regret <= n


def test_extended_pi_validation(cycle):
    with pytest.raises(ValueError):
        extended_policy_iteration(cycle.mdp, cycle.ensemble, [0.5, 0.5], (0, 1, 2), max_iters=0)
    with pytest.raises(ValueError):
        extended_policy_iteration(cycle.mdp, cycle.ensemble, [0.5, 0.5], (0, 1, 5))


def test_value_surface(two_state):
    surf = random_policy_value_surface(two_state.mdp, two_state.ensemble, [0.5, 0.5], 101)
    assert surf.expected.shape == (101, 101, 2)
    # corners are the deterministic policies: theta = 1 means action a
    for (i, j), pol in {(100, 100): (0, 0), (100, 0): (0, 1), (0, 100): (1, 0), (0, 0): (1, 1)}.items():
        assert np.allclose(surf.expected[i, j], TABLE2[pol], atol=0.01)
    assert surf.argmax[0] == (0.36, 1.0)
    assert surf.argmax[1] == (0.0, 0.0)
    assert surf.common is False
    rows = list(surf.rows())
    assert len(rows) == 101**2 and rows[0][:2] == (0.0, 0.0)


def test_value_surface_point_mass_prior():
    from rdpoison.envs import two_state_env

    env = two_state_env((1.0, 0.0))
    surf = random_policy_value_surface(env.mdp, env.ensemble, (1.0, 0.0), 11)
    assert (10, 0) in surf.argmax_sets[0] & surf.argmax_sets[1]
    assert surf.common


def test_value_surface_shape_errors(cycle, two_state):
    with pytest.raises(ValueError):
        random_policy_value_surface(cycle.mdp, cycle.ensemble, [0.5, 0.5])
    with pytest.raises(ValueError):
        random_policy_value_surface(two_state.mdp, two_state.ensemble, [0.5, 0.5], 1)
