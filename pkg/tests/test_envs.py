import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdpoison.envs import (
    CYCLE_ACTIONS,
    ENVIRONMENTS,
    PERM_BASE,
    EnvironmentSpec,
    GridWorldSpec,
    block_world_ensemble,
    block_world_env,
    block_world_kernel,
    compose,
    conjugate_kernel,
    permutation_family_env,
    permutation_matrix,
    state_permutations,
    three_state_cycle_env,
    two_state_env,
)
from rdpoison.mdp import check_kernel, expected_reward

perm3 = st.permutations([0, 1, 2]).map(tuple)


@pytest.mark.parametrize("name", sorted(ENVIRONMENTS))
def test_kernels_are_row_stochastic_and_round_trip(name):
    env = ENVIRONMENTS[name]()
    for k in env.ensemble.kernels:
        check_kernel(k, env.mdp)
        assert np.allclose(k.sum(axis=2), 1.0, atol=1e-12)
    text = json.dumps(env.to_dict())
    back = EnvironmentSpec.from_dict(json.loads(text))
    assert np.array_equal(back.mdp.reward, env.mdp.reward)
    assert np.array_equal(back.ensemble.kernels, env.ensemble.kernels)
    assert np.array_equal(back.ensemble.prior, env.ensemble.prior)
    assert json.dumps(back.to_dict()) == text


def test_two_state_prior_and_kernels():
    env = two_state_env((0.3, 0.7))
    assert env.ensemble.prior.tolist() == [0.3, 0.7]
    x1, x2 = env.ensemble.kernels
    assert np.array_equal(x1[0], x2[1]) and np.array_equal(x1[1], x2[0])
    with pytest.raises(ValueError):
        two_state_env((0.3, 0.3))


def test_cycle_actions_are_relabelled():
    x1, x2 = three_state_cycle_env().ensemble.kernels
    left, right, stay = (CYCLE_ACTIONS.index(a) for a in ("left", "right", "stay"))
    assert np.array_equal(x2[left], x1[right])
    assert np.array_equal(x2[right], x1[stay])
    assert np.array_equal(x2[stay], x1[left])
    # X1 moves left from 1 to 0 and right from 0 to 1
    assert x1[left, 1, 0] == 1.0 and x1[right, 0, 1] == 1.0


def test_cycle_custom_reward():
    env = three_state_cycle_env(np.full((3, 3), 0.5))
    assert np.all(env.mdp.reward == 0.5)


def test_block_world_layout():
    spec = GridWorldSpec()
    assert len(spec.open_states) == 9
    assert spec.terminal_states == [3, 7] and spec.wall_states == [5]
    with pytest.raises(ValueError):
        GridWorldSpec(walls=frozenset({(0, 3)}))
    with pytest.raises(ValueError):
        GridWorldSpec(start=(1, 1))


def test_block_world_slip():
    spec = GridWorldSpec()
    k = block_world_kernel(0.8, spec)
    east = 0
    s = spec.state((2, 0))
    # east moves to (2,1); north to (1,0); south bumps the boundary
    assert k[east, s, spec.state((2, 1))] == pytest.approx(0.8)
    assert k[east, s, spec.state((1, 0))] == pytest.approx(0.1)
    assert k[east, s, s] == pytest.approx(0.1)
    # north from (2,1) runs into the wall and stays
    assert k[2, spec.state((2, 1)), spec.state((2, 1))] == pytest.approx(0.8)
    det = block_world_kernel(1.0, spec)
    assert set(np.unique(det)) <= {0.0, 1.0}
    for t in spec.terminal_states + spec.wall_states:
        assert np.all(k[:, t, t] == 1.0)
    with pytest.raises(ValueError):
        block_world_kernel(1.2)


def test_block_world_rewards():
    env = block_world_env(0.8)
    spec = GridWorldSpec()
    r = env.mdp.reward
    assert r[spec.state((0, 2)), 0, spec.state((0, 3))] == 1.0
    assert r[spec.state((2, 3)), 2, spec.state((1, 3))] == -1.0
    assert r[spec.state((2, 0)), 0, spec.state((2, 1))] == pytest.approx(-0.04)
    assert np.all(r[spec.terminal_states] == 0.0)


def test_block_world_ensemble_prior():
    env = block_world_ensemble((0.8, 0.5, 0.2))
    assert env.ensemble.prior.tolist() == pytest.approx([1 / 3] * 3)
    assert len(env.ensemble.kernels) == 3


def test_permutation_family_members():
    env = permutation_family_env()
    ks = env.ensemble.kernels
    assert len(ks) == 6
    assert np.array_equal(ks[0], PERM_BASE)
    assert len({k.tobytes() for k in ks}) == 6
    assert state_permutations(3)[0] == (0, 1, 2)


def test_permutation_rewards():
    env = permutation_family_env()
    rbar = expected_reward(env.mdp, env.ensemble.kernels[0])
    right = CYCLE_ACTIONS.index("right")
    assert rbar[2, right] == pytest.approx(3.3)
    assert rbar.max() == pytest.approx(3.3)
    # every kernel sees the same best immediate reward, since rewards depend on (s, a) only
    for k in env.ensemble.kernels:
        assert expected_reward(env.mdp, k).max() == pytest.approx(3.3)


@given(perm3)
def test_permutation_matrix_relabels(perm):
    P = permutation_matrix(perm)
    for s in range(3):
        assert np.array_equal(P @ np.eye(3)[s], np.eye(3)[perm[s]])
    assert np.array_equal(P @ P.T, np.eye(3))


@given(perm3, perm3)
def test_conjugation_is_a_group_action(p, q):
    assert np.allclose(conjugate_kernel(conjugate_kernel(PERM_BASE, q), p), conjugate_kernel(PERM_BASE, compose(p, q)))
    k = conjugate_kernel(PERM_BASE, p)
    assert np.allclose(k.sum(axis=2), 1.0)
    # entry-wise: the probability of s -> t becomes that of perm[s] -> perm[t]
    for s in range(3):
        for t in range(3):
            assert k[:, p[s], p[t]].tolist() == PERM_BASE[:, s, t].tolist()


def test_identity_conjugation():
    assert np.array_equal(conjugate_kernel(PERM_BASE, (0, 1, 2)), PERM_BASE)
