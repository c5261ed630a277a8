import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from rdpoison.mdp import TabularMdp

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_kernel(rng, A, S, sparsity=0.0):
    k = rng.random((A, S, S))
    if sparsity:
        k[rng.random((A, S, S)) < sparsity] = 0.0
        k[:, np.arange(S), rng.integers(S, size=S)] += 0.1
    return k / k.sum(axis=2, keepdims=True)


def random_mdp(rng, S, A, gamma=None):
    gamma = rng.uniform(0.0, 0.95) if gamma is None else gamma
    return TabularMdp(rng.random((S, A, S)), gamma)


seeds = st.integers(0, 2**32 - 1)
sizes = st.integers(1, 6)


@st.composite
def mdp_and_kernel(draw, max_s=6, max_a=6):
    rng = np.random.default_rng(draw(seeds))
    S, A = draw(st.integers(1, max_s)), draw(st.integers(1, max_a))
    return random_mdp(rng, S, A), random_kernel(rng, A, S, sparsity=draw(st.sampled_from([0.0, 0.5])))


@st.composite
def channels(draw, max_x=5, max_y=5):
    rng = np.random.default_rng(draw(seeds))
    nx, ny = draw(st.integers(1, max_x)), draw(st.integers(1, max_y))
    prior = rng.dirichlet(np.full(nx, 0.5))
    lik = rng.dirichlet(np.full(ny, 0.5), size=nx)
    if draw(st.booleans()):
        lik[rng.random((nx, ny)) < 0.3] = 0.0
        lik[np.arange(nx), rng.integers(ny, size=nx)] += 0.2
        lik /= lik.sum(axis=1, keepdims=True)
    prior = prior / prior.sum()
    return prior, lik


@pytest.fixture(scope="session")
def cycle():
    from rdpoison.envs import three_state_cycle_env

    return three_state_cycle_env()


@pytest.fixture(scope="session")
def two_state():
    from rdpoison.envs import two_state_env

    return two_state_env()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
