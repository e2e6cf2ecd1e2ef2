import numpy as np
import pytest

from sarsa_delta.mdp import TabularPolicy, make_rng, random_mdp


@pytest.fixture
def rng():
    return make_rng(0)


@pytest.fixture
def small_mdp():
    return random_mdp(5, 2, make_rng(2024))


@pytest.fixture
def uniform(small_mdp):
    return TabularPolicy.uniform(small_mdp.n_states, small_mdp.n_actions)


def random_policy(n_states, n_actions, rng):
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), n_states))
