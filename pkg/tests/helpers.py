"""Shared builders for the test suite."""

import numpy as np

from omdpsim import (
    DeterministicPolicy,
    LossSet,
    LossVector,
    MdpModel,
    StochasticPolicy,
)
from omdpsim.harness import generate_instance, generate_losses, generate_model

DEFAULT_STATES = 3
DEFAULT_ACTIONS = 3
DEFAULT_VERTICES = 4
DEFAULT_MIXING = 0.1


def default_instance(seed):
    """The desk-scale instance family used throughout the suite."""
    return generate_instance(
        seed, DEFAULT_STATES, DEFAULT_ACTIONS, DEFAULT_VERTICES, DEFAULT_MIXING
    )


def default_model(seed):
    return generate_model(seed, DEFAULT_STATES, DEFAULT_ACTIONS, DEFAULT_MIXING)


def default_losses(seed):
    return generate_losses(seed, DEFAULT_STATES, DEFAULT_ACTIONS, DEFAULT_VERTICES)


def random_policy(rng, num_states, num_actions):
    rows = rng.random((num_states, num_actions))
    return StochasticPolicy(rows / rows.sum(axis=1, keepdims=True))


def random_loss(rng, num_states, num_actions):
    return LossVector(rng.random((num_states, num_actions)))


def random_deterministic(rng, num_states, num_actions):
    return DeterministicPolicy(rng.integers(num_actions, size=num_states))


def single_state_model(num_actions):
    """One state; every action loops back to it."""
    return MdpModel(
        num_states=1,
        num_actions=num_actions,
        transition=np.ones((1, num_actions, 1)),
        initial_dist=np.array([1.0]),
    )


def matching_pennies():
    """Single-state two-action game with opposing unit losses."""
    model = single_state_model(2)
    losses = LossSet(np.array([[[1.0, 0.0]], [[0.0, 1.0]]]))
    return model, losses
