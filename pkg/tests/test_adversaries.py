import math

import numpy as np
import pytest

from helpers import default_instance, default_model, random_policy, single_state_model
from omdpsim import (
    AdversaryMixture,
    AdversaryState,
    ConfigurationError,
    LossSet,
    OccupancyMeasure,
    adversary_external_regret,
    anytime_step_schedule,
    best_response_adversary_step,
    fixed_horizon_step_schedule,
    loss_set_from_json,
    loss_set_to_json,
    mwu_adversary_step,
    occupancy_of_policy,
    realized_loss,
    solve_game,
    vertex_payoffs,
)
from omdpsim.harness import AgentConfig, MetricsConfig, RunConfig, run_loop


def scalar_loss_set(values):
    """Single-state single-action vertices whose payoffs equal the values."""
    return LossSet(np.array(values, dtype=float).reshape(-1, 1, 1))


def unit_feedback():
    return OccupancyMeasure(np.array([[1.0]]))


# ---------------------------------------------------------------------------
# mwu_adversary_step
# ---------------------------------------------------------------------------


def test_mwu_step_equal_payoffs_leaves_mixture():
    losses = scalar_loss_set([0.4, 0.4, 0.4])
    state = AdversaryState(AdversaryMixture.uniform(3), 1, anytime_step_schedule(3))
    after = mwu_adversary_step(state, losses, unit_feedback())
    assert np.abs(after.mixture.weights - 1.0 / 3.0).max() <= 1e-15
    assert after.round == 2


def test_mwu_step_hand_evaluated_exponentials():
    # Payoffs (0.2, 0.8) at unit step size tilt the uniform mixture to
    # exp(0.2) : exp(0.8).
    losses = scalar_loss_set([0.2, 0.8])
    state = AdversaryState(AdversaryMixture.uniform(2), 1, lambda t: 1.0)
    after = mwu_adversary_step(state, losses, unit_feedback())
    expected = np.array([math.exp(0.2), math.exp(0.8)])
    expected /= expected.sum()
    assert np.abs(after.mixture.weights - expected).max() <= 1e-15


def test_mwu_step_point_mass_stays():
    losses = scalar_loss_set([0.1, 0.9])
    state = AdversaryState(AdversaryMixture.point_mass(2, 0), 1, lambda t: 0.5)
    after = mwu_adversary_step(state, losses, unit_feedback())
    assert after.mixture.weights.tolist() == [1.0, 0.0]


# ---------------------------------------------------------------------------
# realized_loss
# ---------------------------------------------------------------------------


def test_realized_loss_point_mass_returns_vertex():
    _, losses = default_instance(0)
    mix = AdversaryMixture.point_mass(4, 2)
    assert np.array_equal(realized_loss(mix, losses).loss, losses.vertices[2])


def test_realized_loss_uniform_over_identical_vertices():
    vertex = np.random.default_rng(1).random((2, 2))
    losses = LossSet(np.stack([vertex, vertex]))
    got = realized_loss(AdversaryMixture.uniform(2), losses)
    assert np.abs(got.loss - vertex).max() <= 1e-15


@pytest.mark.parametrize("seed", range(5))
def test_realized_loss_matches_naive_weighted_sum(seed):
    rng = np.random.default_rng(seed)
    _, losses = default_instance(seed)
    w = rng.random(4)
    w /= w.sum()
    naive = sum(w[i] * losses.vertices[i] for i in range(4))
    got = realized_loss(AdversaryMixture(w), losses)
    assert np.abs(got.loss - naive).max() <= 1e-14


# ---------------------------------------------------------------------------
# best_response_adversary_step
# ---------------------------------------------------------------------------


def test_best_response_step_picks_max_payoff():
    losses = scalar_loss_set([0.1, 0.9, 0.4])
    mix = best_response_adversary_step(losses, unit_feedback())
    assert mix.weights.tolist() == [0.0, 1.0, 0.0]


def test_best_response_step_ties_to_lowest_index():
    losses = scalar_loss_set([0.5, 0.5, 0.5])
    mix = best_response_adversary_step(losses, unit_feedback())
    assert mix.weights.tolist() == [1.0, 0.0, 0.0]


@pytest.mark.parametrize("seed", range(5))
def test_best_response_step_matches_enumeration(seed):
    rng = np.random.default_rng(seed + 3)
    model, losses = default_instance(seed)
    d = occupancy_of_policy(model, random_policy(rng, 3, 3))
    payoffs = [float(np.sum(losses.vertices[i] * d.mass)) for i in range(4)]
    expected = max(range(4), key=lambda i: (payoffs[i], -i))
    mix = best_response_adversary_step(losses, d)
    assert int(mix.weights.argmax()) == expected


# ---------------------------------------------------------------------------
# adversary_external_regret
# ---------------------------------------------------------------------------


def test_external_regret_empty_history():
    _, losses = default_instance(0)
    assert adversary_external_regret([], losses) == 0.0


def test_external_regret_single_best_round():
    losses = scalar_loss_set([0.2, 0.8])
    history = [(AdversaryMixture.point_mass(2, 1), unit_feedback())]
    assert adversary_external_regret(history, losses) == pytest.approx(0.0, abs=1e-15)


def test_external_regret_mwu_meets_bound():
    # Anytime MWU against one fixed occupancy for 5000 rounds.
    model, losses = default_instance(1)
    d = occupancy_of_policy(model, random_policy(np.random.default_rng(8), 3, 3))
    horizon = 5000
    schedule = anytime_step_schedule(4)
    state = AdversaryState(AdversaryMixture.uniform(4), 1, schedule)
    history = []
    for _ in range(horizon):
        history.append((state.mixture, d))
        state = mwu_adversary_step(state, losses, d)
    bound = math.sqrt(horizon * math.log(4) / 2.0)
    regret = adversary_external_regret(history, losses)
    assert regret <= bound * 1.05
    assert regret >= 0.0


def test_mwu_slow_change_bound():
    model, losses = default_instance(2)
    d = occupancy_of_policy(model, random_policy(np.random.default_rng(5), 3, 3))
    schedule = anytime_step_schedule(4)
    state = AdversaryState(AdversaryMixture.uniform(4), 1, schedule)
    for t in range(1, 300):
        after = mwu_adversary_step(state, losses, d)
        step = schedule(t)
        assert np.abs(after.mixture.weights - state.mixture.weights).sum() <= 2.0 * step
        state = after


def test_fixed_policy_vs_mwu_meets_value_floor():
    # A fixed policy collects at least T v - sqrt(T ln L / 2) in total
    # stationary loss once the adversary adapts.
    config = RunConfig(
        seed=3,
        horizon=4000,
        agent=AgentConfig(kind="fixed", fixed_actions=(0, 2, 1)),
        metrics=MetricsConfig(regret=False, eps_stride=4000),
    )
    result = run_loop(config)
    v = float(result.arrays["eq_value"])
    total = float(result.arrays["stat_loss"].sum())
    assert total >= 4000 * v - math.sqrt(4000 * math.log(4) / 2.0)


# ---------------------------------------------------------------------------
# Step schedules
# ---------------------------------------------------------------------------


def test_anytime_schedule_decreasing_and_capped():
    sched = anytime_step_schedule(4, cap=1.0 / 3.0)
    rates = [sched(t) for t in range(1, 200)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert max(rates) <= 1.0 / 3.0
    uncapped = anytime_step_schedule(4)
    assert uncapped(1) == pytest.approx(math.sqrt(8 * math.log(4)))


def test_fixed_horizon_schedule_is_constant():
    sched = fixed_horizon_step_schedule(4, 1000)
    assert sched(1) == sched(999) == pytest.approx(math.sqrt(8 * math.log(4) / 1000))
    with pytest.raises(ConfigurationError):
        fixed_horizon_step_schedule(4, 0)


def test_single_vertex_schedule_is_degenerate():
    assert anytime_step_schedule(1)(1) == 0.0


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_loss_set_json_roundtrip():
    _, losses = default_instance(4)
    clone = loss_set_from_json(loss_set_to_json(losses), 3, 3)
    assert np.array_equal(clone.vertices, losses.vertices)


def test_loss_set_json_rejects_bad_rows():
    with pytest.raises(ConfigurationError):
        loss_set_from_json('{"losses": [[0.1, 0.2]]}', 3, 3)
    with pytest.raises(ConfigurationError):
        loss_set_from_json('{"nope": 1}', 3, 3)


def test_loss_set_rejects_out_of_range():
    with pytest.raises(ConfigurationError):
        LossSet(np.array([[[0.2, 1.4]]]))


def test_mixture_must_be_simplex():
    with pytest.raises(ConfigurationError):
        AdversaryMixture(np.array([0.6, 0.6]))
