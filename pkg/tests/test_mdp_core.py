import json
import math

import numpy as np
import pytest

from helpers import (
    default_instance,
    default_model,
    random_loss,
    random_policy,
    single_state_model,
)
from omdpsim import (
    ConfigurationError,
    DeterministicPolicy,
    ErgodicityError,
    InvalidOccupancyError,
    LossVector,
    MdpModel,
    OccupancyMeasure,
    StochasticPolicy,
    average_loss,
    best_response,
    epsilon_best_response,
    induced_chain,
    mixing_time_bound,
    model_from_json,
    model_to_json,
    occupancy_of_policy,
    policy_of_occupancy,
    propagate_distribution,
    solve_bias,
    stationary_state_dist,
)
from omdpsim.harness import generate_model


def two_state_stay_switch():
    """Two states; action 0 stays put, action 1 jumps to the other state."""
    transition = np.zeros((2, 2, 2))
    transition[0, 0, 0] = transition[1, 0, 1] = 1.0
    transition[0, 1, 1] = transition[1, 1, 0] = 1.0
    return MdpModel(2, 2, transition, np.array([0.5, 0.5]))


# ---------------------------------------------------------------------------
# induced_chain
# ---------------------------------------------------------------------------


def test_induced_chain_single_state():
    model = single_state_model(3)
    policy = StochasticPolicy(np.array([[0.2, 0.5, 0.3]]))
    assert np.allclose(induced_chain(model, policy), [[1.0]])


def test_induced_chain_stay_switch_uniform():
    model = two_state_stay_switch()
    chain = induced_chain(model, StochasticPolicy.uniform(2, 2))
    assert np.allclose(chain, 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_induced_chain_matches_naive_summation(seed):
    model = default_model(seed)
    policy = random_policy(np.random.default_rng(seed + 100), 3, 3)
    naive = np.zeros((3, 3))
    for s in range(3):
        for s2 in range(3):
            for a in range(3):
                naive[s, s2] += policy.action_probs[s, a] * model.transition[s, a, s2]
    assert np.abs(induced_chain(model, policy) - naive).max() <= 1e-14


def test_induced_chain_dimension_mismatch():
    model = default_model(0)
    with pytest.raises(ConfigurationError):
        induced_chain(model, StochasticPolicy.uniform(3, 4))


# ---------------------------------------------------------------------------
# stationary_state_dist
# ---------------------------------------------------------------------------


def test_stationary_symmetric_two_state():
    dist = stationary_state_dist(np.array([[0.9, 0.1], [0.1, 0.9]]))
    assert np.allclose(dist, [0.5, 0.5], atol=1e-13)


def test_stationary_uniform_rows():
    chain = np.full((4, 4), 0.25)
    assert np.allclose(stationary_state_dist(chain), 0.25, atol=1e-13)


def test_stationary_two_state_detailed_balance():
    # d([1]) / d([0]) = p01 / p10, so d = (p10, p01) / (p01 + p10).
    p01, p10 = 0.5, 0.2
    expected = np.array([p10, p01]) / (p01 + p10)
    dist = stationary_state_dist(np.array([[1 - p01, p01], [p10, 1 - p10]]))
    assert np.abs(dist - expected).max() <= 1e-13
    assert np.allclose(expected, [2.0 / 7.0, 5.0 / 7.0])


@pytest.mark.parametrize("seed", range(10))
def test_stationary_residual_certified(seed):
    model = default_model(seed)
    policy = random_policy(np.random.default_rng(seed), 3, 3)
    chain = induced_chain(model, policy)
    dist = stationary_state_dist(chain)
    assert np.abs(dist @ chain - dist).sum() <= 1e-12
    assert abs(dist.sum() - 1.0) <= 1e-12


def test_stationary_rejects_multiple_recurrent_classes():
    with pytest.raises(ErgodicityError):
        stationary_state_dist(np.eye(2))


def test_stationary_rejects_bad_rows():
    with pytest.raises(ConfigurationError):
        stationary_state_dist(np.array([[0.5, 0.4], [0.2, 0.8]]))


# ---------------------------------------------------------------------------
# occupancy_of_policy / policy_of_occupancy
# ---------------------------------------------------------------------------


def test_occupancy_single_state_equals_policy():
    model = single_state_model(3)
    policy = StochasticPolicy(np.array([[0.1, 0.6, 0.3]]))
    occ = occupancy_of_policy(model, policy)
    assert np.abs(occ.mass - policy.action_probs).max() <= 1e-15


def test_occupancy_deterministic_support():
    model = default_model(0)
    policy = DeterministicPolicy(np.array([2, 0, 1])).to_stochastic(3)
    occ = occupancy_of_policy(model, policy)
    chosen = occ.mass[np.arange(3), [2, 0, 1]]
    assert chosen.min() > 0.0
    assert occ.mass.sum() - chosen.sum() == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_occupancy_matches_eigen_oracle(seed):
    model = default_model(seed)
    policy = random_policy(np.random.default_rng(seed + 7), 3, 3)
    chain = induced_chain(model, policy)
    # Independent oracle: left eigenvector of the chain at eigenvalue 1.
    vals, vecs = np.linalg.eig(chain.T)
    lead = np.argmin(np.abs(vals - 1.0))
    ref = np.real(vecs[:, lead])
    ref = ref / ref.sum()
    occ = occupancy_of_policy(model, policy)
    assert np.abs(occ.state_dist() - ref).max() <= 1e-10
    assert occ.flow_residual(model) <= 1e-10
    assert abs(occ.mass.sum() - 1.0) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_policy_occupancy_roundtrip(seed):
    model = default_model(seed)
    policy = random_policy(np.random.default_rng(seed + 21), 3, 3)
    recovered = policy_of_occupancy(model, occupancy_of_policy(model, policy))
    assert np.abs(recovered.action_probs - policy.action_probs).max() <= 1e-10


def test_policy_of_occupancy_single_state_uniform():
    model = single_state_model(4)
    occ = OccupancyMeasure(np.full((1, 4), 0.25))
    assert np.allclose(policy_of_occupancy(model, occ).action_probs, 0.25)


@pytest.mark.parametrize("lam", [0.25, 0.5, 0.75])
def test_policy_of_occupancy_convex_combination(lam):
    model = default_model(3)
    rng = np.random.default_rng(42)
    d1 = occupancy_of_policy(model, random_policy(rng, 3, 3))
    d2 = occupancy_of_policy(model, random_policy(rng, 3, 3))
    mix = OccupancyMeasure(lam * d1.mass + (1 - lam) * d2.mass)
    recovered = policy_of_occupancy(model, mix)
    again = occupancy_of_policy(model, recovered)
    assert np.abs(again.mass - mix.mass).max() <= 1e-8


def test_policy_of_occupancy_rejects_flow_violation():
    model = default_model(0)
    bad = np.zeros((3, 3))
    bad[0, 0] = 1.0  # a point mass is not stationary for this kernel
    with pytest.raises(InvalidOccupancyError):
        policy_of_occupancy(model, OccupancyMeasure(bad))


# ---------------------------------------------------------------------------
# average_loss
# ---------------------------------------------------------------------------


def test_average_loss_extremes():
    model = default_model(1)
    occ = occupancy_of_policy(model, StochasticPolicy.uniform(3, 3))
    assert average_loss(occ, LossVector(np.ones((3, 3)))) == pytest.approx(1.0, abs=1e-12)
    assert average_loss(occ, LossVector(np.zeros((3, 3)))) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_average_loss_matches_naive_sum(seed):
    rng = np.random.default_rng(seed)
    model = default_model(seed)
    occ = occupancy_of_policy(model, random_policy(rng, 3, 3))
    loss = random_loss(rng, 3, 3)
    naive = sum(
        occ.mass[s, a] * loss.loss[s, a] for s in range(3) for a in range(3)
    )
    assert abs(average_loss(occ, loss) - naive) <= 1e-14


# ---------------------------------------------------------------------------
# solve_bias
# ---------------------------------------------------------------------------


def test_bias_constant_loss():
    model = default_model(2)
    policy = random_policy(np.random.default_rng(5), 3, 3)
    sol = solve_bias(model, policy, LossVector(np.full((3, 3), 0.7)))
    assert sol.eta == pytest.approx(0.7, abs=1e-12)
    assert np.abs(sol.bias).max() <= 1e-12
    assert np.abs(sol.q).max() <= 1e-12


def test_bias_single_state():
    model = single_state_model(3)
    policy = StochasticPolicy(np.array([[0.5, 0.25, 0.25]]))
    loss = LossVector(np.array([[0.2, 0.4, 0.8]]))
    eta = 0.5 * 0.2 + 0.25 * 0.4 + 0.25 * 0.8
    sol = solve_bias(model, policy, loss)
    assert sol.eta == pytest.approx(eta, abs=1e-12)
    assert np.abs(sol.q - (loss.loss - eta)).max() <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_bias_invariants_seeded(seed):
    rng = np.random.default_rng(seed + 50)
    model = default_model(seed)
    policy = random_policy(rng, 3, 3)
    loss = random_loss(rng, 3, 3)
    occ = occupancy_of_policy(model, policy)
    sol = solve_bias(model, policy, loss)
    # Bellman residual with bias re-derived from q under the policy.
    bias = (policy.action_probs * sol.q).sum(axis=1)
    backed_up = loss.loss - sol.eta + model.transition @ bias
    assert np.abs(sol.q - backed_up).max() <= 1e-10
    assert abs(float((occ.mass * sol.q).sum())) <= 1e-10
    assert sol.eta == pytest.approx(average_loss(occ, loss), abs=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_bias_matches_truncated_series_oracle(seed):
    rng = np.random.default_rng(seed + 11)
    model = default_model(seed)
    policy = random_policy(rng, 3, 3)
    loss = random_loss(rng, 3, 3)
    cert = mixing_time_bound(model)
    chain = induced_chain(model, policy)
    dist = stationary_state_dist(chain)
    loss_pi = (policy.action_probs * loss.loss).sum(axis=1)
    eta = float(dist @ loss_pi)
    steps = int(math.ceil(50 * max(cert.tau, 1.0)))
    # Oracle: partial sums of expected centered losses from each start pair.
    expected = loss.loss - eta
    reach = model.transition.copy()  # state distribution t steps after (s, a)
    for _ in range(steps):
        expected = expected + (reach @ loss_pi - eta)
        reach = reach @ chain
    sol = solve_bias(model, policy, loss)
    assert np.abs(sol.q - expected).max() <= 1e-6


# ---------------------------------------------------------------------------
# best_response
# ---------------------------------------------------------------------------


def test_best_response_single_state_argmin():
    model = single_state_model(4)
    loss = LossVector(np.array([[0.7, 0.1, 0.5, 0.9]]))
    assert best_response(model, loss).chosen_action.tolist() == [1]


def test_best_response_constant_ties_to_action_zero():
    model = default_model(0)
    loss = LossVector(np.full((3, 3), 0.4))
    assert best_response(model, loss).chosen_action.tolist() == [0, 0, 0]


@pytest.mark.parametrize("seed", range(20))
def test_best_response_matches_enumeration_oracle(seed):
    model, losses = default_instance(seed)
    loss = losses.vertex(0)
    # Oracle: evaluate every deterministic policy directly.
    best = math.inf
    for a0 in range(3):
        for a1 in range(3):
            for a2 in range(3):
                pol = DeterministicPolicy(np.array([a0, a1, a2])).to_stochastic(3)
                best = min(best, average_loss(occupancy_of_policy(model, pol), loss))
    br = best_response(model, loss)
    eta = average_loss(occupancy_of_policy(model, br.to_stochastic(3)), loss)
    assert eta - best <= 1e-10


def test_best_response_poisson_optimality_certificate():
    model, losses = default_instance(3)
    br = best_response(model, losses.vertex(1))
    sol = solve_bias(model, br.to_stochastic(3), losses.vertex(1))
    chosen = sol.q[np.arange(3), br.chosen_action]
    assert np.abs(chosen - sol.q.min(axis=1)).max() <= 1e-10


def test_best_response_constant_shift_invariance():
    model = default_model(4)
    rng = np.random.default_rng(9)
    base = rng.random((3, 3)) * 0.5
    a = best_response(model, LossVector(base))
    b = best_response(model, LossVector(base + 0.5))
    assert np.array_equal(a.chosen_action, b.chosen_action)


def test_best_response_allowed_mask_restricts_actions():
    model, losses = default_instance(5)
    allowed = np.zeros((3, 3), dtype=bool)
    allowed[:, 0] = True
    br = best_response(model, losses.vertex(0), allowed=allowed)
    assert br.chosen_action.tolist() == [0, 0, 0]


# ---------------------------------------------------------------------------
# epsilon_best_response
# ---------------------------------------------------------------------------


def test_eps_best_response_large_eps_is_one_sweep_greedy():
    model = default_model(6)
    rng = np.random.default_rng(13)
    loss = random_loss(rng, 3, 3)
    pol = epsilon_best_response(model, loss, 1.0)
    assert np.array_equal(pol.chosen_action, loss.loss.argmin(axis=1))


@pytest.mark.parametrize("seed", range(5))
def test_eps_best_response_tiny_eps_matches_exact(seed):
    model, losses = default_instance(seed)
    loss = losses.vertex(2)
    exact = best_response(model, loss)
    approx = epsilon_best_response(model, loss, 1e-9)
    eta_exact = average_loss(occupancy_of_policy(model, exact.to_stochastic(3)), loss)
    eta_approx = average_loss(occupancy_of_policy(model, approx.to_stochastic(3)), loss)
    assert abs(eta_exact - eta_approx) <= 1e-8


def test_eps_best_response_single_state_example():
    model = single_state_model(3)
    loss = LossVector(np.array([[0.3, 0.32, 0.9]]))
    pol = epsilon_best_response(model, loss, 0.05)
    action = int(pol.chosen_action[0])
    assert action in (0, 1)
    assert loss.loss[0, action] <= 0.35


def test_eps_best_response_gap_certificate():
    model, losses = default_instance(7)
    loss = losses.vertex(0)
    eps = 0.02
    approx = epsilon_best_response(model, loss, eps)
    best = average_loss(
        occupancy_of_policy(model, best_response(model, loss).to_stochastic(3)), loss
    )
    got = average_loss(occupancy_of_policy(model, approx.to_stochastic(3)), loss)
    assert got <= best + eps + 1e-12


def test_eps_best_response_rejects_nonpositive_eps():
    model, losses = default_instance(0)
    with pytest.raises(ConfigurationError):
        epsilon_best_response(model, losses.vertex(0), 0.0)


# ---------------------------------------------------------------------------
# mixing_time_bound
# ---------------------------------------------------------------------------


def test_mixing_uniform_kernel_is_memoryless():
    model = generate_model(0, 3, 3, 1.0)
    cert = mixing_time_bound(model)
    assert cert.delta_max <= 1e-15
    assert cert.tau == 0.0


def test_mixing_single_state():
    cert = mixing_time_bound(single_state_model(3))
    assert cert.delta_max == 0.0 and cert.tau == 0.0


@pytest.mark.parametrize("seed", range(100))
def test_mixing_bounded_by_uniform_weight(seed):
    cert = mixing_time_bound(generate_model(seed, 3, 3, 0.1))
    assert cert.delta_max <= 0.9 + 1e-12
    assert cert.bounded


def test_mixing_tau_formula():
    cert = mixing_time_bound(default_model(0))
    assert cert.tau == pytest.approx(-1.0 / math.log(cert.delta_max))
    assert math.exp(-1.0 / cert.tau) == pytest.approx(cert.delta_max)


def test_mixing_unbounded_on_disconnected_kernel():
    transition = np.zeros((2, 1, 2))
    transition[0, 0, 0] = 1.0
    transition[1, 0, 1] = 1.0
    model = MdpModel(2, 1, transition, np.array([0.5, 0.5]))
    cert = mixing_time_bound(model)
    assert cert.delta_max == 1.0
    assert not cert.bounded
    assert math.isinf(cert.tau)


# ---------------------------------------------------------------------------
# propagate_distribution
# ---------------------------------------------------------------------------


def test_propagate_fixed_point():
    model = default_model(8)
    policy = random_policy(np.random.default_rng(3), 3, 3)
    occ = occupancy_of_policy(model, policy)
    pushed = propagate_distribution(model, occ.mass, policy)
    assert np.abs(pushed - occ.mass).max() <= 1e-12


def test_propagate_single_state():
    model = single_state_model(3)
    nxt = StochasticPolicy(np.array([[0.2, 0.3, 0.5]]))
    pushed = propagate_distribution(model, np.array([[1.0, 0.0, 0.0]]), nxt)
    assert np.allclose(pushed, nxt.action_probs)


def test_propagate_geometric_convergence():
    model = default_model(9)
    policy = random_policy(np.random.default_rng(4), 3, 3)
    occ = occupancy_of_policy(model, policy)
    delta = mixing_time_bound(model).delta_max
    v = model.initial_dist[:, None] * policy.action_probs
    prev_gap = np.abs(v - occ.mass).sum()
    for _ in range(200):
        v = propagate_distribution(model, v, policy)
        gap = np.abs(v - occ.mass).sum()
        if prev_gap > 1e-13:
            assert gap <= delta * prev_gap + 1e-14
        prev_gap = gap
    assert prev_gap <= 1e-12


def test_propagate_requires_distribution():
    model = default_model(0)
    with pytest.raises(ConfigurationError):
        propagate_distribution(model, np.full((3, 3), 0.5), StochasticPolicy.uniform(3, 3))


# ---------------------------------------------------------------------------
# Module invariants
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_contraction_of_state_distributions(seed):
    rng = np.random.default_rng(seed + 77)
    model = default_model(seed)
    policy = random_policy(rng, 3, 3)
    chain = induced_chain(model, policy)
    delta = mixing_time_bound(model).delta_max
    m1 = rng.random(3)
    m1 /= m1.sum()
    m2 = rng.random(3)
    m2 /= m2.sum()
    assert np.abs((m1 - m2) @ chain).sum() <= delta * np.abs(m1 - m2).sum() + 1e-12


def test_fixed_policy_drift_bound():
    # Accumulated gap between stationary and transient losses stays below
    # 2 tau + 2 for any loss sequence over 1000 rounds.
    model = default_model(12)
    rng = np.random.default_rng(99)
    policy = random_policy(rng, 3, 3)
    occ = occupancy_of_policy(model, policy)
    tau = mixing_time_bound(model).tau
    v = model.initial_dist[:, None] * policy.action_probs
    total = 0.0
    for t in range(1000):
        loss = rng.random((3, 3))
        total += abs(float(np.sum(loss * (occ.mass - v))))
        v = propagate_distribution(model, v, policy)
    assert total <= 2.0 * tau + 2.0


@pytest.mark.parametrize("seed", range(10))
def test_average_loss_difference_identity(seed):
    # <l, d_pi> - <l, d_pi'> equals the occupancy-weighted q-value gap of
    # pi against pi' evaluated under pi'.
    rng = np.random.default_rng(seed + 31)
    model = default_model(seed)
    pi = random_policy(rng, 3, 3)
    pi_ref = random_policy(rng, 3, 3)
    loss = random_loss(rng, 3, 3)
    sol = solve_bias(model, pi_ref, loss)
    d_pi = occupancy_of_policy(model, pi)
    d_ref = occupancy_of_policy(model, pi_ref)
    lhs = average_loss(d_pi, loss) - average_loss(d_ref, loss)
    q_under_pi = (pi.action_probs * sol.q).sum(axis=1)
    q_under_ref = (pi_ref.action_probs * sol.q).sum(axis=1)
    rhs = float(d_pi.state_dist() @ (q_under_pi - q_under_ref))
    assert abs(lhs - rhs) <= 1e-10


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_model_json_roundtrip():
    model = default_model(0)
    clone = model_from_json(model_to_json(model))
    assert np.array_equal(clone.transition, model.transition)
    assert np.array_equal(clone.initial_dist, model.initial_dist)


def test_model_json_rejects_bad_rows():
    doc = {
        "num_states": 2,
        "num_actions": 1,
        "transition": [[[0.5, 0.4]], [[0.5, 0.5]]],
        "initial_dist": [0.5, 0.5],
    }
    with pytest.raises(ConfigurationError):
        model_from_json(json.dumps(doc))


def test_model_json_rejects_malformed_document():
    with pytest.raises(ConfigurationError):
        model_from_json('{"num_states": 2}')


def test_type_validation_errors():
    with pytest.raises(ConfigurationError):
        StochasticPolicy(np.array([[0.6, 0.3]]))
    with pytest.raises(ConfigurationError):
        LossVector(np.array([[1.5, 0.0]]))
    with pytest.raises(ConfigurationError):
        OccupancyMeasure(np.array([[0.9, 0.2]]))
    with pytest.raises(ConfigurationError):
        MdpModel(1, 1, np.array([[[0.9]]]), np.array([1.0]))
