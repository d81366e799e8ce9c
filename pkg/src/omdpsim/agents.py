"""Learning agents that emit a policy each round and observe the loss.

Three algorithms share a driver interface:

* expert agent: one multiplicative-weights learner per state over the full
  action set, fed the state-action values of the played policy;
* oracle-expert agent: a double-oracle variant that grows per-state
  effective action sets one action per window and restarts the per-state
  learners each time a best response leaves the current sets;
* last-round convergence agent: alternates the precomputed equilibrium
  policy with a corrective step sized by the adversary's distance from the
  game value, driving the adversary's actual iterates to equilibrium.

Agent states are values advanced by pure step functions; the drivers at the
bottom are thin mutable wrappers used by the simulation loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .adversaries import LossSet
from .equilibrium import EquilibriumSolution
from .errors import ConfigurationError, ErgodicityError
from .mdp_core import (
    DeterministicPolicy,
    LossVector,
    MdpModel,
    OccupancyMeasure,
    StochasticPolicy,
    average_loss,
    best_response,
    mixing_time_bound,
    occupancy_of_policy,
    policy_of_occupancy,
    solve_bias,
    _epsilon_best_response_certified,
)

DEFAULT_TAU_FLOOR = 0.5


def feedback_scale(model: MdpModel, tau_floor: float = DEFAULT_TAU_FLOOR) -> float:
    """Bound on the state-action values used to scale expert step sizes.

    Three times the certified mixing time, floored to avoid degenerate step
    sizes on near-memoryless chains.
    """
    cert = mixing_time_bound(model)
    if not cert.bounded:
        raise ErgodicityError("model admits no uniform mixing certificate")
    return 3.0 * max(cert.tau, tau_floor)


@dataclass(frozen=True, eq=False)
class ExpertInstance:
    """Multiplicative-weights learner over one state's (sub)set of actions.

    ``scale`` bounds the magnitude of incoming feedback; the step size is
    ``sqrt(8 ln n / t) / scale`` with ``t`` the round within the current
    window.
    """

    weights: np.ndarray
    round_in_window: int
    scale: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.min() < 0.0 or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigurationError("expert weights must form a simplex point")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.scale <= 0.0:
            raise ConfigurationError("feedback scale must be positive")

    @classmethod
    def uniform(cls, n: int, scale: float) -> "ExpertInstance":
        return cls(np.full(n, 1.0 / n), 1, scale)

    def updated(self, feedback: np.ndarray) -> "ExpertInstance":
        n = self.weights.size
        if n == 1:
            return replace(self, round_in_window=self.round_in_window + 1)
        mu = math.sqrt(8.0 * math.log(n) / self.round_in_window) / self.scale
        # Subtracting the minimum feedback leaves the update invariant and
        # keeps the exponentials well-conditioned.
        w = self.weights * np.exp(-mu * (feedback - feedback.min()))
        return ExpertInstance(w / w.sum(), self.round_in_window + 1, self.scale)


# ---------------------------------------------------------------------------
# Expert agent (full action set per state)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MdpEState:
    experts: tuple[ExpertInstance, ...]
    round: int


def mdpe_init(model: MdpModel, tau_floor: float = DEFAULT_TAU_FLOOR) -> MdpEState:
    scale = feedback_scale(model, tau_floor)
    experts = tuple(
        ExpertInstance.uniform(model.num_actions, scale) for _ in range(model.num_states)
    )
    return MdpEState(experts=experts, round=1)


def mdpe_next_policy(state: MdpEState) -> StochasticPolicy:
    """The per-state expert weights, read off as a stochastic policy."""
    return StochasticPolicy(np.stack([e.weights for e in state.experts]))


def mdpe_observe(
    state: MdpEState,
    model: MdpModel,
    l: LossVector,
    state_dist: np.ndarray | None = None,
) -> MdpEState:
    """Feed each state's learner the played policy's state-action values."""
    policy = mdpe_next_policy(state)
    q = solve_bias(model, policy, l, state_dist=state_dist).q
    experts = tuple(e.updated(q[s]) for s, e in enumerate(state.experts))
    return MdpEState(experts=experts, round=state.round + 1)


# ---------------------------------------------------------------------------
# Oracle-expert agent (effective action sets grown by best responses)
# ---------------------------------------------------------------------------


@dataclass
class MdpOoeState:
    """Effective action sets, window-local experts, and the running loss average.

    ``action_sets`` keeps insertion order per state; every expansion adds
    exactly one action to every state's set, so all sets share the window
    index as their size.
    """

    action_sets: tuple[tuple[int, ...], ...]
    experts: tuple[ExpertInstance, ...]
    window_index: int
    lbar_sum: np.ndarray
    lbar_count: int
    prior_lbar: np.ndarray
    round: int
    total_mode: bool
    epsilon: float
    scale: float
    rng: np.random.Generator
    current_policy: StochasticPolicy | None = None
    br_hint: DeterministicPolicy | None = None


def mdpooe_init(
    model: MdpModel,
    losses: LossSet,
    rng: np.random.Generator,
    tau_floor: float = DEFAULT_TAU_FLOOR,
    lbar_mode: str = "window",
    epsilon: float = 0.0,
) -> MdpOoeState:
    if lbar_mode not in ("window", "total"):
        raise ConfigurationError(f"unknown lbar_mode {lbar_mode!r}")
    if epsilon < 0.0:
        raise ConfigurationError("epsilon must be nonnegative")
    return MdpOoeState(
        action_sets=tuple(() for _ in range(model.num_states)),
        experts=(),
        window_index=0,
        lbar_sum=np.zeros((model.num_states, model.num_actions)),
        lbar_count=0,
        prior_lbar=losses.vertices.mean(axis=0),
        round=1,
        total_mode=(lbar_mode == "total"),
        epsilon=float(epsilon),
        scale=feedback_scale(model, tau_floor),
        rng=rng,
    )


def _reference_loss(state: MdpOoeState) -> LossVector:
    if state.lbar_count == 0:
        return LossVector(state.prior_lbar)
    return LossVector(state.lbar_sum / state.lbar_count)


def _allowed_mask(state: MdpOoeState, num_actions: int) -> np.ndarray:
    mask = np.zeros((len(state.action_sets), num_actions), dtype=bool)
    for s, actions in enumerate(state.action_sets):
        mask[s, list(actions)] = True
    return mask


def _policy_from_experts(state: MdpOoeState, num_actions: int) -> StochasticPolicy:
    rows = np.zeros((len(state.action_sets), num_actions))
    for s, actions in enumerate(state.action_sets):
        rows[s, list(actions)] = state.experts[s].weights
    return StochasticPolicy(rows)


def _needs_expansion(
    state: MdpOoeState, model: MdpModel, lbar: LossVector
) -> tuple[bool, DeterministicPolicy]:
    """Oracle test: can the current sets still match the best response?

    Exact mode expands whenever the best response leaves the sets.  With an
    approximate oracle, expansion happens only when the in-set optimum
    provably exceeds the oracle's certified threshold, so an equally good
    in-set response keeps the window open.
    """
    if state.epsilon == 0.0:
        # Warm-starting from the previous round's best response usually
        # converges in one evaluation; the fixed point is start-independent.
        candidate = best_response(model, lbar, initial=state.br_hint)
        outside = any(
            int(candidate.chosen_action[s]) not in state.action_sets[s]
            for s in range(model.num_states)
        )
        return outside, candidate
    candidate, lower = _epsilon_best_response_certified(model, lbar, state.epsilon)
    outside = any(
        int(candidate.chosen_action[s]) not in state.action_sets[s]
        for s in range(model.num_states)
    )
    if not outside or state.window_index == 0:
        return outside, candidate
    restricted = best_response(model, lbar, allowed=_allowed_mask(state, model.num_actions))
    in_set_eta = average_loss(
        occupancy_of_policy(model, restricted.to_stochastic(model.num_actions)), lbar
    )
    return in_set_eta > lower + state.epsilon, candidate


def mdpooe_next_policy(
    state: MdpOoeState, model: MdpModel
) -> tuple[StochasticPolicy, bool, MdpOoeState]:
    """Emit the round's policy, expanding the effective sets when needed.

    Returns ``(policy, window_changed, new_state)``.  On expansion every
    state gains exactly one action (the best-response action where it is
    new, a seeded random unused action otherwise), all experts restart
    uniform over the grown sets, and the window loss average resets.
    """
    lbar = _reference_loss(state)
    expand, candidate = _needs_expansion(state, model, lbar)
    if not expand:
        policy = _policy_from_experts(state, model.num_actions)
        new_state = replace(state, current_policy=policy, br_hint=candidate)
        return policy, False, new_state

    new_sets = []
    for s in range(model.num_states):
        current = state.action_sets[s]
        wanted = int(candidate.chosen_action[s])
        if wanted not in current:
            new_sets.append(current + (wanted,))
        else:
            unused = sorted(set(range(model.num_actions)) - set(current))
            if unused:
                pick = unused[int(state.rng.integers(len(unused)))]
                new_sets.append(current + (pick,))
            else:
                new_sets.append(current)
    experts = tuple(ExpertInstance.uniform(len(acts), state.scale) for acts in new_sets)
    new_state = replace(
        state,
        action_sets=tuple(new_sets),
        experts=experts,
        window_index=state.window_index + 1,
        br_hint=candidate,
    )
    if not state.total_mode:
        new_state.lbar_sum = np.zeros_like(state.lbar_sum)
        new_state.lbar_count = 0
    policy = _policy_from_experts(new_state, model.num_actions)
    new_state.current_policy = policy
    return policy, True, new_state


def mdpooe_observe(
    state: MdpOoeState,
    model: MdpModel,
    l: LossVector,
    state_dist: np.ndarray | None = None,
) -> MdpOoeState:
    """Accumulate the loss average and update the window-local experts."""
    if state.current_policy is None:
        raise ConfigurationError("observe called before the round's policy was emitted")
    q = solve_bias(model, state.current_policy, l, state_dist=state_dist).q
    experts = tuple(
        expert.updated(q[s, list(state.action_sets[s])])
        for s, expert in enumerate(state.experts)
    )
    return replace(
        state,
        experts=experts,
        lbar_sum=state.lbar_sum + l.loss,
        lbar_count=state.lbar_count + 1,
        round=state.round + 1,
    )


# ---------------------------------------------------------------------------
# Last-round convergence agent
# ---------------------------------------------------------------------------


@dataclass
class LrcState:
    """Equilibrium anchor plus the last observed loss and corrective step."""

    ne_policy: StochasticPolicy
    ne_occupancy: OccupancyMeasure
    value: float
    beta: float
    last_loss: LossVector | None = None
    last_alpha: float = math.nan
    last_occupancy: OccupancyMeasure | None = None


def lrc_init(
    model: MdpModel, equilibrium: EquilibriumSolution, beta: float = 1.0
) -> LrcState:
    if beta < 1.0:
        raise ConfigurationError("beta must be at least 1")
    return LrcState(
        ne_policy=equilibrium.agent_policy,
        ne_occupancy=equilibrium.agent_occupancy,
        value=equilibrium.value,
        beta=beta,
    )


def lrc_next_policy(
    state: LrcState, model: MdpModel, t: int
) -> tuple[StochasticPolicy, LrcState]:
    """Equilibrium policy on odd rounds; a sized corrective mix on even rounds.

    The even-round policy plays the occupancy mixture
    ``(1 - alpha) d* + alpha d_hat`` where ``hat`` greedily improves the
    state-action values of the equilibrium policy under the last observed
    loss and ``alpha = clamp((v - eta(hat)) / beta, 0, 1)``.
    """
    if t % 2 == 1:
        return state.ne_policy, replace(
            state, last_alpha=math.nan, last_occupancy=state.ne_occupancy
        )
    if state.last_loss is None:
        raise ConfigurationError("even round reached without an observed loss")
    q = solve_bias(model, state.ne_policy, state.last_loss).q
    target = DeterministicPolicy(q.argmin(axis=1)).to_stochastic(model.num_actions)
    target_occ = occupancy_of_policy(model, target)
    eta_hat = average_loss(target_occ, state.last_loss)
    # Exact arithmetic gives eta_hat <= v; clamp guards round-off crossings.
    alpha = min(1.0, max(0.0, (state.value - eta_hat) / state.beta))
    mixed = OccupancyMeasure(
        (1.0 - alpha) * state.ne_occupancy.mass + alpha * target_occ.mass
    )
    policy = policy_of_occupancy(model, mixed)
    return policy, replace(state, last_alpha=alpha, last_occupancy=mixed)


def lrc_observe(state: LrcState, l: LossVector) -> LrcState:
    return replace(state, last_loss=l)


def lrc_stability_check(
    model: MdpModel,
    pi_star: StochasticPolicy,
    v: float,
    l: LossVector,
    atol: float = 1e-8,
) -> bool:
    """True when the loss is an equilibrium point for the adversary.

    Holds iff the equilibrium policy's own action choice already minimizes
    its state-action values in every state and its average loss equals the
    game value.
    """
    sol = solve_bias(model, pi_star, l)
    greedy_stable = bool((sol.bias <= sol.q.min(axis=1) + atol).all())
    return greedy_stable and abs(sol.eta - v) <= atol


# ---------------------------------------------------------------------------
# Drivers used by the simulation loop
# ---------------------------------------------------------------------------


class FixedAgent:
    """Plays one stationary policy forever."""

    def __init__(self, model: MdpModel, policy: StochasticPolicy):
        self._policy = policy
        self._occupancy = occupancy_of_policy(model, policy)

    def next_policy(self, t: int) -> StochasticPolicy:
        return self._policy

    def observe(self, t: int, l: LossVector, occupancy: OccupancyMeasure | None = None) -> None:
        pass

    def occupancy_hint(self) -> OccupancyMeasure | None:
        return self._occupancy

    def extras(self) -> dict:
        return {}


class MdpEAgent:
    def __init__(self, model: MdpModel, tau_floor: float = DEFAULT_TAU_FLOOR):
        self.model = model
        self.state = mdpe_init(model, tau_floor)

    def next_policy(self, t: int) -> StochasticPolicy:
        return mdpe_next_policy(self.state)

    def observe(self, t: int, l: LossVector, occupancy: OccupancyMeasure | None = None) -> None:
        dist = occupancy.state_dist() if occupancy is not None else None
        self.state = mdpe_observe(self.state, self.model, l, state_dist=dist)

    def occupancy_hint(self) -> OccupancyMeasure | None:
        return None

    def extras(self) -> dict:
        return {}


class MdpOoeAgent:
    def __init__(
        self,
        model: MdpModel,
        losses: LossSet,
        rng: np.random.Generator,
        tau_floor: float = DEFAULT_TAU_FLOOR,
        lbar_mode: str = "window",
        epsilon: float = 0.0,
    ):
        self.model = model
        self.state = mdpooe_init(
            model, losses, rng, tau_floor=tau_floor, lbar_mode=lbar_mode, epsilon=epsilon
        )

    def next_policy(self, t: int) -> StochasticPolicy:
        policy, _, self.state = mdpooe_next_policy(self.state, self.model)
        return policy

    def observe(self, t: int, l: LossVector, occupancy: OccupancyMeasure | None = None) -> None:
        dist = occupancy.state_dist() if occupancy is not None else None
        self.state = mdpooe_observe(self.state, self.model, l, state_dist=dist)

    def occupancy_hint(self) -> OccupancyMeasure | None:
        return None

    def extras(self) -> dict:
        return {"window": self.state.window_index}


class LrcAgent:
    def __init__(self, model: MdpModel, equilibrium: EquilibriumSolution, beta: float = 1.0):
        self.model = model
        self.state = lrc_init(model, equilibrium, beta)

    def next_policy(self, t: int) -> StochasticPolicy:
        policy, self.state = lrc_next_policy(self.state, self.model, t)
        return policy

    def observe(self, t: int, l: LossVector, occupancy: OccupancyMeasure | None = None) -> None:
        self.state = lrc_observe(self.state, l)

    def occupancy_hint(self) -> OccupancyMeasure | None:
        return self.state.last_occupancy

    def extras(self) -> dict:
        return {"alpha": self.state.last_alpha}
