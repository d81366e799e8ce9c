"""Exact numerical primitives for average-reward MDPs.

The MDP is a known finite model: this module computes induced state
chains, stationary and occupancy measures, average-loss (Poisson) bias
solves, best responses, mixing-time certificates, and one-step
distribution propagation.  All operations are pure functions; the value
types freeze their arrays after construction so instances can be shared
freely across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    ErgodicityError,
    InvalidOccupancyError,
    NumericalError,
    SolverError,
)

# Construction-time tolerances for probability objects.
ROW_SUM_ATOL = 1e-12
LOSS_RANGE_ATOL = 1e-12
# Certified solve tolerances.
STATIONARY_RESIDUAL_ATOL = 1e-12
OCCUPANCY_ATOL = 1e-10
POISSON_ATOL = 1e-10
# Flow tolerance accepted when inverting an occupancy measure back to a policy.
OCCUPANCY_INVERT_ATOL = 1e-8
# Two actions whose evaluations differ by less than this are treated as tied;
# ties always resolve to the lowest action index.
ARGMIN_SNAP = 1e-12

_POWER_ITER_CAP = 200_000
_VALUE_ITER_CAP = 500_000


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MdpModel:
    """Finite MDP: kernel ``transition[s, a, s']`` plus a start distribution."""

    num_states: int
    num_actions: int
    transition: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise ConfigurationError("state and action counts must be positive")
        p = np.array(self.transition, dtype=float)
        mu = np.array(self.initial_dist, dtype=float)
        if p.shape != (self.num_states, self.num_actions, self.num_states):
            raise ConfigurationError(f"transition shape {p.shape} does not match sizes")
        if mu.shape != (self.num_states,):
            raise ConfigurationError(f"initial_dist shape {mu.shape} does not match")
        if p.min() < 0.0 or mu.min() < 0.0:
            raise ConfigurationError("probabilities must be nonnegative")
        if np.abs(p.sum(axis=2) - 1.0).max() > ROW_SUM_ATOL:
            raise ConfigurationError("transition rows must sum to 1")
        if abs(mu.sum() - 1.0) > ROW_SUM_ATOL:
            raise ConfigurationError("initial_dist must sum to 1")
        object.__setattr__(self, "transition", _frozen(p))
        object.__setattr__(self, "initial_dist", _frozen(mu))


@dataclass(frozen=True, eq=False)
class StochasticPolicy:
    """Row-stochastic map ``action_probs[s, a]``."""

    action_probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.action_probs, dtype=float)
        if probs.ndim != 2:
            raise ConfigurationError("policy must be a 2-d (state, action) array")
        if probs.min() < 0.0:
            raise ConfigurationError("policy probabilities must be nonnegative")
        if np.abs(probs.sum(axis=1) - 1.0).max() > ROW_SUM_ATOL:
            raise ConfigurationError("policy rows must sum to 1")
        object.__setattr__(self, "action_probs", _frozen(probs))

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "StochasticPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    """One chosen action per state."""

    chosen_action: np.ndarray

    def __post_init__(self):
        acts = np.array(self.chosen_action, dtype=np.int64)
        if acts.ndim != 1:
            raise ConfigurationError("chosen_action must be a 1-d array")
        if acts.min(initial=0) < 0:
            raise ConfigurationError("action indices must be nonnegative")
        object.__setattr__(self, "chosen_action", _frozen(acts))

    def to_stochastic(self, num_actions: int) -> StochasticPolicy:
        if self.chosen_action.max(initial=0) >= num_actions:
            raise ConfigurationError("action index out of range")
        rows = np.zeros((self.chosen_action.size, num_actions))
        rows[np.arange(self.chosen_action.size), self.chosen_action] = 1.0
        return StochasticPolicy(rows)


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    """Stationary joint distribution ``mass[s, a]`` over state-action pairs."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        if m.ndim != 2:
            raise ConfigurationError("occupancy mass must be 2-d")
        if m.min() < -1e-12:
            raise ConfigurationError("occupancy mass must be nonnegative")
        m = np.clip(m, 0.0, None)
        if abs(m.sum() - 1.0) > OCCUPANCY_ATOL:
            raise ConfigurationError("occupancy mass must sum to 1")
        object.__setattr__(self, "mass", _frozen(m))

    def state_dist(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    def flow_residual(self, model: MdpModel) -> float:
        """Max absolute violation of the stationarity flow constraints."""
        inflow = np.einsum("sa,sat->t", self.mass, model.transition)
        return float(np.abs(self.state_dist() - inflow).max())


@dataclass(frozen=True, eq=False)
class LossVector:
    """Per state-action loss, each entry in [0, 1]."""

    loss: np.ndarray

    def __post_init__(self):
        l = np.array(self.loss, dtype=float)
        if l.ndim != 2:
            raise ConfigurationError("loss must be a 2-d (state, action) array")
        if l.min() < -LOSS_RANGE_ATOL or l.max() > 1.0 + LOSS_RANGE_ATOL:
            raise ConfigurationError("loss entries must lie in [0, 1]")
        object.__setattr__(self, "loss", _frozen(np.clip(l, 0.0, 1.0)))


@dataclass(frozen=True, eq=False)
class BiasSolution:
    """Average loss, bias vector, and state-action values for one (policy, loss) pair.

    Fields satisfy the average-loss Bellman equation
    ``q[s, a] = loss[s, a] - eta + sum_s' P(s'|s,a) bias[s']`` with
    ``bias[s] = sum_a pi(a|s) q[s, a]``, normalized so that the q-values
    have zero mean under the policy's occupancy measure.
    """

    eta: float
    bias: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bias", _frozen(np.array(self.bias, dtype=float)))
        object.__setattr__(self, "q", _frozen(np.array(self.q, dtype=float)))


@dataclass(frozen=True)
class MixingCertificate:
    """Uniform contraction certificate for every policy-induced chain.

    ``delta_max`` bounds the Dobrushin coefficient of the induced chain of
    any stochastic policy; ``tau`` is the matching geometric mixing time,
    ``inf`` when no contraction can be certified.
    """

    delta_max: float
    tau: float

    @property
    def bounded(self) -> bool:
        return self.delta_max < 1.0


def _check_model_policy(model: MdpModel, policy: StochasticPolicy) -> None:
    if policy.action_probs.shape != (model.num_states, model.num_actions):
        raise ConfigurationError(
            f"policy shape {policy.action_probs.shape} does not match model "
            f"({model.num_states}, {model.num_actions})"
        )


def _check_model_loss(model: MdpModel, loss: LossVector) -> None:
    if loss.loss.shape != (model.num_states, model.num_actions):
        raise ConfigurationError(
            f"loss shape {loss.loss.shape} does not match model "
            f"({model.num_states}, {model.num_actions})"
        )


def induced_chain(model: MdpModel, policy: StochasticPolicy) -> np.ndarray:
    """State transition matrix of the chain induced by a policy."""
    _check_model_policy(model, policy)
    return np.einsum("sa,sat->st", policy.action_probs, model.transition)


def _stationary_residual(chain: np.ndarray, dist: np.ndarray) -> float:
    return float(np.abs(dist @ chain - dist).sum())


def stationary_state_dist(chain: np.ndarray) -> np.ndarray:
    """Unique stationary distribution of a row-stochastic chain.

    Solves ``(I - K^T + 1 1^T) x = 1`` directly, falling back to power
    iteration if the direct solve cannot be certified.  Raises
    :class:`ErgodicityError` when no unique stationary distribution exists
    or the residual cannot be brought under ``1e-12``.
    """
    chain = np.asarray(chain, dtype=float)
    if chain.ndim != 2 or chain.shape[0] != chain.shape[1]:
        raise ConfigurationError("chain must be square")
    n = chain.shape[0]
    if chain.min() < -1e-12 or np.abs(chain.sum(axis=1) - 1.0).max() > 1e-9:
        raise ConfigurationError("chain rows must be probability vectors")
    ones = np.ones(n)
    dist = None
    try:
        x = np.linalg.solve(np.eye(n) - chain.T + np.outer(ones, ones), ones)
        if x.min() > -1e-9:
            x = np.clip(x, 0.0, None)
            s = x.sum()
            if s > 0:
                x = x / s
                if _stationary_residual(chain, x) <= STATIONARY_RESIDUAL_ATOL:
                    dist = x
    except np.linalg.LinAlgError:
        # Singular system: eigenvalue 1 has multiplicity > 1, i.e. the chain
        # has multiple recurrent classes.
        raise ErgodicityError("chain has no unique stationary distribution")
    if dist is None:
        dist = _power_iteration(chain)
    return dist


def _power_iteration(chain: np.ndarray) -> np.ndarray:
    n = chain.shape[0]
    d = np.full(n, 1.0 / n)
    for _ in range(_POWER_ITER_CAP):
        d_next = d @ chain
        if np.abs(d_next - d).sum() <= 0.5 * STATIONARY_RESIDUAL_ATOL:
            d = d_next
            break
        d = d_next
    d = np.clip(d, 0.0, None)
    d /= d.sum()
    if _stationary_residual(chain, d) > STATIONARY_RESIDUAL_ATOL:
        raise ErgodicityError("stationary distribution did not converge")
    return d


def occupancy_of_policy(model: MdpModel, policy: StochasticPolicy) -> OccupancyMeasure:
    """Stationary state-action distribution of a policy."""
    dist = stationary_state_dist(induced_chain(model, policy))
    return OccupancyMeasure(dist[:, None] * policy.action_probs)


def policy_of_occupancy(model: MdpModel, d: OccupancyMeasure) -> StochasticPolicy:
    """Recover the policy whose occupancy measure is ``d``.

    Requires the flow constraints to hold within ``1e-8``; states with zero
    mass receive a uniform action row so the map is total.
    """
    if d.mass.shape != (model.num_states, model.num_actions):
        raise ConfigurationError("occupancy shape does not match model")
    if d.flow_residual(model) > OCCUPANCY_INVERT_ATOL:
        raise InvalidOccupancyError(
            f"flow residual {d.flow_residual(model):.3e} exceeds {OCCUPANCY_INVERT_ATOL:.0e}"
        )
    state_mass = d.state_dist()
    rows = np.full_like(d.mass, 1.0 / model.num_actions)
    positive = state_mass > 0.0
    rows[positive] = d.mass[positive] / state_mass[positive, None]
    return StochasticPolicy(rows)


def average_loss(d: OccupancyMeasure, l: LossVector) -> float:
    """Long-run average loss ``<l, d>`` of the occupancy measure ``d``."""
    if d.mass.shape != l.loss.shape:
        raise ConfigurationError("occupancy and loss shapes differ")
    return float(np.sum(d.mass * l.loss))


def solve_bias(
    model: MdpModel,
    policy: StochasticPolicy,
    l: LossVector,
    state_dist: np.ndarray | None = None,
) -> BiasSolution:
    """Solve the average-loss evaluation equations for one (policy, loss) pair.

    Returns the average loss ``eta``, the bias ``h`` solving
    ``(I - P(pi)) h = l_pi - eta`` under the normalization ``<d_pi, h> = 0``,
    and ``q[s, a] = l[s, a] - eta + sum_s' P(s'|s,a) h[s']``.  The
    normalization makes the q-values zero-mean under the occupancy measure,
    matching the series definition started from stationarity.  Callers that
    already hold the policy's stationary state distribution can pass it via
    ``state_dist`` to skip the stationary solve.
    """
    _check_model_policy(model, policy)
    _check_model_loss(model, l)
    chain = induced_chain(model, policy)
    dist = stationary_state_dist(chain) if state_dist is None else state_dist
    loss_under_policy = (policy.action_probs * l.loss).sum(axis=1)
    eta = float(dist @ loss_under_policy)
    n = model.num_states
    system = np.eye(n) - chain + np.outer(np.ones(n), dist)
    h = np.linalg.solve(system, loss_under_policy - eta)
    q = l.loss - eta + model.transition @ h
    residual = np.abs(h - (loss_under_policy - eta + chain @ h)).max()
    if residual > POISSON_ATOL or abs(dist @ h) > POISSON_ATOL:
        raise NumericalError(f"bias solve residual {residual:.3e} not certified")
    return BiasSolution(eta=eta, bias=h, q=q)


def _snap_argmin_rows(values: np.ndarray) -> np.ndarray:
    """Per-row argmin; entries within ARGMIN_SNAP of the row minimum tie to the lowest index."""
    mins = values.min(axis=1, keepdims=True)
    return (values <= mins + ARGMIN_SNAP).argmax(axis=1)


def best_response(
    model: MdpModel,
    l: LossVector,
    initial: DeterministicPolicy | None = None,
    allowed: np.ndarray | None = None,
) -> DeterministicPolicy:
    """Average-loss-minimizing deterministic policy, by policy iteration.

    Optimality holds at convergence: the returned policy's own q-values
    satisfy ``q[s, pi(s)] = min_a q[s, a]`` in every state, ties resolving
    to the lowest action index.  ``allowed`` optionally restricts the search
    to a boolean (state, action) mask; each state needs at least one allowed
    action.
    """
    _check_model_loss(model, l)
    if allowed is not None:
        allowed = np.asarray(allowed, dtype=bool)
        if allowed.shape != (model.num_states, model.num_actions):
            raise ConfigurationError("allowed mask shape does not match model")
        if not allowed.any(axis=1).all():
            raise ConfigurationError("every state needs at least one allowed action")
    if initial is None:
        if allowed is None:
            actions = np.zeros(model.num_states, dtype=np.int64)
        else:
            actions = allowed.argmax(axis=1)
    else:
        actions = initial.chosen_action.copy()
        if allowed is not None and not allowed[np.arange(actions.size), actions].all():
            raise ConfigurationError("initial policy leaves the allowed mask")
    cap = model.num_actions ** model.num_states + 8
    for _ in range(cap):
        policy = DeterministicPolicy(actions)
        q = solve_bias(model, policy.to_stochastic(model.num_actions), l).q
        if allowed is not None:
            q = np.where(allowed, q, np.inf)
        greedy = _snap_argmin_rows(q)
        if np.array_equal(greedy, actions):
            return policy
        actions = greedy
    raise SolverError("policy iteration did not converge; numerical trouble")


def epsilon_best_response(
    model: MdpModel, l: LossVector, eps: float
) -> DeterministicPolicy:
    """Policy whose average loss is within ``eps`` of the optimum.

    Runs relative value iteration and stops as soon as the span of the
    one-step improvement certifies the gap, so the work scales with the
    requested accuracy rather than with exact convergence.
    """
    policy, _ = _epsilon_best_response_certified(model, l, eps)
    return policy


def _epsilon_best_response_certified(
    model: MdpModel, l: LossVector, eps: float
) -> tuple[DeterministicPolicy, float]:
    """As :func:`epsilon_best_response`, also returning a certified lower
    bound on the optimal average loss."""
    _check_model_loss(model, l)
    if eps <= 0.0:
        raise ConfigurationError("eps must be positive")
    h = np.zeros(model.num_states)
    for _ in range(_VALUE_ITER_CAP):
        backed_up = l.loss + model.transition @ h
        improved = backed_up.min(axis=1)
        diff = improved - h
        lower = float(diff.min())
        if float(diff.max()) - lower <= eps:
            return DeterministicPolicy(_snap_argmin_rows(backed_up)), lower
        h = improved - improved[0]
    raise SolverError("relative value iteration did not certify the gap")


def mixing_time_bound(model: MdpModel) -> MixingCertificate:
    """Policy-uniform contraction certificate from state-action row pairs.

    ``delta_max`` is half the largest l1 distance between kernel rows of
    distinct states.  Every row of an induced chain is a per-state mixture
    of that state's action rows, so this dominates the Dobrushin
    coefficient of the induced chain of every stochastic policy.
    """
    s, a = model.num_states, model.num_actions
    if s == 1:
        return MixingCertificate(delta_max=0.0, tau=0.0)
    rows = model.transition.reshape(s * a, s)
    pairwise = 0.5 * np.abs(rows[:, None, :] - rows[None, :, :]).sum(axis=2)
    state_of_row = np.repeat(np.arange(s), a)
    cross_state = state_of_row[:, None] != state_of_row[None, :]
    delta = float(min(pairwise[cross_state].max(), 1.0))
    if delta == 0.0:
        tau = 0.0
    elif delta >= 1.0:
        tau = math.inf
    else:
        tau = -1.0 / math.log(delta)
    return MixingCertificate(delta_max=delta, tau=tau)


def propagate_distribution(
    model: MdpModel, v_prev: np.ndarray, next_policy: StochasticPolicy
) -> np.ndarray:
    """One step of the joint state-action distribution under the model.

    ``v_next[s', a'] = pi_next(a'|s') * sum_{s,a} v_prev[s, a] P(s'|s, a)``.
    """
    _check_model_policy(model, next_policy)
    v = np.asarray(v_prev, dtype=float)
    if v.shape != (model.num_states, model.num_actions):
        raise ConfigurationError("joint distribution shape does not match model")
    if abs(v.sum() - 1.0) > 1e-9:
        raise ConfigurationError("joint distribution must sum to 1")
    marginal = np.einsum("sa,sat->t", v, model.transition)
    return next_policy.action_probs * marginal[:, None]


def model_to_json(model: MdpModel) -> str:
    """Serialize a model to the canonical JSON document."""
    doc = {
        "num_states": model.num_states,
        "num_actions": model.num_actions,
        "transition": model.transition.tolist(),
        "initial_dist": model.initial_dist.tolist(),
    }
    return json.dumps(doc)


def model_from_json(text: str) -> MdpModel:
    """Load and fully validate a model from its JSON document."""
    try:
        doc = json.loads(text)
        model = MdpModel(
            num_states=int(doc["num_states"]),
            num_actions=int(doc["num_actions"]),
            transition=np.array(doc["transition"], dtype=float),
            initial_dist=np.array(doc["initial_dist"], dtype=float),
        )
    except ConfigurationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed model document: {exc}") from exc
    return model
