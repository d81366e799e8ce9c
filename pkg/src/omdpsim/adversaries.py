"""Strategic adversaries over a finite set of pure loss vectors.

The adversary owns ``L`` loss vertices and plays a mixture over them; the
realized loss each round is the weighted vertex average.  Feedback is the
agent's stationary occupancy measure.  The multiplicative-weights adversary
uses the gain form (it collects what the agent loses); best-response and
oblivious baselines share the same driver interface.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError
from .mdp_core import LossVector, OccupancyMeasure, _frozen

SIMPLEX_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class LossSet:
    """The adversary's pure strategies: ``vertices[i, s, a]`` in [0, 1]."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 3 or v.shape[0] < 1:
            raise ConfigurationError("loss set must be a nonempty (L, S, A) array")
        if v.min() < -1e-12 or v.max() > 1.0 + 1e-12:
            raise ConfigurationError("loss vertices must lie in [0, 1]")
        object.__setattr__(self, "vertices", _frozen(np.clip(v, 0.0, 1.0)))

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    def vertex(self, i: int) -> LossVector:
        return LossVector(self.vertices[i])


@dataclass(frozen=True, eq=False)
class AdversaryMixture:
    """Probability weights over the loss vertices."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1:
            raise ConfigurationError("mixture weights must be a vector")
        if w.min() < -SIMPLEX_ATOL or abs(w.sum() - 1.0) > SIMPLEX_ATOL:
            raise ConfigurationError("mixture weights must form a simplex point")
        object.__setattr__(self, "weights", _frozen(np.clip(w, 0.0, None)))

    @classmethod
    def uniform(cls, n: int) -> "AdversaryMixture":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, n: int, i: int) -> "AdversaryMixture":
        w = np.zeros(n)
        w[i] = 1.0
        return cls(w)


@dataclass(frozen=True)
class AdversaryState:
    """Mixture, round counter, and step-size rule of an adaptive adversary."""

    mixture: AdversaryMixture
    round: int
    step_schedule: Callable[[int], float]


def anytime_step_schedule(num_vertices: int, cap: float | None = None) -> Callable[[int], float]:
    """Horizon-free step sizes ``mu_t = sqrt(8 ln L / t)``, optionally capped."""
    log_l = math.log(num_vertices) if num_vertices > 1 else 0.0

    def rate(t: int) -> float:
        mu = math.sqrt(8.0 * log_l / t)
        return mu if cap is None else min(cap, mu)

    return rate


def fixed_horizon_step_schedule(
    num_vertices: int, horizon: int, cap: float | None = None
) -> Callable[[int], float]:
    """Constant step size ``sqrt(8 ln L / T)`` tuned to a known horizon."""
    if horizon < 1:
        raise ConfigurationError("horizon must be positive")
    log_l = math.log(num_vertices) if num_vertices > 1 else 0.0
    mu = math.sqrt(8.0 * log_l / horizon)
    if cap is not None:
        mu = min(cap, mu)
    return lambda t: mu


def vertex_payoffs(losses: LossSet, feedback: OccupancyMeasure) -> np.ndarray:
    """Per-vertex gains ``<l_i, d>`` against an occupancy measure."""
    if losses.vertices.shape[1:] != feedback.mass.shape:
        raise ConfigurationError("loss set and occupancy shapes differ")
    return np.einsum("isa,sa->i", losses.vertices, feedback.mass)


def realized_loss(mixture: AdversaryMixture, losses: LossSet) -> LossVector:
    """Loss vector actually charged: the mixture-weighted vertex average."""
    if mixture.weights.size != losses.num_vertices:
        raise ConfigurationError("mixture size does not match loss set")
    return LossVector(np.einsum("i,isa->sa", mixture.weights, losses.vertices))


def mwu_adversary_step(
    state: AdversaryState, losses: LossSet, feedback: OccupancyMeasure
) -> AdversaryState:
    """One multiplicative-weights update in gain form.

    ``x_{t+1}(i)`` is proportional to ``x_t(i) * exp(+mu_t <l_i, d>)``: the
    game is zero-sum, so the adversary ascends on the agent's loss.
    """
    gains = vertex_payoffs(losses, feedback)
    mu = state.step_schedule(state.round)
    w = state.mixture.weights * np.exp(mu * (gains - gains.max()))
    w /= w.sum()
    return AdversaryState(
        mixture=AdversaryMixture(w), round=state.round + 1, step_schedule=state.step_schedule
    )


def best_response_adversary_step(
    losses: LossSet, feedback: OccupancyMeasure
) -> AdversaryMixture:
    """Point mass on the vertex with the highest gain (lowest index wins ties)."""
    gains = vertex_payoffs(losses, feedback)
    return AdversaryMixture.point_mass(losses.num_vertices, int(np.argmax(gains)))


def adversary_external_regret(
    history: Sequence[tuple[AdversaryMixture, OccupancyMeasure]], losses: LossSet
) -> float:
    """External regret of the played mixtures against the best fixed vertex.

    ``max_i sum_t <l_i, d_t> - sum_t <l_t, d_t>`` over the recorded
    (mixture, feedback) rounds; an empty history has zero regret.
    """
    if not history:
        return 0.0
    per_vertex = np.zeros(losses.num_vertices)
    realized = 0.0
    for mixture, feedback in history:
        gains = vertex_payoffs(losses, feedback)
        per_vertex += gains
        realized += float(mixture.weights @ gains)
    return float(per_vertex.max() - realized)


class MwuAdversary:
    """Round-driver for the multiplicative-weights adversary."""

    def __init__(self, losses: LossSet, step_schedule: Callable[[int], float]):
        self.losses = losses
        self.state = AdversaryState(
            mixture=AdversaryMixture.uniform(losses.num_vertices),
            round=1,
            step_schedule=step_schedule,
        )

    @property
    def mixture(self) -> AdversaryMixture:
        return self.state.mixture

    def step_rate(self, t: int) -> float:
        return self.state.step_schedule(t)

    def observe(self, feedback: OccupancyMeasure) -> None:
        self.state = mwu_adversary_step(self.state, self.losses, feedback)


class BestResponseAdversary:
    """Plays the pure best response to the last observed occupancy."""

    def __init__(self, losses: LossSet):
        self.losses = losses
        self.mixture = AdversaryMixture.uniform(losses.num_vertices)

    def step_rate(self, t: int) -> float:
        return math.nan

    def observe(self, feedback: OccupancyMeasure) -> None:
        self.mixture = best_response_adversary_step(self.losses, feedback)


class ObliviousAdversary:
    """Feedback-blind baseline: a seeded random mixture every round."""

    def __init__(self, losses: LossSet, seed_key: Sequence[int]):
        self.losses = losses
        self._rng = np.random.default_rng(list(seed_key))
        self.mixture = self._draw()

    def _draw(self) -> AdversaryMixture:
        return AdversaryMixture(self._rng.dirichlet(np.ones(self.losses.num_vertices)))

    def step_rate(self, t: int) -> float:
        return math.nan

    def observe(self, feedback: OccupancyMeasure) -> None:
        self.mixture = self._draw()


def loss_set_to_json(losses: LossSet) -> str:
    """Serialize with row-major (state, action) flattening per vertex."""
    l, s, a = losses.vertices.shape
    return json.dumps({"losses": losses.vertices.reshape(l, s * a).tolist()})


def loss_set_from_json(text: str, num_states: int, num_actions: int) -> LossSet:
    """Load and fully validate a loss set from its JSON document."""
    try:
        doc = json.loads(text)
        flat = np.array(doc["losses"], dtype=float)
        if flat.ndim != 2 or flat.shape[1] != num_states * num_actions:
            raise ConfigurationError(
                f"each loss row must have {num_states * num_actions} entries"
            )
        return LossSet(flat.reshape(flat.shape[0], num_states, num_actions))
    except ConfigurationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed loss document: {exc}") from exc
