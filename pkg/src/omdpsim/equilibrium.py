"""Exact solver for the induced single-controller zero-sum game.

The agent's strategy space is the occupancy polytope (joint stationary
distributions satisfying the flow constraints); the adversary mixes over
its loss vertices.  The minimax problem ``min_d max_i <l_i, d>`` is a small
linear program solved by a self-contained dense two-phase simplex with
Bland's rule, so results are deterministic down to the pivot sequence.
A brute-force matrix-game oracle over all deterministic policies provides
independent validation at desk scale.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .adversaries import AdversaryMixture, LossSet, realized_loss, vertex_payoffs
from .errors import ConfigurationError, NumericalError, SolverError
from .mdp_core import (
    MdpModel,
    OccupancyMeasure,
    StochasticPolicy,
    average_loss,
    best_response,
    occupancy_of_policy,
    policy_of_occupancy,
)

GAP_TOL = 1e-6
_PIVOT_TOL = 1e-10
_ENUMERATION_LIMIT = 10_000


@dataclass(frozen=True, eq=False)
class EquilibriumSolution:
    """Minimax value and certified equilibrium pair of the induced game."""

    value: float
    agent_occupancy: OccupancyMeasure
    agent_policy: StochasticPolicy
    adversary_mixture: AdversaryMixture
    duality_gap: float


@dataclass(frozen=True)
class SupportReport:
    """Equilibrium support sizes of the pure-strategy matrix form."""

    agent_support_size: int
    adversary_support_size: int
    threshold: float


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    for r in range(tableau.shape[0]):
        if r != row and tableau[r, col] != 0.0:
            tableau[r] -= tableau[r, col] * tableau[row]
    basis[row] = col


def _run_simplex(
    tableau: np.ndarray, basis: np.ndarray, cost: np.ndarray, allowed: np.ndarray
) -> None:
    """Minimize ``cost`` over the current tableau with Bland's rule."""
    m, width = tableau.shape
    max_iters = 200 * (m + width)
    for _ in range(max_iters):
        reduced = cost - cost[basis] @ tableau[:, :-1]
        entering = -1
        for j in np.flatnonzero(allowed):
            if reduced[j] < -_PIVOT_TOL:
                entering = int(j)
                break
        if entering < 0:
            return
        col = tableau[:, entering]
        rows = np.flatnonzero(col > _PIVOT_TOL)
        if rows.size == 0:
            raise SolverError("linear program is unbounded")
        ratios = tableau[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
        leaving = int(ties[np.argmin(basis[ties])])
        _pivot(tableau, basis, leaving, entering)
    raise SolverError("simplex iteration cap exceeded")


def _simplex_min(
    c: np.ndarray, a_eq: np.ndarray, b_eq: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Solve ``min c.x  s.t.  a_eq x = b_eq, x >= 0``.

    Returns the primal solution, the equality-constraint duals, and the
    objective value.  Two-phase dense simplex; redundant equality rows are
    dropped after phase 1 and receive zero duals.
    """
    a = np.array(a_eq, dtype=float)
    b = np.array(b_eq, dtype=float)
    m, n = a.shape
    signs = np.where(b < 0.0, -1.0, 1.0)
    a *= signs[:, None]
    b *= signs
    row_ids = np.arange(m)

    tableau = np.hstack([a, np.eye(m), b[:, None]])
    basis = n + np.arange(m)
    phase1_cost = np.concatenate([np.zeros(n), np.ones(m)])
    allowed = np.ones(n + m, dtype=bool)
    _run_simplex(tableau, basis, phase1_cost, allowed)
    if float(phase1_cost[basis] @ tableau[:, -1]) > 1e-8:
        raise NumericalError("linear program is infeasible")

    # Drive leftover artificial variables out of the basis; a row with no
    # eligible pivot is redundant and is dropped.
    keep = np.ones(tableau.shape[0], dtype=bool)
    for r in range(tableau.shape[0]):
        if basis[r] < n:
            continue
        candidates = np.flatnonzero(np.abs(tableau[r, :n]) > _PIVOT_TOL)
        if candidates.size:
            _pivot(tableau, basis, r, int(candidates[0]))
        else:
            keep[r] = False
    tableau = tableau[keep]
    basis = basis[keep]
    row_ids = row_ids[keep]

    phase2_cost = np.concatenate([np.asarray(c, dtype=float), np.zeros(m)])
    allowed = np.concatenate([np.ones(n, dtype=bool), np.zeros(m, dtype=bool)])
    _run_simplex(tableau, basis, phase2_cost, allowed)

    x = np.zeros(n)
    primal_rows = basis < n
    x[basis[primal_rows]] = tableau[primal_rows, -1]
    duals = np.zeros(m)
    duals[row_ids] = phase2_cost[basis] @ tableau[:, n : n + m][:, row_ids]
    duals *= signs
    return x, duals, float(phase2_cost[basis] @ tableau[:, -1])


def minimax_over_polytope(
    payoff_rows: np.ndarray, a_eq: np.ndarray, b_eq: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Minimize ``max_j payoff_rows[j] . x`` over ``{a_eq x = b_eq, x >= 0}``.

    Solved as the epigraph program ``min t : payoff_rows[j].x <= t``.  The
    opponent's equilibrium weights are recovered from the duals of the
    epigraph constraints.
    """
    payoff_rows = np.asarray(payoff_rows, dtype=float)
    a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
    b_eq = np.asarray(b_eq, dtype=float)
    j, n = payoff_rows.shape
    m_eq = a_eq.shape[0]
    a = np.zeros((m_eq + j, n + 1 + j))
    a[:m_eq, :n] = a_eq
    a[m_eq:, :n] = payoff_rows
    a[m_eq:, n] = -1.0
    a[m_eq:, n + 1 :] = np.eye(j)
    b = np.concatenate([b_eq, np.zeros(j)])
    c = np.zeros(n + 1 + j)
    c[n] = 1.0
    x_full, duals, value = _simplex_min(c, a, b)
    weights = np.clip(-duals[m_eq:], 0.0, None)
    total = weights.sum()
    if total < 1e-9:
        raise NumericalError("degenerate duals: cannot recover opponent weights")
    return value, x_full[:n], weights / total


def occupancy_polytope_constraints(model: MdpModel) -> tuple[np.ndarray, np.ndarray]:
    """Equality system of the occupancy polytope over flattened (s, a) mass.

    Flow constraints (one per state, the last dropped as redundant) plus
    normalization to total mass one.
    """
    s, a = model.num_states, model.num_actions
    n = s * a
    flow = np.repeat(np.eye(s), a, axis=1) - model.transition.transpose(2, 0, 1).reshape(s, n)
    a_eq = np.vstack([flow[:-1], np.ones((1, n))])
    b_eq = np.concatenate([np.zeros(s - 1), [1.0]])
    return a_eq, b_eq


def solve_game(model: MdpModel, losses: LossSet) -> EquilibriumSolution:
    """Value and equilibrium pair of the induced zero-sum game.

    Certifies the solution post hoc: both exploitability sides and the
    combined duality gap must come in under ``1e-6`` or a
    :class:`NumericalError` is raised with diagnostics.
    """
    s, a = model.num_states, model.num_actions
    if losses.vertices.shape[1:] != (s, a):
        raise ConfigurationError("loss set shape does not match model")
    a_eq, b_eq = occupancy_polytope_constraints(model)
    payoff_rows = losses.vertices.reshape(losses.num_vertices, s * a)
    value, d_flat, weights = minimax_over_polytope(payoff_rows, a_eq, b_eq)
    d_star = OccupancyMeasure(np.clip(d_flat, 0.0, None).reshape(s, a))
    pi_star = policy_of_occupancy(model, d_star)
    l_star = AdversaryMixture(weights)
    agent_gap = float(vertex_payoffs(losses, d_star).max() - value)
    adv_gap = _adversary_gap(l_star, losses, model, value)
    gap = agent_gap + adv_gap
    if gap > GAP_TOL or agent_gap < -1e-7 or adv_gap < -1e-7:
        raise NumericalError(
            f"equilibrium not certified: value={value:.9f} "
            f"agent_gap={agent_gap:.3e} adversary_gap={adv_gap:.3e}"
        )
    return EquilibriumSolution(
        value=value,
        agent_occupancy=d_star,
        agent_policy=pi_star,
        adversary_mixture=l_star,
        duality_gap=gap,
    )


def enumerate_deterministic_policies(
    num_states: int, num_actions: int, limit: int = _ENUMERATION_LIMIT
) -> np.ndarray:
    """All deterministic policies in lexicographic order, as an (N, S) array."""
    count = num_actions**num_states
    if count > limit:
        raise ConfigurationError(
            f"{count} deterministic policies exceed the enumeration limit {limit}"
        )
    return np.array(
        list(itertools.product(range(num_actions), repeat=num_states)), dtype=np.int64
    )


def matrix_game_oracle(
    model: MdpModel, losses: LossSet
) -> tuple[float, np.ndarray, np.ndarray]:
    """Brute-force value of the game in pure-strategy matrix form.

    Enumerates every deterministic policy, builds the payoff matrix
    ``M[i, j] = <l_j, d_{pi_i}>``, and solves the matrix game exactly.
    Returns the value, the row mixture over deterministic policies, and the
    column mixture over loss vertices.
    """
    policies = enumerate_deterministic_policies(model.num_states, model.num_actions)
    occupancies = np.stack(
        [
            occupancy_of_policy(
                model,
                StochasticPolicy(_one_hot_rows(actions, model.num_actions)),
            ).mass
            for actions in policies
        ]
    )
    payoff = occupancies.reshape(len(policies), -1) @ losses.vertices.reshape(
        losses.num_vertices, -1
    ).T
    value, row_mixture, col_mixture = minimax_over_polytope(
        payoff.T, np.ones((1, len(policies))), np.array([1.0])
    )
    return value, row_mixture, col_mixture


def _one_hot_rows(actions: np.ndarray, num_actions: int) -> np.ndarray:
    rows = np.zeros((actions.size, num_actions))
    rows[np.arange(actions.size), actions] = 1.0
    return rows


def _adversary_gap(
    mixture: AdversaryMixture, losses: LossSet, model: MdpModel, value: float
) -> float:
    played = realized_loss(mixture, losses)
    reply = best_response(model, played)
    reply_occ = occupancy_of_policy(model, reply.to_stochastic(model.num_actions))
    return float(value - average_loss(reply_occ, played))


def exploitability(
    strategy: OccupancyMeasure | AdversaryMixture,
    losses: LossSet,
    model: MdpModel,
    value: float,
) -> float:
    """One-sided exploitability against the game value.

    Agent side (occupancy): ``max_i <l_i, d> - v``.  Adversary side
    (mixture): ``v`` minus the average loss of the exact best response to
    the realized loss.  Both are nonnegative up to round-off.
    """
    if isinstance(strategy, OccupancyMeasure):
        return float(vertex_payoffs(losses, strategy).max() - value)
    if isinstance(strategy, AdversaryMixture):
        return _adversary_gap(strategy, losses, model, value)
    raise ConfigurationError(f"unsupported strategy type {type(strategy).__name__}")


def epsilon_ne_certify(
    d: OccupancyMeasure,
    mixture: AdversaryMixture,
    losses: LossSet,
    model: MdpModel,
    value: float | None = None,
) -> float:
    """Smallest certified epsilon for the pair: max of the two exploitability sides."""
    if value is None:
        value = solve_game(model, losses).value
    return max(
        exploitability(d, losses, model, value),
        exploitability(mixture, losses, model, value),
    )


def support_report(
    model: MdpModel, losses: LossSet, threshold: float = 1e-9
) -> SupportReport:
    """Support sizes of the matrix-form equilibrium above a mass threshold."""
    _, row_mixture, col_mixture = matrix_game_oracle(model, losses)
    return SupportReport(
        agent_support_size=int((row_mixture > threshold).sum()),
        adversary_support_size=int((col_mixture > threshold).sum()),
        threshold=threshold,
    )
