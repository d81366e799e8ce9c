"""Online-MDP learning against strategic adversaries.

Library layout:

* :mod:`omdpsim.mdp_core` — exact average-reward MDP primitives;
* :mod:`omdpsim.adversaries` — loss-vertex adversaries (MWU, best response,
  oblivious);
* :mod:`omdpsim.agents` — the expert, oracle-expert, and last-round
  convergence agents;
* :mod:`omdpsim.equilibrium` — minimax solver for the induced
  single-controller zero-sum game;
* :mod:`omdpsim.harness` — seeded instances, the round loop, metrics, and
  reporting (CLI in :mod:`omdpsim.cli`).
"""

from .adversaries import (
    AdversaryMixture,
    AdversaryState,
    LossSet,
    adversary_external_regret,
    anytime_step_schedule,
    best_response_adversary_step,
    fixed_horizon_step_schedule,
    loss_set_from_json,
    loss_set_to_json,
    mwu_adversary_step,
    realized_loss,
    vertex_payoffs,
)
from .agents import (
    ExpertInstance,
    LrcState,
    MdpEState,
    MdpOoeState,
    feedback_scale,
    lrc_init,
    lrc_next_policy,
    lrc_observe,
    lrc_stability_check,
    mdpe_init,
    mdpe_next_policy,
    mdpe_observe,
    mdpooe_init,
    mdpooe_next_policy,
    mdpooe_observe,
)
from .equilibrium import (
    EquilibriumSolution,
    SupportReport,
    enumerate_deterministic_policies,
    epsilon_ne_certify,
    exploitability,
    matrix_game_oracle,
    solve_game,
    support_report,
)
from .errors import (
    ConfigurationError,
    ErgodicityError,
    InvalidOccupancyError,
    NumericalError,
    OmdpError,
    SolverError,
)
from .harness import (
    RegretReport,
    RunConfig,
    RunResult,
    config_from_mapping,
    generate_instance,
    generate_losses,
    generate_model,
    load_config,
    policy_regret,
    regret_report,
    render_report,
    run,
    run_loop,
    stationary_regret,
    sweep,
)
from .mdp_core import (
    BiasSolution,
    DeterministicPolicy,
    LossVector,
    MdpModel,
    MixingCertificate,
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

__version__ = "0.1.0"
