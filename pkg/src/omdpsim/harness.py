"""Experiment driver: seeded instances, the agent/adversary round loop,
regret and convergence metrics, and reproducible reporting.

A run is fully determined by its config (seeds included).  The loop couples
one agent with one adversary: each round the agent emits a policy, the
adversary charges the mixture it formed from last round's occupancy
feedback, both observe, and the realized joint distribution is propagated
exactly from the start distribution.  Results persist as ``records.npz``
plus a config echo; report rendering is a pure function of those files, so
re-rendering is byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversaries import (
    AdversaryMixture,
    BestResponseAdversary,
    LossSet,
    MwuAdversary,
    ObliviousAdversary,
    anytime_step_schedule,
    fixed_horizon_step_schedule,
    loss_set_from_json,
    realized_loss,
    vertex_payoffs,
)
from .agents import (
    DEFAULT_TAU_FLOOR,
    FixedAgent,
    LrcAgent,
    MdpEAgent,
    MdpOoeAgent,
    feedback_scale,
)
from .equilibrium import (
    EquilibriumSolution,
    enumerate_deterministic_policies,
    epsilon_ne_certify,
    solve_game,
    support_report,
)
from .errors import ConfigurationError
from .mdp_core import (
    DeterministicPolicy,
    LossVector,
    MdpModel,
    OccupancyMeasure,
    StochasticPolicy,
    average_loss,
    mixing_time_bound,
    model_from_json,
    occupancy_of_policy,
)

# Sub-stream tags appended to the run seed so the model, losses, agent, and
# adversary draw from decoupled generators.
_MODEL_STREAM = 0
_LOSS_STREAM = 1
_AGENT_STREAM = 2
_ADVERSARY_STREAM = 3

_MAX_SEED = 2**64

ROUNDS_COLUMNS = (
    "t",
    "stat_loss",
    "realized_loss",
    "eps_avg",
    "window",
    "alpha",
    "re_dist",
    "cum_stat_loss",
    "cum_realized_loss",
)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    source: str = "generated"
    seed: int | None = None
    num_states: int = 3
    num_actions: int = 3
    mixing: float = 0.1
    path: str | None = None


@dataclass(frozen=True)
class LossConfig:
    source: str = "generated"
    seed: int | None = None
    num_vectors: int = 4
    path: str | None = None


@dataclass(frozen=True)
class AgentConfig:
    kind: str = "mdpe"
    epsilon: float = 0.05
    lbar_mode: str = "window"
    beta: float = 1.0
    tau_floor: float = DEFAULT_TAU_FLOOR
    fixed_actions: tuple[int, ...] | None = None


@dataclass(frozen=True)
class AdversaryConfig:
    kind: str = "mwu"
    schedule: str = "anytime"
    step_cap: float | None = None


@dataclass(frozen=True)
class MetricsConfig:
    equilibrium: bool = True
    regret: bool = True
    eps_stride: int = 0  # 0 selects ~256 evenly spaced checkpoints
    candidates: str = "enumerate"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    horizon: int = 1000
    outdir: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def model_seed(self) -> int:
        return self.seed if self.model.seed is None else self.model.seed

    def loss_seed(self) -> int:
        return self.seed if self.losses.seed is None else self.losses.seed


_AGENT_KINDS = ("mdpe", "mdpooe", "mdpooe_eps", "lrc", "fixed")
_ADVERSARY_KINDS = ("mwu", "best_response", "oblivious")


def _build_section(cls, doc: dict, name: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in [{name}]: {sorted(unknown)}")
    if "fixed_actions" in doc and doc["fixed_actions"] is not None:
        doc = dict(doc, fixed_actions=tuple(int(a) for a in doc["fixed_actions"]))
    return cls(**doc)


def config_from_mapping(doc: dict) -> RunConfig:
    """Build and validate a run config from a parsed TOML/JSON document."""
    doc = dict(doc)
    sections = {
        "model": (ModelConfig, "model"),
        "losses": (LossConfig, "losses"),
        "agent": (AgentConfig, "agent"),
        "adversary": (AdversaryConfig, "adversary"),
        "metrics": (MetricsConfig, "metrics"),
    }
    kwargs = {}
    for key, (cls, name) in sections.items():
        sub = doc.pop(key, {})
        if not isinstance(sub, dict):
            raise ConfigurationError(f"[{name}] must be a table")
        kwargs[key] = _build_section(cls, sub, name)
    allowed = {"seed", "horizon", "outdir"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigurationError(f"unknown top-level keys: {sorted(unknown)}")
    config = RunConfig(
        seed=int(doc.get("seed", 0)),
        horizon=int(doc.get("horizon", 1000)),
        outdir=doc.get("outdir"),
        **kwargs,
    )
    validate_config(config)
    return config


def validate_config(config: RunConfig) -> None:
    if config.horizon < 1:
        raise ConfigurationError("horizon must be at least 1")
    for seed in (config.seed, config.model.seed, config.losses.seed):
        if seed is not None and not (0 <= seed < _MAX_SEED):
            raise ConfigurationError("seeds must be unsigned 64-bit integers")
    m = config.model
    if m.source not in ("generated", "file"):
        raise ConfigurationError(f"unknown model source {m.source!r}")
    if m.source == "file" and not m.path:
        raise ConfigurationError("model.path required for file source")
    if m.source == "generated":
        if m.num_states < 1 or m.num_actions < 1:
            raise ConfigurationError("model sizes must be positive")
        if not (0.0 < m.mixing <= 1.0):
            raise ConfigurationError("mixing weight must lie in (0, 1]")
    lc = config.losses
    if lc.source not in ("generated", "file"):
        raise ConfigurationError(f"unknown losses source {lc.source!r}")
    if lc.source == "file" and not lc.path:
        raise ConfigurationError("losses.path required for file source")
    if lc.source == "generated" and lc.num_vectors < 1:
        raise ConfigurationError("num_vectors must be positive")
    a = config.agent
    if a.kind not in _AGENT_KINDS:
        raise ConfigurationError(f"unknown agent kind {a.kind!r}")
    if a.epsilon < 0.0:
        raise ConfigurationError("agent.epsilon must be nonnegative")
    if a.lbar_mode not in ("window", "total"):
        raise ConfigurationError(f"unknown lbar_mode {a.lbar_mode!r}")
    if a.beta < 1.0:
        raise ConfigurationError("agent.beta must be at least 1")
    if a.tau_floor <= 0.0:
        raise ConfigurationError("agent.tau_floor must be positive")
    if a.kind == "fixed" and a.fixed_actions is None:
        raise ConfigurationError("agent.fixed_actions required for the fixed agent")
    adv = config.adversary
    if adv.kind not in _ADVERSARY_KINDS:
        raise ConfigurationError(f"unknown adversary kind {adv.kind!r}")
    if adv.schedule not in ("anytime", "fixed_horizon"):
        raise ConfigurationError(f"unknown adversary schedule {adv.schedule!r}")
    if adv.step_cap is not None and adv.step_cap <= 0.0:
        raise ConfigurationError("adversary.step_cap must be positive")
    if config.metrics.eps_stride < 0:
        raise ConfigurationError("metrics.eps_stride must be nonnegative")
    if config.metrics.candidates != "enumerate":
        raise ConfigurationError("metrics.candidates must be 'enumerate'")


def config_to_mapping(config: RunConfig) -> dict:
    doc = dataclasses.asdict(config)
    if doc["agent"]["fixed_actions"] is not None:
        doc["agent"]["fixed_actions"] = list(doc["agent"]["fixed_actions"])
    return doc


def load_config(path: str | Path) -> RunConfig:
    """Parse a TOML or JSON run config from disk."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} not found")
    if path.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    return config_from_mapping(doc)


# ---------------------------------------------------------------------------
# Instance generation and loading
# ---------------------------------------------------------------------------


def generate_model(seed: int, num_states: int, num_actions: int, mixing: float) -> MdpModel:
    """Seeded random model with a uniform-mixing component.

    Every kernel row is ``(1 - mixing) * normalized_random + mixing / |S|``,
    which caps the pairwise row distance at ``1 - mixing`` and keeps every
    state reachable under every policy.  The start distribution is uniform.
    """
    if not (0.0 < mixing <= 1.0):
        raise ConfigurationError("mixing weight must lie in (0, 1]")
    rng = np.random.default_rng([seed, _MODEL_STREAM])
    raw = rng.random((num_states, num_actions, num_states))
    raw /= raw.sum(axis=2, keepdims=True)
    transition = (1.0 - mixing) * raw + mixing / num_states
    transition /= transition.sum(axis=2, keepdims=True)
    return MdpModel(
        num_states=num_states,
        num_actions=num_actions,
        transition=transition,
        initial_dist=np.full(num_states, 1.0 / num_states),
    )


def generate_losses(seed: int, num_states: int, num_actions: int, num_vectors: int) -> LossSet:
    """Seeded loss vertices with entries iid uniform on [0, 1]."""
    rng = np.random.default_rng([seed, _LOSS_STREAM])
    return LossSet(rng.random((num_vectors, num_states, num_actions)))


def generate_instance(
    seed: int, num_states: int, num_actions: int, num_vectors: int, mixing: float
) -> tuple[MdpModel, LossSet]:
    """Model plus loss set, fully determined by one seed."""
    return (
        generate_model(seed, num_states, num_actions, mixing),
        generate_losses(seed, num_states, num_actions, num_vectors),
    )


def build_instance(config: RunConfig) -> tuple[MdpModel, LossSet]:
    if config.model.source == "file":
        model = model_from_json(Path(config.model.path).read_text())
    else:
        model = generate_model(
            config.model_seed(),
            config.model.num_states,
            config.model.num_actions,
            config.model.mixing,
        )
    if config.losses.source == "file":
        losses = loss_set_from_json(
            Path(config.losses.path).read_text(), model.num_states, model.num_actions
        )
    else:
        losses = generate_losses(
            config.loss_seed(), model.num_states, model.num_actions, config.losses.num_vectors
        )
    if losses.vertices.shape[1:] != (model.num_states, model.num_actions):
        raise ConfigurationError("loss set shape does not match model")
    return model, losses


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def _build_schedule(config: AdversaryConfig, num_vertices: int, horizon: int):
    if config.schedule == "fixed_horizon":
        return fixed_horizon_step_schedule(num_vertices, horizon, cap=config.step_cap)
    return anytime_step_schedule(num_vertices, cap=config.step_cap)


def make_adversary(config: RunConfig, losses: LossSet):
    kind = config.adversary.kind
    if kind == "mwu":
        return MwuAdversary(
            losses, _build_schedule(config.adversary, losses.num_vertices, config.horizon)
        )
    if kind == "best_response":
        return BestResponseAdversary(losses)
    if kind == "oblivious":
        return ObliviousAdversary(losses, [config.seed, _ADVERSARY_STREAM])
    raise ConfigurationError(f"unknown adversary kind {kind!r}")


def make_agent(
    config: RunConfig,
    model: MdpModel,
    losses: LossSet,
    equilibrium: EquilibriumSolution | None,
):
    a = config.agent
    if a.kind == "mdpe":
        return MdpEAgent(model, tau_floor=a.tau_floor)
    if a.kind in ("mdpooe", "mdpooe_eps"):
        return MdpOoeAgent(
            model,
            losses,
            rng=np.random.default_rng([config.seed, _AGENT_STREAM]),
            tau_floor=a.tau_floor,
            lbar_mode=a.lbar_mode,
            epsilon=a.epsilon if a.kind == "mdpooe_eps" else 0.0,
        )
    if a.kind == "lrc":
        if equilibrium is None:
            raise ConfigurationError("the lrc agent needs the equilibrium solution")
        return LrcAgent(model, equilibrium, beta=a.beta)
    if a.kind == "fixed":
        actions = np.asarray(a.fixed_actions, dtype=np.int64)
        if actions.shape != (model.num_states,):
            raise ConfigurationError("fixed_actions length must equal the state count")
        policy = DeterministicPolicy(actions).to_stochastic(model.num_actions)
        return FixedAgent(model, policy)
    raise ConfigurationError(f"unknown agent kind {a.kind!r}")


# ---------------------------------------------------------------------------
# The round loop
# ---------------------------------------------------------------------------


def _relative_entropy(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0.0
    with np.errstate(divide="ignore"):
        return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def _entropy(p: np.ndarray) -> float:
    mask = p > 0.0
    return float(-np.sum(p[mask] * np.log(p[mask])))


@dataclass
class RunResult:
    config: RunConfig
    model: MdpModel
    losses: LossSet
    equilibrium: EquilibriumSolution | None
    arrays: dict[str, np.ndarray]

    @property
    def horizon(self) -> int:
        return int(self.arrays["stat_loss"].size)


def run_loop(config: RunConfig) -> RunResult:
    """Execute the coupled round loop and all configured metrics."""
    validate_config(config)
    model, losses = build_instance(config)
    cert = mixing_time_bound(model)
    needs_eq = config.metrics.equilibrium or config.agent.kind == "lrc"
    equilibrium = solve_game(model, losses) if needs_eq else None
    agent = make_agent(config, model, losses, equilibrium)
    adversary = make_adversary(config, losses)
    t_total = config.horizon
    s, a_n = model.num_states, model.num_actions
    l_n = losses.num_vertices

    stat_loss = np.empty(t_total)
    realized = np.empty(t_total)
    entropy = np.empty(t_total)
    mu = np.empty(t_total)
    window = np.full(t_total, np.nan)
    alpha = np.full(t_total, np.nan)
    re_dist = np.full(t_total, np.nan)
    l1_dist = np.full(t_total, np.nan)
    mixtures = np.empty((t_total, l_n))
    occupancies = np.empty((t_total, s, a_n))
    policies = np.empty((t_total, s, a_n))

    lstar = equilibrium.adversary_mixture.weights if equilibrium is not None else None
    v_joint = None
    for idx in range(t_total):
        t = idx + 1
        policy = agent.next_policy(t)
        hint = agent.occupancy_hint()
        d = hint if hint is not None else occupancy_of_policy(model, policy)
        mixture = adversary.mixture
        loss = realized_loss(mixture, losses)
        if t == 1:
            v_joint = model.initial_dist[:, None] * policy.action_probs
        else:
            marginal = np.einsum("sa,sat->t", v_joint, model.transition)
            v_joint = policy.action_probs * marginal[:, None]
        stat_loss[idx] = average_loss(d, loss)
        realized[idx] = float(np.sum(v_joint * loss.loss))
        entropy[idx] = _entropy(mixture.weights)
        mu[idx] = adversary.step_rate(t)
        mixtures[idx] = mixture.weights
        occupancies[idx] = d.mass
        policies[idx] = policy.action_probs
        if lstar is not None:
            re_dist[idx] = _relative_entropy(lstar, mixture.weights)
            l1_dist[idx] = float(np.abs(mixture.weights - lstar).sum())
        extras = agent.extras()
        if "window" in extras:
            window[idx] = extras["window"]
        if "alpha" in extras:
            alpha[idx] = extras["alpha"]
        agent.observe(t, loss, occupancy=d)
        adversary.observe(d)

    arrays = {
        "stat_loss": stat_loss,
        "realized_loss": realized,
        "entropy": entropy,
        "mu": mu,
        "window": window,
        "alpha": alpha,
        "re_dist": re_dist,
        "l1_dist": l1_dist,
        "mixtures": mixtures,
        "occupancies": occupancies,
        "policies": policies,
        "tau": np.float64(cert.tau),
        "delta_max": np.float64(cert.delta_max),
        "expert_scale": np.float64(
            feedback_scale(model, config.agent.tau_floor) if cert.bounded else np.nan
        ),
    }
    if equilibrium is not None:
        arrays.update(
            {
                "eq_value": np.float64(equilibrium.value),
                "eq_gap": np.float64(equilibrium.duality_gap),
                "eq_occupancy": equilibrium.agent_occupancy.mass,
                "eq_policy": equilibrium.agent_policy.action_probs,
                "eq_mixture": equilibrium.adversary_mixture.weights,
            }
        )
        eps_rounds, eps_values = _eps_checkpoints(
            config, model, losses, equilibrium, occupancies, mixtures
        )
        arrays["eps_rounds"] = eps_rounds
        arrays["eps_values"] = eps_values
    result = RunResult(
        config=config, model=model, losses=losses, equilibrium=equilibrium, arrays=arrays
    )
    if config.metrics.regret:
        report = regret_report(config, model, losses, equilibrium, result)
        arrays["cand_labels"] = np.array(report.candidate_labels)
        arrays["cand_stationary"] = report.candidate_stationary
        arrays["cand_realized"] = report.candidate_realized
    return result


def _eps_checkpoints(
    config: RunConfig,
    model: MdpModel,
    losses: LossSet,
    equilibrium: EquilibriumSolution,
    occupancies: np.ndarray,
    mixtures: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Exploitability of the running-average pair at evenly spaced rounds."""
    t_total = occupancies.shape[0]
    stride = config.metrics.eps_stride or max(1, t_total // 256)
    rounds = sorted(set(range(stride, t_total + 1, stride)) | {t_total})
    cum_d = np.cumsum(occupancies, axis=0)
    cum_x = np.cumsum(mixtures, axis=0)
    values = np.empty(len(rounds))
    for i, t in enumerate(rounds):
        d_avg = OccupancyMeasure(cum_d[t - 1] / t)
        x_avg = AdversaryMixture(cum_x[t - 1] / t)
        values[i] = epsilon_ne_certify(
            d_avg, x_avg, losses, model, value=equilibrium.value
        )
    return np.asarray(rounds, dtype=np.int64), values


# ---------------------------------------------------------------------------
# Counterfactual replay and regret
# ---------------------------------------------------------------------------


@dataclass
class RegretReport:
    """Regret of the run against the best fixed comparator under replay."""

    policy_regret: float
    stationary_regret: float
    comparator_policy: str
    stationary_comparator: str
    candidate_labels: list[str]
    candidate_stationary: np.ndarray
    candidate_realized: np.ndarray


def candidate_policies(
    config: RunConfig, model: MdpModel, equilibrium: EquilibriumSolution | None
) -> tuple[list[str], np.ndarray]:
    """Comparator class: every deterministic policy plus the equilibrium policy."""
    dets = enumerate_deterministic_policies(model.num_states, model.num_actions)
    labels = ["det:" + "".join(str(int(x)) for x in acts) for acts in dets]
    rows = np.zeros((len(dets), model.num_states, model.num_actions))
    idx = np.arange(model.num_states)
    for i, acts in enumerate(dets):
        rows[i, idx, acts] = 1.0
    if equilibrium is not None:
        labels.append("pi_star")
        rows = np.concatenate([rows, equilibrium.agent_policy.action_probs[None]], axis=0)
    return labels, rows


def replay_fixed_candidates(
    config: RunConfig,
    model: MdpModel,
    losses: LossSet,
    policies: np.ndarray,
    horizon: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Rerun the (algorithmic, seeded) adversary against each fixed policy.

    Vectorized over candidates: returns the total stationary loss
    ``sum_t <l_t^pi, d_pi>`` and total realized expected loss
    ``sum_t <l_t^pi, v_t^pi>`` per candidate.
    """
    c = policies.shape[0]
    l_n = losses.num_vertices
    occs = np.stack(
        [occupancy_of_policy(model, StochasticPolicy(rows)).mass for rows in policies]
    )
    gains = occs.reshape(c, -1) @ losses.vertices.reshape(l_n, -1).T  # (C, L)
    kind = config.adversary.kind
    weights = np.full((c, l_n), 1.0 / l_n)
    oblivious_draws = None
    schedule = None
    if kind == "oblivious":
        rng = np.random.default_rng([config.seed, _ADVERSARY_STREAM])
        oblivious_draws = rng.dirichlet(np.ones(l_n), size=horizon)
        weights = np.broadcast_to(oblivious_draws[0], (c, l_n)).copy()
    elif kind == "mwu":
        schedule = _build_schedule(config.adversary, l_n, horizon)

    vertices_flat = losses.vertices.reshape(l_n, -1)
    stationary_totals = np.zeros(c)
    realized_totals = np.zeros(c)
    v_joint = model.initial_dist[None, :, None] * policies
    for t in range(1, horizon + 1):
        if t > 1:
            marginal = np.einsum("csa,sat->ct", v_joint, model.transition)
            v_joint = policies * marginal[:, :, None]
        realized_flat = weights @ vertices_flat  # (C, S*A)
        stationary_totals += np.einsum("cl,cl->c", weights, gains)
        realized_totals += np.einsum("cn,cn->c", realized_flat, v_joint.reshape(c, -1))
        if kind == "mwu":
            step = schedule(t)
            weights = weights * np.exp(step * (gains - gains.max(axis=1, keepdims=True)))
            weights /= weights.sum(axis=1, keepdims=True)
        elif kind == "best_response":
            weights = np.zeros((c, l_n))
            weights[np.arange(c), gains.argmax(axis=1)] = 1.0
        elif kind == "oblivious" and t < horizon:
            weights = np.broadcast_to(oblivious_draws[t], (c, l_n)).copy()
    return stationary_totals, realized_totals


def regret_report(
    config: RunConfig,
    model: MdpModel,
    losses: LossSet,
    equilibrium: EquilibriumSolution | None,
    result: RunResult,
) -> RegretReport:
    """Policy regret and stationary regret against replayed fixed comparators."""
    labels, rows = candidate_policies(config, model, equilibrium)
    stationary_totals, realized_totals = replay_fixed_candidates(
        config, model, losses, rows, result.horizon
    )
    actual_stationary = float(result.arrays["stat_loss"].sum())
    actual_realized = float(result.arrays["realized_loss"].sum())
    best_realized = int(realized_totals.argmin())
    best_stationary = int(stationary_totals.argmin())
    return RegretReport(
        policy_regret=actual_realized - float(realized_totals[best_realized]),
        stationary_regret=actual_stationary - float(stationary_totals[best_stationary]),
        comparator_policy=labels[best_realized],
        stationary_comparator=labels[best_stationary],
        candidate_labels=labels,
        candidate_stationary=stationary_totals,
        candidate_realized=realized_totals,
    )


def policy_regret(config: RunConfig) -> RegretReport:
    """Run the configured loop and report regret against fixed comparators."""
    result = run_loop(
        dataclasses.replace(
            config, metrics=dataclasses.replace(config.metrics, regret=True)
        )
    )
    return regret_report(config, result.model, result.losses, result.equilibrium, result)


def stationary_regret(
    config: RunConfig,
    model: MdpModel,
    losses: LossSet,
    result: RunResult,
    equilibrium: EquilibriumSolution | None = None,
) -> float:
    """Total stationary loss of the run minus the best replayed comparator."""
    report = regret_report(config, model, losses, equilibrium, result)
    return report.stationary_regret


# ---------------------------------------------------------------------------
# Convergence analysis
# ---------------------------------------------------------------------------


def step_cap_crossing(mu: np.ndarray, cap: float = 1.0 / 3.0) -> int | None:
    """First round whose adversary step size is at most ``cap``."""
    hits = np.flatnonzero(mu <= cap + 1e-12)
    return int(hits[0]) + 1 if hits.size else None


def convergence_summary(arrays: dict) -> dict:
    """Last-round convergence verdicts derived from the recorded series."""
    out: dict = {}
    re_dist = arrays["re_dist"]
    if np.isnan(re_dist).all():
        return out
    t_prime = step_cap_crossing(arrays["mu"])
    out["t_prime"] = t_prime
    if t_prime is None:
        return out
    t_total = re_dist.size
    # Pairs (2k-1, 2k+1) with 2k >= t_prime; rounds are 1-based.
    first_k = max(1, math.ceil(t_prime / 2))
    odd_pairs = [
        (2 * k - 1, 2 * k + 1) for k in range(first_k, (t_total - 1) // 2 + 1)
    ]
    violations = sum(
        1 for lo, hi in odd_pairs if re_dist[hi - 1] > re_dist[lo - 1] + 1e-12
    )
    out["re_pairs_checked"] = len(odd_pairs)
    out["re_violations"] = violations
    out["re_monotone"] = violations == 0
    l1 = arrays["l1_dist"]
    out["l1_at_t_prime"] = float(l1[t_prime - 1])
    out["l1_final"] = float(l1[-1])
    return out


# ---------------------------------------------------------------------------
# Persistence and reporting
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return ""
    return f"{x:.17g}"


def persist_run(result: RunResult, outdir: str | Path) -> Path:
    """Write the raw record arrays and the config echo to a run directory."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    np.savez(outdir / "records.npz", **result.arrays)
    with open(outdir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config_to_mapping(result.config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return outdir


def render_report(run_dir: str | Path) -> dict:
    """Render CSVs and the summary from a persisted run; byte-stable.

    Writes ``rounds.csv``, ``regret.csv``, ``convergence.csv``, and
    ``summary.json`` next to ``records.npz`` and returns the summary dict.
    """
    run_dir = Path(run_dir)
    records_path = run_dir / "records.npz"
    config_path = run_dir / "config.json"
    if not records_path.exists() or not config_path.exists():
        raise FileNotFoundError(f"{run_dir} does not contain a persisted run")
    with np.load(records_path, allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    config_doc = json.loads(config_path.read_text())

    t_total = arrays["stat_loss"].size
    cum_stat = np.cumsum(arrays["stat_loss"])
    cum_real = np.cumsum(arrays["realized_loss"])
    eps_by_round = {}
    if "eps_rounds" in arrays:
        eps_by_round = dict(
            zip(arrays["eps_rounds"].tolist(), arrays["eps_values"].tolist())
        )
    lines = [",".join(ROUNDS_COLUMNS)]
    for i in range(t_total):
        t = i + 1
        eps = eps_by_round.get(t, math.nan)
        lines.append(
            ",".join(
                [
                    str(t),
                    _fmt(arrays["stat_loss"][i]),
                    _fmt(arrays["realized_loss"][i]),
                    _fmt(eps),
                    _fmt(float(arrays["window"][i])),
                    _fmt(float(arrays["alpha"][i])),
                    _fmt(float(arrays["re_dist"][i])),
                    _fmt(cum_stat[i]),
                    _fmt(cum_real[i]),
                ]
            )
        )
    (run_dir / "rounds.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["candidate,stationary_total,realized_total"]
    if "cand_labels" in arrays:
        for label, st, rt in zip(
            arrays["cand_labels"], arrays["cand_stationary"], arrays["cand_realized"]
        ):
            lines.append(f"{label},{_fmt(float(st))},{_fmt(float(rt))}")
    (run_dir / "regret.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["t,eps_avg,re_dist,l1_dist"]
    if "eps_rounds" in arrays:
        for t, eps in zip(arrays["eps_rounds"].tolist(), arrays["eps_values"].tolist()):
            lines.append(
                ",".join(
                    [
                        str(int(t)),
                        _fmt(float(eps)),
                        _fmt(float(arrays["re_dist"][int(t) - 1])),
                        _fmt(float(arrays["l1_dist"][int(t) - 1])),
                    ]
                )
            )
    (run_dir / "convergence.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    summary = build_summary(config_doc, arrays)
    with open(run_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def build_summary(config_doc: dict, arrays: dict) -> dict:
    t_total = int(arrays["stat_loss"].size)
    summary = {
        "horizon": t_total,
        "agent": config_doc["agent"]["kind"],
        "adversary": config_doc["adversary"]["kind"],
        "seed": config_doc["seed"],
        "tau": float(arrays["tau"]),
        "delta_max": float(arrays["delta_max"]),
        "expert_scale": float(arrays["expert_scale"]),
        "tau_floor": config_doc["agent"]["tau_floor"],
        "lbar_mode": config_doc["agent"]["lbar_mode"],
        "epsilon": config_doc["agent"]["epsilon"],
        "beta": config_doc["agent"]["beta"],
        "cum_stat_loss": float(arrays["stat_loss"].sum()),
        "cum_realized_loss": float(arrays["realized_loss"].sum()),
    }
    if "eq_value" in arrays:
        summary["value"] = float(arrays["eq_value"])
        summary["duality_gap"] = float(arrays["eq_gap"])
        summary["eps_final"] = float(arrays["eps_values"][-1])
    window = arrays["window"]
    if not np.isnan(window).all():
        summary["window_count"] = int(np.nanmax(window))
    if "cand_labels" in arrays:
        st = arrays["cand_stationary"]
        rt = arrays["cand_realized"]
        labels = [str(x) for x in arrays["cand_labels"]]
        summary["stationary_regret"] = float(arrays["stat_loss"].sum() - st.min())
        summary["policy_regret"] = float(arrays["realized_loss"].sum() - rt.min())
        summary["stationary_comparator"] = labels[int(st.argmin())]
        summary["comparator_policy"] = labels[int(rt.argmin())]
    summary.update(convergence_summary(arrays))
    return summary


def run(config: RunConfig, outdir: str | Path | None = None) -> dict:
    """Execute a configured run, persist it, and render its report."""
    target = outdir if outdir is not None else config.outdir
    if target is None:
        raise ConfigurationError("no output directory configured")
    result = run_loop(config)
    persist_run(result, target)
    return render_report(target)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

_SWEEP_COLUMNS = (
    "seed",
    "value",
    "cum_stat_loss",
    "cum_realized_loss",
    "stationary_regret",
    "policy_regret",
    "eps_final",
    "window_count",
)


def _derive_sweep_config(config: RunConfig, seed: int, outdir: Path) -> RunConfig:
    model = dataclasses.replace(config.model, seed=None)
    losses = dataclasses.replace(config.losses, seed=None)
    return dataclasses.replace(
        config,
        seed=seed,
        model=model,
        losses=losses,
        outdir=str(outdir / f"seed_{seed:05d}"),
    )


def _sweep_worker(config: RunConfig) -> dict:
    summary = run(config)
    return {"seed": config.seed, "summary": summary}


def sweep(config: RunConfig, seeds: list[int], jobs: int, outdir: str | Path) -> Path:
    """Run one config across seeds and fold the summaries into one CSV.

    The fold is ordered by seed, so the aggregate is byte-identical no
    matter how many worker processes executed the runs.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tasks = [_derive_sweep_config(config, s, outdir) for s in seeds]
    if jobs <= 1:
        results = [_sweep_worker(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, tasks))
    results.sort(key=lambda r: r["seed"])
    lines = [",".join(_SWEEP_COLUMNS)]
    for item in results:
        summary = item["summary"]
        row = [str(item["seed"])]
        for col in _SWEEP_COLUMNS[1:]:
            val = summary.get(col)
            if val is None:
                row.append("")
            elif col == "window_count":
                row.append(str(int(val)))
            else:
                row.append(_fmt(float(val)))
        lines.append(",".join(row))
    path = outdir / "sweep_summary.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Solve command
# ---------------------------------------------------------------------------


def solve_summary(config: RunConfig) -> dict:
    """Equilibrium of the configured instance, as a JSON-ready document."""
    model, losses = build_instance(config)
    eq = solve_game(model, losses)
    supports = support_report(model, losses)
    return {
        "value": eq.value,
        "duality_gap": eq.duality_gap,
        "agent_occupancy": eq.agent_occupancy.mass.tolist(),
        "agent_policy": eq.agent_policy.action_probs.tolist(),
        "adversary_mixture": eq.adversary_mixture.weights.tolist(),
        "supports": {
            "agent": supports.agent_support_size,
            "adversary": supports.adversary_support_size,
            "threshold": supports.threshold,
        },
    }
