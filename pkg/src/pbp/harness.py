"""Experiment runner: algorithm/baseline matrix, episode evaluation, sweeps.

Every run is reproducible from (config, seed): the channel, the solver,
and each episode draw from independent seeded streams. Results serialize
to one CSV row per run with a fixed column schema.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .belief import UncertaintyMode
from .envs import (
    ENV_BUILDERS,
    CorruptionConfig,
    EnvInstance,
    apply_corruption,
    env_step,
    sample_initial_state,
)
from .hsvi import AlphaVectorPolicy, HsviSolver, SolveResult
from .model import Belief, VPomdpModel, mdp_value_iteration
from .perception import PerceptionOutput, SyntheticChannelSpec
from .planning_model import PlanningModel, build_planning_model, estimate_vision_obs_fn
from .pomcp import ParticleSet, PomcpPlanner, obs_bucket_for, particle_filter_update
from .updaters import UpdaterSpec

ALGORITHMS = ("pbp-hsvi", "tpbp-hsvi", "wpbp-hsvi", "tpbp-pomcp", "psrl-hsvi", "noperc", "oracle")
CSV_HEADER = "env,algo,unc_fn,eps,noise_mode,noise_p,seed,episodes,V,ci95,t_seconds,fallbacks,belief_l1"

DEFAULT_IDS_PER_CLASS = {"frozen_lake4": 40, "frozen_lake8": 40, "intersection": 40, "flower_grid": 20}
DEFAULT_ACCURACY = {"frozen_lake4": 0.95, "frozen_lake8": 0.95, "intersection": 0.95, "flower_grid": 0.9}


class ConfigError(ValueError):
    """Raised with the offending field name when a config is invalid."""


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    algo: str
    unc_fn: str = "table"
    eps: float = 0.1
    noise_mode: str = "none"  # none | additive | pure
    noise_p: float = 0.0
    channel_accuracy: float | None = None
    channel_sharpness: float = 4.0
    ids_per_class: int | None = None
    episodes: int | None = None
    budget_iterations: int = 150
    budget_seconds: float | None = None
    pomcp_simulations: int = 200
    particles: int = 1000
    invigoration: float = 0.05
    eps_explore: float = 0.1
    hsvi_max_depth: int = 40
    horizon: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.env not in ENV_BUILDERS:
            raise ConfigError(f"env: unknown environment {self.env!r}")
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"algo: unknown algorithm {self.algo!r}")
        if self.unc_fn not in ("table", "confidence", "entropy"):
            raise ConfigError(f"unc_fn: unknown uncertainty function {self.unc_fn!r}")
        if not (0.0 <= self.eps <= 1.0):
            raise ConfigError("eps: must lie in [0,1]")
        if self.noise_mode not in ("none", "additive", "pure"):
            raise ConfigError(f"noise_mode: unknown mode {self.noise_mode!r}")
        if not (0.0 <= self.noise_p <= 1.0):
            raise ConfigError("noise_p: must lie in [0,1]")
        if self.episodes is not None and self.episodes < 1:
            raise ConfigError("episodes: must be >= 1")
        if self.noise_p > 0 and self.noise_mode == "none":
            raise ConfigError("noise_mode: set additive or pure when noise_p > 0")

    @property
    def n_episodes(self) -> int:
        if self.episodes is not None:
            return self.episodes
        return 10 if self.algo == "tpbp-pomcp" else 1000

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls(**json.loads(text))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass
class ResultRecord:
    config: ExperimentConfig
    config_hash: str
    returns: list[float]
    v_mean: float
    ci95: float
    t_seconds: float
    fallbacks: int
    belief_l1: float | None
    lower_value: float | None = None
    upper_value: float | None = None
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)

    def csv_row(self) -> str:
        c = self.config
        l1 = "" if self.belief_l1 is None else repr(self.belief_l1)
        return (
            f"{c.env},{c.algo},{c.unc_fn},{c.eps!r},{c.noise_mode},{c.noise_p!r},{c.seed},"
            f"{len(self.returns)},{self.v_mean!r},{self.ci95!r},{self.t_seconds!r},{self.fallbacks},{l1}"
        )


def updater_for(cfg: ExperimentConfig) -> UpdaterSpec:
    if cfg.algo == "pbp-hsvi":
        return UpdaterSpec(mode=UncertaintyMode.none(), unc_fn=cfg.unc_fn)
    if cfg.algo in ("tpbp-hsvi", "tpbp-pomcp"):
        return UpdaterSpec(mode=UncertaintyMode.tuq(cfg.eps), unc_fn=cfg.unc_fn)
    if cfg.algo == "wpbp-hsvi":
        return UpdaterSpec(mode=UncertaintyMode.wuq(), unc_fn=cfg.unc_fn)
    if cfg.algo == "psrl-hsvi":
        return UpdaterSpec(rule="psrl", mode=UncertaintyMode.none(), unc_fn=cfg.unc_fn)
    if cfg.algo == "noperc":
        return UpdaterSpec(provider="uniform")
    if cfg.algo == "oracle":
        return UpdaterSpec(provider="oracle")
    raise ConfigError(f"algo: no updater for {cfg.algo!r}")


def build_env(cfg: ExperimentConfig) -> EnvInstance:
    """Construct the environment with its (possibly corrupted) channel."""
    name = cfg.env
    classes = {"frozen_lake4": 16, "frozen_lake8": 64, "flower_grid": 25, "intersection": 3}[name]
    spec = SyntheticChannelSpec(
        classes=classes,
        accuracy=cfg.channel_accuracy if cfg.channel_accuracy is not None else DEFAULT_ACCURACY[name],
        sharpness=cfg.channel_sharpness,
        overconfidence_on_corrupt=(name == "intersection"),
        seed=cfg.seed,
    )
    ids = cfg.ids_per_class if cfg.ids_per_class is not None else DEFAULT_IDS_PER_CLASS[name]
    env = ENV_BUILDERS[name](channel_spec=spec, ids_per_class=ids, horizon=cfg.horizon)
    if cfg.noise_p > 0:
        corr = CorruptionConfig(cfg.noise_p, cfg.noise_mode)
        env = env.with_channel(apply_corruption(env.channel, corr, seed=cfg.seed))
    return env


def build_planning_side(env: EnvInstance) -> PlanningModel:
    est = estimate_vision_obs_fn(env.channel.datasets["plan"], env.model.n_vision_classes)
    return build_planning_model(env.model, est)


_policy_cache: dict[str, SolveResult] = {}


def _plan_cache_key(cfg: ExperimentConfig) -> str:
    relevant = {
        "env": cfg.env,
        "algo": cfg.algo,
        "unc_fn": cfg.unc_fn,
        "eps": cfg.eps,
        "noise_mode": cfg.noise_mode,
        "noise_p": cfg.noise_p,
        "channel_accuracy": cfg.channel_accuracy,
        "channel_sharpness": cfg.channel_sharpness,
        "ids_per_class": cfg.ids_per_class,
        "budget_iterations": cfg.budget_iterations,
        "budget_seconds": cfg.budget_seconds,
        "eps_explore": cfg.eps_explore,
        "seed": cfg.seed,
    }
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()


def solve_hsvi(cfg: ExperimentConfig, env: EnvInstance, pm: PlanningModel, use_cache: bool = True) -> SolveResult:
    key = _plan_cache_key(cfg)
    if use_cache and key in _policy_cache:
        return _policy_cache[key]
    solver = HsviSolver(
        pm,
        env.channel.table,
        updater_for(cfg),
        eps_explore=cfg.eps_explore,
        seed=cfg.seed,
        max_depth=cfg.hsvi_max_depth,
    )
    result = solver.solve(
        budget_iterations=None if cfg.budget_seconds is not None else cfg.budget_iterations,
        budget_seconds=cfg.budget_seconds,
    )
    if use_cache:
        _policy_cache[key] = result
    return result


def clear_policy_cache() -> None:
    _policy_cache.clear()


def belief_l1(b: Belief, ps: ParticleSet, n_states: int) -> float:
    """L1 distance between an exact belief and a particle set's empirical
    distribution; 0 means equal, 2 means disjoint supports."""
    return float(np.abs(b.to_array(n_states) - ps.empirical_distribution(n_states)).sum())


def _act_output(
    env: EnvInstance, updater: UpdaterSpec, obs_id: str, true_next_state: int
) -> tuple[PerceptionOutput | None, int]:
    """Perception output and oracle label for an acting-cycle observation."""
    label = int(env.model.vision_component[true_next_state])
    if updater.provider == "model":
        return env.channel.table.predict(obs_id), label
    return None, label


def _run_hsvi_episodes(
    cfg: ExperimentConfig, env: EnvInstance, policy: AlphaVectorPolicy, updater: UpdaterSpec
) -> tuple[list[float], int]:
    model = env.model
    gamma = model.discount
    returns: list[float] = []
    fallbacks = 0
    for ep in range(cfg.n_episodes):
        rng = np.random.default_rng([cfg.seed, 1000 + ep])
        s = sample_initial_state(env, rng)
        b = model.initial_belief.copy()
        total, disc = 0.0, 1.0
        for t in range(env.horizon):
            a = policy.action(b)
            s, (obs_id, z_nv), r, done = env_step(env, s, a, rng, step_index=t)
            total += disc * r
            disc *= gamma
            if done:
                break
            out, label = _act_output(env, updater, obs_id, s)
            b, fell_back = updater.update_array(model, b, a, out, label, z_nv)
            fallbacks += int(fell_back)
        returns.append(total)
    return returns, fallbacks


def _run_pomcp_episodes(
    cfg: ExperimentConfig, env: EnvInstance, pm: PlanningModel, updater: UpdaterSpec
) -> tuple[list[float], int, float]:
    model = env.model
    gamma = model.discount
    q_mdp = mdp_value_iteration(model, tol=1e-8)
    returns: list[float] = []
    fallbacks = 0
    l1_values: list[float] = []
    for ep in range(cfg.n_episodes):
        rng = np.random.default_rng([cfg.seed, 2000 + ep])
        planner = PomcpPlanner(
            pm,
            env.channel.table,
            updater,
            q_mdp,
            env.terminal,
            seed=int(rng.integers(2**31)),
        )
        s = sample_initial_state(env, rng)
        ps = ParticleSet.from_belief(model.initial_belief, cfg.particles, rng, cfg.invigoration)
        b = model.initial_belief.copy()
        total, disc = 0.0, 1.0
        for t in range(env.horizon):
            a = planner.plan(ps, cfg.pomcp_simulations)
            s, (obs_id, z_nv), r, done = env_step(env, s, a, rng, step_index=t)
            total += disc * r
            disc *= gamma
            if done:
                break
            out, label = _act_output(env, updater, obs_id, s)
            eff = updater.effective_output(out, label, model.n_vision_classes)
            fr = particle_filter_update(model, ps, a, eff, z_nv, updater.mode, rng)
            ps = fr.particles
            fallbacks += int(fr.fell_back)
            b, fell_back = updater.update_array(model, b, a, out, label, z_nv)
            fallbacks += int(fell_back)
            l1_values.append(belief_l1(Belief.from_array(b), ps, model.n_states))
            planner.advance(a, obs_bucket_for(eff, z_nv))
        returns.append(total)
    mean_l1 = float(np.mean(l1_values)) if l1_values else 0.0
    return returns, fallbacks, mean_l1


def _summary(returns: list[float]) -> tuple[float, float]:
    arr = np.asarray(returns, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    ci = 1.96 * float(arr.std(ddof=1)) / float(np.sqrt(arr.size))
    return mean, ci


def run_experiment(cfg: ExperimentConfig, use_cache: bool = True) -> ResultRecord:
    """Plan on the plan split, act on the act split, summarize returns."""
    start = time.perf_counter()
    env = build_env(cfg)
    pm = build_planning_side(env)
    updater = updater_for(cfg)
    belief_l1_mean: float | None = None
    lower = upper = None
    trace: list = []
    if cfg.algo == "tpbp-pomcp":
        returns, fallbacks, belief_l1_mean = _run_pomcp_episodes(cfg, env, pm, updater)
    else:
        solved = solve_hsvi(cfg, env, pm, use_cache=use_cache)
        lower, upper, trace = solved.lower_value, solved.upper_value, solved.trace
        returns, fallbacks = _run_hsvi_episodes(cfg, env, solved.policy, updater)
    v_mean, ci = _summary(returns)
    return ResultRecord(
        config=cfg,
        config_hash=cfg.content_hash(),
        returns=returns,
        v_mean=v_mean,
        ci95=ci,
        t_seconds=time.perf_counter() - start,
        fallbacks=fallbacks,
        belief_l1=belief_l1_mean,
        lower_value=lower,
        upper_value=upper,
        trace=trace,
    )


def sweep_noise(cfg: ExperimentConfig, probabilities: list[float], modes: list[str] | None = None) -> list[ResultRecord]:
    """One run per (probability, mode); p = 0 runs once per mode list entry
    as a clean configuration."""
    if any(not (0.0 <= p <= 1.0) for p in probabilities):
        raise ConfigError("probabilities: must lie in [0,1]")
    modes = modes or ([cfg.noise_mode] if cfg.noise_mode != "none" else ["pure"])
    records = []
    for mode in modes:
        for p in probabilities:
            sub = replace(cfg, noise_p=p, noise_mode=mode if p > 0 else "none")
            records.append(run_experiment(sub))
    return records


def write_csv(records: list[ResultRecord], path: str | Path) -> None:
    lines = [CSV_HEADER] + [r.csv_row() for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def evaluate_on_planning_model(
    cfg: ExperimentConfig,
    env: EnvInstance,
    pm: PlanningModel,
    policy: AlphaVectorPolicy,
    episodes: int,
    seed: int = 0,
) -> list[float]:
    """Roll episodes where the environment IS the planning model: the
    observation IDs are sampled from the dataset estimate. Used to check
    that the greedy policy's empirical return clears the lower bound."""
    model = env.model
    updater = updater_for(cfg)
    gamma = model.discount
    ov_cdf = pm.ov.T.cumsum(axis=1)
    o_nv_cdf = model.o_nv.cumsum(axis=1)
    t_cdf = model.transition.cumsum(axis=2)
    terminal = env.terminal
    returns = []
    for ep in range(episodes):
        rng = np.random.default_rng([seed, 3000 + ep])
        s = int(rng.choice(model.n_states, p=model.initial_belief))
        b = model.initial_belief.copy()
        total, disc = 0.0, 1.0
        for t in range(env.horizon):
            if terminal[s]:
                break
            a = policy.action(b)
            s2 = int((rng.random() > t_cdf[s, a]).sum())
            vc = int(model.vision_component[s2])
            id_idx = int((rng.random() > ov_cdf[vc]).sum())
            z_nv = int((rng.random() > o_nv_cdf[s2]).sum())
            total += disc * float(model.reward[s, a])
            disc *= gamma
            s = s2
            if terminal[s]:
                break
            obs_id = pm.obs_ids[id_idx]
            out = env.channel.table.predict(obs_id) if updater.provider == "model" else None
            label = int(env.channel.table.labels[obs_id])
            b, _ = updater.update_array(model, b, a, out, label, z_nv)
        returns.append(total)
    return returns
