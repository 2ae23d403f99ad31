"""Online Monte-Carlo tree search with a perception-weighted particle filter.

The belief is an unweighted particle set. After each real step, successors
are rejection-sampled through the transition model and accepted with
probability equal to the (uncertainty-gated) perception probability of
their vision class times the non-vision observation likelihood; a fixed
fraction of the result is then replaced by fresh uniform particles.
Search uses UCB1 over actions; simulated observations are bucketed by
(top perception class, non-vision observation) so the tree's branching
stays bounded. Rollouts mix random actions with the fully-observable
optimal action for a state whose vision class is sampled from the current
perception output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .belief import UncertaintyMode, lift_vision_dist
from .model import VPomdpModel
from .perception import PerceptionOutput, PerceptionTable
from .planning_model import PlanningModel
from .updaters import UpdaterSpec, plan_evidence

MAX_FILTER_TRIES = 10**6


@dataclass
class ParticleSet:
    states: np.ndarray  # (K,) int64 state indices
    invigoration: float = 0.05

    @property
    def size(self) -> int:
        return int(self.states.size)

    def empirical_distribution(self, n_states: int) -> np.ndarray:
        return np.bincount(self.states, minlength=n_states) / self.states.size

    @classmethod
    def from_belief(cls, b: np.ndarray, k: int, rng: np.random.Generator, invigoration: float = 0.05) -> "ParticleSet":
        states = rng.choice(b.size, size=k, p=b)
        return cls(states.astype(np.int64), invigoration)


@dataclass
class FilterResult:
    particles: ParticleSet
    accepted: np.ndarray  # pre-invigoration accepted successors
    acceptance_rate: float
    fell_back: bool
    n_invigorated: int


def _sample_rows(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample one category per row of a (B, n) probability matrix."""
    cdf = rows.cumsum(axis=1)
    u = rng.random(rows.shape[0])
    return (u[:, None] > cdf).sum(axis=1)


def particle_filter_update(
    model: VPomdpModel,
    ps: ParticleSet,
    a: int,
    out: PerceptionOutput,
    z_nv: int | None,
    mode: UncertaintyMode,
    rng: np.random.Generator,
    max_tries: int = MAX_FILTER_TRIES,
) -> FilterResult:
    """Rejection-sampling particle update with perception-based acceptance.

    A candidate successor x' is kept when a uniform draw falls below
    perc(x'_v) * O_nv(z_nv | x'); the observation marginal that a full
    Bayes computation would divide by shifts every candidate equally, so
    dropping it leaves the accepted set's distribution unchanged.
    """
    if ps.size == 0:
        raise ValueError("particle set is empty")
    model.check_action(a)
    k = ps.size
    weight = lift_vision_dist(model, mode.wrap(out))
    if z_nv is not None:
        weight = weight * model.o_nv[:, z_nv]
    accepted = np.empty(0, dtype=np.int64)
    tries = 0
    batch = max(256, 2 * k)
    fell_back = False
    while accepted.size < k:
        if tries >= max_tries:
            fell_back = True
            accepted = rng.integers(model.n_states, size=k)
            break
        n = min(batch, max_tries - tries)
        src = ps.states[rng.integers(k, size=n)]
        nxt = _sample_rows(model.transition[src, a, :], rng)
        keep = rng.random(n) < weight[nxt]
        accepted = np.concatenate([accepted, nxt[keep]])
        tries += n
    accepted = accepted[:k].astype(np.int64)
    new_states = accepted.copy()
    n_inv = math.ceil(ps.invigoration * k)
    if n_inv > 0:
        slots = rng.choice(k, size=n_inv, replace=False)
        new_states[slots] = rng.integers(model.n_states, size=n_inv)
    rate = min(1.0, k / tries) if tries else 1.0
    return FilterResult(
        particles=ParticleSet(new_states, ps.invigoration),
        accepted=accepted,
        acceptance_rate=rate,
        fell_back=fell_back,
        n_invigorated=n_inv,
    )


def sis_reweight(
    model: VPomdpModel,
    weights: np.ndarray,
    successors: np.ndarray,
    perc_dist: np.ndarray,
    z_nv: int | None,
) -> np.ndarray:
    """Weighted-filter counterpart: w' proportional to w * perc * O_nv."""
    factor = lift_vision_dist(model, perc_dist)[successors]
    if z_nv is not None:
        factor = factor * model.o_nv[successors, z_nv]
    w = weights * factor
    total = w.sum()
    if total == 0.0:
        return np.full_like(weights, 1.0 / weights.size)
    return w / total


@dataclass
class _Node:
    n: int = 0
    q: dict[int, float] = field(default_factory=dict)
    n_a: dict[int, int] = field(default_factory=dict)
    children: dict[tuple[int, tuple[int, int]], "_Node"] = field(default_factory=dict)


class PomcpPlanner:
    """Per-episode online planner over the planning model's generative side."""

    def __init__(
        self,
        pm: PlanningModel,
        table: PerceptionTable,
        updater: UpdaterSpec,
        q_mdp: np.ndarray,
        terminal: np.ndarray,
        seed: int = 0,
        c_ucb: float | None = None,
        max_depth: int = 60,
        rollout_random_p: float = 0.2,
    ):
        self.pm = pm
        self.model = pm.model
        self.updater = updater
        self.q_mdp = q_mdp
        self.terminal = terminal
        self.rng = np.random.default_rng(seed)
        self.max_depth = max_depth
        self.rollout_random_p = rollout_random_p
        m = self.model
        r_lo, r_hi = m.reward_bounds
        self.c_ucb = c_ucb if c_ucb is not None else max(1e-6, (r_hi - r_lo) / (1.0 - m.discount))
        self.gamma = m.discount

        wrapped, argmax, labels = plan_evidence(table, pm.obs_ids, updater, m.n_vision_classes)
        self.plan_dists = wrapped  # evidence for perceived-state sampling
        self.obs_bucket_class = argmax
        # per-class cumulative distribution over plan IDs
        self.ov_cdf = pm.ov.T.cumsum(axis=1)  # (classes, n_ids)
        self.o_nv_cdf = m.o_nv.cumsum(axis=1)
        self.greedy_mdp = q_mdp.argmax(axis=1)
        # inverse map from (vision class, non-vision component) to state index
        inv = np.zeros((m.n_vision_classes, m.n_nonvision_components), dtype=np.int64)
        inv[m.vision_component, m.nonvision_component] = np.arange(m.n_states)
        self.state_from_components = inv
        self.root = _Node()

    # -- generative model ------------------------------------------------

    def _gen_step(self, s: int, a: int) -> tuple[int, int, int, float, bool]:
        """Sample (s', id_idx, z_nv, reward, done) from the planning model."""
        m = self.model
        u = self.rng.random()
        s2 = int((u > m.transition[s, a].cumsum()).sum())
        vc = int(m.vision_component[s2])
        id_idx = int((self.rng.random() > self.ov_cdf[vc]).sum())
        z_nv = int((self.rng.random() > self.o_nv_cdf[s2]).sum())
        r = float(m.reward[s, a])
        return s2, id_idx, z_nv, r, bool(self.terminal[s2])

    # -- rollout -----------------------------------------------------------

    def rollout(self, s: int, perc_dist: np.ndarray, depth: int) -> float:
        """Mixed rollout: random action with probability rollout_random_p,
        otherwise the fully-observable optimal action for a state whose
        vision class is drawn from the current perception output."""
        total = 0.0
        disc = 1.0
        m = self.model
        for _ in range(depth, self.max_depth):
            if self.rng.random() < self.rollout_random_p:
                a = int(self.rng.integers(m.n_actions))
            else:
                mass = perc_dist.sum()
                if mass <= 0:
                    sv = int(self.rng.integers(m.n_vision_classes))
                else:
                    sv = int((self.rng.random() > (perc_dist / mass).cumsum()).sum())
                perceived = int(self.state_from_components[sv, m.nonvision_component[s]])
                a = int(self.greedy_mdp[perceived])
            s, id_idx, _, r, done = self._gen_step(s, a)
            total += disc * r
            disc *= self.gamma
            if done:
                break
            perc_dist = self.plan_dists[id_idx]
        return total

    # -- search ------------------------------------------------------------

    def _ucb_action(self, node: _Node) -> int:
        m = self.model
        for a in range(m.n_actions):
            if node.n_a.get(a, 0) == 0:
                return a
        log_n = math.log(node.n)
        best, best_val = 0, -math.inf
        for a in range(m.n_actions):
            val = node.q[a] + self.c_ucb * math.sqrt(log_n / node.n_a[a])
            if val > best_val:
                best, best_val = a, val
        return best

    def _simulate(self, s: int, node: _Node, depth: int) -> float:
        if depth >= self.max_depth or self.terminal[s]:
            return 0.0
        a = self._ucb_action(node)
        s2, id_idx, z_nv, r, done = self._gen_step(s, a)
        key = (a, (int(self.obs_bucket_class[id_idx]), z_nv))
        child = node.children.get(key)
        if child is None:
            child = _Node()
            node.children[key] = child
            value = r if done else r + self.gamma * self.rollout(s2, self.plan_dists[id_idx], depth + 1)
        else:
            value = r if done else r + self.gamma * self._simulate(s2, child, depth + 1)
        node.n += 1
        node.n_a[a] = node.n_a.get(a, 0) + 1
        node.q[a] = node.q.get(a, 0.0) + (value - node.q.get(a, 0.0)) / node.n_a[a]
        return value

    def plan(self, ps: ParticleSet, n_simulations: int) -> int:
        """Choose an action by simulation from the current particle belief."""
        if n_simulations <= 0:
            return int(self.rng.integers(self.model.n_actions))
        for _ in range(n_simulations):
            s = int(ps.states[self.rng.integers(ps.size)])
            if self.terminal[s]:
                continue
            self._simulate(s, self.root, 0)
        if not self.root.q:
            return int(self.rng.integers(self.model.n_actions))
        best, best_val = 0, -math.inf
        for a in range(self.model.n_actions):
            if a in self.root.q and self.root.q[a] > best_val:
                best, best_val = a, self.root.q[a]
        return best

    def advance(self, action: int, obs_bucket: tuple[int, int]) -> None:
        """Re-root the tree at the child reached by the real step."""
        child = self.root.children.get((action, obs_bucket))
        self.root = child if child is not None else _Node()


def obs_bucket_for(out: PerceptionOutput, z_nv: int) -> tuple[int, int]:
    return int(out.dist.argmax()), int(z_nv)
