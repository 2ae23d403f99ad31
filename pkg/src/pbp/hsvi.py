"""Heuristic-search value iteration over the planning model.

Lower bound: a growing set of alpha vectors, seeded with the best
single-action-forever values. Upper bound: corner values from the
fully-observable solution plus sawtooth anchor points. Exploration walks
the belief tree by upper-bound-greedy actions and weighted-excess-gap
observations, with an epsilon chance of a uniform random branch; successor
beliefs always come from the perception-based update, while observation
probabilities come from the dataset-estimated observation function.
Provably dominated subtrees, pointwise-dominated alpha vectors, and
corner-dominated anchors are pruned periodically.

Observation branches with identical successor beliefs are collapsed before
value computations; their probabilities and backup weights are summed, so
all bound values are unchanged. For very wide observation spaces the
sawtooth is evaluated exactly on the highest-probability branches and the
corner plane stands in for the tail, which keeps the bound valid (only
slightly looser) at a bounded cost.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import VPomdpModel, mdp_value_iteration
from .perception import PerceptionTable
from .planning_model import PlanningModel
from .updaters import UpdaterSpec, plan_evidence

_DEDUP_DECIMALS = 9


@dataclass
class AlphaVector:
    values: np.ndarray
    action: int


class AlphaVectorSet:
    """Lower-bound vectors; value(b) = max over vectors of the dot product."""

    def __init__(self, vectors: list[AlphaVector]):
        if not vectors:
            raise ValueError("alpha set must start nonempty")
        self.vectors = list(vectors)
        self._matrix: np.ndarray | None = None

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None or self._matrix.shape[0] != len(self.vectors):
            self._matrix = np.array([v.values for v in self.vectors])
        return self._matrix

    def add(self, vec: AlphaVector) -> None:
        self.vectors.append(vec)
        self._matrix = None

    def value(self, b: np.ndarray) -> float:
        return float((self.matrix @ b).max())

    def value_many(self, beliefs: np.ndarray) -> np.ndarray:
        return (beliefs @ self.matrix.T).max(axis=1)

    def best_action(self, b: np.ndarray) -> int:
        return self.vectors[int((self.matrix @ b).argmax())].action

    def prune_dominated(self) -> int:
        """Drop vectors pointwise dominated by an earlier or strictly better one."""
        m = self.matrix
        n = len(self.vectors)
        keep = np.ones(n, dtype=bool)
        order = np.arange(n)
        for i in range(n):
            if not keep[i]:
                continue
            cand = keep.copy()
            cand[i] = False
            dominators = np.flatnonzero(cand)
            if dominators.size == 0:
                continue
            geq = (m[dominators] >= m[i]).all(axis=1)
            if not geq.any():
                continue
            doms = dominators[geq]
            strict = (m[doms] > m[i]).any(axis=1)
            if strict.any() or (doms < order[i]).any():
                keep[i] = False
        removed = int((~keep).sum())
        if removed:
            self.vectors = [v for v, k in zip(self.vectors, keep) if k]
            self._matrix = None
        return removed


class SawtoothBound:
    """Upper bound: corner values plus interior anchor points."""

    def __init__(self, corner: np.ndarray):
        self.corner = corner.astype(np.float64).copy()
        # per anchor: support indices, support values, anchor value, corner dot
        self._supports: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self._anchor_values: list[float] = []
        self._corner_dots: list[float] = []
        self._index: dict[bytes, int] = {}
        self._padded: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    @property
    def n_anchors(self) -> int:
        return len(self._anchor_values)

    def _refresh_corner_dots(self) -> None:
        for i, (idx, vals) in enumerate(zip(self._supports, self._vals)):
            self._corner_dots[i] = float(self.corner[idx] @ vals)
        self._padded = None

    def add(self, b: np.ndarray, value: float) -> None:
        """Insert an anchor; point masses tighten the corner directly."""
        support = np.flatnonzero(b)
        if support.size == 1:
            s = int(support[0])
            if value < self.corner[s]:
                self.corner[s] = value
                self._refresh_corner_dots()
            return
        key = b.round(_DEDUP_DECIMALS).tobytes()
        if key in self._index:
            i = self._index[key]
            if value < self._anchor_values[i]:
                self._anchor_values[i] = value
                self._padded = None
            return
        cdot = float(self.corner @ b)
        if value >= cdot:  # dominated by the corner plane
            return
        self._index[key] = len(self._anchor_values)
        self._supports.append(support)
        self._vals.append(b[support])
        self._anchor_values.append(value)
        self._corner_dots.append(cdot)
        self._padded = None

    def value(self, b: np.ndarray) -> float:
        return float(self.value_many(b[None, :])[0])

    def _ensure_padded(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]] | None:
        """Anchors bucketed by support width and padded within each bucket.

        Padding duplicates each anchor's first support slot, which cannot
        change a minimum over the row; bucketing keeps the padding tight.
        """
        if self._padded is not None:
            return self._padded
        active = [
            i
            for i in range(self.n_anchors)
            if self._anchor_values[i] - self._corner_dots[i] < 0
        ]
        if not active:
            return None
        buckets: dict[int, list[int]] = {}
        for i in active:
            width = 1 << (self._supports[i].size - 1).bit_length()
            buckets.setdefault(width, []).append(i)
        padded = []
        for width, members in sorted(buckets.items()):
            idx_pad = np.zeros((len(members), width), dtype=np.int64)
            val_pad = np.ones((len(members), width))
            delta = np.zeros(len(members))
            for row, i in enumerate(members):
                supp, vals = self._supports[i], self._vals[i]
                idx_pad[row, : supp.size] = supp
                idx_pad[row, supp.size :] = supp[0]
                val_pad[row, : supp.size] = vals
                val_pad[row, supp.size :] = vals[0]
                delta[row] = self._anchor_values[i] - self._corner_dots[i]
            padded.append((idx_pad, val_pad, delta))
        self._padded = padded
        return padded

    def value_many(self, beliefs: np.ndarray) -> np.ndarray:
        """Sawtooth interpolation, vectorized over rows of `beliefs`."""
        corner_plane = beliefs @ self.corner
        padded = self._ensure_padded()
        if padded is None:
            return corner_plane
        v = corner_plane.copy()
        for idx_pad, val_pad, delta in padded:
            n = idx_pad.shape[0]
            chunk = max(1, 4_000_000 // max(1, beliefs.shape[0] * idx_pad.shape[1]))
            for lo in range(0, n, chunk):
                hi = min(n, lo + chunk)
                ratios = (beliefs[:, idx_pad[lo:hi]] / val_pad[lo:hi]).min(axis=2)
                np.minimum(ratios, 1.0, out=ratios)
                np.minimum(v, (corner_plane[:, None] + ratios * delta[lo:hi]).min(axis=1), out=v)
        return v

    def prune(self) -> int:
        """Drop anchors that no longer tighten the bound.

        An anchor goes when it sits on or above the corner plane, or when
        the remaining anchors already reach its value at its own belief.
        Processed sequentially so mutually-redundant anchors cannot all
        vanish at once.
        """
        n = self.n_anchors
        if n == 0:
            return 0
        dim = self.corner.size
        beliefs = np.zeros((n, dim))
        for i, (idx, vals) in enumerate(zip(self._supports, self._vals)):
            beliefs[i, idx] = vals
        corner_plane = beliefs @ self.corner  # value of the plane at each anchor belief
        # contribution[i, j]: value anchor i induces at anchor j's belief
        contribution = np.full((n, n), np.inf)
        for i, (idx, vals) in enumerate(zip(self._supports, self._vals)):
            delta = self._anchor_values[i] - self._corner_dots[i]
            if delta >= 0:
                continue
            ratios = (beliefs[:, idx] / vals).min(axis=1)
            np.minimum(ratios, 1.0, out=ratios)
            contribution[i] = corner_plane + ratios * delta
        anchor_vals = np.asarray(self._anchor_values)
        on_plane = anchor_vals >= np.asarray(self._corner_dots) - 1e-12
        kept_mask = ~on_plane
        for j in range(n):
            if not kept_mask[j]:
                continue
            others = kept_mask.copy()
            others[j] = False
            best = corner_plane[j]
            if others.any():
                best = min(best, contribution[others, j].min())
            if best <= anchor_vals[j] + 1e-9:
                kept_mask[j] = False
        kept = list(np.flatnonzero(kept_mask))
        removed = n - len(kept)
        if removed:
            self._supports = [self._supports[i] for i in kept]
            self._vals = [self._vals[i] for i in kept]
            self._anchor_values = [self._anchor_values[i] for i in kept]
            self._corner_dots = [self._corner_dots[i] for i in kept]
            self._index = {}
            for new_i, (idx, vals) in enumerate(zip(self._supports, self._vals)):
                b = np.zeros_like(self.corner)
                b[idx] = vals
                self._index[b.round(_DEDUP_DECIMALS).tobytes()] = new_i
            self._padded = None
        return removed


@dataclass
class BeliefNode:
    belief: np.ndarray
    children: dict[tuple[int, int], "BeliefNode"] = field(default_factory=dict)
    pruned_actions: set[int] = field(default_factory=set)
    last_q_upper: np.ndarray | None = None
    last_q_lower: np.ndarray | None = None


@dataclass(frozen=True)
class AlphaVectorPolicy:
    """Greedy action extraction from an alpha-vector set."""

    matrix: np.ndarray
    actions: tuple[int, ...]

    def action(self, b: np.ndarray) -> int:
        return self.actions[int((self.matrix @ b).argmax())]

    def value(self, b: np.ndarray) -> float:
        return float((self.matrix @ b).max())

    def to_dict(self) -> dict:
        return {"vectors": self.matrix.tolist(), "actions": list(self.actions)}

    @classmethod
    def from_dict(cls, d: dict) -> "AlphaVectorPolicy":
        return cls(np.array(d["vectors"], dtype=np.float64), tuple(int(a) for a in d["actions"]))


@dataclass
class SolveResult:
    policy: AlphaVectorPolicy
    lower_value: float
    upper_value: float
    trace: list[tuple[int, float, float, float]]  # iteration, seconds, lower, upper
    iterations: int


@dataclass
class _ActionStats:
    """Collapsed observation branches for one (belief, action) pair."""

    taus: np.ndarray  # (G, S) unique successor beliefs
    prz: np.ndarray  # (G,) summed observation probabilities
    ohat: np.ndarray  # (G, S) summed backup weights
    rep_z: np.ndarray  # (G,) a representative flat observation index per group


class HsviSolver:
    """One solver instance explores a single planning model; not thread-safe."""

    def __init__(
        self,
        pm: PlanningModel,
        table: PerceptionTable,
        updater: UpdaterSpec,
        eps_explore: float = 0.1,
        eps_slack: float = 0.01,
        seed: int = 0,
        max_depth: int | None = None,
        prune_every: int = 5,
        sawtooth_top_k: int = 64,
    ):
        if not (0.0 <= eps_explore <= 1.0):
            raise ValueError("eps_explore outside [0,1]")
        self.pm = pm
        self.model: VPomdpModel = pm.model
        self.updater = updater
        self.eps_explore = eps_explore
        self.eps_slack = eps_slack
        if max_depth is None:
            # depth at which the slack schedule exceeds the largest possible
            # bound width, so exploration is never truncated prematurely
            r_lo, r_hi = pm.model.reward_bounds
            span = max((r_hi - r_lo) / (1.0 - pm.model.discount), eps_slack)
            max_depth = min(400, int(np.ceil(np.log(span / eps_slack) / np.log(1.0 / pm.model.discount))) + 1)
        self.max_depth = max_depth
        self.prune_every = prune_every
        self.sawtooth_top_k = sawtooth_top_k
        self.rng = np.random.default_rng(seed)

        m = self.model
        wrapped, _, _ = plan_evidence(table, pm.obs_ids, updater, m.n_vision_classes)
        # evidence weights for successor beliefs: wrapped perception lifted
        # to states, times the non-vision likelihood
        lifted = wrapped[:, m.vision_component]  # (n_ids, S)
        self.W = (lifted[:, None, :] * m.o_nv.T[None, :, :]).reshape(pm.n_obs, m.n_states)
        self.O_hat = pm.obs_prob  # (n_obs, S) sampling probabilities
        self.t_by_action = np.moveaxis(m.transition, 1, 0)  # (A, S, S)
        self.gamma = m.discount
        self.b0 = m.initial_belief.copy()

        q_mdp = mdp_value_iteration(m, tol=1e-9)
        self.upper = SawtoothBound(q_mdp.max(axis=1))
        self.lower = AlphaVectorSet(self._blind_alphas())
        self.root = BeliefNode(self.b0)
        self._registry: dict[bytes, BeliefNode] = {self._key(self.b0): self.root}
        self.trace: list[tuple[int, float, float, float]] = []
        self._iteration = 0
        # single-step-substitution plumbing: non-vision marginal bases
        self._nv_of_state = m.nonvision_component
        self._n_nv_comp = m.n_nonvision_components
        self._wrapped_lifted = lifted
        # collapsed-branch stats are pure functions of (belief, action);
        # cache them unless the observation space is too large to afford it
        self._cache_stats = pm.n_obs * m.n_states <= 100_000
        self._stats_cache: dict[tuple[bytes, int], _ActionStats] = {}

    # -- initialization ------------------------------------------------

    def _blind_alphas(self) -> list[AlphaVector]:
        m = self.model
        eye = np.eye(m.n_states)
        out = []
        for a in range(m.n_actions):
            vals = np.linalg.solve(eye - self.gamma * m.transition[:, a, :], m.reward[:, a])
            out.append(AlphaVector(vals, a))
        return out

    # -- helpers ---------------------------------------------------------

    @staticmethod
    def _key(b: np.ndarray) -> bytes:
        return b.round(_DEDUP_DECIMALS).tobytes()

    def _node_for(self, b: np.ndarray) -> BeliefNode:
        key = self._key(b)
        node = self._registry.get(key)
        if node is None:
            node = BeliefNode(b)
            self._registry[key] = node
        return node

    def _tau_rows(self, pred: np.ndarray) -> np.ndarray:
        """Successor beliefs for every flat observation index (n_obs, S)."""
        m = self.model
        if self.updater.rule == "psrl":
            n_nv = len(m.nonvision_obs_labels)
            marg = np.zeros((n_nv, self._n_nv_comp))
            for z in range(n_nv):
                base = m.o_nv[:, z] * pred
                norm = base.sum()
                base = base / norm if norm > 0 else np.full(m.n_states, 1.0 / m.n_states)
                marg[z] = np.bincount(self._nv_of_state, weights=base, minlength=self._n_nv_comp)
            marg_full = marg[:, self._nv_of_state]  # (n_nv, S)
            taus = (self._wrapped_lifted[:, None, :] * marg_full[None, :, :]).reshape(
                self.pm.n_obs, m.n_states
            )
        else:
            taus = self.W * pred[None, :]
        norms = taus.sum(axis=1, keepdims=True)
        zero = norms[:, 0] == 0.0
        norms[zero] = 1.0
        taus = taus / norms
        taus[zero] = 1.0 / m.n_states
        return taus

    def _action_stats(self, b: np.ndarray, a: int) -> _ActionStats:
        """Successor beliefs with identical branches collapsed."""
        if self._cache_stats:
            key = (self._key(b), a)
            hit = self._stats_cache.get(key)
            if hit is not None:
                return hit
            stats = self._compute_action_stats(b, a)
            self._stats_cache[key] = stats
            return stats
        return self._compute_action_stats(b, a)

    def _compute_action_stats(self, b: np.ndarray, a: int) -> _ActionStats:
        pred = b @ self.t_by_action[a]
        taus = self._tau_rows(pred)
        prz = self.O_hat @ pred
        rounded = np.ascontiguousarray(taus.round(_DEDUP_DECIMALS))
        _, rep, inverse = np.unique(rounded, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.reshape(-1)
        g = rep.size
        prz_g = np.zeros(g)
        np.add.at(prz_g, inverse, prz)
        ohat_g = np.zeros((g, self.model.n_states))
        np.add.at(ohat_g, inverse, self.O_hat)
        return _ActionStats(taus=taus[rep], prz=prz_g, ohat=ohat_g, rep_z=rep)

    def _upper_values(self, stats: _ActionStats) -> np.ndarray:
        """Upper bound per collapsed branch; exact sawtooth on the top-K
        probability branches, corner plane elsewhere."""
        taus = stats.taus
        if taus.shape[0] <= self.sawtooth_top_k or self.upper.n_anchors == 0:
            return self.upper.value_many(taus)
        v = taus @ self.upper.corner
        top = np.argpartition(stats.prz, -self.sawtooth_top_k)[-self.sawtooth_top_k :]
        v[top] = self.upper.value_many(taus[top])
        return v

    # -- public single-step operations -----------------------------------

    def backup(self, b: np.ndarray) -> tuple[AlphaVector, np.ndarray]:
        """One point-based backup at belief b.

        Returns the maximizing vector and the per-action lower Q values.
        The new vector's value at b never falls below the current bound.
        """
        m = self.model
        q_lower = np.empty(m.n_actions)
        best_beta: np.ndarray | None = None
        best_action = 0
        for a in range(m.n_actions):
            stats = self._action_stats(b, a)
            vals = stats.taus @ self.lower.matrix.T  # (G, n_alpha)
            chosen = self.lower.matrix[vals.argmax(axis=1)]  # (G, S)
            mass = (stats.ohat * chosen).sum(axis=0)  # (S,)
            beta = m.reward[:, a] + self.gamma * (self.t_by_action[a] @ mass)
            q_lower[a] = float(beta @ b)
            if best_beta is None or q_lower[a] > q_lower[best_action]:
                best_beta = beta
                best_action = a
        return AlphaVector(best_beta, best_action), q_lower

    def upper_q(self, b: np.ndarray) -> np.ndarray:
        """Per-action upper bound Q values via the sawtooth."""
        m = self.model
        r_b = m.reward.T @ b
        q = np.empty(m.n_actions)
        for a in range(m.n_actions):
            stats = self._action_stats(b, a)
            v_up = self._upper_values(stats)
            q[a] = r_b[a] + self.gamma * float(stats.prz @ v_up)
        return q

    # -- local updates ---------------------------------------------------

    def _local_update(self, node: BeliefNode) -> None:
        """Back up the lower bound and tighten the sawtooth at this belief."""
        b = node.belief
        vec, q_lower = self.backup(b)
        if float(vec.values @ b) > self.lower.value(b) + 1e-12:
            self.lower.add(vec)
        q_upper = self.upper_q(b)
        self.upper.add(b, float(q_upper.max()))
        node.last_q_lower = q_lower
        node.last_q_upper = q_upper

    # -- exploration -----------------------------------------------------

    def _slack(self, depth: int) -> float:
        return self.eps_slack * self.gamma ** (-depth)

    def _forward_pass(self) -> list[BeliefNode]:
        path = [self.root]
        node = self.root
        for depth in range(self.max_depth):
            b = node.belief
            width = self.upper.value(b) - self.lower.value(b)
            if width <= self._slack(depth):
                break
            available = [a for a in range(self.model.n_actions) if a not in node.pruned_actions]
            if self.rng.random() < self.eps_explore:
                a_star = int(self.rng.choice(available))
                stats = self._action_stats(b, a_star)
                candidates = np.flatnonzero(stats.prz > 0)
                if candidates.size == 0:
                    break
                pick = int(self.rng.choice(candidates))
            else:
                r_b = self.model.reward.T @ b
                best_q, a_star, best_stats, best_v_up = -np.inf, available[0], None, None
                for a in available:
                    stats_a = self._action_stats(b, a)
                    v_up_a = self._upper_values(stats_a)
                    q_a = r_b[a] + self.gamma * float(stats_a.prz @ v_up_a)
                    if q_a > best_q:
                        best_q, a_star, best_stats, best_v_up = q_a, a, stats_a, v_up_a
                stats = best_stats
                widths = best_v_up - self.lower.value_many(stats.taus)
                score = stats.prz * (widths - self._slack(depth + 1))
                if score.max() <= 0:
                    break
                pick = int(score.argmax())
            z_star = int(stats.rep_z[pick])
            child = node.children.get((a_star, z_star))
            if child is None:
                child = self._node_for(stats.taus[pick])
                node.children[(a_star, z_star)] = child
            path.append(child)
            node = child
        return path

    # -- pruning -----------------------------------------------------------

    def prune(self) -> dict[str, int]:
        """Remove dominated subtrees, alpha vectors, and anchors.

        Uses each node's last computed action bounds; both only tighten over
        time, so a recorded domination stays valid.
        """
        removed_subtrees = 0
        seen: set[int] = set()
        stack = [self.root]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node.last_q_upper is not None and node.last_q_lower is not None:
                best_lower = node.last_q_lower.max()
                for a in range(self.model.n_actions):
                    if a in node.pruned_actions:
                        continue
                    if node.last_q_upper[a] < best_lower - 1e-12:
                        node.pruned_actions.add(a)
                        doomed = [k for k in node.children if k[0] == a]
                        for k in doomed:
                            del node.children[k]
                            removed_subtrees += 1
            stack.extend(node.children.values())
        removed_alphas = self.lower.prune_dominated()
        removed_anchors = self.upper.prune()
        return {
            "subtrees": removed_subtrees,
            "alpha_vectors": removed_alphas,
            "anchors": removed_anchors,
        }

    # -- main loop -----------------------------------------------------------

    def solve(
        self,
        budget_iterations: int | None = None,
        budget_seconds: float | None = None,
        target_width: float | None = None,
    ) -> SolveResult:
        if budget_iterations is None and budget_seconds is None:
            raise ValueError("need an iteration or wall-clock budget")
        start = time.perf_counter()
        while True:
            elapsed = time.perf_counter() - start
            if budget_iterations is not None and self._iteration >= budget_iterations:
                break
            if budget_seconds is not None and elapsed >= budget_seconds:
                break
            lo = self.lower.value(self.b0)
            hi = self.upper.value(self.b0)
            if target_width is not None and hi - lo <= target_width:
                break
            path = self._forward_pass()
            for node in reversed(path):
                self._local_update(node)
            self._iteration += 1
            if self.prune_every and self._iteration % self.prune_every == 0:
                self.prune()
            self.trace.append(
                (
                    self._iteration,
                    time.perf_counter() - start,
                    self.lower.value(self.b0),
                    self.upper.value(self.b0),
                )
            )
        policy = AlphaVectorPolicy(
            self.lower.matrix.copy(), tuple(v.action for v in self.lower.vectors)
        )
        return SolveResult(
            policy=policy,
            lower_value=self.lower.value(self.b0),
            upper_value=self.upper.value(self.b0),
            trace=list(self.trace),
            iterations=self._iteration,
        )


def export_trace_csv(trace: list[tuple[int, float, float, float]], path) -> None:
    lines = ["iteration,seconds,lower,upper"]
    for it, secs, lo, hi in trace:
        lines.append(f"{it},{secs!r},{lo!r},{hi!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
