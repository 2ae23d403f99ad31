"""Factored POMDP model, exact belief operations, and MDP value iteration.

State indexing is row-major over the factored variable domains, in the order
the variables are declared. Serialized beliefs, policies, and tables all use
this order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

SIMPLEX_ATOL = 1e-9
RENORM_ATOL = 1e-6


class ModelError(ValueError):
    """Raised when a model table violates its distribution invariants."""


class InvalidActionError(ValueError):
    """Raised when an action index is outside the model's action set."""


class EmptyBeliefError(ValueError):
    """Raised when a belief update has zero normalizer and no fallback applies."""


@dataclass(frozen=True)
class StateVar:
    name: str
    values: tuple[str, ...]

    def __post_init__(self):
        if len(self.values) < 1:
            raise ModelError(f"state variable {self.name!r} has empty domain")


def _as_distribution_rows(name: str, table) -> np.ndarray:
    """Validate that the trailing axis of `table` holds probability rows.

    Rows off the simplex by more than RENORM_ATOL are rejected; smaller
    drift is renormalized so downstream code can rely on SIMPLEX_ATOL.
    """
    t = np.array(table, dtype=np.float64)
    if t.size == 0:
        raise ModelError(f"{name}: empty table")
    if (t < 0).any():
        raise ModelError(f"{name}: negative probability entry")
    sums = t.sum(axis=-1)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=RENORM_ATOL):
        bad = float(np.abs(sums - 1.0).max())
        raise ModelError(f"{name}: row sum off by {bad:.3g} (> {RENORM_ATOL:g})")
    t = t / sums[..., None]
    t.setflags(write=False)
    return t


@dataclass(frozen=True)
class Belief:
    """Sparse probability distribution over state indices."""

    entries: dict[int, float]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Belief":
        """Keep nonzero entries verbatim; no renormalization happens here."""
        a = np.asarray(arr, dtype=np.float64)
        return cls({int(i): float(a[i]) for i in np.flatnonzero(a)})

    @classmethod
    def point_mass(cls, state: int) -> "Belief":
        return cls({int(state): 1.0})

    def to_array(self, n_states: int) -> np.ndarray:
        a = np.zeros(n_states, dtype=np.float64)
        for s, p in self.entries.items():
            a[s] = p
        return a

    def validate(self, n_states: int) -> None:
        if not self.entries:
            raise EmptyBeliefError("belief has empty support")
        probs = np.fromiter(self.entries.values(), dtype=np.float64)
        if (probs < 0).any():
            raise ModelError("belief has negative probability")
        if abs(probs.sum() - 1.0) > SIMPLEX_ATOL:
            raise ModelError(f"belief sums to {probs.sum():.12f}, not 1")
        if any(not (0 <= s < n_states) for s in self.entries):
            raise ModelError("belief refers to a state outside the model")

    def support(self) -> tuple[int, ...]:
        return tuple(sorted(self.entries))


@dataclass(frozen=True)
class VPomdpModel:
    """Factored POMDP with a vision/non-vision state split.

    The vision observation function is deliberately absent: vision
    observations are opaque IDs served by a channel, and their likelihoods
    enter belief updates only through perception outputs or the dataset
    estimate. The non-vision observation function `o_nv` is known.
    """

    state_vars: tuple[StateVar, ...]
    vision_state_indices: tuple[int, ...]
    actions: tuple[str, ...]
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    discount: float
    initial_belief: np.ndarray  # (S,)
    nonvision_obs_labels: tuple[str, ...]
    o_nv: np.ndarray  # (S, Z_nv)

    def __post_init__(self):
        dims = self.var_dims
        n = int(np.prod(dims))
        if not self.actions:
            raise ModelError("model needs at least one action")
        if not (0.0 < self.discount < 1.0):
            raise ModelError(f"discount {self.discount} outside (0,1)")
        vis = tuple(sorted(self.vision_state_indices))
        if vis != self.vision_state_indices:
            object.__setattr__(self, "vision_state_indices", vis)
        if any(not (0 <= i < len(self.state_vars)) for i in vis):
            raise ModelError("vision_state_indices out of range")
        if not vis:
            raise ModelError("at least one state variable must be a vision variable")
        t = _as_distribution_rows("transition", self.transition)
        if t.shape != (n, len(self.actions), n):
            raise ModelError(f"transition shape {t.shape} != {(n, len(self.actions), n)}")
        object.__setattr__(self, "transition", t)
        r = np.array(self.reward, dtype=np.float64)
        if r.shape != (n, len(self.actions)):
            raise ModelError(f"reward shape {r.shape} != {(n, len(self.actions))}")
        r.setflags(write=False)
        object.__setattr__(self, "reward", r)
        b0 = _as_distribution_rows("initial_belief", self.initial_belief)
        if b0.shape != (n,):
            raise ModelError("initial_belief length mismatch")
        object.__setattr__(self, "initial_belief", b0)
        o = _as_distribution_rows("nonvision_obs", self.o_nv)
        if o.shape != (n, len(self.nonvision_obs_labels)):
            raise ModelError("nonvision_obs table shape mismatch")
        object.__setattr__(self, "o_nv", o)

    @property
    def var_dims(self) -> tuple[int, ...]:
        return tuple(len(v.values) for v in self.state_vars)

    @cached_property
    def n_states(self) -> int:
        return int(np.prod(self.var_dims))

    @cached_property
    def n_actions(self) -> int:
        return len(self.actions)

    @cached_property
    def n_vision_classes(self) -> int:
        dims = self.var_dims
        return int(np.prod([dims[i] for i in self.vision_state_indices]))

    @cached_property
    def vision_component(self) -> np.ndarray:
        """Map each state index to its vision-component index (row-major)."""
        dims = self.var_dims
        coords = np.unravel_index(np.arange(self.n_states), dims)
        vis_dims = [dims[i] for i in self.vision_state_indices]
        vis_coords = [coords[i] for i in self.vision_state_indices]
        if not vis_coords:
            return np.zeros(self.n_states, dtype=np.int64)
        out = np.ravel_multi_index(vis_coords, vis_dims)
        out.setflags(write=False)
        return out

    @cached_property
    def nonvision_component(self) -> np.ndarray:
        """Map each state index to its non-vision-component index."""
        dims = self.var_dims
        nv = [i for i in range(len(dims)) if i not in self.vision_state_indices]
        if not nv:
            return np.zeros(self.n_states, dtype=np.int64)
        coords = np.unravel_index(np.arange(self.n_states), dims)
        out = np.ravel_multi_index([coords[i] for i in nv], [dims[i] for i in nv])
        out.setflags(write=False)
        return out

    @cached_property
    def n_nonvision_components(self) -> int:
        dims = self.var_dims
        nv = [dims[i] for i in range(len(dims)) if i not in self.vision_state_indices]
        return int(np.prod(nv)) if nv else 1

    def state_index(self, values: tuple[int, ...]) -> int:
        return int(np.ravel_multi_index(values, self.var_dims))

    def state_tuple(self, index: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(index, self.var_dims))

    def check_action(self, a: int) -> None:
        if not (0 <= a < self.n_actions):
            raise InvalidActionError(f"action {a} outside [0, {self.n_actions})")

    @cached_property
    def reward_bounds(self) -> tuple[float, float]:
        return float(self.reward.min()), float(self.reward.max())

    @cached_property
    def absorbing_zero_states(self) -> np.ndarray:
        """Boolean mask of states that self-loop under every action with zero reward.

        Episode simulators treat these as terminal.
        """
        n = self.n_states
        self_loop = np.all(self.transition[np.arange(n), :, np.arange(n)] >= 1.0 - SIMPLEX_ATOL, axis=1)
        zero_r = np.all(self.reward == 0.0, axis=1)
        mask = self_loop & zero_r
        mask.setflags(write=False)
        return mask

    # -- serialization ------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "state_vars": [{"name": v.name, "values": list(v.values)} for v in self.state_vars],
            "vision_state_indices": list(self.vision_state_indices),
            "actions": list(self.actions),
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "discount": self.discount,
            "initial_belief": self.initial_belief.tolist(),
            "nonvision_obs": {
                "labels": list(self.nonvision_obs_labels),
                "table": self.o_nv.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VPomdpModel":
        try:
            return cls(
                state_vars=tuple(StateVar(v["name"], tuple(v["values"])) for v in d["state_vars"]),
                vision_state_indices=tuple(d["vision_state_indices"]),
                actions=tuple(d["actions"]),
                transition=np.array(d["transition"], dtype=np.float64),
                reward=np.array(d["reward"], dtype=np.float64),
                discount=float(d["discount"]),
                initial_belief=np.array(d["initial_belief"], dtype=np.float64),
                nonvision_obs_labels=tuple(d["nonvision_obs"]["labels"]),
                o_nv=np.array(d["nonvision_obs"]["table"], dtype=np.float64),
            )
        except KeyError as e:
            raise ModelError(f"model document missing field {e.args[0]!r}") from e

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "VPomdpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- exact belief operations ------------------------------------------


def propagate_array(model: VPomdpModel, b: np.ndarray, a: int) -> np.ndarray:
    """One-step state-prediction: Pr(s' | b, a) = sum_s b(s) T(s'|s,a)."""
    model.check_action(a)
    return b @ model.transition[:, a, :]


def propagate(model: VPomdpModel, belief: Belief, a: int) -> np.ndarray:
    belief.validate(model.n_states)
    return propagate_array(model, belief.to_array(model.n_states), a)


def standard_belief_update(
    model: VPomdpModel, belief: Belief, a: int, obs_prob: np.ndarray
) -> Belief:
    """Exact Bayes filter step with an explicit per-state observation likelihood.

    obs_prob(s') must be the probability of the received observation in
    state s'. Positive scaling of obs_prob does not change the result.
    """
    belief.validate(model.n_states)
    obs_prob = np.asarray(obs_prob, dtype=np.float64)
    if obs_prob.shape != (model.n_states,):
        raise ModelError("obs_prob length mismatch")
    if (obs_prob < 0).any():
        raise ModelError("obs_prob has negative entries")
    pred = propagate_array(model, belief.to_array(model.n_states), a)
    post = obs_prob * pred
    norm = post.sum()
    if norm == 0.0:
        raise EmptyBeliefError("observation likelihood excludes the whole predicted support")
    return Belief.from_array(post / norm)


# -- MDP value iteration ----------------------------------------------


def mdp_value_iteration(model: VPomdpModel, tol: float = 1e-8, max_iters: int = 1_000_000) -> np.ndarray:
    """Optimal Q-table under full observability.

    Stops when successive sweeps differ by at most tol in sup-norm, which
    bounds the Bellman residual of the returned table by gamma * tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    gamma = model.discount
    r_min = model.reward_bounds[0]
    v = np.full(model.n_states, r_min / (1.0 - gamma))
    t_flat = np.moveaxis(model.transition, 1, 0)  # (A, S, S)
    q = model.reward.copy()
    for _ in range(max_iters):
        q = model.reward + gamma * np.einsum("ast,t->sa", t_flat, v)
        v_new = q.max(axis=1)
        if np.abs(v_new - v).max() <= tol:
            v = v_new
            break
        v = v_new
    return model.reward + gamma * np.einsum("ast,t->sa", t_flat, v)


def q_table_values(q: np.ndarray) -> np.ndarray:
    return q.max(axis=1)


def bellman_residual(model: VPomdpModel, q: np.ndarray) -> float:
    v = q.max(axis=1)
    t_flat = np.moveaxis(model.transition, 1, 0)
    q_next = model.reward + model.discount * np.einsum("ast,t->sa", t_flat, v)
    return float(np.abs(q_next - q).max())
