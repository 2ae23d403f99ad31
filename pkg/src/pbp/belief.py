"""Perception-driven belief updates.

The update replaces the unknown vision observation likelihood with a
perception model's posterior over vision classes, Bayes-inverted under a
uniform class prior. The prior and the observation marginal both cancel in
the normalization, so the posterior can be used directly as an evidence
weight. A zero normalizer yields the uniform fallback belief over all
states, with the event flagged for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Belief, VPomdpModel, propagate_array
from .perception import PerceptionOutput, apply_tuq, apply_wuq

# evidence entries below this are treated as exact zeros so support
# comparisons are deterministic
EVIDENCE_FLOOR = 1e-12


class EmptyPoolError(ValueError):
    """Raised when a multiplicative pool has no overlapping support."""


@dataclass(frozen=True)
class UncertaintyMode:
    """Selects how the uncertainty score gates the perception output."""

    kind: str  # "none" | "tuq" | "wuq"
    eps: float = 0.1

    def __post_init__(self):
        if self.kind not in ("none", "tuq", "wuq"):
            raise ValueError(f"unknown uncertainty mode {self.kind!r}")

    @classmethod
    def none(cls) -> "UncertaintyMode":
        return cls("none")

    @classmethod
    def tuq(cls, eps: float = 0.1) -> "UncertaintyMode":
        return cls("tuq", eps)

    @classmethod
    def wuq(cls) -> "UncertaintyMode":
        return cls("wuq")

    def wrap(self, out: PerceptionOutput) -> np.ndarray:
        if self.kind == "tuq":
            return apply_tuq(out, self.eps)
        if self.kind == "wuq":
            return apply_wuq(out)
        return out.dist


@dataclass(frozen=True)
class UpdateResult:
    belief: Belief
    fell_back: bool


def lift_vision_dist(model: VPomdpModel, perc_dist: np.ndarray) -> np.ndarray:
    """Expand a vision-class distribution to a per-state evidence weight.

    Entries below EVIDENCE_FLOOR are zeroed first.
    """
    d = np.asarray(perc_dist, dtype=np.float64)
    if d.shape != (model.n_vision_classes,):
        raise ValueError(
            f"perception dist has {d.shape[0] if d.ndim == 1 else d.shape} entries, "
            f"model has {model.n_vision_classes} vision classes"
        )
    d = np.where(d < EVIDENCE_FLOOR, 0.0, d)
    return d[model.vision_component]


def multiplicative_pool(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Pointwise product of two distributions over states, renormalized."""
    num = d1 * d2
    norm = num.sum()
    if norm == 0.0:
        raise EmptyPoolError("pooled distributions have disjoint support")
    return num / norm


def pbp_update_array(
    model: VPomdpModel,
    b: np.ndarray,
    a: int,
    perc_dist: np.ndarray,
    z_nv: int | None = None,
) -> tuple[np.ndarray, bool]:
    """Array-level perception-based update; see pbp_update."""
    pred = propagate_array(model, b, a)
    evidence = lift_vision_dist(model, perc_dist)
    if z_nv is not None:
        evidence = evidence * model.o_nv[:, z_nv]
    post = evidence * pred
    norm = post.sum()
    if norm == 0.0:
        n = model.n_states
        return np.full(n, 1.0 / n), True
    return post / norm, False


def pbp_update(
    model: VPomdpModel,
    belief: Belief,
    a: int,
    perc_dist: np.ndarray,
    z_nv: int | None = None,
) -> UpdateResult:
    """Belief update using a perception posterior as the vision evidence.

    b'(s') is proportional to perc_dist(s'_v) * O_nv(z_nv|s') * Pr(s'|b,a);
    with z_nv absent the non-vision factor is dropped (pure-vision case).
    A zero normalizer returns the uniform fallback belief, flagged.
    """
    belief.validate(model.n_states)
    if z_nv is not None and not (0 <= z_nv < len(model.nonvision_obs_labels)):
        raise ValueError(f"non-vision observation {z_nv} out of range")
    arr, fell_back = pbp_update_array(model, belief.to_array(model.n_states), a, perc_dist, z_nv)
    return UpdateResult(Belief.from_array(arr), fell_back)


def uncertainty_aware_update(
    model: VPomdpModel,
    belief: Belief,
    a: int,
    out: PerceptionOutput,
    z_nv: int | None = None,
    mode: UncertaintyMode = UncertaintyMode.none(),
) -> UpdateResult:
    """pbp_update with the perception output gated by the uncertainty mode."""
    return pbp_update(model, belief, a, mode.wrap(out), z_nv)


def psrl_update_array(
    model: VPomdpModel,
    b: np.ndarray,
    a: int,
    perc_dist: np.ndarray,
    z_nv: int | None = None,
) -> tuple[np.ndarray, bool]:
    """Single-step perception substitution: the belief's vision marginal is
    replaced by the raw current perception output, while the non-vision
    marginal is propagated and conditioned on the non-vision observation only.
    """
    pred = propagate_array(model, b, a)
    if z_nv is not None:
        post = model.o_nv[:, z_nv] * pred
    else:
        post = pred
    norm = post.sum()
    fell_back = False
    if norm == 0.0:
        post = np.full(model.n_states, 1.0 / model.n_states)
        fell_back = True
    else:
        post = post / norm
    marg_nv = np.bincount(model.nonvision_component, weights=post, minlength=model.n_nonvision_components)
    d = np.asarray(perc_dist, dtype=np.float64)
    combined = d[model.vision_component] * marg_nv[model.nonvision_component]
    total = combined.sum()
    if total == 0.0:
        return np.full(model.n_states, 1.0 / model.n_states), True
    return combined / total, fell_back
