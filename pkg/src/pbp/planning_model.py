"""Fully specified planning POMDP built from the plan-split vision dataset.

The vision observation function is estimated as the relative frequency of
each observation ID among the IDs labeled with the same vision class. The
resulting model enumerates (obs_id, non-vision observation) pairs, which
lets planners sample observations; successor beliefs are still computed
with the perception-based update, never from the frequency estimate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .model import VPomdpModel
from .perception import VisionDataset


class CoverageError(ValueError):
    """Raised when a vision class has no examples in the plan split."""


@dataclass(frozen=True)
class EstimatedVisionObs:
    """Per-class frequency estimate over plan-split observation IDs.

    obs_ids preserves dataset insertion order; rows of `table` follow it.
    """

    obs_ids: tuple[str, ...]
    table: np.ndarray  # (n_ids, n_classes), column-normalized per class

    def prob(self, obs_id: str, vision_class: int) -> float:
        return float(self.table[self.obs_ids.index(obs_id), vision_class])


def estimate_vision_obs_fn(d_plan: VisionDataset, n_classes: int) -> EstimatedVisionObs:
    """Count-ratio estimate of the vision observation function.

    Every class in [0, n_classes) must appear at least once in the dataset.
    """
    ids: list[str] = []
    index: dict[str, int] = {}
    counts: dict[tuple[int, int], int] = {}
    class_totals = np.zeros(n_classes, dtype=np.int64)
    for obs_id, label in d_plan.pairs:
        if not (0 <= label < n_classes):
            raise CoverageError(f"label {label} outside [0, {n_classes})")
        if obs_id not in index:
            index[obs_id] = len(ids)
            ids.append(obs_id)
        key = (index[obs_id], label)
        counts[key] = counts.get(key, 0) + 1
        class_totals[label] += 1
    uncovered = np.flatnonzero(class_totals == 0)
    if uncovered.size:
        raise CoverageError(f"vision class {int(uncovered[0])} has no plan-split examples")
    table = np.zeros((len(ids), n_classes), dtype=np.float64)
    for (i, label), c in counts.items():
        table[i, label] = c / class_totals[label]
    table.setflags(write=False)
    return EstimatedVisionObs(tuple(ids), table)


@dataclass(frozen=True)
class PlanningModel:
    """Enumerable-observation POMDP: dynamics copied from the base model,
    observation space = plan-split IDs x non-vision observations."""

    model: VPomdpModel
    obs_ids: tuple[str, ...]
    ov: np.ndarray  # (n_ids, n_vision_classes)

    @cached_property
    def n_obs(self) -> int:
        return len(self.obs_ids) * len(self.model.nonvision_obs_labels)

    def obs_pair(self, z: int) -> tuple[int, int]:
        """Decode a flat observation index into (id index, non-vision index)."""
        n_nv = len(self.model.nonvision_obs_labels)
        return z // n_nv, z % n_nv

    def obs_index(self, id_idx: int, z_nv: int) -> int:
        return id_idx * len(self.model.nonvision_obs_labels) + z_nv

    @cached_property
    def obs_prob(self) -> np.ndarray:
        """Dense O(z|s) over the flat observation space, shape (n_obs, S)."""
        per_state_class = self.ov[:, self.model.vision_component]  # (n_ids, S)
        o = per_state_class[:, None, :] * self.model.o_nv.T[None, :, :]  # (n_ids, Z_nv, S)
        out = o.reshape(self.n_obs, self.model.n_states)
        out.setflags(write=False)
        return out

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "observation_manifest": {"obs_ids": list(self.obs_ids), "ov": self.ov.tolist()},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, d: dict) -> "PlanningModel":
        return cls(
            model=VPomdpModel.from_dict(d["model"]),
            obs_ids=tuple(d["observation_manifest"]["obs_ids"]),
            ov=np.array(d["observation_manifest"]["ov"], dtype=np.float64),
        )

    @classmethod
    def load(cls, path: str | Path) -> "PlanningModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_planning_model(model: VPomdpModel, est: EstimatedVisionObs) -> PlanningModel:
    """Assemble the planning POMDP from the base dynamics and the estimate."""
    if est.table.shape[1] != model.n_vision_classes:
        raise CoverageError(
            f"estimate covers {est.table.shape[1]} classes, model has {model.n_vision_classes}"
        )
    colsums = est.table.sum(axis=0)
    if not np.allclose(colsums, 1.0, atol=1e-9):
        raise CoverageError("estimate columns must each sum to 1")
    return PlanningModel(model=model, obs_ids=est.obs_ids, ov=est.table)
