"""Shared belief-update configuration for planners and the acting loop.

An updater bundles three orthogonal choices:
  provider: where the vision evidence comes from (the perception table, a
            forced uniform distribution, or an oracle point mass on the
            true class),
  unc_fn:   which uncertainty score gates it (stored, confidence, entropy),
  mode:     how the score gates the output (pass-through, threshold, blend),
  rule:     how the evidence enters the belief (full Bayes step, or the
            single-step substitution used by the perception-only baseline).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import UncertaintyMode, pbp_update_array, psrl_update_array
from .model import VPomdpModel
from .perception import (
    PerceptionOutput,
    PerceptionTable,
    uncertainty_confidence,
    uncertainty_entropy,
)

PROVIDERS = ("model", "uniform", "oracle")
RULES = ("pbp", "psrl")
UNC_FNS = ("table", "confidence", "entropy")


@dataclass(frozen=True)
class UpdaterSpec:
    rule: str = "pbp"
    mode: UncertaintyMode = UncertaintyMode.none()
    provider: str = "model"
    unc_fn: str = "table"

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown update rule {self.rule!r}")
        if self.provider not in PROVIDERS:
            raise ValueError(f"unknown perception provider {self.provider!r}")
        if self.unc_fn not in UNC_FNS:
            raise ValueError(f"unknown uncertainty function {self.unc_fn!r}")

    def effective_output(self, out: PerceptionOutput | None, label: int, n_classes: int) -> PerceptionOutput:
        """Provider substitution plus uncertainty rescoring."""
        if self.provider == "uniform":
            return PerceptionOutput(np.full(n_classes, 1.0 / n_classes), 1.0)
        if self.provider == "oracle":
            dist = np.zeros(n_classes)
            dist[label] = 1.0
            return PerceptionOutput(dist, 0.0)
        assert out is not None
        if self.unc_fn == "table" or n_classes < 2:
            return out
        fn = uncertainty_confidence if self.unc_fn == "confidence" else uncertainty_entropy
        return PerceptionOutput(out.dist, fn(out.dist))

    def evidence_dist(self, out: PerceptionOutput | None, label: int, n_classes: int) -> np.ndarray:
        return self.mode.wrap(self.effective_output(out, label, n_classes))

    def update_array(
        self,
        model: VPomdpModel,
        b: np.ndarray,
        a: int,
        out: PerceptionOutput | None,
        label: int,
        z_nv: int | None,
    ) -> tuple[np.ndarray, bool]:
        """One acting-cycle belief update under this spec.

        `label` is the true vision class of the arrived state; it is only
        consulted by the oracle provider.
        """
        dist = self.evidence_dist(out, label, model.n_vision_classes)
        if self.rule == "psrl":
            return psrl_update_array(model, b, a, dist, z_nv)
        return pbp_update_array(model, b, a, dist, z_nv)


def plan_evidence(
    table: PerceptionTable,
    obs_ids: tuple[str, ...],
    spec: UpdaterSpec,
    n_classes: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-plan-ID evidence for planners.

    Returns (wrapped dists (n_ids, classes), raw argmax class (n_ids,),
    labels (n_ids,)). The argmax of the provider-substituted raw dist is
    what observation bucketing keys on.
    """
    n = len(obs_ids)
    wrapped = np.zeros((n, n_classes))
    argmax = np.zeros(n, dtype=np.int64)
    labels = np.zeros(n, dtype=np.int64)
    for i, obs_id in enumerate(obs_ids):
        label = table.labels[obs_id]
        eff = spec.effective_output(table.predict(obs_id), label, n_classes)
        wrapped[i] = spec.mode.wrap(eff)
        argmax[i] = int(eff.dist.argmax())
        labels[i] = label
    return wrapped, argmax, labels
