"""Perception outputs, uncertainty scoring, and a synthetic vision channel.

The channel emulates a trained, calibrated image classifier: every opaque
observation ID maps to a stored class distribution plus an uncertainty score
in [0, 1]. Channel accuracy is controlled by biasing the true-class logit;
the bias is calibrated so the expected argmax accuracy matches the target.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .model import SIMPLEX_ATOL, ModelError

SPLITS = ("perc", "plan", "act")

# near-zero sharpness used for pure-noise outputs; keeps dists within
# L1 0.05 of uniform for any class count
_PURE_NOISE_SHARPNESS = 0.01


class PerceptionLookupError(KeyError):
    """Raised when an observation ID has no stored perception output."""


@dataclass(frozen=True)
class PerceptionOutput:
    """Classifier posterior over vision classes plus a scalar uncertainty."""

    dist: np.ndarray
    uncertainty: float

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=np.float64)
        if (d < 0).any() or abs(d.sum() - 1.0) > SIMPLEX_ATOL:
            raise ModelError("perception dist is not a probability distribution")
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)
        if not (0.0 <= self.uncertainty <= 1.0):
            raise ModelError(f"uncertainty {self.uncertainty} outside [0,1]")


@dataclass
class PerceptionTable:
    """Observation-ID keyed store of perception outputs with class labels."""

    outputs: dict[str, PerceptionOutput] = field(default_factory=dict)
    labels: dict[str, int] = field(default_factory=dict)

    def add(self, obs_id: str, out: PerceptionOutput, label: int) -> None:
        self.outputs[obs_id] = out
        self.labels[obs_id] = label

    def predict(self, obs_id: str) -> PerceptionOutput:
        try:
            return self.outputs[obs_id]
        except KeyError:
            raise PerceptionLookupError(obs_id) from None

    def __contains__(self, obs_id: str) -> bool:
        return obs_id in self.outputs

    def __len__(self) -> int:
        return len(self.outputs)

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for obs_id, out in self.outputs.items():
                rec = {
                    "obs_id": obs_id,
                    "dist": out.dist.tolist(),
                    "uncertainty": out.uncertainty,
                    "label": self.labels[obs_id],
                }
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "PerceptionTable":
        table = cls()
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                table.add(
                    rec["obs_id"],
                    PerceptionOutput(np.array(rec["dist"], dtype=np.float64), float(rec["uncertainty"])),
                    int(rec["label"]),
                )
        return table


@dataclass(frozen=True)
class VisionDataset:
    """Finite (obs_id, vision-class) pairs belonging to one split."""

    pairs: tuple[tuple[str, int], ...]
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ModelError(f"unknown split {self.split!r}")
        seen: dict[str, int] = {}
        for obs_id, label in self.pairs:
            if seen.setdefault(obs_id, label) != label:
                raise ModelError(f"obs_id {obs_id!r} appears with conflicting labels")

    def ids(self) -> tuple[str, ...]:
        return tuple(obs_id for obs_id, _ in self.pairs)


@dataclass(frozen=True)
class SyntheticChannelSpec:
    classes: int
    accuracy: float
    sharpness: float = 4.0
    overconfidence_on_corrupt: bool = False
    seed: int = 0
    uncertainty_noise: float = 0.0  # optional decorrelation of score from dist

    def __post_init__(self):
        if self.classes < 1:
            raise ModelError("classes must be >= 1")
        if not (1.0 / self.classes <= self.accuracy <= 1.0):
            raise ModelError(f"accuracy {self.accuracy} outside [1/classes, 1]")
        if self.sharpness <= 0:
            raise ModelError("sharpness must be positive")


# -- uncertainty functions --------------------------------------------


def uncertainty_confidence(dist: np.ndarray) -> float:
    """One minus the top predicted probability."""
    dist = np.asarray(dist, dtype=np.float64)
    return float(1.0 - dist.max())


def uncertainty_entropy(dist: np.ndarray) -> float:
    """Shannon entropy of the prediction, normalized to [0, 1] by log2(classes)."""
    dist = np.asarray(dist, dtype=np.float64)
    if dist.size < 2:
        raise ModelError("entropy score needs at least two classes")
    nz = dist[dist > 0]
    h = float(-(nz * np.log2(nz)).sum())
    return min(1.0, h / np.log2(dist.size))


# -- uncertainty-aware wrappers ---------------------------------------


def apply_tuq(out: PerceptionOutput, eps: float) -> np.ndarray:
    """Keep the prediction when uncertainty <= eps, otherwise go uniform.

    The threshold comparison is non-strict: uncertainty exactly at eps
    keeps the prediction.
    """
    if not (0.0 <= eps <= 1.0):
        raise ModelError(f"eps {eps} outside [0,1]")
    k = out.dist.size
    if out.uncertainty <= eps:
        return out.dist
    return np.full(k, 1.0 / k)


def apply_wuq(out: PerceptionOutput) -> np.ndarray:
    """Blend the prediction toward uniform by its uncertainty.

    Below uncertainty 0.5 the output is u*U + (1-u)*dist; from 0.5 upward
    the prediction is discarded entirely in favor of uniform.
    """
    k = out.dist.size
    uniform = np.full(k, 1.0 / k)
    u = out.uncertainty
    if u < 0.5:
        return u * uniform + (1.0 - u) * out.dist
    return uniform


# -- synthetic channel ------------------------------------------------


@lru_cache(maxsize=None)
def _calibrated_bias(classes: int, accuracy: float) -> float:
    """Bias on the true-class logit so that argmax accuracy equals `accuracy`.

    With i.i.d. standard-normal logits, accuracy(b) is the probability that
    the biased true-class logit beats the max of the other classes:
    integral of phi(x) * Phi(x+b)^(classes-1). Solved by bisection; the
    integrand is evaluated with Gauss-Hermite quadrature.
    """
    if classes == 1:
        return 0.0
    nodes, weights = np.polynomial.hermite_e.hermegauss(120)
    norm = weights.sum()

    def acc(bias: float) -> float:
        return float((weights * ndtr(nodes + bias) ** (classes - 1)).sum() / norm)

    lo, hi = 0.0, 1.0
    while acc(hi) < accuracy and hi < 1e4:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if acc(mid) < accuracy:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _id_rng(seed: int, obs_id: str, variant: str = "") -> np.random.Generator:
    key = zlib.crc32((obs_id + "|" + variant).encode())
    return np.random.default_rng([seed, key])


def _draw_output(
    spec: SyntheticChannelSpec, obs_id: str, label: int, *, accuracy: float, sharpness: float, variant: str = ""
) -> PerceptionOutput:
    """Deterministic per (seed, obs_id, variant) classifier output."""
    k = spec.classes
    rng = _id_rng(spec.seed, obs_id, variant)
    if accuracy >= 1.0:
        dist = np.zeros(k)
        dist[label] = 1.0
        return PerceptionOutput(dist, 0.0)
    logits = rng.standard_normal(k)
    logits[label] += _calibrated_bias(k, accuracy)
    dist = _softmax(sharpness * logits)
    u = uncertainty_entropy(dist) if k > 1 else 0.0
    if spec.uncertainty_noise > 0:
        u = float(np.clip(u + rng.normal(0.0, spec.uncertainty_noise), 0.0, 1.0))
    return PerceptionOutput(dist, u)


def _draw_overconfident_wrong(spec: SyntheticChannelSpec, obs_id: str, label: int, variant: str) -> PerceptionOutput:
    """Near-point-mass on a wrong class with a low uncertainty score."""
    k = spec.classes
    rng = _id_rng(spec.seed, obs_id, variant)
    wrong = int((label + 1 + rng.integers(k - 1)) % k) if k > 1 else label
    top = 1.0 - float(rng.uniform(0.005, 0.03))
    dist = np.full(k, (1.0 - top) / (k - 1)) if k > 1 else np.ones(1)
    dist[wrong] = top
    u = uncertainty_entropy(dist) if k > 1 else 0.0
    return PerceptionOutput(dist, u)


def synthesize_channel(
    spec: SyntheticChannelSpec, ids_per_class_per_split: int
) -> tuple[dict[str, VisionDataset], PerceptionTable]:
    """Generate three disjoint ID pools per class and their classifier outputs.

    Returns ({"perc": ..., "plan": ..., "act": ...}, table). Fully
    deterministic given spec.seed.
    """
    if ids_per_class_per_split < 1:
        raise ModelError("ids_per_class_per_split must be >= 1")
    table = PerceptionTable()
    datasets: dict[str, VisionDataset] = {}
    for split in SPLITS:
        pairs = []
        for label in range(spec.classes):
            for i in range(ids_per_class_per_split):
                obs_id = f"{split}-c{label:03d}-{i:04d}"
                out = _draw_output(
                    spec, obs_id, label, accuracy=spec.accuracy, sharpness=spec.sharpness
                )
                table.add(obs_id, out, label)
                pairs.append((obs_id, label))
        datasets[split] = VisionDataset(tuple(pairs), split)
    return datasets, table


def corrupt_output(
    spec: SyntheticChannelSpec, obs_id: str, label: int, mode: str, additive_accuracy: float = 0.4
) -> PerceptionOutput:
    """Classifier output for a corrupted variant of an observation.

    additive: degraded but calibrated accuracy (default 0.4).
    pure: uninformative near-uniform output, unless the channel is flagged
    overconfident-on-corrupt, in which case the output is confidently wrong.
    """
    if mode == "additive":
        acc = max(additive_accuracy, 1.0 / spec.classes)
        return _draw_output(spec, obs_id, label, accuracy=acc, sharpness=spec.sharpness, variant="add")
    if mode == "pure":
        if spec.overconfidence_on_corrupt:
            return _draw_overconfident_wrong(spec, obs_id, label, variant="pure")
        return _draw_output(
            spec, obs_id, label, accuracy=1.0 / spec.classes, sharpness=_PURE_NOISE_SHARPNESS, variant="pure"
        )
    raise ModelError(f"unknown corruption mode {mode!r}")


def rescore_table(table: PerceptionTable, unc_fn: str) -> PerceptionTable:
    """Replace stored uncertainty scores with a recomputed function of the dist.

    unc_fn: "table" keeps stored scores; "confidence"/"entropy" recompute.
    """
    if unc_fn == "table":
        return table
    if unc_fn not in ("confidence", "entropy"):
        raise ModelError(f"unknown uncertainty function {unc_fn!r}")
    fn = uncertainty_confidence if unc_fn == "confidence" else uncertainty_entropy
    out = PerceptionTable()
    for obs_id, po in table.outputs.items():
        score = fn(po.dist) if po.dist.size > 1 else 0.0
        out.add(obs_id, PerceptionOutput(po.dist, score), table.labels[obs_id])
    return out


def save_split_manifest(datasets: dict[str, VisionDataset], path: str | Path) -> None:
    doc = {split: [obs_id for obs_id, _ in ds.pairs] for split, ds in datasets.items()}
    Path(path).write_text(json.dumps(doc))
