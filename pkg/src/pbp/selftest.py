"""Built-in property battery for the CLI selftest command.

A fast, dependency-free sanity pass over the library's core identities;
the pytest suite is the authoritative check.
"""

from __future__ import annotations

import numpy as np

from .belief import UncertaintyMode, lift_vision_dist, multiplicative_pool, pbp_update
from .model import Belief, StateVar, VPomdpModel, propagate
from .perception import PerceptionOutput, apply_tuq, apply_wuq
from .planning_model import estimate_vision_obs_fn
from .perception import VisionDataset


def _random_model(rng: np.random.Generator) -> VPomdpModel:
    n_v = int(rng.integers(2, 4))
    n_nv = int(rng.integers(1, 4))
    n = n_v * n_nv
    n_a = int(rng.integers(1, 4))
    n_znv = int(rng.integers(1, 4))
    t = rng.dirichlet(np.ones(n), size=(n, n_a))
    return VPomdpModel(
        state_vars=(
            StateVar("v", tuple(f"v{i}" for i in range(n_v))),
            StateVar("w", tuple(f"w{i}" for i in range(n_nv))),
        ),
        vision_state_indices=(0,),
        actions=tuple(f"a{i}" for i in range(n_a)),
        transition=t,
        reward=rng.normal(size=(n, n_a)),
        discount=0.95,
        initial_belief=rng.dirichlet(np.ones(n)),
        nonvision_obs_labels=tuple(f"z{i}" for i in range(n_znv)),
        o_nv=rng.dirichlet(np.ones(n_znv), size=n),
    )


def run() -> int:
    rng = np.random.default_rng(0)
    failures = 0

    def check(name: str, ok: bool) -> None:
        nonlocal failures
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        failures += 0 if ok else 1

    # simplex preservation
    ok = True
    for _ in range(50):
        m = _random_model(rng)
        b = Belief.from_array(rng.dirichlet(np.ones(m.n_states)))
        a = int(rng.integers(m.n_actions))
        pred = propagate(m, b, a)
        ok &= abs(pred.sum() - 1.0) < 1e-9 and (pred >= 0).all()
    check("propagate stays on the simplex", ok)

    # pooling identity
    ok = True
    for _ in range(50):
        m = _random_model(rng)
        b = Belief.from_array(rng.dirichlet(np.ones(m.n_states)))
        a = int(rng.integers(m.n_actions))
        perc = rng.dirichlet(np.ones(m.n_vision_classes))
        res = pbp_update(m, b, a, perc)
        pooled = multiplicative_pool(propagate(m, b, a), lift_vision_dist(m, perc))
        ok &= np.array_equal(res.belief.to_array(m.n_states), pooled)
    check("pure-vision update equals multiplicative pooling", ok)

    # uncertainty wrappers
    d = np.array([0.7, 0.2, 0.1])
    out_low = PerceptionOutput(d, 0.05)
    out_high = PerceptionOutput(d, 0.9)
    ok = np.array_equal(apply_tuq(out_low, 0.1), d)
    ok &= np.allclose(apply_tuq(out_high, 0.1), 1 / 3)
    ok &= np.array_equal(apply_wuq(PerceptionOutput(d, 0.0)), d)
    ok &= np.allclose(apply_wuq(out_high), 1 / 3)
    check("threshold and blend wrappers hit their branches", ok)

    # count estimator
    ds = VisionDataset((("i0", 0), ("i0", 0), ("i1", 0), ("i2", 1)), "plan")
    est = estimate_vision_obs_fn(ds, 2)
    ok = est.prob("i0", 0) == 2 / 3 and est.prob("i1", 0) == 1 / 3 and est.prob("i2", 1) == 1.0
    check("frequency estimate matches hand counts", ok)

    print(f"{'OK' if failures == 0 else f'{failures} FAILURES'}")
    return 1 if failures else 0
