import numpy as np
import pytest

from pbp.model import StateVar, VPomdpModel


def random_vpomdp(
    rng: np.random.Generator,
    max_vision: int = 4,
    max_nonvision: int = 3,
    max_actions: int = 4,
    max_znv: int = 3,
    max_states: int = 12,
) -> VPomdpModel:
    """Random vision-factorizable POMDP with dense dirichlet rows."""
    while True:
        n_v = int(rng.integers(1, max_vision + 1))
        n_nv = int(rng.integers(1, max_nonvision + 1))
        if n_v * n_nv <= max_states and n_v >= 1:
            break
    n = n_v * n_nv
    n_a = int(rng.integers(1, max_actions + 1))
    n_znv = int(rng.integers(1, max_znv + 1))
    return VPomdpModel(
        state_vars=(
            StateVar("vis", tuple(f"v{i}" for i in range(n_v))),
            StateVar("rest", tuple(f"r{i}" for i in range(n_nv))),
        ),
        vision_state_indices=(0,),
        actions=tuple(f"a{i}" for i in range(n_a)),
        transition=rng.dirichlet(np.ones(n), size=(n, n_a)),
        reward=rng.normal(size=(n, n_a)),
        discount=0.95,
        initial_belief=rng.dirichlet(np.ones(n)),
        nonvision_obs_labels=tuple(f"z{i}" for i in range(n_znv)),
        o_nv=rng.dirichlet(np.ones(n_znv), size=n),
    )


def random_vision_obs_fn(rng: np.random.Generator, n_vision: int, n_zv: int) -> np.ndarray:
    """Random vision observation table O_v(z_v | s_v), shape (n_vision, n_zv)."""
    return rng.dirichlet(np.ones(n_zv), size=n_vision)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
