"""Benchmark environments on a synthetic vision channel.

Three domains: a slippery grid-lake walk, a flower-picking grid, and a
traffic-intersection crossing task. Each exposes a factored POMDP whose
vision state component is observed only through opaque image IDs served by
the channel; corruption modes degrade the channel at a configurable rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import Belief, ModelError, StateVar, VPomdpModel
from .perception import (
    PerceptionTable,
    SyntheticChannelSpec,
    VisionDataset,
    corrupt_output,
    synthesize_channel,
)

DEFAULT_HORIZON = 200


class TerminalStateError(ValueError):
    """Raised when stepping an episode from a terminal state."""


@dataclass(frozen=True)
class CorruptionConfig:
    noise_probability: float
    mode: str = "pure"  # "additive" | "pure"
    additive_accuracy: float = 0.4

    def __post_init__(self):
        if not (0.0 <= self.noise_probability <= 1.0):
            raise ModelError("noise_probability outside [0,1]")
        if self.mode not in ("additive", "pure"):
            raise ModelError(f"unknown corruption mode {self.mode!r}")


@dataclass(frozen=True)
class VisionChannel:
    """Per-class observation-ID pools for the three splits, plus outputs.

    After corruption, the plan split has a fixed fraction of its IDs
    replaced by corrupted variants, while the act split keeps clean and
    corrupted pools side by side and draws a corrupted ID per step with
    probability `noise_probability`.
    """

    spec: SyntheticChannelSpec
    datasets: dict[str, VisionDataset]
    table: PerceptionTable
    act_corrupt_pools: dict[int, tuple[str, ...]] = field(default_factory=dict)
    noise_probability: float = 0.0

    def act_pools(self) -> dict[int, tuple[str, ...]]:
        pools: dict[int, list[str]] = {c: [] for c in range(self.spec.classes)}
        for obs_id, label in self.datasets["act"].pairs:
            pools[label].append(obs_id)
        return {c: tuple(v) for c, v in pools.items()}

    def sample_act_id(self, vision_class: int, rng: np.random.Generator) -> str:
        corrupted = self.act_corrupt_pools.get(vision_class)
        if corrupted and self.noise_probability > 0 and rng.random() < self.noise_probability:
            return corrupted[rng.integers(len(corrupted))]
        pool = self._clean_act_pools[vision_class]
        return pool[rng.integers(len(pool))]

    @property
    def _clean_act_pools(self) -> dict[int, tuple[str, ...]]:
        cached = getattr(self, "_act_pool_cache", None)
        if cached is None:
            cached = self.act_pools()
            object.__setattr__(self, "_act_pool_cache", cached)
        return cached


def apply_corruption(channel: VisionChannel, cfg: CorruptionConfig, seed: int = 0) -> VisionChannel:
    """Derive a corrupted channel: plan-split IDs are replaced at the noise
    rate by corrupted variants; the act split gains corrupted twin pools."""
    if cfg.noise_probability == 0.0:
        return channel
    spec = channel.spec
    table = PerceptionTable(dict(channel.table.outputs), dict(channel.table.labels))
    rng = np.random.default_rng([spec.seed, seed, 0xC0FFEE])

    # plan split: fixed-fraction replacement so the dataset estimate sees noise
    plan_pairs = list(channel.datasets["plan"].pairs)
    by_class: dict[int, list[int]] = {}
    for idx, (_, label) in enumerate(plan_pairs):
        by_class.setdefault(label, []).append(idx)
    for label, indices in sorted(by_class.items()):
        m = int(round(cfg.noise_probability * len(indices)))
        chosen = rng.permutation(len(indices))[:m]
        for j in chosen:
            idx = indices[j]
            obs_id = plan_pairs[idx][0]
            new_id = f"{obs_id}!{cfg.mode}"
            table.add(new_id, corrupt_output(spec, new_id, label, cfg.mode, cfg.additive_accuracy), label)
            plan_pairs[idx] = (new_id, label)
    datasets = dict(channel.datasets)
    datasets["plan"] = VisionDataset(tuple(plan_pairs), "plan")

    # act split: corrupted twins of the whole pool, drawn per step
    act_corrupt: dict[int, tuple[str, ...]] = {}
    pools = channel.act_pools()
    for label in range(spec.classes):
        twins = []
        for obs_id in pools[label]:
            new_id = f"{obs_id}!{cfg.mode}"
            table.add(new_id, corrupt_output(spec, new_id, label, cfg.mode, cfg.additive_accuracy), label)
            twins.append(new_id)
        act_corrupt[label] = tuple(twins)
    return VisionChannel(
        spec=spec,
        datasets=datasets,
        table=table,
        act_corrupt_pools=act_corrupt,
        noise_probability=cfg.noise_probability,
    )


@dataclass(frozen=True)
class EnvInstance:
    name: str
    model: VPomdpModel
    channel: VisionChannel
    terminal: np.ndarray  # (S,) bool
    horizon: int = DEFAULT_HORIZON

    def with_channel(self, channel: VisionChannel) -> "EnvInstance":
        return replace(self, channel=channel)


def env_step(
    env: EnvInstance,
    state: int,
    action: int,
    rng: np.random.Generator,
    step_index: int | None = None,
) -> tuple[int, tuple[str, int], float, bool]:
    """Sample one transition: returns (s', (obs_id, z_nv), reward, done)."""
    if env.terminal[state]:
        raise TerminalStateError(f"state {state} is terminal")
    env.model.check_action(action)
    t_row = env.model.transition[state, action]
    s_next = int(rng.choice(env.model.n_states, p=t_row))
    z_nv = int(rng.choice(env.model.o_nv.shape[1], p=env.model.o_nv[s_next]))
    obs_id = env.channel.sample_act_id(int(env.model.vision_component[s_next]), rng)
    reward = float(env.model.reward[state, action])
    done = bool(env.terminal[s_next])
    if step_index is not None and step_index + 1 >= env.horizon:
        done = True
    return s_next, (obs_id, z_nv), reward, done


def sample_initial_state(env: EnvInstance, rng: np.random.Generator) -> int:
    return int(rng.choice(env.model.n_states, p=env.model.initial_belief))


# -- grid-lake environment ---------------------------------------------

LAKE_MAPS = {
    4: ("SFFF", "FHFH", "FFFH", "HFFG"),
    8: (
        "SFFFFFFF",
        "FFFFFFFF",
        "FFFHFFFF",
        "FFFFFHFF",
        "FFFHFFFF",
        "FHHFFFHF",
        "FHFFHFHF",
        "FFFHFFFG",
    ),
}

_DIRS = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}
# when the surface is slippery the agent slides to one of the two
# directions perpendicular to the intended one, 0.5 each
_PERPENDICULAR = {"N": ("E", "W"), "E": ("N", "S"), "S": ("E", "W"), "W": ("N", "S")}


def _lake_move(n: int, cell: int, direction: str) -> int:
    r, c = divmod(cell, n)
    dr, dc = _DIRS[direction]
    nr, nc = r + dr, c + dc
    if not (0 <= nr < n and 0 <= nc < n):
        return cell
    return nr * n + nc


def make_frozen_lake(
    n: int = 4,
    channel_spec: SyntheticChannelSpec | None = None,
    ids_per_class: int = 40,
    horizon: int = DEFAULT_HORIZON,
) -> EnvInstance:
    """Grid walk to a goal over holes, with a hidden per-step slipperiness.

    State = (cell, slippery). Movement is deterministic when not slippery;
    when slippery the agent moves perpendicular to the intended direction
    (0.5 each way). Next-step slipperiness is an independent coin flip.
    The slippery flag is sensed exactly; the cell is seen only via images.
    Entering the goal pays 1; holes and the goal are terminal.
    """
    if n not in LAKE_MAPS:
        raise ModelError(f"no {n}x{n} map; choose from {sorted(LAKE_MAPS)}")
    grid = LAKE_MAPS[n]
    cells = n * n
    actions = ("N", "E", "S", "W")
    holes = {i for i in range(cells) if grid[i // n][i % n] == "H"}
    goal = next(i for i in range(cells) if grid[i // n][i % n] == "G")
    start = next(i for i in range(cells) if grid[i // n][i % n] == "S")

    n_states = cells * 2  # (cell, slippery) row-major
    t = np.zeros((n_states, 4, n_states))
    r = np.zeros((n_states, 4))
    terminal = np.zeros(n_states, dtype=bool)
    for cell in range(cells):
        for slip in range(2):
            s = cell * 2 + slip
            if cell in holes or cell == goal:
                terminal[s] = True
                t[s, :, s] = 1.0
                continue
            for ai, direction in enumerate(actions):
                if slip == 0:
                    dests = {_lake_move(n, cell, direction): 1.0}
                else:
                    dests = {}
                    for perp in _PERPENDICULAR[direction]:
                        dest = _lake_move(n, cell, perp)
                        dests[dest] = dests.get(dest, 0.0) + 0.5
                for dest, p in dests.items():
                    for slip2 in range(2):
                        t[s, ai, dest * 2 + slip2] += p * 0.5
                    if dest == goal:
                        r[s, ai] += p * 1.0

    b0 = np.zeros(n_states)
    b0[start * 2 + 0] = 0.5
    b0[start * 2 + 1] = 0.5

    o_nv = np.zeros((n_states, 2))
    for cell in range(cells):
        for slip in range(2):
            o_nv[cell * 2 + slip, slip] = 1.0

    model = VPomdpModel(
        state_vars=(
            StateVar("cell", tuple(str(i) for i in range(cells))),
            StateVar("slippery", ("no", "yes")),
        ),
        vision_state_indices=(0,),
        actions=actions,
        transition=t,
        reward=r,
        discount=0.95,
        initial_belief=b0,
        nonvision_obs_labels=("not-slippery", "slippery"),
        o_nv=o_nv,
    )
    spec = channel_spec or SyntheticChannelSpec(classes=cells, accuracy=0.95, seed=7)
    if spec.classes != cells:
        raise ModelError(f"channel must have {cells} classes")
    datasets, table = synthesize_channel(spec, ids_per_class)
    channel = VisionChannel(spec=spec, datasets=datasets, table=table)
    return EnvInstance(f"frozen_lake{n}", model, channel, terminal, horizon)


# -- flower-picking grid ------------------------------------------------

FLOWER_TARGET_CELL = 20  # 1-based row-major cell numbering
FLOWER_GOAL_CELL = 25
FLOWER_POISON_CELLS = (2, 5, 8, 11, 17, 19, 23)
_FLOWER_MOVE_P = 0.6


def _grid5_neighbors(idx: int) -> list[int]:
    r, c = divmod(idx, 5)
    out = []
    for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
        nr, nc = r + dr, c + dc
        if 0 <= nr < 5 and 0 <= nc < 5:
            out.append(nr * 5 + nc)
    return out


def make_flower_grid(
    channel_spec: SyntheticChannelSpec | None = None,
    ids_per_class: int = 20,
    horizon: int = DEFAULT_HORIZON,
) -> EnvInstance:
    """5x5 grid: pick the target flower, then reach the goal corner.

    State = (cell, picked). Moves succeed with probability 0.6; the failure
    mass is split uniformly over staying put and the valid neighbor cells.
    Picking at the target pays +10 once; picking a poison flower ends the
    episode at -10; any other pick costs -1. Entering the goal cell ends
    the episode and pays +100 if the target was picked. The picked flag is
    observed exactly; the cell is seen only via flower images.
    """
    cells = 25
    target = FLOWER_TARGET_CELL - 1
    goal = FLOWER_GOAL_CELL - 1
    poison = {c - 1 for c in FLOWER_POISON_CELLS}
    actions = ("N", "E", "S", "W", "pick")
    n_states = cells * 2  # (cell, picked) row-major

    def move_dist(idx: int, direction: str) -> dict[int, float]:
        r, c = divmod(idx, 5)
        dr, dc = _DIRS[direction]
        nr, nc = r + dr, c + dc
        intended = nr * 5 + nc if (0 <= nr < 5 and 0 <= nc < 5) else idx
        dist = {intended: _FLOWER_MOVE_P}
        slip_targets = [idx] + _grid5_neighbors(idx)
        share = (1.0 - _FLOWER_MOVE_P) / len(slip_targets)
        for dest in slip_targets:
            dist[dest] = dist.get(dest, 0.0) + share
        return dist

    t = np.zeros((n_states, len(actions), n_states))
    r = np.zeros((n_states, len(actions)))
    terminal = np.zeros(n_states, dtype=bool)
    for cell in range(cells):
        for picked in range(2):
            s = cell * 2 + picked
            if cell == goal:
                terminal[s] = True
                t[s, :, s] = 1.0
                continue
            for ai, action in enumerate(actions):
                if action == "pick":
                    if cell == target and picked == 0:
                        t[s, ai, cell * 2 + 1] = 1.0
                        r[s, ai] = 10.0
                    elif cell in poison:
                        # picking poison ends the episode; the absorbing goal
                        # state doubles as the sink (entry reward stays -10)
                        t[s, ai, goal * 2 + picked] = 1.0
                        r[s, ai] = -10.0
                    else:
                        t[s, ai, s] = 1.0
                        r[s, ai] = -1.0
                    continue
                for dest, p in move_dist(cell, action).items():
                    t[s, ai, dest * 2 + picked] += p
                    if dest == goal and picked == 1:
                        r[s, ai] += p * 100.0

    b0 = np.zeros(n_states)
    b0[0 * 2 + 0] = 1.0  # top-left cell, nothing picked

    o_nv = np.zeros((n_states, 2))
    for cell in range(cells):
        for picked in range(2):
            o_nv[cell * 2 + picked, picked] = 1.0

    model = VPomdpModel(
        state_vars=(
            StateVar("cell", tuple(str(i + 1) for i in range(cells))),
            StateVar("picked", ("no", "yes")),
        ),
        vision_state_indices=(0,),
        actions=actions,
        transition=t,
        reward=r,
        discount=0.95,
        initial_belief=b0,
        nonvision_obs_labels=("not-picked", "picked"),
        o_nv=o_nv,
    )
    spec = channel_spec or SyntheticChannelSpec(classes=cells, accuracy=0.9, seed=11)
    if spec.classes != cells:
        raise ModelError(f"channel must have {cells} classes")
    datasets, table = synthesize_channel(spec, ids_per_class)
    channel = VisionChannel(spec=spec, datasets=datasets, table=table)
    return EnvInstance("flower_grid", model, channel, terminal, horizon)


# -- intersection crossing ----------------------------------------------

LIGHTS = ("green", "red", "yellow")
# red row: stay 0.7 / to yellow 0.3 (the published 0.8/0.3 pair exceeds 1;
# the yellow transition is kept and the stay mass absorbs the difference)
_LIGHT_T = {
    "green": {"green": 0.6, "red": 0.4},
    "red": {"red": 0.7, "yellow": 0.3},
    "yellow": {"green": 1.0},
}
_SIREN_T = np.array([[0.8, 0.2], [0.2, 0.8]])  # off/on toggle
INTERSECTION_POSITIONS = ("-1", "0", "1", "2", "3", "4", "5")


def make_intersection(
    channel_spec: SyntheticChannelSpec | None = None,
    ids_per_class: int = 40,
    horizon: int = DEFAULT_HORIZON,
) -> EnvInstance:
    """Approach an intersection and cross only when it is safe.

    State = (light, position, siren); position -1 is the crossed/terminal
    position, reached by moving back one or two positions from 5..0.
    Crossing under a red light costs -100, plus -200 if the siren is on at
    arrival; waiting costs -1 per step. Position is observed exactly, the
    siren reading is noisy (an active siren is always heard; an inactive
    one sounds active half the time), and the light is seen only via
    images.
    """
    n_pos = len(INTERSECTION_POSITIONS)
    actions = ("wait", "back1", "back2")
    n_states = len(LIGHTS) * n_pos * 2  # (light, position, siren) row-major

    def sidx(light: int, pos: int, siren: int) -> int:
        return (light * n_pos + pos) * 2 + siren

    light_t = np.zeros((3, 3))
    for i, li in enumerate(LIGHTS):
        for lj, p in _LIGHT_T[li].items():
            light_t[i, LIGHTS.index(lj)] = p

    def next_pos(pos: int, action: str) -> int:
        # pos index 0 encodes position -1; larger indices are farther away
        if action == "wait":
            return pos
        step = 1 if action == "back1" else 2
        return max(0, pos - step)

    t = np.zeros((n_states, 3, n_states))
    r = np.zeros((n_states, 3))
    terminal = np.zeros(n_states, dtype=bool)
    for li in range(3):
        for pos in range(n_pos):
            for sr in range(2):
                s = sidx(li, pos, sr)
                if pos == 0:
                    terminal[s] = True
                    t[s, :, s] = 1.0
                    continue
                for ai, action in enumerate(actions):
                    npos = next_pos(pos, action)
                    for lj in range(3):
                        for sr2 in range(2):
                            t[s, ai, sidx(lj, npos, sr2)] += light_t[li, lj] * _SIREN_T[sr, sr2]
                    if action == "wait":
                        r[s, ai] = -1.0
                    elif npos == 0:
                        # crossing is judged by the light and siren the agent
                        # faces as it completes the move
                        r[s, ai] = (-100.0 if LIGHTS[li] == "red" else 0.0) + (
                            -200.0 if sr == 1 else 0.0
                        )

    b0 = np.zeros(n_states)
    for li in range(3):
        for sr in range(2):
            b0[sidx(li, n_pos - 1, sr)] = (1.0 / 3.0) * 0.5

    # non-vision observation: exact position x noisy siren reading
    nv_labels = tuple(f"{p}/{h}" for p in INTERSECTION_POSITIONS for h in ("none", "coming"))
    o_nv = np.zeros((n_states, len(nv_labels)))
    for li in range(3):
        for pos in range(n_pos):
            for sr in range(2):
                s = sidx(li, pos, sr)
                if sr == 1:
                    o_nv[s, pos * 2 + 1] = 1.0
                else:
                    o_nv[s, pos * 2 + 0] = 0.5
                    o_nv[s, pos * 2 + 1] = 0.5

    model = VPomdpModel(
        state_vars=(
            StateVar("light", LIGHTS),
            StateVar("position", INTERSECTION_POSITIONS),
            StateVar("siren", ("off", "on")),
        ),
        vision_state_indices=(0,),
        actions=actions,
        transition=t,
        reward=r,
        discount=0.95,
        initial_belief=b0,
        nonvision_obs_labels=nv_labels,
        o_nv=o_nv,
    )
    spec = channel_spec or SyntheticChannelSpec(
        classes=3, accuracy=0.95, seed=13, overconfidence_on_corrupt=True
    )
    if spec.classes != 3:
        raise ModelError("channel must have 3 classes")
    datasets, table = synthesize_channel(spec, ids_per_class)
    channel = VisionChannel(spec=spec, datasets=datasets, table=table)
    return EnvInstance("intersection", model, channel, terminal, horizon)


ENV_BUILDERS = {
    "frozen_lake4": lambda **kw: make_frozen_lake(4, **kw),
    "frozen_lake8": lambda **kw: make_frozen_lake(8, **kw),
    "flower_grid": make_flower_grid,
    "intersection": make_intersection,
}


def initial_belief(env: EnvInstance) -> Belief:
    return Belief.from_array(env.model.initial_belief)
