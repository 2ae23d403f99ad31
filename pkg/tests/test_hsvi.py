import numpy as np
import pytest

from pbp.belief import pbp_update_array
from pbp.hsvi import AlphaVector, AlphaVectorPolicy, AlphaVectorSet, HsviSolver, SawtoothBound
from pbp.model import StateVar, VPomdpModel, mdp_value_iteration
from pbp.perception import PerceptionOutput, PerceptionTable, SyntheticChannelSpec, synthesize_channel
from pbp.planning_model import PlanningModel, build_planning_model, estimate_vision_obs_fn
from pbp.updaters import UpdaterSpec


def tiger_planning_model(hear_accuracy: float = 0.85, discount: float = 0.75):
    """Two-hideout listening task: listen at a small cost or commit; hearing
    points to the occupied side with the given accuracy; committing resets
    the hidden side uniformly. The short discount keeps the effective
    horizon small enough for tight solver convergence in test budgets."""
    m = VPomdpModel(
        state_vars=(StateVar("side", ("left", "right")),),
        vision_state_indices=(0,),
        actions=("listen", "open-left", "open-right"),
        transition=np.array(
            [
                [[1.0, 0.0], [0.5, 0.5], [0.5, 0.5]],
                [[0.0, 1.0], [0.5, 0.5], [0.5, 0.5]],
            ]
        ),
        reward=np.array([[-1.0, 10.0, -100.0], [-1.0, -100.0, 10.0]]),
        discount=discount,
        initial_belief=np.array([0.5, 0.5]),
        nonvision_obs_labels=("none",),
        o_nv=np.ones((2, 1)),
    )
    h = hear_accuracy
    pm = PlanningModel(model=m, obs_ids=("hear-left", "hear-right"), ov=np.array([[h, 1 - h], [1 - h, h]]))
    table = PerceptionTable()
    table.add("hear-left", PerceptionOutput(np.array([h, 1 - h]), 0.0), 0)
    table.add("hear-right", PerceptionOutput(np.array([1 - h, h]), 0.0), 1)
    return pm, table


def tiger_grid_oracle(pm: PlanningModel, n_points: int = 10_000) -> float:
    """Value iteration over a fine grid of beliefs; the reference value for
    the initial 50/50 belief, independent of the solver under test."""
    m = pm.model
    gamma = m.discount
    h = pm.ov[0, 0]
    p = np.linspace(0.0, 1.0, n_points + 1)

    def interp(v, q):
        q = np.clip(q, 0.0, 1.0)
        x = q * n_points
        lo = np.floor(x).astype(int)
        hi = np.minimum(lo + 1, n_points)
        w = x - lo
        return (1 - w) * v[lo] + w * v[hi]

    pr_hl = h * p + (1 - h) * (1 - p)
    tau_hl = np.divide(h * p, pr_hl, out=np.full_like(p, 0.5), where=pr_hl > 0)
    pr_hr = 1.0 - pr_hl
    tau_hr = np.divide((1 - h) * p, pr_hr, out=np.full_like(p, 0.5), where=pr_hr > 0)
    # after opening, the side resets to 50/50 and the next sound is heard
    reset_beliefs = np.array([h, 1 - h])

    v = np.zeros(n_points + 1)
    for _ in range(2000):
        v_hl = interp(v, tau_hl)
        v_hr = interp(v, tau_hr)
        q_listen = -1.0 + gamma * (pr_hl * v_hl + pr_hr * v_hr)
        reset_cont = gamma * 0.5 * (interp(v, reset_beliefs[:1])[0] + interp(v, reset_beliefs[1:])[0])
        q_open_l = 10 * p - 100 * (1 - p) + reset_cont
        q_open_r = 10 * (1 - p) - 100 * p + reset_cont
        v_new = np.maximum(q_listen, np.maximum(q_open_l, q_open_r))
        if np.abs(v_new - v).max() < 1e-10:
            v = v_new
            break
        v = v_new
    return float(v[n_points // 2])


def chain_planning_model():
    """Pure-vision 5-state chain with perfect one-ID-per-class channel."""
    n = 5
    t = np.zeros((n, 2, n))
    r = np.zeros((n, 2))
    for s in range(n - 1):
        t[s, 0, s + 1] = 0.9
        t[s, 0, s] = 0.1
        t[s, 1, s] = 1.0
    t[n - 1, :, n - 1] = 1.0
    r[n - 2, 0] = 0.9  # expected goal-entry reward
    b0 = np.zeros(n)
    b0[0] = 1.0
    m = VPomdpModel(
        state_vars=(StateVar("pos", tuple(str(i) for i in range(n))),),
        vision_state_indices=(0,),
        actions=("advance", "stay"),
        transition=t,
        reward=r,
        discount=0.95,
        initial_belief=b0,
        nonvision_obs_labels=("none",),
        o_nv=np.ones((n, 1)),
    )
    spec = SyntheticChannelSpec(classes=n, accuracy=1.0, seed=3)
    datasets, table = synthesize_channel(spec, 1)
    est = estimate_vision_obs_fn(datasets["plan"], n)
    return build_planning_model(m, est), table


class TestSawtoothBound:
    def test_point_mass_returns_corner(self):
        bound = SawtoothBound(np.array([3.0, 7.0, 1.0]))
        bound.add(np.array([0.5, 0.5, 0.0]), 2.0)
        b = np.zeros(3)
        b[1] = 1.0
        assert bound.value(b) == 7.0

    def test_no_anchors_gives_corner_plane(self):
        bound = SawtoothBound(np.array([2.0, 4.0]))
        assert abs(bound.value(np.array([0.25, 0.75])) - 3.5) < 1e-12

    def test_anchor_pulls_below_plane(self):
        bound = SawtoothBound(np.array([2.0, 4.0]))
        b = np.array([0.5, 0.5])
        bound.add(b, 1.0)
        assert bound.value(b) == 1.0
        assert bound.value(b) < 3.0

    def test_interpolation_formula(self):
        bound = SawtoothBound(np.array([0.0, 10.0]))
        anchor = np.array([0.5, 0.5])
        bound.add(anchor, 2.0)  # corner dot = 5, delta = -3
        query = np.array([0.25, 0.75])
        # ratio = min over support of query/anchor = 0.5; plane = 7.5
        assert abs(bound.value(query) - (7.5 + 0.5 * (2.0 - 5.0))) < 1e-12

    def test_dominated_anchor_ignored(self):
        bound = SawtoothBound(np.array([2.0, 4.0]))
        bound.add(np.array([0.5, 0.5]), 9.0)  # above the plane: no effect
        assert bound.n_anchors == 0

    def test_point_mass_update_tightens_corner(self):
        bound = SawtoothBound(np.array([2.0, 4.0]))
        b = np.zeros(2)
        b[0] = 1.0
        bound.add(b, 1.0)
        assert bound.corner[0] == 1.0

    def test_prune_drops_corner_dominated(self):
        bound = SawtoothBound(np.array([2.0, 4.0]))
        bound.add(np.array([0.5, 0.5]), 2.5)
        assert bound.n_anchors == 1
        # corner tightening can strand the anchor above the new plane
        e0 = np.zeros(2)
        e0[0] = 1.0
        bound.add(e0, 0.0)
        e1 = np.zeros(2)
        e1[1] = 1.0
        bound.add(e1, 1.0)
        removed = bound.prune()
        assert removed == 1
        assert bound.n_anchors == 0


class TestAlphaVectorSet:
    def test_duplicate_removed(self):
        vals = np.array([1.0, 2.0])
        s = AlphaVectorSet([AlphaVector(vals.copy(), 0), AlphaVector(vals.copy(), 0)])
        removed = s.prune_dominated()
        assert removed == 1
        assert len(s.vectors) == 1

    def test_pointwise_dominated_removed(self):
        s = AlphaVectorSet(
            [AlphaVector(np.array([1.0, 1.0]), 0), AlphaVector(np.array([2.0, 1.5]), 1)]
        )
        s.prune_dominated()
        assert len(s.vectors) == 1
        assert s.vectors[0].action == 1

    def test_incomparable_kept(self):
        s = AlphaVectorSet(
            [AlphaVector(np.array([1.0, 0.0]), 0), AlphaVector(np.array([0.0, 1.0]), 1)]
        )
        assert s.prune_dominated() == 0

    def test_value_is_max_dot(self):
        s = AlphaVectorSet(
            [AlphaVector(np.array([1.0, 0.0]), 0), AlphaVector(np.array([0.0, 2.0]), 1)]
        )
        assert s.value(np.array([0.5, 0.5])) == 1.0
        assert s.best_action(np.array([0.5, 0.5])) == 1


class TestBackup:
    def test_single_branch_is_exact_bellman(self):
        # one action, one observation, deterministic model
        m = VPomdpModel(
            state_vars=(StateVar("s", ("x", "y")),),
            vision_state_indices=(0,),
            actions=("go",),
            transition=np.array([[[0.0, 1.0]], [[0.0, 1.0]]]),
            reward=np.array([[2.0], [0.5]]),
            discount=0.5,
            initial_belief=np.array([1.0, 0.0]),
            nonvision_obs_labels=("none",),
            o_nv=np.ones((2, 1)),
        )
        pm = PlanningModel(model=m, obs_ids=("only",), ov=np.array([[1.0], [1.0]]).T @ np.array([[1.0, 0.0], [0.0, 1.0]]))
        pm = PlanningModel(model=m, obs_ids=("only",), ov=np.array([[1.0, 1.0]]))
        table = PerceptionTable()
        table.add("only", PerceptionOutput(np.array([0.5, 0.5]), 0.0), 0)
        solver = HsviSolver(pm, table, UpdaterSpec(), seed=0)
        vec, q = solver.backup(m.initial_belief)
        alpha = solver.lower.matrix
        # exact Bellman application of the current value function
        v_fn = alpha.max(axis=0)  # single state reachable: y
        expected = m.reward[:, 0] + 0.5 * np.array([v_fn[1], v_fn[1]])
        # the chosen conditional vector maximizes at tau, which is a point
        # mass on y; both alphas agree there, so compare through values
        best_alpha_at_y = float(alpha[:, 1].max())
        want = m.reward[:, 0] + 0.5 * best_alpha_at_y
        assert np.allclose(vec.values, want, atol=1e-12)

    def test_improves_on_blind_value(self, rng):
        pm, table = tiger_planning_model()
        solver = HsviSolver(pm, table, UpdaterSpec(), seed=0)
        for _ in range(10):
            b = rng.dirichlet(np.ones(2))
            blind = solver.lower.value(b)
            vec, _ = solver.backup(b)
            assert float(vec.values @ b) >= blind - 1e-12

    def test_matches_hand_expanded_formula(self):
        pm, table = tiger_planning_model()
        m = pm.model
        solver = HsviSolver(pm, table, UpdaterSpec(), seed=0)
        b = np.array([0.7, 0.3])
        vec, q_lower = solver.backup(b)
        gamma = m.discount
        alpha_mat = solver.lower.matrix
        betas = []
        for a in range(m.n_actions):
            beta = m.reward[:, a].copy()
            pred = b @ m.transition[:, a, :]
            for id_idx in range(2):
                perc = table.predict(pm.obs_ids[id_idx]).dist
                tau, _ = pbp_update_array(m, b, a, perc, 0)
                chosen = alpha_mat[int((alpha_mat @ tau).argmax())]
                for s in range(2):
                    acc = 0.0
                    for s2 in range(2):
                        o = pm.ov[id_idx, int(m.vision_component[s2])] * m.o_nv[s2, 0]
                        acc += chosen[s2] * o * m.transition[s, a, s2]
                    beta[s] += gamma * acc
            betas.append(beta)
        by_value = [float(bt @ b) for bt in betas]
        assert np.allclose(q_lower, by_value, atol=1e-9)
        assert np.allclose(vec.values, betas[int(np.argmax(by_value))], atol=1e-9)


class TestSolve:
    def test_zero_reward_model_converges_immediately(self):
        pm, table = tiger_planning_model()
        m0 = pm.model
        zero = VPomdpModel(
            state_vars=m0.state_vars,
            vision_state_indices=m0.vision_state_indices,
            actions=m0.actions,
            transition=m0.transition,
            reward=np.zeros_like(m0.reward),
            discount=m0.discount,
            initial_belief=m0.initial_belief,
            nonvision_obs_labels=m0.nonvision_obs_labels,
            o_nv=m0.o_nv,
        )
        pm0 = PlanningModel(model=zero, obs_ids=pm.obs_ids, ov=pm.ov)
        solver = HsviSolver(pm0, table, UpdaterSpec(), seed=0)
        res = solver.solve(budget_iterations=5)
        assert abs(res.lower_value) < 1e-9
        assert abs(res.upper_value) < 1e-9

    def test_fully_observable_chain_matches_mdp_oracle(self):
        pm, table = chain_planning_model()
        v_star = mdp_value_iteration(pm.model, tol=1e-10).max(axis=1)[0]
        solver = HsviSolver(pm, table, UpdaterSpec(), eps_slack=1e-4, seed=0)
        res = solver.solve(budget_iterations=400, target_width=5e-4)
        assert abs(res.lower_value - v_star) <= 1e-3
        assert abs(res.upper_value - v_star) <= 1e-3

    def test_tiger_matches_belief_grid_oracle(self):
        pm, table = tiger_planning_model()
        v_star = tiger_grid_oracle(pm)
        solver = HsviSolver(pm, table, UpdaterSpec(), eps_slack=2e-4, seed=0)
        res = solver.solve(budget_iterations=3000, target_width=8e-4)
        assert res.upper_value - res.lower_value <= 1e-3
        assert abs(res.lower_value - v_star) <= 1e-3
        assert abs(res.upper_value - v_star) <= 1e-3

    def test_bounds_monotone_and_ordered(self):
        pm, table = tiger_planning_model()
        solver = HsviSolver(pm, table, UpdaterSpec(), seed=1)
        res = solver.solve(budget_iterations=100)
        lowers = [t[2] for t in res.trace]
        uppers = [t[3] for t in res.trace]
        assert all(l <= u + 1e-6 for l, u in zip(lowers, uppers))
        assert all(b >= a - 1e-9 for a, b in zip(lowers, lowers[1:]))
        assert all(b <= a + 1e-9 for a, b in zip(uppers, uppers[1:]))

    def test_deterministic_given_seed(self):
        pm, table = tiger_planning_model()
        r1 = HsviSolver(pm, table, UpdaterSpec(), seed=7).solve(budget_iterations=60)
        r2 = HsviSolver(pm, table, UpdaterSpec(), seed=7).solve(budget_iterations=60)
        assert r1.lower_value == r2.lower_value
        assert r1.upper_value == r2.upper_value

    def test_pure_random_exploration_is_reproducible(self):
        pm, table = tiger_planning_model()
        r1 = HsviSolver(pm, table, UpdaterSpec(), eps_explore=1.0, seed=5).solve(budget_iterations=40)
        r2 = HsviSolver(pm, table, UpdaterSpec(), eps_explore=1.0, seed=5).solve(budget_iterations=40)
        assert r1.lower_value == r2.lower_value

    def test_policy_round_trip(self, tmp_path):
        pm, table = tiger_planning_model()
        res = HsviSolver(pm, table, UpdaterSpec(), seed=0).solve(budget_iterations=50)
        d = res.policy.to_dict()
        again = AlphaVectorPolicy.from_dict(d)
        b = np.array([0.3, 0.7])
        assert again.action(b) == res.policy.action(b)
        assert again.value(b) == res.policy.value(b)


class TestPrune:
    def test_prune_keeps_root_bounds(self):
        pm, table = tiger_planning_model()
        solver = HsviSolver(pm, table, UpdaterSpec(), seed=2, prune_every=0)
        solver.solve(budget_iterations=60)
        lo = solver.lower.value(solver.b0)
        hi = solver.upper.value(solver.b0)
        solver.prune()
        assert solver.lower.value(solver.b0) == lo
        assert solver.upper.value(solver.b0) <= hi + 1e-12

    def test_forced_single_branch(self):
        # one action, one observation: exploration has no choice to make
        m = VPomdpModel(
            state_vars=(StateVar("s", ("x", "y")),),
            vision_state_indices=(0,),
            actions=("go",),
            transition=np.array([[[0.5, 0.5]], [[0.5, 0.5]]]),
            reward=np.array([[1.0], [0.0]]),
            discount=0.9,
            initial_belief=np.array([1.0, 0.0]),
            nonvision_obs_labels=("none",),
            o_nv=np.ones((2, 1)),
        )
        pm = PlanningModel(model=m, obs_ids=("only",), ov=np.array([[1.0, 1.0]]))
        table = PerceptionTable()
        table.add("only", PerceptionOutput(np.array([0.5, 0.5]), 0.0), 0)
        solver = HsviSolver(pm, table, UpdaterSpec(), seed=0)
        solver.solve(budget_iterations=30)
        for node in solver._registry.values():
            for (a, _z) in node.children:
                assert a == 0
