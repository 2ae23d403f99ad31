import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbp.belief import (
    EmptyPoolError,
    UncertaintyMode,
    lift_vision_dist,
    multiplicative_pool,
    pbp_update,
    pbp_update_array,
    psrl_update_array,
    uncertainty_aware_update,
)
from pbp.model import Belief, propagate, standard_belief_update, EmptyBeliefError
from pbp.perception import PerceptionOutput

from conftest import random_vpomdp, random_vision_obs_fn


def exact_posterior(o_v: np.ndarray, z_v: int) -> np.ndarray:
    """Bayes inversion of the vision observation column under a uniform
    class prior; the independent construction used to re-check soundness."""
    col = o_v[:, z_v]
    total = col.sum()
    if total == 0:
        return None
    return col / total


class TestPbpUpdate:
    def test_uniform_evidence_reduces_to_propagate(self, rng):
        m = random_vpomdp(rng)
        b = Belief.from_array(rng.dirichlet(np.ones(m.n_states)))
        res = pbp_update(m, b, 0, np.full(m.n_vision_classes, 1.0 / m.n_vision_classes))
        assert not res.fell_back
        assert np.allclose(res.belief.to_array(m.n_states), propagate(m, b, 0), atol=1e-12)

    def test_disjoint_support_falls_back_to_uniform(self):
        from pbp.model import StateVar, VPomdpModel

        # identity transition keeps all mass on state 0 (class 0); evidence
        # concentrated on class 1 cannot overlap it
        m = VPomdpModel(
            state_vars=(StateVar("v", ("c0", "c1", "c2")),),
            vision_state_indices=(0,),
            actions=("a",),
            transition=np.eye(3)[:, None, :],
            reward=np.zeros((3, 1)),
            discount=0.95,
            initial_belief=np.full(3, 1 / 3),
            nonvision_obs_labels=("z",),
            o_nv=np.ones((3, 1)),
        )
        res = pbp_update(m, Belief.point_mass(0), 0, np.array([0.0, 1.0, 0.0]))
        assert res.fell_back
        assert np.allclose(res.belief.to_array(3), 1.0 / 3)

    def test_fallback_flag_iff_zero_normalizer(self, rng):
        for _ in range(50):
            m = random_vpomdp(rng)
            b = Belief.from_array(rng.dirichlet(np.ones(m.n_states)))
            perc = rng.dirichlet(np.ones(m.n_vision_classes))
            z = int(rng.integers(len(m.nonvision_obs_labels)))
            pred = propagate(m, b, 0)
            evidence = lift_vision_dist(m, perc) * m.o_nv[:, z]
            res = pbp_update(m, b, 0, perc, z)
            assert res.fell_back == ((evidence * pred).sum() == 0.0)
            arr = res.belief.to_array(m.n_states)
            assert (arr >= 0).all() and abs(arr.sum() - 1.0) <= 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6))
    def test_matches_standard_update_with_exact_posterior(self, seed):
        """Soundness: with the exact class posterior as evidence, the
        perception-based update reproduces the full Bayes filter."""
        rng = np.random.default_rng(seed)
        m = random_vpomdp(rng)
        n_zv = int(rng.integers(2, 9))
        o_v = random_vision_obs_fn(rng, m.n_vision_classes, n_zv)
        b = Belief.from_array(rng.dirichlet(np.ones(m.n_states)))
        a = int(rng.integers(m.n_actions))
        for z_v in range(n_zv):
            for z_nv in range(len(m.nonvision_obs_labels)):
                posterior = exact_posterior(o_v, z_v)
                if posterior is None:
                    continue
                obs_prob = o_v[m.vision_component, z_v] * m.o_nv[:, z_nv]
                try:
                    expected = standard_belief_update(m, b, a, obs_prob)
                except EmptyBeliefError:
                    assert pbp_update(m, b, a, posterior, z_nv).fell_back
                    continue
                got = pbp_update(m, b, a, posterior, z_nv)
                assert not got.fell_back
                diff = np.abs(
                    got.belief.to_array(m.n_states) - expected.to_array(m.n_states)
                ).max()
                assert diff <= 1e-10

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from([0.1, 3.0, 1e6]))
    def test_scale_invariance_of_evidence(self, seed, c):
        rng = np.random.default_rng(seed)
        m = random_vpomdp(rng)
        b = Belief.from_array(rng.dirichlet(np.ones(m.n_states)))
        perc = rng.dirichlet(np.ones(m.n_vision_classes)) + 1e-6
        base = pbp_update(m, b, 0, perc).belief.to_array(m.n_states)
        scaled = pbp_update(m, b, 0, perc * c).belief.to_array(m.n_states)
        assert np.abs(base - scaled).max() <= 1e-12


class TestMultiplicativePool:
    def test_uniform_is_identity(self, rng):
        d = rng.dirichlet(np.ones(6))
        pooled = multiplicative_pool(d, np.full(6, 1.0 / 6))
        assert np.allclose(pooled, d, atol=1e-12)

    def test_point_mass_absorbs(self, rng):
        d = rng.dirichlet(np.ones(6)) + 0.01
        d = d / d.sum()
        point = np.zeros(6)
        point[2] = 1.0
        pooled = multiplicative_pool(d, point)
        assert pooled[2] == 1.0

    def test_symmetric_prior_returns_evidence(self):
        pooled = multiplicative_pool(np.array([0.5, 0.5]), np.array([0.8, 0.2]))
        assert np.allclose(pooled, [0.8, 0.2], atol=1e-12)

    def test_disjoint_support_raises(self):
        with pytest.raises(EmptyPoolError):
            multiplicative_pool(np.array([1.0, 0.0]), np.array([0.0, 1.0]))

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 10**6))
    def test_pure_vision_update_is_pooling_bit_for_bit(self, seed):
        rng = np.random.default_rng(seed)
        m = random_vpomdp(rng)
        b = Belief.from_array(rng.dirichlet(np.ones(m.n_states)))
        a = int(rng.integers(m.n_actions))
        perc = rng.dirichlet(np.ones(m.n_vision_classes))
        res = pbp_update(m, b, a, perc)
        pooled = multiplicative_pool(propagate(m, b, a), lift_vision_dist(m, perc))
        assert np.array_equal(res.belief.to_array(m.n_states), pooled)


class TestUncertaintyAwareUpdate:
    def test_tuq_over_threshold_equals_uniform_evidence(self, rng):
        m = random_vpomdp(rng)
        b = Belief.from_array(rng.dirichlet(np.ones(m.n_states)))
        out = PerceptionOutput(rng.dirichlet(np.ones(m.n_vision_classes)), 0.9)
        got = uncertainty_aware_update(m, b, 0, out, mode=UncertaintyMode.tuq(0.1))
        want = pbp_update(m, b, 0, np.full(m.n_vision_classes, 1.0 / m.n_vision_classes))
        assert np.array_equal(
            got.belief.to_array(m.n_states), want.belief.to_array(m.n_states)
        )

    def test_mode_none_is_pass_through(self, rng):
        m = random_vpomdp(rng)
        b = Belief.from_array(rng.dirichlet(np.ones(m.n_states)))
        out = PerceptionOutput(rng.dirichlet(np.ones(m.n_vision_classes)), 0.77)
        got = uncertainty_aware_update(m, b, 0, out, mode=UncertaintyMode.none())
        want = pbp_update(m, b, 0, out.dist)
        assert np.array_equal(
            got.belief.to_array(m.n_states), want.belief.to_array(m.n_states)
        )

    def test_wuq_with_zero_uncertainty_is_pass_through(self, rng):
        m = random_vpomdp(rng)
        b = Belief.from_array(rng.dirichlet(np.ones(m.n_states)))
        out = PerceptionOutput(rng.dirichlet(np.ones(m.n_vision_classes)), 0.0)
        got = uncertainty_aware_update(m, b, 0, out, mode=UncertaintyMode.wuq())
        want = pbp_update(m, b, 0, out.dist)
        assert np.array_equal(
            got.belief.to_array(m.n_states), want.belief.to_array(m.n_states)
        )


class TestPsrlUpdate:
    def test_vision_marginal_is_the_raw_perception(self, rng):
        m = random_vpomdp(rng)
        b = rng.dirichlet(np.ones(m.n_states))
        perc = rng.dirichlet(np.ones(m.n_vision_classes))
        z = int(rng.integers(len(m.nonvision_obs_labels)))
        arr, fell_back = psrl_update_array(m, b, 0, perc, z)
        assert not fell_back
        vis_marginal = np.bincount(m.vision_component, weights=arr, minlength=m.n_vision_classes)
        assert np.allclose(vis_marginal, perc, atol=1e-9)

    def test_nonvision_marginal_matches_uniform_evidence_update(self, rng):
        m = random_vpomdp(rng)
        b = rng.dirichlet(np.ones(m.n_states))
        perc = rng.dirichlet(np.ones(m.n_vision_classes))
        z = int(rng.integers(len(m.nonvision_obs_labels)))
        arr, _ = psrl_update_array(m, b, 0, perc, z)
        uniform = np.full(m.n_vision_classes, 1.0 / m.n_vision_classes)
        base, _ = pbp_update_array(m, b, 0, uniform, z)
        want = np.bincount(m.nonvision_component, weights=base, minlength=m.n_nonvision_components)
        got = np.bincount(m.nonvision_component, weights=arr, minlength=m.n_nonvision_components)
        assert np.allclose(got, want, atol=1e-9)


class TestLift:
    def test_wrong_length_rejected(self, rng):
        m = random_vpomdp(rng)
        with pytest.raises(ValueError):
            lift_vision_dist(m, np.ones(m.n_vision_classes + 1))

    def test_tiny_entries_zeroed(self, rng):
        m = random_vpomdp(rng)
        perc = np.full(m.n_vision_classes, 1e-13)
        perc[0] = 1.0
        lifted = lift_vision_dist(m, perc)
        mask = m.vision_component != 0
        assert (lifted[mask] == 0.0).all()
