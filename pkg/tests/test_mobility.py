import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_chain, random_reversible_chain
from relayplan.errors import SpectralError, ValidationError
from relayplan.mobility import (
    MarkovChain,
    apply_speed,
    belief_monotonicity_counterexamples,
    build_axis_chain,
    build_grid_chain,
    chains_for_scenario,
    distance_function,
    slem,
    stationary_distribution,
)

TWO_STATE = np.array([[0.9, 0.1], [0.2, 0.8]])


class TestAxisChain:
    def test_three_state_rows(self):
        chain = build_axis_chain(3, 0.7)
        move = 0.5 * (1 - np.sqrt(0.7))
        stay = np.sqrt(0.7)
        expected = np.array([
            [stay + move, move, 0.0],
            [move, stay, move],
            [0.0, move, stay + move],
        ])
        np.testing.assert_allclose(chain.matrix, expected, atol=1e-12)
        np.testing.assert_allclose(chain.matrix[1], [0.0816699867, 0.8366600265, 0.0816699867], atol=1e-9)

    def test_immobile_identity(self):
        np.testing.assert_array_equal(build_axis_chain(4, 1.0).matrix, np.eye(4))

    def test_degenerate_single_state(self):
        np.testing.assert_array_equal(build_axis_chain(1, 0.3).matrix, [[1.0]])

    def test_invalid_args(self):
        with pytest.raises(ValidationError):
            build_axis_chain(0, 0.5)
        with pytest.raises(ValidationError):
            build_axis_chain(3, 1.5)


class TestGridChain:
    def test_interior_stay_is_eps_fix(self):
        chain = build_grid_chain(3, 3, 0.7)
        center = 1 * 3 + 1
        assert chain.matrix[center, center] == pytest.approx(0.7, abs=1e-12)

    def test_two_by_two_corner_stay(self):
        chain = build_grid_chain(2, 2, 0.7)
        stay = (np.sqrt(0.7) + 0.5 * (1 - np.sqrt(0.7))) ** 2
        for cell in range(4):
            assert chain.matrix[cell, cell] == pytest.approx(stay, abs=1e-9)
        assert stay == pytest.approx(0.843330, abs=1e-6)

    def test_immobile_identity(self):
        np.testing.assert_array_equal(build_grid_chain(2, 3, 1.0).matrix, np.eye(6))

    @given(
        s_x=st.integers(1, 4),
        s_y=st.integers(1, 4),
        eps=st.floats(0.0, 1.0, allow_nan=False),
    )
    @settings(max_examples=40, deadline=None)
    def test_rows_stochastic(self, s_x, s_y, eps):
        chain = build_grid_chain(s_x, s_y, eps)
        np.testing.assert_allclose(chain.matrix.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(chain.matrix >= 0)

    @given(eps=st.floats(0.01, 0.99), s=st.integers(3, 5))
    @settings(max_examples=25, deadline=None)
    def test_interior_stay_exact(self, eps, s):
        chain = build_grid_chain(s, s, eps)
        interior = (s // 2) * s + s // 2
        assert chain.matrix[interior, interior] == pytest.approx(eps, abs=1e-12)


class TestApplySpeed:
    def test_identity_exponent(self):
        chain = MarkovChain(TWO_STATE)
        assert apply_speed(chain, 1) is chain

    def test_square(self):
        sped = apply_speed(MarkovChain(TWO_STATE), 2)
        np.testing.assert_allclose(sped.matrix, [[0.83, 0.17], [0.34, 0.66]], atol=1e-12)

    def test_identity_matrix_stable(self):
        sped = apply_speed(MarkovChain(np.eye(3)), 2)
        np.testing.assert_array_equal(sped.matrix, np.eye(3))

    @given(seed=st.integers(0, 10**6), v=st.integers(1, 6))
    @settings(max_examples=30, deadline=None)
    def test_rows_stay_stochastic(self, seed, v):
        rng = np.random.default_rng(seed)
        chain = random_chain(rng, int(rng.integers(2, 6)))
        sped = apply_speed(chain, v)
        np.testing.assert_allclose(sped.matrix.sum(axis=1), 1.0, atol=1e-9)


class TestStationary:
    def test_two_state(self):
        pi = stationary_distribution(MarkovChain(TWO_STATE))
        np.testing.assert_allclose(pi, [2 / 3, 1 / 3], atol=1e-11)

    def test_doubly_stochastic_uniform(self):
        m = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
        pi = stationary_distribution(MarkovChain(m))
        np.testing.assert_allclose(pi, np.ones(3) / 3, atol=1e-11)

    def test_identity_has_no_unique_stationary(self):
        with pytest.raises(SpectralError):
            stationary_distribution(MarkovChain(np.eye(2)))

    def test_periodic_rejected(self):
        with pytest.raises(SpectralError):
            stationary_distribution(MarkovChain(np.array([[0.0, 1.0], [1.0, 0.0]])))

    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_fixed_point_residual(self, seed):
        rng = np.random.default_rng(seed)
        chain = random_chain(rng, int(rng.integers(2, 7)))
        pi = chain.stationary
        assert np.abs(pi @ chain.matrix - pi).sum() < 1e-11
        assert pi.sum() == pytest.approx(1.0, abs=1e-12)


class TestSlem:
    def test_two_state(self):
        assert slem(MarkovChain(TWO_STATE)) == pytest.approx(0.7, abs=1e-12)

    def test_rank_one(self):
        assert slem(MarkovChain(np.array([[0.5, 0.5], [0.5, 0.5]]))) == pytest.approx(0.0, abs=1e-12)

    def test_identity_error(self):
        with pytest.raises(SpectralError):
            slem(MarkovChain(np.eye(2)))

    def test_single_state(self):
        assert slem(MarkovChain([[1.0]])) == 0.0


class TestDistanceFunction:
    def test_t_zero(self):
        assert distance_function(MarkovChain(TWO_STATE), 0) == pytest.approx(4 / 3, abs=1e-12)

    def test_t_one(self):
        assert distance_function(MarkovChain(TWO_STATE), 1) == pytest.approx(0.9333333333, abs=1e-9)

    def test_vanishes(self):
        assert distance_function(MarkovChain(TWO_STATE), 200) < 1e-12

    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_monotone(self, seed):
        rng = np.random.default_rng(seed)
        chain = random_chain(rng, int(rng.integers(2, 6)))
        prev = distance_function(chain, 0)
        for t in range(1, 21):
            d = distance_function(chain, t)
            assert d <= prev + 1e-12
            prev = d

    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_spectral_bound_on_reversible_chains(self, seed):
        # the eigenvalue bound on d(t) is a reversible-chain result; the
        # mobility family (axis/grid products) is reversible by construction
        rng = np.random.default_rng(seed)
        if seed % 2:
            chain = build_grid_chain(int(rng.integers(2, 4)), int(rng.integers(1, 3)), float(rng.uniform(0.05, 0.95)))
        else:
            chain = random_reversible_chain(rng, int(rng.integers(2, 6)))
        lam = chain.slem
        pi_min = float(chain.stationary.min())
        for t in range(1, 21):
            assert distance_function(chain, t) <= lam**t / pi_min + 1e-9


class TestScenarioChains:
    def test_speed_applied(self, table1_scenario):
        import dataclasses

        sped = dataclasses.replace(
            table1_scenario,
            relays=tuple(dataclasses.replace(r, speed=2) for r in table1_scenario.relays),
        )
        base = chains_for_scenario(table1_scenario)
        fast = chains_for_scenario(sped)
        np.testing.assert_allclose(fast[0].matrix, base[0].matrix @ base[0].matrix, atol=1e-12)


def test_belief_growth_persistence_is_not_a_law():
    """The one-step-growth-persists claim fails on oscillating chains; the
    sampler exists to log counterexamples, never to assert the claim."""
    oscillating = MarkovChain(np.array([[0.05, 0.95], [0.95, 0.05]]))
    bad = belief_monotonicity_counterexamples(oscillating, n_samples=300)
    print(f"belief growth persistence counterexamples on oscillating chain: {bad}/300")
    assert bad > 0
    calm = MarkovChain(np.array([[0.9, 0.1], [0.05, 0.95]]))
    print(
        "counterexamples on slow chain:",
        belief_monotonicity_counterexamples(calm, n_samples=300),
    )
