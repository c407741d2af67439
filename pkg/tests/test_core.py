"""Core primitives: acceptance kernel, RNG streams, stationarity oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcmclab.core import (
    ChainState,
    CountingTarget,
    InvalidStateError,
    RngStream,
    accept_or_reject,
    discrete_stationarity_oracle,
    make_state,
    mh_accept_log_prob,
    run_chain,
)
from mcmclab.classic import RwmConfig, rwm_step
from mcmclab.targets import make_standard_gaussian


class TestMhAcceptLogProb:
    def test_identical_densities_symmetric(self):
        assert mh_accept_log_prob(-1.0, -1.0, 0.0, 0.0) == 0.0

    def test_half_probability(self):
        assert mh_accept_log_prob(0.0, -math.log(2), 0.0, 0.0) == pytest.approx(
            -math.log(2), abs=1e-15
        )

    def test_asymmetric_correction(self):
        # An easy-to-propose state is penalized by the forward density.
        assert mh_accept_log_prob(0.0, 0.0, math.log(3), 0.0) == pytest.approx(
            -math.log(3), abs=1e-15
        )

    def test_zero_density_proposal_is_certain_rejection(self):
        assert mh_accept_log_prob(-1.0, -np.inf) == -np.inf

    def test_invalid_current_state(self):
        with pytest.raises(InvalidStateError):
            mh_accept_log_prob(-np.inf, -1.0)

    def test_never_positive(self):
        assert mh_accept_log_prob(-5.0, 17.0) == 0.0

    @given(
        st.floats(-50, 50),
        st.floats(-50, 50),
        st.floats(-20, 20),
        st.floats(-20, 20),
    )
    @settings(max_examples=200)
    def test_antisymmetry(self, cur, prop, fwd, bwd):
        # alpha * pi(x) g(x'|x) == alpha' * pi(x') g(x|x') in log space.
        fwd_log = mh_accept_log_prob(cur, prop, fwd, bwd)
        bwd_log = mh_accept_log_prob(prop, cur, bwd, fwd)
        delta = (prop - cur) + (bwd - fwd)
        assert fwd_log - bwd_log == pytest.approx(delta, abs=1e-12)


class TestAcceptOrReject:
    def _states(self):
        cur = ChainState(position=np.array([0.0]), cached_logpi=-1.0, step_index=3)
        prop = ChainState(position=np.array([1.0]), cached_logpi=-2.0)
        return cur, prop

    def test_certain_acceptance(self):
        cur, prop = self._states()
        for seed in range(20):
            new, accepted = accept_or_reject(cur, prop, 0.0, RngStream(seed))
            assert accepted and new.position[0] == 1.0
            assert new.step_index == 4

    def test_certain_rejection(self):
        cur, prop = self._states()
        for seed in range(20):
            new, accepted = accept_or_reject(cur, prop, -np.inf, RngStream(seed))
            assert not accepted and new.position[0] == 0.0
            assert new.step_index == 4

    def test_replay_determinism(self):
        cur, prop = self._states()
        decisions = [
            accept_or_reject(cur, prop, math.log(0.5), RngStream(7, 3))[1]
            for _ in range(5)
        ]
        assert len(set(decisions)) == 1

    def test_single_draw_consumed(self):
        cur, prop = self._states()
        rng = RngStream(11, 2)
        accept_or_reject(cur, prop, math.log(0.5), rng)
        fresh = RngStream(11, 2)
        fresh.uniform()
        assert rng.uniform() == fresh.uniform()

    def test_positive_log_alpha_rejected(self):
        cur, prop = self._states()
        with pytest.raises(ValueError):
            accept_or_reject(cur, prop, 0.1, RngStream(0))


class TestRngStream:
    def test_identical_keys_replay(self):
        a = RngStream(123, 9)
        b = RngStream(123, 9)
        assert [a.uniform() for _ in range(10)] == [b.uniform() for _ in range(10)]
        assert np.array_equal(a.normal(5), b.normal(5))

    def test_distinct_streams_differ(self):
        a = RngStream(123, 1)
        b = RngStream(123, 2)
        assert [a.uniform() for _ in range(5)] != [b.uniform() for _ in range(5)]

    def test_child_deterministic_and_distinct(self):
        base = RngStream(5, 1)
        c1 = base.child(0)
        c2 = base.child(0)
        c3 = base.child(1)
        assert c1.stream_id == c2.stream_id != c3.stream_id
        assert c1.uniform() == c2.uniform()


class TestStationarityOracle:
    def test_two_state_symmetric(self):
        res = discrete_stationarity_oracle(
            np.array([0.5, 0.5]), np.array([[0.0, 1.0], [1.0, 0.0]])
        )
        assert res.stationarity_gap == 0.0
        assert res.detailed_balance_gap == 0.0

    def test_three_state_hand_built(self):
        # P assembled by hand from pi=(.2,.3,.5), uniform-over-others g.
        pi = np.array([0.2, 0.3, 0.5])
        g = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
        hand_p = np.array(
            [
                [0.0, 0.5, 0.5],
                [1.0 / 3.0, 1.0 / 6.0, 0.5],
                [0.2, 0.3, 0.5],
            ]
        )
        assert np.max(np.abs(pi @ hand_p - pi)) < 1e-15
        res = discrete_stationarity_oracle(pi, g)
        assert res.stationarity_gap < 1e-12
        assert res.detailed_balance_gap < 1e-12

    def test_asymmetric_flux_example(self):
        # pi=(.9,.1), uniform rows: P_12 = 0.5/9 and both fluxes equal 0.05.
        pi = np.array([0.9, 0.1])
        g = np.full((2, 2), 0.5)
        res = discrete_stationarity_oracle(pi, g)
        assert res.detailed_balance_gap < 1e-15
        assert res.stationarity_gap < 1e-15

    def test_randomized_eight_state(self):
        gen = np.random.Generator(np.random.Philox(key=2718))
        pi = gen.random(8) + 0.05
        pi /= pi.sum()
        g = gen.random((8, 8)) + 0.01
        g /= g.sum(axis=1, keepdims=True)
        res = discrete_stationarity_oracle(pi, g)
        assert res.stationarity_gap < 1e-12
        assert res.detailed_balance_gap < 1e-12

    def test_input_validation(self):
        with pytest.raises(ValueError):
            discrete_stationarity_oracle(
                np.array([0.7, 0.7]), np.full((2, 2), 0.5)
            )
        with pytest.raises(ValueError):
            discrete_stationarity_oracle(
                np.array([0.5, 0.5]), np.array([[0.9, 0.0], [0.5, 0.5]])
            )
        with pytest.raises(ValueError):
            discrete_stationarity_oracle(
                np.array([1.0, 0.0]), np.full((2, 2), 0.5)
            )


class TestChainDriver:
    def test_replay_bit_identical(self):
        target = make_standard_gaussian(3)
        cfg = RwmConfig(sigma=0.8)

        def one_run():
            rng = RngStream(99, 4)
            state = make_state(target, np.zeros(3))
            rec, _ = run_chain(
                lambda s, r: rwm_step(s, cfg, target, r), state, 500, rng
            )
            return rec

        a, b = one_run(), one_run()
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.accept_flags, b.accept_flags)

    def test_rejected_steps_duplicate_rows(self):
        target = make_standard_gaussian(2)
        cfg = RwmConfig(sigma=5.0)
        rng = RngStream(3, 8)
        state = make_state(target, np.zeros(2))
        rec, _ = run_chain(lambda s, r: rwm_step(s, cfg, target, r), state, 400, rng)
        rejected = np.where(~rec.accept_flags[1:])[0] + 1
        assert rejected.size > 0
        for t in rejected:
            assert np.array_equal(rec.samples[t], rec.samples[t - 1])

    def test_counters_and_cache_consistency(self):
        target = make_standard_gaussian(2)
        counting = CountingTarget(target)
        cfg = RwmConfig(sigma=1.0)
        rng = RngStream(17, 1)
        state = make_state(counting, np.zeros(2), with_grad=False)
        evals_at_start = counting.n_target_evals
        rec, final = run_chain(
            lambda s, r: rwm_step(s, cfg, counting, r), state, 300, rng,
            counting=counting,
        )
        assert rec.n_target_evals == 300
        assert counting.n_target_evals == evals_at_start + 300
        # cached value equals a fresh evaluation at the final position
        assert final.cached_logpi == pytest.approx(
            target.log_density(final.position), abs=1e-12
        )

    def test_make_state_rejects_zero_density(self):
        target = make_standard_gaussian(1)
        bad = make_standard_gaussian(1)
        bad = type(bad)(
            name="wall",
            dim=1,
            log_density=lambda x: -np.inf,
            gradient=None,
        )
        with pytest.raises(InvalidStateError):
            make_state(bad, np.array([0.0]))
