"""Diffusion schedule algebra: tables, forward noising, reverse steps, loss weight."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierdiff.errors import ConfigError, ShapeError
from hierdiff.schedule import (
    LossWeightConfig,
    NoiseSchedule,
    build_schedule,
    loss_weight,
    q_sample,
    reverse_step,
)

# Independently computed with an exact big-loop product (Decimal, 60 digits).
ALPHA_BAR_1000_LINEAR = 4.0358297653756835e-05


class TestBuildSchedule:
    def test_two_step_constant_beta(self):
        sched = build_schedule("linear", 2, 0.5, 0.5)
        np.testing.assert_allclose(sched.alpha_bar, [0.5, 0.25])

    def test_single_step(self):
        sched = build_schedule("linear", 1, 0.3, 0.3)
        assert sched.alpha_bar_at(1) == pytest.approx(1.0 - 0.3)

    def test_default_thousand_step_terminal_alpha_bar(self):
        sched = build_schedule("linear", 1000, 1e-4, 0.02)
        assert sched.alpha_bar_at(1000) == pytest.approx(ALPHA_BAR_1000_LINEAR, rel=1e-10)
        assert sched.alpha_bar_at(1000) < 5e-5

    def test_invalid_bounds_rejected(self):
        with pytest.raises(ConfigError):
            build_schedule("linear", 10, 0.0, 0.02)
        with pytest.raises(ConfigError):
            build_schedule("linear", 10, 0.02, 1.0)
        with pytest.raises(ConfigError):
            build_schedule("linear", 10, 0.05, 0.01)
        with pytest.raises(ConfigError):
            build_schedule("linear", 0, 1e-4, 0.02)
        with pytest.raises(ConfigError):
            build_schedule("cosine", 10, 1e-4, 0.02)

    @given(
        total=st.integers(min_value=1, max_value=400),
        b0=st.floats(min_value=1e-6, max_value=0.5),
        spread=st.floats(min_value=0.0, max_value=0.4),
    )
    @settings(max_examples=50, deadline=None)
    def test_invariants_hold_for_random_schedules(self, total, b0, spread):
        sched = build_schedule("linear", total, b0, min(b0 + spread, 0.9))
        assert np.all(sched.beta > 0.0) and np.all(sched.beta < 1.0)
        assert np.all(np.diff(sched.alpha_bar) < 0.0) or total == 1
        np.testing.assert_allclose(sched.alpha_bar, np.cumprod(1.0 - sched.beta), atol=1e-12, rtol=0.0)

    def test_timestep_range_checks(self):
        sched = build_schedule("linear", 5, 1e-3, 0.1)
        with pytest.raises(ValueError):
            sched.alpha_bar_at(0)
        with pytest.raises(ValueError):
            sched.beta_at(6)

    def test_config_round_trip_verifies_digest(self):
        sched = build_schedule("linear", 20, 1e-3, 0.2)
        again = NoiseSchedule.from_config(sched.to_config())
        np.testing.assert_array_equal(again.beta, sched.beta)
        bad = sched.to_config()
        bad["digest"] = "0" * 64
        with pytest.raises(ConfigError, match="digest"):
            NoiseSchedule.from_config(bad)


class TestQSample:
    def setup_method(self):
        self.sched = build_schedule("linear", 50, 1e-3, 0.2)

    def test_zero_noise_scales_by_sqrt_alpha_bar(self):
        z0 = np.ones((4, 16))
        out = q_sample(z0, 7, np.zeros_like(z0), self.sched)
        np.testing.assert_allclose(out, np.sqrt(self.sched.alpha_bar_at(7)) * z0)

    def test_near_one_alpha_bar_returns_input(self):
        tiny = build_schedule("linear", 3, 1e-12, 1e-12)
        z0 = np.random.default_rng(0).normal(size=(2, 8))
        np.testing.assert_allclose(q_sample(z0, 1, np.zeros_like(z0), tiny), z0, rtol=1e-9)

    def test_zero_signal_scales_noise(self):
        eps = np.random.default_rng(1).normal(size=(3, 5))
        out = q_sample(np.zeros_like(eps), 20, eps, self.sched)
        np.testing.assert_allclose(out, np.sqrt(1.0 - self.sched.alpha_bar_at(20)) * eps)

    def test_t_out_of_range_rejected(self):
        z0 = np.zeros((2, 2))
        with pytest.raises(ValueError):
            q_sample(z0, 51, z0, self.sched)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            q_sample(np.zeros((2, 2)), 1, np.zeros((2, 3)), self.sched)

    def test_sample_moments_match_closed_form(self):
        rng = np.random.default_rng(2)
        z0 = np.array([0.7, -1.2])
        t = 25
        draws = 100_000
        eps = rng.standard_normal((draws, 2))
        samples = q_sample(np.broadcast_to(z0, (draws, 2)), t, eps, self.sched)
        abar = self.sched.alpha_bar_at(t)
        mean_se = np.sqrt((1.0 - abar) / draws)
        assert np.all(np.abs(samples.mean(axis=0) - np.sqrt(abar) * z0) < 3.0 * mean_se)
        var = samples.var(axis=0)
        var_se = (1.0 - abar) * np.sqrt(2.0 / (draws - 1))
        assert np.all(np.abs(var - (1.0 - abar)) < 3.0 * var_se)


class TestReverseStep:
    def setup_method(self):
        self.sched = build_schedule("linear", 50, 1e-3, 0.2)

    def test_oracle_eps_at_t1_recovers_z0(self):
        rng = np.random.default_rng(3)
        z0 = rng.normal(size=(4, 16))
        eps = rng.normal(size=(4, 16))
        z1 = q_sample(z0, 1, eps, self.sched)
        out = reverse_step(z1, eps, 1, self.sched, np.zeros_like(z1))
        np.testing.assert_allclose(out, z0, atol=1e-10)

    def test_zero_prediction_zero_noise_rescales(self):
        z = np.random.default_rng(4).normal(size=(2, 8))
        out = reverse_step(z, np.zeros_like(z), 10, self.sched, np.zeros_like(z))
        np.testing.assert_allclose(out, z / np.sqrt(self.sched.alpha_at(10)))

    def test_vanishing_beta_is_identity(self):
        tiny = build_schedule("linear", 5, 1e-12, 1e-12)
        z = np.random.default_rng(5).normal(size=(3, 3))
        out = reverse_step(z, np.zeros_like(z), 3, tiny, np.zeros_like(z))
        np.testing.assert_allclose(out, z, rtol=1e-9)

    def test_noise_suppressed_at_t1_only(self):
        z = np.ones((2, 2))
        eps_hat = np.zeros_like(z)
        loud = np.full_like(z, 100.0)
        with_noise = reverse_step(z, eps_hat, 2, self.sched, loud)
        without = reverse_step(z, eps_hat, 2, self.sched, np.zeros_like(z))
        assert not np.allclose(with_noise, without)
        np.testing.assert_array_equal(
            reverse_step(z, eps_hat, 1, self.sched, loud),
            reverse_step(z, eps_hat, 1, self.sched, np.zeros_like(z)),
        )

    def test_t_out_of_range_rejected(self):
        z = np.zeros((1, 1))
        with pytest.raises(ValueError):
            reverse_step(z, z, 0, self.sched, z)

    def test_oracle_chain_recovers_z0_from_any_t(self):
        rng = np.random.default_rng(6)
        z0 = rng.normal(size=(3, 8))
        for t_start in (1, 7, 25, 50):
            z = q_sample(z0, t_start, rng.normal(size=z0.shape), self.sched)
            for t in range(t_start, 0, -1):
                abar = self.sched.alpha_bar_at(t)
                eps_oracle = (z - np.sqrt(abar) * z0) / np.sqrt(1.0 - abar)
                z = reverse_step(z, eps_oracle, t, self.sched, rng.normal(size=z0.shape))
            np.testing.assert_allclose(z, z0, atol=1e-8)


class TestLossWeight:
    def test_paper_constants_at_extremes(self):
        cfg = LossWeightConfig(w1=4.5, w2=0.5)
        near_one = build_schedule("linear", 3, 1e-12, 1e-12)
        assert loss_weight(1, near_one, cfg) == pytest.approx(0.5, abs=1e-9)
        # alpha_bar -> 0 end of a long default schedule.
        sched = build_schedule("linear", 1000, 1e-4, 0.02)
        assert loss_weight(1000, sched, cfg) == pytest.approx(5.0, abs=1e-3)

    def test_midpoint_value(self):
        cfg = LossWeightConfig(w1=4.5, w2=0.5)
        sched = build_schedule("linear", 2, 0.5, 0.5)
        # alpha_bar at t=1 is exactly 0.5.
        assert loss_weight(1, sched, cfg) == pytest.approx(2.75)

    @given(
        total=st.integers(min_value=2, max_value=300),
        b0=st.floats(min_value=1e-5, max_value=0.3),
        spread=st.floats(min_value=0.0, max_value=0.5),
    )
    @settings(max_examples=40, deadline=None)
    def test_monotone_and_bounded_for_any_valid_schedule(self, total, b0, spread):
        sched = build_schedule("linear", total, b0, min(b0 + spread, 0.9))
        cfg = LossWeightConfig(w1=4.5, w2=0.5)
        values = [loss_weight(t, sched, cfg) for t in range(1, total + 1)]
        assert all(v2 >= v1 for v1, v2 in zip(values, values[1:]))
        assert all(cfg.w2 <= v <= cfg.w1 + cfg.w2 for v in values)
