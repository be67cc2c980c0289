import numpy as np
import pytest

from chest.diffusion import (
    NoiseSchedule,
    forward_sample,
    linear_schedule,
    reverse_generative_step,
    score_from_epsilon,
)
from chest.numerics import RngStream, sample_standard_complex_gaussian

from _oracles import direct_alpha_bar

# regression constant: cumulative retention at T=100 with the default endpoints,
# frozen from the direct-product reference below
ALPHA_BAR_100_DEFAULT = 0.3635632480554922


class TestSchedule:
    def test_three_step_products(self):
        sched = linear_schedule(3, 0.1, 0.3)
        assert np.allclose(sched.betas, [0.1, 0.2, 0.3])
        assert np.allclose(sched.alpha_bars, [0.9, 0.72, 0.504])

    def test_default_endpoints_regression(self):
        sched = linear_schedule(100)
        oracle = direct_alpha_bar(100, 1e-4, 0.02)
        assert np.allclose(sched.alpha_bars, oracle, rtol=1e-12)
        assert sched.alpha_bar(100) == pytest.approx(ALPHA_BAR_100_DEFAULT, rel=1e-12)

    def test_alpha_bar_strictly_decreasing(self):
        sched = linear_schedule(100, 1e-4, 0.2)
        assert np.all(np.diff(sched.alpha_bars) < 0)
        assert sched.alpha_bar(100) < sched.alpha_bar(1)
        assert sched.alpha_bar(0) == 1.0

    def test_final_reverse_step_is_deterministic(self):
        sched = linear_schedule(10, 1e-3, 0.1)
        assert sched.sigma_tilde(1) == 0.0
        assert sched.sigma_tilde(2) > 0.0

    @pytest.mark.parametrize(
        "args",
        [(1, 1e-4, 0.02), (10, 0.0, 0.5), (10, 0.5, 0.1), (10, 0.1, 1.0)],
    )
    def test_invalid_schedules_rejected(self, args):
        with pytest.raises(ValueError):
            linear_schedule(*args)

    def test_nonmonotone_betas_rejected(self):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.1, 0.1, 0.2]))


class TestForwardSample:
    def test_zero_signal_keeps_only_noise(self):
        sched = linear_schedule(20, 1e-3, 0.2)
        H0 = np.zeros((2, 3), dtype=complex)
        H_t, eps = forward_sample(H0, 15, sched, RngStream(0))
        abar = sched.alpha_bar(15)
        assert np.allclose(H_t, np.sqrt(1.0 - abar) * eps)

    def test_unit_power_is_preserved_in_expectation(self):
        sched = linear_schedule(20, 1e-3, 0.2)
        H0 = np.ones((2000, 4, 4), dtype=complex)  # unit-power entries
        H_t, _ = forward_sample(H0, 12, sched, RngStream(1))
        assert abs(np.mean(np.abs(H_t) ** 2) - 1.0) < 0.02

    def test_step_bounds_enforced(self):
        sched = linear_schedule(20, 1e-3, 0.2)
        with pytest.raises(ValueError):
            forward_sample(np.zeros((2, 2), dtype=complex), 21, sched, RngStream(0))


class TestScoreBridge:
    def test_zero_and_linearity(self):
        sched = linear_schedule(20, 1e-3, 0.2)
        eps = sample_standard_complex_gaussian(3, 3, RngStream(2))
        assert np.all(score_from_epsilon(np.zeros((3, 3)), 5, sched) == 0.0)
        assert np.allclose(
            score_from_epsilon(2.0 * eps, 5, sched),
            2.0 * score_from_epsilon(eps, 5, sched),
        )

    def test_isotropic_ideal_prediction_gives_negated_state(self):
        # for unit-covariance channels the ideal prediction is sqrt(1-abar) H_t
        sched = linear_schedule(20, 1e-3, 0.2)
        H_t = sample_standard_complex_gaussian(2, 4, RngStream(3))
        t = 9
        ideal = np.sqrt(1.0 - sched.alpha_bar(t)) * H_t
        assert np.allclose(score_from_epsilon(ideal, t, sched), -H_t, atol=1e-12)

    def test_conditional_score_identity(self):
        sched = linear_schedule(30, 1e-3, 0.25)
        H0 = sample_standard_complex_gaussian(3, 5, RngStream(4))
        t = 17
        H_t, eps = forward_sample(H0, t, sched, RngStream(5))
        abar = sched.alpha_bar(t)
        expected = -(H_t - np.sqrt(abar) * H0) / (1.0 - abar)
        assert np.abs(score_from_epsilon(eps, t, sched) - expected).max() <= 1e-12


class TestReverseStep:
    def test_zero_prediction_rescales(self):
        sched = linear_schedule(20, 1e-3, 0.2)
        H = sample_standard_complex_gaussian(2, 2, RngStream(6))
        out = reverse_generative_step(H, np.zeros_like(H), 1, sched, RngStream(7))
        assert np.allclose(out, H / np.sqrt(sched.alpha(1)))

    def test_final_step_ignores_stream(self):
        sched = linear_schedule(20, 1e-3, 0.2)
        H = sample_standard_complex_gaussian(2, 2, RngStream(8))
        eps = sample_standard_complex_gaussian(2, 2, RngStream(9))
        a = reverse_generative_step(H, eps, 1, sched, RngStream(10))
        b = reverse_generative_step(H, eps, 1, sched, RngStream(11))
        assert np.array_equal(a, b)

    def test_intermediate_step_is_stochastic(self):
        sched = linear_schedule(20, 1e-3, 0.2)
        H = sample_standard_complex_gaussian(2, 2, RngStream(12))
        eps = np.zeros_like(H)
        a = reverse_generative_step(H, eps, 10, sched, RngStream(13))
        b = reverse_generative_step(H, eps, 10, sched, RngStream(14))
        assert not np.array_equal(a, b)
