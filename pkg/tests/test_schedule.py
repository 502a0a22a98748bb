import numpy as np
import pytest

from diffuad.schedule import NoiseSchedule, ScheduleError, alpha_bar, linear_schedule, posterior_variance


def product_oracle(betas, t):
    """Independent running-product computation of alpha_bar."""
    acc = 1.0
    for k in range(t):
        acc *= 1.0 - betas[k]
    return acc


class TestLinearSchedule:
    def test_paper_setting_accepted(self):
        s = linear_schedule(1000)
        assert s.T == 1000
        assert s.betas[0] == pytest.approx(1e-4)
        assert s.betas[-1] == pytest.approx(0.02)

    def test_single_step(self):
        s = linear_schedule(1, 0.5, 0.5)
        assert alpha_bar(s, 1) == pytest.approx(0.5)

    def test_constant_beta_product(self):
        s = linear_schedule(10, 0.1, 0.1)
        assert alpha_bar(s, 10) == pytest.approx(0.9 ** 10, abs=1e-12)

    def test_invalid_bounds_rejected(self):
        with pytest.raises(ScheduleError):
            linear_schedule(10, 0.0, 0.1)
        with pytest.raises(ScheduleError):
            linear_schedule(10, 0.2, 0.1)
        with pytest.raises(ScheduleError):
            linear_schedule(10, 0.1, 1.0)
        with pytest.raises(ScheduleError):
            linear_schedule(0)


class TestAlphaBar:
    def test_zero_step_is_one(self):
        assert alpha_bar(linear_schedule(10), 0) == 1.0

    def test_final_step_is_minimum(self):
        s = linear_schedule(50, 1e-3, 0.1)
        values = [alpha_bar(s, t) for t in range(1, 51)]
        assert alpha_bar(s, 50) == min(values)

    def test_matches_product_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            T = int(rng.integers(2, 200))
            betas = rng.uniform(1e-4, 0.2, size=T)
            s = NoiseSchedule(betas=betas)
            t = int(rng.integers(1, T + 1))
            assert alpha_bar(s, t) == pytest.approx(product_oracle(betas, t), abs=1e-12)

    def test_out_of_range_rejected(self):
        s = linear_schedule(10)
        with pytest.raises(ScheduleError):
            alpha_bar(s, 11)
        with pytest.raises(ScheduleError):
            alpha_bar(s, -1)


class TestPosteriorVariance:
    def test_equal_betas_hand_computation(self):
        beta = 0.2
        s = linear_schedule(5, beta, beta)
        a1 = 1 - beta
        a2 = (1 - beta) ** 2
        assert posterior_variance(s, 2) == pytest.approx((1 - a1) / (1 - a2) * beta, abs=1e-15)

    def test_vanishing_beta_limit(self):
        s = linear_schedule(10, 1e-9, 1e-8)
        assert posterior_variance(s, 5) < 1e-7

    def test_below_step_beta(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            T = int(rng.integers(3, 100))
            betas = rng.uniform(1e-4, 0.3, size=T)
            s = NoiseSchedule(betas=betas)
            for t in range(2, T + 1):
                assert posterior_variance(s, t) < betas[t - 1]
                assert posterior_variance(s, t) >= 0.0

    def test_range_check(self):
        s = linear_schedule(10)
        with pytest.raises(ScheduleError):
            posterior_variance(s, 1)
        with pytest.raises(ScheduleError):
            posterior_variance(s, 11)


class TestInvariants:
    def test_monotone_decreasing_in_unit_interval(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            T = int(rng.integers(1, 300))
            betas = rng.uniform(1e-5, 0.5, size=T)
            s = NoiseSchedule(betas=betas)
            abar = s.alpha_bars
            assert np.all(abar > 0.0) and np.all(abar < 1.0)
            assert np.all(np.diff(abar) < 0.0) or T == 1

    def test_bad_betas_rejected(self):
        with pytest.raises(ScheduleError):
            NoiseSchedule(betas=np.array([0.1, 1.1]))
        with pytest.raises(ScheduleError):
            NoiseSchedule(betas=np.array([]))
