"""
Tests for the cosine schedule and its derived coefficients
"""
import numpy as np
import pytest

from src.algorithms.schedule import dds_default_steps, make_cosine, posterior_coeffs, uniform_subset


class TestCosineSchedule:
    """make_cosine invariants"""

    @pytest.fixture
    def sch(self):
        return make_cosine(1000)

    def test_lengths(self, sch):
        for array in (sch.beta, sch.rho, sch.rho_bar, sch.sigma_bar):
            assert array.shape == (1001,)

    def test_clean_endpoint(self, sch):
        assert sch.rho_bar[0] == 1.0
        assert sch.sigma_bar[0] == 0.0

    def test_rho_bar_strictly_decreasing(self, sch):
        assert np.all(np.diff(sch.rho_bar) < 0)
        assert 0.0 < sch.rho_bar[-1] < 1e-3

    def test_beta_bounds(self, sch):
        assert np.all(sch.beta[1:] > 0)
        assert np.all(sch.beta <= 0.999)

    def test_rho_bar_is_running_product(self, sch):
        np.testing.assert_allclose(sch.rho_bar, np.cumprod(1.0 - sch.beta), rtol=0, atol=0)
        np.testing.assert_allclose(sch.sigma_bar ** 2 + sch.rho_bar, 1.0, atol=1e-15)

    def test_arrays_read_only(self, sch):
        with pytest.raises(ValueError):
            sch.beta[3] = 0.5

    def test_small_T_rejected(self):
        with pytest.raises(ValueError):
            make_cosine(1)

    def test_check_step(self, sch):
        assert sch.check_step(0) == 0
        with pytest.raises(ValueError):
            sch.check_step(0, allow_zero=False)
        with pytest.raises(ValueError):
            sch.check_step(1001)


class TestPosteriorCoeffs:
    """Coefficients of the reverse posterior"""

    @pytest.fixture
    def sch(self):
        return make_cosine(100)

    @pytest.mark.parametrize("t, t_prev", [(1, 0), (2, 1), (50, 49), (100, 99), (100, 75), (40, 0)])
    def test_mean_and_variance_consistency(self, sch, t, t_prev):
        c = posterior_coeffs(sch, t, t_prev)
        # marginal mean of r_{t'} given r0 is sqrt(rho_bar_t') r0
        assert c.c_y0 + c.c_st * np.sqrt(sch.rho_bar[t]) == pytest.approx(np.sqrt(sch.rho_bar[t_prev]))
        # marginal variance of r_{t'} is 1 - rho_bar_t'
        assert c.c_st ** 2 * (1 - sch.rho_bar[t]) + c.var_tilde == pytest.approx(1 - sch.rho_bar[t_prev])

    def test_single_step_matches_rho(self, sch):
        c = posterior_coeffs(sch, 10)
        assert c.var_fixed == pytest.approx(sch.beta[10])
        assert c.c_y0 == pytest.approx(np.sqrt(sch.rho_bar[9]) * sch.beta[10] / (1 - sch.rho_bar[10]))

    def test_tilde_not_larger_than_fixed(self, sch):
        for t in range(1, 101):
            c = posterior_coeffs(sch, t)
            assert c.var_tilde <= c.var_fixed + 1e-15

    def test_first_step_has_zero_tilde_variance(self, sch):
        assert posterior_coeffs(sch, 1).var_tilde == 0.0

    def test_bad_jump(self, sch):
        with pytest.raises(ValueError):
            posterior_coeffs(sch, 5, 5)
        with pytest.raises(ValueError):
            posterior_coeffs(sch, 0)


class TestStepSubsets:
    """uniform_subset and the default DDS steps"""

    def test_uniform_subset_examples(self):
        assert uniform_subset(1000, 4) == [250, 500, 750, 1000]
        assert uniform_subset(10, 3) == [4, 7, 10]
        assert uniform_subset(5, 5) == [1, 2, 3, 4, 5]
        assert uniform_subset(7, 1) == [7]

    @pytest.mark.parametrize("T, S", [(1000, 10), (1000, 7), (97, 13), (100, 100)])
    def test_uniform_subset_spacing(self, T, S):
        steps = uniform_subset(T, S)
        assert len(steps) == S
        assert steps[-1] == T
        gaps = np.diff([0] + steps)
        assert gaps.min() >= 1
        assert gaps.max() - gaps.min() <= 1

    def test_uniform_subset_bounds(self):
        with pytest.raises(ValueError):
            uniform_subset(10, 11)
        with pytest.raises(ValueError):
            uniform_subset(10, 0)

    def test_dds_defaults(self):
        assert dds_default_steps(1000) == [250, 500, 750]
        assert dds_default_steps(20) == [5, 10, 15]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
