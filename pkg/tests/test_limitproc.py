import numpy as np
import pytest

from htnet.errors import InvalidInput
from htnet.limitproc import (MODES, CovarianceSpec, build_covariance, covariance_as_written,
                             covariance_multinomial, resolve_mode, sample_bm, simulate_limit)
from htnet.netmodel import random_network
from htnet.regulator import complementarity_defect
from htnet.scaling import GridPath


def grid_of(T, dt):
    return np.arange(int(round(T / dt)) + 1) * dt


class TestCovariance:
    def test_single_station_by_hand(self, single):
        # q(1-q) eta m = 0, mu = 1, q^2 eta m = 1; cross = -p mu - q eta m = -2
        for mode in MODES:
            cov = build_covariance(single, mode)
            np.testing.assert_array_equal(cov.sigma, [[2.0, -2.0], [-2.0, 2.0]])
            assert cov.ones_quadratic == 0.0

    def test_symmetric_as_written_by_hand(self, symmetric):
        cov = build_covariance(symmetric, "as_written")
        S = cov.sigma
        np.testing.assert_allclose(np.diag(S), 2.0, atol=1e-15)
        assert S[0, 1] == S[2, 3] == 0.5
        np.testing.assert_allclose(S[:2, 2:], -1.0, atol=1e-15)
        assert cov.ones_quadratic == pytest.approx(2.0, abs=1e-14)

    def test_symmetric_multinomial_by_hand(self, symmetric):
        S = build_covariance(symmetric, "multinomial_routing").sigma
        np.testing.assert_allclose(S, [[2, 0, -1, -1], [0, 2, -1, -1], [-1, -1, 2, 0], [-1, -1, 0, 2]],
                                   atol=1e-15)

    def test_projection(self, symmetric):
        S = build_covariance(symmetric, "consistency_projected").sigma
        # as_written has every row summing to 0.5, so Pi S Pi = S - 11^T / 8
        np.testing.assert_allclose(S, covariance_as_written(symmetric) - 0.125, atol=1e-14)
        assert abs(np.ones(4) @ S @ np.ones(4)) <= 1e-10

    @pytest.mark.parametrize("seed", range(10))
    def test_random_instances(self, seed):
        p = random_network(3, 4, np.random.default_rng(seed))
        ones = np.ones(7)
        for mode in MODES:
            cov = build_covariance(p, mode)
            assert np.max(np.abs(cov.sigma - cov.sigma.T)) == 0.0
            assert cov.eigen_min >= -1e-10
            assert np.max(np.abs(cov.factor @ cov.factor.T - cov.sigma)) <= 1e-10
            if mode != "as_written":
                assert abs(ones @ cov.sigma @ ones) <= 1e-10
        # the multinomial form only differs from the printed one off the block diagonals
        diff = covariance_as_written(p) - covariance_multinomial(p)
        np.testing.assert_allclose(np.diag(diff), 0, atol=1e-12)
        np.testing.assert_allclose(diff[:3, 3:], 0, atol=1e-12)

    def test_mode_aliases(self):
        assert resolve_mode("projected") == "consistency_projected"
        with pytest.raises(ValueError):
            resolve_mode("bogus")


class TestSampling:
    def test_zero_covariance_is_constant(self):
        z = np.zeros((3, 3))
        cov = CovarianceSpec(z, "as_written", 0.0, 0.0, z)
        path = sample_bm(cov, [1.0, 2.0, 3.0], grid_of(1.0, 0.1), 5)
        assert np.all(path.values == [1.0, 2.0, 3.0])

    def test_increment_covariance(self, random_critical):
        cov = build_covariance(random_critical, "multinomial_routing")
        dt = 0.01
        N = 100_000
        path = sample_bm(cov, np.zeros(cov.dim), grid_of(N * dt, dt), 11)
        X = np.diff(path.values, axis=0)
        emp = X.T @ X / N
        C = dt * cov.sigma
        se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C ** 2) / N)
        assert np.all(np.abs(emp - C) <= 5 * se)

    def test_projected_paths_sum_to_initial_sum(self, symmetric):
        cov = build_covariance(symmetric, "consistency_projected")
        init = np.array([0.5, 0.5, -0.25, -0.75])
        path = sample_bm(cov, init, grid_of(5.0, 0.01), 3)
        assert np.max(np.abs(path.values.sum(axis=1))) <= 1e-8

    def test_marginal_variance(self, symmetric):
        cov = build_covariance(symmetric, "multinomial_routing")
        t = 0.5
        g = grid_of(t, 0.05)
        ends = np.array([sample_bm(cov, np.zeros(4), g, s).values[-1] for s in range(4000)])
        var = ends.var(axis=0, ddof=1)
        expected = np.diag(cov.sigma) * t
        se = expected * np.sqrt(2 / (len(ends) - 1))
        assert np.all(np.abs(var - expected) <= 5 * se)

    def test_seeded(self, symmetric):
        cov = build_covariance(symmetric)
        a = sample_bm(cov, np.zeros(4), grid_of(1, 0.01), 9)
        b = sample_bm(cov, np.zeros(4), grid_of(1, 0.01), 9)
        assert a.values.tobytes() == b.values.tobytes()


class TestLimit:
    def test_zero_driver(self, symmetric):
        z = np.zeros((4, 4))
        cov = CovarianceSpec(z, "as_written", 0.0, 0.0, z)
        s = simulate_limit(symmetric, cov, grid=grid_of(2.0, 0.01), seed=1)
        for part in (s.Qstar, s.Istar, s.Vstar):
            assert not np.any(part.values)

    def test_closed_form_driver(self, single):
        g = grid_of(10.0, 1e-3)
        driver = GridPath(g, np.column_stack([g, -g]))
        s = simulate_limit(single, build_covariance(single), driver=driver)
        assert np.max(np.abs(s.Vstar.values[:, 0] - (np.exp(-g) - 1))) <= 5e-3

    def test_regulated_samples(self, random_critical):
        cov = build_covariance(random_critical, "multinomial_routing")
        for seed in range(20):
            s = simulate_limit(random_critical, cov, grid=grid_of(5.0, 0.01), seed=seed)
            assert np.all(s.Qstar.values >= -1e-9)
            assert np.all(np.diff(s.Istar.values, axis=0) >= 0)
            assert np.all(complementarity_defect(s.Qstar.values, s.Istar.values, 1e-9) == 0)
            mass = s.Qstar.values.sum(axis=1) + s.Vstar.values.sum(axis=1)
            assert np.max(np.abs(mass)) <= 1e-9

    def test_negative_initial_queue(self, single):
        with pytest.raises(InvalidInput):
            simulate_limit(single, build_covariance(single), initial=[-1.0, 1.0], grid=grid_of(1, 0.1))

    def test_grid_refinement(self, symmetric):
        cov = build_covariance(symmetric, "multinomial_routing")
        fine_dt = 1.25e-3
        T = 2.0
        steps = (8, 4, 2, 1)  # 1e-2, 5e-3, 2.5e-3, 1.25e-3
        gaps = np.zeros(3)
        for seed in range(30):
            fine = sample_bm(cov, np.zeros(4), grid_of(T, fine_dt), seed)
            outs = []
            for s in steps:
                drv = GridPath(fine.grid[::s], fine.values[::s])
                res = simulate_limit(symmetric, cov, driver=drv)
                stack = np.hstack([res.Qstar.values, res.Istar.values, res.Vstar.values])
                outs.append(stack[:: 8 // s])  # restrict to the coarsest grid
            gaps += [np.max(np.abs(outs[i] - outs[i + 1])) for i in range(3)]
        assert gaps[0] > gaps[1] > gaps[2]
