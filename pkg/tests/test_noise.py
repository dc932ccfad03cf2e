import math

import numpy as np
import pytest
from scipy import stats

from theta_milstein import DomainError, noise


class TestGenerate:
    def test_deterministic_for_same_key(self):
        a = noise.generate(123, 7, 1.0, 512)
        b = noise.generate(123, 7, 1.0, 512)
        assert np.array_equal(a.fine_increments, b.fine_increments)

    def test_distinct_paths_differ(self):
        a = noise.generate(123, 0, 1.0, 512)
        b = noise.generate(123, 1, 1.0, 512)
        c = noise.generate(124, 0, 1.0, 512)
        assert not np.array_equal(a.fine_increments, b.fine_increments)
        assert not np.array_equal(a.fine_increments, c.fine_increments)

    def test_variance_band(self):
        # 99.9% band for the sample variance of 10^6 draws with dt = 0.01
        grid = noise.generate(2023, 0, 10_000.0, 10 ** 6)
        var = float(np.var(grid.fine_increments, ddof=1))
        assert 0.0099 <= var <= 0.0101

    def test_mean_bound(self):
        grid = noise.generate(2023, 0, 10_000.0, 10 ** 6)
        dt = grid.dt_fine
        assert abs(grid.fine_increments.mean()) <= 4.0 * math.sqrt(dt / 10 ** 6)

    def test_standardised_increments_are_gaussian(self):
        grid = noise.generate(99, 3, 100.0, 10 ** 5)
        standardised = grid.fine_increments / math.sqrt(grid.dt_fine)
        result = stats.kstest(standardised, "norm")
        assert result.pvalue > 1e-3

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            noise.generate(0, 0, 1.0, 0)
        with pytest.raises(DomainError):
            noise.generate(0, 0, -1.0, 16)
        with pytest.raises(DomainError):
            noise.generate(0, -1, 1.0, 16)

    def test_levels_registration(self):
        grid = noise.generate(0, 0, 1.0, 16, coarse_factors=(2, 4))
        assert grid.levels[0] == noise.LevelSpec(dt=1.0 / 16, steps=16)
        assert noise.LevelSpec(dt=0.25, steps=4) in grid.levels
        with pytest.raises(DomainError):
            noise.generate(0, 0, 1.0, 16, coarse_factors=(3,))


class TestCoarsen:
    def test_pair_sum(self):
        grid = noise.generate(5, 0, 1.0, 2)
        a, b = grid.fine_increments
        assert np.array_equal(noise.coarsen(grid, 2), np.array([a + b]))

    def test_factor_one_identity(self):
        grid = noise.generate(5, 0, 1.0, 16)
        out = noise.coarsen(grid, 1)
        assert np.array_equal(out, grid.fine_increments)
        assert out is not grid.fine_increments

    def test_dyadic_nesting_is_exact(self):
        grid = noise.generate(17, 11, 1.0, 256)
        two_then_two = noise.coarsen_array(noise.coarsen(grid, 2), 2)
        assert np.array_equal(two_then_two, noise.coarsen(grid, 4))
        two_then_four = noise.coarsen_array(noise.coarsen(grid, 2), 4)
        assert np.array_equal(two_then_four, noise.coarsen(grid, 8))

    def test_group_sums(self):
        grid = noise.generate(17, 11, 1.0, 240)
        for factor in (2, 3, 4, 6, 8, 12):
            coarse = noise.coarsen(grid, factor)
            groups = grid.fine_increments.reshape(-1, factor).sum(axis=1)
            assert np.allclose(coarse, groups, rtol=1e-14, atol=0.0)

    def test_brownian_values_consistent_across_levels(self):
        # the path value at shared grid points is the same sum either way
        grid = noise.generate(8, 2, 1.0, 64)
        w_fine = noise.brownian_values(grid.fine_increments)
        w_coarse = noise.brownian_values(noise.coarsen(grid, 8))
        assert np.allclose(w_fine[::8], w_coarse, rtol=1e-13, atol=1e-15)

    def test_non_dividing_factor(self):
        grid = noise.generate(5, 0, 1.0, 16)
        with pytest.raises(DomainError):
            noise.coarsen(grid, 3)

    def test_matrix_rows_match_vector_coarsening(self):
        rows = np.stack([noise.generate(3, i, 1.0, 32).fine_increments for i in range(4)])
        batched = noise.coarsen_array(rows, 4)
        for i in range(4):
            assert np.array_equal(batched[i], noise.coarsen_array(rows[i], 4))


class TestMoments:
    def test_gaussian_even_moment_identity(self):
        dt = 0.02
        assert noise.gaussian_even_moment(dt, 1) == pytest.approx(dt)
        assert noise.gaussian_even_moment(dt, 2) == pytest.approx(3 * dt ** 2)
        assert noise.gaussian_even_moment(dt, 3) == pytest.approx(15 * dt ** 3)

    def test_moment_check_targets(self):
        grid = noise.generate(7, 0, 10_000.0, 10 ** 6)
        report = noise.moment_check(grid)
        names = [s.name for s in report.stats]
        assert names == ["second_moment", "fourth_moment", "centered_square"]
        dt = grid.dt_fine
        targets = [dt, 3 * dt ** 2, 2 * dt ** 2]
        for stat, target in zip(report.stats, targets):
            assert stat.target == pytest.approx(target, rel=1e-12)
            assert stat.deviation_sigmas <= 3.0, stat

    def test_sixth_moment_sample(self):
        grid = noise.generate(7, 1, 1000.0, 10 ** 6)
        dt = grid.dt_fine
        sixth = grid.fine_increments ** 6
        se = sixth.std(ddof=1) / math.sqrt(sixth.size)
        assert abs(sixth.mean() - noise.gaussian_even_moment(dt, 3)) <= 4 * se

    def test_minimum_sample_size(self):
        grid = noise.generate(7, 0, 1.0, 512)
        with pytest.raises(DomainError):
            noise.moment_check(grid)


class TestBinaryRoundTrip:
    def test_round_trip(self, tmp_path):
        grid = noise.generate(31337, 9, 2.5, 640)
        path = tmp_path / "increments.bin"
        noise.write_binary(grid, path)
        back = noise.read_binary(path)
        assert np.array_equal(back.fine_increments, grid.fine_increments)
        assert back.seed == grid.seed
        assert back.path_index == grid.path_index
        assert back.t_end == grid.t_end
        assert back.fine_steps == grid.fine_steps

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 40)
        with pytest.raises(DomainError):
            noise.read_binary(path)

    def test_truncated(self, tmp_path):
        grid = noise.generate(1, 0, 1.0, 64)
        path = tmp_path / "short.bin"
        noise.write_binary(grid, path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(DomainError):
            noise.read_binary(path)


def test_brownian_values_prefix_sums():
    grid = noise.generate(4, 4, 1.0, 8)
    w = noise.brownian_values(grid.fine_increments)
    assert w[0] == 0.0
    assert w.shape == (9,)
    assert np.allclose(np.diff(w), grid.fine_increments, rtol=0, atol=0)
