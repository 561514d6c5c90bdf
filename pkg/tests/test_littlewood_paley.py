"""Dyadic partition, blocks, Besov and Chemin-Lerner norms, CSV reports."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_field, single_mode
from nlcflow.grid import FieldError, Grid, SpectralField, dealias, to_physical
from nlcflow.littlewood_paley import (
    INF,
    BesovIndex,
    NormSeries,
    besov_norm,
    block,
    block_norms,
    build_partition,
    chemin_lerner_norm,
    low_pass,
    mean_mode,
    phi,
    phi_tilde,
    product_estimate_ratio,
    product_target_index,
    read_norm_csv,
    shell_range,
    write_norm_csv,
)

B_INF = BesovIndex(-1.0, INF, INF)


class TestProfiles:
    def test_phi_support(self):
        r = np.linspace(0, 4, 4001)
        v = phi(r)
        assert np.all((v >= 0) & (v <= 1))
        assert np.all(v[r <= 0.75] == 0)
        assert np.all(v[r >= 8 / 3] == 0)

    def test_phi_at_one_and_two(self):
        # chi(1/2) = 1, chi(1) = h(1/3) / (h(1/3) + h(1/4)) with h(x) = exp(-1/x)
        h = lambda x: math.exp(-1 / x)  # noqa: E731
        chi1 = h(1 / 3) / (h(1 / 3) + h(1 / 4))
        assert phi(1.0) == pytest.approx(1 - chi1, abs=1e-15)
        assert phi(2.0) == pytest.approx(chi1, abs=1e-15)

    def test_telescoping(self):
        r = np.linspace(0.75, 100, 5000)
        total = sum(phi(r / 2.0**j) for j in range(-2, 10))
        np.testing.assert_allclose(total, 1.0, atol=1e-14)

    def test_phi_tilde_covers_phi(self):
        r = np.linspace(0, 4, 4001)
        np.testing.assert_allclose(phi_tilde(r) * phi(r), phi(r), atol=1e-15)
        assert np.all(phi_tilde(r)[(r <= 3 / 8) | (r >= 10 / 3)] == 0)


class TestPartition:
    def test_default_range(self, partition):
        assert (partition.j_min, partition.j_max) == (-5, 0)
        assert partition.n_shells >= 6

    @pytest.mark.parametrize("N,expected", [(16, (-5, -2)), (128, (-5, 1)), (256, (-5, 2))])
    def test_range_scales_with_resolution(self, N, expected):
        assert shell_range(Grid(2, N)) == expected

    def test_smallest_grid_has_four_shells(self):
        # the shell count depends on N only; N = 16 is the floor
        j0, j1 = shell_range(Grid(2, 16, 2 * np.pi))
        assert j1 - j0 + 1 == 4

    def test_too_coarse(self, monkeypatch):
        import nlcflow.littlewood_paley as lp

        monkeypatch.setattr(lp, "shell_range", lambda g: (0, 2))
        with pytest.raises(FieldError, match="shells"):
            lp.build_partition(Grid(2, 16))

    def test_unity_on_covered_band(self, partition):
        total = partition.cutoffs.sum(axis=0)
        mask = partition.covered_mask()
        assert np.abs(total[mask] - 1).max() < 1e-10

    def test_unrenormalized_is_off(self, grid):
        raw = build_partition(grid, renormalize=False)
        mask = raw.covered_mask()
        assert np.abs(raw.cutoffs.sum(axis=0)[mask] - 1).max() > 0.5

    def test_disjoint_supports(self, partition):
        for j in partition.indices:
            for k in partition.indices:
                if abs(j - k) >= 2:
                    assert np.all(partition.cutoff(j) * partition.cutoff(k) == 0)

    def test_zero_below_ring(self, partition, grid):
        for j in partition.indices:
            below = grid.xi_norm < 0.75 * 2.0**j
            assert np.all(partition.cutoff(j)[below] == 0)


class TestBlocks:
    def test_reconstruction(self, grid, partition, rng):
        f = random_field(grid, rng)
        total = mean_mode(f).coefficients + sum(block(f, partition, j).coefficients for j in partition.indices)
        np.testing.assert_allclose(total, f.coefficients, atol=1e-14)

    def test_block_of_block_vanishes(self, grid, partition, rng):
        f = random_field(grid, rng)
        g = block(block(f, partition, -4), partition, -2)
        assert np.abs(g.coefficients).max() == 0

    def test_mode_at_shell_centre(self, grid, partition):
        # |xi| = 2^j exactly for k = 2^{j+4} on the default box
        j = -2
        f = single_mode(grid, (2 ** (j + 4), 0))
        b = block(f, partition, j)
        lattice = partition.cutoff(j)[4, 0]
        assert lattice == pytest.approx(phi(1.0) / (phi(1.0) + phi(2.0)), abs=1e-15)
        np.testing.assert_allclose(b.coefficients, lattice * f.coefficients, atol=1e-15)

    def test_out_of_range(self, grid, partition):
        with pytest.raises(FieldError):
            block(SpectralField.zeros(grid), partition, 5)

    def test_low_pass_extremes(self, grid, partition, rng):
        f = random_field(grid, rng)
        assert low_pass(f, partition, partition.j_max + 1) is f
        np.testing.assert_array_equal(
            low_pass(f, partition, partition.j_min).coefficients, mean_mode(f).coefficients
        )

    def test_low_pass_plus_high_blocks(self, grid, partition, rng):
        f = random_field(grid, rng)
        j = -2
        high = sum(block(f, partition, k).coefficients for k in range(j, partition.j_max + 1))
        np.testing.assert_allclose(low_pass(f, partition, j).coefficients + high, f.coefficients, atol=1e-14)

    def test_low_pass_idempotent_below_transition(self, grid, partition, rng):
        # S_j is a projection only where its weight is 0 or 1
        j = -1
        f = random_field(grid, rng)
        f = f.with_coefficients(f.coefficients * (grid.xi_norm <= 0.75 * 2.0 ** (j - 1) * 2))
        once = low_pass(f, partition, j)
        np.testing.assert_allclose(low_pass(once, partition, j).coefficients, once.coefficients, atol=1e-14)


class TestBesov:
    def test_zero(self, grid, partition):
        assert besov_norm(SpectralField.zeros(grid), partition, B_INF) == 0

    def test_single_mode_closed_form(self, grid, partition):
        k = (12, 5)
        f = single_mode(grid, k, 2.0)
        r = grid.fundamental * math.hypot(*k)
        weights = np.array([phi(r / 2.0**j) for j in partition.indices])
        weights /= weights.sum()
        want = max(2.0**-j * w * 2.0 for j, w in zip(partition.indices, weights))
        assert besov_norm(f, partition, B_INF) == pytest.approx(want, rel=1e-12)

    def test_homogeneous_and_triangle(self, grid, partition, rng):
        for idx in (B_INF, BesovIndex(0.5, 2, 1), BesovIndex(1, 1, 2)):
            f, g = random_field(grid, rng), random_field(grid, rng)
            assert besov_norm(f * -3.0, partition, idx) == pytest.approx(3 * besov_norm(f, partition, idx))
            assert besov_norm(f + g, partition, idx) <= besov_norm(f, partition, idx) + besov_norm(g, partition, idx) + 1e-12

    def test_block_level_scaling(self, grid, partition):
        # content at shell j moved to shell j+1 with amplitude doubled keeps its B^-1 value
        k = np.array([3, 2])
        f = single_mode(grid, k)
        g = single_mode(grid, 2 * k, 2.0)
        nf, ng = block_norms(f, partition), block_norms(g, partition)
        np.testing.assert_allclose(2.0 ** -np.arange(-5, 0) * nf[:-1],
                                   2.0 ** -np.arange(-4, 1) * ng[1:], rtol=1e-12, atol=1e-13)
        assert besov_norm(f, partition, B_INF) == pytest.approx(besov_norm(g, partition, B_INF), rel=1e-12)

    def test_index_validation(self):
        with pytest.raises(ValueError):
            BesovIndex(0, 3, 2)


class TestCheminLerner:
    def test_constant_in_time(self, grid, partition, rng):
        f = random_field(grid, rng)
        series = [(t, f) for t in (0.0, 0.5, 1.0, 2.0)]
        assert chemin_lerner_norm(series, partition, B_INF, INF, 2.0) == pytest.approx(besov_norm(f, partition, B_INF))
        idx = BesovIndex(1.0, INF, 1)
        assert chemin_lerner_norm(series, partition, idx, 1, 2.0) == pytest.approx(2.0 * besov_norm(f, partition, idx))

    def test_sup_ordering(self, grid, partition, rng):
        series = [(float(t), random_field(grid, rng)) for t in range(5)]
        cl = chemin_lerner_norm(series, partition, B_INF, INF, 4.0)
        sup = max(besov_norm(f, partition, B_INF) for _, f in series)
        assert cl == pytest.approx(sup, rel=1e-12)

    def test_rejects(self, grid, partition, rng):
        f = random_field(grid, rng)
        with pytest.raises(ValueError):
            chemin_lerner_norm([(0.0, f)], partition, B_INF, 1, 1.0)
        with pytest.raises(ValueError):
            chemin_lerner_norm([(2.0, f)], partition, B_INF, INF, 1.0)


class TestProducts:
    def test_target_index(self):
        t = product_target_index(2, BesovIndex(0.5, 2, 2), BesovIndex(0.5, 2, 2))
        assert (t.s, t.p, t.r) == (1.0 - 2 * (0.5 + 0.5 - 0.5), 2, 1)

    def test_requires_positive_sum(self):
        with pytest.raises(ValueError):
            product_target_index(2, BesovIndex(-1.0), BesovIndex(0.5))

    def test_single_mode_finite_and_bilinear(self, grid, partition):
        f = single_mode(grid, (3, 1))
        idx = BesovIndex(0.5, INF, INF)
        r = product_estimate_ratio(f, f, partition, idx, idx)
        assert math.isfinite(r) and r > 0
        r10 = product_estimate_ratio(f, f * 10.0, partition, idx, idx)
        assert r10 == pytest.approx(r, rel=1e-12)

    def test_random_sweep(self, grid, partition, rng):
        idx = BesovIndex(0.5, INF, INF)
        ratios = []
        for _ in range(100):
            f, g = random_field(grid, rng), random_field(grid, rng)
            ratios.append(product_estimate_ratio(f, g, partition, idx, idx))
        assert np.all(np.isfinite(ratios))

    def test_zero_factor(self, grid, partition):
        idx = BesovIndex(0.5, INF, INF)
        z = SpectralField.zeros(grid)
        with pytest.raises(ValueError):
            product_estimate_ratio(z, single_mode(grid, (1, 0)), partition, idx, idx)


class TestNormSeries:
    def test_increasing_times(self):
        s = NormSeries(0, 1, "u")
        s.append(1.0, 2.0)
        with pytest.raises(ValueError):
            s.append(1.0, 3.0)
        with pytest.raises(ValueError):
            s.append(2.0, float("nan"))

    def test_csv_roundtrip(self, tmp_path):
        a = NormSeries(0, 1, "u", [(0.5, 1 / 3), (1.0, 2 / 7)])
        b = NormSeries(1, 0, "grad_d", [(0.5, 1e-300)])
        path = tmp_path / "n.csv"
        write_norm_csv(path, [a, b])
        assert path.read_text().splitlines()[0] == "t,k,m,kind,value"
        back = {(s.k, s.m, s.kind): s.samples for s in read_norm_csv(path)}
        assert back[(0, 1, "u")] == a.samples and back[(1, 0, "grad_d")] == b.samples


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10), st.integers(0, 2**31 - 1))
def test_besov_homogeneity_property(alpha, seed):
    g = Grid(2, 32)
    P = build_partition(g)
    f = dealias(SpectralField.from_physical(g, np.random.default_rng(seed).standard_normal(g.shape)))
    assert besov_norm(f * alpha, P, B_INF) == pytest.approx(alpha * besov_norm(f, P, B_INF), rel=1e-12)
