"""Heat semigroup, localized kernels and their fitted bounds."""

import math

import numpy as np
import pytest

from conftest import random_field, single_mode
from nlcflow.grid import FieldError, Grid, SpectralField, divergence, to_physical
from nlcflow.heat import (
    KernelSpec,
    block_heat_decay,
    fit_kernel_bound,
    heat_semigroup,
    kernel_samples,
    kernel_symbol,
    resolvable_shells,
    spatial_exponent,
    verify_kernel_bound,
)
from nlcflow.littlewood_paley import block, build_partition, phi_tilde

KGRID = Grid(2, 512)


@pytest.fixture(scope="module")
def kpart():
    return build_partition(KGRID)


class TestSemigroup:
    def test_identity_at_zero(self, grid, rng):
        f = random_field(grid, rng)
        assert heat_semigroup(f, 0.0) is f

    def test_unit_mode(self):
        g = Grid(2, 16, 2 * np.pi)
        f = single_mode(g, (1, 0), 2.0)
        got = to_physical(heat_semigroup(f, 1.0))[0]
        np.testing.assert_allclose(got, 2 * math.exp(-1) * np.cos(g.coordinates[0]), atol=1e-15)

    def test_semigroup_law(self, grid, rng):
        f = random_field(grid, rng, 2)
        a = heat_semigroup(heat_semigroup(f, 0.3), 0.7).coefficients
        b = heat_semigroup(f, 1.0).coefficients
        assert np.abs(a - b).max() / np.abs(b).max() < 1e-12

    def test_negative_time(self, grid):
        with pytest.raises(ValueError):
            heat_semigroup(SpectralField.zeros(grid), -1.0)

    def test_maximum_principle(self, grid, rng):
        f = random_field(grid, rng)
        top = np.abs(to_physical(f)).max()
        for t in (0.01, 1.0, 100.0):
            assert np.abs(to_physical(heat_semigroup(f, t))).max() <= top + 1e-10


class TestKernels:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            KernelSpec("g4", 0, 1.0)
        with pytest.raises(ValueError):
            KernelSpec("g", 0, 1.0, indices=(0, 1))
        with pytest.raises(ValueError):
            KernelSpec("g3", 0, 1.0, m=2, gamma=(1, 0))
        with pytest.raises(ValueError):
            KernelSpec("g2", 0, 0.0)

    def test_g2_mean_free(self, partition):
        k = kernel_samples(KernelSpec("g2", -2, 3.0), partition)
        assert abs(k.sum()) < 1e-14 * np.abs(k).max() * k.size

    def test_out_of_range_shell(self, partition):
        with pytest.raises(FieldError):
            kernel_samples(KernelSpec("g2", 4, 1.0), partition)

    def test_g3_collapses_to_band_kernel(self, grid, partition):
        spec = KernelSpec("g3", -2, 2.0, m=0, gamma=(0, 0))
        sym = phi_tilde(grid.xi_norm / 0.25) * np.exp(-2.0 * grid.xi_squared)
        np.testing.assert_allclose(kernel_symbol(spec, grid), sym, atol=0)

    def test_g_contraction_matches_block(self, grid, partition):
        # sum_jk i g^{i,j,k} F_jk is the block of the heat-evolved P div F.
        # The mode sits where phi = 1 and its neighbours vanish, so the raw and
        # renormalised cutoffs agree.
        from nlcflow.solver import leray_project

        q, t = -2, 1.5
        x1, x2 = grid.coordinates
        F = np.zeros((4, *grid.shape))
        F[1] = np.cos(2 * np.pi * (5 * x1 + 3 * x2) / grid.L)
        F[2] = np.sin(2 * np.pi * (5 * x1 + 3 * x2) / grid.L)
        Fs = SpectralField.from_physical(grid, F)
        divF = np.stack([
            sum(1j * grid.diff_wavenumbers[k] * Fs.coefficients[2 * j + k] for k in range(2))
            for j in range(2)
        ])
        want = block(heat_semigroup(leray_project(SpectralField(grid, divF)), t), partition, q)
        got = np.zeros((2, *grid.shape), dtype=complex)
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    sym = kernel_symbol(KernelSpec("g", q, t, indices=(i, j, k)), grid)
                    got[i] += 1j * sym * Fs.coefficients[2 * j + k]
        np.testing.assert_allclose(got, want.coefficients, atol=1e-15)

    def test_g2_self_similarity(self, kpart):
        # g2(q+1, t/4, x/2) = 2^n g2(q, t, x) on the whole space
        a = kernel_samples(KernelSpec("g2", 0, 1.0), kpart).real
        b = kernel_samples(KernelSpec("g2", 1, 0.25), kpart).real
        # lattice sums of the two kernels differ at the 1e-6 level
        np.testing.assert_allclose(b[:64, :64], 4 * a[:128:2, :128:2], atol=1e-5 * np.abs(b).max())

    def test_spatial_exponents(self):
        assert spatial_exponent("g", 2) == 3
        assert spatial_exponent("g2", 2) == 2
        assert spatial_exponent("g1", 3) == 3


class TestBounds:
    @pytest.mark.parametrize("variant", ["g", "g1", "g2"])
    def test_variants_stable(self, variant, kpart):
        fit = fit_kernel_bound(variant, kpart, n_times=9)
        assert len(fit.shells) >= 3
        assert fit.passed, (fit.C, fit.notes)

    @pytest.mark.parametrize("m", [0, 1, 2])
    def test_weighted_variant_stable(self, m, kpart):
        fit = fit_kernel_bound("g3", kpart, m=m, n_times=9)
        assert fit.passed, fit.C

    def test_rate_scales_like_four_to_q(self, kpart):
        fit = fit_kernel_bound("g2", kpart, n_times=9)
        rates = np.array(fit.rate)
        assert np.abs(rates / rates.mean() - 1).max() < 0.10

    def test_verify_kernel_bound_tuple(self, kpart):
        C, c, ok = verify_kernel_bound(KernelSpec("g2", 0, 1.0), kpart)
        assert ok and C > 0 and c > 0

    def test_too_few_shells_reported(self, partition):
        fit = fit_kernel_bound("g2", partition, shells=[0])
        assert not fit.passed and fit.notes

    def test_resolvable_shells_default_grid(self, grid):
        assert resolvable_shells(grid, "g2") == [-1]


class TestBlockDecay:
    def test_rates_consistent(self, grid, partition, rng):
        f = random_field(grid, rng)
        rates = [block_heat_decay(f, partition, j)[1] for j in range(partition.j_min + 1, partition.j_max)]
        rates = np.array(rates)
        assert np.abs(rates / rates.mean() - 1).max() < 0.10

    def test_single_mode_rate_exact(self, grid, partition):
        # a lone lattice mode decays like exp(-|xi|^2 t) exactly
        f = single_mode(grid, (8, 0))
        C, c = block_heat_decay(f, partition, -1)
        assert c == pytest.approx((0.5 / 0.5) ** 2, rel=1e-10)
        assert C == pytest.approx(1.0, rel=1e-10)
