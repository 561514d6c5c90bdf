"""Property suite behind ``nlcflow verify``.

Each check returns a :class:`PropertyResult` with the measured number and
the threshold it was held to.  ``run_suite`` runs them in a fixed order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .function_spaces import CarlesonConfig, bmo_minus1_norm, bmo_seminorm
from .grid import (
    Grid,
    SpectralField,
    dealias,
    derivative,
    gradient,
    pointwise_norm,
    stress_tensor,
    to_physical,
)
from .heat import (
    VARIANTS,
    block_heat_decay,
    fit_kernel_bound,
    heat_semigroup,
    weighted_heat_sup,
    heat_time_grid,
)
from .littlewood_paley import (
    INF,
    BesovIndex,
    DyadicPartition,
    besov_norm,
    block,
    build_partition,
)
from .solver import (
    SolverConfig,
    advance_to,
    initial_state,
    leray_project,
    make_initial_data,
    max_divergence,
    step,
    velocity_profile,
)

KERNEL_GRID = Grid(2, 512)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name}: value={self.value:.6g} threshold={self.threshold:.6g} {self.detail}".rstrip()

    def to_dict(self) -> dict:
        return {
            "name": self.name, "passed": bool(self.passed), "value": float(self.value),
            "threshold": float(self.threshold), "detail": self.detail,
        }


@dataclass
class SuiteContext:
    grid: Grid = field(default_factory=Grid)
    renormalize: bool = True
    seed: int = 0

    def __post_init__(self):
        self.partition = build_partition(self.grid, renormalize=self.renormalize)
        self.rng = np.random.default_rng(self.seed)

    def random_field(self, c: int = 1) -> SpectralField:
        v = self.rng.standard_normal((c, *self.grid.shape))
        return dealias(SpectralField.from_physical(self.grid, v))


# --- grid and partition ------------------------------------------------------

def check_roundtrip(ctx: SuiteContext) -> PropertyResult:
    v = ctx.rng.standard_normal((3, *ctx.grid.shape))
    back = to_physical(SpectralField.from_physical(ctx.grid, v))
    err = float(np.abs(back - v).max() / np.abs(v).max())
    return PropertyResult("transform round trip", err < 1e-12, err, 1e-12)


def check_derivative_composition(ctx: SuiteContext) -> PropertyResult:
    f = SpectralField.from_physical(ctx.grid, ctx.rng.standard_normal(ctx.grid.shape))
    a = derivative(f, 0, 2).coefficients
    b = derivative(derivative(f, 0, 1), 0, 1).coefficients
    err = float(np.abs(a - b).max())
    return PropertyResult("second derivative equals first applied twice", err == 0.0, err, 0.0)


def check_stress_gram(ctx: SuiteContext) -> PropertyResult:
    d = ctx.random_field(3)
    n = ctx.grid.n_dims
    T = to_physical(stress_tensor(d)).reshape(n, n, -1)
    idx = ctx.rng.choice(T.shape[-1], 100, replace=False)
    worst = 0.0
    for p in idx:
        M = T[:, :, p]
        scale = max(np.abs(M).max(), 1e-300)
        worst = max(worst, np.abs(M - M.T).max() / scale, -np.linalg.eigvalsh(M).min() / scale)
    return PropertyResult("stress tensor symmetric positive semidefinite", worst < 1e-12, worst, 1e-12)


def partition_residual(P: DyadicPartition) -> float:
    total = P.cutoffs.sum(axis=0)
    mask = P.covered_mask()
    return float(np.abs(total[mask] - 1.0).max())


def check_partition_of_unity(ctx: SuiteContext) -> PropertyResult:
    res = partition_residual(ctx.partition)
    return PropertyResult("partition of unity on covered band", res < 1e-10, res, 1e-10,
                          f"shells {ctx.partition.j_min}..{ctx.partition.j_max}")


def check_support_disjointness(ctx: SuiteContext) -> PropertyResult:
    P = ctx.partition
    worst = 0.0
    for j in P.indices:
        for k in P.indices:
            if abs(j - k) >= 2:
                worst = max(worst, float(np.abs(P.cutoff(j) * P.cutoff(k)).max()))
    return PropertyResult("blocks two or more apart are disjoint", worst == 0.0, worst, 0.0)


def bernstein_ratios(ctx: SuiteContext, n_fields: int = 4) -> dict[int, float]:
    P = ctx.partition
    out = {}
    fields = [ctx.random_field() for _ in range(n_fields)]
    for j in P.indices:
        best = 0.0
        for f in fields:
            b = block(f, P, j)
            top = pointwise_norm(to_physical(gradient(b))).max()
            best = max(best, top / (2.0**j * np.abs(to_physical(b)).max()))
        out[j] = float(best)
    return out


def check_bernstein(ctx: SuiteContext) -> PropertyResult:
    r = bernstein_ratios(ctx)
    spread = max(r.values()) / min(r.values())
    return PropertyResult("Bernstein constant stable across shells", spread <= 2.0, spread, 2.0,
                          f"C_B={max(r.values()):.3g}")


def heat_decay_rates(ctx: SuiteContext) -> dict[int, float]:
    """Normalised rate c_j (rate in t divided by 4^j) on the interior shells."""
    P = ctx.partition
    f = ctx.random_field()
    return {j: block_heat_decay(f, P, j)[1] for j in range(P.j_min + 1, P.j_max)}


def check_block_heat_rate(ctx: SuiteContext) -> PropertyResult:
    rates = heat_decay_rates(ctx)
    vals = np.array(list(rates.values()))
    dev = float(np.abs(vals / vals.mean() - 1).max())
    return PropertyResult("block heat decay rate scales like 4^j", dev <= 0.10, dev, 0.10,
                          "rates/4^j=" + ",".join(f"{v:.3f}" for v in vals))


def check_semigroup(ctx: SuiteContext) -> PropertyResult:
    f = ctx.random_field(2)
    a = heat_semigroup(heat_semigroup(f, 0.3), 0.7).coefficients
    b = heat_semigroup(f, 1.0).coefficients
    err = float(np.abs(a - b).max() / np.abs(b).max())
    return PropertyResult("heat semigroup law", err < 1e-12, err, 1e-12)


def check_maximum_principle(ctx: SuiteContext) -> PropertyResult:
    f = ctx.random_field()
    top = np.abs(to_physical(f)).max()
    worst = max(np.abs(to_physical(heat_semigroup(f, t))).max() - top for t in (0.1, 1, 10))
    return PropertyResult("heat maximum principle", worst <= 1e-10, float(worst), 1e-10)


# --- kernels and linear estimates ---------------------------------------------

def kernel_fits(grid: Grid = KERNEL_GRID, renormalize: bool = True):
    P = build_partition(grid, renormalize=renormalize)
    fits = [fit_kernel_bound(v, P) for v in VARIANTS if v != "g3"]
    fits += [fit_kernel_bound("g3", P, m=m) for m in (0, 1, 2)]
    return fits


def check_kernel_bounds(ctx: SuiteContext) -> PropertyResult:
    fits = kernel_fits(renormalize=ctx.renormalize)
    spread = max(f.spread for f in fits)
    ok = all(f.passed for f in fits)
    detail = " ".join(f"{f.variant}{'/m=' + str(f.m) if f.variant == 'g3' else ''}:{f.spread:.2f}" for f in fits)
    return PropertyResult("kernel bound constants stable across shells", ok, spread, 4.0, detail)


def linear_estimate_constants(grid: Grid, n_samples: int = 20, seed: int = 0,
                              orders=(0, 1, 2)) -> dict[int, list[float]]:
    """sup_t t^{m/2} ||grad^m e^{t Lap} u0||_{B^-1} / ||u0||_{BMO^-1} for
    random divergence-free u0 of mixed spectral shapes."""
    P = build_partition(grid)
    cfg = CarlesonConfig.default(grid)
    times = heat_time_grid(P)
    rng = np.random.default_rng(seed)
    lo, hi = 2.0 ** (P.j_min + 1), grid.dealias_radius / 2
    out: dict[int, list[float]] = {m: [] for m in orders}
    for i in range(n_samples):
        if i % 2:
            u0 = velocity_profile(grid, rng, "broadband", 1.0, P)
        else:
            xi0 = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            u0 = velocity_profile(grid, rng, "peaked", xi0, P)
        norm = bmo_minus1_norm(u0, cfg)
        u0 = u0 * (0.01 / norm)
        norm = 0.01
        for m in orders:
            out[m].append(weighted_heat_sup(u0, P, m, times) / norm)
    return out


def check_linear_estimate(ctx: SuiteContext, n_samples: int = 20) -> PropertyResult:
    consts = linear_estimate_constants(ctx.grid, n_samples, ctx.seed)
    spread = max(max(v) / min(v) for v in consts.values())
    detail = " ".join(f"C_{m}={max(v):.3g}" for m, v in consts.items())
    return PropertyResult("linear heat estimate constants stable", spread <= 4.0, spread, 4.0, detail)


def check_bmo_oracle(ctx: SuiteContext) -> PropertyResult:
    """BMO of A cos(xi x1) against the one-dimensional time integral evaluated
    in closed form times the exact ball quadrature of cos^2 / sin^2."""
    from .function_spaces import ball_integrals

    g = ctx.grid
    x1 = g.coordinates[0]
    k = 3
    xi = 2 * math.pi * k / g.L
    f = SpectralField.from_physical(g, np.cos(xi * x1))
    cfg = CarlesonConfig.default(g)
    best = 0.0
    for r in cfg.radii:
        time_part = (1 - math.exp(-2 * xi * xi * r * r)) / 2
        q = ball_integrals(np.sin(xi * x1) ** 2, g, r) * time_part / r**g.n_dims
        best = max(best, float(q.max()))
    want = math.sqrt(best)
    got = bmo_seminorm(f, cfg)
    err = abs(got - want) / want
    return PropertyResult("BMO seminorm matches single-mode oracle", err < 1e-6, err, 1e-6)


# --- solver ------------------------------------------------------------------

def vorticity_rhs(grid: Grid, w_hat: np.ndarray) -> np.ndarray:
    """-(u.grad) omega for 2-d incompressible flow, from the stream function."""
    mask = grid.dealias_mask
    k1, k2 = grid.diff_wavenumbers
    xi2 = np.where(grid.xi_squared > 0, grid.xi_squared, 1.0)
    w_hat = w_hat * mask
    psi = w_hat / xi2
    psi[0, 0] = 0
    ax = (0, 1)
    u1 = np.fft.ifftn(1j * k2 * psi, axes=ax, norm="forward").real
    u2 = np.fft.ifftn(-1j * k1 * psi, axes=ax, norm="forward").real
    wx = np.fft.ifftn(1j * k1 * w_hat, axes=ax, norm="forward").real
    wy = np.fft.ifftn(1j * k2 * w_hat, axes=ax, norm="forward").real
    return -np.fft.fftn(u1 * wx + u2 * wy, axes=ax, norm="forward") * mask


def vorticity_of(u: SpectralField) -> np.ndarray:
    k1, k2 = u.grid.diff_wavenumbers
    return 1j * k1 * u.coefficients[1] - 1j * k2 * u.coefficients[0]


def velocity_from_vorticity(grid: Grid, w_hat: np.ndarray, mean: np.ndarray) -> np.ndarray:
    k1, k2 = grid.diff_wavenumbers
    xi2 = np.where(grid.xi_squared > 0, grid.xi_squared, 1.0)
    psi = w_hat / xi2
    u = np.stack([1j * k2 * psi, -1j * k1 * psi])
    u[:, 0, 0] = mean
    return u


def ns_vorticity_run(grid: Grid, w_hat: np.ndarray, h: float, n_steps: int) -> np.ndarray:
    """Integrating-factor RK4 for the vorticity equation."""
    E = np.exp(-h * grid.xi_squared)
    E2 = np.exp(-0.5 * h * grid.xi_squared)
    for _ in range(n_steps):
        k1 = vorticity_rhs(grid, w_hat)
        k2 = vorticity_rhs(grid, E2 * (w_hat + 0.5 * h * k1))
        k3 = vorticity_rhs(grid, E2 * w_hat + 0.5 * h * k2)
        k4 = vorticity_rhs(grid, E * w_hat + h * E2 * k3)
        w_hat = E * w_hat + h / 6 * (E * k1 + 2 * E2 * (k2 + k3) + k4)
    return w_hat


def ns_reduction_error(grid: Grid, n_steps: int = 100, h: float = 0.25, seed: int = 0,
                       amplitude: float = 0.5) -> tuple[float, float]:
    """(relative error, max divergence) of the solver against the vorticity
    oracle with a constant director."""
    rng = np.random.default_rng(seed)
    u0 = velocity_profile(grid, rng, "peaked", 8 * grid.fundamental)
    u0 = u0 * (amplitude / np.abs(to_physical(u0)).max())
    d0 = SpectralField.from_physical(grid, np.stack([np.zeros(grid.shape)] * 2 + [np.ones(grid.shape)]))
    cfg = SolverConfig(dt_max=h)
    state = initial_state(u0, d0)
    worst_div = 0.0
    for _ in range(n_steps):
        state = step(state, cfg, h)
        worst_div = max(worst_div, max_divergence(state.u) / np.abs(state.u.coefficients).max())
    w = ns_vorticity_run(grid, vorticity_of(u0), h, n_steps)
    u_ref = velocity_from_vorticity(grid, w, u0.coefficients[:, 0, 0])
    err = float(np.abs(state.u.coefficients - u_ref).max() / np.abs(u_ref).max())
    return err, worst_div


def check_ns_reduction(ctx: SuiteContext) -> PropertyResult:
    err, _ = ns_reduction_error(ctx.grid)
    return PropertyResult("constant director reduces to Navier-Stokes", err <= 1e-8, err, 1e-8)


def check_projection(ctx: SuiteContext) -> PropertyResult:
    f = leray_project(ctx.random_field(ctx.grid.n_dims))
    div = max_divergence(f) / np.abs(f.coefficients).max()
    again = float(np.abs(leray_project(f).coefficients - f.coefficients).max())
    val = max(div, again)
    return PropertyResult("Leray projection divergence-free and idempotent", val < 1e-12, val, 1e-12)


def convergence_order(grid: Grid, T: float = 4.0, seed: int = 3, epsilon: float = 0.5):
    """Observed order from errors at dt = 1, 1/2, 1/4 against dt = 1/32."""
    data = make_initial_data(grid, epsilon, seed=seed, spectrum="peaked")
    s0 = initial_state(data.u0, data.d0)
    cfg = SolverConfig(renormalize_director=False)
    ref = advance_to(s0, cfg, T, fixed_dt=1 / 32)
    errs = []
    for h in (1.0, 0.5, 0.25):
        r = advance_to(s0, cfg, T, fixed_dt=h)
        errs.append(
            float(np.abs(r.u.coefficients - ref.u.coefficients).max()
                  + np.abs(r.d.coefficients - ref.d.coefficients).max())
        )
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    return orders, errs


def check_convergence(ctx: SuiteContext) -> PropertyResult:
    orders, errs = convergence_order(ctx.grid)
    return PropertyResult("IF-RK4 self-convergence order", min(orders) >= 3.5, min(orders), 3.5,
                          "errors=" + ",".join(f"{e:.2e}" for e in errs))


Check = Callable[[SuiteContext], PropertyResult]

PROPERTIES: list[tuple[str, Check, bool]] = [
    ("roundtrip", check_roundtrip, False),
    ("derivative", check_derivative_composition, False),
    ("stress", check_stress_gram, False),
    ("partition", check_partition_of_unity, False),
    ("disjoint", check_support_disjointness, False),
    ("bernstein", check_bernstein, False),
    ("heat_rate", check_block_heat_rate, False),
    ("semigroup", check_semigroup, False),
    ("max_principle", check_maximum_principle, False),
    ("bmo_oracle", check_bmo_oracle, False),
    ("projection", check_projection, False),
    ("ns_reduction", check_ns_reduction, False),
    ("convergence", check_convergence, False),
    ("linear_estimate", check_linear_estimate, True),
    ("kernel_bounds", check_kernel_bounds, True),
]


def run_suite(
    grid: Grid | None = None,
    renormalize: bool = True,
    include_slow: bool = True,
    only: list[str] | None = None,
    seed: int = 0,
) -> list[PropertyResult]:
    ctx = SuiteContext(grid or Grid(), renormalize, seed)
    out = []
    for key, fn, slow in PROPERTIES:
        if only is not None and key not in only:
            continue
        if slow and not include_slow:
            continue
        start = time.perf_counter()
        res = fn(ctx)
        res.seconds = time.perf_counter() - start
        out.append(res)
    return out
