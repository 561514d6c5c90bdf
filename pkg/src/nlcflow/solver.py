"""Pseudo-spectral solver for the simplified Ericksen-Leslie system

    u_t - Lap u + (u.grad)u + grad P = -div(grad d (.) grad d),   div u = 0,
    d_t + (u.grad)d = Lap d + |grad d|^2 d,                       |d| = 1,

with unit coefficients.  The pressure is removed by the Leray projection and
the diffusion is integrated exactly (integrating factor), so only the
nonlinear terms

    N_u = -P div(u (x) u + grad d (.) grad d),    N_d = |grad d|^2 d - (u.grad) d

are time-stepped.  Products are formed in physical space with 2/3-rule
dealiasing of inputs and outputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .grid import FieldError, Grid, SpectralField, laplacian, gradient
from .littlewood_paley import INF, BesovIndex, DyadicPartition, besov_norm, all_blocks
from .heat import heat_semigroup

log = logging.getLogger(__name__)

SCHEMES = ("IF-RK4", "IF-Euler")


class SolverHalt(RuntimeError):
    """Non-finite values appeared; ``state`` is the last finite state."""

    def __init__(self, message: str, state: "SolverState"):
        super().__init__(message)
        self.state = state


class PicardDivergence(RuntimeError):
    def __init__(self, message: str, distances: list[float]):
        super().__init__(message)
        self.distances = distances


@dataclass(frozen=True)
class SolverConfig:
    dt_max: float = 0.25
    cfl_safety: float = 0.5
    renormalize_director: bool = True
    dealias: bool = True
    scheme: str = "IF-RK4"
    epsilon_target: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if not self.epsilon_target > 0:
            raise ValueError("epsilon_target must be positive")
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")


@dataclass(frozen=True)
class Diagnostics:
    max_divergence: float
    sphere_error: float
    dt_used: float


@dataclass(frozen=True)
class SolverState:
    t: float
    u: SpectralField
    d: SpectralField
    step_count: int = 0
    diagnostics: Diagnostics | None = None

    @property
    def grid(self) -> Grid:
        return self.u.grid


# --- array-level kernels ---------------------------------------------------

def _ifft(grid: Grid, c: np.ndarray) -> np.ndarray:
    axes = tuple(range(c.ndim - grid.n_dims, c.ndim))
    return np.fft.ifftn(c, axes=axes, norm="forward").real


def _fft(grid: Grid, v: np.ndarray) -> np.ndarray:
    axes = tuple(range(v.ndim - grid.n_dims, v.ndim))
    return np.fft.fftn(v, axes=axes, norm="forward")


def _project(grid: Grid, c: np.ndarray) -> np.ndarray:
    xi = [np.broadcast_to(w, grid.shape) for w in grid.wavenumbers]
    k2 = np.where(grid.xi_squared > 0, grid.xi_squared, 1.0)
    dot = sum(xi[i] * c[i] for i in range(grid.n_dims)) / k2
    return np.stack([c[i] - xi[i] * dot for i in range(grid.n_dims)])


class _Kernels:
    """Reusable wavenumber arrays for one grid."""

    def __init__(self, grid: Grid, dealias: bool):
        self.grid = grid
        self.n = grid.n_dims
        self.mask = grid.dealias_mask if dealias else np.ones(grid.shape, dtype=bool)
        self.ik = [1j * w for w in grid.diff_wavenumbers]

    def physical_parts(self, uc, dc):
        g, n = self.grid, self.n
        um = uc * self.mask
        dm = dc * self.mask
        U = _ifft(g, um)
        D = _ifft(g, dm)
        gD = _ifft(g, np.stack([dm * self.ik[i] for i in range(n)], axis=1))
        return U, D, gD

    def momentum(self, uc, dc, parts=None):
        g, n = self.grid, self.n
        U, _, gD = self.physical_parts(uc, dc) if parts is None else parts
        T = np.einsum("i...,j...->ij...", U, U) + np.einsum("ai...,aj...->ij...", gD, gD)
        Tc = _fft(g, T) * self.mask
        div = np.stack([sum(self.ik[i] * Tc[i, j] for i in range(n)) for j in range(n)])
        return -_project(g, div)

    def director(self, uc, dc, parts=None):
        g = self.grid
        U, D, gD = self.physical_parts(uc, dc) if parts is None else parts
        energy = np.sum(gD**2, axis=(0, 1))
        adv = np.einsum("i...,ai...->a...", U, gD)
        return _fft(g, energy * D - adv) * self.mask

    def both(self, uc, dc):
        parts = self.physical_parts(uc, dc)
        return self.momentum(uc, dc, parts), self.director(uc, dc, parts)


_KERNEL_CACHE: dict[tuple[Grid, bool], _Kernels] = {}


def _kernels(grid: Grid, dealias: bool = True) -> _Kernels:
    key = (grid, dealias)
    if key not in _KERNEL_CACHE:
        _KERNEL_CACHE[key] = _Kernels(grid, dealias)
    return _KERNEL_CACHE[key]


# --- public operators --------------------------------------------------------

def leray_project(f: SpectralField) -> SpectralField:
    """Apply delta_jk - xi_j xi_k / |xi|^2 mode by mode; the mean passes through."""
    if f.n_components != f.grid.n_dims:
        raise FieldError("projection needs an n-component field")
    return f.with_coefficients(_project(f.grid, f.coefficients))


def momentum_rhs(u: SpectralField, d: SpectralField, dealias: bool = True) -> SpectralField:
    """-P div(u (x) u + grad d (.) grad d)."""
    K = _kernels(u.grid, dealias)
    return u.with_coefficients(K.momentum(u.coefficients, d.coefficients))


def director_rhs(u: SpectralField, d: SpectralField, dealias: bool = True) -> SpectralField:
    """|grad d|^2 d - (u.grad) d."""
    K = _kernels(u.grid, dealias)
    return d.with_coefficients(K.director(u.coefficients, d.coefficients))


def max_divergence(u: SpectralField) -> float:
    g = u.grid
    div = sum(g.wavenumbers[i] * u.coefficients[i] for i in range(g.n_dims))
    return float(np.abs(div).max())


def sphere_error(d: SpectralField) -> float:
    D = _ifft(d.grid, d.coefficients)
    return float(np.abs(np.sum(D**2, axis=0) - 1.0).max())


def renormalize(d: SpectralField) -> SpectralField:
    D = _ifft(d.grid, d.coefficients)
    D = D / np.sqrt(np.sum(D**2, axis=0))
    return d.with_coefficients(_fft(d.grid, D))


def stable_dt(state: SolverState, cfg: SolverConfig) -> float:
    g = state.grid
    U = _ifft(g, state.u.coefficients)
    gD = _ifft(g, gradient(state.d).coefficients)
    speed = max(
        1.0,
        float(np.sqrt(np.sum(U**2, axis=0)).max()),
        float(np.sqrt(np.sum(gD**2, axis=0)).max()),
    )
    return min(cfg.dt_max, cfg.cfl_safety * g.spacing / speed)


def _diagnose(u: SpectralField, d: SpectralField, dt: float) -> Diagnostics:
    return Diagnostics(max_divergence(u), sphere_error(d), dt)


def step(state: SolverState, cfg: SolverConfig, dt: float | None = None) -> SolverState:
    """Advance one integrating-factor step (length ``dt`` or the CFL rule)."""
    g = state.grid
    h = stable_dt(state, cfg) if dt is None else dt
    K = _kernels(g, cfg.dealias)
    E = np.exp(-h * g.xi_squared)
    uc, dc = state.u.coefficients, state.d.coefficients
    if cfg.scheme == "IF-Euler":
        nu, nd = K.both(uc, dc)
        u_new = E * (uc + h * nu)
        d_new = E * (dc + h * nd)
    else:
        E2 = np.exp(-0.5 * h * g.xi_squared)
        k1u, k1d = K.both(uc, dc)
        k2u, k2d = K.both(E2 * (uc + 0.5 * h * k1u), E2 * (dc + 0.5 * h * k1d))
        k3u, k3d = K.both(E2 * uc + 0.5 * h * k2u, E2 * dc + 0.5 * h * k2d)
        k4u, k4d = K.both(E * uc + h * E2 * k3u, E * dc + h * E2 * k3d)
        u_new = E * uc + h / 6 * (E * k1u + 2 * E2 * (k2u + k3u) + k4u)
        d_new = E * dc + h / 6 * (E * k1d + 2 * E2 * (k2d + k3d) + k4d)
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(d_new))):
        raise SolverHalt(f"non-finite values at t={state.t + h:g}", state)
    u = state.u.with_coefficients(u_new)
    d = state.d.with_coefficients(d_new)
    if cfg.renormalize_director:
        d = renormalize(d)
    return SolverState(state.t + h, u, d, state.step_count + 1, _diagnose(u, d, h))


def initial_state(u0: SpectralField, d0: SpectralField) -> SolverState:
    return SolverState(0.0, u0, d0, 0, _diagnose(u0, d0, 0.0))


def advance_to(
    state: SolverState,
    cfg: SolverConfig,
    t_end: float,
    fixed_dt: float | None = None,
    callback: Callable[[SolverState], None] | None = None,
) -> SolverState:
    """Step until ``t_end``, shortening the last step to land on it exactly."""
    while state.t < t_end - 1e-12 * max(1.0, t_end):
        h = stable_dt(state, cfg) if fixed_dt is None else fixed_dt
        h = min(h, t_end - state.t)
        state = step(state, cfg, h)
        if callback is not None:
            callback(state)
    return state


def evolve(
    state: SolverState, cfg: SolverConfig, times, fixed_dt: float | None = None
) -> list[SolverState]:
    """States at each requested time (sorted, >= state.t)."""
    out = []
    for t in sorted(times):
        state = advance_to(state, cfg, t, fixed_dt)
        out.append(state)
    return out


# --- Picard iteration --------------------------------------------------------

@dataclass
class PicardResult:
    distances: list[float]
    times: np.ndarray
    u: np.ndarray = field(repr=False)
    d: np.ndarray = field(repr=False)
    grid: Grid | None = None

    @property
    def ratios(self) -> list[float]:
        return [
            b / a for a, b in zip(self.distances, self.distances[1:]) if a > 0
        ]

    def series(self) -> list[tuple[float, SpectralField, SpectralField]]:
        return [
            (float(t), SpectralField(self.grid, u), SpectralField(self.grid, d))
            for t, u, d in zip(self.times, self.u, self.d)
        ]


def _duhamel(grid: Grid, times: np.ndarray, N: np.ndarray) -> np.ndarray:
    """int_0^t e^{(t-s) Lap} N(s) ds at each slice (exponential trapezoid)."""
    out = np.zeros_like(N)
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        E = np.exp(-h * grid.xi_squared)
        out[i + 1] = E * out[i] + 0.5 * h * (E * N[i] + N[i + 1])
    return out


def picard_solve(
    u0: SpectralField,
    d0: SpectralField,
    T: float,
    n_iters: int,
    cfg: SolverConfig | None = None,
    n_slices: int = 64,
    partition: DyadicPartition | None = None,
) -> PicardResult:
    """Fixed-point iteration of the mild formulation on ``n_slices + 1``
    uniform time slices, starting from the zero iterate.

    Distances between successive iterates are
    sup_t ||du||_{B^-1_inf,inf} + ||dd||_{B^0_inf,inf}.
    """
    from .littlewood_paley import build_partition

    cfg = cfg or SolverConfig()
    grid = u0.grid
    P = partition or build_partition(grid)
    K = _kernels(grid, cfg.dealias)
    times = np.linspace(0.0, T, n_slices + 1)
    free_u = np.stack([heat_semigroup(u0, t).coefficients for t in times])
    free_d = np.stack([heat_semigroup(d0, t).coefficients for t in times])
    u = np.zeros_like(free_u)
    d = np.zeros_like(free_d)
    idx_u, idx_d = BesovIndex(-1.0, INF, INF), BesovIndex(0.0, INF, INF)
    distances: list[float] = []
    for it in range(n_iters):
        Nu = np.empty_like(u)
        Nd = np.empty_like(d)
        for i in range(len(times)):
            Nu[i], Nd[i] = K.both(u[i], d[i])
        u_next = free_u + _duhamel(grid, times, Nu)
        d_next = free_d + _duhamel(grid, times, Nd)
        dist = 0.0
        for i in range(len(times)):
            du = SpectralField(grid, u_next[i] - u[i])
            dd = SpectralField(grid, d_next[i] - d[i])
            dist = max(dist, besov_norm(du, P, idx_u) + besov_norm(dd, P, idx_d))
        distances.append(dist)
        u, d = u_next, d_next
        log.debug("picard iterate %d distance %.3e", it + 1, dist)
        if len(distances) >= 4 and all(
            distances[-k] > distances[-k - 1] for k in (1, 2, 3)
        ):
            raise PicardDivergence("iterate distances grew three times in a row", distances)
    return PicardResult(distances, times, u, d, grid)


# --- time derivatives from the equations ------------------------------------

def _nonlinear_dt(K: _Kernels, uc, dc, ut, dt_):
    """Time derivatives of (N_u, N_d) by the product rule."""
    g, n = K.grid, K.n
    U = _ifft(g, uc * K.mask)
    D = _ifft(g, dc * K.mask)
    gD = _ifft(g, np.stack([dc * K.mask * K.ik[i] for i in range(n)], axis=1))
    Ut = _ifft(g, ut * K.mask)
    Dt = _ifft(g, dt_ * K.mask)
    gDt = _ifft(g, np.stack([dt_ * K.mask * K.ik[i] for i in range(n)], axis=1))
    T = (
        np.einsum("i...,j...->ij...", Ut, U)
        + np.einsum("i...,j...->ij...", U, Ut)
        + np.einsum("ai...,aj...->ij...", gDt, gD)
        + np.einsum("ai...,aj...->ij...", gD, gDt)
    )
    Tc = _fft(g, T) * K.mask
    div = np.stack([sum(K.ik[i] * Tc[i, j] for i in range(n)) for j in range(n)])
    Nu_t = -_project(g, div)
    energy = np.sum(gD**2, axis=(0, 1))
    energy_t = 2 * np.sum(gD * gDt, axis=(0, 1))
    adv_t = np.einsum("i...,ai...->a...", Ut, gD) + np.einsum("i...,ai...->a...", U, gDt)
    Nd_t = _fft(g, energy_t * D + energy * Dt - adv_t) * K.mask
    return Nu_t, Nd_t


def time_derivatives(state: SolverState, k: int, dealias: bool = True):
    """(d_t^k u, d_t^k d) from the equations alone, k in {1, 2}.

    Uses d_t^k Psi = Lap^k Psi + sum_{i<k} Lap^{k-1-i} d_t^i F with F the
    nonlinearity of the respective equation.
    """
    if k not in (1, 2):
        raise ValueError("only k = 1 and k = 2 are supported")
    g = state.grid
    K = _kernels(g, dealias)
    lap = -g.xi_squared
    uc, dc = state.u.coefficients, state.d.coefficients
    Fu, Fd = K.both(uc, dc)
    ut = lap * uc + Fu
    dt_ = lap * dc + Fd
    if k == 1:
        return state.u.with_coefficients(ut), state.d.with_coefficients(dt_)
    Fu_t, Fd_t = _nonlinear_dt(K, uc, dc, ut, dt_)
    utt = lap * lap * uc + lap * Fu + Fu_t
    dtt = lap * lap * dc + lap * Fd + Fd_t
    return state.u.with_coefficients(utt), state.d.with_coefficients(dtt)


def time_derivative(state: SolverState, k: int, m: int, field: str = "u") -> SpectralField:
    """d_t^k grad^m of ``u`` or of ``grad_d`` (k = 0 allowed)."""
    from .grid import derivative_tensor

    if k > 2:
        raise ValueError("time derivatives beyond k = 2 are not supported")
    if field not in ("u", "grad_d"):
        raise ValueError("field must be 'u' or 'grad_d'")
    if k == 0:
        u, d = state.u, state.d
    else:
        u, d = time_derivatives(state, k)
    target = u if field == "u" else gradient(d)
    return derivative_tensor(target, m)


# --- initial data ------------------------------------------------------------

def _noise(grid: Grid, n_components: int, rng: np.random.Generator) -> SpectralField:
    return SpectralField.from_physical(
        grid, rng.standard_normal((n_components, *grid.shape))
    )


def _flatten_shells(f: SpectralField, P: DyadicPartition, s: float) -> SpectralField:
    """Reweight dyadic blocks so that 2^{js} ||Delta_j f||_inf is the same for
    every shell."""
    norms = np.sqrt(np.sum(all_blocks(f, P) ** 2, axis=1)).reshape(P.n_shells, -1).max(axis=1)
    weights = np.zeros(f.grid.shape)
    for j, a in zip(P.indices, norms):
        if a > 0:
            weights += P.cutoff(j) * 2.0 ** (-j * s) / a
    return f.with_coefficients(f.coefficients * weights)


def velocity_profile(
    grid: Grid, rng: np.random.Generator, spectrum: str, xi0: float,
    P: DyadicPartition | None = None,
) -> SpectralField:
    """Random divergence-free, mean-free, dealiased velocity of unit scale."""
    noise = _noise(grid, grid.n_dims, rng)
    mask = grid.dealias_mask & (grid.xi_squared > 0)
    if spectrum == "peaked":
        amp = grid.xi_squared * np.exp(-grid.xi_squared / (2 * xi0**2))
        u = noise.with_coefficients(noise.coefficients * amp * mask)
    elif spectrum == "broadband":
        from .littlewood_paley import build_partition

        P = P or build_partition(grid)
        u = _flatten_shells(noise.with_coefficients(noise.coefficients * mask), P, -1.0)
    else:
        raise ValueError(f"unknown spectrum {spectrum!r}")
    return leray_project(u)


def director_perturbation(
    grid: Grid, rng: np.random.Generator, spectrum: str, xi0: float,
    P: DyadicPartition | None = None,
) -> SpectralField:
    noise = _noise(grid, 3, rng)
    mask = grid.dealias_mask & (grid.xi_squared > 0)
    if spectrum == "peaked":
        amp = np.sqrt(grid.xi_squared) * np.exp(-grid.xi_squared / (2 * xi0**2))
        return noise.with_coefficients(noise.coefficients * amp * mask)
    if spectrum == "broadband":
        from .littlewood_paley import build_partition

        P = P or build_partition(grid)
        return _flatten_shells(noise.with_coefficients(noise.coefficients * mask), P, 0.0)
    raise ValueError(f"unknown spectrum {spectrum!r}")


def director_from_perturbation(w: SpectralField, delta: float) -> SpectralField:
    W = _ifft(w.grid, w.coefficients)
    D = delta * W
    D[2] += 1.0
    D /= np.sqrt(np.sum(D**2, axis=0))
    return SpectralField.from_physical(w.grid, D)


@dataclass(frozen=True)
class InitialData:
    u0: SpectralField
    d0: SpectralField
    u_norm: float
    d_norm: float
    delta: float
    perturbation: SpectralField | None = None

    @property
    def epsilon(self) -> float:
        return self.u_norm + self.d_norm

    def scaled(self, factor: float) -> "InitialData":
        """Velocity times ``factor`` and director amplitude delta times ``factor``.

        The stored norms are scaled linearly, not re-measured.
        """
        if self.perturbation is None:
            raise ValueError("initial data carries no director perturbation")
        return InitialData(
            self.u0 * factor,
            director_from_perturbation(self.perturbation, factor * self.delta),
            factor * self.u_norm,
            factor * self.d_norm,
            factor * self.delta,
            self.perturbation,
        )


def make_initial_data(
    grid: Grid,
    epsilon: float,
    seed: int = 0,
    spectrum: str = "peaked",
    xi0: float | None = None,
    carleson=None,
    u_share: float = 0.5,
) -> InitialData:
    """Random small data with ||u0||_{BMO^-1} + [d0]_BMO = epsilon.

    ``u_share`` of epsilon goes to the velocity, the rest to the director.
    The velocity is scaled linearly; the director amplitude is found by root
    finding because of the pointwise normalisation onto the sphere.
    """
    from scipy.optimize import brentq

    from .function_spaces import CarlesonConfig, bmo_minus1_norm, bmo_seminorm

    cfg = carleson or CarlesonConfig.default(grid)
    xi0 = 4 * grid.fundamental if xi0 is None else xi0
    rng = np.random.default_rng(seed)
    u_shape = velocity_profile(grid, rng, spectrum, xi0)
    w = director_perturbation(grid, rng, spectrum, xi0)
    u_target = u_share * epsilon
    d_target = epsilon - u_target
    u0 = u_shape * (u_target / bmo_minus1_norm(u_shape, cfg)) if u_target > 0 else u_shape * 0.0
    if d_target > 0:
        def excess(delta):
            return bmo_seminorm(director_from_perturbation(w, delta), cfg) - d_target

        guess = d_target / bmo_seminorm(w, cfg)
        hi = 2 * guess
        for _ in range(40):
            if excess(hi) >= 0:
                break
            hi *= 2
        else:
            raise ValueError(
                f"director BMO target {d_target:g} is out of reach for unit-length fields"
            )
        delta = brentq(excess, 0.0, hi, xtol=1e-14 * hi, rtol=1e-12)
    else:
        delta = 0.0
    d0 = director_from_perturbation(w, delta)
    return InitialData(
        u0, d0, bmo_minus1_norm(u0, cfg), bmo_seminorm(d0, cfg), delta, w
    )
