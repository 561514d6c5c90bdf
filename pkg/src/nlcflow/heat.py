"""Heat semigroup, the frequency-localised heat kernels and empirical fits of
their decay bounds.

Kernels are whole-space objects

    g(x, t) = integral e^{i x.xi} phi(2^{-q} xi) e^{-t|xi|^2} m(xi) dxi

approximated by Riemann sums over the box lattice (cell ``(2 pi / L)^n``), which
is spectrally accurate once the kernel has decayed well inside the box.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import FieldError, Grid, SpectralField, derivative_tensor
from .littlewood_paley import (
    INF,
    DyadicPartition,
    BesovIndex,
    all_blocks,
    besov_norm,
    phi,
    phi_tilde,
)

VARIANTS = ("g", "g1", "g2", "g3")
# upper support edge of the cutoff used by each variant
_OUTER = {"g": 8 / 3, "g1": 8 / 3, "g2": 8 / 3, "g3": 10 / 3}


def heat_semigroup(f: SpectralField, t: float) -> SpectralField:
    """e^{t Laplacian} f."""
    if t < 0:
        raise ValueError(f"heat time must be >= 0, got {t}")
    if t == 0:
        return f
    return f.with_coefficients(f.coefficients * np.exp(-t * f.grid.xi_squared))


@dataclass(frozen=True)
class KernelSpec:
    """One kernel family member.

    ``indices`` are the tensor indices (i, j, k) for ``g`` and (i, j) for
    ``g1``; ``gamma`` is the multi-index of the ``g3`` weight (|gamma| = m).
    """

    variant: str
    q: int
    t: float
    m: int = 0
    indices: tuple[int, ...] = ()
    gamma: tuple[int, ...] = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if not self.t > 0:
            raise ValueError("kernel time must be positive")
        need = {"g": 3, "g1": 2}.get(self.variant, 0)
        if len(self.indices) != need:
            raise ValueError(f"variant {self.variant} needs {need} tensor indices")
        if self.variant == "g3" and sum(self.gamma) != self.m:
            raise ValueError("|gamma| must equal m for g3")


def kernel_symbol(spec: KernelSpec, grid: Grid) -> np.ndarray:
    xi = [np.broadcast_to(w, grid.shape) for w in grid.wavenumbers]
    r = grid.xi_norm
    scaled = r / 2.0**spec.q
    heat = np.exp(-spec.t * grid.xi_squared)
    if spec.variant == "g3":
        sym = phi_tilde(scaled) * heat * spec.t ** (spec.m / 2)
        for ax, power in enumerate(spec.gamma):
            if power:
                sym = sym * xi[ax] ** power
        return sym.astype(complex)
    sym = phi(scaled) * heat
    if spec.variant == "g2":
        return sym.astype(complex)
    i, j = spec.indices[:2]
    r2 = np.where(grid.xi_squared > 0, grid.xi_squared, 1.0)
    proj = float(i == j) - xi[i] * xi[j] / r2
    sym = sym * proj
    if spec.variant == "g":
        return sym * xi[spec.indices[2]] + 0j
    return sym.astype(complex)


def kernel_samples(spec: KernelSpec, P: DyadicPartition) -> np.ndarray:
    """Kernel values on the grid points (origin at index 0), complex."""
    if not P.j_min <= spec.q <= P.j_max:
        raise FieldError(f"shell {spec.q} outside partition range")
    grid = P.grid
    sym = kernel_symbol(spec, grid)
    support = phi_tilde if spec.variant == "g3" else phi
    if not np.any(support(grid.xi_norm / 2.0**spec.q) > 0):
        raise FieldError(f"shell {spec.q} holds no lattice frequency")
    return np.fft.ifftn(sym, norm="forward") * grid.fundamental**grid.n_dims


def min_image_radius(grid: Grid) -> np.ndarray:
    """|x| of each grid point measured to the origin on the torus."""
    sq = 0.0
    for x in grid.coordinates:
        d = np.minimum(x, grid.L - x)
        sq = sq + d**2
    return np.sqrt(sq)


def resolvable_shells(grid: Grid, variant: str = "g3") -> list[int]:
    """Shells whose kernels are neither clipped by the lattice nor by the box."""
    out = []
    for q in range(-40, 40):
        if _OUTER[variant] * 2.0**q > grid.nyquist:
            continue
        if BOX_WIDTHS_MIN * 2.0**-q > grid.L / 2:
            continue
        if RING_POINTS_MIN * grid.fundamental > (3 / 8) * 2.0**q:
            continue
        out.append(q)
    return out


RING_POINTS_MIN = 1
# the cutoff's Gevrey-class tail needs room before the polynomial envelope wins
BOX_WIDTHS_MIN = 16


def _index_sets(variant: str, n: int, m: int):
    if variant == "g":
        return [dict(indices=ijk) for ijk in itertools.product(range(n), repeat=3)]
    if variant == "g1":
        return [dict(indices=ij) for ij in itertools.product(range(n), repeat=2)]
    if variant == "g3":
        gammas = [g for g in itertools.product(range(m + 1), repeat=n) if sum(g) == m]
        return [dict(gamma=g) for g in gammas]
    return [{}]


def spatial_exponent(variant: str, n: int) -> int:
    return n + 1 if variant == "g" else n


@dataclass
class KernelBoundFit:
    variant: str
    m: int
    shells: list[int]
    C: list[float]
    c: list[float]
    rate: list[float] = field(default_factory=list)
    stable_within: float = 4.0
    notes: list[str] = field(default_factory=list)

    @property
    def spread(self) -> float:
        good = [v for v in self.C if np.isfinite(v) and v > 0]
        if len(good) < 2:
            return INF
        return max(good) / min(good)

    @property
    def passed(self) -> bool:
        return not self.notes and self.spread <= self.stable_within


def fit_kernel_bound(
    variant: str,
    P: DyadicPartition,
    m: int = 0,
    shells: list[int] | None = None,
    n_times: int = 17,
) -> KernelBoundFit:
    """Fit (C, c) in |g(x,t)| <= C 2^{q e}/(1+|2^q x|^{2n}) e^{-c t 4^q} per shell.

    Sampling uses t in 4^{-q} [2^-4, 2^4].  ``rate`` is the least-squares
    slope of log max_x |g| against t 4^q.  ``c`` is the one-sided version of
    that regression: the largest rate whose exponential, anchored at the
    peak sample, stays above every later sample.  Least squares over-fits the
    early plateau and would blow C up at late times.  ``C`` is then the
    smallest constant making the bound hold at every sampled (x, t).  For
    tensor-valued kernels the bound is applied to the largest entry.
    """
    grid = P.grid
    n = grid.n_dims
    shells = resolvable_shells(grid, variant) if shells is None else shells
    shells = [q for q in shells if P.j_min <= q <= P.j_max]
    radius = min_image_radius(grid)
    e = spatial_exponent(variant, n)
    fit = KernelBoundFit(variant, m, shells, [], [])
    if len(shells) < 2:
        fit.notes.append("fewer than two resolvable shells")
    for q in shells:
        taus = 2.0 ** np.linspace(-4, 4, n_times)
        mags = []
        for tau in taus:
            t = tau / 4.0**q
            worst = None
            for extra in _index_sets(variant, n, m):
                spec = KernelSpec(variant, q, t, m=m if variant == "g3" else 0, **extra)
                a = np.abs(kernel_samples(spec, P))
                worst = a if worst is None else np.maximum(worst, a)
            mags.append(worst)
        mags = np.array(mags)
        peak = mags.reshape(len(taus), -1).max(axis=1)
        if np.any(peak <= 0):
            fit.notes.append(f"shell {q}: kernel vanishes identically")
            fit.C.append(float("nan"))
            fit.c.append(float("nan"))
            fit.rate.append(float("nan"))
            continue
        logs = np.log(peak)
        fit.rate.append(float(-np.polyfit(taus, logs, 1)[0]))
        i0 = int(np.argmax(logs))
        if i0 < len(taus) - 1:
            secants = (logs[i0] - logs[i0 + 1 :]) / (taus[i0 + 1 :] - taus[i0])
            c = max(float(secants.min()), 0.0)
        else:
            c = 0.0
        envelope = 2.0 ** (q * e) / (1.0 + (2.0**q * radius) ** (2 * n))
        ratio = mags * np.exp(c * taus)[:, None, None] / envelope
        fit.C.append(float(ratio.max()))
        fit.c.append(float(c))
    return fit


def verify_kernel_bound(spec: KernelSpec, P: DyadicPartition):
    """(fitted C, fitted c, pass) for the variant of ``spec`` over all
    resolvable shells; C and c are reported for ``spec.q`` when it is one of
    them, else for the first resolvable shell."""
    fit = fit_kernel_bound(spec.variant, P, m=spec.m)
    if not fit.shells:
        return float("nan"), float("nan"), False
    k = fit.shells.index(spec.q) if spec.q in fit.shells else 0
    return fit.C[k], fit.c[k], fit.passed


def block_heat_decay(
    f: SpectralField, P: DyadicPartition, j: int, taus=None
) -> tuple[float, float]:
    """Fit ||Delta_j e^{t Lap} f||_inf <= C e^{-c t 4^j} ||Delta_j f||_inf.

    Returns (C, c) with c from log-linear regression over t = tau 4^{-j}.
    """
    taus = 2.0 ** np.linspace(-2, 4, 13) if taus is None else np.asarray(taus)
    base = all_blocks(f, P)[j - P.j_min]
    a0 = np.sqrt((base**2).sum(axis=0)).max()
    if a0 == 0:
        raise ValueError(f"block {j} of f is zero")
    ratios = []
    for tau in taus:
        g = heat_semigroup(f, tau / 4.0**j)
        b = all_blocks(g, P)[j - P.j_min]
        ratios.append(np.sqrt((b**2).sum(axis=0)).max() / a0)
    ratios = np.array(ratios)
    slope = np.polyfit(taus, np.log(ratios), 1)[0]
    c = -slope
    C = float(np.max(ratios * np.exp(c * taus)))
    return max(C, 1.0), float(c)


def weighted_heat_sup(
    f: SpectralField, P: DyadicPartition, m: int, times
) -> float:
    """sup_t of the Besov(-1, inf, inf) norm of t^{m/2} grad^m e^{t Lap} f."""
    idx = BesovIndex(-1.0, INF, INF)
    best = 0.0
    for t in times:
        g = derivative_tensor(heat_semigroup(f, t), m)
        best = max(best, t ** (m / 2) * besov_norm(g, P, idx))
    return best


def heat_time_grid(P: DyadicPartition, per_octave: int = 2) -> np.ndarray:
    """Log-spaced heat times spanning every shell's diffusive time 4^{-j}."""
    lo = 4.0 ** (-P.j_max) / 16
    hi = 4.0 ** (-P.j_min) * 16
    count = int(math.ceil(math.log2(hi / lo) * per_octave)) + 1
    return np.geomspace(lo, hi, count)
