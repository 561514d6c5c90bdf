"""Carleson-cylinder norms: BMO, BMO^{-1} and the Koch-Tataru X / Z norms.

Every norm is a supremum over parabolic cylinders ``B(x, r) x (0, r^2)``.  The
continuum supremum is sampled on dyadic radii ``L/2, L/4, ...`` down to two
grid cells and a strided set of centres.  Radii above L/2 have no meaning on
the torus and are not sampled.  Ball integrals count the grid cells whose
centres fall inside the (periodic) ball and are evaluated for all centres at
once by FFT convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import Grid, SpectralField, gradient, to_physical
from .heat import heat_semigroup

Series = Sequence[tuple[float, SpectralField]]


@dataclass(frozen=True)
class CarlesonConfig:
    radii: tuple[float, ...]
    center_stride: int = 1
    time_quadrature: int = 32

    def validate(self, grid: Grid) -> None:
        if not self.radii:
            raise ValueError("CarlesonConfig needs at least one radius")
        for r in self.radii:
            k = math.log2(grid.L / r)
            if abs(k - round(k)) > 1e-9 or round(k) < 1:
                raise ValueError(f"radius {r} is not of the form L/2^k, k >= 1")
            if r < 2 * grid.spacing * (1 - 1e-12):
                raise ValueError(f"radius {r} below twice the grid spacing")
        if self.center_stride < 1 or grid.N % self.center_stride:
            raise ValueError("center_stride must divide N")
        if self.time_quadrature < 4:
            raise ValueError("time_quadrature must be >= 4")

    @classmethod
    def default(
        cls, grid: Grid, r_min: float | None = None, center_stride: int = 1,
        time_quadrature: int = 32,
    ) -> CarlesonConfig:
        r_min = 2 * grid.spacing if r_min is None else r_min
        radii = []
        r = grid.L / 2
        while r >= r_min * (1 - 1e-12):
            radii.append(r)
            r /= 2
        return cls(tuple(radii), center_stride, time_quadrature)


def ball_indicator(grid: Grid, r: float) -> np.ndarray:
    """Cells whose centres lie within periodic distance < r of the origin.

    Membership is decided on integer offsets so that cells exactly on the
    sphere (common, since r / dx is an integer) are excluded consistently.
    """
    sq = 0
    for k in grid.integer_modes:
        sq = sq + np.broadcast_to(k * k, grid.shape)
    rad = r / grid.spacing
    return (sq < rad * rad * (1 - 1e-12)).astype(float)


def ball_integrals(density: np.ndarray, grid: Grid, r: float) -> np.ndarray:
    """int_{|y-x|<r} density(y) dy for every grid point x."""
    kernel = np.fft.rfftn(ball_indicator(grid, r))
    axes = tuple(range(grid.n_dims))
    conv = np.fft.irfftn(np.fft.rfftn(density) * kernel, s=grid.shape, axes=axes)
    return conv * grid.cell_volume


def heat_time_nodes(grid: Grid, r: float, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for int_0^{r^2} h(t) dt.

    One trapezoid panel on [0, t_lo] and Gauss-Legendre in log t on
    [t_lo, r^2]; t_lo sits far below the diffusive time of the highest
    lattice frequency so the first panel is essentially exact.
    """
    top = r * r
    xi2_max = float(grid.xi_squared.max())
    t_lo = min(top, 1e-3 / xi2_max)
    a, b = math.log(t_lo), math.log(top)
    x, w = np.polynomial.legendre.leggauss(count - 1)
    sigma = 0.5 * (b - a) * x + 0.5 * (a + b)
    t = np.exp(sigma)
    nodes = np.concatenate([[0.0, t_lo], t])
    weights = np.concatenate([[0.5 * t_lo, 0.5 * t_lo], 0.5 * (b - a) * w * t])
    return nodes, weights


def _carleson_heat(f: SpectralField, cfg: CarlesonConfig, use_gradient: bool) -> float:
    grid = f.grid
    cfg.validate(grid)
    s = cfg.center_stride
    best = 0.0
    for r in cfg.radii:
        nodes, weights = heat_time_nodes(grid, r, cfg.time_quadrature)
        acc = np.zeros((f.n_components, *grid.shape))
        for t, w in zip(nodes, weights):
            W = heat_semigroup(f, t)
            if use_gradient:
                vals = to_physical(gradient(W)).reshape(f.n_components, grid.n_dims, *grid.shape)
                acc += w * np.sum(vals**2, axis=1)
            else:
                acc += w * to_physical(W) ** 2
        for a in range(f.n_components):
            q = ball_integrals(acc[a], grid, r) / r**grid.n_dims
            best = max(best, float(q[(slice(None, None, s),) * grid.n_dims].max()))
    return math.sqrt(max(best, 0.0))


def bmo_seminorm(f: SpectralField, cfg: CarlesonConfig) -> float:
    """[f]_BMO from |grad W|^2 of the heat extension; max over components."""
    return _carleson_heat(f, cfg, use_gradient=True)


def bmo_minus1_norm(f: SpectralField, cfg: CarlesonConfig) -> float:
    """||f||_{BMO^{-1}} from |W|^2 of the heat extension; max over components."""
    return _carleson_heat(f, cfg, use_gradient=False)


@dataclass(frozen=True)
class CylinderNorm:
    """The two halves of an X or Z norm, plus what was actually sampled."""

    sup_part: float
    carleson_part: float
    radii_used: tuple[float, ...]
    linf_sup: float = 0.0

    @property
    def total(self) -> float:
        return self.sup_part + self.carleson_part


def _magnitude_sq(f: SpectralField) -> np.ndarray:
    return np.sum(to_physical(f) ** 2, axis=0)


def _cylinder_series(series: Series, cfg: CarlesonConfig, transform) -> CylinderNorm:
    items = sorted(series, key=lambda it: it[0])
    if not items:
        raise ValueError("empty series")
    grid = items[0][1].grid
    cfg.validate(grid)
    times = np.array([t for t, _ in items])
    if np.any(np.diff(times) <= 0):
        raise ValueError("series times must increase strictly")
    fields = [transform(f) for _, f in items]
    sq = np.stack([_magnitude_sq(g) for g in fields])
    sup_part = float(max(math.sqrt(t) * math.sqrt(s.max()) for t, s in zip(times, sq)))

    # g is linear in t between samples and constant before the first one
    t_ext = times if times[0] == 0 else np.concatenate([[0.0], times])
    vals = np.stack([to_physical(g) for g in fields])
    if times[0] != 0:
        vals = np.concatenate([vals[:1], vals])
    used = tuple(r for r in cfg.radii if r * r <= t_ext[-1] * (1 + 1e-12))
    s = cfg.center_stride
    best = 0.0
    for r in used:
        acc = _integrate_sq_linear(t_ext, vals, r * r)
        q = ball_integrals(acc, grid, r) / r**grid.n_dims
        best = max(best, float(q[(slice(None, None, s),) * grid.n_dims].max()))
    return CylinderNorm(sup_part, math.sqrt(best), used)


def _integrate_sq_linear(times: np.ndarray, vals: np.ndarray, top: float) -> np.ndarray:
    """int_0^top |g|^2 dt for g piecewise linear between samples (exact)."""
    acc = np.zeros(vals.shape[2:])
    for i in range(len(times) - 1):
        a, b = times[i], times[i + 1]
        if a >= top:
            break
        ga, gb = vals[i], vals[i + 1]
        if b > top:
            gb = ga + (gb - ga) * (top - a) / (b - a)
            b = top
        # exact integral of |ga + s (gb - ga)|^2 over s in [0, 1]
        acc += (b - a) * np.sum(ga * ga + ga * gb + gb * gb, axis=0) / 3.0
    return acc


def z_norm_parts(series: Series, cfg: CarlesonConfig) -> CylinderNorm:
    """Z norm of a velocity-like time series.

    Only radii whose cylinders fit in the sampled time range (r^2 <= t_last)
    enter the Carleson half.
    """
    return _cylinder_series(series, cfg, lambda g: g)


def z_norm(series: Series, cfg: CarlesonConfig) -> float:
    return z_norm_parts(series, cfg).total


def x_norm_parts(series: Series, cfg: CarlesonConfig) -> CylinderNorm:
    """X norm of a director-like series (grad d in both halves) and the extra
    sup_t ||d||_inf of the full norm."""
    parts = _cylinder_series(series, cfg, gradient)
    linf = max(float(np.sqrt(_magnitude_sq(d)).max()) for _, d in series)
    return CylinderNorm(parts.sup_part, parts.carleson_part, parts.radii_used, linf)


def x_norm(series: Series, cfg: CarlesonConfig, full: bool = False) -> float:
    parts = x_norm_parts(series, cfg)
    return parts.total + (parts.linf_sup if full else 0.0)
