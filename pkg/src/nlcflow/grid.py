"""Periodic grids, spectral fields and the snapshot file format.

Fields are stored as full complex Fourier coefficients ``f_hat[c, k1, ..., kn]``
with the convention

    f(x) = sum_k f_hat[k] exp(i xi_k . x),    xi_k = 2 pi k / L,

so ``f_hat = fftn(f) / N**n`` (numpy's ``norm="forward"``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

DEFAULT_PERIOD = 2 * np.pi * 2**4


class FieldError(ValueError):
    """Invalid grid or field data."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the box ``[0, L)^n``."""

    n_dims: int = 2
    points_per_dim: int = 64
    period: float = DEFAULT_PERIOD

    def __post_init__(self):
        if self.n_dims not in (2, 3):
            raise FieldError(f"n_dims must be 2 or 3, got {self.n_dims}")
        N = self.points_per_dim
        if not isinstance(N, (int, np.integer)) or N < 16 or N & (N - 1):
            raise FieldError(f"points_per_dim must be a power of two >= 16, got {N}")
        if not (self.period > 0 and np.isfinite(self.period)):
            raise FieldError(f"period must be positive, got {self.period}")

    @property
    def N(self) -> int:
        return self.points_per_dim

    @property
    def L(self) -> float:
        return float(self.period)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n_dims

    @property
    def spacing(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.n_dims

    @property
    def fundamental(self) -> float:
        """Smallest nonzero wavenumber 2 pi / L."""
        return 2 * np.pi / self.L

    @cached_property
    def integer_modes(self) -> tuple[np.ndarray, ...]:
        """Broadcastable integer lattice indices, FFT ordering."""
        k = np.fft.fftfreq(self.N, d=1.0 / self.N).astype(int)
        out = []
        for ax in range(self.n_dims):
            shape = [1] * self.n_dims
            shape[ax] = self.N
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return tuple(self.fundamental * k for k in self.integer_modes)

    @cached_property
    def diff_wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Wavenumbers with the Nyquist row zeroed; used for all derivatives so
        that odd orders stay Hermitian and orders compose exactly."""
        out = []
        for k, xi in zip(self.integer_modes, self.wavenumbers):
            out.append(np.where(k == -self.N // 2, 0.0, xi))
        return tuple(out)

    @cached_property
    def xi_squared(self) -> np.ndarray:
        return sum(np.broadcast_to(xi**2, self.shape) for xi in self.wavenumbers)

    @cached_property
    def xi_norm(self) -> np.ndarray:
        return np.sqrt(self.xi_squared)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep |k_i| <= N/3 on every axis."""
        kmax = self.N // 3
        mask = np.ones(self.shape, dtype=bool)
        for k in self.integer_modes:
            mask &= np.abs(k) <= kmax
        return mask

    @property
    def dealias_radius(self) -> float:
        """Largest |xi| such that the whole ball lies inside the dealiased cube."""
        return (self.N // 3) * self.fundamental

    @property
    def nyquist(self) -> float:
        return (self.N // 2) * self.fundamental

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.N) * self.spacing
        return tuple(np.meshgrid(*([x] * self.n_dims), indexing="ij"))

    def to_dict(self) -> dict:
        return {"n_dims": self.n_dims, "points_per_dim": self.N, "period": self.L}


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Multi-component real field stored by its Fourier coefficients."""

    grid: Grid
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if c.ndim == self.grid.n_dims:
            c = c[None]
        if c.shape[1:] != self.grid.shape:
            raise FieldError(
                f"coefficient shape {c.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise FieldError("non-finite spectral coefficients")
        c = c.copy() if c is self.coefficients else c
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def from_physical(cls, grid: Grid, values) -> SpectralField:
        v = np.asarray(values, dtype=float)
        if v.ndim == grid.n_dims:
            v = v[None]
        if not np.all(np.isfinite(v)):
            raise FieldError("non-finite physical samples")
        axes = tuple(range(1, grid.n_dims + 1))
        return cls(grid, np.fft.fftn(v, axes=axes, norm="forward"))

    @classmethod
    def zeros(cls, grid: Grid, n_components: int = 1) -> SpectralField:
        return cls(grid, np.zeros((n_components, *grid.shape), dtype=complex))

    @property
    def n_components(self) -> int:
        return self.coefficients.shape[0]

    def component(self, i) -> SpectralField:
        return SpectralField(self.grid, self.coefficients[i])

    def with_coefficients(self, coeffs) -> SpectralField:
        return SpectralField(self.grid, coeffs)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        c = self.coefficients
        axes = tuple(range(1, self.grid.n_dims + 1))
        mirrored = np.conj(np.roll(np.flip(c, axis=axes), 1, axis=axes))
        scale = max(np.abs(c).max(), 1.0)
        return bool(np.abs(c - mirrored).max() <= tol * scale)

    def __add__(self, other: SpectralField) -> SpectralField:
        return SpectralField(self.grid, self.coefficients + other.coefficients)

    def __sub__(self, other: SpectralField) -> SpectralField:
        return SpectralField(self.grid, self.coefficients - other.coefficients)

    def __neg__(self) -> SpectralField:
        return SpectralField(self.grid, -self.coefficients)

    def __mul__(self, alpha) -> SpectralField:
        return SpectralField(self.grid, alpha * self.coefficients)

    __rmul__ = __mul__


def to_physical(f: SpectralField) -> np.ndarray:
    """Physical samples, shape ``(c, N, ..., N)``."""
    axes = tuple(range(1, f.grid.n_dims + 1))
    return np.fft.ifftn(f.coefficients, axes=axes, norm="forward").real


def to_spectral(grid: Grid, values) -> SpectralField:
    return SpectralField.from_physical(grid, values)


def derivative(f: SpectralField, axis: int, order: int = 1) -> SpectralField:
    """Spectral derivative of every component along ``axis``."""
    g = f.grid
    if not 0 <= axis < g.n_dims:
        raise FieldError(f"axis {axis} out of range for {g.n_dims}-d grid")
    if order < 1:
        raise FieldError(f"derivative order must be >= 1, got {order}")
    factor = 1j * g.diff_wavenumbers[axis]
    out = f.coefficients
    for _ in range(order):
        out = out * factor
    return f.with_coefficients(out)


def gradient(f: SpectralField) -> SpectralField:
    """All first derivatives; component ``a * n + i`` is d_i f^a."""
    return derivative_tensor(f, 1)


def derivative_tensor(f: SpectralField, m: int) -> SpectralField:
    """All m-th order partial derivatives (c * n**m components, row-major)."""
    if m < 0:
        raise FieldError(f"derivative order must be >= 0, got {m}")
    out = f.coefficients
    n = f.grid.n_dims
    for _ in range(m):
        parts = [
            out * (1j * f.grid.diff_wavenumbers[i]) for i in range(n)
        ]
        out = np.stack(parts, axis=1).reshape(-1, *f.grid.shape)
    return f.with_coefficients(out)


def laplacian(f: SpectralField) -> SpectralField:
    return f.with_coefficients(-f.grid.xi_squared * f.coefficients)


def divergence(f: SpectralField) -> SpectralField:
    g = f.grid
    if f.n_components != g.n_dims:
        raise FieldError("divergence needs an n-component field")
    out = sum(1j * g.diff_wavenumbers[i] * f.coefficients[i] for i in range(g.n_dims))
    return SpectralField(g, out)


def dealias(f: SpectralField) -> SpectralField:
    return f.with_coefficients(f.coefficients * f.grid.dealias_mask)


def stress_tensor(d: SpectralField, dealiased: bool = False) -> SpectralField:
    """Entries sum_a d_i d^a d_j d^a, stored row-major as n*n components."""
    g = d.grid
    n = g.n_dims
    if dealiased:
        d = dealias(d)
    grad = to_physical(gradient(d)).reshape(d.n_components, n, *g.shape)
    tensor = np.einsum("ai...,aj...->ij...", grad, grad).reshape(n * n, *g.shape)
    out = SpectralField.from_physical(g, tensor)
    return dealias(out) if dealiased else out


def pointwise_norm(values: np.ndarray) -> np.ndarray:
    """Euclidean norm over the component axis of physical samples."""
    return np.sqrt(np.sum(values**2, axis=0))


# --- snapshot files -------------------------------------------------------

SNAPSHOT_MAGIC = b"NLCSNAP1"


def save_snapshot(path, f: SpectralField, **meta) -> None:
    """Write physical samples of ``f``.

    Layout: 8-byte magic ``NLCSNAP1``, little-endian uint32 header length,
    UTF-8 JSON header (sorted keys), then ``n_components * N**n_dims``
    little-endian float64 values in row-major (component, x1, ..., xn) order.
    """
    header = {
        "format_version": 1,
        "grid": f.grid.to_dict(),
        "n_components": f.n_components,
        "dtype": "<f8",
        "order": "component-major, row-major",
        **meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    data = np.ascontiguousarray(to_physical(f), dtype="<f8")
    with open(Path(path), "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(data.tobytes())


def load_snapshot(path) -> tuple[SpectralField, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != SNAPSHOT_MAGIC:
        raise FieldError(f"{path}: not a snapshot file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen].decode())
    grid = Grid(**header["grid"])
    shape = (header["n_components"], *grid.shape)
    values = np.frombuffer(raw[12 + hlen :], dtype="<f8").reshape(shape)
    return SpectralField.from_physical(grid, values), header
