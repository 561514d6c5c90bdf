"""Dyadic (Littlewood-Paley) blocks on the periodic lattice and the Besov and
Chemin-Lerner norms built from them.

The cutoff is the usual difference of dilated smooth steps,

    chi = 1 on |xi| <= 3/4, 0 on |xi| >= 4/3,    phi(xi) = chi(xi/2) - chi(xi),

so phi lives on the ring 3/4 <= |xi| <= 8/3 and its dyadic dilates telescope
to one.  On the lattice the truncated family is renormalised pointwise by its
sum, which makes the partition identity exact up to rounding.  Blocks outside
the resolvable range are dropped, so every norm here is a band-limited norm.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grid import FieldError, Grid, SpectralField, to_physical

INF = math.inf
RING_INNER = 3 / 4
RING_OUTER = 8 / 3
BALL_INNER = 3 / 4
BALL_OUTER = 4 / 3


def _h(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(x, a: float, b: float):
    """C-infinity step: 0 for x <= a, 1 for x >= b."""
    x = np.asarray(x, dtype=float)
    up = _h(x - a)
    return up / (up + _h(b - x))


def smooth_drop(x, a: float, b: float):
    """1 - smooth_step, evaluated without cancellation near b."""
    x = np.asarray(x, dtype=float)
    down = _h(b - x)
    return down / (down + _h(x - a))


def chi(r):
    """Radial low-pass profile: 1 on [0, 3/4], 0 beyond 4/3."""
    return smooth_drop(r, BALL_INNER, BALL_OUTER)


def phi(r):
    """Dyadic ring profile phi(|xi|), supported in [3/4, 8/3]."""
    r = np.asarray(r, dtype=float)
    return chi(r / 2) - chi(r)


def phi_tilde(r):
    """Enlarged ring profile: 1 on [3/4, 8/3], supported in [3/8, 10/3]."""
    r = np.asarray(r, dtype=float)
    return smooth_step(r, 3 / 8, 3 / 4) * smooth_drop(r, 8 / 3, 10 / 3)


@dataclass(frozen=True)
class BesovIndex:
    s: float
    p: float = INF
    r: float = INF

    def __post_init__(self):
        for name in ("p", "r"):
            v = getattr(self, name)
            if v not in (1, 2, INF):
                raise ValueError(f"{name} must be 1, 2 or inf, got {v}")


@dataclass(frozen=True, eq=False)
class DyadicPartition:
    grid: Grid
    j_min: int
    j_max: int
    cutoffs: np.ndarray = field(repr=False)

    @property
    def indices(self) -> range:
        return range(self.j_min, self.j_max + 1)

    @property
    def n_shells(self) -> int:
        return self.j_max - self.j_min + 1

    def cutoff(self, j: int) -> np.ndarray:
        self._check(j)
        return self.cutoffs[j - self.j_min]

    def _check(self, j: int) -> None:
        if not self.j_min <= j <= self.j_max:
            raise FieldError(f"shell {j} outside [{self.j_min}, {self.j_max}]")

    @property
    def covered_band(self) -> tuple[float, float]:
        return RING_INNER * 2.0**self.j_min, RING_OUTER * 2.0**self.j_max

    def covered_mask(self) -> np.ndarray:
        lo, hi = self.covered_band
        xi = self.grid.xi_norm
        return (xi >= lo) & (xi <= hi) & (xi > 0)


def shell_range(grid: Grid) -> tuple[int, int]:
    """(j_min, j_max): the lowest shell holding a lattice point and the
    highest shell reaching into the dealiased band."""
    j_min = math.floor(math.log2(grid.fundamental / RING_OUTER)) + 1
    while RING_OUTER * 2.0 ** (j_min - 1) > grid.fundamental:
        j_min -= 1
    j_max = math.ceil(math.log2(grid.dealias_radius / RING_INNER)) - 1
    while RING_INNER * 2.0 ** (j_max + 1) < grid.dealias_radius:
        j_max += 1
    return j_min, j_max


def build_partition(grid: Grid, renormalize: bool = True) -> DyadicPartition:
    j_min, j_max = shell_range(grid)
    if j_max - j_min + 1 < 4:
        raise FieldError(
            f"grid N={grid.N}, L={grid.L:g} hosts only {j_max - j_min + 1} dyadic shells (need 4)"
        )
    xi = grid.xi_norm
    raw = np.stack([phi(xi / 2.0**j) for j in range(j_min, j_max + 1)])
    if renormalize:
        total = raw.sum(axis=0)
        raw = np.divide(raw, total, out=np.zeros_like(raw), where=total > 0)
    raw.setflags(write=False)
    return DyadicPartition(grid, j_min, j_max, raw)


def block(f: SpectralField, P: DyadicPartition, j: int) -> SpectralField:
    """Delta_j f."""
    return f.with_coefficients(f.coefficients * P.cutoff(j))


def all_blocks(f: SpectralField, P: DyadicPartition) -> np.ndarray:
    """Physical samples of every block, shape ``(J, c, N, ..., N)``."""
    coeffs = P.cutoffs[:, None] * f.coefficients[None]
    axes = tuple(range(2, f.grid.n_dims + 2))
    return np.fft.ifftn(coeffs, axes=axes, norm="forward").real


def mean_mode(f: SpectralField) -> SpectralField:
    c = np.zeros_like(f.coefficients)
    idx = (slice(None),) + (0,) * f.grid.n_dims
    c[idx] = f.coefficients[idx]
    return f.with_coefficients(c)


def low_pass(f: SpectralField, P: DyadicPartition, j: int) -> SpectralField:
    """S_j f: the mean mode plus all blocks below j.

    For j > j_max every lattice frequency is kept, including any content above
    the covered band.
    """
    if j > P.j_max:
        return f
    weight = np.zeros(f.grid.shape)
    for k in range(P.j_min, min(j, P.j_max + 1)):
        weight += P.cutoff(k)
    weight[(0,) * f.grid.n_dims] = 1.0
    return f.with_coefficients(f.coefficients * weight)


def lp_norm(values: np.ndarray, grid: Grid, p: float) -> float:
    """L^p norm of the pointwise Euclidean magnitude of ``(c, N, ...)`` samples."""
    mag = np.sqrt(np.sum(values**2, axis=0))
    if p == INF:
        return float(mag.max())
    return float((np.sum(mag**p) * grid.cell_volume) ** (1.0 / p))


def block_norms(f: SpectralField, P: DyadicPartition, p: float = INF) -> np.ndarray:
    """||Delta_j f||_{L^p} for j = j_min..j_max."""
    blocks = all_blocks(f, P)
    mag = np.sqrt(np.sum(blocks**2, axis=1))
    flat = mag.reshape(P.n_shells, -1)
    if p == INF:
        return flat.max(axis=1)
    return (np.sum(flat**p, axis=1) * f.grid.cell_volume) ** (1.0 / p)


def combine(norms: np.ndarray, P: DyadicPartition, s: float, r: float) -> float:
    """(sum_j (2^{js} a_j)^r)^{1/r} over the shell range (max for r = inf)."""
    weighted = 2.0 ** (s * np.arange(P.j_min, P.j_max + 1)) * np.asarray(norms)
    if r == INF:
        return float(weighted.max())
    return float(np.sum(weighted**r) ** (1.0 / r))


def besov_norm(f: SpectralField, P: DyadicPartition, idx: BesovIndex) -> float:
    return combine(block_norms(f, P, idx.p), P, idx.s, idx.r)


def chemin_lerner_norm(
    series: Sequence[tuple[float, SpectralField]],
    P: DyadicPartition,
    idx: BesovIndex,
    rho: float,
    T: float,
) -> float:
    """Time norm per block first, then the dyadic combination.

    ``rho = inf`` takes the max over samples; ``rho = 1`` integrates the
    per-block norms with the trapezoidal rule over the sampled span.
    """
    if rho not in (1, INF):
        raise ValueError(f"rho must be 1 or inf, got {rho}")
    items = sorted(series, key=lambda it: it[0])
    if any(t < 0 or t > T * (1 + 1e-12) for t, _ in items):
        raise ValueError("series times must lie in [0, T]")
    if rho == 1 and len(items) < 2:
        raise ValueError("rho = 1 needs at least two time samples")
    if not items:
        raise ValueError("empty series")
    times = np.array([t for t, _ in items])
    per_block = np.stack([block_norms(f, P, idx.p) for _, f in items])
    if rho == INF:
        time_norm = per_block.max(axis=0)
    else:
        time_norm = np.trapezoid(per_block, times, axis=0)
    return combine(time_norm, P, idx.s, idx.r)


def _target_r(r_f: float, r_g: float) -> float:
    inv = (0 if r_f == INF else 1 / r_f) + (0 if r_g == INF else 1 / r_g)
    if inv > 1:
        raise ValueError("1/r_f + 1/r_g must not exceed 1")
    r = INF if inv == 0 else 1 / inv
    if r not in (1, 2, INF):
        raise ValueError(f"target summation index {r} not supported")
    return r


def product_target_index(
    n_dims: int, idx_f: BesovIndex, idx_g: BesovIndex, p: float | None = None
) -> BesovIndex:
    """Target space of the product map for s_f + s_g > 0."""
    if idx_f.s + idx_g.s <= 0:
        raise ValueError("product estimate needs s_f + s_g > 0")
    p = max(idx_f.p, idx_g.p) if p is None else p
    if p < max(idx_f.p, idx_g.p):
        raise ValueError("target p must be >= max(p_f, p_g)")
    inv = lambda q: 0.0 if q == INF else 1.0 / q  # noqa: E731
    s = idx_f.s + idx_g.s - n_dims * (inv(idx_f.p) + inv(idx_g.p) - inv(p))
    return BesovIndex(s, p, _target_r(idx_f.r, idx_g.r))


def product_estimate_ratio(
    f: SpectralField,
    g: SpectralField,
    P: DyadicPartition,
    idx_f: BesovIndex,
    idx_g: BesovIndex,
    p: float | None = None,
) -> float:
    """||fg|| / (||f|| ||g||) in the product's target Besov index."""
    target = product_target_index(f.grid.n_dims, idx_f, idx_g, p)
    nf = besov_norm(f, P, idx_f)
    ng = besov_norm(g, P, idx_g)
    if nf == 0 or ng == 0:
        raise ValueError("ratio undefined: a factor has zero norm")
    prod = SpectralField.from_physical(f.grid, to_physical(f) * to_physical(g))
    return besov_norm(prod, P, target) / (nf * ng)


@dataclass
class NormSeries:
    k: int
    m: int
    kind: str
    samples: list[tuple[float, float]] = field(default_factory=list)

    def append(self, t: float, value: float) -> None:
        if self.samples and t <= self.samples[-1][0]:
            raise ValueError("NormSeries times must increase strictly")
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"invalid norm value {value}")
        self.samples.append((float(t), float(value)))

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.samples])


CSV_COLUMNS = ("t", "k", "m", "kind", "value")


def write_norm_csv(path, series: Iterable[NormSeries]) -> None:
    """Rows (t, k, m, kind, value); floats written with repr precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in series:
            for t, v in s.samples:
                w.writerow((repr(t), s.k, s.m, s.kind, repr(v)))


def read_norm_csv(path) -> list[NormSeries]:
    out: dict[tuple[int, int, str], NormSeries] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["k"]), int(row["m"]), row["kind"])
            s = out.setdefault(key, NormSeries(*key))
            s.append(float(row["t"]), float(row["value"]))
    return list(out.values())
