"""Particle paths of the flow and their Hölder dependence on the start point.

Paths solve d gamma / dt = v(gamma, t) with classical RK4.  The field is
evaluated off-grid by exact trigonometric summation and linearly in time
between stored snapshots, so the overall order on a snapshot series is two
in the snapshot spacing even though the integrator is fourth order.
Positions are kept in the universal cover (never wrapped).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import Grid, SpectralField, gradient, load_snapshot

Velocity = Callable[[np.ndarray, float], np.ndarray]

SEPARATION_EXPONENTS = (-8, -7, -6, -5, -4)
NONSTANDARD_DRIFT = "nonstandard: u plus a linear contraction of grad d"


def _phases(grid: Grid, x: np.ndarray) -> list[np.ndarray]:
    """exp(i xi_a x_a) per axis, each of shape (P, N)."""
    k = np.fft.fftfreq(grid.N, d=1.0 / grid.N) * grid.fundamental
    return [np.exp(1j * np.outer(x[:, a], k)) for a in range(grid.n_dims)]


def interpolate_coefficients(grid: Grid, coeffs: np.ndarray, x) -> np.ndarray:
    """Trigonometric evaluation of ``coeffs`` (c, N, ...) at points ``x``.

    Returns shape (P, c) for ``x`` of shape (P, n), or (c,) for one point.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != grid.n_dims:
        raise ValueError(f"positions must have {grid.n_dims} coordinates")
    ph = _phases(grid, np.mod(pts, grid.L))
    if grid.n_dims == 2:
        out = np.einsum("cij,pi,pj->pc", coeffs, ph[0], ph[1], optimize=True)
    else:
        out = np.einsum("cijk,pi,pj,pk->pc", coeffs, ph[0], ph[1], ph[2], optimize=True)
    out = out.real
    return out[0] if single else out


def interpolate_field(f: SpectralField, x) -> np.ndarray:
    """sum_xi f_hat(xi) e^{i x.xi} at arbitrary positions (wrapped into the box)."""
    return interpolate_coefficients(f.grid, f.coefficients, x)


@dataclass
class SnapshotSeries:
    """Velocity (and optionally director) coefficients at increasing times."""

    grid: Grid
    times: np.ndarray
    u: np.ndarray = field(repr=False)
    d: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) < 2 or np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be at least two, strictly increasing")

    @classmethod
    def from_states(cls, states) -> "SnapshotSeries":
        states = list(states)
        grid = states[0].grid
        return cls(
            grid,
            np.array([s.t for s in states]),
            np.stack([s.u.coefficients for s in states]),
            np.stack([s.d.coefficients for s in states]),
        )

    @classmethod
    def from_directory(cls, path) -> "SnapshotSeries":
        """Read ``u_*.snap`` (and ``d_*.snap`` if present) written by simulate."""
        path = Path(path)
        u_files = sorted(path.glob("u_*.snap"))
        if not u_files:
            raise FileNotFoundError(f"no u_*.snap snapshots in {path}")
        times, us, ds = [], [], []
        for uf in u_files:
            u, header = load_snapshot(uf)
            times.append(float(header["t"]))
            us.append(u.coefficients)
            df = uf.with_name("d_" + uf.name[2:])
            if df.exists():
                ds.append(load_snapshot(df)[0].coefficients)
        d = np.stack(ds) if len(ds) == len(us) else None
        return cls(u.grid, np.array(times), np.stack(us), d)

    @property
    def spacing(self) -> float:
        return float(np.max(np.diff(self.times)))

    def _locate(self, t: float) -> tuple[int, float]:
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside snapshot range [{self.times[0]}, {self.times[-1]}]")
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return i, min(max(w, 0.0), 1.0)

    def coefficients_at(self, t: float, which: str = "u") -> np.ndarray:
        arr = self.u if which == "u" else self.d
        if arr is None:
            raise ValueError(f"series holds no {which!r} snapshots")
        i, w = self._locate(t)
        return (1 - w) * arr[i] + w * arr[i + 1]


def advect_velocity(
    series: SnapshotSeries, x, t: float, drift: np.ndarray | None = None
) -> np.ndarray:
    """v(x, t) = u(x, t), optionally plus ``drift @ vec(grad d)(x, t)``.

    The drift variant is exploratory and not part of the standard flow.
    """
    v = interpolate_coefficients(series.grid, series.coefficients_at(t, "u"), x)
    if drift is not None:
        g = series.grid
        gd = gradient(SpectralField(g, series.coefficients_at(t, "d")))
        v = v + interpolate_field(gd, x) @ np.asarray(drift).T
    return v


def series_velocity(series: SnapshotSeries, drift: np.ndarray | None = None) -> Velocity:
    return lambda x, t: advect_velocity(series, x, t, drift)


@dataclass
class TrajectorySet:
    seeds: np.ndarray
    times: np.ndarray
    paths: np.ndarray = field(repr=False)  # (n_times, P, n)
    pair_list: list[tuple[int, int]] = field(default_factory=list)
    label: str = "u"

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a stored path time")
        return self.paths[i]


def integrate_flow(
    velocity: Velocity | SnapshotSeries,
    seeds,
    T: float,
    dt_traj: float,
    pair_list: Sequence[tuple[int, int]] = (),
    drift: np.ndarray | None = None,
) -> TrajectorySet:
    """RK4 for every seed on a uniform step that lands exactly on T."""
    label = "u"
    if isinstance(velocity, SnapshotSeries):
        if dt_traj > velocity.spacing * (1 + 1e-12):
            raise ValueError("dt_traj must not exceed the snapshot spacing")
        if drift is not None:
            label = NONSTANDARD_DRIFT
        velocity = series_velocity(velocity, drift)
    elif drift is not None:
        raise ValueError("drift needs a snapshot series with director data")
    if not (T >= 0 and dt_traj > 0):
        raise ValueError("T must be >= 0 and dt_traj > 0")
    x = np.array(seeds, dtype=float, ndmin=2)
    n_steps = max(1, math.ceil(T / dt_traj - 1e-9)) if T > 0 else 0
    h = T / n_steps if n_steps else 0.0
    times = np.arange(n_steps + 1) * h
    paths = np.empty((n_steps + 1, *x.shape))
    paths[0] = x
    for i in range(n_steps):
        t = times[i]
        k1 = velocity(x, t)
        k2 = velocity(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = velocity(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = velocity(x + h * k3, t + h)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        paths[i + 1] = x
    return TrajectorySet(np.array(seeds, dtype=float, ndmin=2), times, paths, list(pair_list), label)


def pair_seeds(
    grid: Grid,
    n_bases: int,
    seed: int = 0,
    exponents: Sequence[int] = SEPARATION_EXPONENTS,
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Random base points, each with one partner per dyadic separation
    L 2^e in a random direction.  Returns (seeds, pairs)."""
    rng = np.random.default_rng(seed)
    n = grid.n_dims
    bases = rng.uniform(0, grid.L, size=(n_bases, n))
    dirs = rng.standard_normal((n_bases, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    seeds = [b for b in bases]
    pairs = []
    for i in range(n_bases):
        for e in exponents:
            pairs.append((i, len(seeds)))
            seeds.append(bases[i] + grid.L * 2.0**e * dirs[i])
    return np.array(seeds), pairs


@dataclass(frozen=True)
class HolderFit:
    alpha: float
    C: float
    residual: float
    n_pairs: int
    n_excluded: int

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "C": self.C, "residual": self.residual,
            "n_pairs": self.n_pairs, "n_excluded": self.n_excluded,
        }


def holder_exponent(traj: TrajectorySet, t: float, box: float | None = None) -> HolderFit:
    """Fit log |gamma(x1,t) - gamma(x2,t)| = log C + alpha log |x1 - x2|.

    Pairs separated by more than box/4 at the start or at t are excluded and
    counted.  The initial separations must span at least four dyadic scales.
    """
    if not traj.pair_list:
        raise ValueError("trajectory set has no pairs")
    X = traj.at(t)
    r0, rt = [], []
    excluded = 0
    for i, j in traj.pair_list:
        a = float(np.linalg.norm(traj.seeds[i] - traj.seeds[j]))
        b = float(np.linalg.norm(X[i] - X[j]))
        if box is not None and (a > box / 4 or b > box / 4):
            excluded += 1
            continue
        if a <= 0 or b <= 0:
            excluded += 1
            continue
        r0.append(a)
        rt.append(b)
    if len(r0) < 2:
        raise ValueError("fewer than two usable pairs")
    r0, rt = np.array(r0), np.array(rt)
    if math.log2(r0.max() / r0.min()) < 4 - 1e-9:
        raise ValueError("initial separations span fewer than 4 dyadic scales")
    x, y = np.log(r0), np.log(rt)
    coef = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - np.polyval(coef, x)) ** 2)))
    return HolderFit(float(coef[0]), float(math.exp(coef[1])), resid, len(r0), excluded)


def jacobian_determinant(traj: TrajectorySet, t: float, corner: int, ex: int, ey: int, h: float) -> float:
    """Finite-difference Jacobian of gamma from a corner seed and its two
    neighbours offset by h along x1 and x2 (2-d flows)."""
    X = traj.at(t)
    J = np.column_stack([(X[ex] - X[corner]) / h, (X[ey] - X[corner]) / h])
    return float(np.linalg.det(J))


def fit_kappa(alphas: dict[float, float]) -> float:
    """Smallest kappa with alpha(eps) >= 1 - kappa eps for every eps."""
    return max(0.0, max((1.0 - a) / e for e, a in alphas.items()))


def max_gradient_norm(series: SnapshotSeries) -> float:
    """sup_t ||grad u||_inf (Frobenius norm pointwise) over the snapshots."""
    best = 0.0
    for c in series.u:
        g = gradient(SpectralField(series.grid, c))
        vals = np.fft.ifftn(g.coefficients, axes=tuple(range(1, series.grid.n_dims + 1)), norm="forward").real
        best = max(best, float(np.sqrt(np.sum(vals**2, axis=0)).max()))
    return best


def write_paths_csv(path, traj: TrajectorySet) -> None:
    n = traj.seeds.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "t"] + [f"x{a + 1}" for a in range(n)])
        for p in range(traj.seeds.shape[0]):
            for i, t in enumerate(traj.times):
                w.writerow([p, repr(float(t))] + [repr(float(v)) for v in traj.paths[i, p]])


def write_holder_json(path, fit: HolderFit, t: float, label: str) -> None:
    body = {"schema_version": 1, "t": t, "advecting_field": label, **fit.to_dict()}
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
