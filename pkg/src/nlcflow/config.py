"""Run configuration: JSON text, validated field by field.

Schema (version 1); every section and key is optional and defaults as shown::

    {
      "schema_version": 1,
      "grid":         {"n_dims": 2, "points_per_dim": 64, "period": 100.53...},
      "solver":       {"dt_max": 0.25, "cfl_safety": 0.5,
                       "renormalize_director": true, "dealias": true,
                       "scheme": "IF-RK4", "epsilon_target": 0.02, "seed": 0},
      "initial_data": {"spectrum": "broadband", "xi0": null},
      "simulate":     {"n_steps": 10, "t_end": null, "fixed_dt": null,
                       "snapshot_every": 1},
      "decay":        {"epsilons": [0.01, 0.02, 0.05], "t0": 0.5, "n_samples": 15,
                       "derivative_orders": [[0,0], ...], "norms": ["besov_sup", "cl_l1_b1"],
                       "fit_window": null, "exponent_tol": 0.2, "nonlinear": true,
                       "plots": false},
      "trajectory":   {"T": 32.0, "dt_traj": null, "n_bases": 32,
                       "drift": null}
    }

Errors name the offending field by its dotted path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .decay import NORM_KINDS, CampaignConfig
from .grid import DEFAULT_PERIOD, FieldError, Grid
from .solver import SCHEMES, SolverConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be an object")
    return sec


def _check_keys(sec: dict, name: str, allowed) -> None:
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", "unknown field")


def _num(sec, name, key, default, positive=False, integer=False, nullable=False):
    v = sec.get(key, default)
    path = f"{name}.{key}"
    if v is None and nullable:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"must be a number, got {v!r}")
    if integer and not float(v).is_integer():
        raise ConfigError(path, f"must be an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(path, f"must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _bool(sec, name, key, default):
    v = sec.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{name}.{key}", f"must be true or false, got {v!r}")
    return v


@dataclass(frozen=True)
class SimulateConfig:
    n_steps: int | None = 10
    t_end: float | None = None
    fixed_dt: float | None = None
    snapshot_every: int = 1


@dataclass(frozen=True)
class TrajectoryConfig:
    T: float = 32.0
    dt_traj: float | None = None
    n_bases: int = 32
    drift: tuple[tuple[float, ...], ...] | None = None


@dataclass(frozen=True)
class RunConfig:
    grid: Grid
    solver: SolverConfig
    spectrum: str
    xi0: float | None
    simulate: SimulateConfig
    decay: CampaignConfig
    plots: bool
    trajectory: TrajectoryConfig
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def seed(self) -> int:
        return self.solver.seed

    def canonical(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def parse_config(raw: Any) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    _check_keys(raw, "<root>", {"schema_version", "grid", "solver", "initial_data",
                                "simulate", "decay", "trajectory"})
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r}")

    g = _section(raw, "grid")
    _check_keys(g, "grid", {"n_dims", "points_per_dim", "period"})
    n_dims = _num(g, "grid", "n_dims", 2, integer=True)
    N = _num(g, "grid", "points_per_dim", 64, integer=True)
    period = _num(g, "grid", "period", DEFAULT_PERIOD, positive=True)
    if n_dims not in (2, 3):
        raise ConfigError("grid.n_dims", f"must be 2 or 3, got {n_dims}")
    if N < 16 or N & (N - 1):
        raise ConfigError("grid.points_per_dim", f"must be a power of two >= 16, got {N}")
    try:
        grid = Grid(n_dims, N, period)
    except FieldError as exc:
        raise ConfigError("grid", str(exc)) from None

    s = _section(raw, "solver")
    _check_keys(s, "solver", {"dt_max", "cfl_safety", "renormalize_director", "dealias",
                              "scheme", "epsilon_target", "seed"})
    scheme = s.get("scheme", "IF-RK4")
    if scheme not in SCHEMES:
        raise ConfigError("solver.scheme", f"must be one of {list(SCHEMES)}, got {scheme!r}")
    cfl = _num(s, "solver", "cfl_safety", 0.5, positive=True)
    if cfl > 1:
        raise ConfigError("solver.cfl_safety", f"must lie in (0, 1], got {cfl}")
    solver = SolverConfig(
        dt_max=_num(s, "solver", "dt_max", 0.25, positive=True),
        cfl_safety=cfl,
        renormalize_director=_bool(s, "solver", "renormalize_director", True),
        dealias=_bool(s, "solver", "dealias", True),
        scheme=scheme,
        epsilon_target=_num(s, "solver", "epsilon_target", 0.02, positive=True),
        seed=_num(s, "solver", "seed", 0, integer=True),
    )

    i = _section(raw, "initial_data")
    _check_keys(i, "initial_data", {"spectrum", "xi0"})
    spectrum = i.get("spectrum", "broadband")
    if spectrum not in ("broadband", "peaked"):
        raise ConfigError("initial_data.spectrum", f"must be 'broadband' or 'peaked', got {spectrum!r}")
    xi0 = _num(i, "initial_data", "xi0", None, positive=True, nullable=True)

    m = _section(raw, "simulate")
    _check_keys(m, "simulate", {"n_steps", "t_end", "fixed_dt", "snapshot_every"})
    n_steps = _num(m, "simulate", "n_steps", 10 if "t_end" not in m else None,
                   positive=True, integer=True, nullable=True)
    t_end = _num(m, "simulate", "t_end", None, positive=True, nullable=True)
    if (n_steps is None) == (t_end is None):
        raise ConfigError("simulate", "exactly one of n_steps and t_end must be given")
    simulate = SimulateConfig(
        n_steps, t_end,
        _num(m, "simulate", "fixed_dt", None, positive=True, nullable=True),
        _num(m, "simulate", "snapshot_every", 1, positive=True, integer=True),
    )

    d = _section(raw, "decay")
    _check_keys(d, "decay", {"epsilons", "t0", "n_samples", "derivative_orders", "norms",
                             "fit_window", "exponent_tol", "nonlinear", "plots"})
    eps = d.get("epsilons", [0.01, 0.02, 0.05])
    if not isinstance(eps, list) or not eps:
        raise ConfigError("decay.epsilons", "must be a non-empty list")
    for n_, e in enumerate(eps):
        if isinstance(e, bool) or not isinstance(e, (int, float)) or not e > 0:
            raise ConfigError(f"decay.epsilons[{n_}]", f"must be a positive number, got {e!r}")
    orders = d.get("derivative_orders", [list(km) for km in CampaignConfig().derivative_orders])
    if not isinstance(orders, list) or not orders:
        raise ConfigError("decay.derivative_orders", "must be a non-empty list of [k, m]")
    for n_, km in enumerate(orders):
        if (not isinstance(km, list) or len(km) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in km)):
            raise ConfigError(f"decay.derivative_orders[{n_}]", "must be [k, m] integers")
        if not (0 <= km[0] <= 2 and 0 <= km[1] <= 3):
            raise ConfigError(f"decay.derivative_orders[{n_}]", "need 0 <= k <= 2 and 0 <= m <= 3")
    norms = d.get("norms", ["besov_sup", "cl_l1_b1"])
    if not isinstance(norms, list):
        raise ConfigError("decay.norms", "must be a list")
    for n_, kind in enumerate(norms):
        if kind not in NORM_KINDS:
            raise ConfigError(f"decay.norms[{n_}]", f"must be one of {list(NORM_KINDS)}")
    n_samples = _num(d, "decay", "n_samples", 15, integer=True)
    if n_samples < 1:
        raise ConfigError("decay.n_samples", "the time grid is empty")
    window = d.get("fit_window")
    if window is not None:
        if (not isinstance(window, list) or len(window) != 2
                or not all(isinstance(v, int) for v in window)
                or not 0 <= window[0] < window[1] <= n_samples):
            raise ConfigError("decay.fit_window", "must be [lo, hi] with 0 <= lo < hi <= n_samples")
    campaign = CampaignConfig(
        epsilons=tuple(float(e) for e in eps),
        t0=_num(d, "decay", "t0", 0.5, positive=True),
        n_samples=n_samples,
        derivative_orders=tuple(tuple(km) for km in orders),
        norms=tuple(norms),
        fit_window=None if window is None else tuple(window),
        exponent_tol=_num(d, "decay", "exponent_tol", 0.2, positive=True),
        spectrum=spectrum,
        grid=grid,
        seed=solver.seed,
        nonlinear=_bool(d, "decay", "nonlinear", True),
    )
    plots = _bool(d, "decay", "plots", False)

    t = _section(raw, "trajectory")
    _check_keys(t, "trajectory", {"T", "dt_traj", "n_bases", "drift"})
    drift = t.get("drift")
    if drift is not None:
        ok = (isinstance(drift, list) and len(drift) == n_dims
              and all(isinstance(r, list) and len(r) == 3 * n_dims for r in drift))
        if not ok:
            raise ConfigError("trajectory.drift", f"must be a {n_dims} x {3 * n_dims} matrix")
        drift = tuple(tuple(float(v) for v in r) for r in drift)
    trajectory = TrajectoryConfig(
        _num(t, "trajectory", "T", 32.0, positive=True),
        _num(t, "trajectory", "dt_traj", None, positive=True, nullable=True),
        _num(t, "trajectory", "n_bases", 32, positive=True, integer=True),
        drift,
    )
    return RunConfig(grid, solver, spectrum, xi0, simulate, campaign, plots, trajectory, raw)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return parse_config(raw)
