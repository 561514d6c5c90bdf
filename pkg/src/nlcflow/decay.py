"""Decay campaigns: evolve small data, track weighted Besov norms of time and
space derivatives, fit power laws and compare constants across epsilon.

For each sample time t_i = t0 2^{i/2} the harness records

    ||d_t^k grad^m u(t)||_{B^-1_inf,inf}   and   ||d_t^k grad^m grad d(t)||_{B^-1_inf,inf}

(unweighted).  The weighted curves t^{k+m/2} * value give the constants
C_{k,m} = sup_t(weighted) / epsilon, and the unweighted curves are fitted to
t^alpha on a window below the box time T_box = (L / 2 pi)^2 / 4, where the
lowest lattice mode starts to dominate.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .function_spaces import CarlesonConfig, x_norm_parts, z_norm_parts
from .grid import Grid, gradient
from .littlewood_paley import (
    INF,
    BesovIndex,
    NormSeries,
    besov_norm,
    block_norms,
    build_partition,
    combine,
    write_norm_csv,
)
from .solver import (
    InitialData,
    SolverConfig,
    SolverHalt,
    SolverState,
    advance_to,
    initial_state,
    make_initial_data,
    time_derivative,
)

log = logging.getLogger(__name__)

NORM_KINDS = ("besov_sup", "cl_l1_b1", "X", "Z")
FIELD_KINDS = ("u", "grad_d")
REPORT_VERSION = 1
# RMS log-residual above which a fit is flagged; the dyadic sup alone
# leaves a staircase of about 0.1
NON_POWER_LAW_RESIDUAL = 0.25


def box_time(grid: Grid) -> float:
    """(L / 2 pi)^2 / 4: a quarter of the slowest mode's diffusive time."""
    return (grid.L / (2 * math.pi)) ** 2 / 4


@dataclass(frozen=True)
class CampaignConfig:
    epsilons: tuple[float, ...] = (0.01, 0.02, 0.05)
    t0: float = 0.5
    n_samples: int = 15
    derivative_orders: tuple[tuple[int, int], ...] = (
        (0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2),
    )
    norms: tuple[str, ...] = ("besov_sup", "cl_l1_b1")
    fit_window: tuple[int, int] | None = None
    exponent_tol: float = 0.2
    spectrum: str = "broadband"
    grid: Grid = field(default_factory=Grid)
    seed: int = 0
    nonlinear: bool = True

    def __post_init__(self):
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(
            self, "derivative_orders", tuple(tuple(km) for km in self.derivative_orders)
        )
        object.__setattr__(self, "norms", tuple(self.norms))
        if self.fit_window is not None:
            object.__setattr__(self, "fit_window", tuple(self.fit_window))
        if not self.epsilons or any(not e > 0 for e in self.epsilons):
            raise ValueError("epsilons must be a non-empty list of positive numbers")
        if not self.t0 > 0:
            raise ValueError("t0 must be positive")
        if self.n_samples < 1:
            raise ValueError("the time grid is empty (n_samples < 1)")
        for k, m in self.derivative_orders:
            if not (0 <= k <= 2 and 0 <= m <= 3):
                raise ValueError(f"derivative order (k={k}, m={m}) outside k <= 2, m <= 3")
        for kind in self.norms:
            if kind not in NORM_KINDS:
                raise ValueError(f"unknown norm kind {kind!r}")
        if self.fit_window is not None:
            lo, hi = self.fit_window
            if not 0 <= lo < hi <= self.n_samples:
                raise ValueError("fit_window must satisfy 0 <= lo < hi <= n_samples")
        if not self.exponent_tol > 0:
            raise ValueError("exponent_tol must be positive")

    @property
    def times(self) -> np.ndarray:
        return self.t0 * 2.0 ** (np.arange(self.n_samples) / 2)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def window(self) -> tuple[int, int]:
        """Sample index range [lo, hi) used for exponent fits.

        Default: samples with 1 <= t <= T_box, i.e. past the diffusive time of
        the top shell and before the box-scale mode takes over.
        """
        if self.fit_window is not None:
            return self.fit_window
        t = self.times
        inside = np.nonzero((t >= 1.0 - 1e-12) & (t <= box_time(self.grid) * (1 + 1e-12)))[0]
        if len(inside) == 0:
            return (0, 0)
        return int(inside[0]), int(inside[-1]) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        d["derivative_orders"] = [list(km) for km in self.derivative_orders]
        d["epsilons"] = list(self.epsilons)
        d["norms"] = list(self.norms)
        d["fit_window"] = None if self.fit_window is None else list(self.fit_window)
        return d


def fit_power_law(series: NormSeries, window: tuple[int, int] | None = None):
    """(alpha, residual): least-squares slope of log value against log t and
    the RMS of the fit residuals, over samples ``window = (lo, hi)``."""
    t, v = series.times, series.values
    if window is not None:
        t, v = t[window[0] : window[1]], v[window[0] : window[1]]
    if len(t) < 4:
        raise ValueError("power-law fit needs at least 4 samples in the window")
    if np.any(v <= 0) or np.any(t <= 0):
        raise ValueError("power-law fit needs positive times and values")
    x, y = np.log(t), np.log(v)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


@dataclass
class DecayEntry:
    epsilon: float
    k: int
    m: int
    kind: str
    series: NormSeries
    alpha: float | None
    residual: float | None
    expected: float
    passed: bool
    C: float
    flags: list[str] = field(default_factory=list)

    @property
    def weighted_sup(self) -> float:
        w = self.k + self.m / 2
        return float(np.max(self.series.times**w * self.series.values))

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon, "k": self.k, "m": self.m, "kind": self.kind,
            "alpha": self.alpha, "residual": self.residual,
            "expected": self.expected, "passed": self.passed, "C": self.C,
            "flags": list(self.flags),
        }


@dataclass
class DecayReport:
    config: CampaignConfig
    entries: list[DecayEntry] = field(default_factory=list)
    scalars: dict[str, dict[str, float]] = field(default_factory=dict)
    complete: bool = True
    notes: list[str] = field(default_factory=list)

    def entry(self, epsilon: float, k: int, m: int, kind: str = "u") -> DecayEntry:
        for e in self.entries:
            if e.epsilon == epsilon and (e.k, e.m, e.kind) == (k, m, kind):
                return e
        raise KeyError((epsilon, k, m, kind))

    def to_dict(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "config": self.config.to_dict(),
            "complete": self.complete,
            "notes": list(self.notes),
            "fit_window": list(self.config.window()),
            "entries": [e.to_dict() for e in self.entries],
            "scalars": {k: dict(v) for k, v in self.scalars.items()},
        }


@dataclass
class RunRecord:
    """Unweighted norm samples of one trajectory plus scalar norms."""

    series: dict[tuple[int, int, str], NormSeries]
    scalars: dict[str, float]
    complete: bool
    note: str = ""


def evaluate_run(
    data: InitialData,
    cfg: CampaignConfig,
    solver_cfg: SolverConfig,
    carleson: CarlesonConfig | None = None,
) -> RunRecord:
    """Evolve one data set to the campaign horizon and record every norm."""
    grid = data.u0.grid
    P = build_partition(grid)
    idx = BesovIndex(-1.0, INF, INF)
    series = {
        (k, m, kind): NormSeries(k, m, kind)
        for k, m in cfg.derivative_orders
        for kind in FIELD_KINDS
    }
    want_cl = "cl_l1_b1" in cfg.norms
    want_xz = "X" in cfg.norms or "Z" in cfg.norms
    cl_prev: list = []
    cl_acc = {kind: np.zeros(P.n_shells) for kind in FIELD_KINDS}
    u_hist, d_hist = [], []

    def blocks_of(state: SolverState):
        return {
            "u": block_norms(state.u, P, INF),
            "grad_d": block_norms(gradient(state.d), P, INF),
        }

    def on_step(state: SolverState):
        if want_cl:
            now = blocks_of(state)
            t_prev, b_prev = cl_prev[0]
            h = state.t - t_prev
            for kind in FIELD_KINDS:
                cl_acc[kind] += 0.5 * h * (b_prev[kind] + now[kind])
            cl_prev[0] = (state.t, now)
        if want_xz:
            u_hist.append((state.t, state.u))
            d_hist.append((state.t, state.d))

    state = initial_state(data.u0, data.d0)
    if want_cl:
        cl_prev.append((0.0, blocks_of(state)))
    if want_xz:
        u_hist.append((0.0, state.u))
        d_hist.append((0.0, state.d))
    complete, note = True, ""
    for t in cfg.times:
        try:
            if cfg.nonlinear:
                state = advance_to(state, solver_cfg, float(t), callback=on_step)
            else:
                state = _heat_state(data, float(t))
                on_step(state)
        except SolverHalt as exc:
            complete, note = False, str(exc)
            break
        for (k, m, kind), s in series.items():
            if cfg.nonlinear:
                g = time_derivative(state, k, m, kind)
            else:
                g = _heat_derivative(state, k, m, kind)
            s.append(float(t), besov_norm(g, P, idx))
    scalars: dict[str, float] = {}
    if want_cl:
        for kind in FIELD_KINDS:
            scalars[f"cl_l1_b1_{kind}"] = combine(cl_acc[kind], P, 1.0, INF)
    if want_xz:
        ccfg = carleson or CarlesonConfig.default(grid)
        if "Z" in cfg.norms:
            scalars["Z"] = z_norm_parts(u_hist, ccfg).total
        if "X" in cfg.norms:
            scalars["X"] = x_norm_parts(d_hist, ccfg).total
    return RunRecord(series, scalars, complete, note)


def _heat_state(data: InitialData, t: float) -> SolverState:
    from .heat import heat_semigroup

    return SolverState(t, heat_semigroup(data.u0, t), heat_semigroup(data.d0, t))


def _heat_derivative(state: SolverState, k: int, m: int, kind: str):
    """d_t^k = Lap^k for the free heat flow."""
    from .grid import derivative_tensor

    f = state.u if kind == "u" else gradient(state.d)
    f = f.with_coefficients(f.coefficients * (-f.grid.xi_squared) ** k)
    return derivative_tensor(f, m)


def _campaign_member(args):
    cfg, solver_cfg, eps = args
    data = make_initial_data(cfg.grid, eps, seed=cfg.seed, spectrum=cfg.spectrum)
    return evaluate_run(data, cfg, solver_cfg)


def build_entries(
    cfg: CampaignConfig, eps: float, record: RunRecord
) -> list[DecayEntry]:
    window = cfg.window()
    out = []
    for (k, m, kind), s in record.series.items():
        expected = -m / 2 - k
        flags: list[str] = []
        alpha = resid = None
        passed = False
        n_fit = max(0, min(window[1], len(s.samples)) - window[0])
        if n_fit < 4:
            flags.append("fit window has fewer than 4 samples")
        else:
            try:
                alpha, resid = fit_power_law(s, window)
            except ValueError as exc:
                flags.append(str(exc))
        if alpha is not None:
            if resid > NON_POWER_LAW_RESIDUAL:
                flags.append("non-power-law regime")
            passed = abs(alpha - expected) <= cfg.exponent_tol
        if not record.complete:
            flags.append("incomplete run")
        entry = DecayEntry(eps, k, m, kind, s, alpha, resid, expected, passed, 0.0, flags)
        entry.C = entry.weighted_sup / eps if s.samples else float("nan")
        out.append(entry)
    return out


def run_campaign(
    cfg: CampaignConfig, solver_cfg: SolverConfig | None = None, threads: int = 1
) -> DecayReport:
    """One trajectory per epsilon; members may run in a process pool, results
    are merged in epsilon order."""
    solver_cfg = solver_cfg or SolverConfig()
    jobs = [(cfg, solver_cfg, eps) for eps in cfg.epsilons]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_campaign_member, jobs))
    else:
        records = [_campaign_member(j) for j in jobs]
    report = DecayReport(cfg)
    for eps, rec in zip(cfg.epsilons, records):
        report.entries.extend(build_entries(cfg, eps, rec))
        report.scalars[repr(eps)] = rec.scalars
        if not rec.complete:
            report.complete = False
            report.notes.append(f"eps={eps}: {rec.note}")
    if cfg.window()[1] - cfg.window()[0] < 4:
        report.notes.append("fit window holds fewer than 4 samples; exponents not fitted")
    return report


@dataclass
class SweepRow:
    k: int
    m: int
    kind: str
    constants: dict[float, float]

    @property
    def ratio(self) -> float:
        vals = [v for v in self.constants.values() if v > 0 and math.isfinite(v)]
        if len(vals) != len(self.constants) or not vals:
            return INF
        return max(vals) / min(vals)

    @property
    def passed(self) -> bool:
        return self.ratio <= SWEEP_RATIO_MAX


SWEEP_RATIO_MAX = 4.0


def epsilon_sweep(reports: DecayReport | Sequence[DecayReport]) -> list[SweepRow]:
    """C_{k,m}(epsilon) per (k, m, kind) across every epsilon in the reports."""
    if isinstance(reports, DecayReport):
        reports = [reports]
    rows: dict[tuple[int, int, str], SweepRow] = {}
    eps_seen = set()
    for rep in reports:
        for e in rep.entries:
            eps_seen.add(e.epsilon)
            row = rows.setdefault((e.k, e.m, e.kind), SweepRow(e.k, e.m, e.kind, {}))
            row.constants[e.epsilon] = e.C
    if len(eps_seen) < 3:
        raise ValueError("epsilon_sweep needs at least 3 epsilon values")
    return [rows[key] for key in sorted(rows)]


# --- outputs -----------------------------------------------------------------

def write_report(report: DecayReport, out_dir, plots: bool = False) -> list[Path]:
    """CSV norm series per epsilon, the verdict JSON and optional SVG plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for eps in report.config.epsilons:
        path = out / f"norms_eps{eps!r}.csv"
        write_norm_csv(path, [e.series for e in report.entries if e.epsilon == eps])
        files.append(path)
    verdict = report.to_dict()
    try:
        sweep = epsilon_sweep(report)
        verdict["epsilon_sweep"] = [
            {"k": r.k, "m": r.m, "kind": r.kind,
             "constants": {repr(e): c for e, c in sorted(r.constants.items())},
             "ratio": r.ratio, "passed": r.passed}
            for r in sweep
        ]
    except ValueError:
        verdict["epsilon_sweep"] = None
    path = out / "verdict.json"
    path.write_text(json.dumps(verdict, indent=2, sort_keys=True) + "\n")
    files.append(path)
    if plots:
        files.extend(plot_report(report, out))
    return files


def plot_report(report: DecayReport, out_dir) -> list[Path]:
    """One log-log SVG per (k, m, kind) with a guide line of slope -m/2 - k."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "nlcflow"
    out = Path(out_dir)
    files = []
    keys = sorted({(e.k, e.m, e.kind) for e in report.entries})
    lo, hi = report.config.window()
    for k, m, kind in keys:
        fig, ax = plt.subplots(figsize=(5, 4))
        slope = guide_slope(k, m)
        anchor = None
        for e in report.entries:
            if (e.k, e.m, e.kind) != (k, m, kind):
                continue
            t, v = e.series.times, e.series.values
            ax.loglog(t, v, "o-", ms=3, label=f"eps={e.epsilon:g}")
            if anchor is None and len(t) > lo:
                anchor = (t[lo], v[lo])
        if anchor is not None:
            t = report.config.times
            ax.loglog(t, anchor[1] * (t / anchor[0]) ** slope, "k--", lw=1,
                      label=f"slope {slope:g}")
        ax.set_xlabel("t")
        ax.set_ylabel(f"||d_t^{k} grad^{m} {kind}||")
        ax.legend(fontsize=7)
        path = out / f"decay_k{k}_m{m}_{kind}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        files.append(path)
    return files


def guide_slope(k: int, m: int) -> float:
    """Expected exponent of ||d_t^k grad^m .||_{B^-1_inf,inf} against t."""
    return -m / 2 - k
