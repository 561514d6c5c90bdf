"""Command line: simulate, decay, trajectory, verify, report.

Exit codes: 0 success, 1 verification failure, 2 configuration error.
``NLC_OUTPUT_DIR`` and ``NLC_THREADS`` override the default output directory
and worker count; explicit flags win over both.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
MANIFEST_VERSION = 1

log = logging.getLogger("nlcflow")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig | None, command: str, started: str,
                   files: list[Path], extra: dict | None = None) -> Path:
    """RunManifest: config hash, seed, code version, timestamps, inventory."""
    body = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config_hash": None if cfg is None else cfg.hash(),
        "seed": None if cfg is None else cfg.seed,
        "code_version": __version__,
        "started": started,
        "finished": _now(),
        "files": [
            {"name": str(p.relative_to(out)), "bytes": p.stat().st_size, "sha256": _sha256(p)}
            for p in sorted(files)
        ],
    }
    if cfg is not None:
        body["config"] = cfg.raw
    if extra:
        body.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def _output_dir(args) -> Path:
    out = args.out or os.environ.get("NLC_OUTPUT_DIR") or "nlc_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("NLC_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError("NLC_THREADS", f"must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("NLC_THREADS", "must be >= 1")
        return n
    return 1


def _initial_data(cfg: RunConfig):
    from .solver import make_initial_data

    return make_initial_data(cfg.grid, cfg.solver.epsilon_target, seed=cfg.seed,
                             spectrum=cfg.spectrum, xi0=cfg.xi0)


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .grid import save_snapshot
    from .solver import advance_to, initial_state, stable_dt, step

    cfg = load_config(args.config)
    out = _output_dir(args)
    started = _now()
    data = _initial_data(cfg)
    state = initial_state(data.u0, data.d0)
    sim = cfg.simulate
    files: list[Path] = []
    checkpoints = []

    def snapshot(s, index: int, kind: str):
        meta = {"t": s.t, "step_count": s.step_count}
        pu, pd = out / f"u_{index:05d}.snap", out / f"d_{index:05d}.snap"
        save_snapshot(pu, s.u, field="u", **meta)
        save_snapshot(pd, s.d, field="d", **meta)
        files.extend([pu, pd])
        diag = s.diagnostics
        checkpoints.append({
            "index": index, "kind": kind, "t": s.t, "step_count": s.step_count,
            "max_divergence": diag.max_divergence, "sphere_error": diag.sphere_error,
            "dt_used": diag.dt_used, "files": [pu.name, pd.name],
        })

    snapshot(state, 0, "initial")
    n = 0
    while True:
        if sim.n_steps is not None and n >= sim.n_steps:
            break
        if sim.t_end is not None and state.t >= sim.t_end * (1 - 1e-12):
            break
        h = sim.fixed_dt or stable_dt(state, cfg.solver)
        if sim.t_end is not None:
            h = min(h, sim.t_end - state.t)
        state = step(state, cfg.solver, h)
        n += 1
        if n % sim.snapshot_every == 0:
            snapshot(state, n, "step")
    extra = {
        "solver": {
            "dt_max": cfg.solver.dt_max, "cfl_safety": cfg.solver.cfl_safety,
            "renormalize_director": cfg.solver.renormalize_director,
            "dealias": cfg.solver.dealias, "scheme": cfg.solver.scheme,
            "epsilon_target": cfg.solver.epsilon_target, "seed": cfg.solver.seed,
        },
        "initial_norms": {"u_bmo_minus1": data.u_norm, "d_bmo": data.d_norm},
        "checkpoints": checkpoints,
        "snapshots": [c["index"] for c in checkpoints if c["kind"] == "step"],
    }
    write_manifest(out, cfg, "simulate", started, files, extra)
    print(f"wrote {len(extra['snapshots'])} snapshots to {out}")
    return EXIT_OK


def cmd_decay(args) -> int:
    from .decay import epsilon_sweep, run_campaign, write_report

    cfg = load_config(args.config)
    out = _output_dir(args)
    started = _now()
    report = run_campaign(cfg.decay, cfg.solver, threads=_threads(args))
    files = write_report(report, out, plots=cfg.plots or args.plots)
    write_manifest(out, cfg, "decay", started, files)
    ok = report.complete
    try:
        rows = epsilon_sweep(report)
        ok = ok and all(r.passed for r in rows)
        for r in rows:
            print(f"C_{{{r.k},{r.m}}} {r.kind:7s} ratio={r.ratio:.3f} {'PASS' if r.passed else 'FAIL'}")
    except ValueError as exc:
        print(f"epsilon sweep skipped: {exc}")
    for e in report.entries:
        if e.alpha is not None:
            print(f"eps={e.epsilon:g} k={e.k} m={e.m} {e.kind:7s} alpha={e.alpha:+.3f} "
                  f"expected={e.expected:+.2f} {'ok' if e.passed else 'off'} {';'.join(e.flags)}")
    return EXIT_OK if ok else EXIT_FAIL


def _read_seeds(path: Path, n_dims: int):
    raw = json.loads(path.read_text())
    seeds = np.asarray(raw["seeds"], dtype=float)
    if seeds.ndim != 2 or seeds.shape[1] != n_dims:
        raise ConfigError(f"{path}:seeds", f"must be a list of {n_dims}-vectors")
    pairs = [tuple(p) for p in raw.get("pairs", [])]
    for p in pairs:
        if len(p) != 2 or not all(0 <= i < len(seeds) for i in p):
            raise ConfigError(f"{path}:pairs", f"invalid pair {list(p)}")
    return seeds, pairs


def cmd_trajectory(args) -> int:
    from .trajectory import (
        SnapshotSeries,
        holder_exponent,
        integrate_flow,
        pair_seeds,
        write_holder_json,
        write_paths_csv,
    )

    cfg = load_config(args.config) if args.config else parse_config({})
    series = SnapshotSeries.from_directory(args.snapshots)
    out = _output_dir(args)
    started = _now()
    T = args.T if args.T is not None else min(cfg.trajectory.T, float(series.times[-1]))
    if not series.times[0] <= T <= series.times[-1]:
        raise ConfigError("--T", f"must lie within the snapshot range [{series.times[0]}, {series.times[-1]}]")
    if args.seeds:
        seeds, pairs = _read_seeds(Path(args.seeds), series.grid.n_dims)
    else:
        seeds, pairs = pair_seeds(series.grid, cfg.trajectory.n_bases, seed=cfg.seed)
    dt = cfg.trajectory.dt_traj or series.spacing
    drift = None if cfg.trajectory.drift is None else np.array(cfg.trajectory.drift)
    if drift is not None and series.d is None:
        raise ConfigError("trajectory.drift", "snapshots hold no director data")
    traj = integrate_flow(series, seeds, T, dt, pairs, drift=drift)
    files = [out / "paths.csv"]
    write_paths_csv(files[0], traj)
    status = EXIT_OK
    if pairs:
        fit = holder_exponent(traj, float(traj.times[-1]), series.grid.L)
        files.append(out / "holder.json")
        write_holder_json(files[-1], fit, float(traj.times[-1]), traj.label)
        print(f"alpha={fit.alpha:.6f} C={fit.C:.6f} residual={fit.residual:.2e} "
              f"pairs={fit.n_pairs} excluded={fit.n_excluded}")
    write_manifest(out, cfg, "trajectory", started, files)
    return status


def cmd_verify(args) -> int:
    from .verify import run_suite

    out = _output_dir(args) if args.out or os.environ.get("NLC_OUTPUT_DIR") else None
    results = run_suite(renormalize=not args.inject_unnormalized, include_slow=not args.quick)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} properties passed")
    if out is not None:
        path = out / "verify.json"
        path.write_text(json.dumps({"schema_version": 1,
                                    "properties": [r.to_dict() for r in results]},
                                   indent=2, sort_keys=True) + "\n")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_report(args) -> int:
    """Summarise verdict.json, holder.json and verify.json found in a directory."""
    root = Path(args.directory)
    if not root.is_dir():
        raise ConfigError("directory", f"{root} is not a directory")
    lines = []
    status = EXIT_OK
    for path in sorted(root.rglob("verdict.json")):
        v = json.loads(path.read_text())
        lines.append(f"## decay: {path.parent}")
        lines.append(f"complete: {v['complete']}; fit window {v['fit_window']}")
        for row in v.get("epsilon_sweep") or []:
            lines.append(f"- C_{{{row['k']},{row['m']}}} {row['kind']}: ratio {row['ratio']:.3f} "
                         f"{'PASS' if row['passed'] else 'FAIL'}")
            status = status if row["passed"] else EXIT_FAIL
    for path in sorted(root.rglob("holder.json")):
        v = json.loads(path.read_text())
        lines.append(f"## trajectory: {path.parent}")
        lines.append(f"alpha {v['alpha']:.6f}, C {v['C']:.6f} at t={v['t']}")
    for path in sorted(root.rglob("verify.json")):
        v = json.loads(path.read_text())
        lines.append(f"## verify: {path.parent}")
        for p in v["properties"]:
            lines.append(f"- {'PASS' if p['passed'] else 'FAIL'} {p['name']}")
            status = status if p["passed"] else EXIT_FAIL
    if not lines:
        print(f"no reports under {root}")
        return EXIT_FAIL
    text = "\n".join(lines) + "\n"
    (root / "summary.md").write_text(text)
    print(text, end="")
    return status


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlcflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output directory (default $NLC_OUTPUT_DIR or ./nlc_out)")
        sp.add_argument("--threads", type=int, help="worker processes (default $NLC_THREADS or 1)")

    sp = sub.add_parser("simulate", help="evolve data and write snapshots")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("decay", help="run a decay campaign")
    common(sp)
    sp.add_argument("--plots", action="store_true", help="emit SVG log-log plots")
    sp.set_defaults(func=cmd_decay)

    sp = sub.add_parser("trajectory", help="integrate particle paths over snapshots")
    common(sp, needs_config=False)
    sp.add_argument("--config", help="JSON run configuration (trajectory section)")
    sp.add_argument("--snapshots", required=True, help="directory written by simulate")
    sp.add_argument("--seeds", help="JSON file with 'seeds' and optional 'pairs'")
    sp.add_argument("--T", type=float, help="final time")
    sp.set_defaults(func=cmd_trajectory)

    sp = sub.add_parser("verify", help="run the property suite")
    common(sp, needs_config=False)
    sp.add_argument("--quick", action="store_true", help="skip the slow kernel and linear checks")
    sp.add_argument("--inject-unnormalized", action="store_true",
                    help="negative control: build the partition without renormalisation")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("report", help="summarise reports in a directory")
    sp.add_argument("directory")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
