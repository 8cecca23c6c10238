"""Command-line front end: ``python -m heies --config scenario.json``.

Exit codes: 0 success, 2 invalid input, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .io import (
    SOLVERS,
    ConfigError,
    Scenario,
    configured_view,
    emit_trajectory,
    load_scenario,
    perturb_drivers,
    residual_report,
    sample_times,
    state_from_trajectory,
    write_summary,
    write_trajectory,
)
from .network import BusKind, NetworkError, NodeKind
from .newton import NewtonError
from .reference import FdmScheme, ReferenceError, reference_pipe, reference_simulate, run_fdm
from .sas import DivergenceError, SteadyStateError, grid_name, simulate, simulate_pipe, steady_state_init
from .system import CoupledSystem, var
from .thermal import grid_size, reference_exact, steady_profile

log = logging.getLogger("heies")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="python -m heies", description="Quasi-dynamic heat/electricity energy flow.")
    p.add_argument("--config", required=True, type=Path, help="scenario JSON")
    p.add_argument("--solver", choices=SOLVERS, help="overrides the scenario's solver")
    p.add_argument("--order", type=int, dest="K", help="Taylor order K")
    p.add_argument("--theta", type=float)
    p.add_argument("--dx", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--rtol", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--seed", type=int, help="perturb driver breakpoint values with seeded noise")
    p.add_argument("--load-scale-sweep", metavar="LO:HI:STEP", help="rerun with all loads scaled")
    return p


def _sweep_scales(spec: str) -> list[float]:
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ConfigError(f"--load-scale-sweep expects lo:hi:step, got {spec!r}") from None
    if not (step > 0 and hi >= lo > 0):
        raise ConfigError("--load-scale-sweep needs 0 < lo <= hi and step > 0")
    n = int(np.floor((hi - lo) / step + 1e-9))
    return [round(lo + i * step, 12) for i in range(n + 1)]


def scale_loads(system: CoupledSystem, factor: float) -> CoupledSystem:
    """Scale the heat demand of load nodes and the demand at PQ buses."""
    names = [var("phi", n.id) for n in system.heat.nodes if n.kind is NodeKind.LOAD]
    if system.electric is not None:
        for b in system.electric.buses:
            if b.kind is BusKind.PQ:
                names += [var("p", b.id), var("q", b.id)]
    known = set(system.index.w)
    drivers = dict(system.drivers)
    for name in names:
        if name in known:
            drivers[name] = system.driver(name).scaled(factor)
    return system.with_drivers(drivers)


def _with_noise(system: CoupledSystem, seed: int | None, level: float) -> CoupledSystem:
    if seed is None:
        return system
    rng = np.random.default_rng(seed)
    return system.with_drivers(perturb_drivers(system.drivers, rng, level))


# ---------------------------------------------------------------------------
# pipelines


def run_network(sc: Scenario, system: CoupledSystem, args, out: Path) -> int:
    config = sc.config(K=args.K, theta=args.theta, dx=args.dx, atol=args.atol, rtol=args.rtol)
    out.mkdir(parents=True, exist_ok=True)
    if sc.initial is not None:
        state = state_from_trajectory(system, sc.initial, config)
    else:
        state = steady_state_init(system, config)
    solver = args.solver or sc.solver
    if solver == "dt":
        result = simulate(system, sc.horizon, config, initial=state)
        samples, _ = emit_trajectory(result, sc.cadence, out / "trajectory.csv")
        report = residual_report(samples, out / "residuals.csv")
        summary = dict(result.summary())
        wall = summary.pop("wall_time_s")
        summary["max_residual"] = report["max"]
        summary["wall_time_s"] = wall
        write_summary(out / "summary.csv", summary)
        log.info("dt: %d windows, %d rejections, max residual %.3e", result.window_starts,
                 result.rejections, report["max"])
        return EXIT_OK
    step = sc.reference_dt or 10.0
    tic = time.perf_counter()
    ref = reference_simulate(system, sc.horizon, config.dx, step, config.theta, initial=state)
    wall = time.perf_counter() - tic
    rows, samples = [], []
    for i, t in enumerate(ref.times):
        values = {k: v[i] for k, v in ref.values.items()}
        grids = {k: g[i] for k, g in ref.grids.items()}
        samples.append((float(t), state.system, values))
        view = configured_view(system, state.system, values, grids)
        rows += [(float(t), k, view[k]) for k in sorted(view)]
    write_trajectory(out / "trajectory.csv", rows)
    report = residual_report(samples, out / "residuals.csv")
    write_summary(out / "summary.csv", {"steps": len(ref.times) - 1, "newton_iterations": ref.newton_iterations,
                                        "max_residual": report["max"], "wall_time_s": wall})
    return EXIT_OK


def run_pipe(sc: Scenario, args, out: Path) -> int:
    pt = sc.pipe_test
    config = sc.config(K=args.K, theta=args.theta, dx=args.dx, atol=args.atol, rtol=args.rtol)
    pipe, boundary = pt.pipe, pt.boundary
    if args.seed is not None:
        boundary = perturb_drivers({"b": boundary}, np.random.default_rng(args.seed), sc.noise)["b"]
    M = grid_size(pipe.length, config.dx)
    x = np.linspace(0.0, pipe.length, M)
    if pt.initial is not None:
        initial = np.asarray(pt.initial.at(x), dtype=float)
    else:
        initial = steady_profile(pipe, float(boundary.at(0.0)), pt.mdot, config.dx, config.theta, pt.ambient)
    times = sample_times(sc.horizon, sc.cadence)
    v = pt.mdot / pipe.mass_per_length
    c = pipe.heat_transfer / (pipe.mass_per_length * pipe.heat_capacity)
    solver = args.solver or sc.solver
    tic = time.perf_counter()
    summary: dict = {}
    if solver == "dt":
        run = simulate_pipe(pipe, boundary, pt.mdot, sc.horizon, config, pt.ambient, initial, times[1:])
        values = np.vstack([initial, run.values])
        summary.update(windows=run.windows, rejections=run.rejections, guards=run.guards)
    elif solver == "exact":
        init_fn = None if pt.initial is None else pt.initial.at
        values = np.array([reference_exact(boundary, pipe, x, t, pt.mdot, pt.ambient, init_fn) for t in times])
    elif solver == "ref":
        step = sc.reference_dt or 0.5 * (x[1] - x[0]) / v
        t_ref, v_ref = reference_pipe(pipe, boundary, pt.mdot, sc.horizon, config.dx, step,
                                      config.theta, pt.ambient, initial)
        idx = [int(np.argmin(np.abs(t_ref - t))) for t in times]
        values = v_ref[idx]
        times = [float(t_ref[i]) for i in idx]
    else:
        step = sc.reference_dt or (x[1] - x[0]) / v
        scheme = FdmScheme(solver.upper(), x[1] - x[0], step)
        vals, rows_v = initial.copy(), [initial.copy()]
        n_done = 0
        for t in times[1:]:
            n = int(round(t / step))
            vals = run_fdm(scheme, vals, v, n - n_done, lambda s, o=n_done * step: float(boundary.at(o + s)),
                           c, pt.ambient)
            n_done = n
            rows_v.append(vals.copy())
        values = np.array(rows_v)
        summary["courant"] = scheme.courant(v)
    summary["wall_time_s"] = time.perf_counter() - tic
    out.mkdir(parents=True, exist_ok=True)
    rows = [(float(t), grid_name("s", pipe.id, j), float(val))
            for t, row in zip(times, values) for j, val in enumerate(row)]
    write_trajectory(out / "trajectory.csv", rows)
    write_summary(out / "summary.csv", summary)
    return EXIT_OK


def run_cli(argv=None) -> int:
    level = os.environ.get("HEIES_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        sc = load_scenario(args.config)
        if args.horizon is not None:
            sc.horizon = args.horizon
            sc.__post_init__()
        if args.solver is not None:
            sc.solver = args.solver
            sc.__post_init__()
        if sc.pipe_test is not None:
            if args.load_scale_sweep:
                raise ConfigError("--load-scale-sweep needs a network scenario")
            return run_pipe(sc, args, args.out)
        base = _with_noise(sc.system, args.seed, sc.noise)
        if not args.load_scale_sweep:
            return run_network(sc, base, args, args.out)
        for s in _sweep_scales(args.load_scale_sweep):
            log.info("load scale %.2f", s)
            code = run_network(sc, scale_loads(base, s), args, args.out / f"scale_{s:.2f}")
            if code:
                return code
        return EXIT_OK
    except (ConfigError, NetworkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DivergenceError, SteadyStateError, ReferenceError, NewtonError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def main():
    sys.exit(run_cli())
