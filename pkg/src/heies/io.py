"""JSON scenarios and CSV outputs.

Trajectories are long-format CSV (``time_s,variable,value``).  Every pipe
quantity is reported in the orientation given in the network file: a flow
against that direction is negative, and grid nodes, ``tin`` and ``tout`` are
numbered from the configured inlet end even after the pipe reversed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .dtseries import PROFILE_KINDS, DriverProfile
from .network import (
    Branch,
    Bus,
    CouplingUnit,
    ElectricNetwork,
    HeatNetwork,
    HeatNode,
    NetworkError,
    Pipe,
)
from .residuals import algebraic_residuals
from .sas import SIDES, AdaptiveConfig, SimState, grid_name
from .system import CoupledSystem, split_var, var
from .thermal import grid_size


class ConfigError(ValueError):
    """Invalid or unreadable scenario input."""


SOLVERS = ("dt", "iu", "soe", "ref", "exact")
HEADER = ("time_s", "variable", "value")


def _num(x) -> str:
    return repr(float(x))


def read_json(path) -> dict:
    p = Path(path)
    try:
        with p.open() as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {p}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from None


def _build(cls, data: Mapping[str, Any], what: str):
    allowed = {f.name for f in fields(cls)}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"{what}: unknown field(s) {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def profile_from_json(data, name: str = "?") -> DriverProfile:
    """A number is a constant; otherwise an object with a ``kind``."""
    if isinstance(data, (int, float)):
        return DriverProfile.constant(float(data), binding=name)
    if not isinstance(data, Mapping) or data.get("kind") not in PROFILE_KINDS:
        raise ConfigError(f"driver {name}: expected a number or an object with kind in {PROFILE_KINDS}")
    body = {k: (float(v) if isinstance(v, str) and v in ("inf", "-inf") else v) for k, v in data.items()}
    return _build(DriverProfile, {**body, "binding": name}, f"driver {name}")


def profile_to_json(p: DriverProfile) -> dict:
    out: dict[str, Any] = {"kind": p.kind}
    if p.kind == "constant":
        out["value"] = p.value
    elif p.kind in ("step", "piecewise-linear"):
        out.update(times=list(p.times), values=list(p.values))
    elif p.kind == "sinusoid":
        out.update(offset=p.offset, amplitude=p.amplitude, period=p.period, phase=p.phase,
                   start=p.start if math.isfinite(p.start) else str(p.start),
                   end=p.end if math.isfinite(p.end) else str(p.end))
    else:
        out["coefficients"] = list(p.coefficients)
    return out


def system_from_json(data: Mapping[str, Any], drivers: Mapping[str, DriverProfile] | None = None) -> CoupledSystem:
    try:
        nodes = [_build(HeatNode, d, f"heat node {d.get('id')}") for d in data["heat_nodes"]]
        pipes = [_build(Pipe, d, f"pipe {d.get('id')}") for d in data["pipes"]]
    except KeyError as exc:
        raise ConfigError(f"network: missing {exc.args[0]!r}") from None
    try:
        heat = HeatNetwork(nodes, pipes, ambient_temperature=float(data.get("ambient_temperature", 10.0)),
                           heat_capacity=float(data.get("heat_capacity", 4182.0)))
        electric = None
        if data.get("buses"):
            buses = [_build(Bus, d, f"bus {d.get('id')}") for d in data["buses"]]
            if "branches" in data:
                branches = [_build(Branch, d, "branch") for d in data["branches"]]
                electric = ElectricNetwork.from_branches(buses, branches)
            elif "G" in data and "B" in data:
                electric = ElectricNetwork(tuple(buses), np.array(data["G"]), np.array(data["B"]))
            else:
                raise ConfigError("network: buses need either branches or G and B")
        couplings = tuple(_build(CouplingUnit, d, "coupling") for d in data.get("couplings", ()))
        return CoupledSystem(heat, electric, couplings, dict(drivers or {}))
    except NetworkError as exc:
        raise ConfigError(f"network: {exc}") from None


@dataclass
class PipeTest:
    """One pipe with constant flow and a driven inlet temperature."""

    pipe: Pipe
    boundary: DriverProfile
    mdot: float
    ambient: float = 0.0
    initial: DriverProfile | None = None


@dataclass
class Scenario:
    horizon: float
    cadence: float
    solver: str = "dt"
    system: CoupledSystem | None = None
    pipe_test: PipeTest | None = None
    adaptive: dict = field(default_factory=dict)
    reference_dt: float | None = None
    noise: float = 0.02
    initial: Path | None = None
    source: Path | None = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("horizon must be > 0")
        if not self.cadence > 0:
            raise ConfigError("cadence must be > 0")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}")
        if (self.system is None) == (self.pipe_test is None):
            raise ConfigError("give exactly one of network and pipe_test")
        if self.system is None and self.initial is not None:
            raise ConfigError("an initial-state file needs a network scenario")
        if self.system is not None and self.solver in ("iu", "soe", "exact"):
            raise ConfigError(f"solver {self.solver!r} only runs pipe_test scenarios")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")

    def config(self, **overrides) -> AdaptiveConfig:
        opts = {**self.adaptive, **{k: v for k, v in overrides.items() if v is not None}}
        try:
            return AdaptiveConfig(**opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"adaptive settings: {exc}") from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    data = read_json(path)
    base = path.parent
    drivers = {k: profile_from_json(v, k) for k, v in data.get("drivers", {}).items()}
    system = pipe_test = None
    if "network" in data:
        net = data["network"]
        if isinstance(net, str):
            net = read_json(base / net)
        system = system_from_json(net, drivers)
    if "pipe_test" in data:
        pt = dict(data["pipe_test"])
        try:
            pipe = _build(Pipe, pt.pop("pipe"), "pipe_test pipe")
            boundary = profile_from_json(pt.pop("boundary"), "boundary")
            init = pt.pop("initial", None)
            pipe_test = _build(PipeTest, {
                **pt, "pipe": pipe, "boundary": boundary,
                "initial": None if init is None else profile_from_json(init, "initial"),
            }, "pipe_test")
        except KeyError as exc:
            raise ConfigError(f"pipe_test: missing {exc.args[0]!r}") from None
    try:
        horizon = float(data["horizon"])
    except KeyError:
        raise ConfigError("scenario: missing 'horizon'") from None
    initial = data.get("initial")
    return Scenario(
        horizon=horizon,
        cadence=float(data.get("cadence", horizon)),
        solver=data.get("solver", "dt"),
        system=system,
        pipe_test=pipe_test,
        adaptive=dict(data.get("adaptive", {})),
        reference_dt=data.get("reference_dt"),
        noise=float(data.get("noise", 0.02)),
        initial=None if initial is None else base / initial,
        source=path,
    )


def perturb_drivers(drivers: Mapping[str, DriverProfile], rng: np.random.Generator,
                    level: float) -> dict[str, DriverProfile]:
    """Multiply every breakpoint value by ``1 + U(-level, level)``.

    Profiles without breakpoint values are left alone.  Names are visited in
    sorted order so that a seed fixes the outcome.
    """
    out = {}
    for name in sorted(drivers):
        p = drivers[name]
        if p.kind in ("step", "piecewise-linear") and level > 0:
            noise = rng.uniform(-level, level, size=len(p.values))
            p = DriverProfile(p.kind, times=p.times, values=tuple(np.array(p.values) * (1 + noise)),
                              binding=p.binding)
        out[name] = p
    return out


# ---------------------------------------------------------------------------
# trajectories


def sample_times(horizon: float, cadence: float, boundaries: Iterable[float] = ()) -> list[float]:
    n = int(math.floor(horizon / cadence + 1e-9))
    ticks = {min(i * cadence, horizon) for i in range(n + 1)}
    ticks.update(b for b in boundaries if 0 <= b <= horizon)
    ticks.add(float(horizon))
    return sorted(ticks)


def configured_view(base: CoupledSystem, system: CoupledSystem, values: Mapping[str, float],
                    grids: Mapping[tuple[str, str], np.ndarray]) -> dict[str, float]:
    """Named values in the orientation of ``base``.

    ``values`` and ``grids`` belong to ``system``, which may have some pipes
    flipped relative to ``base``.
    """
    flipped = {p.id for p, q in zip(system.heat.pipes, base.heat.pipes) if p.reversed != q.reversed}
    on_grid = {pid for pid, _ in grids}
    out = {}
    for name, v in values.items():
        family, ident = split_var(name)
        if family in ("tout_s", "tout_r", "tin_s", "tin_r") and ident in on_grid:
            continue
        if family == "m" and ident in flipped:
            v = -v
        out[name] = float(v)
    for (pid, side), g in grids.items():
        g = np.asarray(g, dtype=float)
        if pid in flipped:
            g = g[::-1]
        out[var(f"tin_{side}", pid)] = float(g[0])
        out[var(f"tout_{side}", pid)] = float(g[-1])
        for j, x in enumerate(g):
            out[grid_name(side, pid, j)] = float(x)
    return out


def write_trajectory(path, rows: Iterable[tuple[float, str, float]]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for t, name, v in rows:
            w.writerow((_num(t), name, _num(v)))


def emit_trajectory(result, cadence: float, path=None):
    """Sample a SAS run at cadence ticks and at every window boundary.

    Returns ``(samples, rows)`` where ``samples`` are
    ``(t, system, values, grids)`` tuples; writes the CSV when ``path`` is
    given.
    """
    times = sample_times(result.horizon, cadence, result.boundaries())
    samples = result.sample(times)
    rows = []
    for t, system, values, grids in samples:
        view = configured_view(result.system, system, values, grids)
        rows += [(t, k, view[k]) for k in sorted(view)]
    if path is not None:
        write_trajectory(path, rows)
    return samples, rows


def read_trajectory(path) -> dict[float, dict[str, float]]:
    out: dict[float, dict[str, float]] = {}
    try:
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r, None)
            if tuple(header or ()) != HEADER:
                raise ConfigError(f"{path}: expected header {','.join(HEADER)}")
            for row in r:
                t, name, v = row
                out.setdefault(float(t), {})[name] = float(v)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return out


def state_from_trajectory(system: CoupledSystem, path, config: AdaptiveConfig, t: float = 0.0) -> SimState:
    """Rebuild a simulation state from the rows of a trajectory CSV at ``t``.

    Pipes whose stored flow is negative are reversed first.
    """
    table = read_trajectory(path)
    if t not in table:
        raise ConfigError(f"{path}: no samples at t={t}")
    rows = table[t]
    try:
        flipped = [p.id for p in system.heat.pipes if rows[var("m", p.id)] < 0]
        current = system.with_reversed(flipped) if flipped else system
        values = {}
        for name in current.index.slots:
            family, ident = split_var(name)
            if family in ("tout_s", "tout_r") and not current.heat.pipes[current.heat.pipe_index(ident)].implicit:
                continue
            v = rows[name]
            values[name] = -v if family == "m" and ident in flipped else v
        grids = {}
        for p in current.heat.pipes:
            if p.implicit:
                continue
            for side in SIDES:
                g, j = [], 0
                while grid_name(side, p.id, j) in rows:
                    g.append(rows[grid_name(side, p.id, j)])
                    j += 1
                g = np.array(g)
                if p.id in flipped:
                    g = g[::-1]
                grids[(p.id, side)] = g
                values[var(f"tout_{side}", p.id)] = float(g[-1])
    except KeyError as exc:
        raise ConfigError(f"{path}: missing value for {exc.args[0]}") from None
    for (pid, side), g in grids.items():
        M = grid_size(current.heat.pipes[current.heat.pipe_index(pid)].length, config.dx)
        if g.size != M:
            raise ConfigError(f"{path}: pipe {pid} has {g.size} grid nodes, dx={config.dx} needs {M}")
    return SimState(t, current, values, grids)


# ---------------------------------------------------------------------------
# reports


def residual_report(samples, path=None) -> dict[str, float]:
    """Largest scaled imbalance per equation family over all samples.

    ``samples`` holds ``(t, system, values, ...)`` tuples with values in the
    sample's own orientation.  The ``max`` entry is the headline figure.
    """
    report: dict[str, float] = {}
    for sample in samples:
        system, values = sample[1], sample[2]
        for fam, v in algebraic_residuals(system, values).by_family().items():
            report[fam] = max(report.get(fam, 0.0), v)
    report["max"] = max(report.values(), default=0.0)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("family", "max_scaled_imbalance"))
            for fam, v in report.items():
                w.writerow((fam, _num(v)))
    return report


def write_summary(path, entries: Mapping[str, Any]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("key", "value"))
        for k, v in entries.items():
            w.writerow((k, _num(v) if isinstance(v, float) else v))
