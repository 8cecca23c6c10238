"""Baseline solvers for accuracy studies.

* ``iu_step`` and ``soe_step``: classic finite-difference schemes for
  ``T_t + v T_x + c (T - T_a) = 0`` on a uniform grid.
* ``reference_simulate``: the semi-discrete TVD grid advanced by a fixed-step
  Dormand-Prince 5 integrator, with a Newton solve of every algebraic
  equation at each stage and the minmod choice re-evaluated at each stage.
* ``error_metrics``: RMSE plus overshoot and front-width indicators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dtseries import DriverProfile
from .network import Pipe
from .newton import NewtonError, newton
from .residuals import algebraic_residuals
from .sas import SIDES, AdaptiveConfig, SimState, steady_state_init
from .system import CoupledSystem, var
from .thermal import flux_operator, grid_size, select_slopes, steady_profile


class ReferenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class FdmScheme:
    kind: str
    dx: float
    dt: float

    def __post_init__(self):
        if self.kind not in ("IU", "SOE"):
            raise ValueError(f"unknown scheme {self.kind!r}")
        if not (self.dx > 0 and self.dt > 0):
            raise ValueError("dx and dt must be > 0")

    def courant(self, v: float) -> float:
        return v * self.dt / self.dx

    def step(self, values, v, boundary, c=0.0, ambient=0.0):
        fn = iu_step if self.kind == "IU" else soe_step
        return fn(values, v, self.dt, self.dx, boundary, c, ambient)


def iu_step(values, v, dt, dx, boundary, c=0.0, ambient=0.0) -> np.ndarray:
    """Implicit upwind: backward difference in time and space, swept from the
    inlet since each node depends only on its new upstream neighbour."""
    old = np.asarray(values, dtype=float)
    new = np.empty_like(old)
    new[0] = boundary
    a = v / dx
    denom = 1.0 / dt + a + c
    for k in range(1, old.size):
        new[k] = (old[k] / dt + a * new[k - 1] + c * ambient) / denom
    return new


def soe_step(values, v, dt, dx, boundary, c=0.0, ambient=0.0) -> np.ndarray:
    """Centred two-level box scheme.

    The source term is the trapezoid along the cell diagonal
    ``(k, n) -> (k+1, n+1)``, so at ``v dt = dx`` each node takes its value
    from the upstream diagonal only and a front is carried without
    smearing or ringing.
    """
    old = np.asarray(values, dtype=float)
    new = np.empty_like(old)
    new[0] = boundary
    it, ix, q = 1.0 / (2 * dt), v / (2 * dx), c / 2
    lead = it + ix + q
    for k in range(1, old.size):
        rest = (new[k - 1] * (it - ix) + old[k] * (-it + ix)
                + old[k - 1] * (-it - ix + q) - c * ambient)
        new[k] = -rest / lead
    return new


def run_fdm(scheme: FdmScheme, initial, v, steps: int, boundary, c=0.0, ambient=0.0):
    """Advance ``steps`` steps; ``boundary(t)`` gives the inlet value."""
    vals = np.array(initial, dtype=float)
    for n in range(1, steps + 1):
        vals = scheme.step(vals, v, boundary(n * scheme.dt), c, ambient)
    return vals


@dataclass(frozen=True)
class Metrics:
    rmse: float
    overshoot: float
    rise_cells: float


def _crossings(z, level):
    """Fractional sample indices where ``z`` crosses ``level``."""
    d = z - level
    out = []
    for i in range(z.size - 1):
        if d[i] == 0:
            out.append(float(i))
        elif d[i] * d[i + 1] < 0:
            out.append(i + d[i] / (d[i] - d[i + 1]))
    if d[-1] == 0:
        out.append(float(z.size - 1))
    return out


def error_metrics(solution, baseline) -> Metrics:
    """Compare a sampled solution with a baseline on the same uniform samples.

    ``overshoot`` is the largest excursion of the solution beyond the
    baseline's range.  ``rise_cells`` is the distance, in sample spacings,
    between the outermost 10% and 90% crossings of the front at the
    baseline's largest jump, levels taken relative to the baseline's range.
    """
    s = np.asarray(solution, dtype=float)
    b = np.asarray(baseline, dtype=float)
    if s.shape != b.shape or s.ndim != 1:
        raise ValueError(f"misaligned samples: {s.shape} vs {b.shape}")
    rmse = float(np.sqrt(np.mean((s - b) ** 2)))
    lo, hi = float(b.min()), float(b.max())
    overshoot = max(float(s.max()) - hi, lo - float(s.min()), 0.0)
    span = hi - lo
    if span == 0 or s.size < 2:
        return Metrics(rmse, overshoot, 0.0)
    z = (s - lo) / span
    jump = int(np.argmax(np.abs(np.diff(b))))
    if b[jump + 1] > b[jump]:
        z, jump = z[::-1], s.size - 2 - jump
    # falling front: bracket it by the nearest plateau samples on each side
    below = np.flatnonzero(z[jump + 1:] <= 0.1)
    i_bot = jump + 1 + int(below[0]) if below.size else z.size - 1
    above = np.flatnonzero(z[:i_bot] >= 0.9)
    i_top = int(above[-1]) if above.size else 0
    seg = z[i_top: i_bot + 1]
    c90, c10 = _crossings(seg, 0.9), _crossings(seg, 0.1)
    x90 = c90[0] if c90 else 0.0
    x10 = c10[-1] if c10 else float(seg.size - 1)
    return Metrics(rmse, overshoot, float(x10 - x90))


# ---------------------------------------------------------------------------
# Dormand-Prince 5

DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])


def dp5_step(rate, t, y, h):
    """One Dormand-Prince step returning the fifth-order solution."""
    ks = []
    for i in range(7):
        yi = y.copy()
        for a, kj in zip(DP_A[i], ks):
            if a:
                yi += h * a * kj
        ks.append(rate(t + DP_C[i] * h, yi, i))
    return y + h * sum(b * k for b, k in zip(DP_B, ks) if b)


def _step_times(horizon, dt, breakpoints):
    """Step ends of a fixed-step march that lands on every breakpoint."""
    marks = sorted({0.0, float(horizon), *[b for b in breakpoints if 0 < b < horizon]})
    out = [0.0]
    for a, b in zip(marks[:-1], marks[1:]):
        n = max(1, int(np.ceil((b - a) / dt - 1e-9)))
        out += list(a + (b - a) * np.arange(1, n + 1) / n)
        out[-1] = b
    return np.array(out)


@dataclass
class ReferenceRun:
    times: np.ndarray
    values: dict[str, np.ndarray]
    grids: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    newton_iterations: int = 0


def _driver_value(profile: DriverProfile, s: float, left: bool) -> float:
    return profile.left_limit(s) if left else float(profile.at(s))


def reference_simulate(system: CoupledSystem, horizon: float, dx: float, dt: float,
                       theta: float = 1.0, initial: SimState | None = None,
                       tol: float = 1e-12) -> ReferenceRun:
    """Fixed-step Dormand-Prince 5 on the semi-discrete TVD grid.

    At every stage the algebraic unknowns are re-solved by a chord Newton
    iteration for the stage's grid temperatures and drivers, and the slope
    choice is recomputed from the stage values.  Raises ``ReferenceError``
    when a pipe flow changes sign.
    """
    config = AdaptiveConfig(dx=dx, theta=theta)
    state = initial if initial is not None else steady_state_init(system, config)
    system = state.system
    index = system.index
    heat = system.heat
    amb = heat.ambient_temperature
    grids = [(p, side) for p in heat.pipes if not p.implicit for side in SIDES]
    sizes = [grid_size(p.length, dx) for p, _ in grids]
    offsets = np.concatenate([[0], np.cumsum([m - 1 for m in sizes])])
    names_y = index.y
    breakpoints = system.breakpoints
    knowns = {n: system.driver(n) for n in index.w}

    y_state = np.concatenate([np.asarray(state.grids[(p.id, s)], dtype=float)[1:] for p, s in grids])
    y_alg = np.array([state.values[n] for n in names_y])
    cache = {"J": None, "iters": 0}

    def solve_algebraic(s, x, left):
        vals = {n: _driver_value(prof, s, left) for n, prof in knowns.items()}
        for g, (p, side) in enumerate(grids):
            vals[var(f"tout_{side}", p.id)] = x[offsets[g + 1] - 1]

        def fun(y):
            v = dict(vals)
            v.update(zip(names_y, y))
            r = algebraic_residuals(system, v)
            return r.residual, r.scale

        try:
            res = newton(fun, solve_algebraic.last, index.rows, tol=tol, jacobian=cache["J"], chord=True,
                         message=f"reference Newton failed at t={s:.6g}")
        except NewtonError as exc:
            raise ReferenceError(str(exc)) from exc
        cache["J"] = res.jacobian
        cache["iters"] += res.iterations
        solve_algebraic.last = res.y
        vals.update(zip(names_y, res.y))
        return vals

    solve_algebraic.last = y_alg

    def node_temps(x, vals):
        out = []
        for g, (p, side) in enumerate(grids):
            inlet = vals[var("ts", p.from_node)] if side == "s" else vals[var("tr", p.to_node)]
            out.append(np.concatenate([[inlet], x[offsets[g]: offsets[g + 1]]]))
        return out

    step_end = {"t": 0.0}

    def rate(s, x, stage):
        left = s >= step_end["t"] and step_end["t"] in breakpoints
        vals = solve_algebraic(s, x, left)
        out = np.empty_like(x)
        for g, ((p, side), T) in enumerate(zip(grids, node_temps(x, vals))):
            mdot = vals[var("m", p.id)]
            if mdot < 0:
                raise ReferenceError(f"flow in pipe {p.id} changed sign at t={s:.6g}")
            h = p.length / (len(T) - 1)
            D = flux_operator(select_slopes(T, h, theta), theta)
            decay = p.heat_transfer / (p.mass_per_length * p.heat_capacity)
            out[offsets[g]: offsets[g + 1]] = mdot / (p.mass_per_length * h) * (D @ T) - decay * (T[1:] - amb)
        return out

    times = _step_times(horizon, dt, breakpoints)
    vals0 = solve_algebraic(0.0, y_state, False)
    records = [_record(vals0, node_temps(y_state, vals0), grids)]
    for t0, t1 in zip(times[:-1], times[1:]):
        step_end["t"] = t1
        y_state = dp5_step(rate, t0, y_state, t1 - t0)
        step_end["t"] = np.inf
        vals = solve_algebraic(t1, y_state, False)
        records.append(_record(vals, node_temps(y_state, vals), grids))
    names = list(records[0][0])
    values = {n: np.array([r[0][n] for r in records]) for n in names}
    grid_out = {(p.id, side): np.array([r[1][g] for r in records]) for g, (p, side) in enumerate(grids)}
    return ReferenceRun(times, values, grid_out, cache["iters"])


def _record(vals, temps, grids):
    out = dict(vals)
    for (p, side), T in zip(grids, temps):
        out[var(f"tin_{side}", p.id)] = float(T[0])
        out[var(f"tout_{side}", p.id)] = float(T[-1])
    return out, [np.array(T) for T in temps]


def reference_pipe(pipe: Pipe, boundary: DriverProfile, mdot: float, horizon: float, dx: float,
                   dt: float, theta: float = 1.0, ambient: float = 0.0, initial=None):
    """Single pipe with constant flow on the TVD grid, Dormand-Prince 5.

    Returns ``(times, values)`` with node values at every step end.
    """
    M = grid_size(pipe.length, dx)
    h = pipe.length / (M - 1)
    if initial is None:
        initial = steady_profile(pipe, float(boundary.at(0.0)), mdot, dx, theta, ambient)
    x = np.array(initial, dtype=float)[1:]
    decay = pipe.heat_transfer / (pipe.mass_per_length * pipe.heat_capacity)
    coef = mdot / (pipe.mass_per_length * h)
    step_end = {"t": 0.0}
    bps = boundary.breakpoints

    def rate(s, y, stage):
        left = s >= step_end["t"] and step_end["t"] in bps
        T = np.concatenate([[_driver_value(boundary, s, left)], y])
        D = flux_operator(select_slopes(T, h, theta), theta)
        return coef * (D @ T) - decay * (T[1:] - ambient)

    times = _step_times(horizon, dt, bps)
    out = [np.concatenate([[float(boundary.at(0.0))], x])]
    for t0, t1 in zip(times[:-1], times[1:]):
        step_end["t"] = t1
        x = dp5_step(rate, t0, x, t1 - t0)
        out.append(np.concatenate([[float(boundary.at(t1))], x]))
    return times, np.array(out)
