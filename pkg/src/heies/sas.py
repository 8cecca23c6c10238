"""Adaptive window-by-window simulation with Taylor-series solutions.

Each window starts from a consistent state.  Slopes are frozen, the
window matrix is factorized once and the coefficients of every variable are
produced level by level:

1. grid temperatures of level k from the lower levels,
2. algebraic unknowns of level k from one back-substitution,
3. pipe inlet temperatures of level k copied from the node temperatures.

The highest computed level doubles as the error estimate.  Because the
coefficients do not depend on the window length, a rejected attempt only
re-evaluates the estimate with a shorter window.
"""

from __future__ import annotations

import bisect
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .algebraic import TermTable, build_and_factorize
from .dtseries import derive_driver_dt, evaluate, first_root_in_window
from .network import NetworkError, NodeKind, Pipe
from .newton import newton
from .residuals import algebraic_residuals
from .system import CoupledSystem, var
from .thermal import PipeGrid, dt_pde_coefficient, freeze_slopes, grid_size, steady_profile

log = logging.getLogger(__name__)

SIDES = ("s", "r")


class DivergenceError(RuntimeError):
    """The step controller could not meet the tolerances above ``dt_min``."""


class SteadyStateError(RuntimeError):
    """Steady-state Newton iteration failed."""


@dataclass(frozen=True)
class AdaptiveConfig:
    K: int = 6
    atol: float = 1e-9
    rtol: float = 1e-9
    fac: float = 0.9
    fac_min: float = 0.5
    fac_max: float = 2.0
    dt_init: float = 10.0
    dt_min: float = 1e-3
    dt_max: float = 900.0
    theta: float = 1.0
    dx: float = 100.0
    guard_ratio: float = 1e-6
    sparse_threshold: int = 500

    def __post_init__(self):
        if not 0 < self.fac < 1 <= self.fac_max:
            raise ValueError("need 0 < fac < 1 <= fac_max")
        if not 0 < self.fac_min < 1:
            raise ValueError("need 0 < fac_min < 1")
        if not self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need dt_min <= dt_init <= dt_max")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 1 <= self.theta <= 2:
            raise ValueError("theta must lie in [1, 2]")
        if self.atol < 0 or self.rtol < 0:
            raise ValueError("tolerances must be >= 0")
        if not self.dx > 0:
            raise ValueError("dx must be > 0")


# ---------------------------------------------------------------------------
# step control


def error_estimate(coefficients, dt: float, config: AdaptiveConfig, order: int | None = None) -> float:
    """RMS of the weighted Lagrange remainder.

    ``coefficients`` is ``(levels, n)``; the remainder is the coefficient of
    ``order`` (the last level by default) times ``dt**order`` and the
    weights use the values at both window ends, evaluated with all levels up
    to ``order``.
    """
    C = np.asarray(coefficients, dtype=float)
    if order is None:
        order = C.shape[0] - 1
    if C.shape[1] == 0:
        return 0.0
    remainder = C[order] * dt ** order
    x0 = C[0]
    x1 = evaluate(C[: order + 1], dt)
    eps = config.atol + np.minimum(np.abs(x0), np.abs(x1)) * config.rtol
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(remainder == 0, 0.0, remainder / eps)
    return float(np.sqrt(np.mean(ratio ** 2)))


def next_step_size(dt: float, err: float, K: int, config: AdaptiveConfig) -> float:
    """Controller proposal ``dt*fac*(1/err)**(1/(K+1))`` clamped to the growth limits."""
    if err == 0:
        return config.fac_max * dt
    proposal = dt * config.fac * (1.0 / err) ** (1.0 / (K + 1))
    return min(config.fac_max * dt, max(config.fac_min * dt, proposal))


def degenerate_order_guard(coefficients, K: int, dt: float, config: AdaptiveConfig) -> int:
    """Order of the remainder to use: ``K + 1`` normally, ``K + 2`` when level
    ``K + 1`` vanishes against a nonzero level ``K`` (odd/even Taylor terms of
    sinusoids)."""
    C = np.asarray(coefficients, dtype=float)
    top = error_estimate(C[: K + 2], dt, config, order=K + 1)
    below = error_estimate(C[: K + 2], dt, config, order=K)
    if below > 0 and top <= config.guard_ratio * below:
        return K + 2
    return K + 1


def clip_step(dt: float, t: float, horizon: float, breakpoints, config: AdaptiveConfig):
    """Window length actually used and its end time."""
    dt = min(max(dt, config.dt_min), config.dt_max)
    t_end = t + dt
    clipped = False
    for b in breakpoints:
        if b > t and b <= t_end * (1 + 1e-15):
            t_end = b
            clipped = True
            break
    if horizon <= t_end:
        t_end = horizon
        clipped = True
    return t_end - t, t_end, clipped


# ---------------------------------------------------------------------------
# state and layout


@dataclass
class SimState:
    """Consistent values at one instant.

    ``values`` covers every named scalar (unknowns and knowns); ``grids``
    holds node temperatures of each pipe side with the inlet at index 0.
    """

    t: float
    system: CoupledSystem
    values: dict[str, float]
    grids: dict[tuple[str, str], np.ndarray]


@dataclass
class GridSlot:
    pipe: Pipe
    side: str
    M: int
    flow: int
    inlet: int
    outlet: int


class Layout:
    """Slot bookkeeping for one network orientation."""

    def __init__(self, system: CoupledSystem, config: AdaptiveConfig):
        self.system = system
        self.index = index = system.index
        self.table = TermTable.build(system)
        self.ny = len(index.y)
        self.slot = index.slot
        self.slots = index.slots
        heat = system.heat
        self.grids: list[GridSlot] = []
        for p in heat.pipes:
            if p.implicit:
                continue
            M = grid_size(p.length, config.dx)
            flow = self.slot[var("m", p.id)]
            self.grids.append(GridSlot(p, "s", M, flow, self.slot[var("ts", p.from_node)],
                                       self.slot[var("tout_s", p.id)]))
            self.grids.append(GridSlot(p, "r", M, flow, self.slot[var("tr", p.to_node)],
                                       self.slot[var("tout_r", p.id)]))
        self.w_slots = np.array([self.slot[n] for n in index.w], dtype=int)

    def slot_values(self, values) -> np.ndarray:
        return np.array([values[n] for n in self.slots], dtype=float)


_layouts: dict[tuple[int, int], Layout] = {}


def layout_for(system: CoupledSystem, config: AdaptiveConfig) -> Layout:
    key = (id(system), hash(config))
    lay = _layouts.get(key)
    if lay is None or lay.system is not system:
        lay = Layout(system, config)
        if len(_layouts) > 64:
            _layouts.clear()
        _layouts[key] = lay
    return lay


def grid_name(side: str, pipe_id: str, j: int) -> str:
    return f"grid_{side}[{pipe_id}#{j}]"


# ---------------------------------------------------------------------------
# windows


@dataclass
class WindowResult:
    t_start: float
    dt: float
    system: CoupledSystem
    slots: tuple[str, ...]
    n_y: int
    S: np.ndarray
    grids: dict[tuple[str, str], np.ndarray]
    err: float
    accepted: bool
    attempts: int
    factorizations: int
    order_used: int
    guard: bool
    dt_tried: list[float] = field(default_factory=list)
    dt_proposed: float = math.nan
    reversal_event: tuple[tuple[str, ...], float] | None = None
    reversal_full_dt: float | None = None

    @property
    def t_end(self) -> float:
        return self.t_start + self.dt

    @property
    def Y(self) -> np.ndarray:
        return self.S[:, : self.n_y]

    @property
    def X(self) -> np.ndarray:
        """Coefficients of every grid node past the inlet, all pipe sides."""
        return np.concatenate([g[:, 1:] for g in self.grids.values()], axis=1)

    @property
    def Z(self) -> np.ndarray:
        return np.stack([g[:, 0] for g in self.grids.values()], axis=1)

    def coefficients_of(self, name: str) -> np.ndarray:
        if name in self.slots:
            return self.S[:, self.slots.index(name)]
        family, ident = name.split("[", 1)
        ident = ident[:-1]
        if family in ("tin_s", "tin_r"):
            return self.grids[(ident, family[-1])][:, 0]
        if family.startswith("grid_"):
            pid, j = ident.rsplit("#", 1)
            return self.grids[(pid, family[-1])][:, int(j)]
        raise KeyError(name)

    def values_at(self, tau: float) -> dict[str, float]:
        vals = dict(zip(self.slots, evaluate(self.S, tau)))
        for (pid, side), g in self.grids.items():
            vals[var(f"tin_{side}", pid)] = float(evaluate(g[:, 0], tau))
        return {k: float(v) for k, v in vals.items()}

    def grids_at(self, tau: float) -> dict[tuple[str, str], np.ndarray]:
        return {k: evaluate(g, tau) for k, g in self.grids.items()}

    def state_at(self, tau: float) -> SimState:
        return SimState(self.t_start + tau, self.system, self.values_at(tau), self.grids_at(tau))


class WindowSeries:
    """Coefficient recursion of one window start."""

    def __init__(self, layout: Layout, state: SimState, config: AdaptiveConfig):
        self.layout = layout
        self.config = config
        self.levels = config.K + 3
        lay = layout
        system = lay.system
        S = np.zeros((self.levels, len(lay.slots)))
        S[0] = lay.slot_values(state.values)
        for s, name in zip(lay.w_slots, lay.index.w):
            S[:, s] = derive_driver_dt(system.driver(name), state.t, self.levels - 1)
        self.S = S
        self.grids: list[PipeGrid] = []
        for gs in lay.grids:
            p = gs.pipe
            values = np.array(state.grids[(p.id, gs.side)], dtype=float)
            values[0] = S[0, gs.inlet]
            S[0, gs.outlet] = values[-1]
            grid = PipeGrid.for_pipe(p, gs.side, config.dx, config.theta,
                                     system.heat.ambient_temperature, values, self.levels - 1)
            self.grids.append(freeze_slopes(grid, config.theta))
        self.matrix = build_and_factorize(lay.table.matrix(S[0]), lay.table.labels,
                                          sparse_threshold=config.sparse_threshold)
        self.computed = 0

    def extend(self, order: int):
        lay, S = self.layout, self.S
        ny = lay.ny
        for k in range(self.computed + 1, order + 1):
            # step 1: grid nodes past the inlet
            for gs, grid in zip(lay.grids, self.grids):
                grid.coefficients[k, 1:] = dt_pde_coefficient(grid, S[:k, gs.flow], k - 1)
                S[k, gs.outlet] = grid.coefficients[k, -1]
            # step 2: algebraic unknowns
            S[k, :ny] = 0.0
            rhs = -lay.table.residual(S, k)
            S[k, :ny] = self.matrix.solve(rhs)
            # step 3: pipe inlets follow their node temperatures
            for gs, grid in zip(lay.grids, self.grids):
                grid.coefficients[k, 0] = S[k, gs.inlet]
            self.computed = k

    def estimate_block(self, order: int) -> np.ndarray:
        parts = [g.coefficients[: order + 1, 1:] for g in self.grids]
        parts.append(self.S[: order + 1, : self.layout.ny])
        return np.concatenate(parts, axis=1)


def run_window(system: CoupledSystem, state: SimState, dt: float, config: AdaptiveConfig,
               layout: Layout | None = None) -> WindowResult:
    """Compute one window and shrink it until the error estimate passes.

    Raises ``DivergenceError`` when the proposal falls below ``dt_min``.
    """
    lay = layout or layout_for(system, config)
    K = config.K
    series = WindowSeries(lay, state, config)
    series.extend(K + 1)
    attempts = 0
    tried = []
    while True:
        attempts += 1
        tried.append(dt)
        order = degenerate_order_guard(series.estimate_block(K + 1), K, dt, config)
        if order > series.computed:
            series.extend(order)
        err = error_estimate(series.estimate_block(order), dt, config, order=order)
        if err <= 1.0:
            break
        new = next_step_size(dt, err, order - 1, config)
        log.debug("t=%.6g reject dt=%.6g err=%.3g -> %.6g", state.t, dt, err, new)
        if new < config.dt_min:
            raise DivergenceError(
                f"step size {new:.3e} s below dt_min={config.dt_min:g} s at t={state.t:.6g} s "
                f"(err={err:.3e})"
            )
        dt = new
    levels = series.computed + 1
    grids = {(g.pipe_id, g.side): g.coefficients[:levels].copy() for g in series.grids}
    return WindowResult(
        t_start=state.t,
        dt=dt,
        system=system,
        slots=lay.slots,
        n_y=lay.ny,
        S=series.S[:levels].copy(),
        grids=grids,
        err=err,
        accepted=True,
        attempts=attempts,
        factorizations=1,
        order_used=order,
        guard=order == K + 2,
        dt_tried=tried,
        dt_proposed=next_step_size(dt, err, order - 1, config),
    )


# ---------------------------------------------------------------------------
# flow reversal


def handle_reversal(window: WindowResult):
    """Truncate a window at the first flow sign change.

    Returns ``None`` when no pipe ends the window with negative flow.
    Otherwise returns ``(pipe_ids, t_prime)`` for the pipes whose flow
    reaches zero first; the window's ``dt`` is set to ``t_prime``.
    """
    system = window.system
    roots = {}
    for p in system.heat.pipes:
        c = window.coefficients_of(var("m", p.id))
        if evaluate(c, window.dt) >= 0:
            continue
        if c[0] <= 0:
            roots[p.id] = 0.0
            continue
        t = first_root_in_window(c, window.dt)
        if t is None:
            from scipy.optimize import brentq

            t = brentq(lambda s: float(evaluate(c, s)), 0.0, window.dt, xtol=1e-14)
        roots[p.id] = t
    if not roots:
        return None
    t_first = min(roots.values())
    tol = 1e-9 * max(window.dt, 1e-12)
    pipes = tuple(pid for pid, t in roots.items() if t <= t_first + tol)
    window.reversal_full_dt = window.dt
    window.dt = t_first
    window.reversal_event = (pipes, t_first)
    return pipes, t_first


def reorient_state(state: SimState, pipe_ids) -> SimState:
    """Flip the listed pipes in the state and its system."""
    system = state.system.with_reversed(pipe_ids)
    values = dict(state.values)
    grids = dict(state.grids)
    for pid in pipe_ids:
        values[var("m", pid)] = -values[var("m", pid)]
        for side in SIDES:
            key = (pid, side)
            if key in grids:
                grids[key] = np.array(grids[key][::-1])
                values[var(f"tout_{side}", pid)] = float(grids[key][-1])
    return _sync_inlets(SimState(state.t, system, values, grids))


def _sync_inlets(state: SimState) -> SimState:
    for p in state.system.heat.pipes:
        if p.implicit:
            continue
        for side, family, node in (("s", "ts", p.from_node), ("r", "tr", p.to_node)):
            g = state.grids[(p.id, side)]
            g[0] = state.values[var(family, node)]
            state.values[var(f"tin_{side}", p.id)] = float(g[0])
            state.values[var(f"tout_{side}", p.id)] = float(g[-1])
    return state


# ---------------------------------------------------------------------------
# algebraic solves


def known_values(system: CoupledSystem, t: float) -> dict[str, float]:
    return {n: float(system.driver(n).at(t)) for n in system.index.w}


def resolve_algebraic(state: SimState, tol: float = 1e-13) -> SimState:
    """Re-solve the algebraic unknowns for the state's grid temperatures and
    the drivers at ``state.t``."""
    system = state.system
    index = system.index
    values = dict(state.values)
    values.update(known_values(system, state.t))
    for p in system.heat.pipes:
        if not p.implicit:
            for side in SIDES:
                values[var(f"tout_{side}", p.id)] = float(state.grids[(p.id, side)][-1])
    names = index.y

    def fun(y):
        vals = dict(values)
        vals.update(zip(names, y))
        r = algebraic_residuals(system, vals)
        return r.residual, r.scale

    y0 = np.array([values[n] for n in names])
    res = newton(fun, y0, index.rows, tol=tol, message=f"algebraic re-solve at t={state.t:g} failed")
    values.update(zip(names, res.y))
    return _sync_inlets(SimState(state.t, system, values, dict(state.grids)))


def _initial_guess(system: CoupledSystem, known: dict[str, float]) -> dict[str, float]:
    heat, el = system.heat, system.electric
    cp = heat.heat_capacity
    ts_known = [v for k, v in known.items() if k.startswith("ts[")]
    tr_known = [v for k, v in known.items() if k.startswith("tr[")]
    ts0 = float(np.mean(ts_known)) if ts_known else 80.0
    tr0 = float(np.mean(tr_known)) if tr_known else ts0 - 30.0
    guess = dict(known)
    for n in heat.nodes:
        guess.setdefault(var("ts", n.id), ts0)
        guess.setdefault(var("tr", n.id), tr0)
    drop = max(ts0 - tr0, 1.0)
    load_total, source_total = 0.0, 0.0
    b = np.zeros(len(heat.nodes))
    for i, n in enumerate(heat.nodes):
        if n.kind is NodeKind.LOAD:
            phi = known.get(var("phi", n.id), n.power or 0.0)
            mi = abs(phi) / (cp * drop)
            guess[var("min", n.id)] = mi
            load_total += mi
            b[i] = mi
        elif n.kind is NodeKind.SOURCE:
            phi = known.get(var("phi", n.id), n.power or 0.0)
            mi = abs(phi) / (cp * drop)
            guess[var("min", n.id)] = mi
            source_total += mi
            b[i] = -mi
    slack = heat.nodes_of(NodeKind.SLACK)[0]
    ms = max(load_total - source_total, 0.1 * load_total + 1e-3)
    guess[var("min", slack.id)] = ms
    b[heat.node_index(slack.id)] = -ms
    m, *_ = np.linalg.lstsq(heat.V, b, rcond=None)
    for p, mv in zip(heat.pipes, m):
        guess[var("m", p.id)] = float(mv) if abs(mv) > 1e-6 else 1e-3
    for n in heat.nodes:
        if n.kind is not NodeKind.INTERMEDIATE:
            guess.setdefault(var("phi", n.id), cp * guess[var("min", n.id)] * drop)
    for p in heat.pipes:
        if p.implicit:
            guess[var("tout_s", p.id)] = guess[var("ts", p.from_node)]
            guess[var("tout_r", p.id)] = guess[var("tr", p.to_node)]
    if el is not None:
        for b_ in el.buses:
            guess.setdefault(var("e", b_.id), b_.voltage if b_.kind.value == "PV" else b_.e)
            guess.setdefault(var("f", b_.id), b_.f if b_.kind.value == "Slack" else 0.0)
            guess.setdefault(var("p", b_.id), b_.p)
            guess.setdefault(var("q", b_.id), b_.q)
    return guess


def steady_grids(system: CoupledSystem, values, config: AdaptiveConfig):
    """Steady temperature profiles of every pipe side for the given flows."""
    grids = {}
    amb = system.heat.ambient_temperature
    for p in system.heat.pipes:
        if p.implicit:
            continue
        mdot = values[var("m", p.id)]
        for side, family, node in (("s", "ts", p.from_node), ("r", "tr", p.to_node)):
            grids[(p.id, side)] = steady_profile(p, values[var(family, node)], mdot,
                                                 config.dx, config.theta, amb)
    return grids


def steady_state_init(system: CoupledSystem, config: AdaptiveConfig = AdaptiveConfig(),
                      t: float = 0.0, max_iter: int = 50, guess=None) -> SimState:
    """Consistent state with all time derivatives zero at time ``t``.

    Damped Newton over the algebraic unknowns; pipe profiles are the steady
    solutions of the discretized transport equation for the current flows
    and inlet temperatures.  Pipes that come out with negative flow are
    reversed and the solve is repeated.
    """
    for _ in range(len(system.heat.pipes) + 1):
        index = system.index
        known = known_values(system, t)
        start = _initial_guess(system, known) if guess is None else {**_initial_guess(system, known), **guess}
        names = index.y

        def assemble(y):
            vals = dict(known)
            vals.update(zip(names, y))
            positive = {k: abs(v) if k.startswith("m[") else v for k, v in vals.items()}
            grids = steady_grids(system, positive, config)
            for (pid, side), g in grids.items():
                vals[var(f"tout_{side}", pid)] = float(g[-1])
                vals[var(f"tin_{side}", pid)] = float(g[0])
            return vals, grids

        def fun(y):
            vals, _ = assemble(y)
            r = algebraic_residuals(system, vals)
            return r.residual, r.scale

        y0 = np.array([start[n] for n in names])
        try:
            res = newton(fun, y0, index.rows, tol=1e-12, max_iter=max_iter,
                         message="steady-state initialization did not converge")
        except Exception as exc:
            raise SteadyStateError(str(exc)) from exc
        values, grids = assemble(res.y)
        negative = [p.id for p in system.heat.pipes if values[var("m", p.id)] < 0]
        if not negative:
            return SimState(t, system, values, grids)
        log.info("steady state: reversing pipes %s", negative)
        guess = {n: v for n, v in values.items() if n in names}
        for pid in negative:
            guess[var("m", pid)] = -guess[var("m", pid)]
        system = system.with_reversed(negative)
    raise SteadyStateError("steady state keeps reversing pipes")


# ---------------------------------------------------------------------------
# driver loop


@dataclass
class SimulationResult:
    system: CoupledSystem
    windows: list[WindowResult]
    horizon: float
    rejections: int
    factorizations: int
    reversals: int
    wall_time: float
    proposals: list[tuple[float, float, float]] = field(default_factory=list)
    # includes windows discarded by a reversal at their very start
    window_starts: int = 0

    def summary(self) -> dict:
        return {
            "windows": len(self.windows),
            "window_starts": self.window_starts,
            "rejections": self.rejections,
            "factorizations": self.factorizations,
            "reversals": self.reversals,
            "wall_time_s": self.wall_time,
        }

    def final_state(self) -> SimState:
        w = self.windows[-1]
        return w.state_at(w.dt)

    def window_at(self, t: float) -> WindowResult:
        """The window that owns ``t``; a boundary belongs to the later window."""
        starts = [w.t_start for w in self.windows]
        i = bisect.bisect_right(starts, t) - 1
        if i < 0 or t > self.windows[-1].t_end + 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} outside the simulated span")
        return self.windows[i]

    def sample(self, times) -> list[tuple[float, CoupledSystem, dict[str, float], dict]]:
        """``(t, system, values, grids)`` at each requested time."""
        out = []
        for t in times:
            w = self.window_at(float(t))
            tau = min(float(t) - w.t_start, w.dt)
            out.append((float(t), w.system, w.values_at(tau), w.grids_at(tau)))
        return out

    def boundaries(self) -> list[float]:
        return [self.windows[0].t_start] + [w.t_end for w in self.windows]


def _has_jump(system: CoupledSystem, t: float) -> bool:
    for name in system.index.w:
        prof = system.driver(name)
        if t in prof.breakpoints and prof.left_limit(t) != float(prof.at(t)):
            return True
    return False


def simulate(system: CoupledSystem, horizon: float, config: AdaptiveConfig = AdaptiveConfig(),
             initial: SimState | None = None, max_windows: int = 1_000_000) -> SimulationResult:
    """Advance from a consistent state to ``horizon`` window by window."""
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    tic = time.perf_counter()
    state = initial if initial is not None else steady_state_init(system, config)
    state = _sync_inlets(state)
    windows: list[WindowResult] = []
    rejections = factorizations = reversals = starts = 0
    proposals = []
    dt = config.dt_init
    t = state.t
    while t < horizon and len(windows) < max_windows:
        current = state.system
        if windows and _has_jump(current, t):
            state = resolve_algebraic(state)
        dt_use, t_end, clipped = clip_step(dt, t, horizon, current.breakpoints, config)
        win = run_window(current, state, dt_use, config)
        starts += 1
        factorizations += win.factorizations
        rejections += win.attempts - 1
        proposals.append((win.dt, win.err, win.dt_proposed))
        truncated = False
        event = handle_reversal(win)
        if event is not None:
            pipes, t_prime = event
            reversals += 1
            log.info("flow reversal in %s at t=%.9g s", pipes, t + t_prime)
            if t_prime == 0.0:
                state = resolve_algebraic(reorient_state(state, pipes))
                continue
            truncated = True
        if win.attempts == 1 and clipped and not truncated:
            t_next = t_end
        else:
            t_next = t + win.dt
        win.dt = t_next - t
        windows.append(win)
        state = win.state_at(win.dt)
        state.t = t_next
        if truncated:
            state = resolve_algebraic(reorient_state(state, event[0]))
        dt = min(win.dt_proposed, config.dt_max)
        t = t_next
    return SimulationResult(
        system=system,
        windows=windows,
        horizon=horizon,
        rejections=rejections,
        factorizations=factorizations,
        reversals=reversals,
        wall_time=time.perf_counter() - tic,
        proposals=proposals,
        window_starts=starts,
    )


# ---------------------------------------------------------------------------
# single pipe with prescribed flow


@dataclass
class PipeRun:
    positions: np.ndarray
    times: np.ndarray
    values: np.ndarray
    windows: int
    rejections: int
    errors: list[float]
    guards: int


def simulate_pipe(pipe: Pipe, boundary, mdot: float, horizon: float,
                  config: AdaptiveConfig = AdaptiveConfig(), ambient: float = 0.0,
                  initial=None, sample_times=None) -> PipeRun:
    """Transport along one pipe with a constant flow and a driven inlet.

    ``boundary`` is a ``DriverProfile`` for the inlet temperature and
    ``initial`` the node values at ``t = 0`` (the steady profile when
    omitted).  Returns node values at ``sample_times`` (window ends when
    omitted).
    """
    M = grid_size(pipe.length, config.dx)
    if initial is None:
        initial = steady_profile(pipe, float(boundary.at(0.0)), mdot, config.dx, config.theta, ambient)
    values = np.array(initial, dtype=float)
    values[0] = float(boundary.at(0.0))
    K = config.K
    levels = K + 3
    flow = np.zeros(levels)
    flow[0] = mdot
    t, dt = 0.0, config.dt_init
    windows = rejections = guards = 0
    errors = []
    bps = tuple(b for b in getattr(boundary, "breakpoints", ()) if b > 0)
    record_t, record_v = [0.0], [values.copy()]
    samples = None if sample_times is None else sorted(float(s) for s in sample_times)
    out_t, out_v = [], []
    while t < horizon:
        dt_use, t_end, clipped = clip_step(dt, t, horizon, bps, config)
        grid = PipeGrid.for_pipe(pipe, "s", config.dx, config.theta, ambient, values, levels - 1)
        grid.coefficients[:, 0] = derive_driver_dt(boundary, t, levels - 1)
        freeze_slopes(grid, config.theta)
        computed = 0

        def extend(order):
            nonlocal computed
            for k in range(computed + 1, order + 1):
                grid.coefficients[k, 1:] = dt_pde_coefficient(grid, flow[:k], k - 1)
            computed = max(computed, order)

        extend(K + 1)
        attempts = 0
        while True:
            attempts += 1
            order = degenerate_order_guard(grid.coefficients[: K + 2, 1:], K, dt_use, config)
            extend(order)
            err = error_estimate(grid.coefficients[: order + 1, 1:], dt_use, config, order=order)
            if err <= 1:
                break
            new = next_step_size(dt_use, err, order - 1, config)
            if new < config.dt_min:
                raise DivergenceError(f"pipe transport step {new:.3e} s below dt_min at t={t:.6g}")
            dt_use = new
        guards += order == K + 2
        rejections += attempts - 1
        windows += 1
        errors.append(err)
        t_next = t_end if attempts == 1 and clipped else t + dt_use
        C = grid.coefficients[: computed + 1]
        if samples is not None:
            while samples and samples[0] <= t_next + 1e-12:
                s = samples.pop(0)
                out_t.append(s)
                out_v.append(evaluate(C, s - t))
        values = evaluate(C, t_next - t)
        record_t.append(t_next)
        record_v.append(values.copy())
        dt = min(next_step_size(dt_use, err, order - 1, config), config.dt_max)
        t = t_next
    if samples is None:
        out_t, out_v = record_t, record_v
    return PipeRun(np.linspace(0, pipe.length, M), np.array(out_t), np.array(out_v),
                   windows, rejections, errors, guards)


__all__ = [
    "AdaptiveConfig",
    "DivergenceError",
    "NetworkError",
    "SimState",
    "SimulationResult",
    "SteadyStateError",
    "WindowResult",
    "clip_step",
    "degenerate_order_guard",
    "error_estimate",
    "handle_reversal",
    "next_step_size",
    "resolve_algebraic",
    "run_window",
    "simulate",
    "simulate_pipe",
    "steady_state_init",
]
