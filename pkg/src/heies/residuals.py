"""Time-domain imbalance of the algebraic equations.

This evaluates the network equations directly from matrices (incidence,
loop, admittance) on plain values, independently of the term tables used by
the series recursion.  Values may be scalars or equal-length arrays of
samples.  Every row is reported together with a scale, the sum of the
absolute values of its terms, so that ``residual / scale`` is comparable
across unit systems.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .network import BusKind, CouplingKind, NodeKind
from .system import CoupledSystem, split_var, var


@dataclass(frozen=True)
class Residuals:
    labels: tuple[str, ...]
    residual: np.ndarray
    scale: np.ndarray

    @property
    def scaled(self) -> np.ndarray:
        return self.residual / np.maximum(self.scale, 1e-300)

    def by_family(self) -> dict[str, float]:
        """Largest scaled imbalance of each equation family."""
        out: dict[str, float] = {}
        s = np.abs(self.scaled).reshape(len(self.labels), -1)
        for label, row in zip(self.labels, s):
            family = label.split("[")[0]
            out[family] = max(out.get(family, 0.0), float(np.max(row)) if row.size else 0.0)
        return out

    def worst(self) -> tuple[str, float]:
        s = np.abs(self.scaled).reshape(len(self.labels), -1).max(axis=1)
        i = int(np.argmax(s))
        return self.labels[i], float(s[i])


def algebraic_residuals(system: CoupledSystem, values: Mapping[str, object]) -> Residuals:
    heat, el = system.heat, system.electric
    get = lambda name: np.asarray(values[name], dtype=float)  # noqa: E731
    nodes, pipes = heat.nodes, heat.pipes

    def stack(names):
        if not names:
            return np.zeros((0,) + np.shape(get(var("m", pipes[0].id))))
        return np.array([get(n) for n in names])

    m = stack([var("m", p.id) for p in pipes])
    sample_shape = m.shape[1:]
    zero = np.zeros(sample_shape)

    def node_values(family, kinds):
        return np.array([get(var(family, n.id)) if n.kind in kinds else zero for n in nodes])

    sign = np.array([1.0 if n.kind in (NodeKind.SLACK, NodeKind.SOURCE)
                     else -1.0 if n.kind is NodeKind.LOAD else 0.0 for n in nodes])
    injecting = (NodeKind.SLACK, NodeKind.SOURCE, NodeKind.LOAD)
    m_in = node_values("min", injecting)
    ts = np.array([get(var("ts", n.id)) for n in nodes])
    tr = np.array([get(var("tr", n.id)) for n in nodes])
    phi = node_values("phi", injecting)
    tout_s = stack([var("tout_s", p.id) for p in pipes])
    tout_r = stack([var("tout_r", p.id) for p in pipes])

    labels, res, scale = [], [], []

    def emit(lab, r, s):
        labels.extend(lab)
        res.extend(list(r))
        scale.extend(list(s))

    V = heat.V
    absV = np.abs(V)
    emit([f"continuity[{n.id}]" for n in nodes],
         V @ m + sign[:, None] * m_in if m.ndim > 1 else V @ m + sign * m_in,
         absV @ np.abs(m) + np.abs(m_in))

    K = np.array([p.resistance for p in pipes])
    K = K.reshape((-1,) + (1,) * len(sample_shape))
    head = K * m * np.abs(m)
    emit([f"loop[{r}]" for r in range(heat.L.shape[0])], heat.L @ head, np.abs(heat.L) @ np.abs(head))

    Vp, Vm = heat.V_plus, -heat.V_minus
    sup = [i for i, n in enumerate(nodes) if n.kind in (NodeKind.LOAD, NodeKind.INTERMEDIATE)]
    mix = ts * (Vp @ m) - Vp @ (m * tout_s)
    mix_scale = np.abs(ts) * (Vp @ np.abs(m)) + Vp @ np.abs(m * tout_s)
    emit([f"supply_mix[{nodes[i].id}]" for i in sup], mix[sup], mix_scale[sup])
    ret = [i for i, n in enumerate(nodes)
           if n.kind in (NodeKind.SLACK, NodeKind.SOURCE, NodeKind.INTERMEDIATE)]
    mix = tr * (Vm @ m) - Vm @ (m * tout_r)
    mix_scale = np.abs(tr) * (Vm @ np.abs(m)) + Vm @ np.abs(m * tout_r)
    emit([f"return_mix[{nodes[i].id}]" for i in ret], mix[ret], mix_scale[ret])

    implicit = [p for p in pipes if p.implicit]
    for side, family, end in (("s", "ts", "from_node"), ("r", "tr", "to_node")):
        lab, r, s = [], [], []
        for p in implicit:
            a, b = get(var(f"tout_{side}", p.id)), get(var(family, getattr(p, end)))
            lab.append(f"identity_{side}[{p.id}]")
            r.append(a - b)
            s.append(np.abs(a) + np.abs(b))
        emit(lab, r, s)

    cp = heat.heat_capacity
    pw = [i for i, n in enumerate(nodes) if n.kind is not NodeKind.INTERMEDIATE]
    flow_heat = cp * m_in * (ts - tr)
    emit([f"power[{nodes[i].id}]" for i in pw], (phi - flow_heat)[pw],
         (np.abs(phi) + cp * np.abs(m_in) * (np.abs(ts) + np.abs(tr)))[pw])

    if el is not None:
        buses = el.buses
        e = np.array([get(var("e", b.id)) for b in buses])
        f = np.array([get(var("f", b.id)) for b in buses])
        p = np.array([get(var("p", b.id)) for b in buses])
        q = np.array([get(var("q", b.id)) for b in buses])
        Vc = e + 1j * f
        Y = el.G + 1j * el.B
        S = Vc * np.conj(Y @ Vc)
        flow_scale = np.abs(Vc) * (np.abs(Y) @ np.abs(Vc))
        emit([f"active[{b.id}]" for b in buses], S.real - p, flow_scale + np.abs(p))
        emit([f"reactive[{b.id}]" for b in buses], S.imag - q, flow_scale + np.abs(q))
        pv = [i for i, b in enumerate(buses) if b.kind is BusKind.PV]
        U2 = np.array([buses[i].voltage ** 2 for i in pv]).reshape((-1,) + (1,) * len(sample_shape))
        mag = e[pv] ** 2 + f[pv] ** 2
        emit([f"magnitude[{buses[i].id}]" for i in pv], mag - U2, mag + U2)

    for r, c in enumerate(system.couplings):
        ph, pb = get(var("phi", c.heat_node)), get(var("p", c.bus))
        if c.kind is CouplingKind.STEAM_TURBINE:
            fuel = c.eta_e * c.F_in
            emit([f"coupling[{r}]"], [pb + ph / c.Z - fuel], [np.abs(pb) + np.abs(ph) / c.Z + abs(fuel)])
        else:
            emit([f"coupling[{r}]"], [ph - c.c_m1 * pb], [np.abs(ph) + c.c_m1 * np.abs(pb)])

    return Residuals(tuple(labels), np.array(res, dtype=float), np.array(scale, dtype=float))


def signed_injection_sum(system: CoupledSystem, values: Mapping[str, object]) -> np.ndarray:
    """Net mass injected into the network; zero when mass is conserved."""
    total = 0.0
    for n in system.heat.nodes:
        if n.kind in (NodeKind.SLACK, NodeKind.SOURCE):
            total = total + np.asarray(values[var("min", n.id)], dtype=float)
        elif n.kind is NodeKind.LOAD:
            total = total - np.asarray(values[var("min", n.id)], dtype=float)
    return np.asarray(total)


def loop_head_sums(system: CoupledSystem, values: Mapping[str, object]) -> np.ndarray:
    pipes = system.heat.pipes
    m = np.array([np.asarray(values[var("m", p.id)], dtype=float) for p in pipes])
    K = np.array([p.resistance for p in pipes]).reshape((-1,) + (1,) * (m.ndim - 1))
    return system.heat.L @ (K * m * np.abs(m))


def families(labels) -> list[str]:
    return list(dict.fromkeys(split_var(lab)[0] for lab in labels))
