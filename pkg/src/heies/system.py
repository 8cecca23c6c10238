"""Coupled heat/electricity system and its variable registry.

Variable names follow one pattern, ``family[id]``:

=========  ================================================
``m``      pipe mass flow (kg/s, positive along the pipe)
``min``    node injection mass flow, positive as defined by
           the node role (sources inject, loads draw)
``ts``     node supply temperature (°C)
``tr``     node return temperature (°C)
``phi``    node heat power (W, positive for sources and loads)
``tout_s`` supply-side outlet temperature of a pipe
``tout_r`` return-side outlet temperature of a pipe
``tin_s``  supply-side inlet temperature of a pipe
``tin_r``  return-side inlet temperature of a pipe
``e, f``   real and imaginary bus voltage (p.u.)
``p, q``   bus active and reactive injection (p.u.)
=========  ================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

from .dtseries import DriverProfile
from .network import (
    BusKind,
    CouplingKind,
    CouplingUnit,
    ElectricNetwork,
    HeatNetwork,
    NetworkError,
    NodeKind,
    expand_compound_nodes,
    reverse_pipes,
)


def var(family: str, ident: str) -> str:
    return f"{family}[{ident}]"


def split_var(name: str) -> tuple[str, str]:
    family, _, rest = name.partition("[")
    if not rest.endswith("]"):
        raise ValueError(f"malformed variable name {name!r}")
    return family, rest[:-1]


@dataclass(frozen=True)
class VariableIndex:
    """Partition of the scalar variables and the equation row labels.

    ``y`` are the algebraic unknowns solved at every order, ``x`` the pipe
    outlet temperatures produced by the grid recursion, ``z`` the pipe inlet
    temperatures copied from node temperatures and ``w`` the known drivers.
    ``inlet_of`` maps each inlet name to the node temperature it copies.
    """

    y: tuple[str, ...]
    x: tuple[str, ...]
    z: tuple[str, ...]
    w: tuple[str, ...]
    rows: tuple[str, ...]
    inlet_of: Mapping[str, str]

    @property
    def unknowns(self) -> tuple[str, ...]:
        return self.x + self.y + self.z

    @property
    def slots(self) -> tuple[str, ...]:
        """Variables that appear in the algebraic equations, unknowns first."""
        return self.y + self.x + self.w

    @cached_property
    def slot(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.slots)}


def _heat_partition(heat: HeatNetwork):
    unknown, known = [], []
    for n in heat.nodes:
        k = n.kind
        if k is NodeKind.SLACK:
            unknown += [var("min", n.id), var("tr", n.id), var("phi", n.id)]
            known += [var("ts", n.id)]
        elif k is NodeKind.SOURCE:
            unknown += [var("min", n.id), var("tr", n.id)]
            known += [var("ts", n.id), var("phi", n.id)]
        elif k is NodeKind.LOAD:
            unknown += [var("min", n.id), var("ts", n.id)]
            known += [var("phi", n.id), var("tr", n.id)]
        else:
            unknown += [var("ts", n.id), var("tr", n.id)]
    return set(unknown), set(known)


def _electric_partition(electric: ElectricNetwork | None):
    unknown, known = set(), set()
    if electric is None:
        return unknown, known
    for b in electric.buses:
        if b.kind is BusKind.SLACK:
            unknown |= {var("p", b.id), var("q", b.id)}
            known |= {var("e", b.id), var("f", b.id)}
        elif b.kind is BusKind.PV:
            unknown |= {var("e", b.id), var("f", b.id), var("q", b.id)}
            known |= {var("p", b.id)}
        else:
            unknown |= {var("e", b.id), var("f", b.id)}
            known |= {var("p", b.id), var("q", b.id)}
    return unknown, known


@dataclass(frozen=True)
class CoupledSystem:
    """Heat network, optional electric network and the units joining them.

    Compound nodes are expanded on construction; couplings and driver
    overrides that name an expanded node are redirected to its virtual node.
    ``drivers`` maps known variable names to trajectories; known variables
    without an entry stay at the nominal value stored in the network.
    """

    heat: HeatNetwork
    electric: ElectricNetwork | None = None
    couplings: tuple[CouplingUnit, ...] = ()
    drivers: Mapping[str, DriverProfile] = field(default_factory=dict)
    aliases: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        heat, mapping = expand_compound_nodes(self.heat)
        aliases = dict(self.aliases)
        aliases.update(mapping)
        couplings = tuple(
            replace(c, heat_node=aliases.get(c.heat_node, c.heat_node)) for c in self.couplings
        )
        drivers = {}
        for name, prof in dict(self.drivers).items():
            family, ident = split_var(name)
            if family in ("phi", "tr", "ts") and ident in aliases:
                name = var(family, aliases[ident])
            drivers[name] = prof
        object.__setattr__(self, "heat", heat)
        object.__setattr__(self, "couplings", couplings)
        object.__setattr__(self, "drivers", drivers)
        object.__setattr__(self, "aliases", aliases)
        for c in couplings:
            node_ids = {n.id for n in heat.nodes}
            if c.heat_node not in node_ids:
                raise NetworkError(f"coupling refers to unknown heat node {c.heat_node!r}")
            if heat.node(c.heat_node).kind is NodeKind.INTERMEDIATE:
                raise NetworkError(f"coupling at intermediate node {c.heat_node!r} has no heat power")
            if self.electric is None:
                raise NetworkError("couplings need an electric network")
            self.electric.bus_index(c.bus)
        index = self.index
        unknown_drivers = set(drivers) - set(index.w)
        if unknown_drivers:
            raise NetworkError(f"drivers for variables that are not known inputs: {sorted(unknown_drivers)}")

    @cached_property
    def coupled_unknowns(self) -> dict[int, str]:
        """Variable each coupling unit turns from known to unknown."""
        h_unknown, h_known = _heat_partition(self.heat)
        e_unknown, e_known = _electric_partition(self.electric)
        known = h_known | e_known
        freed = {}
        for i, c in enumerate(self.couplings):
            phi, p = var("phi", c.heat_node), var("p", c.bus)
            order = (p, phi) if c.kind is CouplingKind.STEAM_TURBINE else (phi, p)
            choice = next((v for v in order if v in known), None)
            if choice is None:
                raise NetworkError(
                    f"{c.kind.value} at {c.heat_node}/{c.bus}: both {phi} and {p} are already unknown"
                )
            known.discard(choice)
            freed[i] = choice
        return freed

    @cached_property
    def index(self) -> VariableIndex:
        heat, el = self.heat, self.electric
        h_unknown, h_known = _heat_partition(heat)
        e_unknown, e_known = _electric_partition(el)
        freed = set(self.coupled_unknowns.values())
        unknown = h_unknown | e_unknown | freed
        known = (h_known | e_known) - freed

        y = [var("m", p.id) for p in heat.pipes]
        y += [var("min", n.id) for n in heat.nodes if var("min", n.id) in unknown]
        y += [var("ts", n.id) for n in heat.nodes if var("ts", n.id) in unknown]
        y += [var("tr", n.id) for n in heat.nodes if var("tr", n.id) in unknown]
        implicit = [p for p in heat.pipes if p.implicit]
        y += [var("tout_s", p.id) for p in implicit] + [var("tout_r", p.id) for p in implicit]
        y += [var("phi", n.id) for n in heat.nodes if var("phi", n.id) in unknown]
        buses = el.buses if el is not None else ()
        for b in buses:
            y += [v for v in (var("e", b.id), var("f", b.id)) if v in unknown]
        y += [var("p", b.id) for b in buses if var("p", b.id) in unknown]
        y += [var("q", b.id) for b in buses if var("q", b.id) in unknown]

        physical = [p for p in heat.pipes if not p.implicit]
        x = [var("tout_s", p.id) for p in physical] + [var("tout_r", p.id) for p in physical]
        z = [var("tin_s", p.id) for p in physical] + [var("tin_r", p.id) for p in physical]
        inlet_of = {}
        for p in physical:
            inlet_of[var("tin_s", p.id)] = var("ts", p.from_node)
            inlet_of[var("tin_r", p.id)] = var("tr", p.to_node)

        w = [var(f, n.id) for n in heat.nodes for f in ("ts", "tr", "phi") if var(f, n.id) in known]
        w += [var(f, b.id) for b in buses for f in ("e", "f", "p", "q") if var(f, b.id) in known]

        rows = [f"continuity[{n.id}]" for n in heat.nodes]
        rows += [f"loop[{i}]" for i in range(heat.L.shape[0])]
        rows += [f"supply_mix[{n.id}]" for n in heat.nodes
                 if n.kind in (NodeKind.LOAD, NodeKind.INTERMEDIATE)]
        rows += [f"return_mix[{n.id}]" for n in heat.nodes
                 if n.kind in (NodeKind.SLACK, NodeKind.SOURCE, NodeKind.INTERMEDIATE)]
        rows += [f"identity_s[{p.id}]" for p in implicit] + [f"identity_r[{p.id}]" for p in implicit]
        rows += [f"power[{n.id}]" for n in heat.nodes if n.kind is not NodeKind.INTERMEDIATE]
        rows += [f"active[{b.id}]" for b in buses] + [f"reactive[{b.id}]" for b in buses]
        rows += [f"magnitude[{b.id}]" for b in buses if b.kind is BusKind.PV]
        rows += [f"coupling[{i}]" for i in range(len(self.couplings))]
        if len(rows) != len(y):
            raise NetworkError(f"{len(rows)} equations for {len(y)} unknowns")
        return VariableIndex(tuple(y), tuple(x), tuple(z), tuple(w), tuple(rows), inlet_of)

    def nominal(self, name: str) -> float:
        """Nominal value of a known variable from the network data."""
        family, ident = split_var(name)
        if family in ("ts", "tr", "phi"):
            n = self.heat.node(ident)
            attr = {"ts": "supply_temperature", "tr": "return_temperature", "phi": "power"}[family]
            return float(getattr(n, attr))
        b = self.electric.buses[self.electric.bus_index(ident)]
        return float(getattr(b, family))

    def driver(self, name: str) -> DriverProfile:
        prof = self.drivers.get(name)
        if prof is None:
            return DriverProfile.constant(self.nominal(name), binding=name)
        return prof

    @cached_property
    def breakpoints(self) -> tuple[float, ...]:
        pts = set()
        for name in self.index.w:
            pts.update(self.driver(name).breakpoints)
        return tuple(sorted(pts))

    def with_reversed(self, pipe_ids) -> "CoupledSystem":
        for pid in pipe_ids:
            if self.heat.pipes[self.heat.pipe_index(pid)].implicit:
                raise NetworkError(f"implicit pipe {pid} cannot reverse")
        return CoupledSystem(
            heat=reverse_pipes(self.heat, list(pipe_ids)),
            electric=self.electric,
            couplings=self.couplings,
            drivers=self.drivers,
            aliases=self.aliases,
        )

    def with_drivers(self, drivers: Mapping[str, DriverProfile]) -> "CoupledSystem":
        return replace(self, drivers=dict(drivers))
