"""Network topology for coupled heat/electricity systems.

Heat networks are described by their supply side only; the return side
mirrors it with every pipe running the opposite way and carrying the same
mass flow.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np


class NetworkError(ValueError):
    """Raised when a network violates a structural invariant."""


class NodeKind(str, Enum):
    SLACK = "Slack"
    SOURCE = "Source"
    LOAD = "Load"
    INTERMEDIATE = "Intermediate"


class BusKind(str, Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"


class CouplingKind(str, Enum):
    STEAM_TURBINE = "ExtractionSteamTurbine"
    GAS_TURBINE = "GasTurbine"


@dataclass(frozen=True)
class HeatNode:
    """A heat-network node.

    ``supply_temperature`` is used by Slack/Source nodes, ``power`` by
    Source/Load nodes and ``return_temperature`` by Load nodes.  They are the
    nominal (t = 0) values of the corresponding known trajectories.
    """

    id: str
    kind: NodeKind
    supply_temperature: float | None = None
    return_temperature: float | None = None
    power: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", NodeKind(self.kind))


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float
    area: float
    density: float
    heat_capacity: float
    heat_transfer: float
    resistance: float
    reversed: bool = False
    implicit: bool = False

    def __post_init__(self):
        if self.length < 0:
            raise NetworkError(f"pipe {self.id}: length must be >= 0")
        if self.length == 0 and not self.implicit:
            raise NetworkError(f"pipe {self.id}: zero length is reserved for implicit pipes")
        for name in ("area", "density", "heat_capacity"):
            if not getattr(self, name) > 0:
                raise NetworkError(f"pipe {self.id}: {name} must be > 0")
        if self.heat_transfer < 0 or self.resistance < 0:
            raise NetworkError(f"pipe {self.id}: heat_transfer and resistance must be >= 0")

    @property
    def mass_per_length(self) -> float:
        return self.area * self.density


def build_incidence(nodes: Sequence[HeatNode], pipes: Sequence[Pipe]):
    """Node incidence matrix ``V`` and fundamental loop matrix ``L``.

    ``V[i, j]`` is +1 if pipe ``j`` flows into node ``i`` and -1 if it flows
    out.  ``L`` has one row per chord of a breadth-first spanning tree; tree
    edges are explored in pipe order so the basis is deterministic.  Each
    loop is oriented along its chord.
    """
    index = {n.id: i for i, n in enumerate(nodes)}
    if len(index) != len(nodes):
        raise NetworkError("duplicate node id")
    V = np.zeros((len(nodes), len(pipes)))
    adjacency: list[list[tuple[int, int]]] = [[] for _ in nodes]
    for j, p in enumerate(pipes):
        for end in (p.from_node, p.to_node):
            if end not in index:
                raise NetworkError(f"pipe {p.id}: dangling endpoint {end!r}")
        a, b = index[p.from_node], index[p.to_node]
        if a == b:
            raise NetworkError(f"pipe {p.id}: self loop at {p.from_node}")
        V[a, j] = -1.0
        V[b, j] = 1.0
        adjacency[a].append((j, b))
        adjacency[b].append((j, a))
    if not nodes:
        return V, np.zeros((0, len(pipes)))

    # parent pipe and parent node of every visited node
    parent = {0: (-1, -1)}
    tree = set()
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for j, w in sorted(adjacency[u]):
            if w not in parent:
                parent[w] = (j, u)
                tree.add(j)
                queue.append(w)
    if len(parent) != len(nodes):
        missing = [nodes[i].id for i in range(len(nodes)) if i not in parent]
        raise NetworkError(f"heat network is disconnected; unreachable nodes {missing}")

    def path_to_root(u):
        out = []
        while parent[u][0] >= 0:
            out.append(u)
            u = parent[u][1]
        out.append(u)
        return out

    rows = []
    for j, p in enumerate(pipes):
        if j in tree:
            continue
        row = np.zeros(len(pipes))
        row[j] = 1.0
        # walk from the chord's head back to its tail through the tree
        head, tail = index[p.to_node], index[p.from_node]
        up_head, up_tail = path_to_root(head), path_to_root(tail)
        common = next(u for u in up_head if u in set(up_tail))
        u = head
        while u != common:
            pj, pu = parent[u]
            # moving u -> pu along pipe pj
            row[pj] += 1.0 if V[u, pj] < 0 else -1.0
            u = pu
        # then common -> tail: reverse of the tail's upward walk
        u = tail
        while u != common:
            pj, pu = parent[u]
            # traversed pu -> u
            row[pj] += 1.0 if V[pu, pj] < 0 else -1.0
            u = pu
        rows.append(row)
    L = np.array(rows) if rows else np.zeros((0, len(pipes)))
    return V, L


@dataclass(frozen=True)
class HeatNetwork:
    nodes: tuple[HeatNode, ...]
    pipes: tuple[Pipe, ...]
    ambient_temperature: float = 10.0
    heat_capacity: float = 4182.0
    temperature_base: float | None = None
    V: np.ndarray = field(default=None, repr=False, compare=False)
    L: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        if len({p.id for p in self.pipes}) != len(self.pipes):
            raise NetworkError("duplicate pipe id")
        slacks = [n.id for n in self.nodes if n.kind is NodeKind.SLACK]
        if len(slacks) != 1:
            raise NetworkError(f"exactly one Slack heat node required, found {slacks}")
        for n in self.nodes:
            _check_node_data(n)
        if self.V is None:
            V, L = build_incidence(self.nodes, self.pipes)
            # implicit pipes carry no head loss
            if L.size:
                implicit = [j for j, p in enumerate(self.pipes) if p.implicit]
                L[:, implicit] = 0.0
                L = L[np.any(L != 0, axis=1)]
            object.__setattr__(self, "V", V)
            object.__setattr__(self, "L", L)
        for arr in (self.V, self.L):
            arr.setflags(write=False)

    def node_index(self, node_id: str) -> int:
        for i, n in enumerate(self.nodes):
            if n.id == node_id:
                return i
        raise KeyError(node_id)

    def pipe_index(self, pipe_id: str) -> int:
        for j, p in enumerate(self.pipes):
            if p.id == pipe_id:
                return j
        raise KeyError(pipe_id)

    def node(self, node_id: str) -> HeatNode:
        return self.nodes[self.node_index(node_id)]

    def nodes_of(self, *kinds: NodeKind) -> list[HeatNode]:
        return [n for n in self.nodes if n.kind in kinds]

    @property
    def V_plus(self):
        return np.maximum(self.V, 0.0)

    @property
    def V_minus(self):
        return np.minimum(self.V, 0.0)


def _check_node_data(n: HeatNode):
    need = {
        NodeKind.SLACK: ("supply_temperature",),
        NodeKind.SOURCE: ("supply_temperature", "power"),
        NodeKind.LOAD: ("return_temperature", "power"),
        NodeKind.INTERMEDIATE: (),
    }[n.kind]
    for name in need:
        if getattr(n, name) is None:
            raise NetworkError(f"node {n.id}: {n.kind.value} node needs {name}")


def expand_compound_nodes(network: HeatNetwork):
    """Split nodes that are both a junction and a load/source.

    A Load node with outgoing pipes, or a Slack/Source node with incoming
    pipes, is re-typed Intermediate and its role moves to a new virtual node
    attached through a zero-length implicit pipe.  Returns ``(network,
    mapping)`` where ``mapping`` sends original node ids to virtual ones.
    """
    V = network.V
    nodes = list(network.nodes)
    pipes = list(network.pipes)
    mapping: dict[str, str] = {}
    for i, n in enumerate(network.nodes):
        outflow = np.any(V[i] < 0)
        inflow = np.any(V[i] > 0)
        is_load = n.kind is NodeKind.LOAD and outflow
        is_source = n.kind in (NodeKind.SOURCE, NodeKind.SLACK) and inflow
        if not (is_load or is_source):
            continue
        virtual_id = f"{n.id}~{n.kind.value.lower()}"
        mapping[n.id] = virtual_id
        nodes[i] = HeatNode(n.id, NodeKind.INTERMEDIATE)
        nodes.append(replace(n, id=virtual_id))
        # borrow cross-section data from an attached pipe
        j = int(np.flatnonzero(V[i])[0])
        template = network.pipes[j]
        ends = (n.id, virtual_id) if is_load else (virtual_id, n.id)
        pipes.append(
            Pipe(
                id=f"{n.id}~implicit",
                from_node=ends[0],
                to_node=ends[1],
                length=0.0,
                area=template.area,
                density=template.density,
                heat_capacity=template.heat_capacity,
                heat_transfer=0.0,
                resistance=0.0,
                implicit=True,
            )
        )
    if not mapping:
        return network, mapping
    expanded = HeatNetwork(
        nodes=tuple(nodes),
        pipes=tuple(pipes),
        ambient_temperature=network.ambient_temperature,
        heat_capacity=network.heat_capacity,
        temperature_base=network.temperature_base,
    )
    return expanded, mapping


def reverse_pipes(network: HeatNetwork, pipe_ids: Sequence[str]) -> HeatNetwork:
    """Flip the direction of the given pipes.

    The matching columns of ``V`` and ``L`` are negated; the loop basis is
    kept rather than recomputed.
    """
    if not pipe_ids:
        raise NetworkError("reverse_pipes needs at least one pipe id")
    known = {p.id: j for j, p in enumerate(network.pipes)}
    unknown = [pid for pid in pipe_ids if pid not in known]
    if unknown:
        raise NetworkError(f"unknown pipe id(s) {unknown}")
    pipes = list(network.pipes)
    V = network.V.copy()
    L = network.L.copy()
    for pid in dict.fromkeys(pipe_ids):
        j = known[pid]
        p = pipes[j]
        pipes[j] = replace(p, from_node=p.to_node, to_node=p.from_node, reversed=not p.reversed)
        V[:, j] *= -1.0
        L[:, j] *= -1.0
    return HeatNetwork(
        nodes=network.nodes,
        pipes=tuple(pipes),
        ambient_temperature=network.ambient_temperature,
        heat_capacity=network.heat_capacity,
        temperature_base=network.temperature_base,
        V=V,
        L=L,
    )


@dataclass(frozen=True)
class Bus:
    id: str
    kind: BusKind
    p: float = 0.0
    q: float = 0.0
    voltage: float = 1.0
    e: float = 1.0
    f: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BusKind(self.kind))
        if self.kind is BusKind.PV and not self.voltage > 0:
            raise NetworkError(f"bus {self.id}: PV setpoint must be > 0")


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    r: float
    x: float
    b: float = 0.0


@dataclass(frozen=True)
class ElectricNetwork:
    """Buses plus the real and imaginary parts of the bus admittance matrix."""

    buses: tuple[Bus, ...]
    G: np.ndarray = field(repr=False, compare=False)
    B: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        G = np.asarray(self.G, dtype=float)
        B = np.asarray(self.B, dtype=float)
        n = len(self.buses)
        if G.shape != (n, n) or B.shape != (n, n):
            raise NetworkError("G and B must be square with one row per bus")
        if not (np.allclose(G, G.T) and np.allclose(B, B.T)):
            raise NetworkError("G and B must be symmetric")
        slacks = [b.id for b in self.buses if b.kind is BusKind.SLACK]
        if len(slacks) != 1:
            raise NetworkError(f"exactly one Slack bus required, found {slacks}")
        G.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "B", B)

    @classmethod
    def from_branches(cls, buses: Sequence[Bus], branches: Sequence[Branch]):
        index = {b.id: i for i, b in enumerate(buses)}
        Y = np.zeros((len(buses), len(buses)), dtype=complex)
        for br in branches:
            if br.from_bus not in index or br.to_bus not in index:
                raise NetworkError(f"branch {br.from_bus}-{br.to_bus}: unknown bus")
            i, k = index[br.from_bus], index[br.to_bus]
            y = 1.0 / complex(br.r, br.x)
            Y[i, i] += y + 0.5j * br.b
            Y[k, k] += y + 0.5j * br.b
            Y[i, k] -= y
            Y[k, i] -= y
        return cls(tuple(buses), Y.real, Y.imag)

    def bus_index(self, bus_id: str) -> int:
        for i, b in enumerate(self.buses):
            if b.id == bus_id:
                return i
        raise KeyError(bus_id)


@dataclass(frozen=True)
class CouplingUnit:
    """A CHP unit tying a heat node to a bus.

    Extraction steam turbine: ``p = -phi / Z + eta_e * F_in``.
    Gas turbine: ``phi = c_m1 * p``.
    """

    kind: CouplingKind
    heat_node: str
    bus: str
    Z: float | None = None
    c_m1: float | None = None
    eta_e: float = 0.0
    F_in: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", CouplingKind(self.kind))
        if self.kind is CouplingKind.STEAM_TURBINE and not (self.Z or 0) > 0:
            raise NetworkError(f"steam turbine at {self.heat_node}: Z must be > 0")
        if self.kind is CouplingKind.GAS_TURBINE and not (self.c_m1 or 0) > 0:
            raise NetworkError(f"gas turbine at {self.heat_node}: c_m1 must be > 0")
