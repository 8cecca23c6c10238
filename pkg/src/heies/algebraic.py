"""Order-k linear systems for the algebraic equations.

Every algebraic equation is a sum of terms ``c*u``, ``c*u*v`` or ``c``.  The
k-th Taylor coefficient of a row is then

    sum c*U(k) + sum c*sum_m U(m)V(k-m) + sum c*delta(k)

For ``k >= 1`` only ``U(k)V(0)`` and ``U(0)V(k)`` involve the order-k
unknowns, so the coefficient is linear in ``Y(k)`` with a matrix built from
zeroth-order values alone.  Evaluating the same sum with ``Y(k) = 0`` gives
the known part, which moves to the right-hand side.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .network import BusKind, CouplingKind, NodeKind
from .system import CoupledSystem, var

log = logging.getLogger(__name__)

SPARSE_THRESHOLD = 500


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, label: str, detail: str = ""):
        self.label = label
        super().__init__(f"singular window matrix at equation {label}{': ' + detail if detail else ''}")


@dataclass
class EquationBlock:
    """Terms of one equation family; ``row`` is local to the block."""

    name: str
    labels: list[str]
    row: list[int] = field(default_factory=list)
    coef: list[float] = field(default_factory=list)
    u: list[str | None] = field(default_factory=list)
    v: list[str | None] = field(default_factory=list)

    def add(self, row: int, coef: float, u: str | None = None, v: str | None = None):
        if coef != 0.0:
            self.row.append(row)
            self.coef.append(float(coef))
            self.u.append(u)
            self.v.append(v)

    def __len__(self):
        return len(self.labels)


def assemble_continuity(system: CoupledSystem) -> EquationBlock:
    heat = system.heat
    block = EquationBlock("continuity", [f"continuity[{n.id}]" for n in heat.nodes])
    for i, n in enumerate(heat.nodes):
        for j, p in enumerate(heat.pipes):
            block.add(i, heat.V[i, j], var("m", p.id))
        if n.kind in (NodeKind.SLACK, NodeKind.SOURCE):
            block.add(i, 1.0, var("min", n.id))
        elif n.kind is NodeKind.LOAD:
            block.add(i, -1.0, var("min", n.id))
    return block


def assemble_loop_pressure(system: CoupledSystem) -> EquationBlock:
    heat = system.heat
    L = heat.L
    block = EquationBlock("loop", [f"loop[{r}]" for r in range(L.shape[0])])
    for r in range(L.shape[0]):
        for j, p in enumerate(heat.pipes):
            m = var("m", p.id)
            block.add(r, L[r, j] * p.resistance, m, m)
    return block


def assemble_mixing(system: CoupledSystem) -> tuple[EquationBlock, EquationBlock]:
    """Supply mixing at Load/Intermediate nodes, return mixing at the rest."""
    heat = system.heat
    supply_nodes = [n for n in heat.nodes if n.kind in (NodeKind.LOAD, NodeKind.INTERMEDIATE)]
    return_nodes = [n for n in heat.nodes
                    if n.kind in (NodeKind.SLACK, NodeKind.SOURCE, NodeKind.INTERMEDIATE)]
    supply = EquationBlock("supply_mix", [f"supply_mix[{n.id}]" for n in supply_nodes])
    ret = EquationBlock("return_mix", [f"return_mix[{n.id}]" for n in return_nodes])
    for r, n in enumerate(supply_nodes):
        i = heat.node_index(n.id)
        for j in np.flatnonzero(heat.V[i] > 0):
            p = heat.pipes[j]
            m = var("m", p.id)
            supply.add(r, 1.0, var("ts", n.id), m)
            supply.add(r, -1.0, var("tout_s", p.id), m)
    for r, n in enumerate(return_nodes):
        i = heat.node_index(n.id)
        # return water arrives through the mirrors of pipes leaving the node
        for j in np.flatnonzero(heat.V[i] < 0):
            p = heat.pipes[j]
            m = var("m", p.id)
            ret.add(r, 1.0, var("tr", n.id), m)
            ret.add(r, -1.0, var("tout_r", p.id), m)
    return supply, ret


def assemble_implicit_pipe_identities(system: CoupledSystem) -> EquationBlock:
    implicit = [p for p in system.heat.pipes if p.implicit]
    labels = [f"identity_s[{p.id}]" for p in implicit] + [f"identity_r[{p.id}]" for p in implicit]
    block = EquationBlock("identity", labels)
    for r, p in enumerate(implicit):
        block.add(r, 1.0, var("tout_s", p.id))
        block.add(r, -1.0, var("ts", p.from_node))
        block.add(len(implicit) + r, 1.0, var("tout_r", p.id))
        block.add(len(implicit) + r, -1.0, var("tr", p.to_node))
    return block


def assemble_node_power(system: CoupledSystem) -> EquationBlock:
    heat = system.heat
    nodes = [n for n in heat.nodes if n.kind is not NodeKind.INTERMEDIATE]
    block = EquationBlock("power", [f"power[{n.id}]" for n in nodes])
    cp = heat.heat_capacity
    for r, n in enumerate(nodes):
        block.add(r, 1.0, var("phi", n.id))
        block.add(r, -cp, var("min", n.id), var("ts", n.id))
        block.add(r, cp, var("min", n.id), var("tr", n.id))
    return block


def assemble_power_flow(system: CoupledSystem) -> EquationBlock:
    el = system.electric
    if el is None:
        return EquationBlock("power_flow", [])
    buses = el.buses
    pv = [b for b in buses if b.kind is BusKind.PV]
    labels = ([f"active[{b.id}]" for b in buses] + [f"reactive[{b.id}]" for b in buses]
              + [f"magnitude[{b.id}]" for b in pv])
    block = EquationBlock("power_flow", labels)
    n = len(buses)
    G, B = el.G, el.B
    for i, bi in enumerate(buses):
        ei, fi = var("e", bi.id), var("f", bi.id)
        for j, bj in enumerate(buses):
            ej, fj = var("e", bj.id), var("f", bj.id)
            g, b = G[i, j], B[i, j]
            # P_i = sum G(ei ej + fi fj) + B(fi ej - ei fj)
            block.add(i, g, ei, ej)
            block.add(i, g, fi, fj)
            block.add(i, b, fi, ej)
            block.add(i, -b, ei, fj)
            # Q_i = sum G(fi ej - ei fj) - B(ei ej + fi fj)
            block.add(n + i, g, fi, ej)
            block.add(n + i, -g, ei, fj)
            block.add(n + i, -b, ei, ej)
            block.add(n + i, -b, fi, fj)
        block.add(i, -1.0, var("p", bi.id))
        block.add(n + i, -1.0, var("q", bi.id))
    for r, b in enumerate(pv):
        e, f = var("e", b.id), var("f", b.id)
        block.add(2 * n + r, 1.0, e, e)
        block.add(2 * n + r, 1.0, f, f)
        block.add(2 * n + r, -b.voltage ** 2)
    return block


def assemble_coupling(system: CoupledSystem) -> EquationBlock:
    block = EquationBlock("coupling", [f"coupling[{i}]" for i in range(len(system.couplings))])
    for r, c in enumerate(system.couplings):
        phi, p = var("phi", c.heat_node), var("p", c.bus)
        if c.kind is CouplingKind.STEAM_TURBINE:
            block.add(r, 1.0, p)
            block.add(r, 1.0 / c.Z, phi)
            block.add(r, -c.eta_e * c.F_in)
        else:
            block.add(r, 1.0, phi)
            block.add(r, -c.c_m1, p)
    return block


def assemble_blocks(system: CoupledSystem) -> list[EquationBlock]:
    """All equation families in registry row order."""
    supply, ret = assemble_mixing(system)
    return [
        assemble_continuity(system),
        assemble_loop_pressure(system),
        supply,
        ret,
        assemble_implicit_pipe_identities(system),
        assemble_node_power(system),
        assemble_power_flow(system),
        assemble_coupling(system),
    ]


@dataclass(frozen=True)
class TermTable:
    """Flattened terms of all blocks with variables resolved to slots.

    Slot ``-1`` marks an absent factor: ``u = v = -1`` is a constant term and
    ``v = -1`` alone a linear one.
    """

    n_rows: int
    n_unknowns: int
    labels: tuple[str, ...]
    row: np.ndarray
    coef: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @classmethod
    def build(cls, system: CoupledSystem) -> "TermTable":
        index = system.index
        slot = index.slot
        rows, coefs, us, vs, labels = [], [], [], [], []
        offset = 0
        for block in assemble_blocks(system):
            rows += [offset + r for r in block.row]
            coefs += block.coef
            us += [slot[u] if u is not None else -1 for u in block.u]
            vs += [slot[v] if v is not None else -1 for v in block.v]
            labels += block.labels
            offset += len(block)
        if tuple(labels) != index.rows:
            raise AssertionError("equation blocks disagree with the registry row order")
        return cls(
            n_rows=offset,
            n_unknowns=len(index.y),
            labels=tuple(labels),
            row=np.array(rows, dtype=int),
            coef=np.array(coefs, dtype=float),
            u=np.array(us, dtype=int),
            v=np.array(vs, dtype=int),
        )

    def residual(self, S: np.ndarray, k: int) -> np.ndarray:
        """k-th coefficient of every row given slot coefficients ``S[0..k]``."""
        lin = (self.u >= 0) & (self.v < 0)
        bil = self.v >= 0
        const = self.u < 0
        out = np.zeros(self.n_rows)
        np.add.at(out, self.row[lin], self.coef[lin] * S[k, self.u[lin]])
        if np.any(bil):
            U = S[: k + 1, self.u[bil]]
            Vv = S[k::-1, self.v[bil]]
            np.add.at(out, self.row[bil], self.coef[bil] * np.sum(U * Vv, axis=0))
        if k == 0:
            np.add.at(out, self.row[const], self.coef[const])
        return out

    def term_scale(self, values: np.ndarray) -> np.ndarray:
        """Sum of absolute term values per row at the given slot values."""
        vals = np.where(self.u >= 0, values[np.maximum(self.u, 0)], 1.0)
        vals = vals * np.where(self.v >= 0, values[np.maximum(self.v, 0)], 1.0)
        out = np.zeros(self.n_rows)
        np.add.at(out, self.row, np.abs(self.coef * vals))
        return out

    def matrix(self, values: np.ndarray):
        """Coefficient matrix of ``Y(k)`` from zeroth-order slot values."""
        n = self.n_unknowns
        ri, ci, vals = [], [], []
        lin = (self.u >= 0) & (self.v < 0) & (self.u < n)
        ri.append(self.row[lin]), ci.append(self.u[lin]), vals.append(self.coef[lin])
        bil = self.v >= 0
        su = bil & (self.u < n)
        ri.append(self.row[su]), ci.append(self.u[su])
        vals.append(self.coef[su] * values[self.v[su]])
        sv = bil & (self.v < n)
        ri.append(self.row[sv]), ci.append(self.v[sv])
        vals.append(self.coef[sv] * values[self.u[sv]])
        A = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(ri), np.concatenate(ci))), shape=(self.n_rows, n)
        )
        return A.tocsr()


@dataclass
class WindowMatrix:
    """Equilibrated and factorized coefficient matrix of one window start."""

    A0: object
    labels: tuple[str, ...]
    row_scale: np.ndarray
    col_scale: np.ndarray
    factor: object
    sparse: bool
    window_id: int = 0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = self.row_scale * rhs
        if self.sparse:
            y = self.factor.solve(b)
        else:
            y = sla.lu_solve(self.factor, b, check_finite=False)
        return self.col_scale * y


def _equilibrate(A: sparse.csr_matrix, labels):
    absA = abs(A)
    rmax = np.asarray(absA.max(axis=1).todense()).ravel()
    if np.any(rmax == 0):
        raise SingularSystemError(labels[int(np.flatnonzero(rmax == 0)[0])], "all-zero row")
    r = 1.0 / rmax
    cmax = np.asarray((sparse.diags(r) @ absA).max(axis=0).todense()).ravel()
    if np.any(cmax == 0):
        raise SingularSystemError(labels[0], f"unknown {int(np.flatnonzero(cmax == 0)[0])} has no equation")
    return r, 1.0 / cmax


def build_and_factorize(A0, labels, window_id: int = 0, sparse_threshold: int = SPARSE_THRESHOLD,
                        pivot_tol: float = 1e-12) -> WindowMatrix:
    """LU-factorize ``A0`` after row and column max-norm equilibration.

    A pivot below ``pivot_tol`` (relative to the equilibrated entries, which
    are at most one) is reported with the label of the row it landed on.
    """
    A = sparse.csr_matrix(A0)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"window matrix is {A.shape}, not square")
    r, c = _equilibrate(A, labels)
    As = sparse.diags(r) @ A @ sparse.diags(c)
    use_sparse = n > sparse_threshold
    if use_sparse:
        try:
            factor = spla.splu(As.tocsc())
        except RuntimeError:
            factor = None
        if factor is None or np.min(np.abs(factor.U.diagonal())) < pivot_tol:
            _dense_pivot_check(As.toarray(), labels, pivot_tol)
            raise SingularSystemError(labels[0], "sparse factorization failed")
    else:
        dense = As.toarray()
        factor = _dense_pivot_check(dense, labels, pivot_tol)
    return WindowMatrix(A0=A, labels=tuple(labels), row_scale=r, col_scale=c, factor=factor,
                        sparse=use_sparse, window_id=window_id)


def _dense_pivot_check(dense, labels, pivot_tol):
    with warnings.catch_warnings():
        # a zero pivot is reported below with its equation label
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(dense, check_finite=False)
    diag = np.abs(np.diag(lu))
    bad = np.flatnonzero(diag < pivot_tol)
    if bad.size:
        perm = np.arange(len(piv))
        for i, p in enumerate(piv):
            perm[i], perm[p] = perm[p], perm[i]
        i = int(bad[0])
        raise SingularSystemError(labels[perm[i]], f"pivot {diag[i]:.3e} at position {i}")
    return lu, piv
