"""Pipe thermal transport on a semi-discrete TVD grid.

Each pipe side (supply or return) is a row of ``M`` grid nodes; node 0 is the
inlet boundary and node ``M - 1`` the outlet.  The rate of every node
``j >= 1`` is

    dT_j/dt = mdot / (gamma*rho*dx) * (F_{j-1} - F_j) - a * (T_j - T_amb)

with face values ``F_i = T_i + dx/2 * s_i`` and ``a = lambda / (gamma*rho*Cp)``.
The slope ``s_i`` is one of the three minmod candidates, chosen once from the
node values at the window start.  The equations of nodes 1 and ``M - 1`` use
zero slopes on both faces.

Expanded over Taylor coefficients with a frozen selection the flux
difference is a fixed linear map ``D`` of the node values, so

    (k+1) T(k+1) = 1/(gamma*rho*dx) * sum_m Mdot(m) * D T(k-m)
                   - a * (T(k) - T_amb * delta(k))

for the interior and outlet nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import sparse

from .dtseries import DriverProfile
from .network import Pipe


class Slope(IntEnum):
    ZERO = 0
    LEFT = 1
    CENTRAL = 2
    RIGHT = 3


def minmod(chi1, chi2, chi3):
    """Smallest-magnitude argument when all share a sign, else zero."""
    c = np.stack(np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (chi1, chi2, chi3))))
    pos = np.all(c > 0, axis=0)
    neg = np.all(c < 0, axis=0)
    out = np.where(pos, c.min(axis=0), np.where(neg, c.max(axis=0), 0.0))
    return out[()] if out.ndim == 0 else out


def slope_candidates(values, dx: float, theta: float):
    """``(chi1, chi2, chi3)`` at the nodes that have both neighbours."""
    T = np.asarray(values, dtype=float)
    left = theta * (T[1:-1] - T[:-2]) / dx
    central = (T[2:] - T[:-2]) / (2 * dx)
    right = theta * (T[2:] - T[1:-1]) / dx
    return left, central, right


def select_slopes(values, dx: float, theta: float) -> np.ndarray:
    """Which minmod candidate each node uses; ties prefer central, then left.

    The end nodes have only one neighbour and always get ``Slope.ZERO``.
    """
    T = np.asarray(values, dtype=float)
    sel = np.zeros(T.shape[0], dtype=np.int8)
    if T.shape[0] < 3:
        return sel
    left, central, right = slope_candidates(T, dx, theta)
    m = minmod(left, central, right)
    interior = np.zeros(left.shape, dtype=np.int8)
    nz = m != 0
    interior[nz & (right == m)] = int(Slope.RIGHT)
    interior[nz & (left == m)] = int(Slope.LEFT)
    interior[nz & (central == m)] = int(Slope.CENTRAL)
    sel[1:-1] = interior
    return sel


DENSE_GRID_LIMIT = 200


def flux_operator(selection, theta: float, dense: bool | None = None):
    """Matrix ``D`` with ``(D @ T)[j-1] = F_{j-1} - F_j`` for nodes ``j = 1..M-1``.

    ``F_i`` is the face value of node ``i`` with the slope times ``dx/2``
    written out from ``selection``; node rows 1 and ``M - 1`` use zero slopes.
    Grids up to ``DENSE_GRID_LIMIT`` nodes get a dense array unless ``dense``
    says otherwise.
    """
    sel = np.asarray(selection, dtype=int)
    M = sel.shape[0]
    half = 0.5 * theta
    # face stencil (T_{i-1}, T_i, T_{i+1}) of F_i, by slope code
    table = np.array([[0.0, 1.0, 0.0], [-half, 1 + half, 0.0], [-0.25, 1.0, 0.25], [0.0, 1 - half, half]])
    stencil = table[sel]
    rows = [np.array([0, 0]), np.array([M - 2, M - 2])] if M > 2 else [np.array([0, 0])]
    cols = [np.array([0, 1]), np.array([M - 2, M - 1])] if M > 2 else [np.array([0, 1])]
    vals = [np.array([1.0, -1.0])] * len(rows)
    j = np.arange(2, M - 1)
    if j.size:
        r = np.repeat(j - 1, 6)
        c = (j[:, None] + np.array([-2, -1, 0, -1, 0, 1])).ravel()
        v = np.concatenate([stencil[j - 1], -stencil[j]], axis=1).ravel()
        rows.append(r), cols.append(c), vals.append(v)
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    if dense is None:
        dense = M <= DENSE_GRID_LIMIT
    if dense:
        D = np.zeros((M - 1, M))
        np.add.at(D, (rows, cols), vals)
        return D
    keep = vals != 0
    return sparse.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(M - 1, M))


def grid_size(length: float, dx: float) -> int:
    """Node count so that the actual spacing does not exceed ``dx``."""
    if not dx > 0:
        raise ValueError("dx must be > 0")
    return int(math.ceil(length / dx - 1e-9)) + 1


@dataclass
class PipeGrid:
    """One side of one pipe: node temperatures as Taylor coefficients.

    ``coefficients[k, j]`` is the k-th coefficient of node ``j``; node 0 is
    the inlet.  ``selection`` and ``D`` are frozen at the window start.
    """

    pipe_id: str
    side: str
    length: float
    M: int
    theta: float
    mass_per_length: float
    decay: float
    ambient: float
    coefficients: np.ndarray
    selection: np.ndarray = field(default=None)
    D: object = field(default=None, repr=False)
    _flux: list = field(default_factory=list, repr=False)

    @classmethod
    def for_pipe(cls, pipe: Pipe, side: str, dx: float, theta: float, ambient: float,
                 values, order: int) -> "PipeGrid":
        M = grid_size(pipe.length, dx)
        values = np.asarray(values, dtype=float)
        if values.shape != (M,):
            raise ValueError(f"pipe {pipe.id}: expected {M} node values, got {values.shape}")
        coeffs = np.zeros((order + 1, M))
        coeffs[0] = values
        return cls(
            pipe_id=pipe.id,
            side=side,
            length=pipe.length,
            M=M,
            theta=theta,
            mass_per_length=pipe.mass_per_length,
            decay=pipe.heat_transfer / (pipe.mass_per_length * pipe.heat_capacity),
            ambient=ambient,
            coefficients=coeffs,
        )

    @property
    def dx(self) -> float:
        return self.length / (self.M - 1)

    @property
    def positions(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.M)

    def freeze(self):
        freeze_slopes(self, self.theta)
        return self


def freeze_slopes(grid: PipeGrid, theta: float) -> PipeGrid:
    """Fix the slope choice of every node from the zeroth coefficients."""
    grid.theta = theta
    grid.selection = select_slopes(grid.coefficients[0], grid.dx, theta)
    grid.D = flux_operator(grid.selection, theta)
    grid._flux = []
    return grid


def dt_pde_coefficient(grid: PipeGrid, mdot, k: int) -> np.ndarray:
    """Coefficient ``k + 1`` of nodes ``1..M-1`` from orders ``0..k``.

    ``mdot`` holds the mass-flow coefficients ``Mdot(0..k)``.  The inlet
    coefficient ``coefficients[k, 0]`` must already be set.
    """
    if grid.D is None:
        raise ValueError(f"pipe {grid.pipe_id}: slopes are not frozen")
    if k + 1 >= grid.coefficients.shape[0]:
        raise ValueError(f"order {k + 1} exceeds the allocated {grid.coefficients.shape[0] - 1}")
    mdot = np.asarray(mdot, dtype=float)
    # D T(m) is reused across levels
    while len(grid._flux) <= k:
        m = len(grid._flux)
        grid._flux.append(grid.D @ grid.coefficients[m])
    flux = np.asarray(grid._flux[: k + 1])
    conv = mdot[: k + 1] @ flux[::-1]
    T = grid.coefficients[k, 1:]
    relax = T - (grid.ambient if k == 0 else 0.0)
    return (conv / (grid.mass_per_length * grid.dx) - grid.decay * relax) / (k + 1)


def semi_discrete_rate(values, selection, theta, dx, mass_per_length, decay, ambient, mdot):
    """Time derivative of nodes ``1..M-1`` for given node values."""
    D = flux_operator(selection, theta)
    T = np.asarray(values, dtype=float)
    return mdot / (mass_per_length * dx) * (D @ T) - decay * (T[1:] - ambient)


def steady_profile(pipe: Pipe, inlet: float, mdot: float, dx: float, theta: float,
                   ambient: float, max_iter: int = 20) -> np.ndarray:
    """Node temperatures at which the semi-discrete rates vanish.

    Slope choices are refrozen from each solution until they stop changing.
    """
    M = grid_size(pipe.length, dx)
    h = pipe.length / (M - 1)
    decay = pipe.heat_transfer / (pipe.mass_per_length * pipe.heat_capacity)
    if mdot <= 0:
        fill = ambient if decay > 0 else inlet
        out = np.full(M, fill)
        out[0] = inlet
        return out
    sel = np.zeros(M, dtype=np.int8)
    c = mdot / (pipe.mass_per_length * h)
    for _ in range(max_iter):
        D = flux_operator(sel, theta, dense=True)
        A = c * D[:, 1:] - decay * np.eye(M - 1)
        b = -c * D[:, 0] * inlet - decay * ambient
        T = np.empty(M)
        T[0] = inlet
        T[1:] = np.linalg.solve(A, b)
        new = select_slopes(T, h, theta)
        if np.array_equal(new, sel):
            break
        sel = new
    return T


def reference_exact(boundary: DriverProfile | float, pipe: Pipe, x, t, mdot: float,
                    ambient: float, initial=None):
    """Characteristic-line solution of the pipe equation at constant ``mdot``.

    ``boundary`` gives the inlet temperature over time.  Points whose
    characteristic starts inside the pipe at ``t = 0`` use ``initial(x)`` when
    given and the boundary history at negative times otherwise.
    """
    if not mdot > 0:
        raise ValueError("reference_exact needs mdot > 0")
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    x, t = np.broadcast_arrays(x, t)
    rho_a = pipe.mass_per_length
    delay = rho_a * x / mdot
    a = pipe.heat_transfer / (rho_a * pipe.heat_capacity)

    def inlet(s):
        if isinstance(boundary, DriverProfile):
            return np.asarray(boundary.at(s), dtype=float)
        return np.full(np.shape(s), float(boundary))

    attenuation = np.exp(-pipe.heat_transfer * x / (pipe.heat_capacity * mdot))
    out = (1 - attenuation) * ambient + attenuation * inlet(t - delay)
    if initial is not None:
        early = t < delay
        if np.any(early):
            start = x[early] - mdot * t[early] / rho_a
            decay = np.exp(-a * t[early])
            out = np.array(out, dtype=float)
            out[early] = ambient + (np.asarray(initial(start), dtype=float) - ambient) * decay
    return out[()] if out.ndim == 0 else out
