"""Damped Newton iteration with a finite-difference Jacobian."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla


class NewtonError(RuntimeError):
    def __init__(self, message: str, max_residual: float, worst: str):
        super().__init__(f"{message}; max scaled residual {max_residual:.3e} at {worst}")
        self.max_residual = max_residual
        self.worst = worst


@dataclass
class NewtonResult:
    y: np.ndarray
    iterations: int
    max_residual: float
    jacobian: np.ndarray | None = None


def fd_jacobian(fun, y, f0, rel=1e-7, floor=1e-6):
    J = np.empty((f0.size, y.size))
    for j in range(y.size):
        h = rel * max(abs(y[j]), floor)
        yp = y.copy()
        yp[j] += h
        J[:, j] = (fun(yp) - f0) / h
    return J


def newton(fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]], y0, labels,
           tol: float = 1e-12, max_iter: int = 50, jacobian=None, chord: bool = False,
           message: str = "Newton iteration did not converge") -> NewtonResult:
    """Drive ``residual / scale`` below ``tol``.

    ``fun(y)`` returns the raw residual and its row scale.  Rows are weighted
    by the scale of the current iterate.  With ``chord=True`` the Jacobian
    passed in (or computed at the first iterate) is reused while the
    residual keeps falling quickly.
    """
    y = np.array(y0, dtype=float)
    r, s = fun(y)
    w = 1.0 / np.maximum(s, 1e-300)
    J = jacobian
    lu = None
    for it in range(max_iter + 1):
        scaled = np.abs(r * w)
        worst = float(scaled.max()) if scaled.size else 0.0
        if worst <= tol:
            return NewtonResult(y, it, worst, J)
        if it == max_iter:
            break
        if J is None or not chord:
            J = fd_jacobian(lambda v: fun(v)[0], y, r)
            lu = None
        if lu is None:
            lu = sla.lu_factor(J * w[:, None], check_finite=False)
        step = -sla.lu_solve(lu, r * w, check_finite=False)
        norm0 = np.linalg.norm(r * w)
        lam = 1.0
        while True:
            cand = y + lam * step
            rc, sc = fun(cand)
            if np.all(np.isfinite(rc)) and np.linalg.norm(rc * w) < norm0 * (1 - 1e-4 * lam):
                break
            lam *= 0.5
            if lam < 1e-6:
                if chord:
                    # stale chord Jacobian; refresh once before giving up
                    J = fd_jacobian(lambda v: fun(v)[0], y, r)
                    lu = sla.lu_factor(J * w[:, None], check_finite=False)
                    step = -sla.lu_solve(lu, r * w, check_finite=False)
                    chord = False
                    lam = 1.0
                    continue
                cand, rc, sc = y + step, *fun(y + step)
                break
        if chord and np.linalg.norm(rc * w) > 0.25 * norm0:
            J, lu = None, None
        y, r = cand, rc
        w = 1.0 / np.maximum(sc, 1e-300)
        if chord and J is not None:
            lu = sla.lu_factor(J * w[:, None], check_finite=False)
    i = int(np.argmax(np.abs(r * w)))
    raise NewtonError(message, float(np.abs(r * w)[i]), labels[i])
