"""Differential-transformation (Taylor coefficient) arithmetic.

A series stores ``X(0..K)`` with ``x(t) = sum_k X(k) t**k`` around the start
of the current window.  Coefficient arrays have the order along axis 0 so a
vector-valued series is a ``(K + 1, n)`` array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SCAN_INTERVALS = 64


class BreakpointError(ValueError):
    """A window would straddle a driver breakpoint."""


@dataclass(frozen=True)
class DtSeries:
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.ndim == 0 or c.shape[0] == 0:
            raise ValueError("a series needs at least one coefficient")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def order(self) -> int:
        return self.coefficients.shape[0] - 1

    @property
    def shape(self):
        return self.coefficients.shape[1:]

    def __getitem__(self, k):
        return self.coefficients[k]

    def __call__(self, t):
        return evaluate(self, t)

    def __add__(self, other):
        return dt_add(self, other)

    def __mul__(self, scalar):
        return DtSeries(self.coefficients * scalar)

    __rmul__ = __mul__


def _coeffs(a) -> np.ndarray:
    return a.coefficients if isinstance(a, DtSeries) else np.asarray(a, dtype=float)


def dt_add(a, b) -> DtSeries:
    A, B = _coeffs(a), _coeffs(b)
    if A.shape != B.shape:
        raise ValueError(f"series shapes differ: {A.shape} vs {B.shape}")
    return DtSeries(A + B)


def dt_product(a, b, k: int):
    """k-th coefficient of the elementwise product of two series."""
    A, B = _coeffs(a), _coeffs(b)
    if A.shape[1:] != B.shape[1:]:
        raise ValueError(f"series dimensions differ: {A.shape[1:]} vs {B.shape[1:]}")
    if k > min(A.shape[0], B.shape[0]) - 1:
        raise ValueError(f"order {k} exceeds the available coefficients")
    return np.sum(A[: k + 1] * B[k::-1], axis=0)


def dt_convolve(a, b) -> DtSeries:
    """All coefficients of the product up to the common order."""
    A, B = _coeffs(a), _coeffs(b)
    K = min(A.shape[0], B.shape[0])
    return DtSeries(np.array([dt_product(A, B, k) for k in range(K)]))


def dt_derivative(a) -> DtSeries:
    A = _coeffs(a)
    if A.shape[0] == 1:
        return DtSeries(np.zeros_like(A))
    k = np.arange(1, A.shape[0]).reshape((-1,) + (1,) * (A.ndim - 1))
    return DtSeries(k * A[1:])


def evaluate(a, t):
    """Horner evaluation of the series at ``t`` (scalar or array of times)."""
    A = _coeffs(a)
    t = np.asarray(t, dtype=float)
    if t.ndim:
        t = t.reshape(t.shape + (1,) * (A.ndim - 1))
    out = np.zeros(np.broadcast_shapes(t.shape, A.shape[1:])) + A[-1]
    for c in A[-2::-1]:
        out = out * t + c
    return out


def first_root_in_window(a, dt: float, intervals: int = SCAN_INTERVALS) -> float | None:
    """Smallest ``t'`` in ``(0, dt]`` where a scalar series changes sign.

    A uniform scan brackets the first sign change and bisection shrinks the
    bracket to a few ulps, which also drives ``|x(t')|`` below
    ``1e-12 * max|A|`` unless the series is ill-conditioned there.  Returns
    ``None`` when the scan sees no sign change.
    """
    A = _coeffs(a)
    if A.ndim != 1:
        raise ValueError("first_root_in_window expects a scalar series")
    grid = np.linspace(0.0, dt, intervals + 1)
    vals = evaluate(A, grid)
    if vals[0] == 0.0:
        vals[0] = evaluate(A, 1e-9 * dt)
    for i in range(intervals):
        a, b = vals[i], vals[i + 1]
        if b == 0.0 and a != 0.0:
            return float(grid[i + 1])
        if a * b < 0:
            lo, hi, flo = grid[i], grid[i + 1], a
            while True:
                mid = 0.5 * (lo + hi)
                fm = evaluate(A, mid)
                if fm == 0.0 or hi - lo <= 4 * np.finfo(float).eps * max(1.0, hi):
                    return float(mid)
                if np.sign(fm) == np.sign(flo):
                    lo, flo = mid, fm
                else:
                    hi = mid
    return None


# ---------------------------------------------------------------------------
# known driver trajectories

PROFILE_KINDS = ("constant", "step", "piecewise-linear", "sinusoid", "polynomial")


@dataclass(frozen=True)
class DriverProfile:
    """Time trajectory of a known variable.

    ``constant``          value
    ``step``              times, values (right-continuous, held outside)
    ``piecewise-linear``  times, values (held constant outside the knots)
    ``sinusoid``          offset, amplitude, period, phase, start, end;
                          ``offset + amplitude*sin(2*pi*(t-start)/period + phase)``
                          on ``[start, end)`` and ``offset`` elsewhere
    ``polynomial``        coefficients in absolute time, lowest first
    """

    kind: str
    value: float = 0.0
    times: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    offset: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0
    phase: float = 0.0
    start: float = 0.0
    end: float = math.inf
    coefficients: tuple[float, ...] = ()
    binding: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.kind in ("step", "piecewise-linear"):
            if not self.times or len(self.times) != len(self.values):
                raise ValueError(f"{self.kind} profile needs matching times and values")
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("breakpoint times must be strictly increasing")
        if self.kind == "sinusoid":
            if not self.period > 0:
                raise ValueError("sinusoid period must be > 0")
            if not self.end > self.start:
                raise ValueError("sinusoid end must follow start")
        if self.kind == "polynomial" and not self.coefficients:
            raise ValueError("polynomial profile needs coefficients")

    @classmethod
    def constant(cls, value, binding=None):
        return cls("constant", value=float(value), binding=binding)

    @property
    def _origin(self) -> float:
        return self.start if math.isfinite(self.start) else 0.0

    @property
    def breakpoints(self) -> tuple[float, ...]:
        if self.kind in ("step", "piecewise-linear"):
            return self.times
        if self.kind == "sinusoid":
            return tuple(t for t in (self.start, self.end) if math.isfinite(t))
        return ()

    def __call__(self, t):
        return self.at(t)

    def at(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full(t.shape, self.value)[()]
        if self.kind == "step":
            idx = np.searchsorted(self.times, t, side="right") - 1
            return np.asarray(self.values)[np.maximum(idx, 0)][()]
        if self.kind == "piecewise-linear":
            return np.interp(t, self.times, self.values)[()]
        if self.kind == "sinusoid":
            active = (t >= self.start) & (t < self.end)
            w = 2 * math.pi / self.period
            v = self.offset + self.amplitude * np.sin(w * (t - self._origin) + self.phase)
            return np.where(active, v, self.offset)[()]
        return np.polynomial.polynomial.polyval(t, self.coefficients)[()]

    def left_limit(self, t: float) -> float:
        """Value approached from below; differs from ``at`` only at jumps."""
        if self.kind == "step":
            idx = np.searchsorted(self.times, t, side="left") - 1
            return float(self.values[max(idx, 0)])
        if self.kind == "sinusoid" and t == self.end:
            w = 2 * math.pi / self.period
            return float(self.offset + self.amplitude * math.sin(w * (t - self._origin) + self.phase))
        if self.kind == "sinusoid" and t == self.start:
            return float(self.offset)
        return float(self.at(t))

    def scaled(self, factor: float) -> "DriverProfile":
        from dataclasses import replace

        return replace(
            self,
            value=self.value * factor,
            values=tuple(v * factor for v in self.values),
            offset=self.offset * factor,
            amplitude=self.amplitude * factor,
            coefficients=tuple(c * factor for c in self.coefficients),
        )


def derive_driver_dt(profile: DriverProfile, window_start: float, K: int,
                     window_end: float | None = None) -> np.ndarray:
    """Taylor coefficients ``W(0..K)`` of a driver at ``window_start``."""
    t0 = float(window_start)
    if window_end is not None:
        inside = [b for b in profile.breakpoints if t0 < b < window_end]
        if inside:
            raise BreakpointError(
                f"window [{t0}, {window_end}] straddles breakpoint(s) {inside}"
            )
    W = np.zeros(K + 1)
    kind = profile.kind
    if kind == "constant":
        W[0] = profile.value
    elif kind == "step":
        W[0] = profile.at(t0)
    elif kind == "piecewise-linear":
        times, values = profile.times, profile.values
        W[0] = profile.at(t0)
        i = int(np.searchsorted(times, t0, side="right"))
        if 0 < i < len(times) and K >= 1:
            W[1] = (values[i] - values[i - 1]) / (times[i] - times[i - 1])
    elif kind == "sinusoid":
        if profile.start <= t0 < profile.end:
            w = 2 * math.pi / profile.period
            theta = w * (t0 - profile._origin) + profile.phase
            S, C = math.sin(theta), math.cos(theta)
            W[0] = S
            for k in range(K):
                S, C = w * C / (k + 1), -w * S / (k + 1)
                W[k + 1] = S
            W *= profile.amplitude
        W[0] += profile.offset
    else:
        c = np.asarray(profile.coefficients)
        n = len(c)
        for k in range(min(K, n - 1) + 1):
            m = np.arange(k, n)
            binom = np.array([math.comb(int(j), k) for j in m], dtype=float)
            W[k] = np.sum(c[k:] * binom * t0 ** (m - k))
    return W
