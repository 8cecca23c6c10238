import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import polynomial as P

from heies.dtseries import (
    BreakpointError,
    DriverProfile,
    DtSeries,
    derive_driver_dt,
    dt_add,
    dt_convolve,
    dt_derivative,
    dt_product,
    evaluate,
    first_root_in_window,
)

coef = st.floats(-10, 10, allow_nan=False)
series = st.lists(coef, min_size=1, max_size=8)


def test_add_examples():
    assert np.array_equal(dt_add([1, 2], [3, 4]).coefficients, [4, 6])
    a = DtSeries([1.0, -2.0, 0.5])
    assert np.array_equal((a + DtSeries(np.zeros(3))).coefficients, a.coefficients)
    with pytest.raises(ValueError):
        dt_add([1, 2], [1, 2, 3])


@given(series, st.floats(0, 3))
def test_add_evaluates_pointwise(a, t):
    b = [x * 0.5 - 1 for x in a]
    assert evaluate(dt_add(a, b), t) == pytest.approx(evaluate(a, t) + evaluate(b, t), abs=1e-9)


def test_product_examples():
    assert dt_product([1, 0, 0], [2, 3, 0], 1) == 3
    assert dt_product([0, 1], [0, 1], 1) == 0
    with pytest.raises(ValueError):
        dt_product([1, 2], [1, 2], 2)
    with pytest.raises(ValueError):
        dt_product(np.ones((2, 2)), np.ones((2, 3)), 0)


@given(st.lists(coef, min_size=4, max_size=4), st.lists(coef, min_size=4, max_size=4))
def test_convolution_matches_polynomial_product(a, b):
    full = P.polymul(a, b)
    full = np.pad(full, (0, 7 - len(full)))
    got = dt_convolve(a, b).coefficients
    assert np.allclose(got, full[:4], atol=1e-9)


@given(series, series, st.floats(0, 2))
def test_product_of_evaluations(a, b, t):
    # pad both to the full product degree so nothing is truncated
    n = len(a) + len(b) - 1
    A, B = np.pad(a, (0, n - len(a))), np.pad(b, (0, n - len(b)))
    prod = dt_convolve(A, B)
    assert evaluate(prod, t) == pytest.approx(evaluate(a, t) * evaluate(b, t), rel=1e-9, abs=1e-9)


def test_derivative_examples():
    assert np.array_equal(dt_derivative([0, 0, 1]).coefficients, [0, 2])
    assert np.array_equal(dt_derivative([5.0]).coefficients, [0])


@given(st.lists(coef, min_size=2, max_size=8))
def test_derivative_matches_polyder(a):
    assert np.allclose(dt_derivative(a).coefficients, P.polyder(a))


@given(st.lists(coef, min_size=2, max_size=6), st.floats(0.1, 2))
def test_derivative_commutes_with_evaluate(a, t):
    h = 1e-6
    fd = (evaluate(a, t + h) - evaluate(a, t - h)) / (2 * h)
    exact = evaluate(dt_derivative(a), t)
    assert fd == pytest.approx(exact, rel=1e-5, abs=1e-5)


def test_evaluate_examples():
    assert evaluate([1, 1], 2) == 3
    A = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(evaluate(A, 0.0), A[0])
    assert evaluate(A, np.array([0.0, 1.0])).shape == (2, 2)


@given(series, st.floats(-3, 3))
def test_evaluate_matches_power_sum(a, t):
    naive = sum(c * t ** k for k, c in enumerate(a))
    assert evaluate(a, t) == pytest.approx(naive, rel=1e-12, abs=1e-9)


@given(series, series, st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 2))
def test_linearity(a, b, alpha, beta, t):
    n = max(len(a), len(b))
    A, B = np.pad(a, (0, n - len(a))), np.pad(b, (0, n - len(b)))
    lhs = evaluate(alpha * A + beta * B, t)
    assert lhs == pytest.approx(alpha * evaluate(A, t) + beta * evaluate(B, t), abs=1e-8)


def test_root_examples():
    assert first_root_in_window([1, -2], 1.0) == pytest.approx(0.5, abs=1e-12)
    assert first_root_in_window([1, 0, 1], 1.0) is None
    with pytest.raises(ValueError):
        first_root_in_window(np.ones((2, 2)), 1.0)


@given(st.lists(st.floats(0.05, 0.95), min_size=3, max_size=3, unique=True))
def test_root_recovers_smallest_factored_root(roots):
    roots = sorted(roots)
    if min(np.diff(roots)) < 1.0 / 64:
        roots = [roots[0], roots[0] + 0.2, roots[0] + 0.4]
    c = P.polyfromroots(roots)
    got = first_root_in_window(c, 1.0)
    assert got == pytest.approx(roots[0], abs=1e-10)


def test_driver_constant_and_ramp():
    assert np.array_equal(derive_driver_dt(DriverProfile.constant(85.0), 0.0, 3), [85, 0, 0, 0])
    ramp = DriverProfile("piecewise-linear", times=(0.0, 10.0), values=(10.0, 30.0))
    assert np.allclose(derive_driver_dt(ramp, 0.0, 2), [10, 2, 0])
    assert np.allclose(derive_driver_dt(ramp, 4.0, 2), [18, 2, 0])
    assert np.count_nonzero(derive_driver_dt(ramp, 4.0, 6)) == 2


def test_driver_sine_taylor_coefficients():
    prof = DriverProfile("sinusoid", amplitude=1.0, period=2 * math.pi)
    expected = [0, 1, 0, -1 / 6, 0, 1 / 120]
    assert np.allclose(derive_driver_dt(prof, 0.0, 5), expected, atol=1e-15)


@settings(max_examples=30)
@given(st.floats(0, 100), st.floats(1, 50))
def test_driver_sine_pythagorean(t0, period):
    sin = DriverProfile("sinusoid", amplitude=1.0, period=period)
    cos = DriverProfile("sinusoid", amplitude=1.0, period=period, phase=math.pi / 2)
    S = derive_driver_dt(sin, t0, 30)
    C = derive_driver_dt(cos, t0, 30)
    tau = np.linspace(0, period / 8, 9)
    assert np.allclose(evaluate(S, tau) ** 2 + evaluate(C, tau) ** 2, 1.0, atol=1e-10)


def test_driver_window_straddling_breakpoint():
    step = DriverProfile("step", times=(0.0, 5.0), values=(1.0, 2.0))
    with pytest.raises(BreakpointError):
        derive_driver_dt(step, 0.0, 3, window_end=10.0)
    assert np.array_equal(derive_driver_dt(step, 0.0, 2, window_end=5.0), [1, 0, 0])


def test_profile_validation():
    with pytest.raises(ValueError):
        DriverProfile("step", times=(1.0, 1.0), values=(0.0, 1.0))
    with pytest.raises(ValueError):
        DriverProfile("sinusoid", period=0.0)
    with pytest.raises(ValueError):
        DriverProfile("wave")


def test_step_left_limit():
    step = DriverProfile("step", times=(5.0,), values=(2.0,))
    assert step.left_limit(5.0) == 2.0  # held before the first knot
    step = DriverProfile("step", times=(0.0, 5.0), values=(1.0, 2.0))
    assert step.left_limit(5.0) == 1.0 and step.at(5.0) == 2.0
