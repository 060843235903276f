import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhimlab.errors import IllConditioned, NoConvergence, SingularJacobian
from nhimlab.numerics import (Context, conorm, cond, fd_jacobian, inverse,
                              newton_solve, op_norm, quad, quad_with_error)


def test_op_norm_identity():
    assert op_norm(np.eye(2)) == pytest.approx(1.0, abs=1e-14)


def test_op_norm_shear_against_eigen_solve():
    m = np.array([[1.0, 2 * np.pi], [0.0, 1.0]])
    # independent oracle: largest eigenvalue of M^T M
    lam = np.max(np.linalg.eigvalsh(m.T @ m))
    expected = math.sqrt(lam)
    assert op_norm(m) == pytest.approx(expected, rel=1e-13)
    assert expected == pytest.approx(np.pi + math.sqrt(np.pi ** 2 + 1), rel=1e-13)


def test_op_norm_zero():
    assert op_norm(np.zeros((3, 3))) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_conorm_inverse_product(vals):
    m = np.array(vals).reshape(2, 2) + 2.5 * np.eye(2)
    if cond(m) > 1e9:
        return
    assert op_norm(np.linalg.inv(m)) * conorm(m) == pytest.approx(1.0, rel=1e-12)


def test_inverse_condition_guard():
    good = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert np.allclose(inverse(good) @ good, np.eye(2))
    bad = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-15]])
    with pytest.raises(IllConditioned):
        inverse(bad)


def test_newton_quadratic():
    root = newton_solve(lambda x: x * x - 4.0, lambda x: 2.0 * x, 3.0, tol=1e-12)
    assert abs(root - 2.0) <= 1e-12


def test_newton_sin_finds_pi():
    root = newton_solve(np.sin, np.cos, 3.0, tol=1e-13)
    assert root == pytest.approx(math.pi, abs=1e-13)


def test_newton_no_real_root():
    with pytest.raises((NoConvergence, SingularJacobian)):
        newton_solve(lambda x: x * x + 1.0, lambda x: 2.0 * x, 1.0, max_iter=60)


def test_newton_postcondition_reevaluated():
    f = lambda x: np.array([x[0] ** 3 - 8.0, x[1] - 1.0])
    j = lambda x: np.array([[3.0 * x[0] ** 2, 0.0], [0.0, 1.0]])
    x = newton_solve(f, j, np.array([1.5, 0.0]), tol=1e-12)
    assert np.max(np.abs(f(x))) <= 1e-12


def test_fd_jacobian_matches_analytic():
    f = lambda x: np.array([x[0] ** 2 + x[1], np.sin(x[1])])
    x = np.array([0.7, 0.3])
    jac = fd_jacobian(f, x)
    expect = np.array([[1.4, 1.0], [0.0, np.cos(0.3)]])
    assert np.max(np.abs(jac - expect)) < 1e-9


def test_quad_sin():
    assert quad(np.sin, 0.0, np.pi, tol=1e-12) == pytest.approx(2.0, abs=1e-11)


def test_quad_sech_closed_form():
    val = quad(lambda t: 0.5 / np.cosh(t / 2.0) ** 2, -20.0, 20.0, tol=1e-12)
    assert val == pytest.approx(2.0 * math.tanh(10.0), abs=1e-11)


def test_quad_empty_interval():
    assert quad(np.sin, 1.0, 1.0) == 0.0


def test_quad_error_estimate_and_precision():
    ctx128 = Context(128)
    v53, err = quad_with_error(lambda t: np.exp(-t * t), -4.0, 4.0, tol=1e-10)
    v128 = quad(lambda t: ctx128.exp(-t * t), ctx128.real(-4), ctx128.real(4),
                tol=1e-10, ctx=ctx128)
    assert abs(float(v128) - v53) <= max(float(err), 1e-12)


def test_context_double_path_is_hardware():
    ctx = Context(53)
    assert ctx.is_double
    assert isinstance(ctx.real(0.1), float)
    assert ctx.real(0.1) == 0.1


def test_context_extended_precision():
    ctx = Context(200)
    x = ctx.sqrt(ctx.real(2))
    assert abs(float(x * x) - 2.0) < 1e-15
    with pytest.raises(ValueError):
        Context(40)
