import numpy as np
import pytest

from nhimlab.pendulum import (linearized_period_map, pendulum_energy,
                              saddle_frame, separatrix_r1,
                              separatrix_time_param)


def test_separatrix_values():
    assert separatrix_r1(np.pi, 0.25) == pytest.approx(1.0, abs=1e-15)
    assert separatrix_r1(1e-12, 0.25) == pytest.approx(0.0, abs=1e-12)
    assert separatrix_r1(np.pi / 2, 1.0) == pytest.approx(np.sqrt(2.0), rel=1e-15)


def test_separatrix_is_zero_energy():
    th = np.linspace(0.05, 2 * np.pi - 0.05, 101)
    h = pendulum_energy(th, separatrix_r1(th, 0.7), 0.7)
    assert np.max(np.abs(h)) <= 1e-14


def test_time_param_apex_and_asymptote():
    th, r1 = separatrix_time_param(0.0, 0.49)
    assert th == pytest.approx(np.pi, abs=1e-14)
    assert r1 == pytest.approx(2 * np.sqrt(0.49), rel=1e-14)
    th_inf, r1_inf = separatrix_time_param(80.0, 0.49)
    assert th_inf == pytest.approx(2 * np.pi, abs=1e-10)
    assert abs(r1_inf) <= 1e-10


def test_time_param_satisfies_pendulum_equations():
    eps = 0.36
    t = np.linspace(-6, 6, 241)
    h = 1e-6
    th_p, r_p = separatrix_time_param(t + h, eps)
    th_m, r_m = separatrix_time_param(t - h, eps)
    th, r1 = separatrix_time_param(t, eps)
    dth = (th_p - th_m) / (2 * h)
    dr = (r_p - r_m) / (2 * h)
    assert np.max(np.abs(dth - r1)) <= 1e-7          # finite-difference floor
    assert np.max(np.abs(dr - eps * np.sin(th))) <= 1e-7
    # exact identity check at stated tolerance via the closed forms
    assert np.max(np.abs(r1 - 2 * np.sqrt(eps) * np.sin(th / 2))) <= 1e-12


def test_saddle_frame_multipliers():
    fr = saddle_frame(0.25)
    assert fr.multipliers[0] == pytest.approx(np.exp(np.pi), rel=1e-14)
    assert fr.multipliers[1] == pytest.approx(np.exp(-np.pi), rel=1e-14)
    fr1 = saddle_frame(1.0)
    assert fr1.multipliers[0] == pytest.approx(535.4916555247646, rel=1e-12)
    assert fr1.multipliers[1] == pytest.approx(0.0018674427317079893, rel=1e-12)


def test_saddle_frame_eigen_residual():
    eps = 0.81
    fr = saddle_frame(eps)
    a = np.array([[0.0, 1.0], [eps, 0.0]])
    for v, lam in zip(fr.vectors.T, fr.exponents):
        assert np.max(np.abs(a @ v - lam * v)) <= 1e-12


def test_linearized_period_map_eigenvalues():
    eps = 0.25
    m = linearized_period_map(eps)
    ev = np.sort(np.linalg.eigvals(m).real)
    fr = saddle_frame(eps)
    assert ev[1] == pytest.approx(fr.multipliers[0], rel=1e-12)
    assert ev[0] == pytest.approx(fr.multipliers[1], rel=1e-12)
