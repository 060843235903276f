import numpy as np
import pytest

from nhimlab.arnold import (J_SYMPL, ModelParams, MpSectionMap, PhasePoint,
                            SectionPoint, TWO_PI, flow, hamiltonian,
                            n_hyperbolic_blocks, section_map,
                            section_map_many, section_map_tangent_many,
                            section_map_with_tangent, symplectic_defect)
from nhimlab.errors import ConfigError
from nhimlab.numerics import Context
from nhimlab.pendulum import pendulum_energy


def test_hamiltonian_origin_zero():
    p = PhasePoint((0, 0, 0), (0, 0, 0))
    assert hamiltonian(p, ModelParams(0.3, 0.7)) == 0.0


def test_hamiltonian_pendulum_bottom():
    p = PhasePoint((np.pi, 0, 0), (0, 0, 0))
    assert hamiltonian(p, ModelParams(0.25, 0.0)) == pytest.approx(-0.5, abs=1e-15)


def test_hamiltonian_hand_value():
    # 1/2 - 0.5 + 0.25*0.1*(-2)*(cos(pi/2) + sin 0) = 0
    p = PhasePoint((np.pi, np.pi / 2, 0), (1, 0, 0))
    val = hamiltonian(p, ModelParams(0.25, 0.1))
    assert val == pytest.approx(0.0, abs=1e-15)


def test_flow_shear_on_N():
    params = ModelParams(0.25, 0.0, dt_log2=9, order=2)
    p = PhasePoint((0.0, 1.2, 0.0), (0.0, 0.7, 0.1))
    t = 16 * params.dt
    q = flow(p, t, params)
    assert q.theta[0] == 0.0 and q.r[0] == 0.0
    assert q.theta[1] == pytest.approx((1.2 + 0.7 * t) % TWO_PI, abs=1e-12)
    assert q.r[1] == 0.7


def test_flow_separatrix_energy():
    eps = 0.25
    params = ModelParams(eps, 0.0, dt_log2=12, order=4)
    th1, r1 = np.pi / 2, 2 * np.sqrt(eps) * np.sin(np.pi / 4)
    p = PhasePoint((th1, 0.3, 0.0), (r1, 0.5, 0.0))
    q = flow(p, TWO_PI, params)
    assert abs(pendulum_energy(q.theta[0], q.r[0], eps)) <= 1e-9


def test_flow_identity_and_bad_time():
    params = ModelParams(1.0, 0.0)
    p = PhasePoint((0.3, 0.4, 0.5), (0.1, 0.2, 0.3))
    assert flow(p, 0.0, params) is p
    with pytest.raises(ConfigError):
        flow(p, params.dt * 0.5, params)


def test_section_map_shear():
    params = ModelParams(0.25, 0.0, dt_log2=10)
    out = section_map(SectionPoint(0, 0, 0, 0.5), params)
    assert out.theta1 == 0.0 and out.r1 == 0.0
    assert out.theta2 == pytest.approx(np.pi, abs=1e-12)
    assert out.r2 == 0.5


def test_section_map_fixed_circle():
    params = ModelParams(0.25, 0.01, dt_log2=10)
    out = section_map(SectionPoint(0, 0, 1.234, 0.0), params)
    assert out.theta1 == 0.0 and out.r1 == 0.0
    assert out.theta2 == pytest.approx(1.234, abs=1e-12)
    assert out.r2 == 0.0


def test_section_multipliers_match_exponential():
    params = ModelParams(0.25, 0.0, dt_log2=12, order=4)
    _, jac = section_map_with_tangent(SectionPoint(0, 0, 1.0, 0.5), params)
    mults = np.sort(np.linalg.eigvals(jac[:2, :2]).real)
    assert mults[1] == pytest.approx(np.exp(np.pi), abs=1e-9)
    assert mults[0] == pytest.approx(np.exp(-np.pi), abs=1e-9)


def test_tangent_matches_finite_differences():
    params = ModelParams(0.25, 0.01, dt_log2=9, order=4)
    s0 = np.array([0.4, 0.3, 1.1, 0.6])
    _, jac = section_map_tangent_many(s0, params)
    step = 1e-6
    for j in range(4):
        sp = s0.copy(); sp[j] += step
        sm = s0.copy(); sm[j] -= step
        col = (section_map_many(sp, params, reduce_angles=False)
               - section_map_many(sm, params, reduce_angles=False)) / (2 * step)
        assert np.max(np.abs(col - jac[:, j])) <= 1e-6


def test_tangent_det_and_block_structure_mu0():
    params = ModelParams(0.25, 0.0, dt_log2=10, order=4)
    _, jac = section_map_tangent_many(np.array([0.0, 0.0, 1.0, 0.5]), params)
    assert np.linalg.det(jac) == pytest.approx(1.0, abs=1e-10)
    shear = jac[2:, 2:]
    assert np.allclose(shear, [[1.0, TWO_PI], [0.0, 1.0]], atol=1e-10)
    assert np.max(np.abs(jac[2:, :2])) <= 1e-12
    assert np.max(np.abs(jac[:2, 2:])) <= 1e-12


def test_energy_convergence_order():
    # full H including r3 (the section variables alone exchange energy with r3)
    rng = np.random.default_rng(3)
    pts = [PhasePoint(tuple(rng.uniform(0, TWO_PI, 3)), tuple(rng.uniform(-1.5, 1.5, 3)))
           for _ in range(6)]

    def max_drift(dt_log2, order):
        params = ModelParams(0.25, 0.01, dt_log2=dt_log2, order=order)
        worst = 0.0
        for p in pts:
            q = flow(p, TWO_PI, params)
            worst = max(worst, abs(hamiltonian(q, params) - hamiltonian(p, params)))
        return worst

    for order, expect in ((2, 4.0), (4, 16.0)):
        d_coarse = max_drift(7, order)
        d_fine = max_drift(8, order)
        assert d_coarse / d_fine == pytest.approx(expect, rel=0.35)


def test_symplecticity_over_random_points():
    params = ModelParams(0.25, 0.01, dt_log2=11, order=4)
    rng = np.random.default_rng(7)
    pts = np.stack([rng.uniform(0, TWO_PI, 100), rng.uniform(-2, 2, 100),
                    rng.uniform(0, TWO_PI, 100), rng.uniform(-2, 2, 100)], axis=1)
    _, jacs = section_map_tangent_many(pts, params)
    worst = max(symplectic_defect(j) for j in jacs)
    assert worst <= 1e-8


def test_reversibility():
    params = ModelParams(0.25, 0.01, dt_log2=10, order=4)
    p = PhasePoint((0.7, 2.1, 0.0), (0.4, 0.8, 0.2))
    q = flow(flow(p, TWO_PI, params), -TWO_PI, params)
    dth = (np.array(q.theta) - np.array(p.theta) + np.pi) % TWO_PI - np.pi
    assert np.max(np.abs(dth)) <= 1e-10
    assert np.max(np.abs(np.array(q.r) - np.array(p.r))) <= 1e-10


def test_n_invariance_exact():
    for mu in (0.0, 0.01, 0.3):
        params = ModelParams(0.25, mu, dt_log2=11, order=4)
        out = section_map_many(np.array([0.0, 0.0, 2.0, 0.37]), params)
        assert out[0] == 0.0 and out[1] == 0.0
        assert out[3] == 0.37
        assert abs(out[2] - (2.0 + TWO_PI * 0.37) % TWO_PI) <= 1e-12


def test_hyperbolic_block_fast_path_matches_full():
    params = ModelParams(0.25, 0.01, dt_log2=9, order=2)
    blocks = n_hyperbolic_blocks(np.array([1.3]), np.array([0.6]), params)
    _, jac = section_map_tangent_many(np.array([0.0, 0.0, 1.3, 0.6]), params)
    assert np.max(np.abs(blocks[0] - jac[:2, :2])) <= 1e-12


def test_mp_map_matches_numpy():
    params = ModelParams(0.25, 5e-3, dt_log2=8, order=2)
    ctx = Context(200)
    m = MpSectionMap(params, ctx)
    st = m((0.1, 0.05, 1.0, 0.5))
    ref = section_map_many(np.array([0.1, 0.05, 1.0, 0.5]), params)
    assert max(abs(float(a) - b) for a, b in zip(st, ref)) <= 1e-14
    back = m(st, direction=-1)
    start = (0.1, 0.05, 1.0, 0.5)
    assert max(abs(float(a) - b) for a, b in zip(back, start)) <= 1e-30


def test_mp_tangent_matches_numpy():
    params = ModelParams(0.25, 5e-3, dt_log2=8, order=2)
    ctx = Context(160)
    m = MpSectionMap(params, ctx)
    _, jmp = m.with_tangent((0.4, 0.3, 1.1, 0.6))
    _, jnp_ = section_map_tangent_many(np.array([0.4, 0.3, 1.1, 0.6]), params)
    got = np.array([[float(x) for x in row] for row in jmp])
    assert np.max(np.abs(got - jnp_)) <= 1e-12
