import numpy as np
import pytest

from nhimlab.arnold import ModelParams, TWO_PI, section_map_many
from nhimlab.chart import (Chart, block_jacobian, block_matrices, build_chart,
                           map_with_blocks, project_N, project_u,
                           straightened_map)
from nhimlab.errors import LeftDomain
from nhimlab.nhim import estimate_constants

P1 = ModelParams(1.0, 0.0, dt_log2=10, order=4)


@pytest.fixture(scope="module")
def chart1():
    return build_chart(P1, order=3, varsigma=0.2, band=(0.0, 1.0))


@pytest.fixture(scope="module")
def chart_mu():
    params = ModelParams(1.0, 1e-3, dt_log2=10, order=4)
    return build_chart(params, order=3, varsigma=0.2, band=(0.0, 1.0)), params


def test_N_fixed_pointwise(chart1):
    z = chart1.to_chart(np.array([[0.0, 0.0, 1.7, 0.42]]))
    assert abs(z[0, 0] - 1.7) <= 1e-14
    assert abs(z[0, 1] - 0.42) <= 1e-15
    assert np.max(np.abs(z[0, 2:])) <= 1e-14


def test_validation_items_within_target(chart1):
    for item in ("item2_ws_u0", "item3_wu_s0", "item4_leaf_ss", "item5_leaf_uu"):
        assert chart1.validation[item] <= 1e-4


def test_inverse_roundtrip(chart1):
    assert chart1.validation["inverse_roundtrip"] <= 1e-10


def test_straightened_shear_on_N(chart1):
    z = np.array([[1.0, 0.5, 0.0, 0.0]])
    out = straightened_map(z, chart1, P1)
    assert abs(out[0, 0] - (1.0 + TWO_PI * 0.5) % TWO_PI) <= 1e-12
    assert abs(out[0, 1] - 0.5) <= 1e-14
    assert np.max(np.abs(out[0, 2:])) <= 1e-12


def test_straightened_invariance_defects(chart1):
    assert chart1.validation["ftilde_u_on_ws"] <= chart1.chart_tol
    assert chart1.validation["ftilde_s_on_wu"] <= chart1.chart_tol


def test_stable_contraction(chart1):
    z = np.array([[2.0, 0.5, 0.004, 0.0]])
    out = straightened_map(z, chart1, P1)
    lam_meas = np.exp(-TWO_PI)
    assert abs(out[0, 2]) <= 0.55 * 0.004  # certificate-level bound
    assert abs(out[0, 2]) == pytest.approx(lam_meas * 0.004, rel=0.05)


def test_blocks_diagonal_on_N(chart1):
    bj = block_jacobian(np.array([1.0, 0.6, 0.0, 0.0]), chart1, P1)
    assert abs(bj.dsFs[0, 0]) == pytest.approx(np.exp(-TWO_PI), rel=1e-4)
    assert abs(bj.duFu[0, 0]) == pytest.approx(np.exp(TWO_PI), rel=1e-4)
    off = max(np.max(np.abs(bj.dsFx)), np.max(np.abs(bj.duFx)),
              np.max(np.abs(bj.dxFs)), np.max(np.abs(bj.duFs)),
              np.max(np.abs(bj.dxFu)), np.max(np.abs(bj.dsFu)))
    assert off <= chart1.chart_tol


def test_blocks_match_finite_differences(chart1):
    rng = np.random.default_rng(5)
    m_u = np.exp(TWO_PI)
    for _ in range(4):
        z = np.array([rng.uniform(0, TWO_PI), rng.uniform(0.1, 0.9),
                      rng.uniform(-5e-4, 5e-4), rng.uniform(-1, 1) * 0.1 / m_u])
        mats = block_matrices(z[None, :], chart1, P1)[0]
        h = 1e-6
        for j in range(4):
            zp = z.copy(); zp[j] += h
            zm = z.copy(); zm[j] -= h
            col = (straightened_map(zp[None, :], chart1, P1)[0]
                   - straightened_map(zm[None, :], chart1, P1)[0]) / (2 * h)
            col[0] = (col[0] + np.pi / h) % (TWO_PI / h) - np.pi / h \
                if abs(col[0]) > 100 else col[0]
            assert np.max(np.abs(col - mats[:, j])) <= 1e-4 * max(1.0, np.max(np.abs(mats[:, j])))


def test_projections():
    z = np.array([1.2, 0.4, 0.03, -0.02])
    assert np.allclose(project_N(z), [1.2, 0.4])
    assert project_u(z) == -0.02


def test_domain_guard(chart1):
    with pytest.raises(LeftDomain):
        straightened_map(np.array([[1.0, 0.5, 0.9, 0.0]]), chart1, P1)


def test_serialization_roundtrip(chart_mu):
    chart, params = chart_mu
    text = chart.to_text()
    back = Chart.from_text(text)
    z = np.array([[1.0, 0.5, 0.03, -0.02], [2.0, 0.7, -0.05, 0.01]])
    assert np.max(np.abs(chart.from_chart(z) - back.from_chart(z))) == 0.0
    assert back.chart_tol == chart.chart_tol


def test_mu_chart_straightens_perturbed_leaves(chart_mu):
    chart, params = chart_mu
    for item in ("item2_ws_u0", "item3_wu_s0", "item4_leaf_ss", "item5_leaf_uu"):
        assert chart.validation[item] <= 1e-5


def test_neighborhood_inequalities(chart_mu):
    # the straightened-derivative bounds that drive the strip estimates
    chart, params = chart_mu
    constants = estimate_constants(params, chart=chart, q=3, n_theta=4, n_band=3)
    lb = constants.lambda_bar
    rng = np.random.default_rng(2)
    n = 24
    m_u = np.exp(TWO_PI)
    s_box = min(constants.s_cap, chart.varsigma)
    zz = np.stack([rng.uniform(0, TWO_PI, n), rng.uniform(0.05, 0.95, n),
                   rng.uniform(-1, 1, n) * s_box,
                   rng.uniform(-1, 1, n) * 0.7 * chart.varsigma / m_u], axis=1)
    mats = block_matrices(zz, chart, params)
    tol = chart.chart_tol
    lam = constants.lambda_
    for m in mats:
        dsFs = abs(m[2, 2])
        duFu_inv = 1.0 / abs(m[3, 3])
        dxFx = np.linalg.norm(m[:2, :2], 2)
        assert dsFs < lb + tol
        assert duFu_inv < lb + tol
        assert dxFx * duFu_inv < lb + tol
        assert max(np.linalg.norm(m[:2, 2]), np.linalg.norm(m[2, :2])) \
            < (5 - 5 * lam) / (2 * (11 + lam)) + tol
        assert np.linalg.norm(m, 2) <= constants.C1 * (1 + 1e-6)


def test_map_with_blocks_consistency(chart1):
    z = np.array([[1.3, 0.5, 0.002, 1e-4]])
    img1 = straightened_map(z, chart1, P1)
    img2, mats = map_with_blocks(z, chart1, P1)
    assert np.max(np.abs(img1 - img2)) <= 1e-13
    assert np.max(np.abs(mats - block_matrices(z, chart1, P1))) <= 1e-9
