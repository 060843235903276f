import numpy as np
import pytest

from nhimlab.arnold import ModelParams, TWO_PI
from nhimlab.chart import build_chart
from nhimlab.errors import NotTransverse
from nhimlab.graph_lab import (BasePointTrack, GraphCurve, c1_distance,
                               check_G_inverse, fit_initial_graph,
                               iterate_graph, pushforward_graph_distances,
                               restrict_graph, run_inclination_experiment,
                               tangent_recursion)
from nhimlab.nhim import HyperbolicityConstants, estimate_constants

P1 = ModelParams(1.0, 0.0, dt_log2=10, order=4)


@pytest.fixture(scope="module")
def chart1():
    return build_chart(P1, order=3, varsigma=0.2, band=(0.0, 1.0))


@pytest.fixture(scope="module")
def short_run(chart1):
    return run_inclination_experiment(P1, chart1, n_max=8)


def _chart_line_disk(chart, x0, s0, tilt, t_max, n=257):
    t = np.linspace(-t_max, t_max, n)
    straight = np.stack([x0[0] + tilt[0] * t, x0[1] + tilt[1] * t,
                         s0 + tilt[2] * t, t], axis=1)
    amb = chart.from_chart(straight)
    dinv = chart.dchart_from(straight)
    tan = np.einsum("nij,j->ni", dinv, np.array([tilt[0], tilt[1], tilt[2], 1.0]))
    return amb, tan


def test_fit_leaf_segment_gives_constant_graph(chart1):
    amb, tan = _chart_line_disk(chart1, (1.0, 0.5), 0.0, (0.0, 0.0, 0.0), 2e-4)
    g, delta = fit_initial_graph(amb, tan, chart1, 1.5e-4)
    assert delta == pytest.approx(1.5e-4)
    assert np.max(np.abs(g.S)) <= 1e-9
    assert g.xi_prime_norm() <= 1e-6


def test_fit_tilted_line_recovers_slope(chart1):
    amb, tan = _chart_line_disk(chart1, (1.0, 0.5), 1e-4, (0.0, 0.0, 0.3), 2e-4)
    g, _ = fit_initial_graph(amb, tan, chart1, 1.5e-4)
    assert np.max(np.abs(g.Sp - 0.3)) <= 1e-6


def test_fit_rejects_tangent_disk(chart1):
    # a curve inside the stable slice never crosses u = 0 transversely
    t = np.linspace(-1e-3, 1e-3, 101)
    straight = np.stack([np.full_like(t, 1.0), np.full_like(t, 0.5),
                         0.002 + t, np.zeros_like(t)], axis=1)
    amb = chart1.from_chart(straight)
    dinv = chart1.dchart_from(straight)
    tan = np.einsum("nij,j->ni", dinv, np.array([0.0, 0.0, 1.0, 0.0]))
    with pytest.raises(NotTransverse):
        fit_initial_graph(amb, tan, chart1, 1e-4)


def test_leaf_graph_is_fixed_by_iteration(chart1):
    constants = estimate_constants(P1, chart=chart1, q=3, n_theta=4, n_band=3)
    constants = constants.with_nu(1.0, delta_tilde=1e-4, eta=0.05)
    delta = constants.delta
    m = 65
    grid = np.linspace(-delta, delta, m)
    g = GraphCurve(delta=delta, u_grid=grid,
                   X=np.tile([1.0, 0.5], (m, 1)), S=np.zeros(m),
                   Xp=np.zeros((m, 2)), Sp=np.zeros(m), n=0)
    g1, diag = iterate_graph(g, chart1, P1, constants)
    assert abs(g1.X[g1.i0, 0] - (1.0 + TWO_PI * 0.5)) <= 1e-9
    assert np.max(np.abs(g1.S)) <= chart1.chart_tol
    assert g1.xi_prime_norm() <= 10 * chart1.chart_tol
    # image of G strictly covers the strip
    assert diag["image_radius"] > delta


def test_check_G_inverse_thresholds_and_leaf_case(chart1):
    constants = HyperbolicityConstants.from_lambda(0.6, nu=1.0, C2=10.0)
    assert (1 - constants.lambda_bar) / 6 == pytest.approx(0.0333333333, rel=1e-6)
    assert 6 * constants.lambda_bar / (5 + constants.lambda_bar) == pytest.approx(0.827586, rel=1e-5)
    assert constants.kappa == pytest.approx(0.1)

    real_constants = estimate_constants(P1, chart=chart1, q=3, n_theta=4, n_band=3)
    real_constants = real_constants.with_nu(1.0, delta_tilde=1e-4, eta=0.05)
    m = 33
    grid = np.linspace(-real_constants.delta, real_constants.delta, m)
    g = GraphCurve(delta=real_constants.delta, u_grid=grid,
                   X=np.tile([1.0, 0.5], (m, 1)), S=np.zeros(m),
                   Xp=np.zeros((m, 2)), Sp=np.zeros(m), n=0)
    rep = check_G_inverse(g, chart1, P1, real_constants)
    assert abs(rep["H_bound"]["value"]) <= 1e-6  # H vanishes on a leaf graph
    for v in rep.values():
        assert v["margin"] > 0


def test_c1_distance_leaf_graph_zero(chart1):
    m = 33
    grid = np.linspace(-1e-4, 1e-4, m)
    g = GraphCurve(delta=1e-4, u_grid=grid, X=np.tile([1.0, 0.5], (m, 1)),
                   S=np.zeros(m), Xp=np.zeros((m, 2)), Sp=np.zeros(m), n=0)
    track = BasePointTrack.start(np.array([1.0, 0.5, 0.0, 0.0]))
    assert c1_distance(g, track) <= 1e-14


def test_full_short_run_ledger(short_run):
    res = short_run
    assert res.failure is None
    v = res.verdicts
    for key in ("graph_property_all_n", "H_bound", "G_inverse_bound",
                "chi_prime_bound", "image_cover", "xi_recursion",
                "supS_envelope", "c0_envelope", "tangent_recursion",
                "tangent_envelope"):
        assert v[key], f"{key} failed: {v['min_margins']}"
    d = [r["d_c1"] for r in res.rows]
    assert d[3] < 1e-6 * d[0]  # far faster than the certificate rate


def test_xi_recursion_measured_both_sides(short_run):
    res = short_run
    for r in res.rows[:-1]:
        assert r["xi_recursion_margin"] > 0


def test_pushforward_m0_matches_c1_scale(short_run, chart1):
    res = short_run
    g = res.graphs[0]
    track = res.track
    d = pushforward_graph_distances(g, track, [0], chart1, P1)[0]
    c1 = c1_distance(g, track)
    # m = 0 is the chart image of the same data: equal up to the chart's
    # metric distortion, which is order one here
    assert 0.2 * c1 <= d <= 5.0 * c1


def test_pushforward_decreases(short_run):
    res = short_run
    vals = [r["push_dist_m2"] for r in res.rows if "push_dist_m2" in r]
    assert vals[-1] < 1e-3
    assert vals[-1] < vals[0]


def test_tangent_recursion_leaf_case(chart1):
    constants = estimate_constants(P1, chart=chart1, q=3, n_theta=4, n_band=3)
    constants = constants.with_nu(1.0, delta_tilde=1e-4, eta=0.05)
    track = BasePointTrack.start(np.array([1.0, 0.5, 0.0, 0.0]))
    for _ in range(6):
        x = track.P0n_list[-1]
        track.push(np.array([(x[0] + TWO_PI * x[1]) % TWO_PI, x[1], 0.0, 0.0]))
    tr = tangent_recursion(track, (np.zeros(2), np.zeros((1, 1))), chart1, P1,
                           constants, 6)
    assert np.max(tr.b) <= 10 * chart1.chart_tol
    assert np.max(tr.c) <= 10 * chart1.chart_tol
    assert tr.recursion_ok and tr.beta_decay_ok


def test_grid_refinement_stability(chart1):
    res_a = run_inclination_experiment(P1, chart1, n_max=3, n_grid=65,
                                       m_push=())
    res_b = run_inclination_experiment(P1, chart1, n_max=3, n_grid=129,
                                       m_push=())
    for ra, rb in zip(res_a.rows, res_b.rows):
        assert ra["d_c1"] == pytest.approx(rb["d_c1"], rel=2e-3, abs=1e-12)
