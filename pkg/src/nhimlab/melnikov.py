"""Splitting of W^u(T_omega) against the stable slice for mu > 0.

Two independent routes to the same quantity:

* a first-order integral of the pendulum-energy bracket along the closed-form
  homoclinic, with exponentially decaying tails truncated adaptively, and
* a direct gap oracle that grows strong unstable leaves from torus base
  points, charts their return near the stable slice, and records the signed
  unstable coordinate where they cross a fixed reference section {s = s_ref}.

The integral is an energy rate; the gap is a chart length.  The conversion
constant between them is fixed once by matching at a reference phase and is
recorded as a calibration, not treated as ground truth.  Crossing phases are
transported back to the homoclinic apex (theta1 = pi) so both profiles share
one phase convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arnold import ModelParams, TWO_PI, section_map_many
from .chart import Chart, IS, IU
from .errors import NoConvergence, TangencySuspected
from .nhim import leaves_batched
from .numerics import quad


def bracket_along_homoclinic(t, theta2, theta3, epsilon: float):
    """{H_p, H_1} along the homoclinic: the energy rate of the perturbation.

    H_1 = eps*(cos th1 - 1)*(cos th2 + sin th3); along th1(t), r1(t) the
    bracket reduces to eps * r1 * sin th1 * (cos th2 + sin th3) with
    r1 = 2 sqrt(eps) sech and sin th1 = -2 sech tanh.
    """
    se = np.sqrt(epsilon)
    u = se * np.asarray(t, dtype=float)
    sech = 1.0 / np.cosh(u)
    r1 = 2.0 * se * sech
    sin_th1 = -2.0 * sech * np.tanh(u)
    return epsilon * r1 * sin_th1 * (np.cos(theta2) + np.sin(theta3))


def _tail_time(epsilon: float, floor: float = 1e-14) -> float:
    """|t| beyond which the integrand envelope 8 eps^{3/2} sech^2 is < floor."""
    se = np.sqrt(epsilon)
    env0 = 8.0 * epsilon * se
    x = 0.5 * np.log(4.0 * max(env0, floor) / floor)
    return float(x / se)


def melnikov_integral(theta2_0: float, omega: float, epsilon: float,
                      t_anchor: float = 0.0, tol: float = 1e-10) -> float:
    """First-order splitting rate at apex phase theta2_0, per unit mu.

    t_anchor is the separatrix time of the measuring point: the splitting is
    observed on the section (theta3 = 0 there), so along the homoclinic
    theta3(sigma) = sigma - t_anchor while theta2(sigma) = theta2_0 + omega
    sigma.  t_anchor = 0 gives the apex-anchored integral; the gap oracle
    measures downstream and must be compared at its own anchor.
    """
    T = _tail_time(epsilon)

    def f(sig):
        return bracket_along_homoclinic(sig, theta2_0 + omega * sig,
                                        sig - t_anchor, epsilon)

    return float(quad(f, -T, T, tol=tol))


@dataclass
class Crossing:
    """One transit of the grown leaf through a reference section in the chart."""

    phase: float        # apex phase (theta2 transported back to theta1 = pi)
    gap: float          # signed u at the crossing of {s = s_ref}
    point: np.ndarray   # ambient section coordinates
    straight: np.ndarray
    r2_base: float      # r2 of the stable base-point estimate
    winding: int
    base_phase: float   # theta2 of the leaf's unstable base point
    interp_err: float   # sagitta bound of the segment interpolation
    sigma_lo: float = 0.0   # seed-parameter bracket of the crossing segment
    sigma_hi: float = 0.0


@dataclass
class MelnikovProfile:
    omega: float
    mu: float
    phases: np.ndarray
    values: np.ndarray          # mu * calibration * first-order integral
    oracle_values: np.ndarray   # direct gap at the same phases
    zeros: list                 # (theta2*, slope of the calibrated profile)
    calibration: float = 1.0
    integral_values: np.ndarray | None = None


class GapOracle:
    """Direct splitting measurement from grown unstable leaves.

    Leaves seeded on one multiplier period of the local unstable curve are
    iterated through the loop; each returning pass is scanned in chart
    coordinates for crossings of {s = s_ref}.  The collected (phase, gap)
    samples drive a low-order trigonometric fit, zero finding, and the
    reach estimate used by chain building.
    """

    def __init__(self, omega: float, params: ModelParams, chart: Chart,
                 n_bases: int = 8, n_sigma: int = 1200, s_ref: float | None = None,
                 max_windings: int = 14, seed_sigma: float = 1e-3):
        self.omega = float(omega)
        self.params = params
        self.chart = chart
        s_lim = chart.s_cap if np.isfinite(chart.s_cap) else chart.varsigma
        self.s_ref = s_ref if s_ref is not None else 0.5 * min(chart.varsigma, s_lim)
        self.max_windings = max_windings
        self.seed_sigma = seed_sigma
        self.n_sigma = n_sigma
        self.mult = float(np.exp(TWO_PI * np.sqrt(params.epsilon)))
        self._t_ref, self._s_sign = self._reference_time()
        self._leaf_cache = {}
        self.crossings: list[Crossing] = []
        for ph in np.linspace(0.0, TWO_PI, n_bases, endpoint=False):
            self.crossings.extend(self._collect(ph))
        if not self.crossings:
            raise NoConvergence("no reference-section crossings found; "
                                "the leaf did not return into the chart")
        self._fit = self._trig_fit([c.phase for c in self.crossings],
                                   [c.gap for c in self.crossings])

    # -- phase convention ----------------------------------------------------

    def _homoclinic_chart_s(self, t):
        se = np.sqrt(self.params.epsilon)
        th1 = 4.0 * np.arctan(np.exp(se * np.asarray(t, dtype=float)))
        r1 = 2.0 * se / np.cosh(se * np.asarray(t, dtype=float))
        pts = np.stack([th1, r1, np.zeros_like(th1) + 1.0,
                        np.full_like(th1, self.omega)], axis=-1)
        z = np.atleast_2d(self.chart.to_chart(np.atleast_2d(pts), strict=False))
        return z[:, IS]

    def _reference_time(self):
        """Continuous time from the apex to |s| = s_ref on the approach leg."""
        T = _tail_time(self.params.epsilon)
        ts = np.linspace(0.0, T, 400)
        s_vals = self._homoclinic_chart_s(ts)
        ok = np.isfinite(s_vals)
        inside = np.nonzero(ok & (np.abs(s_vals) > self.s_ref))[0]
        if len(inside) == 0:
            raise NoConvergence("homoclinic never enters the chart above s_ref")
        i0 = inside[0]
        below = np.nonzero(ok & (np.arange(len(ts)) > i0)
                           & (np.abs(s_vals) < self.s_ref))[0]
        if len(below) == 0:
            raise NoConvergence("homoclinic s never drops below s_ref")
        lo, hi = ts[i0], ts[below[0]]
        sgn = np.sign(s_vals[i0])
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            sm = self._homoclinic_chart_s(np.array([mid]))[0]
            if np.isfinite(sm) and abs(sm) > self.s_ref:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi), float(sgn)

    # -- leaf growth and crossing scan -----------------------------------------

    def _local_leaf_poly(self, base_phase: float):
        """Cubic (sigma -> section point) for the local unstable curve."""
        key = round(base_phase % TWO_PI, 12)
        if key in self._leaf_cache:
            return self._leaf_cache[key]
        samples, sigma, _, _ = leaves_batched(
            np.array([base_phase]), np.array([self.omega]), "unstable",
            self.params, radius=self.seed_sigma * self.mult * 1.1, n_samples=31)
        base_pt = np.array([0.0, 0.0, base_phase % TWO_PI, self.omega])
        diffs = samples[0] - base_pt[None, :]
        vand = np.stack([sigma[0] ** k for k in range(1, 4)], axis=1)
        sol, *_ = np.linalg.lstsq(vand, diffs, rcond=None)
        self._leaf_cache[key] = (base_pt, sol)
        return base_pt, sol

    def _fundamental_points(self, base_phase: float, lo: float = None,
                            hi: float = None, n: int = None, branch: int = 1):
        base_pt, sol = self._local_leaf_poly(base_phase)
        lo = lo if lo is not None else self.seed_sigma
        hi = hi if hi is not None else self.seed_sigma * self.mult
        n = n or self.n_sigma
        sig = branch * np.exp(np.linspace(np.log(lo), np.log(hi), n))
        vand = np.stack([sig ** k for k in range(1, 4)], axis=1)
        return base_pt[None, :] + vand @ sol, sig

    def _collect(self, base_phase: float, n: int | None = None) -> list:
        pts, sig = self._fundamental_points(base_phase, n=n)
        out = []
        cur = pts
        for w in range(1, self.max_windings + 1):
            cur = section_map_many(cur, self.params, reduce_angles=False)
            out.extend(self._scan(cur, w, base_phase, sig))
            if out and w >= 1 + out[0].winding + 1:
                break
        return out

    def collect_window(self, base_phase: float, sigma_lo: float, sigma_hi: float,
                       winding: int, n: int = 121) -> list:
        """Crossings from a narrow seed window, re-iterated a fixed winding count.

        Continuation workhorse: secant steps in the base phase only need the
        neighborhood of a known crossing, not a full fundamental domain.
        """
        lo, hi = sorted((abs(sigma_lo), abs(sigma_hi)))
        branch = 1 if sigma_lo >= 0 else -1
        pts, sig = self._fundamental_points(base_phase, lo=lo * 0.8, hi=hi * 1.25,
                                            n=n, branch=branch)
        cur = pts
        out = []
        for w in range(1, winding + 2):
            cur = section_map_many(cur, self.params, reduce_angles=False)
            if w >= winding - 1:
                out.extend(self._scan(cur, w, base_phase, sig))
        return out

    def _scan(self, pts: np.ndarray, winding: int, base_phase: float,
              sig=None) -> list:
        chart = self.chart
        eps = self.params.epsilon
        nn = np.sqrt(1.0 + eps)
        se = np.sqrt(eps)
        th1 = (pts[:, 0] + np.pi) % TWO_PI - np.pi
        # linearized chart coordinates select the points worth charting
        u_lin = nn * (th1 + pts[:, 1] / se) / 2.0
        s_lin = nn * (th1 - pts[:, 1] / se) / 2.0
        near = (np.abs(u_lin) < 1.2 * chart.varsigma) & \
               (np.abs(s_lin) < 1.2 * chart.varsigma)
        if not np.any(near):
            return []
        z = np.full((len(pts), 4), np.nan)
        idx = np.nonzero(near)[0]
        z[idx] = np.atleast_2d(chart.to_chart(pts[idx], strict=False))
        s = z[:, IS]
        target = self._s_sign * self.s_ref
        out = []
        for i in np.nonzero(np.isfinite(s[:-1]) & np.isfinite(s[1:]))[0]:
            s0, s1 = s[i], s[i + 1]
            if (s0 - target) * (s1 - target) < 0.0 and abs(s0 - s1) < 0.1:
                w = (target - s0) / (s1 - s0)
                p = (1.0 - w) * pts[i] + w * pts[i + 1]
                if 0 < i < len(pts) - 1:
                    sag = 0.125 * np.linalg.norm(pts[i + 1] - 2 * pts[i] + pts[i - 1])
                else:
                    sag = np.linalg.norm(pts[i + 1] - pts[i]) ** 2
                zz = np.atleast_2d(chart.to_chart(p[None, :], strict=False))[0]
                if not np.all(np.isfinite(zz)):
                    continue
                phase = (zz[0] - self.omega * self._t_ref) % TWO_PI
                s_lo = float(sig[i]) if sig is not None else 0.0
                s_hi = float(sig[i + 1]) if sig is not None else 0.0
                out.append(Crossing(phase=float(phase), gap=float(zz[IU]),
                                    point=p, straight=zz, r2_base=float(zz[1]),
                                    winding=winding, base_phase=base_phase,
                                    interp_err=float(sag),
                                    sigma_lo=s_lo, sigma_hi=s_hi))
        return out

    # -- fits and queries -------------------------------------------------------

    @staticmethod
    def _trig_fit(phases, values):
        ph = np.asarray(phases, dtype=float)
        v = np.asarray(values, dtype=float)
        basis = np.stack([np.ones_like(ph), np.cos(ph), np.sin(ph),
                          np.cos(2 * ph), np.sin(2 * ph)], axis=1)
        sol, *_ = np.linalg.lstsq(basis, v, rcond=None)
        return sol

    @staticmethod
    def _trig_eval(sol, phases):
        ph = np.asarray(phases, dtype=float)
        return (sol[0] + sol[1] * np.cos(ph) + sol[2] * np.sin(ph)
                + sol[3] * np.cos(2 * ph) + sol[4] * np.sin(2 * ph))

    @staticmethod
    def _trig_eval_d(sol, phases):
        ph = np.asarray(phases, dtype=float)
        return (-sol[1] * np.sin(ph) + sol[2] * np.cos(ph)
                - 2 * sol[3] * np.sin(2 * ph) + 2 * sol[4] * np.cos(2 * ph))

    def gap(self, theta2_0) -> float:
        """Signed u-gap at an apex phase, from the fitted crossing data."""
        return float(self._trig_eval(self._fit, theta2_0))

    def gap_slope(self, theta2_0) -> float:
        return float(self._trig_eval_d(self._fit, theta2_0))

    def fit_residual(self) -> float:
        ph = np.array([c.phase for c in self.crossings])
        v = np.array([c.gap for c in self.crossings])
        return float(np.max(np.abs(v - self._trig_eval(self._fit, ph))))

    def reach(self) -> float:
        """Single-pass r2-extent of the returning leaf data around omega."""
        return float(np.max([abs(c.r2_base - self.omega) for c in self.crossings]))

    def zero_crossings(self) -> list:
        """(phase, slope) zeros of the fitted gap profile."""
        sol = self._fit
        ph = np.linspace(0, TWO_PI, 721)
        v = self._trig_eval(sol, ph)
        zeros = []
        for i in range(len(ph) - 1):
            if v[i] == 0.0 or v[i] * v[i + 1] < 0.0:
                a, b = ph[i], ph[i + 1]
                fa = self._trig_eval(sol, a)
                for _ in range(60):
                    m = 0.5 * (a + b)
                    fm = self._trig_eval(sol, m)
                    if fa * fm <= 0:
                        b = m
                    else:
                        a, fa = m, fm
                z = 0.5 * (a + b)
                zeros.append((float(z), float(self._trig_eval_d(sol, z))))
        return zeros


def manifold_gap_oracle(omega: float, theta2_0: float, params: ModelParams,
                        chart: Chart, oracle: GapOracle | None = None) -> float:
    """Signed gap between grown W^uu and the stable slice at one apex phase.

    For mu = 0 the manifolds coincide; the returned value is then the largest
    |u| among the crossing records, i.e. the oracle's own noise floor.
    """
    oracle = oracle or GapOracle(omega, params, chart,
                                 n_bases=2 if params.mu == 0.0 else 8)
    if params.mu == 0.0:
        return float(max(abs(c.gap) for c in oracle.crossings))
    return oracle.gap(theta2_0)


def melnikov_profile(omega: float, params: ModelParams, phase_grid,
                     chart: Chart | None = None, oracle: GapOracle | None = None,
                     calibrate: bool = True) -> MelnikovProfile:
    """First-order profile on a phase grid with the direct oracle alongside.

    values = mu * calibration * integral(theta2_0); the calibration converts
    the energy-rate integral into chart-gap units, fixed by one reference
    comparison against the oracle and recorded in the result.
    """
    phases = np.asarray(phase_grid, dtype=float)
    t_anchor = 0.0
    oracle_vals = np.full_like(phases, np.nan)
    calibration = 1.0
    if chart is not None and params.mu > 0.0:
        oracle = oracle or GapOracle(omega, params, chart)
    if oracle is not None and params.mu > 0.0:
        t_anchor = oracle._t_ref
        oracle_vals = np.array([oracle.gap(p) for p in phases])
    integ = np.array([melnikov_integral(p, omega, params.epsilon, t_anchor)
                      for p in phases])
    if oracle is not None and params.mu > 0.0 and calibrate:
        ph_ref = float(phases[int(np.argmax(np.abs(integ)))])
        g_ref = oracle.gap(ph_ref)
        i_ref = melnikov_integral(ph_ref, omega, params.epsilon, t_anchor)
        if i_ref != 0.0:
            calibration = float(g_ref / (params.mu * i_ref))
    values = params.mu * calibration * integ

    zeros = []
    scale = params.mu * calibration
    for i in range(len(phases) - 1):
        if values[i] == 0.0 or values[i] * values[i + 1] < 0.0:
            a, b = float(phases[i]), float(phases[i + 1])
            fa = values[i]
            for _ in range(60):
                m = 0.5 * (a + b)
                fm = scale * melnikov_integral(m, omega, params.epsilon, t_anchor)
                if fa * fm <= 0:
                    b = m
                else:
                    a, fa = m, fm
            z = 0.5 * (a + b)
            h = 1e-4
            slope = scale * (melnikov_integral(z + h, omega, params.epsilon, t_anchor)
                             - melnikov_integral(z - h, omega, params.epsilon, t_anchor)) / (2 * h)
            zeros.append((float(z), float(slope)))
    return MelnikovProfile(omega, params.mu, phases, values, oracle_vals, zeros,
                           calibration, integ)


@dataclass
class HeteroclinicPoint:
    point: np.ndarray          # ambient section coordinates
    straight: np.ndarray      # chart coordinates (x1, x2, s, u)
    phase: float              # apex phase of the zero
    slope: float              # d(gap)/d(phase) at the zero
    u_residual: float
    leaf_residual: float
    base_unstable_phase: float
    omega: float


def find_heteroclinic(omega: float, params: ModelParams, chart: Chart,
                      oracle: GapOracle | None = None,
                      prefer_phase: float | None = None,
                      transversality_floor: float | None = None,
                      zero_tol: float = 1e-9) -> HeteroclinicPoint:
    """Transverse intersection of grown W^uu with the stable slice.

    Solves gap = 0 by a secant in the leaf's base phase (each trial is a
    fresh on-leaf measurement, so leaf membership holds by construction up to
    the recorded segment-interpolation bound).  Raises TangencySuspected when
    no sign change exists or the slope at the zero is below the floor.
    """
    if transversality_floor is None:
        transversality_floor = 1e-6 * params.epsilon
    if params.mu == 0.0:
        raise TangencySuspected("mu = 0: the manifolds coincide, no isolated zeros")
    oracle = oracle or GapOracle(omega, params, chart)
    zeros = oracle.zero_crossings()
    if not zeros:
        raise TangencySuspected("no sign change in the measured gap profile")
    if prefer_phase is not None:
        zeros.sort(key=lambda z: abs((z[0] - prefer_phase + np.pi) % TWO_PI - np.pi))
    phase_z, slope_z = zeros[0]
    if abs(slope_z) <= transversality_floor:
        raise TangencySuspected(f"slope {slope_z:.3e} at the zero is below the floor")

    # seed: the recorded crossing nearest the zero, then secant in base phase
    seed = min(oracle.crossings,
               key=lambda c: abs((c.phase - phase_z + np.pi) % TWO_PI - np.pi))

    def measure(base_phase: float) -> Crossing:
        cs = oracle._collect(base_phase % TWO_PI)
        if not cs:
            raise NoConvergence("zoom lost the returning leaf")
        return min(cs, key=lambda c: abs((c.phase - phase_z + np.pi) % TWO_PI - np.pi))

    b0 = seed.base_phase
    c0 = measure(b0)
    # phases move one-to-one with the base phase; step toward the zero
    step = -(c0.phase - phase_z + np.pi) % TWO_PI - np.pi
    step = float(np.clip((phase_z - c0.phase + np.pi) % TWO_PI - np.pi, -0.5, 0.5))
    b1 = b0 + step
    c1 = measure(b1)
    best = min((c0, c1), key=lambda c: abs(c.gap))
    pa, fa = b0, c0.gap
    pb, fb = b1, c1.gap
    for _ in range(24):
        if fb == fa:
            break
        pm = pb - fb * (pb - pa) / (fb - fa)
        cm = measure(pm)
        if abs(cm.gap) < abs(best.gap):
            best = cm
        pa, fa = pb, fb
        pb, fb = pm, cm.gap
        if abs(cm.gap) < zero_tol:
            break
    if abs(best.gap) > 1e3 * zero_tol:
        raise NoConvergence(f"gap zero stalled at |u| = {abs(best.gap):.3e}")
    return HeteroclinicPoint(point=best.point, straight=best.straight,
                             phase=best.phase, slope=float(oracle.gap_slope(best.phase)),
                             u_residual=abs(float(best.gap)),
                             leaf_residual=float(best.interp_err),
                             base_unstable_phase=float(best.base_phase),
                             omega=omega)
