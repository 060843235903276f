"""Transition chains, ball chaining, and drifting-orbit extraction.

The requested tori act as milestones.  A single heteroclinic hop moves the
action by the splitting reach (a few mu at these parameters), so the chain is
realized as an adaptive ladder of exact single-hop connections whose landing
tori step toward each milestone; the reference section of each hop is chosen
from a small menu so that the splitting zero sits at a drift-favorable phase.

Ball chaining does not follow the ladder rung by rung: exact rung-to-rung
ball containment would need the shear to equidistribute past phase gaps,
which costs exponentially many iterates (the role minimality plays in the
underlying argument).  Instead the chain of balls is centered on one steered
true orbit found by interval refinement on the seed parameter of the first
unstable leaf, at working precision high enough that the backward-compounded
ball radii stay resolvable.  Every containment is then re-verified from
boundary samples with recorded margins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arnold import ModelParams, MpSectionMap, TWO_PI, section_map_many
from .chart import Chart, IS, IU, build_chart
from .errors import ChainBreak, ConfigError, GapTooWide, PrecisionExhausted, TangencySuspected
from .melnikov import GapOracle, melnikov_integral, _tail_time
from .nhim import Torus, leaves_batched
from .numerics import Context


@dataclass
class ChainNode:
    """One verified heteroclinic hop between neighboring rung tori."""

    omega: float
    omega_next: float
    a_phase: float            # unstable base phase on T_omega
    b_phase: float            # stable base phase on T_omega_next (chart read)
    c_point: np.ndarray       # ambient heteroclinic point
    c_straight: np.ndarray
    slope: float
    u_residual: float
    leaf_residual: float
    base_read_residual: float  # chart item-4 accuracy at the fitted parameters

    @property
    def torus(self) -> Torus:
        return Torus(self.omega)

    @property
    def a_k(self):
        from .arnold import SectionPoint
        return SectionPoint(0.0, 0.0, self.a_phase, self.omega)

    @property
    def b_next(self):
        from .arnold import SectionPoint
        return SectionPoint(0.0, 0.0, self.b_phase, self.omega_next)


@dataclass
class TransitionChain:
    omegas: list              # rung tori, first to last
    nodes: list               # len(omegas) - 1 ChainNodes
    milestones: list          # the requested tori
    milestone_hits: list      # (milestone, nearest rung omega, |difference|)
    reach: float              # measured single-hop drift capability
    s_ref: float
    params: ModelParams | None = None


def _drift_menu(omega, params, chart, ascending: bool):
    """Choose the reference section whose splitting zero favors the drift sign.

    The zero phase of the anchored first-order profile moves with the
    section's separatrix time; the hop drift is -eps*mu*I_c*sin(zero), so
    scan a small menu of s_ref values and keep the best scorer.
    """
    eps = params.epsilon
    want = 1.0 if ascending else -1.0
    candidates = []
    s_lim = chart.s_cap if np.isfinite(chart.s_cap) else chart.varsigma
    for s_ref in (0.24, 0.2, 0.16, 0.12, 0.09, 0.06, 0.04, 0.025):
        if s_ref > min(chart.varsigma, s_lim) * 0.8:
            continue
        try:
            probe = GapOracle.__new__(GapOracle)
            probe.omega = omega
            probe.params = params
            probe.chart = chart
            probe.s_ref = s_ref
            t_ref, _ = GapOracle._reference_time(probe)
        except Exception:
            continue
        phc = np.linspace(0, TWO_PI, 31)
        vals = np.array([melnikov_integral(x, omega, eps, t_ref) for x in phc])
        for i in range(len(phc) - 1):
            if vals[i] == 0.0 or vals[i] * vals[i + 1] < 0.0:
                z = 0.5 * (phc[i] + phc[i + 1])
                drift = -np.sin(z) * want  # drift sign ~ -sin(zero phase)
                candidates.append((drift, s_ref, float(z)))
    if not candidates:
        raise GapTooWide(0, np.inf, 0.0)
    strong = [c for c in candidates if c[0] > 0.35]
    if strong:
        # prefer the farthest measuring section: smaller gap amplitude there,
        # so the chart sees less of the lobe structure
        strong.sort(key=lambda c: (-c[1], -c[0]))
        return strong[0][1], strong[0][2]
    best = max(candidates, key=lambda c: c[0])
    if best[0] <= 0.0:
        raise GapTooWide(0, np.inf, 0.0)
    return best[1], best[2]


def _solve_rung(oracle: GapOracle, prefer_phase: float, seed=None,
                zero_tol: float = 1e-8, max_iter: int = 24):
    """Secant in base phase for a u = 0 crossing near the preferred zero.

    seed = (base_phase, sigma_lo, sigma_hi, winding) enables narrow-window
    continuation from the previous rung.  Crossing selection keys on the seed
    parameter as well as the phase, so the secant tracks one fold of the
    returning curve instead of hopping between lobes.
    """
    from .errors import NoConvergence

    def pick(cs, ref_sigma, ref_w):
        def key(c):
            dp = abs((c.phase - prefer_phase + np.pi) % TWO_PI - np.pi)
            ds = abs(np.log(max(abs(c.sigma_lo), 1e-300) / max(ref_sigma, 1e-300))) \
                if ref_sigma else 0.0
            dw = abs(c.winding - ref_w) if ref_w else 0.0
            return 3.0 * ds + dp + 2.0 * dw
        return min(cs, key=key)

    if seed is None:
        c0 = pick(oracle.crossings, 0.0, 0)
    else:
        base, slo, shi, w = seed
        cs = oracle.collect_window(base, slo, shi, w)
        c0 = pick(cs, abs(slo), w) if cs else pick(oracle.crossings, 0.0, 0)

    def measure(base_phase, ref):
        cs = oracle.collect_window(base_phase, ref.sigma_lo, ref.sigma_hi,
                                   ref.winding)
        if not cs:
            cs = oracle._collect(base_phase % TWO_PI)
        if not cs:
            raise NoConvergence("rung window lost the leaf")
        return pick(cs, abs(ref.sigma_lo), ref.winding)

    # move the base so the crossing's phase lands on the zero, then secant on u
    shift = (prefer_phase - c0.phase + np.pi) % TWO_PI - np.pi
    c1 = measure(c0.base_phase + shift, c0)
    pa, fa = c0.base_phase, c0.gap
    pb, fb = c1.base_phase, c1.gap
    best = min((c0, c1), key=lambda c: abs(c.gap))
    last = c1
    bracket = None
    if fa * fb < 0:
        bracket = (pa, fa, pb, fb)
    for _ in range(max_iter):
        if fb == fa:
            break
        pm = pb - fb * (pb - pa) / (fb - fa)
        if abs(pm - pb) > 1.0:
            pm = pb + np.sign(pm - pb) * 1.0
        cm = measure(pm, last)
        last = cm
        if abs(cm.gap) < abs(best.gap):
            best = cm
        if bracket is None and cm.gap * fb < 0:
            bracket = (pb, fb, pm, cm.gap)
        pa, fa = pb, fb
        pb, fb = pm, cm.gap
        if abs(cm.gap) < zero_tol:
            break
    if abs(best.gap) > zero_tol and bracket is not None:
        # bisection fallback: robust against measurement scatter near the zero
        ba, ga, bb, gb = bracket
        for _ in range(40):
            bm = 0.5 * (ba + bb)
            cm = measure(bm, last)
            last = cm
            if abs(cm.gap) < abs(best.gap):
                best = cm
            if abs(cm.gap) < zero_tol or abs(bb - ba) < 1e-13:
                break
            if cm.gap * ga <= 0:
                bb, gb = bm, cm.gap
            else:
                ba, ga = bm, cm.gap
    if abs(best.gap) > 1e2 * zero_tol:
        raise NoConvergence(f"rung zero stalled at |u| = {abs(best.gap):.2e}")
    return best


def build_chain(omegas, params: ModelParams, chart: Chart | None = None,
                max_rungs: int = 400, zero_tol: float = 1e-8,
                transversality_floor: float | None = None) -> TransitionChain:
    """Adaptive ladder of verified heteroclinic hops through the milestones.

    Each hop is an exact single-pass intersection of grown W^uu with the
    stable slice; the landing torus is read from the chart's base-point
    straightening.  Raises TangencySuspected for mu = 0 and GapTooWide when
    the measured reach cannot bridge the milestone spacing in budget.
    """
    milestones = sorted(float(w) for w in omegas)
    if len(milestones) == 0:
        raise ConfigError("at least one torus is required")
    if len(milestones) != len(set(milestones)):
        raise ConfigError("duplicate torus values")
    if len(milestones) == 1:
        return TransitionChain([milestones[0]], [], milestones,
                               [(milestones[0], milestones[0], 0.0)], 0.0, 0.0,
                               params)
    if params.mu == 0.0:
        raise TangencySuspected("mu = 0: invariant manifolds coincide leafwise; "
                                "no transverse heteroclinic connections")
    if transversality_floor is None:
        transversality_floor = 1e-6 * params.epsilon
    ascending = milestones[-1] >= milestones[0]

    span = milestones[-1] - milestones[0]
    if chart is None:
        lo = milestones[0] - 0.15 * span - 0.02
        hi = milestones[-1] + 0.15 * span + 0.02
        chart = build_chart(params, band=(lo, hi))

    s_ref, zero_phase = _drift_menu(milestones[0], params, chart, ascending)
    oracle = GapOracle(milestones[0], params, chart, n_bases=6, s_ref=s_ref)
    reach = oracle.reach()
    zeros = oracle.zero_crossings()
    if not zeros:
        raise TangencySuspected("no sign change in the measured gap profile")
    zeros.sort(key=lambda z: abs((z[0] - zero_phase + np.pi) % TWO_PI - np.pi))
    prefer_phase, slope0 = zeros[0]
    if abs(slope0) <= transversality_floor:
        raise TangencySuspected(f"zero slope {slope0:.2e} below the floor")

    omega_cur = milestones[0]
    rungs = [omega_cur]
    nodes = []
    seed = None
    base_read = max(chart.validation.get("item4_leaf_ss", chart.chart_tol),
                    chart.validation.get("item5_leaf_uu", chart.chart_tol))
    direction = 1 if ascending else -1
    menu = [sr for sr in (0.2, 0.14, 0.1, 0.08, 0.06, 0.045, 0.03)
            if sr < 0.8 * chart.varsigma]

    def settled_omega(pt):
        """Landing torus read dynamically while the orbit still hugs N."""
        cur = np.atleast_2d(np.asarray(pt, dtype=float)).copy()
        for _ in range(3):
            cur = section_map_many(cur, params, reduce_angles=False)
        return float(cur[0, 3])

    def try_hop(om, sr, prefer, sd):
        """One (section, zero)-cascade at a rung; None when nothing ascends."""
        from .errors import NoConvergence as _NC
        try:
            orc = GapOracle(om, params, chart, n_bases=5, s_ref=sr)
            zeros = orc.zero_crossings()
        except Exception:
            return None
        if prefer is not None:
            zeros.sort(key=lambda z: abs((z[0] - prefer + np.pi) % TWO_PI - np.pi))
        for zz, _ in zeros[:4]:
            try:
                cand = _solve_rung(orc, zz, seed=sd, zero_tol=zero_tol)
            except _NC:
                sd = None
                continue
            if abs(cand.gap) > 1e-6:
                sd = None
                continue
            om_next = settled_omega(cand.point)
            if (om_next - om) * direction > 0.05 * reach:
                return cand, om_next, orc, zz
            sd = None
        return None

    for target in milestones[1:]:
        gap_to_go = target - omega_cur
        if abs(gap_to_go) > 4.0 * reach * max_rungs:
            raise GapTooWide(len(nodes), abs(gap_to_go), reach)
        while (target - omega_cur) * direction > 0.55 * reach:
            if len(nodes) >= max_rungs:
                raise ChainBreak(len(nodes), "rung budget exhausted before the milestone")
            # continuation first, then cascade outward through the menu
            order = sorted(menu, key=lambda x: abs(x - s_ref))
            hop = None
            for k, sr in enumerate(order):
                hop = try_hop(omega_cur, sr,
                              prefer_phase if sr == s_ref else None,
                              seed if sr == s_ref else None)
                if hop is not None:
                    break
            if hop is None:
                raise ChainBreak(len(nodes),
                                 f"hop stalled near omega = {omega_cur:.5f}")
            best, omega_next, oracle, prefer_phase = hop
            s_ref = oracle.s_ref
            slope = oracle.gap_slope(best.phase)
            if abs(slope) <= transversality_floor:
                raise TangencySuspected(f"rung slope {slope:.2e} below the floor")
            nodes.append(ChainNode(
                omega=omega_cur, omega_next=float(omega_next),
                a_phase=float(best.base_phase % TWO_PI),
                b_phase=float(best.straight[0] % TWO_PI),
                c_point=best.point, c_straight=best.straight,
                slope=float(slope), u_residual=abs(float(best.gap)),
                leaf_residual=float(best.interp_err),
                base_read_residual=float(base_read)))
            seed = (best.base_phase, best.sigma_lo, best.sigma_hi, best.winding)
            omega_cur = float(omega_next)
            rungs.append(omega_cur)

    hits = [(m, min(rungs, key=lambda w: abs(w - m)),
             float(min(abs(w - m) for w in rungs))) for m in milestones]
    return TransitionChain(rungs, nodes, milestones, hits, reach, s_ref, params)


# -- ball chaining ------------------------------------------------------------


@dataclass
class Ball:
    center: tuple          # 4 mpf scalars
    radius: float          # radius in section coordinates (float exponent ok)
    log10_radius: float
    torus_omega: float
    dist_to_torus: float
    dist_to_wu: float      # measured seed distance to the unstable leaf


@dataclass
class BallChain:
    balls: list
    iterates: list         # q_k per link
    margins: list          # relative containment margins per link
    precision_bits: int
    center_seed_sigma: str  # decimal repr of the steering seed parameter
    lipschitz: list        # measured |DF^{q_k}| along the center orbit
    composed_margin: float = np.nan
    params: ModelParams | None = None
    rho: float = 0.02


@dataclass
class OrbitTrace:
    steps: np.ndarray
    r2: np.ndarray
    theta2: np.ndarray
    theta1: np.ndarray
    r1: np.ndarray
    energy: np.ndarray
    nearest: dict          # omega -> (closest distance, step)


@dataclass
class DriftReport:
    orbit: OrbitTrace
    r2_min: float
    r2_max: float
    visited: list          # (omega, closest approach, step, within_rho)
    rho: float
    precision_bits: int
    audit_precision_bits: int
    audit_r2_range_change: float
    q_star: int


class _Steering:
    """Iterative-deepening bisection on the seed parameter of one unstable leaf.

    All trial orbits are true orbits of exact seed parameters, re-integrated
    from the start at a stage-graded precision (one needs roughly pi/ln 2
    bits of seed resolution per committed map, so early stages are cheap).
    Each stage subdivides the surviving seed bracket until the next full
    excursion's drift behavior is coherent across the bracket, then commits
    that pass and moves on.  The committed route is a single true orbit at
    the final precision by construction.
    """

    def __init__(self, omega0: float, a_phase: float, params: ModelParams,
                 precision_cap: int, leaf_poly, ascending: bool, n_cand: int = 7,
                 r1_cap: float = None):
        self.params = params
        self.precision_cap = precision_cap
        self.full_ctx = Context(precision_cap)
        self.base, self.sol = leaf_poly
        self.ascending = ascending
        self.n_cand = n_cand
        self.omega0 = omega0
        se = math.sqrt(params.epsilon)
        self.r1_cap = r1_cap or (3.0 * se)
        self.rho_out = 0.8 * se
        self.rho_in = 0.25 * se
        self.rho_in = 0.5 * se
        self._maps = {}
        self.bits_used = 96

    def _width_bits(self, lo, hi) -> int:
        """Bits needed to resolve the current seed interval."""
        w = hi - lo
        if w <= 0:
            return self.precision_cap
        ctx = self.full_ctx
        return int(-float(ctx._mp.log(w, 2))) if ctx._mp else \
            int(-math.log2(max(float(w), 1e-300)))

    def _map_for(self, bits: int) -> MpSectionMap:
        bits = max(96, 64 * int(math.ceil(bits / 64.0)))
        if bits > self.precision_cap:
            raise PrecisionExhausted(bits, self.precision_cap)
        self.bits_used = max(self.bits_used, bits)
        if bits not in self._maps:
            self._maps[bits] = MpSectionMap(self.params, Context(bits))
        return self._maps[bits]

    def seed_state(self, sigma, ctx: Context):
        s = ctx.real(sigma)
        out = [ctx.real(float(x)) for x in self.base]
        for k in range(1, 4):
            for j in range(4):
                out[j] += (s ** k) * ctx.real(float(self.sol[k - 1][j]))
        return tuple(out)

    def _advance_one_pass(self, st, mp_map, max_maps: int = 14):
        """Advance through one full excursion; returns (state, n_maps, ok)."""
        was_out = False
        for k in range(1, max_maps + 1):
            st = mp_map(st)
            th1 = float(st[0])
            r1 = float(st[1])
            d = math.hypot(min(th1 % TWO_PI, TWO_PI - th1 % TWO_PI), abs(r1))
            if abs(r1) > self.r1_cap or not (-1.0 < float(st[3]) < 2.0):
                return st, k, False
            if d > self.rho_out:
                was_out = True
            elif was_out and d < self.rho_in:
                return st, k, True
        return st, max_maps, was_out

    def _probe(self, sigma, q_committed: int, mp_map, landing: bool,
               target_omega: float = 0.0, max_land: int = 12):
        """Integrate a seed through the committed maps plus one look-ahead leg.

        Drift legs advance one full excursion; landing legs walk up to
        max_land maps and stop at the closest approach to the target torus.
        """
        st = self.seed_state(sigma, mp_map.ctx)
        st = mp_map.iterate(st, q_committed)
        if not landing:
            return self._advance_one_pass(st, mp_map)
        cur = st
        d0 = float(_torus_distance(
            np.array([[float(x) for x in st]]), target_omega)[0])
        best = (d0, 0, st)
        for k in range(1, max_land + 1):
            cur = mp_map(cur)
            if abs(float(cur[1])) > self.r1_cap or not (-1.0 < float(cur[3]) < 2.0):
                break
            d = float(_torus_distance(
                np.array([[float(x) for x in cur]]), target_omega)[0])
            if d < best[0]:
                best = (d, k, cur)
        return best[2], best[1], True

    def run(self, sigma_lo: float, sigma_hi: float, targets, settle_tol: float,
            step: float | None = None, max_stages: int = 160, max_rounds: int = 5,
            coherence: float = 1e-3, verbose: bool = False):
        """Steer through every target torus in order; land at each one.

        Climb phases track an action target advanced by `step` per stage (so
        the orbit stays in the controllable hugging regime) and a landing
        phase at each milestone drives the torus distance below settle_tol.
        Returns (sigma*, trace, q_total, approach log).
        """
        want = 1.0 if self.ascending else -1.0
        ctx_full = self.full_ctx
        lo = ctx_full.real(sigma_lo)
        hi = ctx_full.real(sigma_hi)
        q_committed = 0
        P = self.n_cand
        step = step or 6e-3
        r2_committed = self.omega0
        mi = 0                 # index into targets
        phase = "climb"
        land_left = 5
        approaches = []

        stagnant = 0
        for stage in range(max_stages):
            bits = self._width_bits(lo, hi) + 192
            mp_map = self._map_for(bits)
            target = targets[mi]
            landing = phase == "land"
            tgt_r2 = r2_committed + want * step
            if want * (tgt_r2 - target) > 0:
                tgt_r2 = target
            P_eff = P + 4 if landing else P
            rounds = max_rounds + 7 if landing else max_rounds + 5
            chosen = None
            for rnd in range(rounds):
                sig = [lo + (hi - lo) * ctx_full.real(i / (P_eff - 1))
                       for i in range(P_eff)]
                res = [self._probe(s, q_committed, mp_map, landing,
                                   target_omega=target) for s in sig]
                if landing:
                    scores = [-float(_torus_distance(
                        np.array([[float(x) for x in st]]), target)[0])
                        if ok else -np.inf for st, _, ok in res]
                    good = lambda b: -scores[b] <= settle_tol
                else:
                    # tent score: reward progress toward the target but
                    # penalize overshooting past it
                    cap = want * (target - r2_committed) + 0.5 * step
                    raw = [want * (float(st[3]) - r2_committed) if ok
                           else -np.inf for st, _, ok in res]
                    scores = [r if r <= cap else 2 * cap - r for r in raw]
                    need = min(0.5 * step, want * (target - r2_committed))
                    good = lambda b: need <= scores[b]
                b = int(np.argmax(scores))
                if not np.isfinite(scores[b]):
                    lo, hi = self._widen(lo, hi, 25.0)
                    continue
                if good(b):
                    chosen = (sig[b], res[b])
                    i0, i1 = max(b - 1, 0), min(b + 1, P_eff - 1)
                    lo, hi = sig[i0], sig[i1]
                    break
                finite = [s for s in scores if np.isfinite(s)]
                if max(finite) - min(finite) < 10 * coherence:
                    # progress windows are thin in the seed parameter:
                    # this bracket has no structure left, open it up
                    lo, hi = self._widen(lo, hi, 25.0)
                    continue
                i0, i1 = max(b - 1, 0), min(b + 1, P_eff - 1)
                lo, hi = sig[i0], sig[i1]
            if chosen is None:
                # best available after the round budget; avoid regressions
                if np.isfinite(scores[b]) and (landing or scores[b] > -0.25 * step):
                    chosen = (sig[b], res[b])
                else:
                    stagnant += 1
                    if stagnant > 6:
                        raise ChainBreak(mi, "steering made no progress")
                    lo, hi = self._widen(lo, hi, 200.0)
                    continue
            sigma_b, (st_b, k_b, ok_b) = chosen
            if not ok_b:
                raise ChainBreak(0, "steering lost the box at commit time")
            stagnant = 0
            q_committed += k_b
            r2_committed = float(st_b[3])
            dist = float(_torus_distance(
                np.array([[float(x) for x in st_b]]), target)[0])
            if verbose:
                print(f"    stage {stage}: {phase} mi={mi} bits={mp_map.ctx.prec} "
                      f"k={k_b} q={q_committed} r2={r2_committed:.5f} dist={dist:.4f}",
                      flush=True)
            if phase == "climb":
                if want * (r2_committed - (target - want * 1.5 * step)) >= 0:
                    phase = "land"
                    land_left = 8
            else:
                land_left -= 1
                if dist <= settle_tol or (land_left <= 0 and dist <= 3 * settle_tol):
                    approaches.append((target, dist, q_committed))
                    mi += 1
                    if mi >= len(targets):
                        sig_fin = 0.5 * (lo + hi)
                        sigma_star, trace, q_tot = self._finish(sig_fin, q_committed)
                        return sigma_star, trace, q_tot, approaches
                    phase = "climb"
                elif abs(r2_committed - target) > 1.5 * step:
                    # the landing pass dragged the action away: climb back
                    phase = "climb"
                elif land_left <= 0:
                    raise ChainBreak(mi, f"landing stalled at distance {dist:.4f} "
                                         f"from torus {target}")
        raise ChainBreak(0, "steering stage budget exhausted")

    def _widen(self, lo, hi, factor: float):
        c = 0.5 * (lo + hi)
        w = (hi - lo) * self.full_ctx.real(0.5 * factor)
        return c - w, c + w

    def _finish(self, sigma, n_total: int):
        mp_map = self._map_for(self.bits_used + 64)
        self.final_map = mp_map
        st = self.seed_state(sigma, mp_map.ctx)
        trace = [st]
        for _ in range(n_total):
            st = mp_map(st)
            trace.append(st)
        return sigma, trace, n_total


def _needed_bits_measured(min_radius: float, lips, slack: int = 64) -> int:
    """Bits to resolve the smallest ball through the measured expansions."""
    total = -math.log2(max(min_radius, 1e-300))
    for l in lips:
        total += math.log2(max(l, 1.0))
    return int(math.ceil(total)) + slack


def chain_balls(chain: TransitionChain, rho: float, params: ModelParams,
                chart: Chart | None = None, precision_cap: int = 4096,
                n_boundary: int = 64, n_cand: int = 5,
                margin_floor: float = 0.05, seed: int = 1,
                verbose: bool = False) -> BallChain:
    """Balls with F^{q_k}(B_k) inside B_{k+1}, centered on one steered orbit.

    Radii compound backward by the measured per-link expansion, so the chain
    is only resolvable at elevated precision; the precision is chosen from
    the expansion budget and capped by precision_cap (PrecisionExhausted
    beyond it).  Containment is re-verified from n_boundary sphere samples
    per link with the margins recorded.
    """
    if params.mu == 0.0:
        raise ConfigError("mu = 0 admits no drift (r2 is a first integral)")
    if not chain.nodes:
        raise ChainBreak(0, "cannot chain balls over a trivial chain")
    milestones = chain.milestones
    ascending = milestones[-1] >= milestones[0]

    # seed leaf at the first milestone: an exact local unstable curve
    node0 = chain.nodes[0]
    samples, sigma, _, _ = leaves_batched(
        np.array([node0.a_phase]), np.array([milestones[0]]), "unstable", params,
        radius=2.5e-3 * math.exp(TWO_PI * math.sqrt(params.epsilon)) / 20.0,
        n_samples=31)
    base_pt = np.array([0.0, 0.0, node0.a_phase, milestones[0]])
    diffs = samples[0] - base_pt[None, :]
    vand = np.stack([sigma[0] ** k for k in range(1, 4)], axis=1)
    sol, *_ = np.linalg.lstsq(vand, diffs, rcond=None)
    leaf_err = float(np.max(np.linalg.norm(vand @ sol - diffs, axis=1)))

    # the steering escalates its working precision with the measured interval
    # width; only the cap is fixed upfront
    steer = _Steering(milestones[0], node0.a_phase, params, precision_cap,
                      (base_pt, sol.tolist()), ascending, n_cand=n_cand)
    sig0 = 2.0e-4
    sigma_star, trace, q_total, approaches = steer.run(
        sig0, sig0 * 20.0, milestones[1:], settle_tol=0.3 * rho, verbose=verbose)
    mp_map = steer.final_map
    ctx = mp_map.ctx

    # closest approaches to the milestone tori along the trace, in orbit order
    float_trace = np.array([[float(x) for x in st] for st in trace])
    centers_idx = [0]
    for m in milestones[1:]:
        d = _torus_distance(float_trace, m)
        start = centers_idx[-1] + 1
        if start >= len(d):
            raise ChainBreak(0, "trace ended before reaching every milestone")
        centers_idx.append(start + int(np.argmin(d[start:])))
    q_list = [centers_idx[k + 1] - centers_idx[k] for k in range(len(milestones) - 1)]
    if any(q <= 0 for q in q_list):
        raise ChainBreak(0, "degenerate link lengths")
    if any(q > 200 for q in q_list):
        raise ChainBreak(0, f"link budget exceeded: q = {q_list}")

    # measured expansion along each link (tangent norms at working precision)
    lips = []
    for k in range(len(q_list)):
        cur = trace[centers_idx[k]]
        jmat = None
        for _ in range(q_list[k]):
            cur, jmat = mp_map.with_tangent(cur, jmat)
        m = np.array([[float(x) for x in row] for row in jmat])
        lips.append(float(np.linalg.norm(m, 2)))

    # radii backward with a safety factor; the last ball takes what fits
    safety = 40.0
    d_last = float(_torus_distance(float_trace[centers_idx[-1]:centers_idx[-1] + 1],
                                   milestones[-1])[0])
    if d_last >= 0.9 * rho:
        raise ChainBreak(len(milestones) - 1,
                         f"final approach {d_last:.3g} leaves no room in the "
                         f"rho-neighborhood")
    radii = [0.0] * len(milestones)
    radii[-1] = min(0.5 * rho, 0.9 * (rho - d_last))
    for k in range(len(milestones) - 2, -1, -1):
        radii[k] = radii[k + 1] / (lips[k] * safety)

    balls = []
    for k, m in enumerate(milestones):
        ci = centers_idx[k]
        d_torus = float(_torus_distance(float_trace[ci:ci + 1], m)[0])
        if d_torus + radii[k] > rho:
            raise ChainBreak(k, f"ball at torus {m} does not fit inside the "
                                f"rho-neighborhood (dist {d_torus:.3g})")
        balls.append(Ball(center=trace[ci], radius=radii[k],
                          log10_radius=math.log10(radii[k]) if radii[k] > 0 else -np.inf,
                          torus_omega=m, dist_to_torus=d_torus,
                          dist_to_wu=leaf_err if k == 0 else np.nan))

    # boundary re-verification with deterministic sphere samples
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_boundary - 8, 4))
    dirs = dirs / np.linalg.norm(dirs, axis=1)[:, None]
    axes = np.concatenate([np.eye(4), -np.eye(4)])
    dirs = np.concatenate([axes, dirs])

    margins = []
    composed = None
    for k in range(len(q_list)):
        zk = balls[k].center
        zk1 = balls[k + 1].center
        worst = 0.0
        carried = []
        for d in dirs:
            st = tuple(zk[j] + ctx.real(float(d[j])) * ctx.real(balls[k].radius)
                       for j in range(4))
            st = mp_map.iterate(st, q_list[k])
            carried.append(st)
            dist = _mp_distance(ctx, st, zk1)
            worst = max(worst, float(dist))
        rel = worst / balls[k + 1].radius
        margins.append(1.0 - rel)
        if margins[-1] <= margin_floor:
            raise ChainBreak(k, f"containment margin {margins[-1]:.3f} below floor")
        if k == 0:
            composed_states = carried
        elif k == len(q_list) - 1 and len(q_list) >= 2:
            pass
    # composed containment: continue link-1 boundary images through the rest
    if len(q_list) >= 2:
        worst = 0.0
        for st in composed_states:
            cur = st
            for k in range(1, len(q_list)):
                cur = mp_map.iterate(cur, q_list[k])
            worst = max(worst, float(_mp_distance(ctx, cur, balls[-1].center)))
        composed = 1.0 - worst / balls[-1].radius
    return BallChain(balls=balls, iterates=q_list, margins=margins,
                     precision_bits=ctx.prec,
                     center_seed_sigma=repr(sigma_star),
                     lipschitz=lips, composed_margin=composed if composed is not None else np.nan,
                     params=params, rho=rho)


def _torus_distance(states: np.ndarray, omega: float) -> np.ndarray:
    th1 = states[:, 0] % TWO_PI
    d1 = np.minimum(th1, TWO_PI - th1)
    return np.sqrt(d1 ** 2 + states[:, 1] ** 2 + (states[:, 3] - omega) ** 2)


def _mp_distance(ctx: Context, a, b):
    import math as _math
    acc = ctx.real(0)
    two_pi = ctx.real(2) * ctx.pi
    for j in range(4):
        d = a[j] - b[j]
        if j in (0, 2):
            k = _math.floor(float((d + ctx.pi) / two_pi))
            d = d - two_pi * k
            if d > ctx.pi:
                d -= two_pi
        acc += d * d
    return ctx.sqrt(acc)


def extract_orbit(bc: BallChain, params: ModelParams | None = None,
                  precision_bits: int | None = None,
                  audit: bool = True) -> DriftReport:
    """Iterate the first ball's center through the whole chain and report.

    Records the orbit trace with per-step diagnostics, the closest approach
    to every chain torus against rho, the action range, and a precision
    audit: the same center re-integrated at doubled precision must move the
    reported r2 range by less than rho/10.
    """
    params = params or bc.params
    q_star = int(sum(bc.iterates))
    bits = precision_bits or bc.precision_bits
    need = _needed_bits_measured(min(b.radius for b in bc.balls), bc.lipschitz,
                                 slack=32)
    if bits < need:
        raise PrecisionExhausted(need, bits)
    ctx = Context(bits)
    mp_map = MpSectionMap(params, ctx)

    def run(context, the_map):
        st = tuple(context.real(x) for x in bc.balls[0].center)
        rows = [st]
        for _ in range(q_star):
            st = the_map(st)
            rows.append(st)
        return np.array([[float(x) for x in r] for r in rows])

    tr = run(ctx, mp_map)
    omegas = [b.torus_omega for b in bc.balls]
    nearest = {}
    visited = []
    for w in omegas:
        d = _torus_distance(tr, w)
        i = int(np.argmin(d))
        nearest[w] = (float(d[i]), i)
        visited.append((w, float(d[i]), i, bool(d[i] <= bc.rho)))
    energy = (0.5 * (tr[:, 1] ** 2 + tr[:, 3] ** 2)
              + params.epsilon * (np.cos(tr[:, 0]) - 1.0)
              * (1.0 + params.mu * 0.0))
    orbit = OrbitTrace(steps=np.arange(q_star + 1), r2=tr[:, 3], theta2=tr[:, 2],
                       theta1=tr[:, 0], r1=tr[:, 1], energy=energy,
                       nearest=nearest)
    r2_min, r2_max = float(np.min(tr[:, 3])), float(np.max(tr[:, 3]))

    audit_bits = 2 * bits
    change = np.nan
    if audit:
        ctx2 = Context(audit_bits)
        tr2 = run(ctx2, MpSectionMap(params, ctx2))
        change = abs((np.max(tr2[:, 3]) - np.min(tr2[:, 3])) - (r2_max - r2_min))
    return DriftReport(orbit=orbit, r2_min=r2_min, r2_max=r2_max, visited=visited,
                       rho=bc.rho, precision_bits=bits,
                       audit_precision_bits=audit_bits,
                       audit_r2_range_change=float(change), q_star=q_star)
