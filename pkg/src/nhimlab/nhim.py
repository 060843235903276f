"""The invariant manifold N = {th1 = 0, r1 = 0}: tori, frames, rates, leaves.

N is exactly invariant for the section map by construction of the model (the
angle kicks vanish identically on it), and F restricted to N is the shear
(th2, r2) -> (th2 + 2*pi*r2, r2).  The hyperbolic directions live in the
(th1, r1) plane, which is invariant along N for every mu, so stable/unstable
frames reduce to a 2-d power iteration along exactly computable shear orbits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import arnold
from .arnold import ModelParams, SectionPoint, TWO_PI, section_map_many, section_map_tangent_many
from .errors import FrameDegenerate, LeftDomain, NotNormallyHyperbolic
from .numerics import op_norm, conorm

SHEAR = np.array([[1.0, TWO_PI], [0.0, 1.0]])


@dataclass(frozen=True)
class Torus:
    """The invariant circle {th1 = r1 = 0, r2 = omega}."""

    omega: float

    def point(self, theta2: float) -> SectionPoint:
        return SectionPoint(0.0, 0.0, theta2, self.omega)

    def distance(self, state) -> float:
        """Distance of a section state to the circle (th2 is free)."""
        s = np.asarray(state, dtype=float)
        d1 = np.minimum(s[..., 0] % TWO_PI, TWO_PI - (s[..., 0] % TWO_PI))
        return float(np.sqrt(d1 ** 2 + s[..., 1] ** 2 + (s[..., 3] - self.omega) ** 2))


def shear_orbit_base(theta2: float, r2: float, n: int) -> np.ndarray:
    """Exact n-th image of a base point under F|_N (negative n allowed)."""
    return np.array([0.0, 0.0, (theta2 + TWO_PI * r2 * n) % TWO_PI, r2])


def hyperbolic_block(states, params: ModelParams, direction: int = 1) -> np.ndarray:
    """(th1, r1)-block of DF at section states, batched (N, 2, 2)."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    _, jac = section_map_tangent_many(s, params, direction=direction)
    return jac[:, :2, :2]


@dataclass(frozen=True)
class SplittingFrame:
    base: SectionPoint
    e_s: np.ndarray   # 4-vector, unit
    e_u: np.ndarray   # 4-vector, unit
    t1: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0, 0.0]))
    t2: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    mult_s: float = 0.0
    mult_u: float = 0.0


def splitting_frame(base: SectionPoint, params: ModelParams, n_iter: int = 6) -> SplittingFrame:
    """Stable/unstable frame at a base point of N by bundle power iteration.

    The unstable direction is the forward push of a generic (th1, r1) vector
    from n_iter steps in the past; the stable one is the backward push from
    the future.  The per-step gap e^{-4 pi sqrt(eps)} makes this converge to
    roundoff in a handful of steps.
    """
    if abs(base.theta1) > 1e-14 or abs(base.r1) > 1e-14:
        raise FrameDegenerate("base point must lie on N")
    e_u, e_s, mult_u, mult_s = splitting_frames_many(
        np.array([base.theta2]), np.array([base.r2]), params, n_iter=n_iter)
    if not (np.all(np.isfinite(e_u)) and np.all(np.isfinite(e_s))):
        raise FrameDegenerate("power iteration collapsed")
    e4 = np.zeros(4); e4[:2] = e_u[0]
    s4 = np.zeros(4); s4[:2] = e_s[0]
    return SplittingFrame(base, s4, e4, mult_s=float(mult_s[0]), mult_u=float(mult_u[0]))


def splitting_frames_many(theta2s, r2s, params: ModelParams, n_iter: int = 5):
    """Batched stable/unstable frames over many base points of N.

    Returns (e_u (N,2), e_s (N,2), mult_u (N,), mult_s (N,)) with unit frames;
    cost is 2*n_iter+1 batched 2x2 block propagations regardless of N.
    """
    from .arnold import n_hyperbolic_blocks

    theta2s = np.asarray(theta2s, dtype=float)
    r2s = np.asarray(r2s, dtype=float)
    n = theta2s.size
    se = np.sqrt(params.epsilon)
    v0 = np.array([1.0, se]) / np.hypot(1.0, se)
    w0 = np.array([1.0, -se]) / np.hypot(1.0, se)

    e_u = np.tile(v0, (n, 1))
    for k in range(n_iter, 0, -1):
        blocks = n_hyperbolic_blocks((theta2s - TWO_PI * r2s * k) % TWO_PI, r2s, params)
        w = np.einsum("nij,nj->ni", blocks, e_u)
        e_u = w / np.linalg.norm(w, axis=1)[:, None]

    e_s = np.tile(w0, (n, 1))
    for k in range(n_iter, 0, -1):
        blocks = n_hyperbolic_blocks((theta2s + TWO_PI * r2s * k) % TWO_PI, r2s, params,
                                     direction=-1)
        w = np.einsum("nij,nj->ni", blocks, e_s)
        e_s = w / np.linalg.norm(w, axis=1)[:, None]

    blocks0 = n_hyperbolic_blocks(theta2s % TWO_PI, r2s, params)
    mult_s = np.linalg.norm(np.einsum("nij,nj->ni", blocks0, e_s), axis=1)
    mult_u = np.linalg.norm(np.einsum("nij,nj->ni", blocks0, e_u), axis=1)
    return e_u, e_s, mult_u, mult_s


def leaves_batched(theta2s, r2s, kind: str, params: ModelParams,
                   radius: float = 0.05, n_settle: int = 10, n_samples: int = 21):
    """Strong leaves at many base points in one batched pipeline.

    Returns (samples (N, n_samples, 4) in cover coordinates around each base,
    sigma (N, n_samples), e (N, 2) unit leaf directions, mult (N,)).
    """
    theta2s = np.asarray(theta2s, dtype=float)
    r2s = np.asarray(r2s, dtype=float)
    n = theta2s.size
    sign = -1 if kind == "unstable" else 1
    anc_t2 = theta2s + TWO_PI * r2s * (sign * n_settle)
    e_u_a, e_s_a, mu_a, ms_a = splitting_frames_many(anc_t2, r2s, params)
    if kind == "unstable":
        e_anchor, growth = e_u_a, mu_a
    else:
        e_anchor, growth = e_s_a, 1.0 / ms_a

    seed_radius = radius / growth ** n_settle
    sig0 = np.linspace(-1.0, 1.0, n_samples)
    pts = np.zeros((n, n_samples, 4))
    pts[:, :, 0] = sig0[None, :] * seed_radius[:, None] * e_anchor[:, 0][:, None]
    pts[:, :, 1] = sig0[None, :] * seed_radius[:, None] * e_anchor[:, 1][:, None]
    pts[:, :, 2] += (anc_t2 % TWO_PI)[:, None]
    pts[:, :, 3] += r2s[:, None]
    flat = pts.reshape(-1, 4)
    direction = 1 if kind == "unstable" else -1
    for _ in range(n_settle):
        flat = section_map_many(flat, params, direction=direction, reduce_angles=False)
    pts = flat.reshape(n, n_samples, 4)

    e_u_b, e_s_b, mu_b, ms_b = splitting_frames_many(theta2s, r2s, params)
    e_base = e_u_b if kind == "unstable" else e_s_b
    mult = mu_b if kind == "unstable" else ms_b
    base = np.zeros((n, 1, 4))
    base[:, 0, 2] = theta2s
    base[:, 0, 3] = r2s
    diffs = pts - base
    diffs[:, :, 0] = (diffs[:, :, 0] + np.pi) % TWO_PI - np.pi
    diffs[:, :, 2] = (diffs[:, :, 2] + np.pi) % TWO_PI - np.pi
    samples = base + diffs
    sigma = diffs[:, :, 0] * e_base[:, 0][:, None] + diffs[:, :, 1] * e_base[:, 1][:, None]
    e4 = np.zeros((n, 2))
    e4[:] = e_base
    return samples, sigma, e4, mult


def _derive(lam: float, nu: float, C2: float, delta_tilde: float, eta: float):
    lam_bar = 0.5 * (1.0 + lam)
    alpha_tilde = 6.0 * lam_bar / (5.0 + lam_bar)
    beta = 0.5 * (1.0 + alpha_tilde)
    kappa = 0.5 * (1.0 - lam_bar)
    eps_nu = (1.0 - lam) / (12.0 * nu * (1.0 + lam))
    delta = min(1.0, delta_tilde, eta,
                (1.0 - lam_bar) / (3.0 * C2 * (2.0 * nu + 1.0) ** 2))
    return lam_bar, alpha_tilde, beta, kappa, eps_nu, delta


@dataclass(frozen=True)
class HyperbolicityConstants:
    """The constant ledger driving the graph-transform certificates."""

    lambda_: float
    lambda_bar: float
    C1: float
    C2: float
    q: int
    nu: float
    eps_nu: float
    eta: float
    delta_tilde: float
    delta: float
    alpha_tilde: float
    beta: float
    kappa: float
    varsigma: float
    # measured bundle rates and certificate verdicts
    norm_s: float = 0.0
    conorm_u: float = 0.0
    norm_tn: float = 0.0
    conorm_tn: float = 0.0
    q_max: int = 0
    controllable: bool = False
    s_cap: float = np.inf   # admissible ||s|| per the neighborhood inequality

    @classmethod
    def from_lambda(cls, lam: float, nu: float = 1.0, C1: float = 1.0, C2: float = 1.0,
                    q: int = 3, delta_tilde: float = 1.0, eta: float = 1.0,
                    varsigma: float = 0.2) -> "HyperbolicityConstants":
        if not 0.0 < lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")
        lam_bar, a_t, beta, kappa, eps_nu, delta = _derive(lam, nu, C2, delta_tilde, eta)
        return cls(lam, lam_bar, C1, C2, q, nu, eps_nu, eta, delta_tilde, delta,
                   a_t, beta, kappa, varsigma,
                   s_cap=(5.0 - 5.0 * lam) / (2.0 * C2 * (11.0 + lam)))

    def with_nu(self, nu: float, delta_tilde: float | None = None,
                eta: float | None = None) -> "HyperbolicityConstants":
        dt = self.delta_tilde if delta_tilde is None else delta_tilde
        et = self.eta if eta is None else eta
        lam_bar, a_t, beta, kappa, eps_nu, delta = _derive(self.lambda_, nu, self.C2, dt, et)
        return replace(self, nu=nu, delta_tilde=dt, eta=et, eps_nu=eps_nu, delta=delta,
                       lambda_bar=lam_bar, alpha_tilde=a_t, beta=beta, kappa=kappa)

    def check_q(self, q: int) -> bool:
        """Rate inequalities at order q on the measured bundle rates."""
        return (self.norm_s < self.conorm_tn ** q <= 1.0 <= self.norm_tn ** q < self.conorm_u)


def estimate_constants(params: ModelParams, sample_grid=None, q: int = 3,
                       chart=None, require: bool = True,
                       band=(0.0, 1.0), n_theta: int = 16, n_band: int = 5,
                       varsigma: float = 0.2) -> HyperbolicityConstants:
    """Measure the rate constants on a grid of base points of N.

    lambda is the sup over N of the stable/unstable multipliers and their
    mixed products with the tangential shear; the rate inequalities are
    checked at order q (raising NotNormallyHyperbolic on failure when
    require=True).  With a chart, C1/C2 are measured from the straightened
    map's derivative over the chart box; without one, from the ambient DF
    near N (a provisional bound used to bootstrap the chart build).
    """
    if sample_grid is None:
        thetas = np.linspace(0.0, TWO_PI, n_theta, endpoint=False)
        r2s = np.linspace(band[0], band[1], n_band)
        sample_grid = [(t, r) for r in r2s for t in thetas]

    grid = np.asarray(sample_grid, dtype=float)
    t2g, r2g = grid[:, 0], grid[:, 1]
    e_u, e_s, mult_u, mult_s = splitting_frames_many(t2g, r2g, params)
    bases = np.zeros((len(grid), 4))
    bases[:, 2] = t2g % TWO_PI
    bases[:, 3] = r2g
    _, jacs = section_map_tangent_many(bases, params)
    norm_s = float(np.max(mult_s))
    conorm_u = float(np.min(mult_u))
    lam = max(norm_s, float(np.max(1.0 / mult_u)))
    norm_tn = 0.0
    conorm_tn = np.inf
    for i in range(len(grid)):
        tn = jacs[i, 2:, 2:]
        n_tn, c_tn = op_norm(tn), conorm(tn)
        norm_tn = max(norm_tn, n_tn)
        conorm_tn = min(conorm_tn, c_tn)
        lam = max(lam,
                  mult_s[i] * op_norm(np.linalg.inv(tn)),
                  n_tn / mult_u[i])

    q_max = 0
    for qq in range(1, 6):
        if norm_s < conorm_tn ** qq <= 1.0 <= norm_tn ** qq < conorm_u:
            q_max = qq
        else:
            break
    controllable = (norm_s * norm_tn < 1.0) and (conorm_tn * conorm_u > 1.0)
    if require and q_max < q:
        raise NotNormallyHyperbolic(
            q, f"norm_s={norm_s:.4g} vs conorm_tn^q={conorm_tn ** q:.4g}, "
               f"norm_tn^q={norm_tn ** q:.4g} vs conorm_u={conorm_u:.4g}")
    if lam >= 1.0:
        raise NotNormallyHyperbolic(q, f"lambda={lam:.4g} >= 1")

    if chart is not None:
        # two deterministic passes: measure on the full band, shrink the
        # stable box to the admissible radius that C2 implies, re-measure
        s_box = min(chart.varsigma, varsigma)
        C1, C2 = chart.derivative_bounds(s_box=s_box)
        s_cap_a = (5.0 - 5.0 * lam) / (2.0 * C2 * (11.0 + lam))
        if s_cap_a < s_box:
            s_box2 = min(s_box, s_cap_a)
            C1, C2 = chart.derivative_bounds(s_box=s_box2)
    else:
        # ambient provisional bounds on a box |th1|,|r1| <= varsigma around N
        C1 = 0.0
        pts = []
        for theta2, r2 in sample_grid[:: max(1, len(sample_grid) // 8)]:
            for a in (-varsigma, 0.0, varsigma):
                for b in (-varsigma, 0.0, varsigma):
                    pts.append([a, b, theta2, r2])
        _, jacs = section_map_tangent_many(np.array(pts), params)
        C1 = max(op_norm(j) for j in jacs)
        C2 = C1  # crude placeholder until a chart exists
    cst = HyperbolicityConstants.from_lambda(lam, 1.0, C1, C2, q, varsigma=varsigma)
    return replace(cst, norm_s=norm_s, conorm_u=conorm_u, norm_tn=norm_tn,
                   conorm_tn=conorm_tn, q_max=q_max, controllable=controllable)


@dataclass
class LeafCurve:
    """A sampled strong stable/unstable leaf through a base point of N."""

    base: SectionPoint
    kind: str                 # 'stable' | 'unstable'
    sigma: np.ndarray         # leaf parameter at the samples
    samples: np.ndarray       # (n, 4) section states
    direction: np.ndarray     # unit tangent at the base, 4-vector
    multiplier: float         # per-map expansion (unstable) / contraction (stable)
    coeffs: np.ndarray | None = None   # (order+1, 4) polynomial in sigma, row k = sigma^k

    def eval_poly(self, sigma):
        s = np.atleast_1d(np.asarray(sigma, dtype=float))
        out = np.zeros((s.size, 4))
        for k in range(self.coeffs.shape[0]):
            out += self.coeffs[k][None, :] * (s[:, None] ** k)
        return out


def local_leaf(x: SectionPoint, kind: str, order: int, params: ModelParams,
               radius: float = 0.05, n_settle: int = 10, n_samples: int = 21) -> LeafCurve:
    """Local strong leaf by anchored iteration.

    Seeds a linear segment along the frame direction at the n_settle-th
    preimage (unstable) or image (stable) of the base and transports it to the
    base; transverse seeding error contracts by the spectral gap each step.
    A polynomial of the given order is fitted in the leaf parameter.
    """
    if kind not in ("stable", "unstable"):
        raise ValueError("kind must be 'stable' or 'unstable'")
    sign = -1 if kind == "unstable" else 1
    anchor_arr = shear_orbit_base(x.theta2, x.r2, sign * n_settle)
    anchor = SectionPoint.from_array(anchor_arr)
    fr = splitting_frame(anchor, params)
    e = fr.e_u if kind == "unstable" else fr.e_s
    mult = fr.mult_u if kind == "unstable" else fr.mult_s

    # per-map growth of the leaf parameter while transporting to the base
    growth = mult if kind == "unstable" else 1.0 / mult
    seed_radius = radius / growth ** n_settle
    sig = np.linspace(-1.0, 1.0, n_samples) * seed_radius
    pts = anchor_arr[None, :] + sig[:, None] * e[None, :]
    direction = 1 if kind == "unstable" else -1
    for _ in range(n_settle):
        pts = section_map_many(pts, params, direction=direction, reduce_angles=False)
    # keep cover coordinates: reducing angles would tear the curve at 0/2*pi
    base_arr = x.as_array()
    fr_base = splitting_frame(x, params)
    e_base = fr_base.e_u if kind == "unstable" else fr_base.e_s
    diffs = pts - base_arr[None, :]
    diffs[:, 0] = (diffs[:, 0] + np.pi) % TWO_PI - np.pi
    diffs[:, 2] = (diffs[:, 2] + np.pi) % TWO_PI - np.pi
    pts = base_arr[None, :] + diffs
    sigma = diffs @ e_base

    # polynomial fit with pinned constant term
    order = max(1, order)
    vand = np.stack([sigma ** k for k in range(1, order + 1)], axis=1)
    coeffs = np.zeros((order + 1, 4))
    coeffs[0] = base_arr
    sol, *_ = np.linalg.lstsq(vand, diffs, rcond=None)
    coeffs[1:] = sol
    mult_here = fr_base.mult_u if kind == "unstable" else fr_base.mult_s
    return LeafCurve(x, kind, sigma, pts, e_base, mult_here, coeffs)


def leaf_invariance_residual(leaf: LeafCurve, params: ModelParams,
                             n_check: int = 9, target: LeafCurve | None = None) -> float:
    """max distance from F(leaf of x) to the leaf of F(x) as a point set.

    Lamination invariance: the image of the leaf through x lies on the leaf
    through the shear image of x.  Set distance, not parameterwise: the
    parameterizations need not conjugate to a fixed multiplier.
    """
    if target is None:
        step = 1 if leaf.kind == "unstable" else -1
        base_img = SectionPoint.from_array(
            shear_orbit_base(leaf.base.theta2, leaf.base.r2, step))
        order = (leaf.coeffs.shape[0] - 1) if leaf.coeffs is not None else 3
        target = local_leaf(base_img, leaf.kind, order, params,
                            radius=float(np.max(np.abs(leaf.sigma))))
    sig = np.linspace(-0.95, 0.95, n_check) * np.max(np.abs(leaf.sigma))
    scale = 1.0 / leaf.multiplier if leaf.kind == "unstable" else leaf.multiplier
    sig = sig * scale  # images stay inside the target's fitted range
    pts = leaf.eval_poly(sig)
    direction = 1 if leaf.kind == "unstable" else -1
    imgs = section_map_many(pts, params, direction=direction)
    res = 0.0
    fine = np.linspace(-1.0, 1.0, 2001) * np.max(np.abs(target.sigma))
    curve = target.eval_poly(fine)
    for p in np.atleast_2d(imgs):
        d = curve - p[None, :]
        d[:, 2] = (d[:, 2] + np.pi) % TWO_PI - np.pi
        d[:, 0] = (d[:, 0] + np.pi) % TWO_PI - np.pi
        res = max(res, polyline_distance(d))
    return res


def polyline_distance(diffs: np.ndarray) -> float:
    """min distance from the origin to the polyline with vertex offsets diffs."""
    j = int(np.argmin(np.linalg.norm(diffs, axis=1)))
    best = float(np.linalg.norm(diffs[j]))
    for a, b in ((j - 1, j), (j, j + 1)):
        if a < 0 or b >= len(diffs):
            continue
        seg = diffs[b] - diffs[a]
        denom = float(seg @ seg)
        if denom == 0.0:
            continue
        t = np.clip(-(diffs[a] @ seg) / denom, 0.0, 1.0)
        best = min(best, float(np.linalg.norm(diffs[a] + t * seg)))
    return best


def _resample_polyline(pts: np.ndarray, max_spacing: float) -> np.ndarray:
    """Re-grid a polyline to uniform arc spacing ~max_spacing (cubic in arc length).

    Inserts points where expansion stretched the sampling and decimates the
    exponential pile-up near slow regions; curve fidelity is set by the
    spacing, not by sample ancestry.
    """
    from scipy.interpolate import CubicSpline

    if len(pts) < 2:
        return pts
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] == 0.0:
        return pts
    keep = np.concatenate([[True], seg > 1e-15])
    pts_k, arc_k = pts[keep], arc[keep]
    n_new = max(2, int(np.ceil(arc_k[-1] / max_spacing)) + 1)
    t = np.linspace(0.0, arc_k[-1], n_new)
    if len(pts_k) < 4:
        return np.stack([np.interp(t, arc_k, pts_k[:, i]) for i in range(4)], axis=1)
    cs = CubicSpline(arc_k, pts_k, axis=0)
    return cs(t)


DEFAULT_BOX = {"r1": 4.0, "r2": (-2.0, 3.0), "th1_span": TWO_PI + 0.3}


def grow_leaf(leaf: LeafCurve, n: int, params: ModelParams,
              max_spacing: float = 1e-3, box: dict | None = None,
              clip: bool = True, max_points: int = 400_000) -> LeafCurve:
    """Globalize a local leaf by n forward maps (backward for stable leaves).

    Resamples to bounded arc spacing each step (expansion would destroy the
    sampling otherwise) and clips samples leaving the configured box; with
    clip=False an excursion raises LeftDomain instead.  The box bounds the
    cover angle th1 to one loop: samples contracted below roundoff of the
    energy level leak past the saddle and would wind forever otherwise.
    """
    box = {**DEFAULT_BOX, **(box or {})}
    pts = leaf.samples.copy()
    th1_base = float(leaf.base.theta1)
    direction = 1 if leaf.kind == "unstable" else -1
    for _ in range(n):
        pts = section_map_many(pts, params, direction=direction, reduce_angles=False)
        inside = (np.abs(pts[:, 1]) <= box["r1"]) & \
                 (pts[:, 3] >= box["r2"][0]) & (pts[:, 3] <= box["r2"][1]) & \
                 (np.abs(pts[:, 0] - th1_base) <= box["th1_span"])
        if not np.all(inside):
            if not clip:
                raise LeftDomain("leaf sample left the working box")
            pts = pts[inside]
            if len(pts) == 0:
                raise LeftDomain("every leaf sample left the working box")
        pts = _resample_polyline(pts, max_spacing)
        if len(pts) > max_points:
            raise LeftDomain(f"leaf sampling exceeded {max_points} points")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    sigma = np.concatenate([[0.0], np.cumsum(seg)])
    return LeafCurve(leaf.base, leaf.kind, sigma, pts, leaf.direction,
                     leaf.multiplier, leaf.coeffs)


def minimality_proxy(omega: float, n: int, theta2_0: float = 0.0) -> float:
    """Extreme discrepancy of the shear orbit {th2 + 2 pi k omega} against uniform."""
    k = np.arange(n)
    x = np.sort(((theta2_0 / TWO_PI + k * omega) % 1.0))
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - x)
    d_minus = np.max(x - (i - 1) / n)
    return float(d_plus + d_minus)
