"""Straightening chart around N: manifolds and leaves become coordinate slices.

Coordinates are (x, s, u) with x = (th2, r2) a point of N, s the stable and u
the unstable normal coordinate (p = 1).  The hyperbolic plane is straightened
by a polynomial normal form of the pendulum field at its saddle: non-resonant
terms are removed degree by degree, which leaves the axes invariant to the
chart's order even though the saddle resonance forbids exact linearization.
For mu > 0 the product structure breaks at first order; a correction map
fitted from computed strong leaves restores the slice property to O(mu^2)
plus fitting error.  Every validation residual is recorded and the maximum is
published as ``chart_tol``; downstream inequality checks carry it additively.

Straightened state vectors are ordered (x1, x2, s, u) = (th2, r2, s, u);
ambient section vectors are (th1, r1, th2, r2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _poly as P
from .arnold import ModelParams, TWO_PI, section_map_many, section_map_tangent_many
from .errors import ChartValidationFailed, LeftDomain, NoConvergence
from .nhim import leaves_batched

IX = slice(0, 2)   # x-block rows/cols in straightened vectors
IS = 2
IU = 3


def pendulum_normal_form(epsilon: float, order: int):
    """Polynomial map T: (u, s) -> (th1, r1) straightening the saddle to `order`.

    Built from the Poincare-Dulac normal form of the pendulum vector field in
    the (normalized) eigenbasis; resonant monomials u^{k+1} s^k and u^k s^{k+1}
    are kept, so the transform preserves axis invariance rather than
    linearizing the dynamics.  Returns (T1, T2) coefficient matrices with
    variable order (A, B) = (u, s).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    K = order if order % 2 == 1 else order + 1
    se = np.sqrt(epsilon)
    nn = np.sqrt(1.0 + epsilon)  # eigenvector normalization

    A = P.p_var(K, 0)
    B = P.p_var(K, 1)
    s_poly = A + B

    # field in (A, B): A' = se*A + g, B' = -se*B - g with
    # g = (se/2) * sum_{m odd >= 3} (-1)^{(m-1)/2} (A+B)^m / (m! nn^{m-1})
    g = P.p_zero(K)
    fact = 1.0
    for m in range(2, K + 1):
        fact *= m
        if m % 2 == 1 and m >= 3:
            sign = -1.0 if ((m - 1) // 2) % 2 == 1 else 1.0
            g += (se / 2.0) * sign / (fact * nn ** (m - 1)) * P.p_pow(s_poly, m, K)
    F1 = se * A + g
    F2 = -se * B - g

    Phi1, Phi2 = A.copy(), B.copy()
    for d in range(3, K + 1, 2):
        N1 = P.p_homog(F1 - se * A, d)
        N2 = P.p_homog(F2 + se * B, d)
        h1 = P.p_zero(K)
        h2 = P.p_zero(K)
        ii, jj = np.nonzero(N1)
        for i, j in zip(ii, jj):
            if i - j != 1:
                h1[i, j] = N1[i, j] / (se * (i - j - 1))
        ii, jj = np.nonzero(N2)
        for i, j in zip(ii, jj):
            if i - j != -1:
                h2[i, j] = N2[i, j] / (se * (i - j + 1))
        if not (np.any(h1) or np.any(h2)):
            continue
        f = A + h1
        gcomp = B + h2
        F1c = P.p_compose(F1, f, gcomp, K)
        F2c = P.p_compose(F2, f, gcomp, K)
        # (I + Dh)^{-1} applied by Neumann iteration; Dh raises degree by d-1
        dh = [[P.p_diff(h1, 0), P.p_diff(h1, 1)], [P.p_diff(h2, 0), P.p_diff(h2, 1)]]
        G1, G2 = F1c.copy(), F2c.copy()
        for _ in range(K // max(1, d - 1) + 1):
            G1 = F1c - (P.p_mul(dh[0][0], G1, K) + P.p_mul(dh[0][1], G2, K))
            G2 = F2c - (P.p_mul(dh[1][0], G1, K) + P.p_mul(dh[1][1], G2, K))
        F1, F2 = G1, G2
        Phi1 = P.p_compose(Phi1, f, gcomp, K)
        Phi2 = P.p_compose(Phi2, f, gcomp, K)

    # ambient embedding with unit-normalized eigenvectors
    T1 = (Phi1 + Phi2) / nn
    T2 = se * (Phi1 - Phi2) / nn
    return T1, T2


@dataclass
class MuCorrection:
    """Fitted leaf-correction fields for one kind of leaf.

    Each field value is sum_k w^k * (Fourier in th2) * (poly in scaled r2),
    with w the transversal coordinate (u for unstable data, s for stable).
    Coefficient tensors have shape (n_pow, n_fourier, n_rad).
    """

    kind: str
    c_x1: np.ndarray
    c_x2: np.ndarray
    c_t: np.ndarray      # transversal deviation: s-dev for 'unstable', u-dev for 'stable'
    r2_center: float
    r2_scale: float
    max_w: float

    def _basis(self, theta2, r2):
        t = (np.asarray(r2, dtype=float) - self.r2_center) / self.r2_scale
        th = np.asarray(theta2, dtype=float)
        nf = self.c_x1.shape[1]
        four = [np.ones_like(th)]
        k = 1
        while len(four) < nf:
            four.append(np.cos(k * th))
            four.append(np.sin(k * th))
            k += 1
        four = np.stack(four[:nf], axis=-1)                      # (..., nf)
        nr = self.c_x1.shape[2]
        rad = np.stack([t ** p for p in range(nr)], axis=-1)     # (..., nr)
        return four, rad

    def _basis_d(self, theta2, r2):
        t = (np.asarray(r2, dtype=float) - self.r2_center) / self.r2_scale
        th = np.asarray(theta2, dtype=float)
        nf = self.c_x1.shape[1]
        four_d = [np.zeros_like(th)]
        k = 1
        while len(four_d) < nf:
            four_d.append(-k * np.sin(k * th))
            four_d.append(k * np.cos(k * th))
            k += 1
        four_d = np.stack(four_d[:nf], axis=-1)
        nr = self.c_x1.shape[2]
        rad_d = np.stack([(p * t ** max(p - 1, 0)) / self.r2_scale for p in range(nr)],
                         axis=-1)
        return four_d, rad_d

    def _field(self, coeff, theta2, r2, w, d_w=0, d_th=False, d_r2=False):
        npow = coeff.shape[0]
        if d_th:
            four, _ = self._basis_d(theta2, r2)
            _, rad = self._basis(theta2, r2)
        elif d_r2:
            four, _ = self._basis(theta2, r2)
            _, rad = self._basis_d(theta2, r2)
        else:
            four, rad = self._basis(theta2, r2)
        amp = np.einsum("kfr,...f,...r->k...", coeff, four, rad)
        w = np.asarray(w, dtype=float)
        out = np.zeros_like(np.broadcast_to(w, amp.shape[1:]).astype(float))
        for k in range(npow):
            p = k + 1  # powers start at w^1
            if d_w == 0:
                out = out + amp[k] * w ** p
            else:
                out = out + amp[k] * p * w ** (p - 1)
        return out

    def deltas(self, theta2, r2, w):
        """(dx1, dx2, dt) deviations at transversal coordinate w."""
        return (self._field(self.c_x1, theta2, r2, w),
                self._field(self.c_x2, theta2, r2, w),
                self._field(self.c_t, theta2, r2, w))

    def deltas_jac(self, theta2, r2, w):
        """Partials of the three fields wrt (th2, r2, w), each (..., 3)."""
        out = []
        for c in (self.c_x1, self.c_x2, self.c_t):
            d_th = self._field(c, theta2, r2, w, d_th=True)
            d_r2 = self._field(c, theta2, r2, w, d_r2=True)
            d_w = self._field(c, theta2, r2, w, d_w=1)
            out.append(np.stack([d_th, d_r2, d_w], axis=-1))
        return out


def _fit_correction(kind: str, params: ModelParams, t1_poly, t2_poly, order: int,
                    band, leaf_radius: float, n_theta: int = 8, n_rad: int = 4,
                    fit_pow: int = 3, n_fourier: int = 5, n_rbasis: int = 3,
                    n_samples: int = 25) -> MuCorrection:
    """Fit leaf-deviation fields from batched strong leaves over a base grid."""
    thetas = np.linspace(0.0, TWO_PI, n_theta, endpoint=False)
    r2s = np.linspace(band[0], band[1], n_rad)
    tg, rg = np.meshgrid(thetas, r2s, indexing="ij")
    tg = tg.ravel(); rg = rg.ravel()
    samples, _, _, _ = leaves_batched(tg, rg, kind, params,
                                      radius=leaf_radius, n_samples=n_samples)
    n = tg.size
    # product-chart coordinates of the leaf samples
    th1 = samples[..., 0]; r1 = samples[..., 1]
    u, s = _invert_t_poly(t1_poly, t2_poly, th1.ravel(), r1.ravel())
    u = u.reshape(n, n_samples); s = s.reshape(n, n_samples)
    dx1 = (samples[..., 2] - tg[:, None] + np.pi) % TWO_PI - np.pi
    dx2 = samples[..., 3] - rg[:, None]
    w = u if kind == "unstable" else s
    t_dev = s if kind == "unstable" else u

    # per-base polynomial fits in w (powers 1..fit_pow)
    coefs = np.zeros((3, fit_pow, n))
    for i in range(n):
        vand = np.stack([w[i] ** p for p in range(1, fit_pow + 1)], axis=1)
        for c_idx, vals in enumerate((dx1[i], dx2[i], t_dev[i])):
            sol, *_ = np.linalg.lstsq(vand, vals, rcond=None)
            coefs[c_idx, :, i] = sol

    # fit coefficient fields over the base grid: Fourier(th2) x poly(r2)
    r2c = 0.5 * (band[0] + band[1])
    r2s_scale = max(0.5 * (band[1] - band[0]), 1e-6)
    t_s = (rg - r2c) / r2s_scale
    cols = []
    for fidx in range(n_fourier):
        if fidx == 0:
            fb = np.ones_like(tg)
        else:
            k = (fidx + 1) // 2
            fb = np.cos(k * tg) if fidx % 2 == 1 else np.sin(k * tg)
        for p in range(n_rbasis):
            cols.append(fb * t_s ** p)
    basis = np.stack(cols, axis=1)  # (n, n_fourier*n_rbasis)

    tensors = []
    for c_idx in range(3):
        tens = np.zeros((fit_pow, n_fourier, n_rbasis))
        for k in range(fit_pow):
            sol, *_ = np.linalg.lstsq(basis, coefs[c_idx, k], rcond=None)
            tens[k] = sol.reshape(n_fourier, n_rbasis)
        tensors.append(tens)
    return MuCorrection(kind, tensors[0], tensors[1], tensors[2], r2c, r2s_scale,
                        max_w=float(np.max(np.abs(w))))


def _invert_t_poly(t1, t2, th1, r1, tol=1e-13, max_iter=40, strict=True):
    """Batched Newton for T(u, s) = (th1, r1); th1 given in (-pi, pi] cover.

    With strict=False, points whose Newton iteration does not settle (outside
    the chart's validity region) come back as NaN instead of raising.
    """
    th1 = np.asarray(th1, dtype=float)
    r1 = np.asarray(r1, dtype=float)
    d11 = P.p_diff(t1, 0); d12 = P.p_diff(t1, 1)
    d21 = P.p_diff(t2, 0); d22 = P.p_diff(t2, 1)
    m = np.array([[t1[1, 0], t1[0, 1]], [t2[1, 0], t2[0, 1]]])
    minv = np.linalg.inv(m)
    u = minv[0, 0] * th1 + minv[0, 1] * r1
    s = minv[1, 0] * th1 + minv[1, 1] * r1
    converged = False
    with np.errstate(all="ignore"):
        for _ in range(max_iter):
            f1 = P.p_eval(t1, u, s) - th1
            f2 = P.p_eval(t2, u, s) - r1
            bad = ~(np.isfinite(f1) & np.isfinite(f2))
            resid = np.where(bad, np.inf, np.maximum(np.abs(f1), np.abs(f2)))
            if np.max(resid) <= tol:
                converged = True
                break
            a = P.p_eval(d11, u, s); b = P.p_eval(d12, u, s)
            c = P.p_eval(d21, u, s); d = P.p_eval(d22, u, s)
            det = a * d - b * c
            step_ok = np.abs(det) > 1e-300
            du = np.where(step_ok & (resid > tol), (d * f1 - b * f2) / det, 0.0)
            ds = np.where(step_ok & (resid > tol), (-c * f1 + a * f2) / det, 0.0)
            u = u - du
            s = s - ds
    if not converged:
        f1 = P.p_eval(t1, u, s) - th1
        f2 = P.p_eval(t2, u, s) - r1
        with np.errstate(invalid="ignore"):
            bad = ~(np.isfinite(f1) & np.isfinite(f2)) | \
                (np.maximum(np.abs(f1), np.abs(f2)) > tol * 100)
        if np.any(bad):
            if strict:
                raise NoConvergence("chart Newton did not converge")
            u = np.where(bad, np.nan, u)
            s = np.where(bad, np.nan, s)
    return u, s


@dataclass
class Chart:
    """The straightening diffeomorphism and its derivative, batched."""

    params: ModelParams
    varsigma: float
    order: int
    band: tuple
    t1: np.ndarray
    t2: np.ndarray
    corr_u: MuCorrection | None = None
    corr_s: MuCorrection | None = None
    chart_tol: float = 0.0
    s_cap: float = np.inf
    validation: dict = field(default_factory=dict)
    domain_margin: float = 1.5   # allow evaluation up to margin * varsigma

    # -- core maps ---------------------------------------------------------

    def to_chart(self, ambient, strict: bool = True) -> np.ndarray:
        """phi: ambient (th1, r1, th2, r2) -> straightened (x1, x2, s, u).

        strict=False marks points outside the chart's validity as NaN rows.
        """
        a = np.atleast_2d(np.asarray(ambient, dtype=float))
        th1 = (a[:, 0] + np.pi) % TWO_PI - np.pi
        u, s = _invert_t_poly(self.t1, self.t2, th1, a[:, 1], strict=strict)
        if not strict:
            # the polynomial has spurious far roots; trust only the chart box
            lim = self.domain_margin * self.varsigma
            with np.errstate(invalid="ignore"):
                bad = ~(np.abs(u) <= lim) | ~(np.abs(s) <= lim)
            u = np.where(bad, np.nan, u)
            s = np.where(bad, np.nan, s)
        out = np.empty_like(a)
        out[:, 0] = a[:, 2] % TWO_PI
        out[:, 1] = a[:, 3]
        out[:, 2] = s
        out[:, 3] = u
        if self.corr_u is not None:
            dx1, dx2, ds = self.corr_u.deltas(out[:, 0], out[:, 1], out[:, 3])
            out[:, 0] -= dx1; out[:, 1] -= dx2; out[:, 2] -= ds
            dx1, dx2, du = self.corr_s.deltas(out[:, 0], out[:, 1], out[:, 2])
            out[:, 0] -= dx1; out[:, 1] -= dx2; out[:, 3] -= du
        out[:, 0] %= TWO_PI
        return out if np.ndim(ambient) > 1 else out[0]

    def from_chart(self, straight) -> np.ndarray:
        """phi^{-1}: straightened -> ambient."""
        z = np.atleast_2d(np.asarray(straight, dtype=float)).copy()
        if self.corr_u is not None:
            # undo Psi_s then Psi_u by fixed-point iteration (corrections are small)
            x1, x2, s, u = z[:, 0].copy(), z[:, 1].copy(), z[:, 2], z[:, 3].copy()
            for _ in range(6):
                dx1, dx2, du = self.corr_s.deltas(x1, x2, s)
                x1 = z[:, 0] + dx1; x2 = z[:, 1] + dx2; u = z[:, 3] + du
            z[:, 0], z[:, 1], z[:, 3] = x1, x2, u
            x1, x2, s = z[:, 0].copy(), z[:, 1].copy(), z[:, 2].copy()
            for _ in range(6):
                dx1, dx2, ds = self.corr_u.deltas(x1, x2, z[:, 3])
                x1 = z[:, 0] + dx1; x2 = z[:, 1] + dx2; s = z[:, 2] + ds
            z[:, 0], z[:, 1], z[:, 2] = x1, x2, s
        out = np.empty_like(z)
        out[:, 0] = P.p_eval(self.t1, z[:, 3], z[:, 2]) % TWO_PI
        out[:, 1] = P.p_eval(self.t2, z[:, 3], z[:, 2])
        out[:, 2] = z[:, 0] % TWO_PI
        out[:, 3] = z[:, 1]
        return out if np.ndim(straight) > 1 else out[0]

    def dchart_from(self, straight) -> np.ndarray:
        """D(phi^{-1}) at straightened points, as (n, 4, 4) ambient-by-straight."""
        z = np.atleast_2d(np.asarray(straight, dtype=float))
        n = z.shape[0]
        # chain rule through the inverse corrections, evaluated at the
        # intermediate (pre-correction) coordinates
        if self.corr_u is not None:
            z_mid = self._undo_s(z)
            z_prod = self._undo_u(z_mid)
        else:
            z_mid = z
            z_prod = z
        jac = np.zeros((n, 4, 4))
        # D(phi0^{-1}) at product coordinates: straight (x1,x2,s,u) -> ambient
        d11 = P.p_eval(P.p_diff(self.t1, 0), z_prod[:, 3], z_prod[:, 2])
        d12 = P.p_eval(P.p_diff(self.t1, 1), z_prod[:, 3], z_prod[:, 2])
        d21 = P.p_eval(P.p_diff(self.t2, 0), z_prod[:, 3], z_prod[:, 2])
        d22 = P.p_eval(P.p_diff(self.t2, 1), z_prod[:, 3], z_prod[:, 2])
        jac[:, 0, 3] = d11; jac[:, 0, 2] = d12
        jac[:, 1, 3] = d21; jac[:, 1, 2] = d22
        jac[:, 2, 0] = 1.0
        jac[:, 3, 1] = 1.0
        if self.corr_u is None:
            return jac if np.ndim(straight) > 1 else jac[0]
        # D(Psi_u^{-1}) at z_mid and D(Psi_s^{-1}) at z: inverses of the
        # correction Jacobians evaluated at their preimages
        ju = self._dpsi(self.corr_u, z_prod, transversal=IU)
        js = self._dpsi(self.corr_s, z_mid, transversal=IS)
        out = np.einsum("nij,njk,nkl->nil", jac, np.linalg.inv(ju), np.linalg.inv(js))
        return out if np.ndim(straight) > 1 else out[0]

    def dchart_to(self, ambient) -> np.ndarray:
        """D(phi) at ambient points, as (n, 4, 4) straight-by-ambient."""
        a = np.atleast_2d(np.asarray(ambient, dtype=float))
        z = np.atleast_2d(self.to_chart(a))
        inv = np.linalg.inv(np.atleast_3d(self.dchart_from(z)).reshape(len(z), 4, 4))
        return inv if np.ndim(ambient) > 1 else inv[0]

    def _undo_s(self, z):
        out = z.copy()
        x1, x2, u = z[:, 0].copy(), z[:, 1].copy(), z[:, 3].copy()
        for _ in range(6):
            dx1, dx2, du = self.corr_s.deltas(x1, x2, z[:, 2])
            x1 = z[:, 0] + dx1; x2 = z[:, 1] + dx2; u = z[:, 3] + du
        out[:, 0], out[:, 1], out[:, 3] = x1, x2, u
        return out

    def _undo_u(self, z):
        out = z.copy()
        x1, x2, s = z[:, 0].copy(), z[:, 1].copy(), z[:, 2].copy()
        for _ in range(6):
            dx1, dx2, ds = self.corr_u.deltas(x1, x2, z[:, 3])
            x1 = z[:, 0] + dx1; x2 = z[:, 1] + dx2; s = z[:, 2] + ds
        out[:, 0], out[:, 1], out[:, 2] = x1, x2, s
        return out

    def _dpsi(self, corr: MuCorrection, z_pre, transversal: int):
        """Jacobian of Psi (the forward correction) at its input points z_pre."""
        n = z_pre.shape[0]
        w = z_pre[:, transversal]
        jx1, jx2, jt = corr.deltas_jac(z_pre[:, 0], z_pre[:, 1], w)
        out = np.tile(np.eye(4), (n, 1, 1))
        t_row = IS if transversal == IU else IU
        for row, j in ((0, jx1), (1, jx2), (t_row, jt)):
            out[:, row, 0] -= j[:, 0]
            out[:, row, 1] -= j[:, 1]
            out[:, row, transversal] -= j[:, 2]
        return out

    # -- domain ------------------------------------------------------------

    def in_domain(self, straight, margin: float = 1.0) -> np.ndarray:
        z = np.atleast_2d(np.asarray(straight, dtype=float))
        lim = self.varsigma * margin
        ok = (np.abs(z[:, 2]) <= lim) & (np.abs(z[:, 3]) <= lim)
        ok &= (z[:, 1] >= self.band[0] - 1e-9) & (z[:, 1] <= self.band[1] + 1e-9)
        return ok

    def require_domain(self, straight, margin: float | None = None):
        ok = self.in_domain(straight, margin or self.domain_margin)
        if not np.all(ok):
            raise LeftDomain(f"{int((~ok).sum())} point(s) outside the chart box")

    # -- bounds ------------------------------------------------------------

    def derivative_bounds(self, s_box: float | None = None, u_box: float | None = None,
                          n_grid: int = 4, fd_step: float = 1e-4):
        """(C1, C2): sup |DF~| and a finite-difference bound on |D^2 F~|.

        The u-box keeps one forward image inside the chart (u expands by the
        unstable multiplier), matching the domain V = U intersect F^{-1}(U).
        """
        m_u = np.exp(TWO_PI * np.sqrt(self.params.epsilon))
        s_box = s_box if s_box is not None else self.varsigma
        u_box = u_box if u_box is not None else 0.7 * self.varsigma / m_u
        xs = np.linspace(self.band[0], self.band[1], 3)
        ths = np.linspace(0.0, TWO_PI, 4, endpoint=False)
        ss = np.linspace(-s_box, s_box, n_grid)
        us = np.linspace(-u_box, u_box, n_grid)
        pts = np.array([[t, x, s, u] for x in xs for t in ths for s in ss for u in us])
        C1 = 0.0
        jac0 = _df_tilde(pts, self, self.params)
        C1 = float(max(np.linalg.norm(j, 2) for j in jac0))
        C2 = 0.0
        for axis in range(4):
            h = fd_step * (1.0 if axis < 2 else max(s_box, u_box))
            pp = pts.copy(); pp[:, axis] += h
            pm = pts.copy(); pm[:, axis] -= h
            jp = _df_tilde(pp, self, self.params)
            jm = _df_tilde(pm, self, self.params)
            d = (jp - jm) / (2.0 * h)
            C2 = max(C2, float(max(np.linalg.norm(m, 2) for m in d)))
        return C1, 1.25 * C2

    # -- serialization -----------------------------------------------------

    def to_text(self) -> str:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        doc = {
            "format": "nhimlab-chart",
            "version": 1,
            "params": {"epsilon": self.params.epsilon, "mu": self.params.mu,
                       "dt_log2": self.params.dt_log2, "order": self.params.order},
            "varsigma": self.varsigma,
            "order": self.order,
            "band": list(self.band),
            "t1": arr(self.t1),
            "t2": arr(self.t2),
            "chart_tol": self.chart_tol,
            "s_cap": self.s_cap,
            "validation": {k: float(v) for k, v in self.validation.items()},
            "corrections": None,
        }
        if self.corr_u is not None:
            doc["corrections"] = {}
            for name, c in (("unstable", self.corr_u), ("stable", self.corr_s)):
                doc["corrections"][name] = {
                    "c_x1": arr(c.c_x1), "c_x2": arr(c.c_x2), "c_t": arr(c.c_t),
                    "r2_center": c.r2_center, "r2_scale": c.r2_scale,
                    "max_w": c.max_w,
                }
        return json.dumps(doc, indent=1, sort_keys=True)

    @staticmethod
    def from_text(text: str) -> "Chart":
        doc = json.loads(text)
        if doc.get("format") != "nhimlab-chart":
            raise ValueError("not a chart document")
        params = ModelParams(**doc["params"])
        corr_u = corr_s = None
        if doc["corrections"]:
            cs = doc["corrections"]
            corr_u = MuCorrection("unstable", np.array(cs["unstable"]["c_x1"]),
                                  np.array(cs["unstable"]["c_x2"]),
                                  np.array(cs["unstable"]["c_t"]),
                                  cs["unstable"]["r2_center"], cs["unstable"]["r2_scale"],
                                  cs["unstable"]["max_w"])
            corr_s = MuCorrection("stable", np.array(cs["stable"]["c_x1"]),
                                  np.array(cs["stable"]["c_x2"]),
                                  np.array(cs["stable"]["c_t"]),
                                  cs["stable"]["r2_center"], cs["stable"]["r2_scale"],
                                  cs["stable"]["max_w"])
        ch = Chart(params, doc["varsigma"], doc["order"], tuple(doc["band"]),
                   np.array(doc["t1"]), np.array(doc["t2"]), corr_u, corr_s,
                   doc["chart_tol"], doc["s_cap"], doc["validation"])
        return ch


# -- straightened dynamics --------------------------------------------------

def straightened_map(straight, chart: Chart, params: ModelParams) -> np.ndarray:
    """F~ = phi o F o phi^{-1} on straightened states (batched)."""
    chart.require_domain(straight)
    amb = chart.from_chart(straight)
    img = section_map_many(amb, params)
    out = chart.to_chart(img)
    return out


def map_with_blocks(straight, chart: Chart, params: ModelParams):
    """(F~(z), DF~(z)) in one pass: one tangent propagation, shared chart solves."""
    chart.require_domain(straight)
    z = np.atleast_2d(np.asarray(straight, dtype=float))
    amb = np.atleast_2d(chart.from_chart(z))
    img_amb, jac = section_map_tangent_many(amb, params)
    img_amb = np.atleast_2d(img_amb)
    img = np.atleast_2d(chart.to_chart(img_amb))
    d_from = np.atleast_3d(chart.dchart_from(z)).reshape(len(z), 4, 4)
    d_to = np.linalg.inv(
        np.atleast_3d(chart.dchart_from(img)).reshape(len(z), 4, 4))
    mats = np.einsum("nij,njk,nkl->nil", d_to, jac, d_from)
    return img, mats


def _df_tilde(straight, chart: Chart, params: ModelParams) -> np.ndarray:
    """DF~ as (n, 4, 4) straight-by-straight matrices."""
    z = np.atleast_2d(np.asarray(straight, dtype=float))
    amb = np.atleast_2d(chart.from_chart(z))
    img, jac = section_map_tangent_many(amb, params)
    img = np.atleast_2d(img)
    d_from = np.atleast_3d(chart.dchart_from(z)).reshape(len(z), 4, 4)
    d_to = np.atleast_3d(chart.dchart_to(img)).reshape(len(z), 4, 4)
    return np.einsum("nij,njk,nkl->nil", d_to, jac, d_from)


@dataclass
class BlockJacobian:
    """The nine partial-derivative blocks of DF~ at a straightened point."""

    dxFx: np.ndarray  # (2, 2)
    dsFx: np.ndarray  # (2, 1)
    duFx: np.ndarray  # (2, 1)
    dxFs: np.ndarray  # (1, 2)
    dsFs: np.ndarray  # (1, 1)
    duFs: np.ndarray  # (1, 1)
    dxFu: np.ndarray  # (1, 2)
    dsFu: np.ndarray  # (1, 1)
    duFu: np.ndarray  # (1, 1)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "BlockJacobian":
        return BlockJacobian(
            m[IX, IX], m[IX, IS:IS + 1], m[IX, IU:IU + 1],
            m[IS:IS + 1, IX], m[IS:IS + 1, IS:IS + 1], m[IS:IS + 1, IU:IU + 1],
            m[IU:IU + 1, IX], m[IU:IU + 1, IS:IS + 1], m[IU:IU + 1, IU:IU + 1])


def block_jacobian(straight, chart: Chart, params: ModelParams):
    """Blocks of DF~; returns one BlockJacobian or a list for batched input."""
    chart.require_domain(straight)
    mats = _df_tilde(straight, chart, params)
    blocks = [BlockJacobian.from_matrix(m) for m in mats]
    return blocks if np.ndim(straight) > 1 else blocks[0]


def block_matrices(straight, chart: Chart, params: ModelParams) -> np.ndarray:
    """Raw DF~ matrices (n, 4, 4) for batched consumers."""
    chart.require_domain(straight)
    return _df_tilde(straight, chart, params)


def project_N(straight) -> np.ndarray:
    """Pi_N: (x, s, u) -> x."""
    z = np.asarray(straight, dtype=float)
    return z[..., :2]


def project_u(straight) -> np.ndarray:
    """Pi_3: (x, s, u) -> u."""
    z = np.asarray(straight, dtype=float)
    return z[..., 3]


# -- construction and validation --------------------------------------------

def build_chart(params: ModelParams, order: int = 3, varsigma: float = 0.2,
                band=(0.0, 1.0), fit_corrections: bool | None = None,
                leaf_radius: float | None = None, tol_cap: float = 1e-3,
                validate: bool = True) -> Chart:
    """Build the straightening chart and validate the five slice properties.

    The hyperbolic plane gets the polynomial normal-form straightening of the
    pendulum saddle; for mu > 0 (or fit_corrections=True) first-order leaf
    corrections are fitted from computed strong leaves.  Validation measures
    the slice residuals on held-out leaves and the one-step invariance defects
    of F~, records them, and publishes chart_tol as their maximum.
    """
    t1, t2 = pendulum_normal_form(params.epsilon, order)
    chart = Chart(params, varsigma, order, tuple(band), t1, t2)
    if fit_corrections is None:
        fit_corrections = params.mu > 0.0
    if leaf_radius is None:
        leaf_radius = 0.7 * varsigma
    if fit_corrections:
        chart.corr_u = _fit_correction("unstable", params, t1, t2, order, band, leaf_radius)
        chart.corr_s = _fit_correction("stable", params, t1, t2, order, band, leaf_radius)

    if validate:
        _validate_chart(chart, params, tol_cap)
    return chart


def _validate_chart(chart: Chart, params: ModelParams, tol_cap: float):
    rng = np.random.default_rng(20260808)
    band = chart.band
    report = {}

    # item 1: N fixed pointwise
    xs = np.stack([np.zeros(16), np.zeros(16),
                   rng.uniform(0, TWO_PI, 16), rng.uniform(band[0], band[1], 16)], axis=1)
    z = chart.to_chart(xs)
    report["item1_N_fixed"] = float(max(np.max(np.abs(z[:, 2:])),
                                        np.max(np.abs(z[:, 1] - xs[:, 3])),
                                        np.max(np.abs((z[:, 0] - xs[:, 2] + np.pi) % TWO_PI - np.pi))))

    # items 2-5 on held-out leaves
    n_hold = 6
    th_h = rng.uniform(0, TWO_PI, n_hold)
    r2_h = rng.uniform(band[0] + 0.05 * (band[1] - band[0]),
                       band[1] - 0.05 * (band[1] - band[0]), n_hold)
    for kind, item_m, item_leaf in (("stable", "item2_ws_u0", "item4_leaf_ss"),
                                    ("unstable", "item3_wu_s0", "item5_leaf_uu")):
        samples, _, _, _ = leaves_batched(th_h, r2_h, kind, params,
                                          radius=0.7 * chart.varsigma, n_samples=17)
        flat = samples.reshape(-1, 4)
        z = chart.to_chart(flat).reshape(n_hold, -1, 4)
        trans = z[:, :, IU] if kind == "stable" else z[:, :, IS]
        report[item_m] = float(np.max(np.abs(trans)))
        dx1 = (z[:, :, 0] - th_h[:, None] % TWO_PI + np.pi) % TWO_PI - np.pi
        dx2 = z[:, :, 1] - r2_h[:, None]
        report[item_leaf] = float(max(np.max(np.abs(dx1)), np.max(np.abs(dx2)),
                                      np.max(np.abs(trans))))

    # inverse consistency on a grid
    zz = np.stack([rng.uniform(0, TWO_PI, 64), rng.uniform(band[0], band[1], 64),
                   rng.uniform(-0.5, 0.5, 64) * chart.varsigma,
                   rng.uniform(-0.5, 0.5, 64) * chart.varsigma], axis=1)
    amb = chart.from_chart(zz)
    back = chart.to_chart(amb)
    dd = back - zz
    dd[:, 0] = (dd[:, 0] + np.pi) % TWO_PI - np.pi
    report["inverse_roundtrip"] = float(np.max(np.abs(dd)))

    # one-step invariance defects of F~
    m_u = np.exp(TWO_PI * np.sqrt(params.epsilon))
    n_inv = 48
    zs = np.stack([rng.uniform(0, TWO_PI, n_inv), rng.uniform(band[0], band[1], n_inv),
                   rng.uniform(-1, 1, n_inv) * chart.varsigma * 0.5,
                   np.zeros(n_inv)], axis=1)
    img = straightened_map(zs, chart, params)
    report["ftilde_u_on_ws"] = float(np.max(np.abs(img[:, IU])))
    zu = np.stack([rng.uniform(0, TWO_PI, n_inv), rng.uniform(band[0], band[1], n_inv),
                   np.zeros(n_inv),
                   rng.uniform(-1, 1, n_inv) * chart.varsigma * 0.8 / m_u], axis=1)
    img = straightened_map(zu, chart, params)
    report["ftilde_s_on_wu"] = float(np.max(np.abs(img[:, IS])))

    # diagonal form of DF~ on N
    zn = np.stack([rng.uniform(0, TWO_PI, 16), rng.uniform(band[0], band[1], 16),
                   np.zeros(16), np.zeros(16)], axis=1)
    mats = block_matrices(zn, chart, params)
    off = mats.copy()
    off[:, IX, IX] = 0.0
    off[:, IS, IS] = 0.0
    off[:, IU, IU] = 0.0
    report["dfdiag_offdiag_on_N"] = float(np.max(np.abs(off)))

    chart.validation = report
    chart.chart_tol = max(report.values())
    if chart.chart_tol > tol_cap:
        worst = max(report, key=report.get)
        raise ChartValidationFailed(worst, report[worst], tol_cap)
