"""Precision-configurable scalars, small dense linear algebra, Newton, quadrature.

Everything here is a pure function of its inputs.  The heavy experiments use
numpy at hardware precision; orbit segments whose error growth exceeds the
53-bit headroom go through a :class:`Context` holding an independent mpmath
clone, so raising precision never touches global state.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np

from .errors import IllConditioned, NoConvergence, SingularJacobian, ToleranceNotReached

DOUBLE_PREC = 53

#: default tolerance ladder: root-finding, quadrature, manifold fitting
TOL_ROOT = 1e-12
TOL_QUAD = 1e-10
TOL_FIT = 1e-8

#: condition numbers beyond this (at 53-bit precision) raise instead of inverting
COND_LIMIT = 1e12


class Context:
    """Arithmetic context at a fixed binary precision.

    ``prec = 53`` dispatches to hardware doubles (bit-for-bit the float path);
    higher precisions run on a private mpmath context.  Precision is frozen at
    construction: one context per experiment run.
    """

    def __init__(self, prec: int = DOUBLE_PREC):
        if prec < DOUBLE_PREC:
            raise ValueError("precision below 53 bits is not supported")
        self.prec = int(prec)
        if self.prec == DOUBLE_PREC:
            self._mp = None
        else:
            ctx = mpmath.mp.clone()
            ctx.prec = self.prec
            self._mp = ctx

    @property
    def is_double(self) -> bool:
        return self._mp is None

    def real(self, x):
        if self._mp is None:
            return float(x)
        if isinstance(x, float):
            return self._mp.mpf(x)
        return self._mp.mpf(str(x)) if isinstance(x, str) else self._mp.mpf(x)

    def to_float(self, x) -> float:
        return float(x)

    @property
    def pi(self):
        return math.pi if self._mp is None else self._mp.pi

    def cos(self, x):
        return math.cos(x) if self._mp is None else self._mp.cos(x)

    def sin(self, x):
        return math.sin(x) if self._mp is None else self._mp.sin(x)

    def exp(self, x):
        return math.exp(x) if self._mp is None else self._mp.exp(x)

    def sqrt(self, x):
        return math.sqrt(x) if self._mp is None else self._mp.sqrt(x)

    def fabs(self, x):
        return abs(x)

    def eps(self):
        """Unit roundoff of this context."""
        return 2.0 ** (1 - self.prec)


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("expected a nonempty 2-d matrix")
    return a


def op_norm(m) -> float:
    """Spectral operator norm (largest singular value)."""
    a = _as_matrix(m)
    return float(np.linalg.svd(a, compute_uv=False)[0])


def conorm(m) -> float:
    """Smallest singular value; equals 1/op_norm(inverse) for invertible m."""
    a = _as_matrix(m)
    return float(np.linalg.svd(a, compute_uv=False)[-1])


def cond(m) -> float:
    a = _as_matrix(m)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] == 0.0:
        return float("inf")
    return float(sv[0] / sv[-1])


def inverse(m, cond_limit: float = COND_LIMIT) -> np.ndarray:
    """Inverse with a condition-number guard: silently degraded inverses raise."""
    a = _as_matrix(m)
    c = cond(a)
    if not np.isfinite(c) or c > cond_limit:
        raise IllConditioned(f"condition number {c:.3e} exceeds {cond_limit:.1e}")
    return np.linalg.inv(a)


def newton_solve(f, jac, x0, tol: float = TOL_ROOT, max_iter: int = 50):
    """Newton's method for f: R^k -> R^k with explicit Jacobian.

    Returns x with ||f(x)||_inf <= tol (re-checked on the final value).
    Scalar callables are accepted and returned as floats.
    """
    x0_arr = np.atleast_1d(np.asarray(x0, dtype=float))
    scalar = np.ndim(x0) == 0
    x = x0_arr.copy()

    def fv(z):
        r = f(z[0]) if scalar else f(z)
        return np.atleast_1d(np.asarray(r, dtype=float))

    def jv(z):
        r = jac(z[0]) if scalar else jac(z)
        a = np.asarray(r, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            a = np.diag(a) if a.size == x.size and x.size > 1 else a.reshape(1, 1)
        return a

    for _ in range(max_iter):
        r = fv(x)
        if not np.all(np.isfinite(r)):
            raise NoConvergence("residual became non-finite")
        if np.max(np.abs(r)) <= tol:
            return float(x[0]) if scalar else x
        j = jv(x)
        try:
            if cond(j) > COND_LIMIT:
                raise SingularJacobian(f"Jacobian condition {cond(j):.3e}")
            step = np.linalg.solve(j, r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from exc
        x = x - step
    r = fv(x)
    if np.max(np.abs(r)) <= tol:
        return float(x[0]) if scalar else x
    raise NoConvergence(f"residual {np.max(np.abs(r)):.3e} > tol {tol:.1e} "
                        f"after {max_iter} iterations")


def fd_jacobian(f, x, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian, used to validate analytic ones."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    out = np.empty((f0.size, x.size))
    for i in range(x.size):
        xp = x.copy(); xp[i] += step
        xm = x.copy(); xm[i] -= step
        out[:, i] = (np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))) / (2 * step)
    return out


def _simpson(fa, fm, fb, h):
    return h / 6.0 * (fa + 4.0 * fm + fb)


def quad_with_error(f, a, b, tol: float = TOL_QUAD, ctx: Context | None = None,
                    max_depth: int = 48, n_panels: int = 16):
    """Adaptive Simpson quadrature; returns (value, accumulated error estimate).

    The interval is pre-split into n_panels before adapting: a lucky
    coincidence of nodes on an oscillatory integrand must not shortcut the
    error test.  Works at the precision of ``ctx`` (hardware double when
    omitted), so the integrand runs on context scalars and raising the
    precision tightens the result below the reported estimate.
    """
    ctx = ctx or Context()
    a = ctx.real(a); b = ctx.real(b)
    if a == b:
        return ctx.real(0.0), 0.0

    def rec(a, fa, m, fm, b, fb, whole, tol, depth):
        lm = (a + m) / 2
        rm = (m + b) / 2
        flm, frm = f(lm), f(rm)
        left = _simpson(fa, flm, fm, m - a)
        right = _simpson(fm, frm, fb, b - m)
        err = abs(left + right - whole) / 15
        if err <= tol or depth >= max_depth:
            if depth >= max_depth and err > tol:
                raise ToleranceNotReached(
                    f"subdivision depth {max_depth} reached with error {float(err):.3e}")
            return left + right + (left + right - whole) / 15, err
        lv, le = rec(a, fa, lm, flm, m, fm, left, tol / 2, depth + 1)
        rv, re_ = rec(m, fm, rm, frm, b, fb, right, tol / 2, depth + 1)
        return lv + rv, le + re_

    total = ctx.real(0.0)
    total_err = ctx.real(0.0)
    nodes = [a + (b - a) * ctx.real(k) / n_panels for k in range(n_panels + 1)]
    f_nodes = [f(x) for x in nodes]
    for k in range(n_panels):
        aa, bb = nodes[k], nodes[k + 1]
        fa, fb = f_nodes[k], f_nodes[k + 1]
        m = (aa + bb) / 2
        fm = f(m)
        whole = _simpson(fa, fm, fb, bb - aa)
        v, e = rec(aa, fa, m, fm, bb, fb, whole, ctx.real(tol) / n_panels, 0)
        total += v
        total_err += e
    return total, total_err


def quad(f, a, b, tol: float = TOL_QUAD, ctx: Context | None = None,
         max_depth: int = 48, n_panels: int = 16):
    """Adaptive quadrature value with estimated error <= tol (see quad_with_error)."""
    val, _ = quad_with_error(f, a, b, tol=tol, ctx=ctx, max_depth=max_depth,
                             n_panels=n_panels)
    return val
