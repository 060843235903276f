"""Arnold's coupled-pendulum Hamiltonian, its splitting flow, and the section map.

The Hamiltonian on T^3 x R^3:

    H(theta, r) = (r1^2 + r2^2)/2 + r3 + eps*(cos th1 - 1)
                  + eps*mu*(cos th1 - 1)*(cos th2 + sin th3)

splits as A(r) + B(theta) with A = (r1^2+r2^2)/2 + r3 and
B = eps*(cos th1 - 1)*(1 + mu*(cos th2 + sin th3)).  Both split maps are exact
shears, so every composed step is symplectic to roundoff.  Because dH/dr3 = 1,
the stroboscopic section {th3 = 0} returns in time exactly 2*pi; the section
map F is the time-2*pi flow read in (th1, r1, th2, r2).

On the invariant manifold N = {th1 = 0, r1 = 0} the angle kicks vanish
identically (sin 0 = 0, cos 0 - 1 = 0 in IEEE arithmetic), so F restricted to
N is the exact shear (th2, r2) -> (th2 + 2*pi*r2, r2) for every mu.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .numerics import Context

TWO_PI = 2.0 * np.pi

# 4-d symplectic form in (th1, r1, th2, r2) ordering
J_SYMPL = np.array([[0.0, 1.0, 0.0, 0.0],
                    [-1.0, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 1.0],
                    [0.0, 0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class ModelParams:
    """Run parameters: hyperbolicity eps > 0, coupling mu >= 0, step dt = 2*pi/2^k."""

    epsilon: float
    mu: float = 0.0
    dt_log2: int = 11
    order: int = 4

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.mu < 0:
            raise ConfigError("mu must be nonnegative")
        if self.order not in (2, 4):
            raise ConfigError("integrator order must be 2 or 4")
        if not (1 <= self.dt_log2 <= 20):
            raise ConfigError("dt_log2 out of range [1, 20]")

    @property
    def nsteps(self) -> int:
        return 1 << self.dt_log2

    @property
    def dt(self) -> float:
        return TWO_PI / self.nsteps


@dataclass(frozen=True)
class PhasePoint:
    theta: tuple  # (th1, th2, th3), stored mod 2*pi
    r: tuple      # (r1, r2, r3)

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) % TWO_PI for t in self.theta))
        object.__setattr__(self, "r", tuple(float(x) for x in self.r))


@dataclass(frozen=True)
class SectionPoint:
    """Point of the stroboscopic section {th3 = 0} in (th1, r1, th2, r2)."""

    theta1: float
    r1: float
    theta2: float
    r2: float

    def __post_init__(self):
        object.__setattr__(self, "theta1", float(self.theta1) % TWO_PI)
        object.__setattr__(self, "theta2", float(self.theta2) % TWO_PI)
        object.__setattr__(self, "r1", float(self.r1))
        object.__setattr__(self, "r2", float(self.r2))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.r1, self.theta2, self.r2])

    @staticmethod
    def from_array(a) -> "SectionPoint":
        return SectionPoint(a[0], a[1], a[2], a[3])


def hamiltonian(p: PhasePoint, params: ModelParams) -> float:
    th1, th2, th3 = p.theta
    r1, r2, r3 = p.r
    pend = np.cos(th1) - 1.0
    return (0.5 * (r1 * r1 + r2 * r2) + r3 + params.epsilon * pend
            + params.epsilon * params.mu * pend * (np.cos(th2) + np.sin(th3)))


def hamiltonian_section(state, params: ModelParams, theta3: float = 0.0):
    """H on section states (..., 4) with r3 = 0 and the given th3."""
    s = np.asarray(state, dtype=float)
    pend = np.cos(s[..., 0]) - 1.0
    return (0.5 * (s[..., 1] ** 2 + s[..., 3] ** 2) + params.epsilon * pend
            + params.epsilon * params.mu * pend * (np.cos(s[..., 2]) + np.sin(theta3)))


_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_W0 = 1.0 - 2.0 * _W1


@lru_cache(maxsize=32)
def _substeps(order: int, nsteps: int):
    """Merged kick/drift schedule for nsteps composed steps of unit total time.

    Returns a tuple of ('K', c) / ('D', c) pairs with coefficients in units of
    the base step h; adjacent kicks across step boundaries are merged.
    """
    if order == 2:
        drifts = [1.0]
        inner_kicks = []
        boundary = 0.5
    else:
        drifts = [_W1, _W0, _W1]
        inner_kicks = [(_W1 + _W0) / 2.0, (_W1 + _W0) / 2.0]
        boundary = _W1 / 2.0
    ops = [("K", boundary)]
    for step in range(nsteps):
        for i, d in enumerate(drifts):
            ops.append(("D", d))
            if i < len(inner_kicks):
                ops.append(("K", inner_kicks[i]))
        if step < nsteps - 1:
            ops.append(("K", 2.0 * boundary))
        else:
            ops.append(("K", boundary))
    return tuple(ops)


def _kick_arrays(state, h, tau, eps, mu):
    th1 = state[:, 0]; th2 = state[:, 2]
    s1 = np.sin(th1); c1 = np.cos(th1)
    if mu != 0.0:
        s2 = np.sin(th2); c2 = np.cos(th2)
        f = 1.0 + mu * (c2 + np.sin(tau))
        state[:, 1] += h * eps * s1 * f
        state[:, 3] += h * eps * mu * (c1 - 1.0) * s2
    else:
        state[:, 1] += h * eps * s1


def _kick_tangent_arrays(state, jac, h, tau, eps, mu):
    th1 = state[:, 0]; th2 = state[:, 2]
    s1 = np.sin(th1); c1 = np.cos(th1)
    if mu != 0.0:
        s2 = np.sin(th2); c2 = np.cos(th2)
        st = np.sin(tau)
        f = 1.0 + mu * (c2 + st)
        a = h * eps * c1 * f
        b = -h * eps * mu * s1 * s2
        c = h * eps * mu * (c1 - 1.0) * c2
        state[:, 1] += h * eps * s1 * f
        state[:, 3] += h * eps * mu * (c1 - 1.0) * s2
        jac[:, 1, :] += a[:, None] * jac[:, 0, :] + b[:, None] * jac[:, 2, :]
        jac[:, 3, :] += b[:, None] * jac[:, 0, :] + c[:, None] * jac[:, 2, :]
    else:
        a = h * eps * c1
        state[:, 1] += h * eps * s1
        jac[:, 1, :] += a[:, None] * jac[:, 0, :]


def section_map_many(states, params: ModelParams, direction: int = 1,
                     reduce_angles: bool = True) -> np.ndarray:
    """Apply F (or F^{-1} for direction=-1) to an (N, 4) array of section states."""
    s = np.array(states, dtype=float)
    single = s.ndim == 1
    if single:
        s = s[None, :]
    h = params.dt * direction
    eps, mu = params.epsilon, params.mu
    tau = 0.0
    for kind, c in _substeps(params.order, params.nsteps):
        if kind == "K":
            _kick_arrays(s, c * h, tau, eps, mu)
        else:
            s[:, 0] += (c * h) * s[:, 1]
            s[:, 2] += (c * h) * s[:, 3]
            tau += c * h
    if reduce_angles:
        s[:, 0] %= TWO_PI
        s[:, 2] %= TWO_PI
    return s[0] if single else s


def section_map_tangent_many(states, params: ModelParams, direction: int = 1,
                             jac0=None, reduce_angles: bool = True):
    """F with the exact tangent map of the discrete integrator, batched."""
    s = np.array(states, dtype=float)
    single = s.ndim == 1
    if single:
        s = s[None, :]
    n = s.shape[0]
    if jac0 is None:
        jac = np.broadcast_to(np.eye(4), (n, 4, 4)).copy()
    else:
        jac = np.array(jac0, dtype=float)
        if jac.ndim == 2:
            jac = jac[None, :, :].copy()
    h = params.dt * direction
    eps, mu = params.epsilon, params.mu
    tau = 0.0
    for kind, c in _substeps(params.order, params.nsteps):
        if kind == "K":
            _kick_tangent_arrays(s, jac, c * h, tau, eps, mu)
        else:
            ch = c * h
            s[:, 0] += ch * s[:, 1]
            s[:, 2] += ch * s[:, 3]
            jac[:, 0, :] += ch * jac[:, 1, :]
            jac[:, 2, :] += ch * jac[:, 3, :]
            tau += ch
    if reduce_angles:
        s[:, 0] %= TWO_PI
        s[:, 2] %= TWO_PI
    if single:
        return s[0], jac[0]
    return s, jac


def n_hyperbolic_blocks(theta2s, r2s, params: ModelParams, direction: int = 1) -> np.ndarray:
    """(th1, r1)-block of DF at base points ON N, batched as (n, 2, 2).

    On N the block closes on itself (the coupling terms carry sin th1 = 0),
    so only the 2x2 frame and the shear angle need propagating; this is the
    hot path of the bundle power iteration.
    """
    th2 = np.array(theta2s, dtype=float, ndmin=1).copy()
    r2 = np.array(r2s, dtype=float, ndmin=1)
    n = th2.size
    jac = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    h = params.dt * direction
    eps, mu = params.epsilon, params.mu
    tau = 0.0
    for kind, c in _substeps(params.order, params.nsteps):
        ch = c * h
        if kind == "K":
            if mu != 0.0:
                a = ch * eps * (1.0 + mu * (np.cos(th2) + np.sin(tau)))
            else:
                a = ch * eps * np.ones(n)
            jac[:, 1, 0] += a * jac[:, 0, 0]
            jac[:, 1, 1] += a * jac[:, 0, 1]
        else:
            th2 += ch * r2
            jac[:, 0, 0] += ch * jac[:, 1, 0]
            jac[:, 0, 1] += ch * jac[:, 1, 1]
            tau += ch
    return jac


def section_map(s: SectionPoint, params: ModelParams) -> SectionPoint:
    """The stroboscopic return map F."""
    return SectionPoint.from_array(section_map_many(s.as_array(), params))


def section_map_with_tangent(s: SectionPoint, params: ModelParams):
    out, jac = section_map_tangent_many(s.as_array(), params)
    return SectionPoint.from_array(out), jac


def flow(p: PhasePoint, t: float, params: ModelParams) -> PhasePoint:
    """Advance a full phase point by time t (a multiple of dt, either sign)."""
    if t == 0.0:
        return p
    nsteps_f = t / params.dt
    nsteps = int(round(nsteps_f))
    if abs(nsteps_f - nsteps) > 1e-9:
        raise ConfigError(f"t = {t} is not a multiple of dt = {params.dt}")
    direction = 1 if nsteps > 0 else -1
    nsteps = abs(nsteps)

    th1, th2, th3 = p.theta
    r1, r2, r3 = p.r
    s = np.array([[th1, r1, th2, r2]])
    h = params.dt * direction
    eps, mu = params.epsilon, params.mu
    tau = th3
    # r3 only sees the kicks; th3 advances with the drifts
    for kind, c in _substeps(params.order, nsteps):
        if kind == "K":
            pend = np.cos(s[0, 0]) - 1.0
            r3 += -(c * h) * eps * mu * pend * np.cos(tau)
            _kick_arrays(s, c * h, tau, eps, mu)
        else:
            s[:, 0] += (c * h) * s[:, 1]
            s[:, 2] += (c * h) * s[:, 3]
            tau += c * h
    return PhasePoint((s[0, 0], s[0, 2], tau), (s[0, 1], s[0, 3], r3))


def symplectic_defect(jac) -> float:
    """max-norm of J^T O J - O, zero for an exactly symplectic tangent map."""
    jac = np.asarray(jac, dtype=float)
    return float(np.max(np.abs(jac.T @ J_SYMPL @ jac - J_SYMPL)))


class MpSectionMap:
    """Scalar section map at elevated precision (independent mpmath context).

    States are 4-tuples of context scalars.  Used for deep ball chains where
    per-step expansion exceeds hardware-double headroom.
    """

    def __init__(self, params: ModelParams, ctx: Context):
        self.params = params
        self.ctx = ctx
        self._ops = _substeps(params.order, params.nsteps)
        self._h = ctx.real(2) * ctx.pi / ctx.real(params.nsteps)
        self._eps = ctx.real(params.epsilon)
        self._mu = ctx.real(params.mu)
        self._two_pi = ctx.real(2) * ctx.pi

    def _reduce(self, angle):
        import math as _math
        k = _math.floor(float(angle / self._two_pi))
        out = angle - self._two_pi * k
        if out < 0:
            out += self._two_pi
        elif out >= self._two_pi:
            out -= self._two_pi
        return out

    def __call__(self, state, direction: int = 1, reduce_angles: bool = True):
        ctx = self.ctx
        th1, r1, th2, r2 = (ctx.real(x) for x in state)
        h = self._h if direction > 0 else -self._h
        eps, mu = self._eps, self._mu
        tau = ctx.real(0)
        for kind, c in self._ops:
            ch = ctx.real(c) * h
            if kind == "K":
                s1 = ctx.sin(th1)
                if mu != 0:
                    f = 1 + mu * (ctx.cos(th2) + ctx.sin(tau))
                    r1 += ch * eps * s1 * f
                    r2 += ch * eps * mu * (ctx.cos(th1) - 1) * ctx.sin(th2)
                else:
                    r1 += ch * eps * s1
            else:
                th1 += ch * r1
                th2 += ch * r2
                tau += ch
        if reduce_angles:
            th1 = self._reduce(th1)
            th2 = self._reduce(th2)
        return (th1, r1, th2, r2)

    def iterate(self, state, n: int, direction: int = 1):
        for _ in range(n):
            state = self(state, direction)
        return state

    def with_tangent(self, state, jac=None, direction: int = 1,
                     reduce_angles: bool = True):
        """One map with 4x4 tangent propagation at context precision.

        jac is a list of 4 lists (rows); defaults to the identity.  Used to
        measure expansion along ball-chain center orbits, where the path is
        only known at elevated precision.
        """
        ctx = self.ctx
        th1, r1, th2, r2 = (ctx.real(x) for x in state)
        one, zero = ctx.real(1), ctx.real(0)
        if jac is None:
            jac = [[one if i == j else zero for j in range(4)] for i in range(4)]
        else:
            jac = [[ctx.real(x) for x in row] for row in jac]
        h = self._h if direction > 0 else -self._h
        eps, mu = self._eps, self._mu
        tau = ctx.real(0)
        for kind, c in self._ops:
            ch = ctx.real(c) * h
            if kind == "K":
                s1 = ctx.sin(th1)
                c1 = ctx.cos(th1)
                if mu != 0:
                    s2 = ctx.sin(th2)
                    c2 = ctx.cos(th2)
                    f = 1 + mu * (c2 + ctx.sin(tau))
                    a = ch * eps * c1 * f
                    b = -ch * eps * mu * s1 * s2
                    cche = ch * eps * mu * (c1 - 1) * c2
                    r1 += ch * eps * s1 * f
                    r2 += ch * eps * mu * (c1 - 1) * s2
                    for j in range(4):
                        jac[1][j] += a * jac[0][j] + b * jac[2][j]
                        jac[3][j] += b * jac[0][j] + cche * jac[2][j]
                else:
                    a = ch * eps * c1
                    r1 += ch * eps * s1
                    for j in range(4):
                        jac[1][j] += a * jac[0][j]
            else:
                th1 += ch * r1
                th2 += ch * r2
                for j in range(4):
                    jac[0][j] += ch * jac[1][j]
                    jac[2][j] += ch * jac[3][j]
                tau += ch
        if reduce_angles:
            th1 = self._reduce(th1)
            th2 = self._reduce(th2)
        return (th1, r1, th2, r2), jac
