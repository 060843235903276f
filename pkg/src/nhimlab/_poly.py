"""Dense 2-variable polynomial helpers on small coefficient matrices.

A polynomial p(A, B) is a (K+1, K+1) array with p[i, j] the coefficient of
A^i B^j; entries of total degree > K are kept at zero.
"""

from __future__ import annotations

import numpy as np


def p_zero(K: int) -> np.ndarray:
    return np.zeros((K + 1, K + 1))


def p_var(K: int, which: int) -> np.ndarray:
    p = p_zero(K)
    if which == 0:
        p[1, 0] = 1.0
    else:
        p[0, 1] = 1.0
    return p


def p_trunc(p: np.ndarray, K: int) -> np.ndarray:
    out = p.copy()
    n = out.shape[0]
    for i in range(n):
        for j in range(n):
            if i + j > K:
                out[i, j] = 0.0
    return out


def p_mul(a: np.ndarray, b: np.ndarray, K: int) -> np.ndarray:
    out = p_zero(K)
    ia, ja = np.nonzero(a)
    for i, j in zip(ia, ja):
        coef = a[i, j]
        imax = K + 1 - i
        jmax = K + 1 - j
        out[i:, j:] += coef * b[:imax, :jmax]
    return p_trunc(out, K)


def p_pow(a: np.ndarray, n: int, K: int) -> np.ndarray:
    out = p_zero(K)
    out[0, 0] = 1.0
    for _ in range(n):
        out = p_mul(out, a, K)
    return out


def p_compose(p: np.ndarray, f: np.ndarray, g: np.ndarray, K: int) -> np.ndarray:
    """p(f(A,B), g(A,B)) truncated to total degree K."""
    deg = p.shape[0] - 1
    f_pows = [None] * (deg + 1)
    g_pows = [None] * (deg + 1)
    f_pows[0] = p_zero(K); f_pows[0][0, 0] = 1.0
    g_pows[0] = f_pows[0]
    for k in range(1, deg + 1):
        f_pows[k] = p_mul(f_pows[k - 1], f, K)
        g_pows[k] = p_mul(g_pows[k - 1], g, K)
    out = p_zero(K)
    ii, jj = np.nonzero(p)
    for i, j in zip(ii, jj):
        out += p[i, j] * p_mul(f_pows[i], g_pows[j], K)
    return p_trunc(out, K)


def p_diff(p: np.ndarray, var: int) -> np.ndarray:
    out = np.zeros_like(p)
    n = p.shape[0]
    if var == 0:
        for i in range(1, n):
            out[i - 1, :] += i * p[i, :]
    else:
        for j in range(1, n):
            out[:, j - 1] += j * p[:, j]
    return out


def p_eval(p: np.ndarray, A, B):
    """Evaluate on (broadcastable) arrays A, B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = p.shape[0]
    A_pows = [np.ones_like(A)]
    B_pows = [np.ones_like(B)]
    for _ in range(n - 1):
        A_pows.append(A_pows[-1] * A)
        B_pows.append(B_pows[-1] * B)
    out = np.zeros(np.broadcast(A, B).shape)
    ii, jj = np.nonzero(p)
    for i, j in zip(ii, jj):
        out += p[i, j] * A_pows[i] * B_pows[j]
    return out


def p_homog(p: np.ndarray, d: int) -> np.ndarray:
    """Homogeneous degree-d part."""
    out = np.zeros_like(p)
    n = p.shape[0]
    for i in range(min(d + 1, n)):
        j = d - i
        if 0 <= j < n:
            out[i, j] = p[i, j]
    return out
