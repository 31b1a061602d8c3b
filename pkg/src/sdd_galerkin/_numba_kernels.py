"""numba versions of the kernels in :mod:`sdd_galerkin.kernels`.

Kept at module level so the on-disk JIT cache is reused across processes.
"""

import numba
import numpy as np

_njit = numba.njit(cache=True, nogil=True)


@_njit
def poly1(coef, u):
    n = u.shape[0]
    m = coef.shape[0]
    out = np.empty(n)
    for i in range(n):
        x = u[i]
        acc = coef[m - 1]
        for c in range(m - 2, -1, -1):
            acc = acc * x + coef[c]
        out[i] = acc
    return out


@_njit
def poly2(coef, u, v):
    n = u.shape[0]
    mu, mv = coef.shape
    out = np.empty(n)
    for i in range(n):
        x = u[i]
        y = v[i]
        acc = 0.0
        for a in range(mu - 1, -1, -1):
            inner = coef[a, mv - 1]
            for b in range(mv - 2, -1, -1):
                inner = inner * y + coef[a, b]
            acc = acc * x + inner
        out[i] = acc
    return out


@_njit
def interp_row(times, states, s):
    i = np.searchsorted(times, s, side="right") - 1
    if i >= times.shape[0] - 1:
        return states[times.shape[0] - 1].copy()
    if s == times[i]:
        return states[i].copy()
    w = (s - times[i]) / (times[i + 1] - times[i])
    k = states.shape[1]
    out = np.empty(k)
    for j in range(k):
        out[j] = states[i, j] + w * (states[i + 1, j] - states[i, j])
    return out


@_njit
def _ipow(x, n):
    out = 1.0
    while n > 0:
        if n & 1:
            out *= x
        x *= x
        n >>= 1
    return out


@_njit
def lq_norms(values, weights, q):
    n, m = values.shape
    out = np.empty(n)
    # integral exponents avoid the scalar libm pow call
    iq = int(q)
    integral = iq == q and iq <= 64
    for r in range(n):
        acc = 0.0
        for i in range(m):
            x = abs(values[r, i])
            acc += weights[i] * (_ipow(x, iq) if integral else x ** q)
        out[r] = acc ** (1.0 / q)
    return out


@_njit
def modal_nonlinear(a, ad, synth, proj, fcoef, gcoef):
    k, m = synth.shape
    u = np.zeros(m)
    v = np.zeros(m)
    for j in range(k):
        aj = a[j]
        bj = ad[j]
        for i in range(m):
            u[i] += aj * synth[j, i]
            v[i] += bj * synth[j, i]
    vals = poly1(fcoef, u) + poly2(gcoef, u, v)
    out = np.zeros(k)
    for j in range(k):
        acc = 0.0
        for i in range(m):
            acc += proj[j, i] * vals[i]
        out[j] = acc
    return out


@_njit
def tridiag_solve(sub, diag, sup, rhs):
    n = diag.shape[0]
    c = np.empty(n)
    d = np.empty(n)
    c[0] = sup[0] / diag[0] if n > 1 else 0.0
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - sub[i - 1] * c[i - 1]
        if i < n - 1:
            c[i] = sup[i] / m
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / m
    x = np.empty(n)
    x[n - 1] = d[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x
