"""Compiled inner loops for RK4 through a two-hidden-layer MLP field.

Only used when numba is importable; :mod:`lupindp.odeint` falls back to a
numpy implementation of the same recurrences otherwise.
"""

from __future__ import annotations

import math

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

RELU, SOFTPLUS = 0, 1


def _jit(fn):
    return numba.njit(cache=True, fastmath=False)(fn) if numba is not None else None


def _act(a, kind):
    if kind == RELU:
        return a if a > 0.0 else 0.0
    if a > 0.0:
        return a + math.log1p(math.exp(-a))
    return math.log1p(math.exp(a))


def _dact(a, kind):
    if kind == RELU:
        return 1.0 if a > 0.0 else 0.0
    if a >= 0.0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


def _eval(y, t, base, wy, wt, w1, b1, w2, b2, kind, s, Y, TT, A1, A2, k):
    """One field evaluation at stage ``s``; caches inputs and pre-activations."""
    B, d = y.shape
    H1 = wy.shape[1]
    H2 = w1.shape[1]
    TT[s] = t
    h1 = np.empty(H1)
    h2 = np.empty(H2)
    for b in range(B):
        for i in range(d):
            Y[s, b, i] = y[b, i]
        for j in range(H1):
            acc = base[b, j] + t * wt[j]
            for i in range(d):
                acc += y[b, i] * wy[i, j]
            A1[s, b, j] = acc
            h1[j] = _act(acc, kind)
        for j in range(H2):
            acc = b1[j]
            for i in range(H1):
                acc += h1[i] * w1[i, j]
            A2[s, b, j] = acc
            h2[j] = _act(acc, kind)
        for j in range(d):
            acc = b2[j]
            for i in range(H2):
                acc += h2[i] * w2[i, j]
            k[b, j] = acc


def _forward(y0, base, wy, wt, w1, b1, w2, b2, times, counts, kind):
    B, d = y0.shape
    n_steps = 0
    for n in counts:
        n_steps += n
    S = 4 * n_steps
    Y = np.empty((S, B, d))
    TT = np.empty(S)
    A1 = np.empty((S, B, wy.shape[1]))
    A2 = np.empty((S, B, w1.shape[1]))
    HS = np.empty(n_steps)
    out = np.empty((B, times.shape[0], d))
    k1 = np.empty((B, d))
    k2 = np.empty((B, d))
    k3 = np.empty((B, d))
    k4 = np.empty((B, d))
    tmp = np.empty((B, d))
    y = y0.copy()
    out[:, 0, :] = y
    step = 0
    for g in range(times.shape[0] - 1):
        n = counts[g]
        h = (times[g + 1] - times[g]) / n
        for j in range(n):
            t = times[g] + j * h
            s = 4 * step
            _eval(y, t, base, wy, wt, w1, b1, w2, b2, kind, s, Y, TT, A1, A2, k1)
            for b in range(B):
                for i in range(d):
                    tmp[b, i] = y[b, i] + 0.5 * h * k1[b, i]
            _eval(tmp, t + 0.5 * h, base, wy, wt, w1, b1, w2, b2, kind, s + 1, Y, TT, A1, A2, k2)
            for b in range(B):
                for i in range(d):
                    tmp[b, i] = y[b, i] + 0.5 * h * k2[b, i]
            _eval(tmp, t + 0.5 * h, base, wy, wt, w1, b1, w2, b2, kind, s + 2, Y, TT, A1, A2, k3)
            for b in range(B):
                for i in range(d):
                    tmp[b, i] = y[b, i] + h * k3[b, i]
            _eval(tmp, t + h, base, wy, wt, w1, b1, w2, b2, kind, s + 3, Y, TT, A1, A2, k4)
            finite = True
            for b in range(B):
                for i in range(d):
                    v = y[b, i] + (h / 6) * (k1[b, i] + 2 * k2[b, i] + 2 * k3[b, i] + k4[b, i])
                    y[b, i] = v
                    if not math.isfinite(v):
                        finite = False
            HS[step] = h
            step += 1
            if not finite:
                return out, Y, TT, A1, A2, HS, t
        out[:, g + 1, :] = y
    return out, Y, TT, A1, A2, HS, np.nan


def _stage_back(kbar, s, wy, w1, w2, A1, A2, kind, D1, D2, D3, gy):
    B, d = kbar.shape
    H1 = wy.shape[1]
    H2 = w1.shape[1]
    for b in range(B):
        for j in range(d):
            D3[s, b, j] = kbar[b, j]
        for i in range(H2):
            acc = 0.0
            for j in range(d):
                acc += kbar[b, j] * w2[i, j]
            D2[s, b, i] = acc * _dact(A2[s, b, i], kind)
        for i in range(H1):
            acc = 0.0
            for j in range(H2):
                acc += D2[s, b, j] * w1[i, j]
            D1[s, b, i] = acc * _dact(A1[s, b, i], kind)
        for i in range(d):
            acc = 0.0
            for j in range(H1):
                acc += D1[s, b, j] * wy[i, j]
            gy[b, i] = acc


def _backward(g, wy, w1, w2, A1, A2, HS, counts, kind):
    B, G, d = g.shape
    S = A1.shape[0]
    D1 = np.empty_like(A1)
    D2 = np.empty_like(A2)
    D3 = np.empty((S, B, d))
    adj = g[:, G - 1, :].copy()
    ybar = np.empty((B, d))
    kb = np.empty((4, B, d))
    gy = np.empty((B, d))
    step = HS.shape[0]
    for gi in range(G - 2, -1, -1):
        for _ in range(counts[gi]):
            step -= 1
            h = HS[step]
            s = 4 * step
            for b in range(B):
                for i in range(d):
                    a = adj[b, i]
                    ybar[b, i] = a
                    kb[0, b, i] = h / 6 * a
                    kb[1, b, i] = h / 3 * a
                    kb[2, b, i] = h / 3 * a
                    kb[3, b, i] = h / 6 * a
            for stage in range(3, -1, -1):
                _stage_back(kb[stage], s + stage, wy, w1, w2, A1, A2, kind, D1, D2, D3, gy)
                coef = h if stage == 3 else 0.5 * h
                for b in range(B):
                    for i in range(d):
                        ybar[b, i] += gy[b, i]
                        if stage > 0:
                            kb[stage - 1, b, i] += coef * gy[b, i]
            for b in range(B):
                for i in range(d):
                    adj[b, i] = ybar[b, i]
        for b in range(B):
            for i in range(d):
                adj[b, i] += g[b, gi, i]
    return D1, D2, D3, adj


if numba is not None:
    _act = _jit(_act)
    _dact = _jit(_dact)
    _eval = _jit(_eval)
    _stage_back = _jit(_stage_back)
    forward = _jit(_forward)
    backward = _jit(_backward)
    AVAILABLE = True
else:  # pragma: no cover
    forward = backward = None
    AVAILABLE = False
