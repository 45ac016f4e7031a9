"""Fixed-step classical Runge-Kutta integration.

The same solver drives both the data generators (plain numpy states) and the
latent ODE (``Tensor`` states).  For tensors, every stage is built from
tape-recorded primitives, so gradients reach the initial state, the
conditioning input and the field parameters by backpropagating through the
unrolled steps.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import _kernels
from . import tensor as T
from .errors import ConfigError, IntegrationError, NonFiniteError
from .tensor import Tensor


def check_grid(times) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size == 0:
        raise ConfigError("time grid must be a nonempty 1-d array")
    if not np.isfinite(times).all():
        raise ConfigError("time grid contains non-finite values")
    if times.size > 1 and not (np.diff(times) > 0).all():
        raise ConfigError("time grid must be strictly increasing")
    return times


def _combine(terms):
    """sum(c * x) for (c, x) pairs; a single tape node for tensors."""
    if isinstance(terms[0][1], Tensor) or any(isinstance(x, Tensor) for _, x in terms):
        return T.lincomb([x for _, x in terms], [c for c, _ in terms])
    out = terms[0][0] * terms[0][1]
    for c, x in terms[1:]:
        out = out + c * x
    return out


def _finite(y):
    data = y.data if isinstance(y, Tensor) else y
    return np.isfinite(data).all()


def rk4_step(field, t, y, h, cond=None):
    k1 = field(t, y, cond)
    k2 = field(t + 0.5 * h, _combine([(1.0, y), (0.5 * h, k1)]), cond)
    k3 = field(t + 0.5 * h, _combine([(1.0, y), (0.5 * h, k2)]), cond)
    k4 = field(t + h, _combine([(1.0, y), (h, k3)]), cond)
    return _combine([(1.0, y), (h / 6, k1), (h / 3, k2), (h / 3, k3), (h / 6, k4)])


def interval_substeps(times, substeps=4, max_step=None):
    """Number of RK4 steps inside each grid interval.

    With ``max_step`` set, an interval of length ``dt`` gets
    ``ceil(dt / max_step)`` steps, so the step size does not depend on which
    other times happen to be on the grid.
    """
    gaps = np.diff(times)
    if max_step is None:
        if int(substeps) != substeps or substeps < 1:
            raise ConfigError(f"substeps must be a positive integer, got {substeps}")
        return np.full(gaps.shape, int(substeps))
    if not max_step > 0:
        raise ConfigError(f"max_step must be positive, got {max_step}")
    return np.maximum(1, np.ceil(gaps / max_step - 1e-9)).astype(int)


def rk4_solve(field, y0, times, substeps=4, cond=None, max_step=None):
    """Integrate ``dy/dt = field(t, y, cond)`` and return the state at each time.

    ``substeps`` uniform RK4 steps are taken inside every grid interval (or
    enough steps to respect ``max_step``).  The result is a list whose first
    entry is ``y0`` itself.
    """
    times = check_grid(times)
    counts = interval_substeps(times, substeps, max_step)
    if not _finite(y0):
        raise IntegrationError("initial state is not finite", time=float(times[0]))
    out = [y0]
    y = y0
    for t0, t1, n in zip(times[:-1], times[1:], counts):
        h = (t1 - t0) / n
        for j in range(n):
            t = t0 + j * h
            try:
                y = rk4_step(field, t, y, h, cond)
            except NonFiniteError as exc:
                raise IntegrationError(f"non-finite state near t={t:.6g}: {exc}", time=t) from exc
            if not _finite(y):
                raise IntegrationError(f"non-finite state near t={t:.6g}", time=t)
        out.append(y)
    return out


def rk4_solve_second_order(accel, x0, v0, times, substeps=10, cond=None):
    """Solve ``x'' = accel(t, x, v, cond)`` by order reduction (state = x ++ v).

    Returns ``(positions, velocities)`` arrays of shape ``(len(times), dim)``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    n = x0.shape[-1]

    def field(t, s, c):
        x, v = s[..., :n], s[..., n:]
        return np.concatenate([v, accel(t, x, v, c)], axis=-1)

    traj = np.stack(rk4_solve(field, np.concatenate([x0, v0], axis=-1), times, substeps, cond))
    return traj[..., :n], traj[..., n:]


def _act(kind, a):
    return np.maximum(a, 0.0) if kind == "relu" else np.logaddexp(0.0, a)


def _act_grad(kind, a):
    return (a > 0).astype(np.float64) if kind == "relu" else expit(a)


def _forward_numpy(y0, base, w_y, w_t, ws, bs, times, counts, activation):
    """Reference forward pass for any depth; same outputs as the compiled kernel."""
    n_hidden = len(ws) - 1
    stage_y, stage_t, pre = [], [], [[] for _ in range(n_hidden)]

    def field(t, y):
        stage_y.append(y)
        stage_t.append(t)
        a = y @ w_y + base + t * w_t
        for i in range(1, n_hidden + 1):
            pre[i - 1].append(a)
            a = _act(activation, a) @ ws[i] + bs[i]
        return a

    y = y0
    out = [y]
    steps = []
    for t0, t1, n in zip(times[:-1], times[1:], counts):
        h = (t1 - t0) / n
        for j in range(n):
            t = t0 + j * h
            k1 = field(t, y)
            k2 = field(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = field(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = field(t + h, y + h * k3)
            y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            steps.append(h)
            if not np.isfinite(y).all():
                return None, None, None, None, None, t
        out.append(y)
    return np.stack(out, axis=1), np.stack(stage_y), np.asarray(stage_t), [np.stack(a) for a in pre], np.asarray(steps), None


def _backward_numpy(g, w_y, ws, pre, steps, counts, activation):
    """Adjoint of :func:`_forward_numpy`: per-stage output adjoints and d(loss)/d(y0)."""
    n_hidden = len(ws) - 1
    n_stages = pre[0].shape[0]
    b_ = g.shape[0]
    deltas = [np.empty((n_stages, b_, w.shape[1])) for w in ws]
    adj = g[:, -1].copy()
    step = len(steps)
    for gi in range(g.shape[1] - 2, -1, -1):
        for _ in range(counts[gi]):
            step -= 1
            h = steps[step]
            s = 4 * step
            kbar = [h / 6 * adj, h / 3 * adj, h / 3 * adj, h / 6 * adj]
            ybar = adj.copy()
            for stage in (3, 2, 1, 0):
                gk = kbar[stage]
                deltas[-1][s + stage] = gk
                for i in range(n_hidden, 0, -1):
                    gk = (gk @ ws[i].T) * _act_grad(activation, pre[i - 1][s + stage])
                    deltas[i - 1][s + stage] = gk
                gy = gk @ w_y.T
                ybar = ybar + gy
                if stage:
                    kbar[stage - 1] = kbar[stage - 1] + (h if stage == 3 else 0.5 * h) * gy
            adj = ybar
        adj = adj + g[:, gi]
    return deltas, adj


def _use_kernels(ws, activation):
    return _kernels.AVAILABLE and len(ws) == 3 and activation in ("relu", "softplus")


def rk4_solve_mlp(layers, activation, y0, cond, times, substeps=4, max_step=None, compiled=None):
    """RK4 solve of ``dy/dt = mlp([y, cond, t])`` as a single tape node.

    ``layers`` are ``(weight, bias)`` Tensor pairs whose first weight has
    ``dim(y) + dim(cond) + 1`` rows.  Returns the states at every grid time
    stacked into a ``(B, len(times), dim(y))`` Tensor.  The result and its
    gradients equal those of :func:`rk4_solve` with the same field; the
    backward pass is the exact adjoint of the discrete steps, written out by
    hand because recording every stage on the tape dominates training time.
    Three-layer fields run through compiled loops when numba is installed
    (``compiled=False`` forces the numpy path).
    """
    y0, cond = T.as_tensor(y0), T.as_tensor(cond)
    times = check_grid(times)
    counts = interval_substeps(times, substeps, max_step)
    ws = [w.data for w, _ in layers]
    bs = [b.data for _, b in layers]
    d = y0.shape[1]
    dc = cond.shape[1]
    if ws[0].shape[0] != d + dc + 1 or ws[-1].shape[1] != d:
        raise ConfigError(f"field network {ws[0].shape[0]}->{ws[-1].shape[1]} does not fit state {d} + cond {dc} + 1")
    if not np.isfinite(y0.data).all():
        raise IntegrationError("initial state is not finite", time=float(times[0]))
    w_y, w_c, w_t = ws[0][:d], ws[0][d : d + dc], ws[0][d + dc]
    base = cond.data @ w_c + bs[0]
    fast = _use_kernels(ws, activation) if compiled is None else (compiled and _use_kernels(ws, activation))

    if fast:
        kind = _kernels.RELU if activation == "relu" else _kernels.SOFTPLUS
        c = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
        wts = (c(w_y), c(w_t), c(ws[1]), c(bs[1]), c(ws[2]), c(bs[2]))
        result, stage_y, stage_t, a1, a2, steps, bad = _kernels.forward(
            c(y0.data), c(base), *wts, times, counts.astype(np.int64), kind
        )
        pre = [a1, a2]
        if not np.isnan(bad):
            raise IntegrationError(f"non-finite state near t={bad:.6g}", time=float(bad))
    else:
        result, stage_y, stage_t, pre, steps, bad = _forward_numpy(y0.data, base, w_y, w_t, ws, bs, times, counts, activation)
        if result is None:
            raise IntegrationError(f"non-finite state near t={bad:.6g}", time=float(bad))

    def bw(g):
        g = np.ascontiguousarray(g)
        if fast:
            d1, d2, d3, adj = _kernels.backward(g, wts[0], wts[2], wts[4], pre[0], pre[1], steps, counts.astype(np.int64), kind)
            deltas = [d1, d2, d3]
        else:
            deltas, adj = _backward_numpy(g, w_y, ws, pre, steps, counts, activation)
        # parameter gradients are a few large contractions over all stages
        d1 = deltas[0]
        d1_sum = d1.sum(axis=0)
        grads = [
            np.concatenate(
                [
                    np.einsum("sbi,sbj->ij", stage_y, d1),
                    cond.data.T @ d1_sum,
                    np.einsum("s,sbj->j", stage_t, d1)[None],
                ]
            ),
            d1_sum.sum(axis=0),
        ]
        for i in range(1, len(ws)):
            grads.append(np.einsum("sbi,sbj->ij", _act(activation, pre[i - 1]), deltas[i]))
            grads.append(deltas[i].sum(axis=(0, 1)))
        return (adj, d1_sum @ w_c.T, *grads)

    inputs = (y0, cond) + tuple(p for layer in layers for p in layer)
    return T._out(result, inputs, bw, "rk4_solve_mlp")
