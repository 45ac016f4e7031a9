import numpy as np
import pytest

from lupindp import _kernels
from lupindp import tensor as T
from lupindp.errors import ConfigError, IntegrationError
from lupindp.nn import Mlp
from lupindp.odeint import rk4_solve, rk4_solve_mlp
from lupindp.tensor import Tape, Tensor

from conftest import grad_check

D, C = 3, 2


def _net(seed, activation="relu", depth=3):
    sizes = [D + C + 1] + [6] * (depth - 1) + [D]
    return Mlp(sizes, activation, np.random.default_rng(seed))


def _reference(net, y0, cond, times, max_step, substeps=4):
    def field(t, y, c):
        return net.forward_unfused(T.concat([y, c, Tensor(np.full((y.shape[0], 1), t))], axis=1))

    return T.stack(rk4_solve(field, y0, times, cond=cond, substeps=substeps, max_step=max_step), axis=1)


PATHS = [False] + ([True] if _kernels.AVAILABLE else [])


@pytest.mark.parametrize("compiled", PATHS)
@pytest.mark.parametrize("activation", ["relu", "softplus"])
def test_matches_generic_solver(compiled, activation, rng):
    net = _net(0, activation)
    y0, cond = rng.normal(size=(4, D)), rng.normal(size=(4, C))
    times = np.array([0.0, 0.3, 0.35, 1.2])
    w = rng.normal(size=(4, 4, D))
    leaves = {}
    for kind in ("fused", "ref"):
        a, c = Tensor(y0.copy(), requires_grad=True), Tensor(cond.copy(), requires_grad=True)
        for p in net.parameters():
            p.grad = None
        with Tape() as tape:
            if kind == "fused":
                out = rk4_solve_mlp(net.layers, activation, a, c, times, max_step=0.1, compiled=compiled)
            else:
                out = _reference(net, a, c, times, 0.1)
            tape.backward(T.sum(T.mul(out, w)))
        leaves[kind] = (out.data, a.grad, c.grad, [p.grad.copy() for p in net.parameters()])
    f, r = leaves["fused"], leaves["ref"]
    for x, y in zip(f[:3], r[:3]):
        np.testing.assert_allclose(x, y, atol=1e-12)
    for x, y in zip(f[3], r[3]):
        np.testing.assert_allclose(x, y, atol=1e-12)


def test_other_depths_use_fallback(rng):
    net = _net(1, depth=2)
    y0, cond = rng.normal(size=(2, D)), rng.normal(size=(2, C))
    times = np.linspace(0, 1, 4)
    fused = rk4_solve_mlp(net.layers, "relu", y0, cond, times, substeps=3).data
    ref = _reference(net, Tensor(y0), Tensor(cond), times, None, substeps=3).data
    np.testing.assert_allclose(fused, ref, atol=1e-12)


def test_gradient_finite_differences(rng):
    net = _net(2, "softplus")
    times = np.array([0.0, 0.5, 1.0])

    def fn(t):
        out = rk4_solve_mlp(net.layers, "softplus", t[0], t[1], times, substeps=2)
        return T.sum(T.mul(out, out))

    assert grad_check(fn, [rng.normal(size=(2, D)), rng.normal(size=(2, C))]) < 1e-4


def test_errors(rng):
    net = _net(3)
    with pytest.raises(ConfigError):
        rk4_solve_mlp(net.layers, "relu", rng.normal(size=(2, D + 1)), rng.normal(size=(2, C)), np.linspace(0, 1, 3))
    big = _net(4)
    for w, b in big.layers:
        w.data = np.abs(w.data) * 1000
    with pytest.raises(IntegrationError), np.errstate(all="ignore"):
        rk4_solve_mlp(big.layers, "relu", np.ones((1, D)), np.ones((1, C)), np.linspace(0, 10, 3), substeps=50)
