import numpy as np
import pytest

from lupindp import tensor as T
from lupindp.tensor import Tape, Tensor

EPS = 1e-5

# acceptance results, echoed in the terminal summary
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def grad_check(fn, arrays, eps=EPS):
    """Worst relative error between tape gradients and central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor.
    """
    leaves = [Tensor(np.array(a, dtype=float), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = fn(leaves)
        tape.backward(loss)
    worst = 0.0
    for leaf in leaves:
        numeric = np.zeros_like(leaf.data)
        it = np.nditer(leaf.data, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = leaf.data[i]
            leaf.data[i] = orig + eps
            up = fn(leaves).item()
            leaf.data[i] = orig - eps
            down = fn(leaves).item()
            leaf.data[i] = orig
            numeric[i] = (up - down) / (2 * eps)
        denom = max(np.linalg.norm(numeric), np.linalg.norm(leaf.grad), 1e-8)
        worst = max(worst, np.linalg.norm(numeric - leaf.grad) / denom)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def weighted_sum():
    """Reduce a tensor to a scalar with fixed random weights so every entry matters."""
    cache = {}

    def f(x):
        w = cache.setdefault(x.shape, np.random.default_rng(99).normal(size=x.shape))
        return T.sum(T.mul(x, w))

    return f
