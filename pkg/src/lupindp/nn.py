"""Three-layer MLPs, a shared-trunk Gaussian head and the Adam optimiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

ACTIVATIONS = {"relu": T.relu, "softplus": T.softplus}

SCALE_FLOOR = 0.01


def init_layer(fan_in: int, fan_out: int, rng: np.random.Generator):
    """Weight and bias drawn from U(-sqrt(1/fan_in), sqrt(1/fan_in))."""
    if fan_in < 1 or fan_out < 1:
        raise ConfigError(f"layer widths must be positive, got {fan_in}x{fan_out}")
    bound = np.sqrt(1.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


def positive_scale(raw: Tensor) -> Tensor:
    """Map an unconstrained output to a scale bounded below by ``SCALE_FLOOR``."""
    return T.add(T.softplus(raw), SCALE_FLOOR)


class Mlp:
    """Stack of affine layers with an activation on every hidden layer.

    ``widths`` lists input, hidden and output sizes, so the networks used by
    the model (three layers) take ``[in, h, h, out]``.
    """

    def __init__(self, widths, activation="relu", rng=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2:
            raise ConfigError("an MLP needs at least input and output widths")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        rng = np.random.default_rng() if rng is None else rng
        self.widths = widths
        self.activation = activation
        self.layers = [init_layer(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def out_dim(self):
        return self.widths[-1]

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"MLP expects (*, {self.in_dim}) input, got {x.shape}")
        return T.mlp(x, self.layers, self.activation)

    def forward_unfused(self, x) -> Tensor:
        """Same map built from separate linear and activation nodes."""
        x = T.as_tensor(x)
        act = ACTIVATIONS[self.activation]
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            x = T.linear(x, w, b)
            if i < last:
                x = act(x)
        return x

    def named_parameters(self, prefix=""):
        for i, (w, b) in enumerate(self.layers):
            yield f"{prefix}{i}.weight", w
            yield f"{prefix}{i}.bias", b

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


def mlp_forward(net: Mlp, x) -> Tensor:
    return net(x)


def init_params(widths, rng: np.random.Generator, activation="relu") -> Mlp:
    return Mlp(widths, activation=activation, rng=rng)


class GaussianHeads:
    """Two three-layer MLPs sharing their first two layers.

    Returns ``(mu, sigma)`` with ``sigma`` floored positive.
    """

    def __init__(self, in_dim, hidden, out_dim, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.trunk = Mlp([in_dim, hidden, hidden], "relu", rng)
        self.mu_head = init_layer(hidden, out_dim, rng)
        self.sigma_head = init_layer(hidden, out_dim, rng)

    def __call__(self, x):
        # the trunk's output layer must be activated as well: it is the
        # second hidden layer of both heads
        h = T.relu(self.trunk(x))
        mu = T.linear(h, *self.mu_head)
        sigma = positive_scale(T.linear(h, *self.sigma_head))
        return mu, sigma

    def named_parameters(self, prefix=""):
        yield from self.trunk.named_parameters(prefix + "trunk.")
        yield prefix + "mu.weight", self.mu_head[0]
        yield prefix + "mu.bias", self.mu_head[1]
        yield prefix + "sigma.weight", self.sigma_head[0]
        yield prefix + "sigma.bias", self.sigma_head[1]

    def parameters(self):
        return [p for _, p in self.named_parameters()]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied in place to ``params``.

    ``grads`` entries may be ``None`` (treated as zero).  Parameter arrays
    are rebound rather than mutated so earlier snapshots stay valid.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimiser state disagree in length")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ContractError(f"shape mismatch for parameter {i}: {p.shape} vs {g.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)
