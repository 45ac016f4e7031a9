"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Computation is define-by-run: operations executed inside an active
:class:`Tape` are recorded in order, and :meth:`Tape.backward` replays them
in exact reverse order.  Outside a tape, operations just compute values,
which is what evaluation code relies on for speed.

    >>> x = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = x * x
    ...     tape.backward(loss)
    >>> float(x.grad)
    6.0
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, DomainError, NonFiniteError

__all__ = [
    "Tensor",
    "Tape",
    "LatentDistribution",
    "as_tensor",
    "backward",
    "matmul",
    "linear",
    "mlp",
    "add",
    "sub",
    "mul",
    "neg",
    "relu",
    "softplus",
    "exp",
    "log",
    "elementwise",
    "reduce",
    "sum",
    "mean",
    "logsumexp",
    "concat",
    "stack",
    "reshape",
    "take",
    "lincomb",
    "gaussian_log_pdf",
    "kl_diag_gaussians",
    "reparameterized_sample",
]

DTYPE = np.float64
LOG_2PI = math.log(2.0 * math.pi)

_TAPES: list["Tape"] = []


class Tensor:
    """Dense n-dimensional float64 value with an optional gradient.

    Leaf tensors are created directly; every other tensor is the output of a
    primitive.  ``grad`` is allocated lazily by the backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "_tape", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=DTYPE)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"tensor {name or ''} initialised with non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._tape = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._tape is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


@dataclass
class LatentDistribution:
    """Diagonal Gaussian over the global latent variable."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise DimensionError(f"mu {self.mu.shape} and sigma {self.sigma.shape} differ")


class _Node:
    __slots__ = ("out", "inputs", "backward", "op")

    def __init__(self, out, inputs, backward, op):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.op = op


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; nesting is allowed and the innermost tape is
    the one that records.  A tape can be differentiated once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, backward_fn, op):
        out._tape = self
        self.nodes.append(_Node(out, inputs, backward_fn, op))

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf on the tape.

        Leaves recorded on the tape but not reachable from ``loss`` receive an
        exact zero gradient.
        """
        if self.consumed:
            raise ContractError("backward already called on this tape")
        if loss.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")
        self.consumed = True
        loss.grad = np.ones_like(loss.data)
        leaves = {}
        for node in reversed(self.nodes):
            g = node.out.grad
            for inp in node.inputs:
                if inp.requires_grad and inp._tape is None:
                    leaves[id(inp)] = inp
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=DTYPE).reshape(inp.shape)
                else:
                    inp.grad = inp.grad + gi
        for leaf in leaves.values():
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


def backward(loss: Tensor):
    """Run the backward pass of the tape that recorded ``loss``."""
    if loss._tape is None:
        raise ContractError("loss is not the output of a recorded operation")
    loss._tape.backward(loss)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _out(data, inputs, backward_fn, op):
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._tape = None
    out.name = None
    tape = _TAPES[-1] if _TAPES else None
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward_fn, op)
    else:
        out.requires_grad = False
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are incompatible") from None


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-d tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _out(ad @ bd, (a, b), bw, "matmul")


def linear(x, w, b) -> Tensor:
    """Affine map ``x @ w + b`` for 2-d ``x``; one tape node."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"linear: input {x.shape}, weight {w.shape}, bias {b.shape}")
    xd, wd = x.data, w.data

    def bw(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return _out(xd @ wd + b.data, (x, w, b), bw, "linear")


def mlp(x, layers, activation="relu") -> Tensor:
    """Feed-forward stack ``x -> act(x W1 + b1) -> ... -> x Wn + bn`` as one node.

    Numerically identical to chaining :func:`linear` and the activation; it
    exists because one node per network keeps the unrolled ODE graph small.
    """
    x = as_tensor(x)
    if activation not in ("relu", "softplus"):
        raise ValueError(f"unknown activation {activation!r}")
    ws = [w.data for w, _ in layers]
    if x.ndim != 2 or x.shape[1] != ws[0].shape[0]:
        raise DimensionError(f"mlp: input {x.shape} does not match first layer {ws[0].shape}")
    inputs = [x]
    pre = []
    acts = [x.data]
    h = x.data
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        inputs += [w, b]
        a = h @ w.data + b.data
        if i < last:
            pre.append(a)
            h = np.maximum(a, 0.0) if activation == "relu" else np.logaddexp(0.0, a)
            acts.append(h)
        else:
            h = a

    def bw(g):
        grads = [None] * len(inputs)
        for i in range(last, -1, -1):
            if i < last:
                a = pre[i]
                g = g * (a > 0) if activation == "relu" else g * expit(a)
            grads[1 + 2 * i] = acts[i].T @ g
            grads[2 + 2 * i] = g.sum(axis=0)
            g = g @ ws[i].T
        grads[0] = g
        return grads

    return _out(h, tuple(inputs), bw, "mlp")


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _out(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _out(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _out(ad * bd, (a, b), bw, "mul")


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _out(-x.data, (x,), lambda g: (-g,), "negate")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _out(np.where(mask, x.data, 0.0), (x,), bw, "relu")


def softplus(x) -> Tensor:
    """log(1 + exp(x)), evaluated as logaddexp(0, x) so large x cannot overflow."""
    x = as_tensor(x)
    xd = x.data

    def bw(g):
        return (g * expit(xd),)

    return _out(np.logaddexp(0.0, xd), (x,), bw, "softplus")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)

    def bw(g):
        return (g * out,)

    return _out(out, (x,), bw, "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if not (xd > 0).all():
        raise DomainError("log of non-positive value")

    def bw(g):
        return (g / xd,)

    return _out(np.log(xd), (x,), bw, "log")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "negate": neg,
    "relu": relu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
}


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch by name to one of the pointwise primitives."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*operands)


def lincomb(tensors, coeffs) -> Tensor:
    """Linear combination ``sum(c * t)`` of equally shaped tensors as one node."""
    tensors = [as_tensor(t) for t in tensors]
    coeffs = [float(c) for c in coeffs]
    if len(tensors) != len(coeffs) or not tensors:
        raise DimensionError("lincomb needs one coefficient per tensor")
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise DimensionError("lincomb operands must share a shape")
    out = coeffs[0] * tensors[0].data
    for c, t in zip(coeffs[1:], tensors[1:]):
        out = out + c * t.data

    def bw(g):
        return tuple(c * g for c in coeffs)

    return _out(out, tuple(tensors), bw, "lincomb")


# -- reductions ------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise DimensionError(f"axis {a} out of range for {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(out)


def _restore(r, axes, keepdims):
    return r if keepdims else np.squeeze(r, axis=axes)


def reduce(kind: str, x, axis=None, mask=None, keepdims=False) -> Tensor:
    """Reduce ``x`` along ``axis`` with ``kind`` in {sum, mean, logsumexp}.

    ``mask`` (broadcastable to ``x``, entries 0 or 1) excludes padded
    entries, which is how ragged sets are batched.
    """
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    xd = x.data
    if any(xd.shape[a] == 0 for a in axes):
        raise DomainError(f"{kind} over an empty axis")
    m = None if mask is None else np.broadcast_to(np.asarray(mask, dtype=DTYPE), xd.shape)

    if kind == "sum":
        v = xd if m is None else xd * m
        res = v.sum(axis=axes, keepdims=True)

        def bw(g):
            g = np.broadcast_to(g.reshape(res.shape), xd.shape)
            return (g if m is None else g * m,)

    elif kind == "mean":
        if m is None:
            count = np.prod([xd.shape[a] for a in axes])
            res = xd.sum(axis=axes, keepdims=True) / count
        else:
            count = m.sum(axis=axes, keepdims=True)
            if (count == 0).any():
                raise DomainError("mean over a fully masked axis")
            res = (xd * m).sum(axis=axes, keepdims=True) / count

        def bw(g):
            g = np.broadcast_to(g.reshape(res.shape) / count, xd.shape)
            return (g if m is None else g * m,)

    elif kind == "logsumexp":
        if m is None:
            mx = xd.max(axis=axes, keepdims=True)
            w = np.exp(xd - mx)
        else:
            if (m.sum(axis=axes, keepdims=True) == 0).any():
                raise DomainError("logsumexp over a fully masked axis")
            mx = np.where(m > 0, xd, -np.inf).max(axis=axes, keepdims=True)
            w = np.exp(np.where(m > 0, xd - mx, -np.inf))
        s = w.sum(axis=axes, keepdims=True)
        res = mx + np.log(s)
        soft = w / s

        def bw(g):
            return (g.reshape(res.shape) * soft,)

    else:
        raise ValueError(f"unknown reduction {kind!r}")

    return _out(_restore(res, axes, keepdims), (x,), bw, kind)


def sum(x, axis=None, mask=None, keepdims=False) -> Tensor:  # noqa: A001
    return reduce("sum", x, axis, mask, keepdims)


def mean(x, axis=None, mask=None, keepdims=False) -> Tensor:
    return reduce("mean", x, axis, mask, keepdims)


def logsumexp(x, axis=None, mask=None, keepdims=False) -> Tensor:
    return reduce("logsumexp", x, axis, mask, keepdims)


# -- structural ------------------------------------------------------------


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])
    lead = (slice(None),) * ax

    def bw(g):
        return tuple(g[lead + (slice(a, b),)] for a, b in zip(bounds[:-1], bounds[1:]))

    return _out(out, tuple(tensors), bw, "concat")


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _out(out, tuple(tensors), bw, "stack")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {exc}") from None
    return _out(out, (x,), lambda g: (g.reshape(src),), "reshape")


def take(x, index) -> Tensor:
    """``x[index]`` for basic or integer-array indices."""
    x = as_tensor(x)
    xd = x.data
    out = xd[index]
    if not isinstance(out, np.ndarray):
        out = np.array(out)

    def bw(g):
        full = np.zeros_like(xd)
        np.add.at(full, index, g)
        return (full,)

    return _out(np.array(out, dtype=DTYPE), (x,), bw, "take")


# -- probabilistic ---------------------------------------------------------


def gaussian_log_pdf(y, mu, sigma, weight=None) -> Tensor:
    """Sum of log N(y; mu, sigma^2) over all elements.

    ``weight`` (broadcastable, typically a 0/1 target mask) scales each
    element's contribution.
    """
    y, mu, sigma = as_tensor(y), as_tensor(mu), as_tensor(sigma)
    if not (y.shape == mu.shape == sigma.shape):
        raise DimensionError(f"gaussian_log_pdf: shapes {y.shape}, {mu.shape}, {sigma.shape}")
    s = sigma.data
    if not (s > 0).all():
        raise DomainError("gaussian_log_pdf: sigma must be strictly positive")
    w = 1.0 if weight is None else np.broadcast_to(np.asarray(weight, dtype=DTYPE), s.shape)
    r = (y.data - mu.data) / s
    terms = -0.5 * LOG_2PI - np.log(s) - 0.5 * r * r
    total = np.array(np.sum(w * terms))

    def bw(g):
        d_mu = g * w * r / s
        d_sigma = g * w * (r * r - 1.0) / s
        return -d_mu, d_mu, d_sigma

    return _out(total, (y, mu, sigma), bw, "gaussian_log_pdf")


def kl_diag_gaussians(q: LatentDistribution, p: LatentDistribution) -> Tensor:
    """KL(q || p) between diagonal Gaussians, summed over every element."""
    if q.mu.shape != p.mu.shape:
        raise DimensionError(f"kl: latent shapes {q.mu.shape} and {p.mu.shape} differ")
    sq, sp = q.sigma.data, p.sigma.data
    if not ((sq > 0).all() and (sp > 0).all()):
        raise DomainError("kl: scales must be strictly positive")
    d = q.mu.data - p.mu.data
    sp2 = sp * sp
    num = sq * sq + d * d
    total = np.array(np.sum(np.log(sp) - np.log(sq) + num / (2.0 * sp2) - 0.5))

    def bw(g):
        return (
            g * d / sp2,
            g * (sq / sp2 - 1.0 / sq),
            -g * d / sp2,
            g * (1.0 / sp - num / (sp2 * sp)),
        )

    return _out(total, (q.mu, q.sigma, p.mu, p.sigma), bw, "kl_diag_gaussians")


def reparameterized_sample(dist: LatentDistribution, rng: np.random.Generator) -> Tensor:
    """z = mu + sigma * eps with eps ~ N(0, I); differentiable in mu and sigma."""
    if (dist.sigma.data < 0).any():
        raise DomainError("sample: negative scale")
    eps = rng.standard_normal(dist.mu.shape)
    return add(dist.mu, mul(dist.sigma, eps))
