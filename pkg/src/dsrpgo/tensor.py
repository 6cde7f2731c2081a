"""Dense float64 tensors with reverse-mode automatic differentiation.

Every array that flows through the models is a ``Tensor`` wrapping a numpy
float64 array.  Operations on tensors record a backward closure when any
input has ``requires_grad`` set, so calling ``backward()`` on a scalar loss
fills in ``grad`` for every reachable leaf.  A finite-difference checker
(``grad_check``) validates the analytic gradients of arbitrary compositions.
"""

from __future__ import annotations

import math

import numpy as np


class TensorOpError(ValueError):
    """Raised when an operation gets incompatible shapes or invalid domains."""

    def __init__(self, op, message):
        self.op = op
        super().__init__(f"{op}: {message}")


_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph construction (pure evaluation)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.op = op

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def wrap(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- graph ----------------------------------------------------------------

    def backward(self):
        """Reverse-accumulate d(self)/d(leaf) into every requires_grad leaf."""
        if self.size != 1:
            raise TensorOpError("backward", f"loss must be scalar, got shape {self.shape}")
        topo, seen = [], set()

        def visit(node):
            stack = [(node, iter(node._parents))]
            seen.add(id(node))
            while stack:
                cur, it = stack[-1]
                advanced = False
                for p in it:
                    if id(p) not in seen:
                        seen.add(id(p))
                        stack.append((p, iter(p._parents)))
                        advanced = True
                        break
                if not advanced:
                    topo.append(cur)
                    stack.pop()

        visit(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    def zero_grad(self):
        self.grad = None

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _make(data, parents, backward, op):
    if _GRAD_ENABLED and any(p.requires_grad or p._backward is not None for p in parents):
        return Tensor(data, requires_grad=False, parents=parents, backward=backward, op=op)
    return Tensor(data, op=op)


def _require_finite(op, data):
    if not np.all(np.isfinite(data)):
        raise TensorOpError(op, "non-finite values in result")
    return data


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b):
    a, b = Tensor.wrap(a), Tensor.wrap(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise TensorOpError("add", f"shapes {a.shape} and {b.shape} do not broadcast")
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = Tensor.wrap(a), Tensor.wrap(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise TensorOpError("sub", f"shapes {a.shape} and {b.shape} do not broadcast")
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    """Hadamard (elementwise, broadcasting) product; also covers scalar_mul."""
    a, b = Tensor.wrap(a), Tensor.wrap(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise TensorOpError("hadamard", f"shapes {a.shape} and {b.shape} do not broadcast")
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "hadamard")


def div(a, b):
    a, b = Tensor.wrap(a), Tensor.wrap(b)
    try:
        out = a.data / b.data
    except ValueError:
        raise TensorOpError("div", f"shapes {a.shape} and {b.shape} do not broadcast")
    _require_finite("div", out)
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)), "div")


def matmul(a, b):
    a, b = Tensor.wrap(a), Tensor.wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise TensorOpError("matmul", f"operands must be >=2-d, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise TensorOpError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


# -- unary functions ----------------------------------------------------------


def exp(x):
    x = Tensor.wrap(x)
    with np.errstate(over="ignore"):
        out = _require_finite("exp", np.exp(x.data))
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    x = Tensor.wrap(x)
    if np.any(x.data <= 0.0):
        raise TensorOpError("log", "input must be strictly positive")
    out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,), "log")


def sigmoid(x):
    x = Tensor.wrap(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(x):
    x = Tensor.wrap(x)
    s = sigmoid(Tensor(x.data)).data
    out = x.data * s
    return _make(out, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),), "silu")


def softplus(x):
    x = Tensor.wrap(x)
    out = np.logaddexp(0.0, x.data)
    s = sigmoid(Tensor(x.data)).data
    return _make(out, (x,), lambda g: (g * s,), "softplus")


def pow_const(x, p):
    """x**p for strictly positive x (or integer p)."""
    x = Tensor.wrap(x)
    if not float(p).is_integer() and np.any(x.data < 0.0):
        raise TensorOpError("pow", "negative base with non-integer exponent")
    out = _require_finite("pow", np.power(x.data, p))
    return _make(out, (x,), lambda g: (g * p * np.power(x.data, p - 1.0),), "pow")


def sqrt(x):
    return pow_const(x, 0.5)


def expm1_over_x(z):
    """(e^z - 1)/z with a series limit near zero; smooth and safe at z = 0."""
    z = Tensor.wrap(z)
    small = np.abs(z.data) < 1e-6
    out = np.where(small, 1.0 + z.data / 2.0 + z.data * z.data / 6.0,
                   np.expm1(np.where(small, 1.0, z.data)) / np.where(small, 1.0, z.data))

    def backward(g):
        zd = z.data
        with np.errstate(over="ignore", invalid="ignore"):
            d = (np.exp(zd) * (zd - 1.0) + 1.0) / (zd * zd)
        d = np.where(small, 0.5 + zd / 3.0 + zd * zd / 8.0, d)
        return (g * d,)

    return _make(out, (z,), backward, "expm1_over_x")


def clip(x, lo, hi):
    """Clamp with straight-through gradient inside [lo, hi]."""
    x = Tensor.wrap(x)
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(out, (x,), lambda g: (g * inside,), "clip")


# -- reductions ---------------------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    x = Tensor.wrap(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward, "sum")


def tmean(x, axis=None, keepdims=False):
    x = Tensor.wrap(x)
    count = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis, keepdims), 1.0 / count)


# -- shape and ordering -------------------------------------------------------


def reshape(x, *shape):
    x = Tensor.wrap(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise TensorOpError("reshape", f"cannot reshape {x.shape} into {shape}")
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    x = Tensor.wrap(x)
    out = x.data.transpose(axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(out, (x,), lambda g: (g.transpose(inv),), "transpose")


def swap_axes(x, a, b):
    axes = list(range(Tensor.wrap(x).ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def concat(tensors, axis=0):
    tensors = [Tensor.wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise TensorOpError("concat", f"shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(out, tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors, axis=0):
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in
                   map(Tensor.wrap, tensors)], axis=axis)


def take(x, index):
    """Slice/index view (``slice`` primitive); gradient scatters back."""
    x = Tensor.wrap(x)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(np.array(out, copy=True), (x,), backward, "slice")


def reverse(x, axis):
    x = Tensor.wrap(x)
    out = np.flip(x.data, axis=axis).copy()
    return _make(out, (x,), lambda g: (np.flip(g, axis=axis).copy(),), "reverse")


# -- normalization and attention helpers --------------------------------------


def softmax(x, axis=-1):
    x = Tensor.wrap(x)
    shift = sub(x, Tensor(x.data.max(axis=axis, keepdims=True)))
    e = exp(shift)
    return div(e, tsum(e, axis=axis, keepdims=True))


def layer_norm(x, axis=-1, eps=1e-5):
    """Normalize to zero mean and unit variance along ``axis`` (no affine)."""
    x = Tensor.wrap(x)
    mu = tmean(x, axis=axis, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=axis, keepdims=True)
    return mul(centered, pow_const(add(var, eps), -0.5))


def causal_conv1d(x, kernel):
    """Depthwise causal convolution along the second-to-last axis.

    x has shape (..., L, C) and kernel (C, w); output[..., t, c] =
    sum_j kernel[c, j] * x[..., t - j, c] with zero left-padding.
    A 1-d x of shape (L,) with kernel (w,) is treated as a single channel.
    """
    x, kernel = Tensor.wrap(x), Tensor.wrap(kernel)
    squeeze = x.ndim == 1
    xd = x.data[:, None] if squeeze else x.data
    kd = kernel.data[None, :] if kernel.ndim == 1 else kernel.data
    if xd.shape[-1] != kd.shape[0]:
        raise TensorOpError("causal_conv1d",
                            f"channels {xd.shape[-1]} != kernel rows {kd.shape[0]}")
    L, w = xd.shape[-2], kd.shape[1]
    out = np.zeros_like(xd)
    for j in range(w):
        if j == 0:
            out += kd[:, 0] * xd
        elif j < L:
            out[..., j:, :] += kd[:, j] * xd[..., :-j, :]

    def backward(g):
        g = g[:, None] if squeeze else g
        gx = np.zeros_like(xd)
        gk = np.zeros_like(kd)
        for j in range(w):
            if j == 0:
                gx += kd[:, 0] * g
                gk[:, 0] = (g * xd).reshape(-1, xd.shape[-1]).sum(axis=0)
            elif j < L:
                gx[..., :-j, :] += kd[:, j] * g[..., j:, :]
                gk[:, j] = (g[..., j:, :] * xd[..., :-j, :]).reshape(-1, xd.shape[-1]).sum(axis=0)
        if squeeze:
            gx = gx[:, 0]
        if kernel.ndim == 1:
            gk = gk[0]
        return gx, gk

    return _make(out[:, 0] if squeeze else out, (x, kernel), backward, "causal_conv1d")


def dropout(x, rate, rng=None, training=False):
    """Inverted dropout: scales by 1/(1-rate) at train time, identity at eval."""
    x = Tensor.wrap(x)
    if not (0.0 <= rate < 1.0):
        raise TensorOpError("dropout", f"rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise TensorOpError("dropout", "training-mode dropout needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# -- gradient checking --------------------------------------------------------


def grad_check(f, inputs, h=1e-5, tol=1e-4):
    """Compare reverse-mode gradients of scalar-valued ``f`` to central differences.

    Returns a report dict: per-input max relative error and overall pass flag.
    The oracle side only ever calls ``f`` forward, never the backward pass.
    """
    inputs = [Tensor(np.array(t.data if isinstance(t, Tensor) else t, dtype=np.float64),
                     requires_grad=True) for t in inputs]
    out = f(*inputs)
    if out.size != 1:
        out = tsum(out)
    out.backward()
    errors = []
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        fd = np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        fdflat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = _scalar_eval(f, inputs)
            flat[i] = orig - h
            lo = _scalar_eval(f, inputs)
            flat[i] = orig
            fdflat[i] = (hi - lo) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-2)
        errors.append(float(np.max(np.abs(analytic - fd) / denom)) if flat.size else 0.0)
    max_err = max(errors) if errors else 0.0
    return {"per_input_max_rel_err": errors, "max_rel_err": max_err,
            "tol": tol, "passed": max_err < tol}


def _scalar_eval(f, inputs):
    with no_grad():
        out = f(*inputs)
    return float(out.data.sum())


# -- parameter containers -----------------------------------------------------


def parameter(rng, *shape, scale=None):
    """Fresh trainable tensor, uniform in +/- 1/sqrt(fan_in) unless overridden."""
    if scale is None:
        fan_in = shape[0] if len(shape) > 1 else (shape[0] if shape else 1)
        scale = 1.0 / math.sqrt(max(1, fan_in))
    data = rng.uniform(-scale, scale, size=shape)
    return Tensor(data, requires_grad=True)


def zeros_param(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Minimal parameter container: collects Tensor attributes recursively."""

    def named_parameters(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(prefix=key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(prefix=f"{key}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{key}.{i}"] = item
        return out

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None
