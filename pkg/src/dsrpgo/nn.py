"""Small shared layers: linear maps, MLPs, affine layer norm, tokenization,
and the per-call forward context carrying dropout state."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, Module


class ForwardCtx:
    """Threaded through forward passes: training flag, dropout rate, rng."""

    def __init__(self, training=False, dropout=0.0, rng=None):
        self.training = training
        self.dropout = dropout
        self.rng = rng

    def drop(self, x):
        return T.dropout(x, self.dropout, rng=self.rng, training=self.training)


EVAL_CTX = ForwardCtx()


class Linear(Module):
    def __init__(self, d_in, d_out, rng, zero=False):
        if zero:
            self.w = Tensor(np.zeros((d_in, d_out)), requires_grad=True)
        else:
            self.w = T.parameter(rng, d_in, d_out)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def forward(self, x):
        return T.add(T.matmul(x, self.w), self.b)


class Mlp(Module):
    """Two-layer perceptron with SiLU, optional dropout after the activation."""

    def __init__(self, d_in, d_hidden, d_out, rng):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def forward(self, x, ctx=EVAL_CTX):
        h = T.silu(self.fc1.forward(x))
        return self.fc2.forward(ctx.drop(h))


class LayerNorm(Module):
    """Layer normalization over the last axis with learned scale and shift."""

    def __init__(self, width, eps=1e-5):
        self.scale = Tensor(np.ones(width), requires_grad=True)
        self.shift = Tensor(np.zeros(width), requires_grad=True)
        self.eps = eps

    def forward(self, x):
        return T.add(T.mul(T.layer_norm(x, axis=-1, eps=self.eps), self.scale), self.shift)


def tokenize(x, token_width):
    """Chunk the last axis of (..., H) into (..., L, token_width) tokens,
    zero-padding H up to a multiple of token_width on the right."""
    x = Tensor.wrap(x)
    h = x.shape[-1]
    L = -(-h // token_width)
    pad = L * token_width - h
    if pad:
        zeros = Tensor(np.zeros(x.shape[:-1] + (pad,)))
        x = T.concat([x, zeros], axis=-1)
    return T.reshape(x, x.shape[:-1] + (L, token_width))


def flatten_tokens(x):
    """Inverse of tokenize (without removing padding): (..., L, W) -> (..., L*W)."""
    x = Tensor.wrap(x)
    return T.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))
