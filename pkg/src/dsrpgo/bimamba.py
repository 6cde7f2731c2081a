"""Bidirectional selective-scan block over token sequences.

One block runs a forward-direction and a backward-direction branch, each a
depthwise causal convolution followed by a selective scan; the backward
branch sees the token-reversed sequence and its output is reversed back.
Both branches are gated by a SiLU path and fused as
(forward * gate + backward * gate + gate), projected back to the input
width and added residually.  With the output projection zero-initialized
the whole block is the identity, which makes residual stacking safe.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, Module
from .ssm import SelectiveSsm


def reorder(x, direction):
    """Positional transform feeding a scan: identity for forward, token
    reversal (second-to-last axis for >=2-d inputs) for backward."""
    if direction == "forward":
        return Tensor.wrap(x)
    if direction == "backward":
        x = Tensor.wrap(x)
        return T.reverse(x, axis=x.ndim - 2 if x.ndim >= 2 else 0)
    raise ValueError(f"reorder: unknown direction {direction!r}")


class BiMamba(Module):
    """Width-preserving bidirectional scan block for (..., L, D) sequences."""

    def __init__(self, width, rng, inner_width=None, state_dim=4, conv_width=4):
        inner = width if inner_width is None else inner_width
        self.width = width
        self.inner = inner
        self.w_in = T.parameter(rng, width, inner)
        self.w_gate = T.parameter(rng, width, inner)
        self.conv_fwd = T.parameter(rng, inner, conv_width)
        self.conv_bwd = T.parameter(rng, inner, conv_width)
        self.ssm_fwd = SelectiveSsm(inner, state_dim, rng)
        self.ssm_bwd = SelectiveSsm(inner, state_dim, rng)
        self.w_out = Tensor(np.zeros((inner, width)), requires_grad=True)

    def forward(self, x, ctx=None):
        x = Tensor.wrap(x)
        gate = T.silu(T.matmul(x, self.w_gate))
        proj = T.matmul(x, self.w_in)
        branch_f = self.ssm_fwd.forward(T.causal_conv1d(proj, self.conv_fwd))
        rev = reorder(proj, "backward")
        branch_b = reorder(self.ssm_bwd.forward(T.causal_conv1d(rev, self.conv_bwd)),
                           "backward")
        fused = T.add(T.add(T.mul(branch_f, gate), T.mul(branch_b, gate)), gate)
        out = T.matmul(fused, self.w_out)
        if ctx is not None:
            out = ctx.drop(out)
        return T.add(x, out)
