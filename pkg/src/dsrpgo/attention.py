"""Multi-head attention: self-attention blocks for the sequence pathway and
the bidirectional cross-attention interaction module.

Cross-attention compares queries from one branch with keys/values from the
other: softmax(Q1 K2^T / sqrt(d_head)) V2, per head, heads concatenated and
output-mapped.  The 1/sqrt(d_head) scaling can be disabled (``scaled=False``)
to recover the literal unscaled form for fidelity tests.
"""

from __future__ import annotations

from . import tensor as T
from .tensor import Tensor, Module
from .nn import Linear, LayerNorm, EVAL_CTX


class MultiHeadAttention(Module):
    """Q/K/V generators over width d_model split into n_heads contiguous heads."""

    def __init__(self, d_model, n_heads, rng, scaled=True):
        if d_model % n_heads:
            raise ValueError(f"width {d_model} not divisible by {n_heads} heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.scaled = scaled
        self.q_gen = Linear(d_model, d_model, rng)
        self.k_gen = Linear(d_model, d_model, rng)
        self.v_gen = Linear(d_model, d_model, rng)
        self.out_map = Linear(d_model, d_model, rng)

    def _split_heads(self, x):
        # (..., L, D) -> (..., H, L, d_head)
        x = T.reshape(x, x.shape[:-1] + (self.n_heads, self.d_head))
        return T.swap_axes(x, -2, -3)

    def _merge_heads(self, x):
        x = T.swap_axes(x, -2, -3)
        return T.reshape(x, x.shape[:-2] + (self.d_model,))

    def attend(self, queries_from, keys_values_from):
        """Head-wise softmax-weighted sum of values, before the output map."""
        q = self._split_heads(self.q_gen.forward(queries_from))
        k = self._split_heads(self.k_gen.forward(keys_values_from))
        v = self._split_heads(self.v_gen.forward(keys_values_from))
        scores = T.matmul(q, T.swap_axes(k, -1, -2))
        if self.scaled:
            scores = T.mul(scores, self.d_head ** -0.5)
        weights = T.softmax(scores, axis=-1)
        return self._merge_heads(T.matmul(weights, v))

    def forward(self, queries_from, keys_values_from=None):
        queries_from = Tensor.wrap(queries_from)
        kv = queries_from if keys_values_from is None else Tensor.wrap(keys_values_from)
        if queries_from.shape[-1] != self.d_model or kv.shape[-1] != self.d_model:
            raise ValueError(
                f"attention width mismatch: got {queries_from.shape[-1]} / "
                f"{kv.shape[-1]}, expected {self.d_model}")
        return self.out_map.forward(self.attend(queries_from, kv))


def mha(queries_from, keys_values_from, params):
    return params.forward(queries_from, keys_values_from)


class SelfAttentionBlock(Module):
    """One sequence-encoder block: attention plus alternating linear and norm
    layers wired as out = N2(inner + L2(inner)), inner = N1(x + L1(MSA(x))).

    The double normalization at the output is deliberate (the nested form is
    kept as designed rather than replaced by a conventional pre/post-norm).
    """

    def __init__(self, d_model, n_heads, rng, scaled=True):
        self.msa = MultiHeadAttention(d_model, n_heads, rng, scaled=scaled)
        self.lin1 = Linear(d_model, d_model, rng)
        self.lin2 = Linear(d_model, d_model, rng)
        self.norm1 = LayerNorm(d_model)
        self.norm2 = LayerNorm(d_model)

    def forward(self, x, ctx=EVAL_CTX):
        x = Tensor.wrap(x)
        inner = self.norm1.forward(T.add(x, self.lin1.forward(ctx.drop(self.msa.forward(x)))))
        return self.norm2.forward(T.add(inner, self.lin2.forward(inner)))


class Binm(Module):
    """Bidirectional interaction: two cross-attentions with queries and
    keys/values drawn from opposite branches, each with its own generators,
    followed by the output map and a residual on its own branch."""

    def __init__(self, d_model, n_heads, rng, scaled=True):
        self.attn12 = MultiHeadAttention(d_model, n_heads, rng, scaled=scaled)
        self.attn21 = MultiHeadAttention(d_model, n_heads, rng, scaled=scaled)

    def forward(self, branch1, branch2, ctx=EVAL_CTX):
        branch1, branch2 = Tensor.wrap(branch1), Tensor.wrap(branch2)
        out1 = T.add(branch1, ctx.drop(self.attn12.forward(branch1, branch2)))
        out2 = T.add(branch2, ctx.drop(self.attn21.forward(branch2, branch1)))
        return out1, out2
