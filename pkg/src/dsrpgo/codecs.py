"""Reconstructive pretraining codecs.

Two encoder-decoder pairs are pretrained by reconstruction under a
binary cross-entropy loss:

* the spatial codec consumes K per-source feature matrices (interaction
  rows; attribute bag-of-words), runs each source through an MLP,
  a tokenized bidirectional scan block, and linear/norm layers, and pools
  to a per-source latent;
* the sequence codec consumes normalized sequence-embedding matrices and
  runs an MLP plus a stack of self-attention blocks.

Reconstructions are sigmoid-bounded to (0, 1) and clamped to
[1e-7, 1 - 1e-7] before any logarithm.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, Module
from .nn import Linear, Mlp, LayerNorm, ForwardCtx, EVAL_CTX, tokenize, flatten_tokens
from .bimamba import BiMamba
from .attention import SelfAttentionBlock

BCE_EPS = 1e-7


def bce_sum(target, recon):
    """Sum over all dimensions of -[x log xr + (1-x) log(1-xr)], clamped."""
    target, recon = Tensor.wrap(target), Tensor.wrap(recon)
    r = T.clip(recon, BCE_EPS, 1.0 - BCE_EPS)
    pos = T.mul(target, T.log(r))
    neg = T.mul(T.sub(1.0, target), T.log(T.sub(1.0, r)))
    return T.mul(T.tsum(T.add(pos, neg)), -1.0)


class SpatialSourceEncoder(Module):
    """One source pathway: MLP -> tokens -> BiMamba -> linear/norm -> pooled latent."""

    def __init__(self, width_in, token_width, n_tokens, latent, rng):
        model_width = token_width * n_tokens
        self.token_width = token_width
        self.mlp = Mlp(width_in, model_width, model_width, rng)
        self.mixer = BiMamba(token_width, rng)
        self.lin = Linear(token_width, token_width, rng)
        self.norm = LayerNorm(token_width)
        self.pool_proj = Linear(token_width, latent, rng)

    def forward(self, x, ctx=EVAL_CTX):
        tokens = tokenize(self.mlp.forward(x, ctx), self.token_width)
        tokens = self.norm.forward(self.lin.forward(self.mixer.forward(tokens, ctx)))
        return self.pool_proj.forward(T.tmean(tokens, axis=-2))


class SpatialSourceDecoder(Module):
    """Counterpart pathway: latent -> tokens -> BiMamba -> linear/norm -> sigmoid head."""

    def __init__(self, width_out, token_width, n_tokens, latent, rng):
        model_width = token_width * n_tokens
        self.token_width = token_width
        self.expand = Linear(latent, model_width, rng)
        self.mixer = BiMamba(token_width, rng)
        self.lin = Linear(token_width, token_width, rng)
        self.norm = LayerNorm(token_width)
        self.head = Linear(model_width, width_out, rng)

    def forward(self, z, ctx=EVAL_CTX):
        tokens = tokenize(self.expand.forward(z), self.token_width)
        tokens = self.norm.forward(self.lin.forward(self.mixer.forward(tokens, ctx)))
        return T.sigmoid(self.head.forward(flatten_tokens(tokens)))


class SpatialCodec(Module):
    """Encoder-decoder over K spatial feature sources (K = 2 here)."""

    def __init__(self, source_widths, rng, token_width=16, n_tokens=4, latent=64):
        self.source_widths = list(source_widths)
        self.latent = latent
        self.encoders = [SpatialSourceEncoder(w, token_width, n_tokens, latent, rng)
                         for w in source_widths]
        self.decoders = [SpatialSourceDecoder(w, token_width, n_tokens, latent, rng)
                         for w in source_widths]

    def encode(self, sources, ctx=EVAL_CTX):
        """Per-source latents, each (N, latent)."""
        if len(sources) != len(self.encoders):
            raise ValueError(f"expected {len(self.encoders)} sources, got {len(sources)}")
        for k, (src, w) in enumerate(zip(sources, self.source_widths)):
            src = Tensor.wrap(src)
            if src.shape[-1] != w:
                raise ValueError(f"source {k}: width {src.shape[-1]} != configured {w}")
        return [enc.forward(src, ctx) for enc, src in zip(self.encoders, sources)]

    def decode(self, latents, ctx=EVAL_CTX):
        return [dec.forward(z, ctx) for dec, z in zip(self.decoders, latents)]

    def merged_latent(self, latents):
        """Protein-level latent: mean of the per-source latents."""
        acc = latents[0]
        for z in latents[1:]:
            acc = T.add(acc, z)
        return T.mul(acc, 1.0 / len(latents))

    def loss(self, sources, reconstructions):
        """Mean over proteins of the summed per-source, per-dimension BCE."""
        n = Tensor.wrap(sources[0]).shape[0]
        total = None
        for src, rec in zip(sources, reconstructions):
            term = bce_sum(src, rec)
            total = term if total is None else T.add(total, term)
        return T.mul(total, 1.0 / n)


loss_sp = SpatialCodec.loss


class SequenceEncoder(Module):
    def __init__(self, width_in, token_width, n_tokens, latent, n_blocks, n_heads, rng):
        model_width = token_width * n_tokens
        self.token_width = token_width
        self.mlp = Mlp(width_in, model_width, model_width, rng)
        self.blocks = [SelfAttentionBlock(token_width, n_heads, rng) for _ in range(n_blocks)]
        self.pool_proj = Linear(token_width, latent, rng)

    def forward(self, x, ctx=EVAL_CTX):
        tokens = tokenize(self.mlp.forward(x, ctx), self.token_width)
        for block in self.blocks:
            tokens = block.forward(tokens, ctx)
        return self.pool_proj.forward(T.tmean(tokens, axis=-2))


class SequenceDecoder(Module):
    def __init__(self, width_out, token_width, n_tokens, latent, n_blocks, n_heads, rng):
        model_width = token_width * n_tokens
        self.token_width = token_width
        self.expand = Linear(latent, model_width, rng)
        self.blocks = [SelfAttentionBlock(token_width, n_heads, rng) for _ in range(n_blocks)]
        self.head = Mlp(model_width, model_width, width_out, rng)

    def forward(self, z, ctx=EVAL_CTX):
        tokens = tokenize(self.expand.forward(z), self.token_width)
        for block in self.blocks:
            tokens = block.forward(tokens, ctx)
        return T.sigmoid(self.head.forward(flatten_tokens(tokens), ctx))


class SequenceCodec(Module):
    """Encoder-decoder over normalized sequence embeddings."""

    def __init__(self, width, rng, token_width=16, n_tokens=4, latent=64,
                 n_blocks=6, n_heads=2):
        self.width = width
        self.latent = latent
        self.encoder = SequenceEncoder(width, token_width, n_tokens, latent,
                                       n_blocks, n_heads, rng)
        self.decoder = SequenceDecoder(width, token_width, n_tokens, latent,
                                       n_blocks, n_heads, rng)

    def encode(self, embeddings, ctx=EVAL_CTX):
        embeddings = Tensor.wrap(embeddings)
        if embeddings.shape[-1] != self.width:
            raise ValueError(f"embedding width {embeddings.shape[-1]} != {self.width}")
        return self.encoder.forward(embeddings, ctx)

    def decode(self, latents, ctx=EVAL_CTX):
        return self.decoder.forward(latents, ctx)

    def loss(self, embeddings, reconstructions):
        n = Tensor.wrap(embeddings).shape[0]
        return T.mul(bce_sum(embeddings, reconstructions), 1.0 / n)


loss_se = SequenceCodec.loss
