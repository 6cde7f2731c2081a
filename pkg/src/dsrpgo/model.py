"""Two-branch fine-tuning model with dynamic expert selection.

Three modality pathways (interaction rows, attribute bag-of-words, sequence
embedding) are encoded to a common latent width by trunks that share their
architecture with the pretraining codecs, so pretrained encoder weights can
be loaded directly.  A shared-learning branch runs joint self-attention over
the three modality tokens; an interactive-learning branch runs bidirectional
cross-attention between the spatial pair and the sequence token.  The six
resulting channels feed a gated mixture of experts: a softmax gate scores
the experts, those at or above a confidence threshold stay active (falling
back to the single best when none qualify), and their outputs are weighted
by the renormalized gate scores.  A fully connected predictor maps the fused
vector to per-term scores, trained with an asymmetric focal loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor, Module
from .nn import Linear, Mlp, EVAL_CTX
from .attention import SelfAttentionBlock, Binm
from .codecs import SpatialSourceEncoder, SequenceEncoder, BCE_EPS


@dataclass
class ModelConfig:
    source_widths: tuple          # widths of the two spatial sources
    seq_width: int                # raw sequence-embedding width
    n_terms: int                  # label vocabulary size M
    latent: int = 64              # common modality width D
    token_width: int = 16
    n_tokens: int = 4
    seq_blocks: int = 6
    msl_blocks: int = 2
    n_heads: int = 2
    expert_hidden: int = 64
    expert_out: int = 32
    predictor_hidden: int = 64
    threshold: float = None       # DSM gate threshold t; default 1/V
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    use_msl: bool = True
    use_mil: bool = True
    use_binm: bool = True
    use_dsm: bool = True


@dataclass
class GateDecision:
    """One protein's gate output: confidences, threshold, active set, weights."""
    confidences: np.ndarray
    threshold: float
    active: tuple
    weights: np.ndarray


def select_experts(confidences, threshold):
    """Active set and normalized weights for one confidence vector.

    Experts with confidence >= threshold survive; when none do, the single
    top-confidence expert is kept so the selection is never empty.  Weights
    are the renormalized confidences on the active set, zero elsewhere.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"gate threshold must be in [0, 1], got {threshold}")
    p = np.asarray(confidences, dtype=np.float64)
    mask = p >= threshold
    if not mask.any():
        mask = np.zeros_like(mask)
        mask[int(np.argmax(p))] = True
    w = np.where(mask, p, 0.0)
    w = w / w.sum()
    return GateDecision(confidences=p, threshold=float(threshold),
                        active=tuple(np.flatnonzero(mask)), weights=w)


class Dsm(Module):
    """Softmax gate over V experts with threshold selection and fused output."""

    def __init__(self, n_channels, channel_width, cfg, rng):
        self.n_channels = n_channels
        flat = n_channels * channel_width
        self.gate = Mlp(flat, cfg.expert_hidden, n_channels, rng)
        self.experts = [Mlp(flat, cfg.expert_hidden, cfg.expert_out, rng)
                        for _ in range(n_channels)]
        self.out_width = n_channels * cfg.expert_out

    def forward(self, channels, threshold, ctx=EVAL_CTX):
        """channels: (N, V, D) -> fused (N, V*expert_out), list of GateDecision.

        Membership is decided on the gate's forward values (no gradient
        across the threshold); gradients flow through the renormalized
        weights of the selected experts only.
        """
        flat = T.reshape(channels, (channels.shape[0], -1))
        p_hat = T.softmax(self.gate.forward(flat, ctx), axis=-1)
        decisions = [select_experts(row, threshold) for row in p_hat.data]
        mask = Tensor(np.array([d.weights > 0 for d in decisions], dtype=np.float64))
        kept = T.mul(p_hat, mask)
        weights = T.div(kept, T.tsum(kept, axis=-1, keepdims=True))
        pieces = []
        for i, expert in enumerate(self.experts):
            wi = weights[:, i:i + 1]
            pieces.append(T.mul(wi, expert.forward(flat, ctx)))
        return T.concat(pieces, axis=-1), decisions


def asymmetric_loss(scores, labels, gamma_pos=0.0, gamma_neg=4.0):
    """Mean over proteins and terms of the asymmetric focal BCE:
    -y (1-p)^g+ log p - (1-y) p^g- log(1-p).  Reduces to plain BCE at
    g+ = g- = 0."""
    scores, labels = Tensor.wrap(scores), Tensor.wrap(labels)
    p = T.clip(scores, BCE_EPS, 1.0 - BCE_EPS)
    pos = T.mul(T.mul(labels, T.pow_const(T.sub(1.0, p), gamma_pos)), T.log(p))
    neg = T.mul(T.mul(T.sub(1.0, labels), T.pow_const(p, gamma_neg)),
                T.log(T.sub(1.0, p)))
    return T.mul(T.tmean(T.add(pos, neg)), -1.0)


class PredictionModel(Module):
    """Full fine-tuning model; ablation toggles live in the config."""

    def __init__(self, cfg: ModelConfig, rng):
        if not (cfg.use_msl or cfg.use_mil):
            raise ValueError("at least one branch must be enabled")
        self.cfg = cfg
        d = cfg.latent
        self.spatial_encoders = [
            SpatialSourceEncoder(w, cfg.token_width, cfg.n_tokens, d, rng)
            for w in cfg.source_widths]
        self.sequence_encoder = SequenceEncoder(
            cfg.seq_width, cfg.token_width, cfg.n_tokens, d,
            cfg.seq_blocks, cfg.n_heads, rng)
        if cfg.use_msl:
            self.msl_adapters = [Linear(d, d, rng) for _ in range(3)]
            self.msl_blocks = [SelfAttentionBlock(d, cfg.n_heads, rng)
                               for _ in range(cfg.msl_blocks)]
        if cfg.use_mil:
            self.mil_adapters = [Linear(d, d, rng) for _ in range(3)]
            if cfg.use_binm:
                self.binm = Binm(d, cfg.n_heads, rng)
        self.n_channels = 3 * (cfg.use_msl + cfg.use_mil)
        if cfg.use_dsm:
            self.dsm = Dsm(self.n_channels, d, cfg, rng)
            fused_width = self.dsm.out_width
        else:
            fused_width = self.n_channels * d
        self.predictor = Mlp(fused_width, cfg.predictor_hidden, cfg.n_terms, rng)

    @property
    def threshold(self):
        t = self.cfg.threshold
        return 1.0 / self.n_channels if t is None else t

    # -- pathways -------------------------------------------------------------

    def encode_modalities(self, x1, x2, x3, ctx=EVAL_CTX):
        z1 = self.spatial_encoders[0].forward(x1, ctx)
        z2 = self.spatial_encoders[1].forward(x2, ctx)
        z3 = self.sequence_encoder.forward(x3, ctx)
        return z1, z2, z3

    def msl_branch(self, z1, z2, z3, ctx=EVAL_CTX):
        """Joint self-attention over the three modality tokens -> (N, 3, D)."""
        tokens = T.stack([a.forward(z) for a, z in
                          zip(self.msl_adapters, (z1, z2, z3))], axis=1)
        for block in self.msl_blocks:
            tokens = block.forward(tokens, ctx)
        return tokens

    def mil_branch(self, z1, z2, z3, ctx=EVAL_CTX):
        """Cross-attention between the spatial pair and the sequence token,
        re-assembled as (N, 3, D) channels."""
        spatial = T.stack([self.mil_adapters[0].forward(z1),
                           self.mil_adapters[1].forward(z2)], axis=1)
        seq = T.stack([self.mil_adapters[2].forward(z3)], axis=1)
        if self.cfg.use_binm:
            spatial, seq = self.binm.forward(spatial, seq, ctx)
        return T.concat([spatial, seq], axis=1)

    def forward(self, x1, x2, x3, ctx=EVAL_CTX, return_embeddings=False):
        """Scores (N, M) in (0, 1); optionally the intermediate embeddings."""
        z1, z2, z3 = self.encode_modalities(x1, x2, x3, ctx)
        channel_maps = []
        msl = mil = None
        if self.cfg.use_msl:
            msl = self.msl_branch(z1, z2, z3, ctx)
            channel_maps.append(msl)
        if self.cfg.use_mil:
            mil = self.mil_branch(z1, z2, z3, ctx)
            channel_maps.append(mil)
        x_dsm = channel_maps[0] if len(channel_maps) == 1 else T.concat(channel_maps, axis=1)
        if self.cfg.use_dsm:
            fused, decisions = self.dsm.forward(x_dsm, self.threshold, ctx)
        else:
            fused = T.reshape(x_dsm, (x_dsm.shape[0], -1))
            decisions = []
        scores = T.sigmoid(self.predictor.forward(fused, ctx))
        if return_embeddings:
            embeddings = {
                "MSL": None if msl is None else msl.data.reshape(msl.shape[0], -1),
                "MIL": None if mil is None else mil.data.reshape(mil.shape[0], -1),
                "DSM": fused.data.copy(),
            }
            return scores, decisions, embeddings
        return scores, decisions

    def loss(self, scores, labels):
        return asymmetric_loss(scores, labels, self.cfg.gamma_pos, self.cfg.gamma_neg)


PRETRAINED_GROUP_MAP = {
    # model parameter prefix -> (checkpoint kind, checkpoint prefix)
    "spatial_encoders.0.": ("spatial", "encoders.0."),
    "spatial_encoders.1.": ("spatial", "encoders.1."),
    "sequence_encoder.": ("sequence", "encoder."),
}


def load_pretrained(model, spatial_groups, sequence_groups):
    """Copy pretrained codec encoder weights into the model's trunks.

    spatial_groups / sequence_groups are name -> array dicts as stored in the
    codec checkpoints.  Returns a manifest listing loaded and fresh parameter
    groups; raises on any shape mismatch, naming every incompatible group.
    """
    sources = {"spatial": spatial_groups, "sequence": sequence_groups}
    params = model.named_parameters()
    loaded, mismatched = [], []
    for name, tensor in params.items():
        for prefix, (kind, ck_prefix) in PRETRAINED_GROUP_MAP.items():
            if name.startswith(prefix):
                key = ck_prefix + name[len(prefix):]
                if key not in sources[kind]:
                    continue
                value = sources[kind][key]
                if value.shape != tensor.data.shape:
                    mismatched.append(f"{name}: checkpoint {value.shape} vs model "
                                      f"{tensor.data.shape}")
                else:
                    tensor.data = np.array(value, dtype=np.float64)
                    loaded.append(name)
                break
    if mismatched:
        raise ValueError("incompatible pretrained groups: " + "; ".join(mismatched))
    loaded_groups = sorted({n.split(".")[0] + "." + n.split(".")[1]
                            if n.startswith("spatial") else n.split(".")[0]
                            for n in loaded})
    fresh_groups = sorted({n.split(".")[0] for n in params} -
                          {g.split(".")[0] for g in loaded_groups})
    return {"loaded": loaded_groups, "fresh": fresh_groups,
            "loaded_parameters": sorted(loaded)}
