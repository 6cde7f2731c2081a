"""Two-phase optimization: reconstructive pretraining of the two codecs and
fine-tuning of the prediction model, with AdamW, two-stage learning rates,
deterministic seeding, and bitwise-stable binary checkpoints.

Checkpoint container layout: an 8-byte magic, a little-endian uint64 header
length, a JSON header (format version, config fingerprint, metadata, and a
group directory of name/shape/offset), then the concatenated group payloads
as 64-bit little-endian floats.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor, no_grad
from .nn import ForwardCtx, EVAL_CTX
from .codecs import SpatialCodec, SequenceCodec
from .model import PredictionModel, ModelConfig, load_pretrained
from . import metrics as M

CHECKPOINT_MAGIC = b"DSRPGO1\n"
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


def config_fingerprint(config):
    """Stable digest of a JSON-serializable config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path, groups, meta=None, fingerprint=""):
    """groups: name -> float64 array; meta: JSON-serializable dict."""
    directory, offset = [], 0
    payloads = []
    for name in sorted(groups):
        arr = np.ascontiguousarray(groups[name], dtype=np.float64)
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr)
        offset += arr.nbytes
    header = json.dumps({"version": CHECKPOINT_VERSION, "fingerprint": fingerprint,
                         "meta": meta or {}, "groups": directory},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in payloads:
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path, expect_fingerprint=None):
    """Returns (groups dict, meta dict, fingerprint)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
        if expect_fingerprint is not None and header["fingerprint"] != expect_fingerprint:
            raise ValueError(f"{path}: config fingerprint mismatch "
                             f"({header['fingerprint']} != {expect_fingerprint})")
        blob = fh.read()
    groups = {}
    for entry in header["groups"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        groups[entry["name"]] = arr.reshape(shape).copy()
    return groups, header["meta"], header["fingerprint"]


# -- optimizer ----------------------------------------------------------------


class AdamW:
    """Adaptive moments with decoupled weight decay (applied to parameters
    directly, never through the gradients)."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr, weight_decay=0.0):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"NaN/Inf gradient in parameter {name}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            p.data = p.data - lr * update
            if weight_decay:
                p.data = p.data - lr * weight_decay * p.data

    def state_groups(self, prefix=""):
        out = {}
        for name in self.params:
            out[f"{prefix}m.{name}"] = self.m[name]
            out[f"{prefix}v.{name}"] = self.v[name]
        return out

    def load_state_groups(self, groups, prefix=""):
        for name in self.params:
            self.m[name] = np.array(groups[f"{prefix}m.{name}"])
            self.v[name] = np.array(groups[f"{prefix}v.{name}"])


# -- schedules ----------------------------------------------------------------


@dataclass
class Schedule:
    phase: str                    # "pretrain" or "finetune"
    stage1_epochs: int
    stage1_lr: float
    stage2_epochs: int
    stage2_lr: float
    dropout: float
    weight_decay: float = 0.0
    batch_size: int = 0           # 0 = full batch
    seed: int = 0

    @property
    def total_epochs(self):
        return self.stage1_epochs + self.stage2_epochs

    def lr_at(self, epoch):
        return self.stage1_lr if epoch < self.stage1_epochs else self.stage2_lr

    @staticmethod
    def pretrain_default(epochs=200, seed=0):
        """Desk-scale version of the 5000-epoch 1e-5 -> 1e-6 structure."""
        half = epochs // 2
        return Schedule("pretrain", half, 1e-5, epochs - half, 1e-6, dropout=0.1,
                        seed=seed)

    @staticmethod
    def finetune_default(epochs=100, seed=0):
        half = epochs // 2
        return Schedule("finetune", half, 1e-3, epochs - half, 1e-4, dropout=0.3,
                        seed=seed)


def _snapshot(module, opt, rng, epoch, phase):
    groups = {k: p.data.copy() for k, p in module.named_parameters().items()}
    groups.update(opt.state_groups(prefix="opt."))
    meta = {"epoch": epoch, "phase": phase, "opt_t": opt.t,
            "rng_state": _jsonable(rng.bit_generator.state)}
    return groups, meta


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _restore(module, opt, groups, meta):
    for name, p in module.named_parameters().items():
        p.data = np.array(groups[name])
    opt.load_state_groups(groups, prefix="opt.")
    opt.t = meta["opt_t"]
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    return rng, meta["epoch"]


def _run_epochs(module, step_fn, schedule, resume=None, on_epoch=None):
    """Generic loop: one optimizer step per epoch over step_fn's loss."""
    opt = AdamW(module.named_parameters())
    if resume is not None:
        rng, start = _restore(module, opt, *resume)
    else:
        rng, start = np.random.default_rng(schedule.seed), 0
    curves = []
    for epoch in range(start, schedule.total_epochs):
        lr = schedule.lr_at(epoch)
        module.zero_grad()
        ctx = ForwardCtx(training=True, dropout=schedule.dropout, rng=rng)
        loss = step_fn(ctx, rng)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(f"loss diverged at epoch {epoch}", epoch=epoch)
        loss.backward()
        opt.step(lr, schedule.weight_decay)
        curves.append({"epoch": epoch, "lr": lr, "loss": value})
        if on_epoch is not None:
            on_epoch(epoch, lr, value)
    return curves, opt, rng


def _batches(n, batch_size, rng):
    if batch_size and batch_size < n:
        order = rng.permutation(n)
        return [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return [np.arange(n)]


# -- pretraining --------------------------------------------------------------


@dataclass
class CodecConfig:
    token_width: int = 16
    n_tokens: int = 4
    latent: int = 64
    seq_blocks: int = 6
    n_heads: int = 2


def build_codecs(dataset, cfg: CodecConfig, seed):
    rng = np.random.default_rng(seed)
    x1, x2, x3 = dataset.features()
    spatial = SpatialCodec([x1.shape[1], x2.shape[1]], rng,
                           token_width=cfg.token_width, n_tokens=cfg.n_tokens,
                           latent=cfg.latent)
    sequence = SequenceCodec(x3.shape[1], rng, token_width=cfg.token_width,
                             n_tokens=cfg.n_tokens, latent=cfg.latent,
                             n_blocks=cfg.seq_blocks, n_heads=cfg.n_heads)
    return spatial, sequence


def pretrain(dataset, schedule, cfg=None, resume_spatial=None, resume_sequence=None):
    """Reconstructive pretraining of both codecs as separate runs.

    Returns (spatial groups, sequence groups, spatial curve, sequence curve,
    metas).  Losses optimize the summed-per-protein reconstruction BCE on all
    proteins in the dataset.
    """
    cfg = cfg or CodecConfig()
    spatial, sequence = build_codecs(dataset, cfg, schedule.seed)
    x1, x2, x3 = dataset.features()
    sources = [Tensor(np.clip(x1, 0.0, 1.0)), Tensor(np.clip(x2, 0.0, 1.0))]
    embed = Tensor(x3)
    n = dataset.n

    def spatial_step(ctx, rng):
        total = None
        for idx in _batches(n, schedule.batch_size, rng):
            batch = [src[idx] for src in sources]
            recon = spatial.decode(spatial.encode(batch, ctx), ctx)
            part = T.mul(spatial.loss(batch, recon), len(idx) / n)
            total = part if total is None else T.add(total, part)
        return total

    def sequence_step(ctx, rng):
        total = None
        for idx in _batches(n, schedule.batch_size, rng):
            batch = embed[idx]
            recon = sequence.decode(sequence.encode(batch, ctx), ctx)
            part = T.mul(sequence.loss(batch, recon), len(idx) / n)
            total = part if total is None else T.add(total, part)
        return total

    sp_curve, sp_opt, sp_rng = _run_epochs(spatial, spatial_step, schedule,
                                           resume=resume_spatial)
    se_curve, se_opt, se_rng = _run_epochs(sequence, sequence_step, schedule,
                                           resume=resume_sequence)
    sp_groups, sp_meta = _snapshot(spatial, sp_opt, sp_rng,
                                   schedule.total_epochs, "pretrain")
    se_groups, se_meta = _snapshot(sequence, se_opt, se_rng,
                                   schedule.total_epochs, "pretrain")
    return {"spatial_groups": sp_groups, "sequence_groups": se_groups,
            "spatial_curve": sp_curve, "sequence_curve": se_curve,
            "spatial_meta": sp_meta, "sequence_meta": se_meta}


# -- fine-tuning --------------------------------------------------------------


def build_model(dataset, model_cfg: ModelConfig, seed):
    return PredictionModel(model_cfg, np.random.default_rng(seed))


def finetune(dataset, schedule, model_cfg, pretrained=None, resume=None,
             eval_each_epoch=True):
    """Optimize the asymmetric loss on the train split; track validation Fmax
    per epoch and retain the best-validation snapshot.

    pretrained: optional (spatial groups, sequence groups) pair of codec
    checkpoints.  Returns a dict with the model, best parameter snapshot,
    per-epoch metric curve, and the pretraining manifest (or None).
    """
    model = build_model(dataset, model_cfg, schedule.seed)
    manifest = None
    if pretrained is not None:
        manifest = load_pretrained(model, *pretrained)
    train_idx = dataset.indices("train")
    valid_idx = dataset.indices("valid")
    if len(train_idx) == 0:
        raise DivergenceError("no train split")
    x1, x2, x3 = dataset.features(train_idx)
    y_train = Tensor(dataset.labels[train_idx])
    xs = (Tensor(np.clip(x1, 0.0, 1.0)), Tensor(np.clip(x2, 0.0, 1.0)), Tensor(x3))
    if len(valid_idx):
        v1, v2, v3 = dataset.features(valid_idx)
        valid_inputs = (np.clip(v1, 0.0, 1.0), np.clip(v2, 0.0, 1.0), v3)
        y_valid = dataset.labels[valid_idx]
    n = len(train_idx)

    def step(ctx, rng):
        total = None
        for idx in _batches(n, schedule.batch_size, rng):
            scores, _ = model.forward(xs[0][idx], xs[1][idx], xs[2][idx], ctx)
            part = T.mul(model.loss(scores, y_train[idx]), len(idx) / n)
            total = part if total is None else T.add(total, part)
        return total

    best = {"fmax": -1.0, "epoch": -1, "params": None}
    curve = []

    def on_epoch(epoch, lr, loss_value):
        row = {"epoch": epoch, "lr": lr, "loss": loss_value}
        if eval_each_epoch and len(valid_idx) and y_valid.sum() > 0:
            with no_grad():
                scores, _ = model.forward(*valid_inputs)
            report = M.evaluate(scores.data, y_valid)
            row.update({"fmax": report.fmax, "m-aupr": report.m_aupr,
                        "M-aupr": report.M_aupr, "f1": report.f1,
                        "acc": report.acc})
            if report.fmax > best["fmax"]:
                best.update(fmax=report.fmax, epoch=epoch,
                            params={k: p.data.copy() for k, p in
                                    model.named_parameters().items()})
        curve.append(row)

    _, opt, rng = _run_epochs(model, step, schedule, resume=resume,
                              on_epoch=on_epoch)
    if best["params"] is None:
        best.update(epoch=schedule.total_epochs - 1,
                    params={k: p.data.copy() for k, p in
                            model.named_parameters().items()})
    groups, meta = _snapshot(model, opt, rng, schedule.total_epochs, "finetune")
    return {"model": model, "final_groups": groups, "final_meta": meta,
            "best": best, "curve": curve, "manifest": manifest}


def set_model_params(model, groups):
    for name, p in model.named_parameters().items():
        p.data = np.array(groups[name])
    return model
