"""Central-difference gradient verification across every differentiable
operation, at tiny configurations.

``check_gradients`` perturbs tensor entries in place and compares the
resulting finite differences against reverse-mode gradients; ``run_all``
covers primitives, scans, attention, codecs, the gating module, the losses,
and a sampled subset of the full model's parameters.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, no_grad
from .ssm import SelectiveSsm
from .bimamba import BiMamba
from .attention import SelfAttentionBlock, Binm, MultiHeadAttention
from .codecs import SpatialCodec, SequenceCodec
from .model import PredictionModel, ModelConfig, asymmetric_loss, Dsm


def check_gradients(loss_fn, tensors, h=1e-5, tol=1e-4, sample=None, rng=None):
    """Compare backward gradients of scalar loss_fn() against central
    differences for every entry (or a sampled subset) of ``tensors``.

    loss_fn must read the given tensors in place; their ``data`` is mutated
    during differencing and restored afterwards.  Returns (max_rel_err,
    passed).
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        aflat = analytic.reshape(-1)
        idxs = range(flat.size)
        if sample is not None and flat.size > sample:
            idxs = rng.choice(flat.size, size=sample, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                hi = float(loss_fn().data)
            flat[i] = orig - h
            with no_grad():
                lo = float(loss_fn().data)
            flat[i] = orig
            fd = (hi - lo) / (2.0 * h)
            denom = max(abs(aflat[i]), abs(fd), 1e-2)
            worst = max(worst, abs(aflat[i] - fd) / denom)
    return worst, worst < tol


def _leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def run_all(seed=0, tol=1e-4):
    """Run every check; returns a list of {name, max_rel_err, passed} rows."""
    rng = np.random.default_rng(seed)
    rows = []

    def add(name, loss_fn, tensors, sample=None, tol_=tol):
        err, ok = check_gradients(loss_fn, tensors, tol=tol_, sample=sample, rng=rng)
        rows.append({"name": name, "max_rel_err": err, "passed": ok})

    # primitives
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 3)
    w = Tensor(rng.standard_normal((3, 3)))
    add("matmul", lambda: T.tsum(T.mul(T.matmul(a, b), w)), [a, b])
    x = _leaf(rng, 4, 5)
    z = Tensor(rng.standard_normal((4, 5)))
    add("add", lambda: T.tsum(T.mul(T.add(x, z), z)), [x])
    add("sub", lambda: T.tsum(T.mul(T.sub(z, x), z)), [x])
    add("hadamard", lambda: T.tsum(T.mul(T.mul(x, z), z)), [x])
    add("div", lambda: T.tsum(T.div(z, T.add(T.mul(x, x), 1.0))), [x])
    add("exp", lambda: T.tsum(T.mul(T.exp(x), z)), [x])
    xp = Tensor(np.abs(rng.standard_normal((3, 3))) + 0.5, requires_grad=True)
    add("log", lambda: T.tsum(T.log(xp)), [xp])
    add("pow", lambda: T.tsum(T.pow_const(xp, 2.5)), [xp])
    add("sigmoid", lambda: T.tsum(T.mul(T.sigmoid(x), z)), [x])
    add("silu", lambda: T.tsum(T.mul(T.silu(x), z)), [x])
    add("softplus", lambda: T.tsum(T.mul(T.softplus(x), z)), [x])
    add("expm1_over_x", lambda: T.tsum(T.mul(T.expm1_over_x(x), z)), [x])
    add("softmax", lambda: T.tsum(T.mul(T.softmax(x, axis=-1), z)), [x])
    add("layer_norm", lambda: T.tsum(T.mul(T.layer_norm(x, axis=-1), z)), [x])
    add("sum", lambda: T.tsum(T.mul(T.tsum(x, axis=0), Tensor(z.data[0]))), [x])
    add("mean", lambda: T.tsum(T.mul(T.tmean(x, axis=1), Tensor(z.data[:, 0]))), [x])
    add("reshape", lambda: T.tsum(T.mul(T.reshape(x, 20), Tensor(z.data.ravel()))), [x])
    add("transpose", lambda: T.tsum(T.mul(T.transpose(x), Tensor(z.data.T))), [x])
    add("reverse", lambda: T.tsum(T.mul(T.reverse(x, 0), z)), [x])
    add("slice", lambda: T.tsum(T.mul(x[1:3, :2], Tensor(z.data[1:3, :2]))), [x])
    add("concat", lambda: T.tsum(T.mul(T.concat([x, x], axis=1),
                                       Tensor(np.hstack([z.data, z.data])))), [x])
    xc, kc = _leaf(rng, 6, 2), _leaf(rng, 2, 3)
    wc = Tensor(rng.standard_normal((6, 2)))
    add("causal_conv1d", lambda: T.tsum(T.mul(T.causal_conv1d(xc, kc), wc)), [xc, kc])

    # selective scan: input and parameters
    scan = SelectiveSsm(2, 4, rng)
    xs = _leaf(rng, 4, 2)
    ws = Tensor(rng.standard_normal((4, 2)))
    scan_params = list(scan.named_parameters().values())
    add("selective_scan", lambda: T.tsum(T.mul(scan.forward(xs), ws)),
        [xs] + scan_params)

    # bidirectional block (output projection perturbed away from zero init)
    block = BiMamba(6, rng, state_dim=3, conv_width=3)
    block.w_out.data = rng.standard_normal(block.w_out.shape) * 0.1
    xb = _leaf(rng, 4, 6)
    wb = Tensor(rng.standard_normal((4, 6)))
    add("bimamba", lambda: T.tsum(T.mul(block.forward(xb), wb)),
        [xb] + list(block.named_parameters().values()), sample=8)

    # attention
    attn = SelfAttentionBlock(8, 2, rng)
    xa = _leaf(rng, 3, 8)
    wa = Tensor(rng.standard_normal((3, 8)))
    add("self_attention_block", lambda: T.tsum(T.mul(attn.forward(xa), wa)),
        [xa] + list(attn.named_parameters().values()), sample=8)
    binm = Binm(8, 2, rng)
    x1, x2 = _leaf(rng, 2, 8), _leaf(rng, 3, 8)
    w1, w2 = Tensor(rng.standard_normal((2, 8))), Tensor(rng.standard_normal((3, 8)))

    def binm_loss():
        o1, o2 = binm.forward(x1, x2)
        return T.add(T.tsum(T.mul(o1, w1)), T.tsum(T.mul(o2, w2)))

    add("cross_attention", binm_loss,
        [x1, x2] + list(binm.named_parameters().values()), sample=8)

    # codecs
    sp = SpatialCodec([6, 5], rng, token_width=4, n_tokens=2, latent=4)
    s1 = Tensor(rng.random((2, 6)), requires_grad=True)
    s2 = Tensor(rng.random((2, 5)), requires_grad=True)
    t1, t2 = Tensor(s1.data.copy()), Tensor(s2.data.copy())

    def sp_loss():
        recon = sp.decode(sp.encode([s1, s2]))
        return sp.loss([t1, t2], recon)

    add("spatial_codec", sp_loss,
        [s1, s2] + list(sp.named_parameters().values()), sample=4)
    se = SequenceCodec(8, rng, token_width=4, n_tokens=2, latent=4, n_blocks=2)
    emb = Tensor(rng.random((2, 8)), requires_grad=True)
    target = Tensor(emb.data.copy())
    add("sequence_codec",
        lambda: se.loss(target, se.decode(se.encode(emb))),
        [emb] + list(se.named_parameters().values()), sample=4)

    # gating module and asymmetric loss
    cfg = ModelConfig(source_widths=(6, 5), seq_width=8, n_terms=3, latent=4,
                      token_width=4, n_tokens=2, seq_blocks=1, msl_blocks=1,
                      expert_hidden=4, expert_out=3, predictor_hidden=4)
    dsm = Dsm(6, 4, cfg, rng)
    xd = _leaf(rng, 2, 6, 4)
    wd = Tensor(rng.standard_normal((2, 18)))
    add("dsm_experts", lambda: T.tsum(T.mul(dsm.forward(xd, 0.05)[0], wd)),
        [xd] + list(dsm.named_parameters().values()), sample=8)
    ps = Tensor(rng.uniform(0.1, 0.9, (3, 4)), requires_grad=True)
    ys = Tensor((rng.random((3, 4)) < 0.5).astype(float))
    add("asymmetric_loss", lambda: asymmetric_loss(ps, ys, 1.0, 4.0), [ps])

    return rows


def full_model_check(seed=0, sample=100, tol=1e-3):
    """Finite-difference check of the whole model on a sampled parameter
    subset at a tiny configuration."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(source_widths=(6, 5), seq_width=8, n_terms=4, latent=8,
                      token_width=4, n_tokens=2, seq_blocks=1, msl_blocks=1,
                      n_heads=2, expert_hidden=4, expert_out=3, predictor_hidden=4)
    model = PredictionModel(cfg, rng)
    x1 = Tensor(rng.random((2, 6)))
    x2 = Tensor(rng.random((2, 5)))
    x3 = Tensor(rng.random((2, 8)))
    y = Tensor((rng.random((2, 4)) < 0.5).astype(float))

    def loss_fn():
        scores, _ = model.forward(x1, x2, x3)
        return model.loss(scores, y)

    params = list(model.named_parameters().values())
    total = sum(p.size for p in params)
    per = max(1, sample // len(params))
    err, ok = check_gradients(loss_fn, params, tol=tol, sample=per, rng=rng)
    return {"name": "full_model", "max_rel_err": err, "passed": ok,
            "sampled_from": total}
