"""Acceptance suite: one criterion per test, one pass/fail line each.

The heavier training runs share module-scoped fixtures so the whole suite
stays inside its runtime budgets.
"""

import os
import time

import numpy as np
import pytest

from dsrpgo import cli, data, gradcheck as gc, metrics, ssm, trainer
from dsrpgo.model import ModelConfig, select_experts
from dsrpgo.tensor import no_grad
from dsrpgo.trainer import CodecConfig, Schedule


def report(name, ok, detail=""):
    print(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"{name} failed: {detail}"


def train_fmax(ds, model):
    idx = ds.indices("train")
    x1, x2, x3 = ds.features(idx)
    with no_grad():
        scores, _ = model.forward(np.clip(x1, 0, 1), np.clip(x2, 0, 1), x3)
    return metrics.fmax(scores.data, ds.labels[idx])[0]


A4_CODEC = CodecConfig(token_width=8, n_tokens=4, latent=32, seq_blocks=2)


def a4_model_cfg(ds, branch="both"):
    return ModelConfig(source_widths=(ds.n, ds.attributes.shape[1]),
                       seq_width=ds.seq_embed.shape[1],
                       n_terms=len(ds.term_ids), latent=32, token_width=8,
                       n_tokens=4, seq_blocks=2, msl_blocks=1, n_heads=2,
                       expert_hidden=16, expert_out=8, predictor_hidden=32,
                       use_msl=branch != "mil-only",
                       use_mil=branch != "msl-only")


@pytest.fixture(scope="module")
def a4_bundle(overfit_task):
    """Pretrain the codecs and fine-tune the full model on the overfit task."""
    ds = overfit_task
    t0 = time.perf_counter()
    pre = trainer.pretrain(
        ds, Schedule("pretrain", 100, 1e-3, 100, 1e-4, dropout=0.1, seed=0),
        cfg=A4_CODEC)
    pretrained = (pre["spatial_groups"], pre["sequence_groups"])
    out = trainer.finetune(
        ds, Schedule("finetune", 200, 1e-3, 0, 1e-3, dropout=0.0, seed=0),
        a4_model_cfg(ds), pretrained=pretrained, eval_each_epoch=False)
    elapsed = time.perf_counter() - t0
    return {"ds": ds, "pretrained": pretrained, "model": out["model"],
            "elapsed": elapsed}


def test_a1_gradient_integrity():
    t0 = time.perf_counter()
    rows = gc.run_all(seed=0, tol=1e-4)
    rows.append(gc.full_model_check(seed=0))
    elapsed = time.perf_counter() - t0
    worst = max(r["max_rel_err"] for r in rows)
    ok = all(r["passed"] for r in rows) and elapsed < 60
    report("A1 gradient integrity", ok,
           f"{len(rows)} checks, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_a2_scan_duality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        L = int(rng.integers(1, 65))
        n = int(rng.integers(1, 5))
        a = -rng.uniform(0.05, 3.0, n)
        b = rng.standard_normal(n)
        c = rng.standard_normal(n)
        d = rng.standard_normal()
        delta = rng.uniform(0.01, 1.0)
        abar, bbar = ssm.discretize(a, b, delta)
        x = rng.standard_normal(L)
        yr = ssm.scan_recurrent(x, abar.data, bbar.data, c, d)
        yc = ssm.scan_convolutional(x, abar.data, bbar.data, c, d)
        worst = max(worst, float(np.abs(yr - yc).max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 30
    report("A2 scan duality", ok,
           f"1000 draws, worst gap {worst:.2e}, {elapsed:.1f}s")


def test_a3_pretraining_halves_losses(pretrain_corpus):
    t0 = time.perf_counter()
    out = trainer.pretrain(
        pretrain_corpus,
        Schedule("pretrain", 100, 1e-3, 100, 1e-4, dropout=0.1, seed=0),
        cfg=CodecConfig(token_width=8, n_tokens=2, latent=16, seq_blocks=2))
    elapsed = time.perf_counter() - t0
    sp = out["spatial_curve"]
    se = out["sequence_curve"]
    r_sp = sp[-1]["loss"] / sp[0]["loss"]
    r_se = se[-1]["loss"] / se[0]["loss"]
    ok = r_sp < 0.5 and r_se < 0.5 and elapsed < 180
    report("A3 reconstructive pretraining", ok,
           f"L_sp ratio {r_sp:.3f}, L_se ratio {r_se:.3f}, {elapsed:.1f}s")


def test_a4_end_to_end_overfit(a4_bundle):
    fm = train_fmax(a4_bundle["ds"], a4_bundle["model"])
    ok = fm >= 0.95 and a4_bundle["elapsed"] < 300
    report("A4 end-to-end overfit", ok,
           f"train Fmax {fm:.4f} in 200 epochs, {a4_bundle['elapsed']:.1f}s")


def test_a5_ablation_directionality(a4_bundle):
    ds = a4_bundle["ds"]
    pretrained = a4_bundle["pretrained"]

    def run(branch, seed, epochs, dropout, pre):
        sched = Schedule("finetune", epochs, 1e-3, 0, 1e-3,
                         dropout=dropout, seed=seed)
        out = trainer.finetune(ds, sched, a4_model_cfg(ds, branch),
                               pretrained=pre, eval_each_epoch=False)
        return train_fmax(ds, out["model"])

    means = {}
    for branch in ("both", "msl-only", "mil-only"):
        means[branch] = np.mean([run(branch, s, 200, 0.0, pretrained)
                                 for s in (0, 1, 2)])
    with_pre = np.mean([run("both", s, 40, 0.3, pretrained)
                        for s in (0, 1, 2)])
    without = np.mean([run("both", s, 40, 0.3, None) for s in (0, 1, 2)])
    ok = (means["both"] >= means["msl-only"]
          and means["both"] >= means["mil-only"]
          and without < with_pre)
    report("A5 ablation directionality", ok,
           f"full {means['both']:.4f} vs MSLB {means['msl-only']:.4f} / "
           f"MILB {means['mil-only']:.4f}; equal-epoch Fmax with pretrain "
           f"{with_pre:.4f} vs without {without:.4f}")


def brute_fmax(scores, labels, grid):
    best = 0.0
    has_label = labels.sum(axis=1) > 0
    for tau in grid:
        pred = scores >= tau
        covered = np.flatnonzero(pred.sum(axis=1) > 0)
        if covered.size == 0:
            continue
        prec = np.mean([(pred[i] & (labels[i] > 0)).sum() / pred[i].sum()
                        for i in covered])
        rec = np.mean([(pred[i] & (labels[i] > 0)).sum() / labels[i].sum()
                       for i in np.flatnonzero(has_label)])
        if prec + rec > 0:
            best = max(best, 2 * prec * rec / (prec + rec))
    return best


def brute_aupr(scores, labels):
    pos = labels.sum()
    area, prev_r = 0.0, 0.0
    for tau in sorted(set(scores), reverse=True):
        pred = scores >= tau
        p = (pred & (labels > 0)).sum() / pred.sum()
        r = (pred & (labels > 0)).sum() / pos
        area += (r - prev_r) * p
        prev_r = r
    return area


def test_a6_metric_oracles():
    t0 = time.perf_counter()
    grid = np.linspace(0.0, 1.0, 101)
    worst = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 11))
        m = int(rng.integers(1, 6))
        scores = np.round(rng.random((n, m)), 2)
        labels = (rng.random((n, m)) < 0.4).astype(float)
        labels[rng.integers(n), rng.integers(m)] = 1.0  # ensure a positive
        gaps = []
        gaps.append(metrics.fmax(scores, labels)[0]
                    - brute_fmax(scores, labels, grid))
        gaps.append(metrics.aupr_micro(scores, labels)
                    - brute_aupr(scores.ravel(), labels.ravel()))
        per = [brute_aupr(scores[:, j], labels[:, j])
               for j in range(m) if labels[:, j].sum() > 0]
        gaps.append(metrics.aupr_macro(scores, labels)[0] - np.mean(per))
        f1, acc = metrics.f1_acc(scores, labels)
        pred = scores >= 0.5
        ref_f1 = np.mean([1.0 if pred[i].sum() + labels[i].sum() == 0 else
                          2 * (pred[i] * labels[i]).sum()
                          / (pred[i].sum() + labels[i].sum())
                          for i in range(n)])
        ref_acc = np.mean([(pred[i] == (labels[i] > 0)).all()
                           for i in range(n)])
        gaps.append(f1 - ref_f1)
        gaps.append(acc - ref_acc)
        worst = max(worst, max(abs(g) for g in gaps))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 60
    report("A6 metric oracle equivalence", ok,
           f"1000 instances, worst gap {worst:.2e}, {elapsed:.1f}s")


def test_a7_dsm_contract():
    hand = [
        ([0.7, 0.2, 0.1], 0.5, (0,), [1.0, 0.0, 0.0]),
        ([0.5, 0.3, 0.2], 0.25, (0, 1), [0.625, 0.375, 0.0]),
        ([0.4, 0.35, 0.25], 0.0, (0, 1, 2), [0.4, 0.35, 0.25]),
        ([0.4, 0.35, 0.25], 0.5, (0,), [1.0, 0.0, 0.0]),  # top-1 fallback
    ]
    for p, t, active, weights in hand:
        d = select_experts(p, t)
        assert d.active == active, (p, t)
        np.testing.assert_allclose(d.weights, weights, atol=1e-12)
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        p = rng.dirichlet(np.ones(int(rng.integers(2, 9))))
        t_lo, t_hi = sorted(rng.random(2))
        lo, hi = select_experts(p, t_lo), select_experts(p, t_hi)
        assert abs(lo.weights.sum() - 1.0) < 1e-12
        assert abs(hi.weights.sum() - 1.0) < 1e-12
        assert set(hi.active) <= set(lo.active)
    report("A7 DSM contract", True,
           "4 hand cases exact; sum-to-one and threshold monotonicity "
           "on 10000 gate outputs")


def test_a8_db_directionality(a4_bundle):
    ds = a4_bundle["ds"]
    model = a4_bundle["model"]
    labeled = np.sort(np.concatenate([ds.indices(t)
                                      for t in ("train", "valid", "test")]))
    f1, f2, f3 = ds.features(labeled)
    clusters = metrics.label_set_clusters(ds.labels[labeled])
    with no_grad():
        _, _, emb = model.forward(np.clip(f1, 0, 1), np.clip(f2, 0, 1), f3,
                                  return_embeddings=True)
    db = {"o_PPI": metrics.davies_bouldin(f1, clusters),
          "o_Attribute": metrics.davies_bouldin(f2, clusters),
          "o_Sequence": metrics.davies_bouldin(f3, clusters),
          "DSM": metrics.davies_bouldin(emb["DSM"], clusters)}
    ok = all(db["DSM"] < db[k] for k in ("o_PPI", "o_Attribute", "o_Sequence"))
    report("A8 DB-score directionality", ok,
           " ".join(f"{k}={v:.3f}" for k, v in db.items()))


def test_a9_reproducibility(tmp_path):
    ds_dir = str(tmp_path / "ds")
    out = str(tmp_path / "pre")
    base = ["--no-timestamp"]
    assert cli.main([*base, "synth", "--proteins", "16", "--clusters", "4",
                     "--terms", "4", "--attributes", "12", "--embed-width",
                     "16", "--out", ds_dir]) == 0
    argv = [*base, "pretrain", "--dataset", ds_dir, "--out", out,
            "--latent", "16", "--token-width", "8", "--n-tokens", "2",
            "--seq-blocks", "2", "--epochs", "4",
            "--lr1", "1e-3", "--lr2", "1e-4"]
    assert cli.main(argv) == 0
    first = {name: open(os.path.join(out, name), "rb").read()
             for name in sorted(os.listdir(out))}
    assert cli.main(argv) == 0
    stale = [name for name in first
             if open(os.path.join(out, name), "rb").read() != first[name]]
    report("A9 reproducibility", not stale,
           f"{len(first)} files bitwise-identical on re-run"
           + (f"; differing: {stale}" if stale else ""))
