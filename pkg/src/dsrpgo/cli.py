"""Command-line entry point.

Subcommands: synth, pretrain, finetune, eval, gradcheck, ablate.  Every
command writes a ``resolved-config.json`` next to its outputs; re-running
with the same flags and seed reproduces the outputs byte for byte (pass
``--no-timestamp`` to drop the one non-deterministic field).  Exit codes:
0 success, 1 validation error, 2 numerical divergence, 3 I/O error.
``DSRPGO_THREADS`` caps internal parallelism (everything here is
single-process; the cap is recorded in the resolved config).
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import data, trainer, plots, gradcheck as gc
from . import metrics as M
from .data import DatasetError, SynthSpec
from .model import ModelConfig
from .tensor import no_grad
from .trainer import (Schedule, CodecConfig, DivergenceError, config_fingerprint,
                      save_checkpoint, load_checkpoint)

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 1, 2, 3


def thread_cap():
    try:
        return max(1, int(os.environ.get("DSRPGO_THREADS", "1")))
    except ValueError:
        return 1


def _write_resolved_config(out_dir, command, args_dict, no_timestamp):
    cfg = {"command": command, **args_dict, "threads": thread_cap()}
    cfg["fingerprint"] = config_fingerprint(cfg)
    if not no_timestamp:
        cfg["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    path = os.path.join(out_dir, "resolved-config.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return cfg


def _tsv_header(cfg):
    lines = [f"# fingerprint\t{cfg['fingerprint']}", f"# seed\t{cfg.get('seed', '')}"]
    if "timestamp" in cfg:
        lines.append(f"# timestamp\t{cfg['timestamp']}")
    return lines


def _write_tsv(path, cfg, columns, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in _tsv_header(cfg):
            fh.write(line + "\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row.get(c, "")) for c in columns) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


# -- flag groups --------------------------------------------------------------


def _add_codec_flags(p):
    p.add_argument("--latent", type=int, default=64)
    p.add_argument("--token-width", type=int, default=16)
    p.add_argument("--n-tokens", type=int, default=4)
    p.add_argument("--seq-blocks", type=int, default=6)
    p.add_argument("--heads", type=int, default=2)


def _add_schedule_flags(p, epochs, lr1, lr2, dropout):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--stage1-epochs", type=int, default=None,
                   help="epochs at the first learning rate (default: half)")
    p.add_argument("--lr1", type=float, default=lr1)
    p.add_argument("--lr2", type=float, default=lr2)
    p.add_argument("--dropout", type=float, default=dropout)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--batch-size", type=int, default=0, help="0 = full batch")


def _add_model_flags(p):
    p.add_argument("--msl-blocks", type=int, default=2)
    p.add_argument("--expert-hidden", type=int, default=64)
    p.add_argument("--expert-out", type=int, default=32)
    p.add_argument("--predictor-hidden", type=int, default=64)
    p.add_argument("--threshold", type=float, default=None,
                   help="gate confidence threshold t (default 1/V)")
    p.add_argument("--gamma-pos", type=float, default=0.0)
    p.add_argument("--gamma-neg", type=float, default=4.0)
    p.add_argument("--branch", choices=["both", "msl-only", "mil-only"],
                   default="both")
    p.add_argument("--no-binm", action="store_true")
    p.add_argument("--no-dsm", action="store_true")


def _schedule_from_args(args, phase):
    total = args.epochs
    s1 = args.stage1_epochs if args.stage1_epochs is not None else total // 2
    if s1 > total:
        raise DatasetError("bad-schedule", "stage1 epochs exceed total epochs")
    return Schedule(phase, s1, args.lr1, total - s1, args.lr2,
                    dropout=args.dropout, weight_decay=args.weight_decay,
                    batch_size=args.batch_size, seed=args.seed)


def _codec_cfg(args):
    return CodecConfig(token_width=args.token_width, n_tokens=args.n_tokens,
                       latent=args.latent, seq_blocks=args.seq_blocks,
                       n_heads=args.heads)


def _model_cfg(args, dataset):
    return ModelConfig(
        source_widths=(dataset.ppi.shape[1], dataset.attributes.shape[1]),
        seq_width=dataset.seq_embed.shape[1], n_terms=len(dataset.term_ids),
        latent=args.latent, token_width=args.token_width, n_tokens=args.n_tokens,
        seq_blocks=args.seq_blocks, msl_blocks=args.msl_blocks, n_heads=args.heads,
        expert_hidden=args.expert_hidden, expert_out=args.expert_out,
        predictor_hidden=args.predictor_hidden, threshold=args.threshold,
        gamma_pos=args.gamma_pos, gamma_neg=args.gamma_neg,
        use_msl=args.branch != "mil-only", use_mil=args.branch != "msl-only",
        use_binm=not args.no_binm,
        use_dsm=not args.no_dsm)


# -- commands -----------------------------------------------------------------


def cmd_synth(args):
    spec = SynthSpec(n_proteins=args.proteins, n_terms=args.terms,
                     n_clusters=args.clusters, n_attributes=args.attributes,
                     embed_width=args.embed_width, noise=args.noise,
                     seed=args.seed)
    ds = data.synth_dataset(spec)
    ds, absent = data.split_dataset(ds, tuple(args.fractions), seed=args.seed)
    data.save_dataset(ds, args.out, force=args.force)
    _write_resolved_config(args.out, "synth", _args_dict(args), args.no_timestamp)
    counts = {tag: len(ds.indices(tag)) for tag in ("train", "valid", "test")}
    print(f"wrote {ds.n} proteins, {len(ds.term_ids)} terms to {args.out}")
    print(f"splits: {counts}")
    if absent:
        print(f"terms with no train positive: {', '.join(absent)}")
    return EXIT_OK


def cmd_pretrain(args):
    ds = data.load_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    cfg = _write_resolved_config(args.out, "pretrain", _args_dict(args),
                                 args.no_timestamp)
    schedule = _schedule_from_args(args, "pretrain")
    out = trainer.pretrain(ds, schedule, _codec_cfg(args))
    fp = cfg["fingerprint"]
    save_checkpoint(os.path.join(args.out, "pssi.ckpt"), out["spatial_groups"],
                    meta=out["spatial_meta"], fingerprint=fp)
    save_checkpoint(os.path.join(args.out, "psei.ckpt"), out["sequence_groups"],
                    meta=out["sequence_meta"], fingerprint=fp)
    cols = ["epoch", "lr", "loss"]
    _write_tsv(os.path.join(args.out, "pssi_loss.tsv"), cfg, cols, out["spatial_curve"])
    _write_tsv(os.path.join(args.out, "psei_loss.tsv"), cfg, cols, out["sequence_curve"])
    plots.loss_curves({"spatial codec": out["spatial_curve"],
                       "sequence codec": out["sequence_curve"]},
                      os.path.join(args.out, "pretrain_loss.png"))
    for name, curve in (("spatial", out["spatial_curve"]),
                        ("sequence", out["sequence_curve"])):
        if curve:
            print(f"{name} loss: {curve[0]['loss']:.6g} -> {curve[-1]['loss']:.6g}")
    return EXIT_OK


def _load_pretrained_pair(args):
    if args.no_pretrained:
        return None
    if not (args.pssi and args.psei):
        raise DatasetError("missing-checkpoint",
                           "pass --pssi and --psei, or --no-pretrained")
    sp, _, _ = load_checkpoint(args.pssi)
    se, _, _ = load_checkpoint(args.psei)
    return sp, se


def cmd_finetune(args):
    ds = data.load_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    cfg = _write_resolved_config(args.out, "finetune", _args_dict(args),
                                 args.no_timestamp)
    schedule = _schedule_from_args(args, "finetune")
    model_cfg = _model_cfg(args, ds)
    pretrained = _load_pretrained_pair(args)
    result = trainer.finetune(ds, schedule, model_cfg, pretrained=pretrained)
    fp = cfg["fingerprint"]
    meta = dict(result["final_meta"])
    meta["model_config"] = _model_cfg_dict(model_cfg)
    save_checkpoint(os.path.join(args.out, "model.ckpt"), result["best"]["params"],
                    meta={**meta, "best_epoch": result["best"]["epoch"],
                          "best_fmax": result["best"]["fmax"]}, fingerprint=fp)
    save_checkpoint(os.path.join(args.out, "final.ckpt"), result["final_groups"],
                    meta=meta, fingerprint=fp)
    cols = ["epoch", "lr", "loss", "fmax", "m-aupr", "M-aupr", "f1", "acc"]
    _write_tsv(os.path.join(args.out, "metrics.tsv"), cfg, cols, result["curve"])
    rows_with_metrics = [r for r in result["curve"] if "fmax" in r]
    if rows_with_metrics:
        plots.metric_curves(rows_with_metrics,
                            os.path.join(args.out, "finetune_metrics.png"))
    if result["manifest"] is not None:
        with open(os.path.join(args.out, "pretrain-manifest.json"), "w",
                  encoding="utf-8", newline="\n") as fh:
            json.dump(result["manifest"], fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"best validation Fmax {result['best']['fmax']:.4f} "
          f"at epoch {result['best']['epoch']}")
    return EXIT_OK


def _model_cfg_dict(cfg):
    d = dict(cfg.__dict__)
    d["source_widths"] = list(d["source_widths"])
    return d


def _rebuild_model(ds, ckpt_path):
    groups, meta, _ = load_checkpoint(ckpt_path)
    cfg_dict = meta.get("model_config")
    if cfg_dict is None:
        raise DatasetError("bad-checkpoint", f"{ckpt_path} lacks a model config")
    cfg_dict = dict(cfg_dict)
    cfg_dict["source_widths"] = tuple(cfg_dict["source_widths"])
    model_cfg = ModelConfig(**cfg_dict)
    model = trainer.build_model(ds, model_cfg, seed=0)
    params = {k: v for k, v in groups.items() if not k.startswith("opt.")}
    trainer.set_model_params(model, params)
    return model


def cmd_eval(args):
    ds = data.load_dataset(args.dataset)
    test_idx = ds.indices("test")
    if len(test_idx) == 0:
        raise DatasetError("missing-split", "dataset has no test split")
    os.makedirs(args.out, exist_ok=True)
    cfg = _write_resolved_config(args.out, "eval", _args_dict(args),
                                 args.no_timestamp)
    model = _rebuild_model(ds, args.model)
    x1, x2, x3 = ds.features(test_idx)
    with no_grad():
        scores, _ = model.forward(np.clip(x1, 0.0, 1.0), np.clip(x2, 0.0, 1.0), x3)
    report = M.evaluate(scores.data, ds.labels[test_idx])

    # Davies-Bouldin scores over all labeled proteins, clusters = label sets
    labeled = np.concatenate([ds.indices(t) for t in ("train", "valid", "test")])
    labeled.sort()
    f1, f2, f3 = ds.features(labeled)
    clusters = M.label_set_clusters(ds.labels[labeled])
    with no_grad():
        _, _, embeds = model.forward(np.clip(f1, 0.0, 1.0), np.clip(f2, 0.0, 1.0),
                                     f3, return_embeddings=True)
    db = {}
    for name, emb in (("o_PPI", f1), ("o_Attribute", f2), ("o_Sequence", f3),
                      ("MSL", embeds["MSL"]), ("MIL", embeds["MIL"]),
                      ("DSM", embeds["DSM"])):
        if emb is None:
            continue
        db[name] = M.davies_bouldin(emb, clusters)
    report.db_scores = db

    rows = [{"key": "note", "value":
             "f1 = example-based F1 at tau 0.5; acc = subset accuracy (artifact-defined)"},
            {"key": "fmax", "value": report.fmax},
            {"key": "fmax_threshold", "value": report.fmax_threshold},
            {"key": "m-aupr", "value": report.m_aupr},
            {"key": "M-aupr", "value": report.M_aupr},
            {"key": "f1", "value": report.f1},
            {"key": "acc", "value": report.acc},
            {"key": "macro_skipped_terms", "value": report.macro_skipped_terms}]
    rows += [{"key": f"db:{k}", "value": v} for k, v in db.items()]
    _write_tsv(os.path.join(args.out, "report.tsv"), cfg, ["key", "value"], rows)
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    plots.db_bars(db, os.path.join(args.out, "db_scores.png"))
    for row in rows:
        print(f"{row['key']}\t{_fmt(row['value'])}")
    return EXIT_OK


def cmd_gradcheck(args):
    rows = gc.run_all(seed=args.seed, tol=args.tol)
    rows.append(gc.full_model_check(seed=args.seed))
    if args.inject_fault:
        rows.append({"name": "injected_fault", "max_rel_err": 1.0, "passed": False})
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        cfg = _write_resolved_config(args.out, "gradcheck", _args_dict(args),
                                     args.no_timestamp)
        _write_tsv(os.path.join(args.out, "gradcheck.tsv"), cfg,
                   ["name", "max_rel_err", "passed"], rows)
    ok = True
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{r['name']:24s} {r['max_rel_err']:.3e}  {status}")
        ok = ok and bool(r["passed"])
    return EXIT_OK if ok else EXIT_DIVERGENCE


ABLATION_ROWS = ["MSLB", "MILB", "MSLB+MILB", "w/o-BInM", "w/o-DSM",
                 "w/o-SP-F", "w/o-SE-F", "w/o-pretrain"]


def _ablation_variant(name, args, ds):
    """Per-row overrides: (branch, no_binm, no_dsm, zero_spatial, zero_seq,
    use_pretrained)."""
    table = {
        "MSLB": ("msl-only", False, False, False, False, True),
        "MILB": ("mil-only", False, False, False, False, True),
        "MSLB+MILB": ("both", False, False, False, False, True),
        "w/o-BInM": ("both", True, False, False, False, True),
        "w/o-DSM": ("both", False, True, False, False, True),
        "w/o-SP-F": ("both", True, False, True, False, True),
        "w/o-SE-F": ("both", True, False, False, True, True),
        "w/o-pretrain": ("both", False, False, False, False, False),
    }
    return table[name]


def cmd_ablate(args):
    ds = data.load_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    cfg = _write_resolved_config(args.out, "ablate", _args_dict(args),
                                 args.no_timestamp)
    names = [args.only] if args.only else ABLATION_ROWS
    for name in names:
        if name not in ABLATION_ROWS:
            raise DatasetError("bad-toggle",
                               f"unknown configuration {name!r}; choose from "
                               f"{', '.join(ABLATION_ROWS)}")
    pretrained = _load_pretrained_pair(args) if not args.no_pretrained else None
    eval_idx = ds.indices("test")
    eval_tag = "test"
    if len(eval_idx) == 0:
        eval_idx = ds.indices("train")
        eval_tag = "train"
    table = []
    for name in names:
        branch, no_binm, no_dsm, zero_sp, zero_se, use_pre = \
            _ablation_variant(name, args, ds)
        sub = argparse.Namespace(**vars(args))
        sub.branch, sub.no_binm, sub.no_dsm = branch, no_binm, no_dsm
        model_cfg = _model_cfg(sub, ds)
        work = _masked_dataset(ds, zero_sp, zero_se)
        schedule = _schedule_from_args(args, "finetune")
        result = trainer.finetune(
            work, schedule, model_cfg,
            pretrained=pretrained if use_pre else None)
        model = trainer.set_model_params(result["model"], result["best"]["params"])
        x1, x2, x3 = work.features(eval_idx)
        with no_grad():
            scores, _ = model.forward(np.clip(x1, 0.0, 1.0),
                                      np.clip(x2, 0.0, 1.0), x3)
        rep = M.evaluate(scores.data, work.labels[eval_idx])
        table.append((name, {"fmax": rep.fmax, "m-aupr": rep.m_aupr,
                             "M-aupr": rep.M_aupr, "f1": rep.f1, "acc": rep.acc}))
        print(f"{name:14s} fmax={rep.fmax:.4f} ({eval_tag} split)")
    cols = ["configuration", "fmax", "m-aupr", "M-aupr", "f1", "acc"]
    rows = [{"configuration": name, **vals} for name, vals in table]
    _write_tsv(os.path.join(args.out, "ablation.tsv"), cfg, cols, rows)
    plots.ablation_bars(table, os.path.join(args.out, "ablation.png"))
    return EXIT_OK


def _masked_dataset(ds, zero_spatial, zero_sequence):
    if not (zero_spatial or zero_sequence):
        return ds
    import copy
    work = copy.copy(ds)
    if zero_spatial:
        work.ppi = np.zeros_like(ds.ppi)
        work.attributes = np.zeros_like(ds.attributes)
    if zero_sequence:
        work.seq_embed = np.zeros_like(ds.seq_embed)
        work.embed_min = np.zeros_like(ds.embed_min)
        work.embed_max = np.zeros_like(ds.embed_max)
    return work


# -- parser -------------------------------------------------------------------


def _args_dict(args):
    skip = {"func", "no_timestamp"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def build_parser():
    parser = argparse.ArgumentParser(prog="dsrpgo")
    parser.add_argument("--no-timestamp", action="store_true",
                        help="omit timestamps from emitted files (test mode)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--proteins", type=int, default=64)
    p.add_argument("--terms", type=int, default=8)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--attributes", type=int, default=24)
    p.add_argument("--embed-width", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--fractions", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="reconstructive pretraining of both codecs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_codec_flags(p)
    _add_schedule_flags(p, epochs=200, lr1=1e-5, lr2=1e-6, dropout=0.1)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the prediction model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pssi", help="spatial codec checkpoint")
    p.add_argument("--psei", help="sequence codec checkpoint")
    p.add_argument("--no-pretrained", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    _add_codec_flags(p)
    _add_schedule_flags(p, epochs=100, lr1=1e-3, lr2=1e-4, dropout=0.3)
    _add_model_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a model checkpoint on the test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", help="optional report directory")
    p.add_argument("--inject-fault", action="store_true",
                   help=argparse.SUPPRESS)  # negative control for tests
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run the component-toggle matrix")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pssi")
    p.add_argument("--psei")
    p.add_argument("--no-pretrained", action="store_true")
    p.add_argument("--only", help="run a single configuration row")
    p.add_argument("--seed", type=int, default=0)
    _add_codec_flags(p)
    _add_schedule_flags(p, epochs=100, lr1=1e-3, lr2=1e-4, dropout=0.3)
    _add_model_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
