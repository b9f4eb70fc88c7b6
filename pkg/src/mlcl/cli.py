"""``mlcl`` command line: data generation, training, evaluation and analysis.

Exit codes: 0 success, 1 configuration or I/O error, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ConfigError, PROFILES, describe_keys, load_config
from .data import DatasetError, generate_longtail_dataset, load_splits, save_dataset
from .encoder import EncoderParams, backbone, encode
from .evaluation import (attraction_repulsion_report, clustering_sweep,
                         collapse_demo, label_combination_classes, linear_evaluation)
from .gradcheck import LOSSES, grad_check
from .losses import LADDER
from .numerics import make_rng
from .optim import DivergenceError
from .report import format_table, to_json, write_report
from .training import CONTRASTIVE, train_contrastive, train_supervised

log = logging.getLogger("mlcl")

GRAD_TOL = 1e-5


def _require(path, what):
    if not path:
        raise ConfigError(f"paths.{what}: required (set it in [paths] or pass --{what})")
    return path


def _load_data(cfg, path):
    try:
        splits = load_splits(_require(path, "dataset"), cfg.data.num_labels)
    except FileNotFoundError:
        raise ConfigError(f"paths.dataset: file not found: {path}") from None
    missing = {"train", "val", "test"} - splits.keys()
    if missing:
        raise DatasetError(f"{path}: missing splits {sorted(missing)}")
    return splits


def _load_ckpt(path):
    try:
        return checkpoint.load(_require(path, "checkpoint"))
    except FileNotFoundError:
        raise ConfigError(f"paths.checkpoint: file not found: {path}") from None


def _reprs(enc, splits):
    return {k: (backbone(enc, ds.features), ds.labels) for k, ds in splits.items()}


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg, args):
    out = _require(args.out or cfg.paths.dataset, "out")
    splits = generate_longtail_dataset(cfg.data)
    save_dataset(splits, out)
    print(f"wrote {out}")
    summary = {k: {"n": len(ds), "mean_labels": ds.mean_labels,
                   "label_frequencies": ds.label_frequencies.tolist()} for k, ds in splits.items()}
    write_report(summary, str(out) + ".stats.json")
    return 0


def _train(cfg, splits, seed=None):
    tc = cfg.train if seed is None else dataclasses.replace(cfg.train, seed=seed)
    if tc.loss in CONTRASTIVE:
        return train_contrastive(splits, tc, cfg.loss, cfg.eval)
    return train_supervised(splits, tc, cfg.loss, cfg.eval.threshold)


def cmd_train(cfg, args):
    splits = _load_data(cfg, args.data or cfg.paths.dataset)
    out = Path(_require(args.out or cfg.paths.checkpoint, "out"))
    result = _train(cfg, splits)
    checkpoint.save(out, result.tensors)
    print(f"wrote {out}")
    metrics_path = Path(str(out) + ".metrics.jsonl")
    metrics_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in result.log), encoding="utf-8")
    print(f"wrote {metrics_path}")
    write_report({"loss": cfg.train.loss, "chosen_checkpoint": result.chosen,
                  "selection_val_micro_f1": result.selection, "steps": result.steps},
                 str(out) + ".summary.json")
    return 0


def cmd_linear_eval(cfg, args):
    splits = _load_data(cfg, args.data or cfg.paths.dataset)
    enc = EncoderParams.from_tensors(_load_ckpt(args.checkpoint or cfg.paths.checkpoint))
    res = linear_evaluation(_reprs(enc, splits), cfg.eval)
    report = res.metrics.to_report()
    report["absent_labels"] = res.absent_labels
    report["val"] = res.val_metrics.to_report()
    print(format_table(["split", "micro_f1", "macro_f1", "hamming_x1e3"],
                       [["test", report["micro_f1"], report["macro_f1"], report["hamming"]],
                        ["val", report["val"]["micro_f1"], report["val"]["macro_f1"], report["val"]["hamming"]]]),
          end="")
    if res.absent_labels:
        print(f"labels absent from train (predicted negative): {res.absent_labels}")
    out = args.out or cfg.paths.out
    if out:
        write_report(report, out)
    else:
        print(to_json(report), end="")
    return 0


def cmd_grad_check(cfg, args):
    n = args.seeds or 20
    rows = []
    for sel in LOSSES + ("encoder",):
        worst = max((grad_check(sel, seed) for seed in range(n)), key=lambda r: r.max_rel_error)
        rows.append([sel, n, worst.max_rel_error, "PASS" if worst.passed(GRAD_TOL) else "FAIL"])
    header = ["loss", "instances", "max_rel_error", "status"]
    print(format_table(header, rows, ".2e"), end="")
    if args.out:
        write_report({"tolerance": GRAD_TOL, "rows": [dict(zip(header, r)) for r in rows]},
                     args.out, (header, rows))
    return 0 if all(r[3] == "PASS" for r in rows) else 1


def attrep_batch(labels, size, seed):
    """Seeded batch with the most frequent label combination as target class."""
    cc = label_combination_classes(labels, 1.0)
    ids = cc.class_ids
    order = make_rng(seed).permutation(len(ids))
    batch = list(order[:size])
    members = [i for i in order if ids[i] == 0]
    have = [i for i in batch if ids[i] == 0]
    for extra in members:
        if len(have) >= 2:
            break
        if extra not in have:
            victim = next(i for i in reversed(batch) if ids[i] != 0)
            batch[batch.index(victim)] = extra
            have.append(extra)
    batch = np.array(sorted(batch))
    return batch, ids[batch]


def cmd_repr_analysis(cfg, args):
    splits = _load_data(cfg, args.data or cfg.paths.dataset)
    enc = EncoderParams.from_tensors(_load_ckpt(args.checkpoint or cfg.paths.checkpoint))
    ds = splits[cfg.analysis.split]
    rows = clustering_sweep(backbone(enc, ds.features), ds.labels, cfg.analysis.fractions)
    out = Path(_require(args.out or cfg.paths.out, "out"))
    header = ["fraction", "silhouette", "dbi"]
    print(format_table(header, rows), end="")
    idx, ids = attrep_batch(ds.labels, cfg.analysis.attrep_batch, cfg.analysis.seed)
    z = encode(enc, ds.features[idx]).projected
    att = attraction_repulsion_report(z, ids, 0, cfg.analysis.attrep_tau)
    print(f"attraction/repulsion: bound {att.bound:.4f} <= supcon {att.actual:.4f} (gap {att.gap:.4f})")
    results = {"sweep": [dict(zip(header, r)) for r in rows], "attraction_repulsion": att.to_dict(),
               "batch_indices": idx.tolist()}
    write_report(results, out, (header, rows))
    return 0


def cmd_ablation(cfg, args):
    path = args.data or cfg.paths.dataset
    splits = _load_data(cfg, path) if path else generate_longtail_dataset(cfg.data)
    n = args.seeds or 3
    per_rung = {}
    for rung in LADDER:
        tc = dataclasses.replace(cfg.train, loss=rung)
        scores = []
        for s in range(n):
            rc = dataclasses.replace(cfg, train=dataclasses.replace(tc, seed=cfg.train.seed + s))
            result = _train(rc, splits)
            m = linear_evaluation(_reprs(result.encoder, splits), cfg.eval).metrics
            scores.append(m)
            log.info("%s seed %d micro %.4f macro %.4f", rung, s, m.micro_f1, m.macro_f1)
        per_rung[rung] = scores
    header = ["loss", "micro_f1", "macro_f1", "hamming_x1e3"]
    rows = []
    summary = {"seeds": n, "rungs": {}}
    for rung, scores in per_rung.items():
        mean = [float(np.mean([getattr(m, k) for m in scores])) for k in ("micro_f1", "macro_f1", "hamming")]
        rows.append([rung, round(100 * mean[0], 2), round(100 * mean[1], 2), round(1000 * mean[2], 2)])
        summary["rungs"][rung] = {"micro_f1": mean[0], "macro_f1": mean[1],
                                  "hamming": round(1000 * mean[2], 2),
                                  "per_seed": [m.to_report() for m in scores]}
    print(format_table(header, rows, ".2f"), end="")
    out = args.out or cfg.paths.out
    if out:
        write_report(summary, out, (header, rows))
    return 0


def cmd_collapse_demo(cfg, args):
    c = cfg.collapse
    res = collapse_demo(c.n, c.num_labels, c.dim, c.steps, c.tau, c.lr, c.seed)
    cos = res.report.off_diagonal_cosines()
    target = -1.0 / (c.num_labels - 1)
    print(f"max within-label variance {res.report.max_variance:.3e}")
    print(f"centroid cosines in [{cos.min():.4f}, {cos.max():.4f}] (simplex value {target:.4f})")
    results = {"within_variance": res.report.within_variance,
               "centroid_cosines": res.report.centroid_cosines,
               "simplex_cosine": target, "loss_trace": res.losses, "steps": res.steps}
    out = args.out or cfg.paths.out
    if out:
        write_report(results, out)
    return 0


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate a synthetic long-tailed dataset (JSON lines)"),
    "train": (cmd_train, "train an encoder; writes checkpoint and per-epoch metrics log"),
    "linear-eval": (cmd_linear_eval, "linear evaluation of a checkpoint's frozen backbone"),
    "grad-check": (cmd_grad_check, "finite-difference check of every loss gradient"),
    "repr-analysis": (cmd_repr_analysis, "clustering sweep and attraction/repulsion report"),
    "ablation": (cmd_ablation, "train and linearly evaluate the base->bqueue->bqproto->msc ladder"),
    "collapse-demo": (cmd_collapse_demo, "show per-label collapse under the per-label contrastive loss"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlcl", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=describe_keys(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", metavar="PATH", help="TOML config file")
        p.add_argument("--out", metavar="PATH", help="output path")
        p.add_argument("--profile", choices=PROFILES, default="desk")
        p.add_argument("--seeds", type=int, metavar="N", help="number of seeds / instances")
        p.add_argument("--data", metavar="PATH", help="dataset path (overrides paths.dataset)")
        p.add_argument("--checkpoint", metavar="PATH", help="checkpoint path (overrides paths.checkpoint)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.profile)
        return COMMANDS[args.command][0](cfg, args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DatasetError, checkpoint.CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
