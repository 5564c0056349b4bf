"""Command-line interface: ``pedattr <subcommand> ...``.

Subcommands: prepare, split, degrade, stats, train, eval, infer, fit-asa.
Outputs of stats/train/eval/fit-asa go to a run directory under
``$PEDATTR_RUNS`` (default ``./runs``) with the config copied in.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import harness
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import load_config
from .dataset import (
    CROSS_DOMAIN_TEST,
    CROSS_DOMAIN_TRAIN,
    DegradationError,
    ImageLoadError,
    ManifestError,
    SplitError,
    assign_degradations,
    ingest_manifest,
    load_dataset,
    load_image,
    random_split,
    scene_split,
    split_counts,
    write_degradation_sidecar,
    write_manifest,
    write_split_sidecar,
    write_synthetic,
)
from .schema import SchemaError, load_schema

log = logging.getLogger("pedattr")


class CliError(Exception):
    pass


def _set_overrides(pairs) -> dict:
    """``key=value`` strings parsed as YAML scalars."""
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _config(args):
    cfg = load_config(args.config, args.preset, **_set_overrides(args.set))
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else os.getcwd()
    return harness.resolve_paths(cfg, base)


# -- subcommands ---------------------------------------------------------

def cmd_prepare(args):
    schema = load_schema(args.schema)
    out = Path(args.out)
    if args.synthetic:
        path = write_synthetic(out, args.synthetic, schema, (args.height, args.width), args.seed)
        print(f"wrote {args.synthetic} synthetic records to {path}")
        return 0
    if not args.manifest:
        raise CliError("prepare needs --manifest or --synthetic N")
    records = ingest_manifest(args.manifest, schema)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(records, out / "manifest.tsv")
    print(f"validated {len(records)} records; wrote {out / 'manifest.tsv'}")
    return 0


def cmd_split(args):
    schema = load_schema(args.schema)
    records = ingest_manifest(args.manifest, schema)
    if args.protocol == "random":
        counts = tuple(args.counts) if args.counts else harness.scaled_counts(len(records))
        records = random_split(records, counts, args.seed)
    else:
        train = args.train_scenes or CROSS_DOMAIN_TRAIN
        test = args.test_scenes or CROSS_DOMAIN_TEST
        records = scene_split(records, train, test)
    out = args.out or harness.sidecar_paths(args.manifest)[0]
    write_split_sidecar(records, out)
    print(json.dumps({"split_file": str(out), **split_counts(records)}))
    return 0


def cmd_degrade(args):
    schema = load_schema(args.schema)
    splits, default_out = harness.sidecar_paths(args.manifest, args.splits)
    records = load_dataset(args.manifest, schema, splits)
    records = assign_degradations(records, args.fraction, args.seed)
    out = args.out or default_out
    write_degradation_sidecar(records, out)
    n = sum(r.degradation is not None for r in records)
    print(json.dumps({"degradation_file": str(out), "degraded": n, "total": len(records)}))
    return 0


def cmd_stats(args):
    schema = load_schema(args.schema)
    splits, _ = harness.sidecar_paths(args.manifest)
    records = load_dataset(args.manifest, schema, splits)
    if args.split:
        records = [r for r in records if r.split == args.split]
    out = Path(args.out) if args.out else harness.make_run_dir("stats", args.run_name)
    harness.write_stats(records, schema, out)
    print(f"wrote statistics for {len(records)} records to {out}")
    return 0


def cmd_train(args):
    cfg = _config(args)
    run = harness.make_run_dir("train", args.run_name, cfg, args.config)
    logging.getLogger("pedattr").addHandler(logging.FileHandler(run / "train.log"))
    est = harness.train_run(cfg, run)
    last = est.history_[-1] if est.history_ else {}
    print(json.dumps({"run_dir": str(run), "steps": est.n_steps_, "final_loss": last.get("loss")}))
    return 0


def _eval_config(est, args):
    cfg = est.config_
    changes = {k: v for k, v in (("manifest", args.manifest), ("image_root", args.image_root),
                                 ("split_file", args.split_file), ("degradation_file", args.degradation_file))
               if v is not None}
    changes = {k: os.path.abspath(v) for k, v in changes.items()}
    return cfg.replace(**changes)


def cmd_eval(args):
    est = load_checkpoint(args.checkpoint)
    cfg = _eval_config(est, args)
    split = args.split or cfg.eval_split
    try:
        data = harness.load_split(cfg, est.schema_, split)
    except ManifestError as exc:
        raise harness.SchemaMismatchError(f"dataset does not match the checkpoint schema: {exc}") from exc
    run = harness.make_run_dir("eval", args.run_name, cfg)
    result = harness.evaluate_checkpoint(est, data, args.aggregation, run)
    print(f"run_dir: {run}")
    print((run / "metrics.txt").read_text(encoding="utf-8").rstrip())
    if result.per_scene:
        print((run / "per_scene.txt").read_text(encoding="utf-8").rstrip())
    return 0


def cmd_infer(args):
    est = load_checkpoint(args.checkpoint)
    images = np.stack([load_image(p, est.config_.image_size) for p in args.images])
    results = harness.infer_images(est, images, args.images)
    if args.json:
        print(json.dumps(results if len(results) > 1 else results[0], indent=2))
    else:
        print("\n".join(harness.format_inference(r) for r in results))
    return 0


def cmd_fit_asa(args):
    est = load_checkpoint(args.checkpoint)
    cfg = _eval_config(est, args)
    split = args.split or cfg.val_split or cfg.train_split
    data = harness.load_split(cfg, est.schema_, split)
    est.fit_asa(data.images, data.labels)
    run = harness.make_run_dir("asa", args.run_name, cfg)
    out = args.out or run / "checkpoint.pt"
    save_checkpoint(est, out)
    w = est.asa_weights_
    with open(run / "asa_weights.tsv", "w", encoding="utf-8") as fh:
        fh.write("attribute\tw_attr\tw_in\tw_llm\tflagged\n")
        for name, row, flag in zip(est.schema_.attributes, w.weights, w.flagged):
            fh.write(f"{name}\t{row[0]:.6f}\t{row[1]:.6f}\t{row[2]:.6f}\t{int(flag)}\n")
    print(json.dumps({"run_dir": str(run), "checkpoint": str(out), "split": split,
                      "flagged": int(np.sum(w.flagged))}))
    return 0


# -- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pedattr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_schema(sp):
        sp.add_argument("--schema", default="msp60k", help="built-in schema name or YAML path")
        return sp

    sp = with_schema(sub.add_parser("prepare", help="validate a manifest or write a synthetic dataset"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--synthetic", type=int, metavar="N")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--height", type=int, default=128)
    sp.add_argument("--width", type=int, default=64)
    sp.set_defaults(func=cmd_prepare)

    sp = with_schema(sub.add_parser("split", help="assign train/val/test splits"))
    sp.add_argument("protocol", choices=["random", "scene"])
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--counts", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    sp.add_argument("--train-scenes", nargs="+")
    sp.add_argument("--test-scenes", nargs="+")
    sp.set_defaults(func=cmd_split)

    sp = with_schema(sub.add_parser("degrade", help="mark a fraction of every split for degradation"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--splits")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--fraction", type=float, default=1 / 3)
    sp.set_defaults(func=cmd_degrade)

    sp = with_schema(sub.add_parser("stats", help="attribute distribution, co-occurrence and per-scene tables"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split")
    sp.add_argument("--out")
    sp.add_argument("--run-name")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("train", help="train a model from a config file")
    sp.add_argument("--config", "-c")
    sp.add_argument("--preset", default="desk", choices=["desk", "full"])
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    sp.add_argument("--run-name")
    sp.set_defaults(func=cmd_train)

    def data_overrides(sp):
        sp.add_argument("--manifest")
        sp.add_argument("--image-root")
        sp.add_argument("--split-file")
        sp.add_argument("--degradation-file")
        sp.add_argument("--split")
        sp.add_argument("--run-name")

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--aggregation", choices=["mean", "max", "asa"])
    data_overrides(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer", help="attributes and caption for image files")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("images", nargs="+")
    sp.add_argument("--json", action="store_true", help="machine-readable output")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("fit-asa", help="fit attribute-specific aggregation weights")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out")
    data_overrides(sp)
    sp.set_defaults(func=cmd_fit_asa)
    return p


EXPECTED_ERRORS = (CliError, CheckpointError, DegradationError, ImageLoadError, ManifestError, SchemaError,
                   SplitError, harness.SchemaMismatchError, FileNotFoundError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
