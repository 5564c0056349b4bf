"""Run directories, data loading and the train / eval / infer / stats workflows."""

from __future__ import annotations

import json
import logging
import math
import os
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .dataset import (
    RANDOM_SPLIT_COUNTS,
    SCENES,
    attribute_distribution,
    cooccurrence_matrix,
    label_matrix,
    load_dataset,
    materialize,
    scene_attribute_distribution,
    select,
)
from .estimator import PedestrianAttributeClassifier
from .metrics import MetricsReport, evaluate, format_table, per_scene_evaluate, write_report
from .schema import AttributeSchema, load_schema

log = logging.getLogger(__name__)

RUNS_ENV = "PEDATTR_RUNS"
SPLITS_FILE = "splits.tsv"
DEGRADATIONS_FILE = "degradations.jsonl"


class SchemaMismatchError(ValueError):
    pass


# -- run directories -----------------------------------------------------

def runs_root() -> Path:
    """Root for run directories: ``$PEDATTR_RUNS`` or ``./runs``."""
    return Path(os.environ.get(RUNS_ENV, "runs"))


def make_run_dir(kind: str, name: str | None = None, config: TrainConfig | None = None,
                 config_path=None) -> Path:
    """Create ``<root>/<kind>-<name>`` and copy the config into it.

    The original config file is copied verbatim as ``config.yaml``; the fully
    resolved config is written alongside as ``config.resolved.yaml``.
    """
    name = name or time.strftime("%Y%m%d-%H%M%S")
    run = runs_root() / f"{kind}-{name}"
    run.mkdir(parents=True, exist_ok=True)
    if config_path is not None:
        shutil.copyfile(config_path, run / "config.yaml")
    if config is not None:
        (run / "config.resolved.yaml").write_text(config.dumps(), encoding="utf-8")
        if config_path is None:
            (run / "config.yaml").write_text(config.dumps(), encoding="utf-8")
    return run


def resolve_paths(config: TrainConfig, base_dir) -> TrainConfig:
    """Make the dataset paths of ``config`` absolute relative to ``base_dir``."""
    changes = {}
    for key in ("manifest", "image_root", "split_file", "degradation_file"):
        value = getattr(config, key)
        if value is not None and not os.path.isabs(value):
            changes[key] = os.path.normpath(os.path.join(base_dir, value))
    return config.replace(**changes)


# -- data ----------------------------------------------------------------

def sidecar_paths(manifest, split_file=None, degradation_file=None) -> tuple[str, str]:
    root = os.path.dirname(os.path.abspath(manifest))
    return (split_file or os.path.join(root, SPLITS_FILE),
            degradation_file or os.path.join(root, DEGRADATIONS_FILE))


@dataclass
class SplitData:
    records: list
    images: np.ndarray
    labels: np.ndarray

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def scenes(self) -> list[str]:
        return [r.scene for r in self.records]


def load_records(config: TrainConfig, schema: AttributeSchema, split: str | None = None) -> list:
    if not config.manifest:
        raise ValueError("config has no manifest path")
    splits, degradations = sidecar_paths(config.manifest, config.split_file, config.degradation_file)
    data = load_dataset(config.manifest, schema, splits, degradations)
    if split not in (None, "all"):
        data = select(data, split)
    return data


def load_split(config: TrainConfig, schema: AttributeSchema, split: str | None = None) -> SplitData:
    """Records, materialized (degraded where marked) pixels and labels of one split."""
    data = load_records(config, schema, split)
    if not data:
        raise ValueError(f"split {split!r} of {config.manifest} is empty")
    root = config.image_root or os.path.dirname(os.path.abspath(config.manifest))
    images = materialize(data, root, config.image_size)
    return SplitData(data, images, label_matrix(data, schema.n_attributes))


def scaled_counts(n: int, reference=RANDOM_SPLIT_COUNTS) -> tuple[int, int, int]:
    """Train/val/test counts proportional to ``reference`` that sum to ``n`` (largest remainder)."""
    total = sum(reference)
    raw = [n * c / total for c in reference]
    counts = [math.floor(r) for r in raw]
    order = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return tuple(counts)


# -- training ------------------------------------------------------------

def train_run(config: TrainConfig, run_dir, schema: AttributeSchema | None = None) -> PedestrianAttributeClassifier:
    """Fit on the training split; writes the checkpoint, per-step history and validation log."""
    run_dir = Path(run_dir)
    schema = schema or load_schema(config.schema)
    train_data = load_split(config, schema, config.train_split)
    val_data = None
    if config.val_split and config.val_every_epochs:
        try:
            val_data = load_split(config, schema, config.val_split)
        except ValueError:
            log.info("no %s split; skipping validation logging", config.val_split)
    est = PedestrianAttributeClassifier(config=config, schema=schema)
    steps_per_epoch = math.ceil(len(train_data.records) / config.batch_size)
    hist_fh = open(run_dir / "history.jsonl", "w", encoding="utf-8")
    val_fh = open(run_dir / "val_metrics.jsonl", "w", encoding="utf-8") if val_data else None

    def on_step(step, rec):
        hist_fh.write(json.dumps(rec) + "\n")
        if config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(est, run_dir / f"checkpoint-{step:06d}.pt")
        epoch_done = step % steps_per_epoch == 0
        if val_fh and epoch_done and (rec["epoch"] + 1) % config.val_every_epochs == 0:
            pred = est.predict(val_data.images)
            est.model_.train()
            report = evaluate(pred, val_data.labels)
            val_fh.write(json.dumps({"step": step, "epoch": rec["epoch"], **report.summary()}) + "\n")
            log.info("epoch %d val %s", rec["epoch"], report.summary())

    try:
        est.fit(train_data.images, train_data.labels, on_step=on_step)
    finally:
        hist_fh.close()
        if val_fh:
            val_fh.close()
    save_checkpoint(est, run_dir / "checkpoint.pt")
    return est


# -- evaluation ----------------------------------------------------------

@dataclass
class EvalResult:
    report: MetricsReport
    per_scene: dict
    branch_proba: np.ndarray
    proba: np.ndarray
    pred: np.ndarray
    captions: list


def evaluate_checkpoint(est: PedestrianAttributeClassifier, data: SplitData, aggregation: str | None = None,
                        out_dir=None) -> EvalResult:
    """Full forward (with caption generation), aggregation, thresholding and metrics.

    With ``out_dir`` writes ``metrics.txt`` (table), ``metrics.tsv`` (key-value),
    ``per_scene.txt``, ``predictions.tsv`` (branch and aggregated probabilities)
    and ``captions.tsv``.
    """
    if data.labels.shape[1] != est.schema_.n_attributes:
        raise SchemaMismatchError(
            f"dataset has {data.labels.shape[1]} attributes, checkpoint schema has {est.schema_.n_attributes}")
    details = est.predict_details(data.images)
    bp = details["branch_proba"]
    proba = est._aggregate(bp, aggregation)
    pred = (proba >= est.config_.threshold).astype(np.int64)
    report = evaluate(pred, data.labels)
    per_scene = per_scene_evaluate(pred, data.labels, data.scenes, SCENES)
    result = EvalResult(report, per_scene, bp, proba, pred, details["captions"])
    if out_dir is not None:
        write_eval_outputs(result, data, est.schema_, Path(out_dir))
    return result


def write_eval_outputs(result: EvalResult, data: SplitData, schema: AttributeSchema, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text(format_table({"all": result.report}) + "\n", encoding="utf-8")
    write_report(result.report, out / "metrics.tsv")
    if result.per_scene:
        (out / "per_scene.txt").write_text(format_table(result.per_scene) + "\n", encoding="utf-8")
    with open(out / "predictions.tsv", "w", encoding="utf-8") as fh:
        fh.write("id\tattribute\tlabel\tp_attr\tp_in\tp_llm\tp\tpred\n")
        for i, rid in enumerate(data.ids):
            for a, name in enumerate(schema.attributes):
                pa, pi, pl = result.branch_proba[i, a]
                fh.write(f"{rid}\t{name}\t{data.labels[i, a]}\t{pa:.6f}\t{pi:.6f}\t{pl:.6f}\t"
                         f"{result.proba[i, a]:.6f}\t{result.pred[i, a]}\n")
    with open(out / "captions.tsv", "w", encoding="utf-8") as fh:
        for rid, cap in zip(data.ids, result.captions):
            fh.write(f"{rid}\t{cap}\n")


# -- inference -----------------------------------------------------------

def infer_images(est: PedestrianAttributeClassifier, images: np.ndarray, names=None) -> list[dict]:
    """Positive attributes grouped per schema group, plus the generated caption."""
    details = est.predict_details(images)
    proba = est._aggregate(details["branch_proba"])
    schema = est.schema_
    out = []
    for i in range(len(images)):
        grouped = {}
        for g in schema.groups:
            hits = [schema.attributes[j] for j in g.member_indices if proba[i, j] >= est.config_.threshold]
            if hits:
                grouped[g.name] = hits
        out.append({
            "image": None if names is None else str(names[i]),
            "attributes": grouped,
            "probabilities": {a: round(float(proba[i, j]), 6) for j, a in enumerate(schema.attributes)},
            "caption": details["captions"][i],
        })
    return out


def format_inference(result: dict) -> str:
    lines = [f"image: {result['image']}"]
    for group, attrs in result["attributes"].items():
        lines.append(f"  {group}: {', '.join(attrs)}")
    if not result["attributes"]:
        lines.append("  (no positive attributes)")
    lines.append(f"caption: {result['caption']}")
    return "\n".join(lines)


# -- statistics ----------------------------------------------------------

def write_stats(records, schema: AttributeSchema, out_dir) -> dict:
    """Attribute bar chart, log-scale co-occurrence heatmap and per-scene distribution table."""
    from .plots import attribute_bar, cooccurrence_heatmap

    if not records:
        raise ValueError("cannot compute statistics of an empty dataset")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = schema.n_attributes
    dist = attribute_distribution(records, m)
    cooc = cooccurrence_matrix(records, m)
    per_scene = scene_attribute_distribution(records, m)
    attribute_bar(dist, schema.attributes, out / "attribute_distribution.png")
    cooccurrence_heatmap(cooc, schema.attributes, out / "cooccurrence.png")
    with open(out / "attribute_distribution.tsv", "w", encoding="utf-8") as fh:
        for name, c in zip(schema.attributes, dist):
            fh.write(f"{name}\t{int(c)}\n")
    np.savetxt(out / "cooccurrence.tsv", cooc, fmt="%d", delimiter="\t")
    with open(out / "scene_distribution.tsv", "w", encoding="utf-8") as fh:
        fh.write("scene\tn\t" + "\t".join(schema.attributes) + "\n")
        counts = {s: sum(r.scene == s for r in records) for s in per_scene}
        for scene, row in per_scene.items():
            fh.write(f"{scene}\t{counts[scene]}\t" + "\t".join(str(int(v)) for v in row) + "\n")
    return {"distribution": dist, "cooccurrence": cooc, "per_scene": per_scene}


__all__ = [
    "RUNS_ENV", "EvalResult", "SchemaMismatchError", "SplitData", "evaluate_checkpoint", "format_inference",
    "infer_images", "load_checkpoint", "load_records", "load_split", "make_run_dir", "resolve_paths",
    "runs_root", "save_checkpoint", "scaled_counts", "train_run", "write_stats",
]
