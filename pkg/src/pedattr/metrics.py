"""Label-based mean accuracy and example-based Acc / Prec / Recall / F1."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    mA: float
    Acc: float
    Prec: float
    Recall: float
    F1: float
    n_samples: int
    per_attribute_mA: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["per_attribute_mA"] = [None if np.isnan(v) else float(v) for v in self.per_attribute_mA]
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in ("mA", "Acc", "Prec", "Recall", "F1")}


def _check(pred, labels):
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.shape != labels.shape or pred.ndim != 2:
        raise ValueError(f"shape mismatch: predictions {pred.shape} vs labels {labels.shape}")
    for name, a in (("predictions", pred), ("labels", labels)):
        if not np.all((a == 0) | (a == 1)):
            raise ValueError(f"{name} must be binary")
    return pred.astype(bool), labels.astype(bool)


def evaluate(pred, labels) -> MetricsReport:
    """Score binary predictions (N x M) against binary labels.

    Attributes lacking positives or negatives are left out of mA (NaN in
    ``per_attribute_mA``). A sample with no predicted positives contributes a
    precision term of 1 only if it also has no true positives; recall is
    handled symmetrically. F1 combines the averaged precision and recall.
    """
    p, y = _check(pred, labels)
    n, m = y.shape
    tp = (p & y).sum(axis=0)
    tn = (~p & ~y).sum(axis=0)
    pos = y.sum(axis=0)
    neg = n - pos
    valid = (pos > 0) & (neg > 0)
    per_attr = np.full(m, np.nan)
    per_attr[valid] = 0.5 * (tp[valid] / pos[valid] + tn[valid] / neg[valid])
    if not valid.all():
        warnings.warn(f"{int((~valid).sum())} attribute(s) lack positives or negatives; excluded from mA")
    mA = float(per_attr[valid].mean()) if valid.any() else 0.0

    inter = (p & y).sum(axis=1)
    union = (p | y).sum(axis=1)
    n_pred = p.sum(axis=1)
    n_true = y.sum(axis=1)
    acc = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    prec = np.where(n_pred > 0, inter / np.maximum(n_pred, 1), (n_true == 0).astype(float))
    rec = np.where(n_true > 0, inter / np.maximum(n_true, 1), (n_pred == 0).astype(float))
    if n == 0:
        return MetricsReport(mA, 0.0, 0.0, 0.0, 0.0, 0, per_attr)
    P, R = float(prec.mean()), float(rec.mean())
    f1 = 2 * P * R / (P + R) if P + R > 0 else 0.0
    return MetricsReport(mA, float(acc.mean()), P, R, f1, n, per_attr)


def per_scene_evaluate(pred, labels, scenes, known_scenes=None) -> dict[str, MetricsReport]:
    scenes = np.asarray(scenes, dtype=object)
    if known_scenes is not None:
        unknown = set(scenes) - set(known_scenes)
        if unknown:
            raise ValueError(f"unknown scene(s): {sorted(unknown)}")
    pred, labels = np.asarray(pred), np.asarray(labels)
    order = list(dict.fromkeys(scenes)) if known_scenes is None else [s for s in known_scenes if s in set(scenes)]
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in order:
            mask = scenes == s
            out[s] = evaluate(pred[mask], labels[mask])
    return out


def format_table(reports: dict[str, MetricsReport]) -> str:
    """Aligned text table, one row per report, columns mA Acc Prec Recall F1 (percent)."""
    keys = ("mA", "Acc", "Prec", "Recall", "F1")
    width = max([len("name")] + [len(k) for k in reports])
    lines = [f"{'name':<{width}}  " + "  ".join(f"{k:>7}" for k in keys) + "        N"]
    for name, r in reports.items():
        lines.append(f"{name:<{width}}  " + "  ".join(f"{100 * getattr(r, k):7.2f}" for k in keys) + f"  {r.n_samples:7d}")
    return "\n".join(lines)


def write_report(report: MetricsReport, path) -> None:
    """Key-value file: one ``key<TAB>value`` line per metric."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in report.summary().items():
            fh.write(f"{k}\t{v:.6f}\n")
        fh.write(f"n_samples\t{report.n_samples}\n")
