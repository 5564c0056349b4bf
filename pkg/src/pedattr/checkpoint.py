"""Checkpoint files: parameters, config, schema, vocabulary and fitted weights."""

from __future__ import annotations

import numpy as np
import torch

from .config import TrainConfig
from .estimator import PedestrianAttributeClassifier
from .heads import AsaWeights, WceWeights
from .language import Vocabulary
from .model import PARNet
from .schema import load_schema

FORMAT = "pedattr-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(est: PedestrianAttributeClassifier, path) -> None:
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "config": est.config_.to_dict(),
        "schema": est.schema_.to_dict(),
        "vocab": list(est.vocab_.tokens),
        "state_dict": {k: v.detach().clone() for k, v in est.model_.state_dict().items()},
        "shapes": {k: list(v.shape) for k, v in est.model_.state_dict().items()},
        "wce_weights": est.wce_weights_.to_dict() if est.wce_weights_ is not None else None,
        "asa_weights": None if est.asa_weights_ is None else {
            "weights": est.asa_weights_.weights.tolist(), "flagged": np.asarray(est.asa_weights_.flagged).tolist()},
        "step": est.n_steps_,
        "history": est.history_,
        "estimator_params": {k: v for k, v in est.get_params().items() if k in ("aggregation", "batch_size")},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> PedestrianAttributeClassifier:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if payload["version"] > VERSION:
        raise CheckpointError(f"checkpoint version {payload['version']} is newer than supported {VERSION}")
    cfg = TrainConfig.from_dict(payload["config"])
    schema = load_schema(payload["schema"])
    vocab = Vocabulary(payload["vocab"])
    model = PARNet(cfg, schema, vocab)
    model.load_state_dict(payload["state_dict"])
    model.freeze_bases()
    model.eval()
    est = PedestrianAttributeClassifier(config=cfg, schema=payload["schema"], **payload.get("estimator_params", {}))
    est.config_, est.schema_, est.vocab_, est.model_ = cfg, schema, vocab, model
    est.wce_weights_ = WceWeights.from_dict(payload["wce_weights"]) if payload["wce_weights"] else None
    asa = payload.get("asa_weights")
    est.asa_weights_ = AsaWeights(np.asarray(asa["weights"]), np.asarray(asa["flagged"], bool)) if asa else None
    est.n_steps_ = payload["step"]
    est.history_ = payload["history"]
    est.classes_ = np.arange(schema.n_attributes)
    return est
