"""scikit-learn style estimators wrapping the network and the branch aggregator."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import PRESETS, TrainConfig
from .dataset.captions import build_caption, parse_caption
from .heads import AsaWeights, LogitsTriple, aggregate, asa_objective, compute_wce_weights, fit_asa_weights
from .language import Vocabulary
from .metrics import evaluate
from .model import PARNet
from .schema import load_schema
from .training import train
from .validation import check_images, check_label_matrix
from .vision import normalize_pixels


class AsaAggregator(BaseEstimator):
    """Per-attribute convex weighting of the three branch probabilities.

    ``fit`` takes branch probabilities of shape (N, M, 3) and binary labels
    (N, M); ``predict_proba`` returns the (N, M) combined probabilities.
    """

    def __init__(self, tol=1e-6):
        self.tol = tol

    def fit(self, P, y):
        P = np.asarray(P, dtype=float)
        if P.ndim != 3 or P.shape[2] != 3:
            raise ValueError(f"expected branch probabilities (N, M, 3), got {P.shape}")
        y = check_label_matrix(y, P.shape[1], P.shape[0])
        self.weights_ = fit_asa_weights(P, y, self.tol)
        return self

    def predict_proba(self, P):
        check_is_fitted(self, "weights_")
        return aggregate(P, "asa", self.weights_)

    def transform(self, P):
        return self.predict_proba(P)

    def objective(self, P, y, weights=None) -> np.ndarray:
        """Per-attribute BCE of the combination under ``weights`` (fitted by default)."""
        w = self.weights_.weights if weights is None else np.broadcast_to(weights, self.weights_.weights.shape)
        P, y = np.asarray(P, float), np.asarray(y, float)
        return np.array([asa_objective(w[i], P[:, i], y[:, i]) for i in range(P.shape[1])])


class PedestrianAttributeClassifier(ClassifierMixin, BaseEstimator):
    """Multi-label pedestrian attribute recognizer with a captioning language branch.

    Parameters
    ----------
    config : TrainConfig, dict or None
        Model and optimizer settings; ``None`` uses ``preset``.
    preset : {"desk", "full"}
        Defaults when ``config`` is None or a partial dict.
    schema : str or AttributeSchema
        Attribute schema (built-in name, YAML path or schema object).
    aggregation : {"mean", "max", "asa"} or None
        Overrides ``config.aggregation`` at prediction time.
    batch_size : int
        Inference batch size.
    """

    def __init__(self, config=None, preset="desk", schema="msp60k", aggregation=None, batch_size=32):
        self.config = config
        self.preset = preset
        self.schema = schema
        self.aggregation = aggregation
        self.batch_size = batch_size

    def _resolve_config(self) -> TrainConfig:
        if isinstance(self.config, TrainConfig):
            return self.config.replace()
        base = PRESETS[self.preset]().to_dict()
        base.update(self.config or {})
        return TrainConfig.from_dict(base)

    def _build(self, y=None):
        cfg = self._resolve_config()
        schema = load_schema(self.schema)
        vocab = Vocabulary.from_schema(schema)
        torch.manual_seed(cfg.seed)
        model = PARNet(cfg, schema, vocab)
        model.freeze_bases()
        return cfg, schema, vocab, model

    def fit(self, X, y, on_step=None):
        cfg, schema, vocab, model = self._build()
        X = check_images(X, cfg.image_size)
        y = check_label_matrix(y, schema.n_attributes, len(X))
        caption_ids = [vocab.encode(build_caption(row, schema).text) for row in y]
        if cfg.max_caption_tokens is None:
            cfg.max_caption_tokens = max(len(c) for c in caption_ids)
        self.schema_, self.vocab_, self.config_ = schema, vocab, cfg
        self.wce_weights_ = compute_wce_weights(y) if cfg.weighted_loss else None
        self.model_ = model
        self.history_, self.n_steps_, self.asa_weights_ = [], 0, None
        self.classes_ = np.arange(schema.n_attributes)

        def record(step, rec):
            # keeps the estimator consistent (and checkpointable) during training
            self.history_.append(rec)
            self.n_steps_ = step
            if on_step is not None:
                on_step(step, rec)

        torch.manual_seed(cfg.seed)
        train(model, X, y, caption_ids, cfg, cfg.max_caption_tokens, self.wce_weights_,
              pool=caption_ids, on_step=record)
        return self

    def _init_unfitted(self):
        """Model at initialization, no training (as if fitted with zero steps)."""
        cfg, schema, vocab, model = self._build()
        self.schema_, self.vocab_, self.config_, self.model_ = schema, vocab, cfg, model
        self.wce_weights_ = None
        self.history_, self.n_steps_, self.asa_weights_ = [], 0, None
        self.classes_ = np.arange(schema.n_attributes)
        return self

    def predict_details(self, X) -> dict:
        """Branch logits, generated captions and exhaustion flags for every image."""
        check_is_fitted(self, "model_")
        X = check_images(X, self.config_.image_size)
        self.model_.eval()
        logits = {"p_attr": [], "p_in": [], "p_llm": []}
        captions, exhausted = [], []
        for s in range(0, len(X), self.batch_size):
            out = self.model_.predict(normalize_pixels(X[s:s + self.batch_size]), self.config_.max_caption_tokens)
            for k in logits:
                logits[k].append(out[k].double().numpy())
            captions += out["generation"].texts
            exhausted += list(out["generation"].exhausted)
        triple = LogitsTriple(*(np.concatenate(logits[k]) for k in ("p_attr", "p_in", "p_llm")))
        return {"logits": triple, "branch_proba": triple.probabilities(), "captions": captions,
                "exhausted": np.array(exhausted, dtype=bool)}

    def _aggregate(self, branch_proba, strategy=None):
        strategy = strategy or self.aggregation or self.config_.aggregation
        return aggregate(branch_proba, strategy, self.asa_weights_)

    def predict_branch_proba(self, X) -> np.ndarray:
        return self.predict_details(X)["branch_proba"]

    def predict_proba(self, X, aggregation=None) -> np.ndarray:
        return self._aggregate(self.predict_branch_proba(X), aggregation)

    def predict(self, X, aggregation=None) -> np.ndarray:
        return (self.predict_proba(X, aggregation) >= self.config_.threshold).astype(np.int64)

    def generate_captions(self, X) -> list[str]:
        return self.predict_details(X)["captions"]

    def caption_labels(self, captions) -> np.ndarray:
        """Lenient parse of generated captions back into label vectors."""
        return np.stack([parse_caption(c, self.schema_, strict=False) for c in captions])

    def fit_asa(self, X, y, branch_proba=None):
        """Fit ASA weights on branch probabilities of a held-in split."""
        check_is_fitted(self, "model_")
        P = self.predict_branch_proba(X) if branch_proba is None else branch_proba
        self.asa_weights_ = AsaAggregator().fit(P, y).weights_
        return self

    def score(self, X, y, sample_weight=None):
        """Mean accuracy (mA) of the aggregated predictions."""
        return evaluate(self.predict(X), check_label_matrix(y)).mA

    def set_asa_weights(self, weights):
        self.asa_weights_ = weights if isinstance(weights, AsaWeights) else AsaWeights(np.asarray(weights))
        return self
