"""Classifier heads, weighted BCE / caption losses and three-branch aggregation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import minimize
from torch import nn

EPS = 1e-7
STRATEGIES = ("mean", "max", "asa")


class AttributeHead(nn.Module):
    """Per-group linear heads: attribute i reads only its own group's embedding."""

    def __init__(self, group_of, dim: int):
        super().__init__()
        self.register_buffer("group_of", torch.as_tensor(np.asarray(group_of), dtype=torch.long), persistent=False)
        m = len(group_of)
        self.weight = nn.Parameter(torch.empty(m, dim))
        self.bias = nn.Parameter(torch.zeros(m))
        nn.init.normal_(self.weight, std=dim ** -0.5)

    def forward(self, group_emb: torch.Tensor) -> torch.Tensor:
        # group_emb: (B, K, D) -> (B, M)
        per_attr = group_emb[:, self.group_of, :]
        return (per_attr * self.weight).sum(-1) + self.bias


class InstanceHead(nn.Linear):
    """Single linear map from the mean-pooled visual tokens to M logits."""

    def forward(self, visual_tokens: torch.Tensor) -> torch.Tensor:
        return super().forward(visual_tokens.mean(dim=1))


@dataclass
class WceWeights:
    ratio: np.ndarray
    pos_weight: np.ndarray
    neg_weight: np.ndarray
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def as_tensors(self, dtype=torch.float32):
        return torch.as_tensor(self.pos_weight, dtype=dtype), torch.as_tensor(self.neg_weight, dtype=dtype)

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("ratio", "pos_weight", "neg_weight", "flagged")}

    @classmethod
    def from_dict(cls, d) -> "WceWeights":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("ratio", "pos_weight", "neg_weight")),
                   np.asarray(d.get("flagged", []), dtype=bool))


def compute_wce_weights(train_labels) -> WceWeights:
    """Exponential positive-ratio weighting: exp(1 - r) for positives, exp(r) for negatives.

    Attributes with no positives get r = 1 / (2N) and are flagged.
    """
    y = np.asarray(train_labels, dtype=float)
    n = y.shape[0]
    if n == 0:
        raise ValueError("need at least one training sample")
    r = y.mean(axis=0)
    flagged = r == 0
    if flagged.any():
        warnings.warn(f"{int(flagged.sum())} attribute(s) have no positive training samples")
        r = np.where(flagged, 1.0 / (2 * n), r)
    return WceWeights(r, np.exp(1.0 - r), np.exp(r), flagged)


class NonFiniteError(ValueError):
    pass


def _check_finite(t: torch.Tensor, name: str):
    if torch.isnan(t).any():
        raise NonFiniteError(f"NaN in {name}")


def wce_loss(logits: torch.Tensor, labels: torch.Tensor, weights: WceWeights | None = None) -> torch.Tensor:
    """Weighted binary cross-entropy, averaged over attributes then over the batch."""
    _check_finite(logits, "logits")
    labels = labels.to(logits.dtype)
    p = torch.sigmoid(logits).clamp(EPS, 1 - EPS)
    ce = labels * torch.log(p) + (1 - labels) * torch.log1p(-p)
    if weights is not None:
        wp, wn = weights.as_tensors(logits.dtype)
        w = labels * wp.to(logits.device) + (1 - labels) * wn.to(logits.device)
        ce = w * ce
    return -ce.mean(dim=-1).mean()


def caption_loss(step_logits: torch.Tensor, targets: torch.Tensor, pad_id: int) -> torch.Tensor:
    """Mean token cross-entropy over non-padding target positions.

    ``step_logits``: (B, T, V); ``targets``: (B, T).
    """
    if step_logits.shape[:2] != targets.shape:
        raise ValueError(f"length mismatch: logits {tuple(step_logits.shape[:2])} vs targets {tuple(targets.shape)}")
    _check_finite(step_logits, "caption logits")
    logp = torch.log_softmax(step_logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    keep = targets != pad_id
    return (nll * keep).sum() / keep.sum().clamp(min=1)


def total_loss(parts: dict, coefficients: dict | None = None) -> torch.Tensor:
    """Sum of ``attr``, ``inst``, ``llm`` and ``cap`` terms (unit coefficients by default)."""
    coefficients = coefficients or {}
    total = 0.0
    for k in ("attr", "inst", "llm", "cap"):
        if k in parts:
            total = total + coefficients.get(k, 1.0) * parts[k]
    return total


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass
class LogitsTriple:
    p_attr: np.ndarray
    p_in: np.ndarray
    p_llm: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.p_attr), np.shape(self.p_in), np.shape(self.p_llm)}
        if len(shapes) != 1:
            raise ValueError(f"branch shapes differ: {shapes}")
        for a in (self.p_attr, self.p_in, self.p_llm):
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite logits")

    def probabilities(self) -> np.ndarray:
        """Stacked branch probabilities, shape (..., M, 3)."""
        return np.stack([sigmoid(self.p_attr), sigmoid(self.p_in), sigmoid(self.p_llm)], axis=-1)


@dataclass
class AsaWeights:
    weights: np.ndarray  # (M, 3)
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[1] != 3 or (w < -1e-12).any() or not np.allclose(w.sum(1), 1.0, atol=1e-9):
            raise ValueError("ASA weights must be an (M, 3) array of simplex rows")
        self.weights = w


def aggregate(branch_probs, strategy: str = "mean", asa: AsaWeights | None = None) -> np.ndarray:
    """Combine (..., M, 3) branch probabilities into (..., M)."""
    p = np.asarray(branch_probs, dtype=float)
    if isinstance(branch_probs, LogitsTriple):
        p = branch_probs.probabilities()
    if strategy == "mean":
        return p.mean(axis=-1)
    if strategy == "max":
        return p.max(axis=-1)
    if strategy == "asa":
        if asa is None:
            raise ValueError("asa aggregation requires fitted AsaWeights")
        return (p * asa.weights).sum(axis=-1)
    raise ValueError(f"unknown aggregation strategy {strategy!r}; expected one of {STRATEGIES}")


def asa_objective(w, probs, y) -> float:
    """Mean BCE of the convex combination ``probs @ w`` for one attribute."""
    q = np.clip(probs @ w, EPS, 1 - EPS)
    return float(-np.mean(y * np.log(q) + (1 - y) * np.log(1 - q)))


def _asa_grad(w, probs, y):
    q = np.clip(probs @ w, EPS, 1 - EPS)
    g = -(y / q - (1 - y) / (1 - q)) / len(y)
    return probs.T @ g


def fit_asa_weights(branch_probs, labels, tol: float = 1e-6) -> AsaWeights:
    """Per attribute, simplex weights minimizing BCE of the combined probability.

    The problem is convex; it is solved with SLSQP from the uniform point and
    the uniform point is kept if the solver fails to improve on it.
    """
    p = np.asarray(branch_probs, dtype=float)
    y = np.asarray(labels, dtype=float)
    n, m, b = p.shape
    if n < 1:
        raise ValueError("need at least one sample")
    uniform = np.full(b, 1.0 / b)
    out = np.tile(uniform, (m, 1))
    flagged = np.zeros(m, dtype=bool)
    cons = ({"type": "eq", "fun": lambda w: w.sum() - 1.0, "jac": lambda w: np.ones_like(w)},)
    for i in range(m):
        probs = p[:, i, :]
        if np.allclose(probs, probs[:, :1], atol=1e-12, rtol=0):
            flagged[i] = True
            continue
        res = minimize(asa_objective, uniform, args=(probs, y[:, i]), jac=_asa_grad, method="SLSQP",
                       bounds=[(0.0, 1.0)] * b, constraints=cons, options={"ftol": tol * 1e-3, "maxiter": 500})
        w = np.clip(res.x, 0.0, None)
        w = w / w.sum()
        if asa_objective(w, probs, y[:, i]) <= asa_objective(uniform, probs, y[:, i]):
            out[i] = w
    return AsaWeights(out, flagged)
