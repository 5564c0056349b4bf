"""Joint training loop for all branches."""

from __future__ import annotations

import logging
import time

import numpy as np
import torch

from .config import TrainConfig
from .heads import NonFiniteError, WceWeights, caption_loss, total_loss, wce_loss
from .language import MaskStrategy, _fit, prepare_target
from .model import PARNet
from .vision import normalize_pixels

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, parts: dict):
        super().__init__(f"non-finite loss at step {step}: {parts}")
        self.step = step
        self.parts = parts


def build_targets(caption_ids, idx, strategy: MaskStrategy, span: int, vocab, pool, rng):
    """(context, target, teacher-forcing input) id tensors for a batch."""
    spans = [prepare_target(caption_ids[i], strategy, span, vocab, pool, rng) for i in idx]
    ctx = torch.as_tensor(np.stack([s.context for s in spans]))
    tgt = torch.as_tensor(np.stack([s.target for s in spans]))
    forced = torch.as_tensor(np.stack([_fit(caption_ids[i], span, vocab.pad_id) for i in idx]))
    return ctx, tgt, forced


def compute_losses(model: PARNet, pixels, labels, ctx, tgt, wce: WceWeights | None, coefficients=None,
                   forced=None) -> tuple:
    out = model(pixels, ctx, forced)
    parts = {
        "attr": wce_loss(out["p_attr"], labels, wce),
        "inst": wce_loss(out["p_in"], labels, wce),
        "llm": wce_loss(out["p_llm"], labels, wce),
        "cap": caption_loss(out["cap_logits"], tgt, model.vocab.pad_id),
    }
    return total_loss(parts, coefficients), parts, out


def train(model: PARNet, images: np.ndarray, labels: np.ndarray, caption_ids, config: TrainConfig,
          span_length: int, wce: WceWeights | None = None, pool=None, on_step=None) -> list[dict]:
    """Run AdamW over the model's trainable parameters; returns per-step loss records.

    ``on_step(step, record)`` is called after every optimizer step.
    """
    c = config
    strategy = MaskStrategy(c.mask_strategy, c.mask_rate)
    if c.caption_forcing not in ("true_caption", "context"):
        raise ValueError(f"unknown caption_forcing {c.caption_forcing!r}")
    rng = np.random.default_rng([c.seed, 1])
    params = model.trainable_parameters()
    opt = torch.optim.AdamW(params, lr=c.lr, weight_decay=c.weight_decay)
    n = len(images)
    y_all = torch.as_tensor(labels, dtype=torch.float32)
    history = []
    step = 0
    max_steps = c.max_steps if c.max_steps is not None else float("inf")
    model.train()
    t0 = time.perf_counter()
    for epoch in range(c.epochs):
        if step >= max_steps:
            break
        order = rng.permutation(n)
        for start in range(0, n, c.batch_size):
            if step >= max_steps:
                break
            idx = order[start:start + c.batch_size]
            ctx, tgt, forced = build_targets(caption_ids, idx, strategy, span_length, model.vocab, pool, rng)
            if c.caption_forcing == "context" or strategy.kind == "ground_truth":
                forced = None  # one pass serves both the classifier and the caption loss
            px = normalize_pixels(images[idx])
            try:
                loss, parts, _ = compute_losses(model, px, y_all[idx], ctx, tgt, wce, c.loss_coefficients, forced)
            except NonFiniteError as exc:
                raise TrainingDiverged(step, {"error": str(exc)}) from exc
            vals = {k: float(v.detach()) for k, v in parts.items()}
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(step, vals)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if c.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, c.grad_clip)
            opt.step()
            step += 1
            rec = {"step": step, "epoch": epoch, "loss": loss.item(), **vals}
            history.append(rec)
            if c.log_every and step % c.log_every == 0:
                log.info("step %d epoch %d loss %.4f (attr %.3f inst %.3f llm %.3f cap %.3f) %.1fs",
                         step, epoch, rec["loss"], vals["attr"], vals["inst"], vals["llm"], vals["cap"],
                         time.perf_counter() - t0)
            if on_step is not None:
                on_step(step, rec)
    model.eval()
    return history
