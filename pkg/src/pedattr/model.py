"""The full network: visual branch + two visual classifiers + language branch."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .config import TrainConfig
from .heads import AttributeHead, InstanceHead
from .language import Decoder, FusedInstruction, Vocabulary, _fit, build_instruction, fuse_instruction
from .schema import AttributeSchema
from .vision import VisionStack


class PARNet(nn.Module):
    def __init__(self, config: TrainConfig, schema: AttributeSchema, vocab: Vocabulary):
        super().__init__()
        c = config
        self.config = config
        self.schema = schema
        self.vocab = vocab
        self.vision = VisionStack(
            schema.n_groups, c.image_size, c.patch_size, c.dim, c.depth, c.heads, c.n_queries,
            c.agfa_depth, c.qformer_depth, c.qformer_per_group, c.lora_rank, c.lora_scale,
            c.agfa_from_encoder, c.cbam_reduction, c.cbam_kernel,
        )
        m = schema.n_attributes
        self.attr_head = AttributeHead(schema.group_of(), c.dim)
        self.inst_head = InstanceHead(c.dim, m)
        self.projection = nn.Linear(c.dim, c.lm_dim)
        self.decoder = Decoder(len(vocab), c.lm_dim, c.lm_depth, c.lm_heads, c.lm_max_len,
                               c.lm_lora_layers, c.lora_rank, c.lora_scale)
        self.llm_head = nn.Linear(c.lm_dim, m)
        self.instruction = build_instruction(schema, vocab)

    def freeze_bases(self):
        """Freeze pretrained-role weights: encoder and decoder bases keep only adapters trainable."""
        self.vision.freeze_base()
        mode = self.config.lm_trainable
        if mode not in ("adapters", "embeddings", "all"):
            raise ValueError(f"unknown lm_trainable {mode!r}")
        keep = ("lora_",) + (("embed.", "lm_head.", "pos") if mode == "embeddings" else ())
        for name, p in self.decoder.named_parameters():
            p.requires_grad_(mode == "all" or any(k in name for k in keep))

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def _with_cls(self, ids: torch.Tensor) -> torch.Tensor:
        if self.config.llm_hidden == "cls":
            cls = torch.full((ids.shape[0], 1), self.vocab.cls_id, dtype=ids.dtype, device=ids.device)
            return torch.cat([ids, cls], dim=1)
        return ids

    def forward(self, pixels: torch.Tensor, context_ids: torch.Tensor, caption_ids: torch.Tensor | None = None) -> dict:
        """Teacher-forced pass; returns all branch logits.

        The language-branch classifier always reads the pass over ``context_ids``
        (the masked answer context). When ``caption_ids`` is given, caption logits
        come from a second continuation over the true caption that shares the
        prefix computation; otherwise from the ``context_ids`` pass.
        """
        vis = self.vision(pixels)
        prefix = fuse_instruction(self.instruction, vis["fq"], self.projection, self.decoder.embed)
        ctx = self.decoder.embed(self._with_cls(context_ids))
        if caption_ids is None:
            step_logits, state = self.decoder.score_continuations(prefix, [ctx])[0]
        else:
            (_, state), (step_logits, _) = self.decoder.score_continuations(
                prefix, [ctx, self.decoder.embed(self._with_cls(caption_ids))])
        if self.config.llm_hidden == "cls":
            step_logits = step_logits[:, :-1]
        return {
            "p_attr": self.attr_head(vis["group_emb"]),
            "p_in": self.inst_head(vis["fv"]),
            "p_llm": self.llm_head(state.last_hidden),
            "cap_logits": step_logits,
            "fused": FusedInstruction(torch.cat([prefix.embeddings, ctx], dim=1), prefix.slot_map,
                                      prefix.prefix_length),
            "state": state,
        }

    @torch.no_grad()
    def predict(self, pixels: torch.Tensor, span_length: int) -> dict:
        """Generate captions greedily, then classify from the decoder state over the generated answer."""
        vis = self.vision(pixels)
        prefix = fuse_instruction(self.instruction, vis["fq"], self.projection, self.decoder.embed)
        gen = self.decoder.generate(prefix, self.vocab.eos_id, span_length + 1)
        ctx = np.stack([_fit(t, span_length, self.vocab.pad_id) for t in gen.tokens])
        ctx = torch.as_tensor(ctx, device=pixels.device)
        fused = fuse_instruction(self.instruction, vis["fq"], self.projection, self.decoder.embed, self._with_cls(ctx))
        _, state = self.decoder.score(fused)
        gen.texts = [self.vocab.decode(t) for t in gen.tokens]
        return {
            "p_attr": self.attr_head(vis["group_emb"]),
            "p_in": self.inst_head(vis["fv"]),
            "p_llm": self.llm_head(state.last_hidden),
            "generation": gen,
        }
