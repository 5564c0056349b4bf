"""Transformer building blocks shared by the vision and language stacks."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def lora_forward(x: torch.Tensor, base_weight: torch.Tensor, down: torch.Tensor, up: torch.Tensor,
                 scale: float, base_bias: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ W + scale * (x @ down) @ up`` with ``W`` of shape (d_in, d_out)."""
    if x.shape[-1] != base_weight.shape[0] or down.shape[0] != base_weight.shape[0] \
            or up.shape[1] != base_weight.shape[1] or down.shape[1] != up.shape[0]:
        raise ValueError(
            f"shape mismatch: x {tuple(x.shape)}, W {tuple(base_weight.shape)}, "
            f"down {tuple(down.shape)}, up {tuple(up.shape)}"
        )
    y = x @ base_weight
    if base_bias is not None:
        y = y + base_bias
    if scale != 0:
        y = y + scale * ((x @ down) @ up)
    return y


class LoRALinear(nn.Module):
    """Frozen linear map plus a trainable low-rank delta.

    ``up`` starts at zero so the adapted map equals the base map until trained.
    ``rank=0`` disables the adapter entirely.
    """

    def __init__(self, d_in: int, d_out: int, rank: int = 0, scale: float = 1.0, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_in, d_out))
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None
        nn.init.normal_(self.weight, std=d_in ** -0.5)
        self.rank = rank
        self.scale = scale
        if rank > 0:
            self.lora_down = nn.Parameter(torch.empty(d_in, rank))
            self.lora_up = nn.Parameter(torch.zeros(rank, d_out))
            nn.init.kaiming_uniform_(self.lora_down.T, a=math.sqrt(5))
        else:
            self.register_parameter("lora_down", None)
            self.register_parameter("lora_up", None)

    def forward(self, x):
        if self.rank == 0:
            y = x @ self.weight
            return y if self.bias is None else y + self.bias
        return lora_forward(x, self.weight, self.lora_down, self.lora_up, self.scale, self.bias)

    def adapter_parameters(self):
        return [p for p in (self.lora_down, self.lora_up) if p is not None]


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Attention(nn.Module):
    """Multi-head scaled dot-product attention with LoRA-capable Q and V projections.

    Self-attention when ``context`` is None, cross-attention otherwise. With a
    ``cache`` dict, keys/values of the new positions are appended to it.
    """

    def __init__(self, dim: int, heads: int, lora_rank: int = 0, lora_scale: float = 1.0):
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = LoRALinear(dim, dim, lora_rank, lora_scale)
        self.k = LoRALinear(dim, dim)
        self.v = LoRALinear(dim, dim, lora_rank, lora_scale)
        self.o = LoRALinear(dim, dim)
        self.last_weights = None
        self.keep_weights = False

    def _split(self, x):
        b, n, d = x.shape
        return x.view(b, n, self.heads, d // self.heads).transpose(1, 2)

    def forward(self, x, context=None, causal: bool = False, cache: dict | None = None):
        src = x if context is None else context
        q, k, v = self._split(self.q(x)), self._split(self.k(src)), self._split(self.v(src))
        if cache is not None:
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        mask = None
        if causal:
            nq, nk = q.shape[2], k.shape[2]
            # query i sits at absolute position nk - nq + i
            mask = torch.ones(nq, nk, dtype=torch.bool, device=x.device).tril(diagonal=nk - nq)
        if self.keep_weights:
            scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
            if mask is not None:
                scores = scores.masked_fill(~mask, float("-inf"))
            weights = torch.softmax(scores, dim=-1)
            self.last_weights = weights.detach()
            out = weights @ v
        else:
            out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        out = out.transpose(1, 2).reshape(x.shape)
        return self.o(out)


class Block(nn.Module):
    """Pre-norm residual block: [self-attn] -> [cross-attn] -> FFN."""

    def __init__(self, dim: int, heads: int, self_attn: bool = True, cross_attn: bool = False,
                 lora_rank: int = 0, lora_scale: float = 1.0, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim) if self_attn else None
        self.attn = Attention(dim, heads, lora_rank, lora_scale) if self_attn else None
        if cross_attn:
            self.norm_q = nn.LayerNorm(dim)
            self.norm_kv = nn.LayerNorm(dim)
            self.cross = Attention(dim, heads)
        else:
            self.norm_q = self.norm_kv = self.cross = None
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, mlp_ratio * dim)

    def forward(self, x, context=None, causal: bool = False, cache: dict | None = None):
        if self.attn is not None:
            x = x + self.attn(self.norm1(x), causal=causal, cache=cache)
        if self.cross is not None:
            x = x + self.cross(self.norm_q(x), context=self.norm_kv(context))
        return x + self.ffn(self.norm2(x))


def adapter_parameters(module: nn.Module):
    return [p for m in module.modules() if isinstance(m, LoRALinear) for p in m.adapter_parameters()]
