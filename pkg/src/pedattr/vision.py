"""Visual branch: patch embedding, adapted encoder, group query aggregation, Q-Former, CBAM."""

from __future__ import annotations

import torch
from torch import nn

from .layers import Block


class PatchEmbed(nn.Module):
    """Non-overlapping patches -> linear projection -> + learned position embedding."""

    def __init__(self, image_size=(128, 64), patch_size: int = 16, dim: int = 64):
        super().__init__()
        h, w = image_size
        if h % patch_size or w % patch_size:
            raise ValueError(f"image size {image_size} not divisible by patch size {patch_size}")
        self.patch_size = patch_size
        self.grid = (h // patch_size, w // patch_size)
        self.proj = nn.Linear(3 * patch_size * patch_size, dim)
        self.pos = nn.Parameter(torch.randn(self.grid[0] * self.grid[1], dim) * 0.02)

    @property
    def n_tokens(self) -> int:
        return self.grid[0] * self.grid[1]

    def patchify(self, pixels: torch.Tensor) -> torch.Tensor:
        """(B, H, W, 3) -> (B, N_v, 3 * p * p), patches in row-major order."""
        b, h, w, c = pixels.shape
        p = self.patch_size
        if h % p or w % p:
            raise ValueError(f"image {h}x{w} not divisible by patch size {p}")
        x = pixels.reshape(b, h // p, p, w // p, p, c).permute(0, 1, 3, 2, 4, 5)
        return x.reshape(b, (h // p) * (w // p), p * p * c)

    def forward(self, pixels: torch.Tensor) -> torch.Tensor:
        tokens = self.proj(self.patchify(pixels))
        if tokens.shape[1] != self.pos.shape[0]:
            raise ValueError(f"got {tokens.shape[1]} patches, position table has {self.pos.shape[0]}")
        return tokens + self.pos


def patch_embed(pixels: torch.Tensor, patch_size: int, proj_weight: torch.Tensor, proj_bias: torch.Tensor,
                pos: torch.Tensor) -> torch.Tensor:
    """Functional form of :class:`PatchEmbed`; ``pixels`` is (H, W, 3) or (B, H, W, 3)."""
    single = pixels.ndim == 3
    if single:
        pixels = pixels[None]
    b, h, w, c = pixels.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch_size}")
    p = patch_size
    x = pixels.reshape(b, h // p, p, w // p, p, c).permute(0, 1, 3, 2, 4, 5).reshape(b, -1, p * p * c)
    out = x @ proj_weight.T + proj_bias + pos
    return out[0] if single else out


class VisualEncoder(nn.Module):
    """Pre-norm ViT encoder; base weights frozen, LoRA on Q and V of every layer."""

    def __init__(self, image_size=(128, 64), patch_size=16, dim=64, depth=2, heads=4,
                 lora_rank=4, lora_scale=1.0):
        super().__init__()
        self.embed = PatchEmbed(image_size, patch_size, dim)
        self.blocks = nn.ModuleList(Block(dim, heads, lora_rank=lora_rank, lora_scale=lora_scale) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        for blk in self.blocks:
            tokens = blk(tokens)
        return self.norm(tokens)

    def forward(self, pixels: torch.Tensor) -> torch.Tensor:
        return self.encode(self.embed(pixels))


class AGFA(nn.Module):
    """Learnable part-query bank (K x L x D) refined by stacked cross-attention + FFN.

    Queries never attend to each other, so each group (indeed each query)
    reads the visual tokens independently and the result does not depend on
    the order of the visual tokens.
    """

    def __init__(self, n_groups: int, n_queries: int, dim: int, heads: int, depth: int = 3):
        super().__init__()
        if depth < 1:
            raise ValueError("AGFA depth must be >= 1")
        self.queries = nn.Parameter(torch.randn(n_groups, n_queries, dim) * 0.02)
        self.layers = nn.ModuleList(Block(dim, heads, self_attn=False, cross_attn=True) for _ in range(depth))

    def forward(self, visual: torch.Tensor) -> torch.Tensor:
        b, _, d = visual.shape
        if d != self.queries.shape[-1]:
            raise ValueError(f"visual width {d} != query width {self.queries.shape[-1]}")
        k, l, _ = self.queries.shape
        x = self.queries.reshape(1, k * l, d).expand(b, -1, -1)
        for layer in self.layers:
            x = layer(x, context=visual)
        return x.reshape(b, k, l, d)

    def init_from_encoder(self, encoder: VisualEncoder) -> list[tuple[int, int]]:
        """Copy weights of the encoder's last layers into the AGFA stack, aligned from the end.

        Self-attention Q/K/V/O projections go to the cross-attention ones (the
        copied Q acts on the part queries, K and V on the visual tokens), the
        attention pre-norm goes to both cross-attention norms, FFN and its norm
        are copied as is. Adapters are not copied. When the encoder is shallower
        than AGFA, the leading AGFA layers keep their fresh init. Returns the
        (agfa_layer, encoder_layer) pairs copied.
        """
        pairs = []
        n_a, n_e = len(self.layers), len(encoder.blocks)
        with torch.no_grad():
            for i, layer in enumerate(self.layers):
                src_i = n_e - n_a + i
                if src_i < 0:
                    continue
                src = encoder.blocks[src_i]
                for name in ("q", "k", "v", "o"):
                    dst_lin, src_lin = getattr(layer.cross, name), getattr(src.attn, name)
                    dst_lin.weight.copy_(src_lin.weight)
                    dst_lin.bias.copy_(src_lin.bias)
                for norm in (layer.norm_q, layer.norm_kv):
                    norm.load_state_dict(src.norm1.state_dict())
                layer.norm2.load_state_dict(src.norm2.state_dict())
                layer.ffn.load_state_dict(src.ffn.state_dict())
                pairs.append((i, src_i))
        return pairs


class QFormer(nn.Module):
    """Per group: self-attention over its L tokens, cross-attention to its own
    group features, FFN. One weight set shared by all groups unless
    ``per_group`` is set."""

    def __init__(self, dim: int, heads: int, depth: int = 1, n_groups: int = 1, per_group: bool = False):
        super().__init__()
        self.per_group = per_group
        n_stacks = n_groups if per_group else 1
        self.stacks = nn.ModuleList(
            nn.ModuleList(Block(dim, heads, self_attn=True, cross_attn=True) for _ in range(depth))
            for _ in range(n_stacks)
        )

    @staticmethod
    def _run(stack, x, ctx):
        for blk in stack:
            x = blk(x, context=ctx)
        return x

    def forward(self, fg: torch.Tensor) -> torch.Tensor:
        b, k, l, d = fg.shape
        if not self.per_group:
            flat = fg.reshape(b * k, l, d)
            return self._run(self.stacks[0], flat, flat).reshape(b, k, l, d)
        return torch.stack([self._run(self.stacks[j], fg[:, j], fg[:, j]) for j in range(k)], dim=1)


class CBAM(nn.Module):
    """Channel gate then token gate over a group's L tokens, followed by mean pooling.

    The token gate is a 1-D convolution along the query axis over the
    per-token channel mean and max.
    """

    def __init__(self, dim: int, reduction: int = 4, kernel_size: int = 7):
        super().__init__()
        hidden = max(1, dim // reduction)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, dim))
        self.conv = nn.Conv1d(2, 1, kernel_size, padding=kernel_size // 2)

    def gates(self, x: torch.Tensor):
        """Return (channel_gate (N, D), token_gate (N, L)) for x of shape (N, L, D)."""
        ch = torch.sigmoid(self.mlp(x.mean(dim=1)) + self.mlp(x.amax(dim=1)))
        y = x * ch[:, None, :]
        stats = torch.stack([y.mean(dim=2), y.amax(dim=2)], dim=1)
        tok = torch.sigmoid(self.conv(stats)[:, 0])
        return ch, tok

    def forward(self, fg: torch.Tensor) -> torch.Tensor:
        """(B, K, L, D) -> (B, K, D)."""
        b, k, l, d = fg.shape
        x = fg.reshape(b * k, l, d)
        ch, tok = self.gates(x)
        out = (x * ch[:, None, :] * tok[:, :, None]).mean(dim=1)
        return out.reshape(b, k, d)


class VisionStack(nn.Module):
    """Encoder -> AGFA -> (Q-Former, CBAM) with all intermediate features returned."""

    def __init__(self, n_groups: int, image_size=(128, 64), patch_size=16, dim=64, depth=2, heads=4,
                 n_queries=16, agfa_depth=3, qformer_depth=1, qformer_per_group=False,
                 lora_rank=4, lora_scale=1.0, agfa_from_encoder=True, cbam_reduction=4, cbam_kernel=7):
        super().__init__()
        self.encoder = VisualEncoder(image_size, patch_size, dim, depth, heads, lora_rank, lora_scale)
        self.agfa = AGFA(n_groups, n_queries, dim, heads, agfa_depth)
        if agfa_from_encoder:
            self.agfa.init_from_encoder(self.encoder)
        self.qformer = QFormer(dim, heads, qformer_depth, n_groups, qformer_per_group)
        self.cbam = CBAM(dim, cbam_reduction, cbam_kernel)

    def freeze_base(self):
        """Freeze every encoder weight except the adapters."""
        for name, p in self.encoder.named_parameters():
            p.requires_grad_("lora_" in name)

    def forward(self, pixels: torch.Tensor) -> dict:
        fv = self.encoder(pixels)
        fg = self.agfa(fv)
        return {"fv": fv, "fg": fg, "fq": self.qformer(fg), "group_emb": self.cbam(fg)}


def normalize_pixels(images, dtype=torch.float32) -> torch.Tensor:
    """uint8 (B, H, W, 3) -> float in [-1, 1]."""
    x = torch.as_tensor(images)
    return x.to(dtype) / 127.5 - 1.0
