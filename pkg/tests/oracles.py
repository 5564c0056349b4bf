"""Plain-numpy reference arithmetic for the torch modules under test."""

import math

import numpy as np


def p(t):
    return t.detach().numpy().astype(np.float64)


def layernorm(x, ln):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + ln.eps) * p(ln.weight) + p(ln.bias)


def linear(x, lin):
    """LoRALinear stores W as (d_in, d_out)."""
    y = x @ p(lin.weight) + p(lin.bias)
    if lin.rank:
        y = y + lin.scale * (x @ p(lin.lora_down)) @ p(lin.lora_up)
    return y


def softmax(s):
    e = np.exp(s - s.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def attention(x, ctx, attn, causal=False):
    q, k, v = linear(x, attn.q), linear(ctx, attn.k), linear(ctx, attn.v)
    h = attn.heads
    d = q.shape[-1] // h
    out = np.zeros_like(q)
    for j in range(h):
        sl = slice(j * d, (j + 1) * d)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(d)
        if causal:
            s = np.where(np.tril(np.ones_like(s)) > 0, s, -np.inf)
        out[:, sl] = softmax(s) @ v[:, sl]
    return linear(out, attn.o)


def gelu(x):
    from scipy.special import erf
    return 0.5 * x * (1 + erf(x / math.sqrt(2)))


def ffn(x, f):
    h = gelu(x @ p(f.fc1.weight).T + p(f.fc1.bias))
    return h @ p(f.fc2.weight).T + p(f.fc2.bias)


def block(x, blk, ctx=None, causal=False):
    if blk.attn is not None:
        n = layernorm(x, blk.norm1)
        x = x + attention(n, n, blk.attn, causal)
    if blk.cross is not None:
        x = x + attention(layernorm(x, blk.norm_q), layernorm(ctx, blk.norm_kv), blk.cross)
    return x + ffn(layernorm(x, blk.norm2), blk.ffn)


def cbam(x, mod):
    """x: (L, D) for one group -> (D,)."""
    l1, l2 = mod.mlp[0], mod.mlp[2]

    def mlp(v):
        return np.maximum(v @ p(l1.weight).T + p(l1.bias), 0) @ p(l2.weight).T + p(l2.bias)

    ch = 1 / (1 + np.exp(-(mlp(x.mean(0)) + mlp(x.max(0)))))
    y = x * ch
    stats = np.stack([y.mean(1), y.max(1)])  # (2, L)
    w = p(mod.conv.weight)[0]  # (2, k)
    k = w.shape[1]
    pad = np.pad(stats, ((0, 0), (k // 2, k // 2)))
    conv = np.array([np.sum(w * pad[:, t:t + k]) for t in range(x.shape[0])]) + p(mod.conv.bias)[0]
    tok = 1 / (1 + np.exp(-conv))
    return (y * tok[:, None]).mean(0)
