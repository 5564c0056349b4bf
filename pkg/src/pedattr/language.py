"""Language branch: vocabulary, instruction template, answer masking, fusion,
a small causal decoder with adapters on its last layers, and the
last-hidden-state attribute classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .dataset.captions import NONE_PHRASE, detokenize, tokenize
from .layers import Block
from .schema import AttributeSchema

PAD, BOS, EOS, UNK, CLS = "<pad>", "<bos>", "<eos>", "<unk>", "<cls>"
SPECIALS = (PAD, BOS, EOS, UNK, CLS)
PREAMBLE = "Human: Analyze the person's photo, and categorize it into attributes."
ASSISTANT_CUE = "Assistant:"
MASK_KINDS = ("ground_truth", "mask_padding", "random_sentence")


class Vocabulary:
    """Closed word/punctuation vocabulary; ids 0..4 are the special tokens."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def from_schema(cls, schema: AttributeSchema, extra_texts=()) -> "Vocabulary":
        words = set(tokenize(PREAMBLE)) | set(tokenize(ASSISTANT_CUE)) | set(tokenize(NONE_PHRASE))
        words |= {":", ",", "."}
        for a in schema.attributes:
            words |= set(tokenize(a))
        for g in schema.groups:
            words |= set(tokenize(g.name)) | set(tokenize(g.question))
        for t in extra_texts:
            words |= set(tokenize(t))
        return cls(list(SPECIALS) + sorted(words))

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    pad_id = property(lambda self: self.index[PAD])
    bos_id = property(lambda self: self.index[BOS])
    eos_id = property(lambda self: self.index[EOS])
    unk_id = property(lambda self: self.index[UNK])
    cls_id = property(lambda self: self.index[CLS])

    def encode(self, text: str) -> list[int]:
        return [self.index.get(t, self.unk_id) for t in tokenize(text)]

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == self.eos_id:
                break
            if i in (self.pad_id, self.bos_id, self.cls_id):
                continue
            out.append(self.tokens[i])
        return detokenize(out)


@dataclass(frozen=True)
class InstructionSequence:
    """Alternating text spans and image slots: ``("text", ids)`` or ``("slot", group)``."""

    segments: tuple

    @property
    def slots(self) -> list[int]:
        return [v for kind, v in self.segments if kind == "slot"]

    def text_length(self) -> int:
        return sum(len(v) for kind, v in self.segments if kind == "text")


def build_instruction(schema: AttributeSchema, vocab: Vocabulary) -> InstructionSequence:
    """Preamble, then one image slot followed by its group's question per group, then the assistant cue."""
    segs = []
    text = vocab.encode(PREAMBLE)
    for j, g in enumerate(schema.groups):
        segs.append(("text", tuple(text)))
        segs.append(("slot", j))
        text = vocab.encode(g.question)
    segs.append(("text", tuple(text + vocab.encode(ASSISTANT_CUE))))
    return InstructionSequence(tuple(segs))


@dataclass(frozen=True)
class MaskStrategy:
    kind: str = "random_sentence"
    mask_rate: float = 0.5

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask strategy {self.kind!r}; expected one of {MASK_KINDS}")
        if not 0 <= self.mask_rate <= 1:
            raise ValueError("mask_rate must be in [0, 1]")


@dataclass
class TargetSpan:
    """Decoder answer context (length T) and the aligned next-token targets (length T + 1)."""

    context: np.ndarray
    target: np.ndarray
    n_masked: int = 0


def _fit(ids, length, pad):
    ids = list(ids)[:length]
    return np.array(ids + [pad] * (length - len(ids)), dtype=np.int64)


def prepare_target(caption_ids, strategy: MaskStrategy, span_length: int, vocab: Vocabulary,
                   pool=None, rng: np.random.Generator | int | None = None) -> TargetSpan:
    """Build the training answer span for one caption.

    The target is always the true caption followed by ``<eos>``. The context
    fed to the decoder is the caption itself (``ground_truth``), the caption
    with ``ceil(rate * T)`` seeded positions replaced by ``<pad>``
    (``mask_padding``), or a caption drawn uniformly from ``pool``
    (``random_sentence``). Context length is fixed at ``span_length`` so it
    carries no label information when fully masked or replaced.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    caption_ids = list(caption_ids)
    pad = vocab.pad_id
    target = _fit(caption_ids + [vocab.eos_id], span_length + 1, pad)
    if strategy.kind == "ground_truth":
        return TargetSpan(_fit(caption_ids, span_length, pad), target)
    if strategy.kind == "mask_padding":
        ctx = _fit(caption_ids, span_length, pad)
        t = min(len(caption_ids), span_length)
        n = math.ceil(strategy.mask_rate * t - 1e-12)
        pos = rng.choice(t, size=n, replace=False) if n else np.zeros(0, dtype=int)
        ctx[pos] = pad
        return TargetSpan(ctx, target, int(n))
    if not pool:
        raise ValueError("random_sentence strategy needs a non-empty caption pool")
    drawn = pool[int(rng.integers(len(pool)))]
    return TargetSpan(_fit(drawn, span_length, pad), target, span_length)


@dataclass
class FusedInstruction:
    embeddings: torch.Tensor  # (B, S, D_lm)
    slot_map: list  # per group: (start, stop) rows
    prefix_length: int


def fuse_instruction(instr: InstructionSequence, fq: torch.Tensor, projection: nn.Module,
                     token_embedding: nn.Embedding, context_ids: torch.Tensor | None = None) -> FusedInstruction:
    """Splice projected group tokens into the embedded instruction.

    ``fq`` is (B, K, L_q, D); each slot becomes L_q rows. ``context_ids``
    (B, T), when given, is embedded and appended after the assistant cue.
    """
    b, k, lq, _ = fq.shape
    if len(instr.slots) != k:
        raise ValueError(f"instruction has {len(instr.slots)} image slots, got {k} groups of query features")
    dev = token_embedding.weight.device
    parts, slot_map, pos = [], [None] * k, 0
    for kind, v in instr.segments:
        if kind == "text":
            e = token_embedding(torch.as_tensor(v, dtype=torch.long, device=dev))
            parts.append(e.unsqueeze(0).expand(b, -1, -1))
            pos += len(v)
        else:
            parts.append(projection(fq[:, v]))
            slot_map[v] = (pos, pos + lq)
            pos += lq
    prefix = pos
    if context_ids is not None:
        parts.append(token_embedding(context_ids))
    return FusedInstruction(torch.cat(parts, dim=1), slot_map, prefix)


@dataclass
class DecoderState:
    hidden: torch.Tensor  # (B, S, D_lm)

    @property
    def last_hidden(self) -> torch.Tensor:
        return self.hidden[:, -1]


@dataclass
class Generation:
    tokens: list  # per sample list of ids, without <eos>
    step_logits: list  # per sample (n_steps, V)
    exhausted: np.ndarray  # True where max length was reached without <eos>
    texts: list = field(default_factory=list)


class Decoder(nn.Module):
    """Pre-norm causal transformer LM; LoRA on Q/V of the last ``lora_layers`` blocks."""

    def __init__(self, vocab_size: int, dim=128, depth=4, heads=4, max_len=1024, lora_layers=3,
                 lora_rank=4, lora_scale=1.0):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, dim)
        nn.init.normal_(self.embed.weight, std=0.02 * math.sqrt(dim))
        self.pos = nn.Parameter(torch.randn(max_len, dim) * 0.02 * math.sqrt(dim))
        first_adapted = depth - min(lora_layers, depth)
        self.blocks = nn.ModuleList(
            Block(dim, heads, lora_rank=lora_rank if i >= first_adapted else 0, lora_scale=lora_scale)
            for i in range(depth)
        )
        self.norm = nn.LayerNorm(dim)
        self.lm_head = nn.Linear(dim, vocab_size)

    def forward(self, embeds: torch.Tensor, start: int = 0, caches=None):
        """Hidden states (after final norm) and vocabulary logits for every input row."""
        n = embeds.shape[1]
        if start + n > self.pos.shape[0]:
            raise ValueError(f"sequence length {start + n} exceeds decoder max length {self.pos.shape[0]}")
        x = embeds + self.pos[start:start + n]
        for i, blk in enumerate(self.blocks):
            x = blk(x, causal=True, cache=None if caches is None else caches[i])
        h = self.norm(x)
        return h, self.lm_head(h)

    def score(self, fused: FusedInstruction):
        """Teacher-forced pass. Returns (step logits for every answer position, DecoderState).

        Step t's logits (t = 0..T) predict answer token t: row ``prefix - 1 + t``.
        """
        h, logits = self(fused.embeddings)
        return logits[:, fused.prefix_length - 1:], DecoderState(h)

    def score_continuations(self, fused: FusedInstruction, continuations) -> list:
        """Teacher-forced passes of several answer continuations sharing one prefix.

        ``fused`` holds only the prefix; each continuation is a (B, T, D_lm)
        embedding. The prefix keys/values are computed once. Each result equals
        ``score`` on the concatenated sequence.
        """
        caches = [dict() for _ in self.blocks]
        h0, l0 = self(fused.embeddings, 0, caches)
        start = fused.embeddings.shape[1]
        out = []
        for emb in continuations:
            h, logits = self(emb, start, [dict(c) for c in caches])
            out.append((torch.cat([l0[:, -1:], logits], dim=1), DecoderState(torch.cat([h0, h], dim=1))))
        return out

    @torch.no_grad()
    def generate(self, fused: FusedInstruction, eos_id: int, max_new_tokens: int) -> Generation:
        """Greedy decoding with a key/value cache."""
        b = fused.embeddings.shape[0]
        caches = [dict() for _ in self.blocks]
        _, logits = self(fused.embeddings, 0, caches)
        step = logits[:, -1]
        pos = fused.embeddings.shape[1]
        tokens = [[] for _ in range(b)]
        steps = [[] for _ in range(b)]
        done = np.zeros(b, dtype=bool)
        for _ in range(max_new_tokens):
            nxt = step.argmax(dim=-1)
            for i in range(b):
                if not done[i]:
                    steps[i].append(step[i])
                    if int(nxt[i]) == eos_id:
                        done[i] = True
                    else:
                        tokens[i].append(int(nxt[i]))
            if done.all():
                break
            _, logits = self(self.embed(nxt)[:, None, :], pos, caches)
            step = logits[:, -1]
            pos += 1
        return Generation(tokens, [torch.stack(s) for s in steps], ~done)


def decode(decoder: Decoder, fused: FusedInstruction, mode: str = "train", eos_id: int | None = None,
           max_new_tokens: int = 128):
    """``train``: teacher-forced (step logits, DecoderState); ``generate``: greedy Generation."""
    if mode == "train":
        return decoder.score(fused)
    if mode == "generate":
        if eos_id is None:
            raise ValueError("generation needs eos_id")
        return decoder.generate(fused, eos_id, max_new_tokens)
    raise ValueError(f"unknown decode mode {mode!r}")


def llm_classify(state: DecoderState | torch.Tensor, head: nn.Linear) -> torch.Tensor:
    """Attribute logits from the decoder's last hidden state."""
    last = state.last_hidden if isinstance(state, DecoderState) else state
    return head(last)
