"""Training/model configuration with the desk-scale and full-scale presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

import yaml


@dataclass
class TrainConfig:
    # visual branch
    image_size: tuple = (128, 64)
    patch_size: int = 16
    dim: int = 64
    depth: int = 2
    heads: int = 4
    n_queries: int = 16
    agfa_depth: int = 3
    agfa_from_encoder: bool = True
    qformer_depth: int = 1
    qformer_per_group: bool = False
    cbam_reduction: int = 4
    cbam_kernel: int = 7
    # language branch
    lm_dim: int = 128
    lm_depth: int = 4
    lm_heads: int = 4
    lm_lora_layers: int = 3
    lm_max_len: int = 1024
    lm_trainable: str = "all"  # "adapters", "embeddings" (+ adapters) or "all"
    max_caption_tokens: int | None = None
    llm_hidden: str = "last"  # "last" answer position or an appended "cls" token
    # adapters
    lora_rank: int = 4
    lora_scale: float = 1.0
    # objective
    mask_strategy: str = "random_sentence"
    mask_rate: float = 0.5
    caption_forcing: str = "true_caption"  # or "context": caption loss read from the masked-context pass
    aggregation: str = "mean"
    loss_coefficients: dict = field(default_factory=lambda: {"attr": 1.0, "inst": 1.0, "llm": 1.0, "cap": 1.0})
    weighted_loss: bool = True
    # optimizer
    lr: float = 2e-3
    weight_decay: float = 1e-4
    epochs: int = 75
    max_steps: int | None = 300
    batch_size: int = 12
    grad_clip: float | None = 1.0
    seed: int = 0
    threshold: float = 0.5
    # data
    schema: str = "msp60k"
    manifest: str | None = None
    image_root: str | None = None
    split_file: str | None = None
    degradation_file: str | None = None
    train_split: str = "train"
    eval_split: str = "test"
    val_split: str | None = "val"
    log_every: int = 10
    checkpoint_every: int | None = None
    val_every_epochs: int | None = 1

    def __post_init__(self):
        self.image_size = tuple(self.image_size)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def desk_preset(**overrides) -> TrainConfig:
    return TrainConfig(**overrides)


def full_preset(**overrides) -> TrainConfig:
    """Full-scale hyper-parameters (ViT-g width visual encoder, 7B-class decoder shape).

    Image size and Q-Former depth are not published; 224 x 224 and 2 layers
    are placeholders.
    """
    base = dict(
        image_size=(224, 224), patch_size=14, dim=1408, depth=39, heads=16,
        n_queries=128, agfa_depth=3, qformer_depth=2,
        lm_dim=4096, lm_depth=32, lm_heads=32, lm_lora_layers=3, lm_max_len=2048,
        lm_trainable="adapters", lora_rank=32, lora_scale=1.0,
        lr=2e-5, weight_decay=1e-4, epochs=60, max_steps=None, batch_size=4,
    )
    base.update(overrides)
    return TrainConfig(**base)


PRESETS = {"desk": desk_preset, "full": full_preset}


def load_config(path=None, preset: str = "desk", **overrides) -> TrainConfig:
    """Preset defaults, overridden by a YAML file, overridden by keyword arguments."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    d = PRESETS[preset]().to_dict()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if "preset" in doc:
            d = PRESETS[doc.pop("preset")]().to_dict()
        d.update(doc)
    d.update(overrides)
    return TrainConfig.from_dict(d)
