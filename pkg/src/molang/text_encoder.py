from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Self

import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn

from molang.const import MAX_TOKENS
from molang.exception import MolangConfigException, MolangShapeException
from molang.nn.layers import (
    Dropout,
    Embedding,
    LayerNorm,
    Linear,
    TransformerBlock,
    block_parameter_count,
)

if TYPE_CHECKING:
    from molang.typing import Payload

PRESETS: dict[str, dict[str, Any]] = {
    "paper": {
        "layers": 12,
        "heads": 12,
        "dim": 768,
        "ffn_dim": 3072,
        "projection_dim": 768,
    },
    "desk": {
        "layers": 2,
        "heads": 4,
        "dim": 64,
        "ffn_dim": 128,
        "projection_dim": 64,
    },
}


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    dim: int = 64
    ffn_dim: int = 128
    dropout: float = 0.1
    max_tokens: int = MAX_TOKENS
    projection_dim: int = 64
    preset: str = "desk"
    # Reserved for importing pre-trained weights; always None today.
    pretrained_source: str | None = None

    def __post_init__(self) -> None:
        if self.max_tokens < 2:
            m = f"max_tokens {self.max_tokens} can't fit [CLS] and [SEP]"
            raise MolangConfigException(m)
        if self.dim % self.heads != 0:
            m = f"dim {self.dim} isn't divisible by {self.heads} heads"
            raise MolangConfigException(m)
        if self.vocab_size < 4:
            m = f"vocab_size {self.vocab_size} can't hold the reserved ids"
            raise MolangConfigException(m)

    @classmethod
    def from_preset(
        cls, preset: str, vocab_size: int, **overrides: Any
    ) -> Self:
        if preset not in PRESETS:
            m = f"unknown preset {preset!r}, use one of {sorted(PRESETS)}"
            raise MolangConfigException(m)
        options = {**PRESETS[preset], "preset": preset, **overrides}
        return cls(vocab_size=vocab_size, **options)

    def to_dict(self) -> Payload:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Payload) -> Self:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            m = f"unknown text encoder options {sorted(unknown)}"
            raise MolangConfigException(m)
        return cls(**data)

    def parameter_count(self) -> int:
        d = self.dim
        count = self.vocab_size * d + self.max_tokens * d
        count += self.layers * block_parameter_count(d, self.ffn_dim)
        count += 2 * d
        count += d * self.projection_dim + self.projection_dim
        return count


class TextEncoder(nn.Module):
    def __init__(self, config: TextEncoderConfig):
        super().__init__()
        self.config = config
        d = config.dim

        self.tokens = Embedding(config.vocab_size, d)
        self.positions = Embedding(config.max_tokens, d)
        self.dropout = Dropout(config.dropout)
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.heads, config.ffn_dim, config.dropout)
            for _ in range(config.layers)
        )
        self.final_norm = LayerNorm(d)
        self.projection = Linear(d, config.projection_dim)

    def forward(
        self, ids: torch.Tensor, padding: torch.Tensor
    ) -> torch.Tensor:
        """Unit-norm projection of the CLS state; PAD slots are masked."""
        too_long = ids.shape[-1] > self.config.max_tokens
        if ids.shape != padding.shape or too_long:
            raise MolangShapeException("encode_text", ids.shape, padding.shape)

        positions = torch.arange(ids.shape[-1])
        h = self.dropout(self.tokens(ids) + self.positions(positions))
        for block in self.blocks:
            h = block(h, padding)
        h = self.final_norm(h)
        return F.normalize(self.projection(h[:, 0]), dim=-1)

    def encode_text(
        self, ids: torch.Tensor, padding: torch.Tensor
    ) -> torch.Tensor:
        return self(ids, padding)
