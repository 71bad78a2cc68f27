from __future__ import annotations

import math

import torch
from torch import nn

from molang.exception import MolangConfigException, MolangShapeException
from molang.nn import functional as mf

INIT_STD = 0.02


class Linear(nn.Linear):
    """``nn.Linear`` with truncated-normal init and checked shapes."""

    def reset_parameters(self) -> None:
        nn.init.trunc_normal_(
            self.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD
        )
        if self.bias is not None:
            nn.init.zeros_(self.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return mf.linear(x, self.weight, self.bias)


class Embedding(nn.Embedding):
    def reset_parameters(self) -> None:
        nn.init.normal_(self.weight, std=INIT_STD)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return mf.embedding_lookup(self.weight, ids)


class LayerNorm(nn.LayerNorm):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return mf.layer_norm(x, self.weight, self.bias, self.eps)


class Dropout(nn.Dropout):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return mf.dropout(x, self.p, training=self.training)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if dim % heads != 0:
            m = f"model dim {dim} isn't divisible by {heads} heads"
            raise MolangConfigException(m)

        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.query = Linear(dim, dim)
        self.key = Linear(dim, dim)
        self.value = Linear(dim, dim)
        self.out = Linear(dim, dim)
        self.dropout = Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, s, _ = x.shape
        return x.view(b, s, self.heads, self.head_dim).transpose(1, 2)

    def attention_weights(
        self, x: torch.Tensor, key_padding: torch.Tensor | None = None
    ) -> torch.Tensor:
        """``B x heads x S x S`` weights; padded keys get exactly zero."""
        q = self._split(self.query(x))
        k = self._split(self.key(x))
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)

        if key_padding is not None:
            if key_padding.shape != x.shape[:2]:
                raise MolangShapeException(
                    "key_padding", x.shape, key_padding.shape
                )
            logits = logits.masked_fill(
                key_padding[:, None, None, :], float("-inf")
            )
        return mf.softmax(logits, axis=-1)

    def forward(
        self, x: torch.Tensor, key_padding: torch.Tensor | None = None
    ) -> torch.Tensor:
        weights = self.dropout(self.attention_weights(x, key_padding))
        v = self._split(self.value(x))
        y = (weights @ v).transpose(1, 2).reshape(x.shape)
        return self.out(y)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.inner = Linear(dim, hidden)
        self.outer = Linear(hidden, dim)
        self.dropout = Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.outer(self.dropout(nn.functional.gelu(self.inner(x))))


class TransformerBlock(nn.Module):
    """Pre-norm residual block: LN, attention, add; LN, FFN, add."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.attn_norm = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, dropout)
        self.ffn_norm = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.dropout = Dropout(dropout)

    def forward(
        self, x: torch.Tensor, key_padding: torch.Tensor | None = None
    ) -> torch.Tensor:
        x = x + self.dropout(self.attn(self.attn_norm(x), key_padding))
        return x + self.dropout(self.ffn(self.ffn_norm(x)))


def block_parameter_count(dim: int, ffn_dim: int) -> int:
    attention = 4 * (dim * dim + dim)
    ffn = dim * ffn_dim + ffn_dim + ffn_dim * dim + dim
    norms = 2 * 2 * dim
    return attention + ffn + norms
