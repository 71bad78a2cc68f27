"""Shape-checked wrappers over the torch ops both encoders are built from.

Gradients come from torch autograd; these wrappers only pin down the
contracts and turn shape mismatches into ``MolangShapeException``.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F  # noqa: N812

from molang.exception import (
    MolangInvalidArgumentException,
    MolangShapeException,
)

LAYER_NORM_EPS = 1e-5


def linear(
    x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None
) -> torch.Tensor:
    """``x @ W.T + b`` with ``W`` stored ``out x in`` like ``nn.Linear``."""
    if x.shape[-1] != weight.shape[-1]:
        raise MolangShapeException("linear", x.shape, weight.shape)
    if bias is not None and bias.shape != weight.shape[:1]:
        raise MolangShapeException("linear bias", weight.shape, bias.shape)
    return F.linear(x, weight, bias)


def layer_norm(
    x: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    eps: float = LAYER_NORM_EPS,
) -> torch.Tensor:
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise MolangShapeException("layer_norm", x.shape, gamma.shape)
    return F.layer_norm(x, x.shape[-1:], gamma, beta, eps)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=axis)


def embedding_lookup(table: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    if table.ndim != 2:
        raise MolangShapeException("embedding_lookup", table.shape, ids.shape)
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= len(table)):
        m = f"ids must be in [0, {len(table)}), got {int(ids.max())}"
        raise MolangInvalidArgumentException(m)
    return F.embedding(ids, table)


def dropout(
    x: torch.Tensor,
    p: float,
    generator: torch.Generator | None = None,
    training: bool = True,
) -> torch.Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise MolangInvalidArgumentException(f"dropout p={p} isn't in [0, 1)")
    if not training or p == 0.0:
        return x
    keep = torch.empty_like(x).bernoulli_(1.0 - p, generator=generator)
    return x * keep / (1.0 - p)
