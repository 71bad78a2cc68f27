from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn

from molang.const import (
    RECON_WEIGHT,
    TAU_INIT,
    TAU_MAX,
    TAU_MIN,
    UNIT_NORM_TOLERANCE,
)
from molang.exception import (
    MolangContractException,
    MolangInvalidArgumentException,
    MolangNumericalException,
    MolangShapeException,
)
from molang.nn.optim import optimization_step

if TYPE_CHECKING:
    from collections.abc import Sequence

    from molang.masking import MaskSpan


class Temperature(nn.Module):
    """Learnable softmax temperature stored as ``log(1/tau)``."""

    def __init__(self, tau: float = TAU_INIT):
        super().__init__()
        if not TAU_MIN <= tau <= TAU_MAX:
            m = f"tau={tau} is outside [{TAU_MIN}, {TAU_MAX}]"
            raise MolangInvalidArgumentException(m)
        self.log_inv_tau = nn.Parameter(torch.tensor(math.log(1.0 / tau)))

    @property
    def tau(self) -> torch.Tensor:
        return torch.exp(-self.log_inv_tau)

    @torch.no_grad()
    def clamp_(self) -> None:
        self.log_inv_tau.clamp_(
            math.log(1.0 / TAU_MAX), math.log(1.0 / TAU_MIN)
        )


@dataclass
class LossBreakdown:
    total: torch.Tensor
    contrastive_m2t: torch.Tensor
    contrastive_t2m: torch.Tensor
    recon: torch.Tensor
    alpha: float = RECON_WEIGHT

    def to_dict(self) -> dict[str, float]:
        return {
            "total": float(self.total),
            "contrastive_m2t": float(self.contrastive_m2t),
            "contrastive_t2m": float(self.contrastive_t2m),
            "recon": float(self.recon),
            "alpha": self.alpha,
        }


def span_mask(
    spans: Sequence[MaskSpan | None], validity: torch.Tensor
) -> torch.Tensor:
    """``B x T`` booleans, true on frames covered by a span."""
    mask = torch.zeros_like(validity)
    for i, span in enumerate(spans):
        if span is None:
            continue
        span.check(int(validity[i].sum()))
        mask[i, span.t_start : span.t_end] = True
    return mask


def _masked_l1(
    reconstruction: torch.Tensor, target: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Per-item mean |r - t| over masked frames, averaged over items."""
    if reconstruction.shape != target.shape:
        raise MolangShapeException("l1", reconstruction.shape, target.shape)

    frames = mask.sum(dim=1)
    keep = frames > 0
    if not keep.any():
        raise MolangInvalidArgumentException("no frames to score")

    weights = mask.unsqueeze(-1).to(reconstruction.dtype)
    err = ((reconstruction - target).abs() * weights).sum(dim=(1, 2))
    per_item = err[keep] / (frames[keep] * target.shape[-1])
    return per_item.mean()


def mmp_loss(
    reconstruction: torch.Tensor,
    target: torch.Tensor,
    spans: Sequence[MaskSpan | None],
    validity: torch.Tensor,
    all_frames: bool = False,
) -> torch.Tensor:
    """L1 on masked frames; ``all_frames`` scores every valid frame."""
    mask = validity if all_frames else span_mask(spans, validity)
    return _masked_l1(reconstruction, target, mask)


def check_unit_norm(vecs: torch.Tensor, name: str) -> None:
    norms = vecs.detach().norm(dim=-1)
    if (norms - 1.0).abs().max() > UNIT_NORM_TOLERANCE:
        m = f"{name} rows must be unit norm, got {norms.tolist()}"
        raise MolangContractException(m)


def similarity_matrix(
    motion_vecs: torch.Tensor,
    text_vecs: torch.Tensor,
    tau: torch.Tensor | float,
) -> torch.Tensor:
    """``S[i, j] = m_i . l_j / tau``."""
    if motion_vecs.shape[-1] != text_vecs.shape[-1]:
        raise MolangShapeException(
            "similarity_matrix", motion_vecs.shape, text_vecs.shape
        )
    check_unit_norm(motion_vecs, "motion")
    check_unit_norm(text_vecs, "text")
    return motion_vecs @ text_vecs.T / tau


def cstar_loss(
    motion_vecs: torch.Tensor,
    text_vecs: torch.Tensor,
    reconstruction: torch.Tensor,
    target: torch.Tensor,
    validity: torch.Tensor,
    tau: torch.Tensor | float,
    alpha: float = RECON_WEIGHT,
) -> LossBreakdown:
    """Symmetric InfoNCE in both directions plus ``alpha`` x L1 recon.

    Rows are motions and columns texts: ``m2t`` is the softmax over texts for
    each motion, ``t2m`` the softmax over motions for each text.
    """
    n = motion_vecs.shape[0]
    if n == 0:
        raise MolangInvalidArgumentException("need at least one pair")
    if text_vecs.shape[0] != n:
        raise MolangShapeException(
            "cstar_loss", motion_vecs.shape, text_vecs.shape
        )

    sim = similarity_matrix(motion_vecs, text_vecs, tau)
    if not torch.isfinite(sim).all():
        m = f"similarity matrix is not finite (tau={float(tau)})"
        raise MolangNumericalException(m)

    labels = torch.arange(n)
    m2t = F.cross_entropy(sim, labels)
    t2m = F.cross_entropy(sim.T, labels)
    recon = _masked_l1(reconstruction, target, validity)
    total = m2t + t2m + alpha * recon
    return LossBreakdown(total, m2t, t2m, recon, alpha)


def temperature_gradient_step(
    model: nn.Module,
    temperature: Temperature,
    loss: torch.Tensor,
    optimizer: torch.optim.Optimizer,
) -> None:
    """Adam step shared with every other parameter, then clamp tau."""
    optimization_step(model, loss, optimizer)
    temperature.clamp_()
