from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import torch

from molang.const import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    SCHEDULER_ETA_MAX,
    SCHEDULER_ETA_MIN,
    SCHEDULER_T0,
    SCHEDULER_T_MULT,
)
from molang.exception import (
    MolangInvalidArgumentException,
    MolangNumericalException,
)

if TYPE_CHECKING:
    from collections.abc import Iterable

    from torch import nn


@dataclass
class SchedulerState:
    """Cosine annealing with warm restarts, stepped once per epoch."""

    t0: int = SCHEDULER_T0
    t_mult: int = SCHEDULER_T_MULT
    eta_min: float = SCHEDULER_ETA_MIN
    eta_max: float = SCHEDULER_ETA_MAX
    epoch: int = 0

    @property
    def lr(self) -> float:
        return cosine_lr(self, self.epoch)


def cosine_lr(state: SchedulerState, epoch: int) -> float:
    if epoch < 0:
        raise MolangInvalidArgumentException(f"epoch {epoch} is negative")

    t_i, t_cur = state.t0, epoch
    if state.t_mult == 1:
        t_cur = epoch % state.t0
    else:
        while t_cur >= t_i:
            t_cur -= t_i
            t_i *= state.t_mult

    span = state.eta_max - state.eta_min
    return state.eta_min + span * (1 + math.cos(math.pi * t_cur / t_i)) / 2


def build_adam(params: Iterable[nn.Parameter], lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(
        params, lr=lr, betas=(ADAM_BETA1, ADAM_BETA2), eps=ADAM_EPS
    )


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def check_gradients(named: Iterable[tuple[str, nn.Parameter]]) -> None:
    for name, p in named:
        if p.grad is not None and not torch.isfinite(p.grad).all():
            m = f"gradient of {name} is not finite"
            raise MolangNumericalException(m)


def adam_step(model: nn.Module, optimizer: torch.optim.Optimizer) -> None:
    """Bias-corrected Adam update after a NaN/inf check on every gradient."""
    check_gradients(model.named_parameters())
    optimizer.step()


def optimization_step(
    model: nn.Module, loss: torch.Tensor, optimizer: torch.optim.Optimizer
) -> None:
    if not torch.isfinite(loss):
        raise MolangNumericalException(f"loss is {loss.item()}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    adam_step(model, optimizer)
