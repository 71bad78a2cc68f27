from __future__ import annotations

import math

import pytest
import torch
from torch import nn

from molang.exception import (
    MolangInvalidArgumentException,
    MolangNumericalException,
)
from molang.nn.optim import (
    SchedulerState,
    adam_step,
    build_adam,
    cosine_lr,
    optimization_step,
    set_lr,
)

from ..base import TestBase


class TestCosineLr(TestBase):
    def test_default_schedule(self) -> None:
        state = SchedulerState()
        assert cosine_lr(state, 0) == pytest.approx(1e-4)
        assert cosine_lr(state, 10) == pytest.approx(8.5e-5)
        assert cosine_lr(state, 20) == pytest.approx(1e-4)
        assert cosine_lr(state, 19) > 7e-5

    def test_growing_periods(self) -> None:
        state = SchedulerState(t0=2, t_mult=2, eta_min=0.0, eta_max=1.0)
        lrs = [cosine_lr(state, e) for e in range(7)]
        assert lrs[0] == pytest.approx(1.0)
        assert lrs[1] == pytest.approx(0.5)
        assert lrs[2] == pytest.approx(1.0)
        assert lrs[4] == pytest.approx(0.5)
        assert lrs[6] == pytest.approx(1.0)

    def test_state_lr(self) -> None:
        assert SchedulerState(epoch=10).lr == pytest.approx(8.5e-5)

    def test_negative_epoch(self) -> None:
        with pytest.raises(MolangInvalidArgumentException):
            cosine_lr(SchedulerState(), -1)


class TestAdam(TestBase):
    def test_matches_hand_computed_steps(self) -> None:
        model = nn.Linear(3, 1, bias=False).double()
        w = model.weight.detach().clone()
        optimizer = build_adam(model.parameters(), 1e-2)
        m = torch.zeros_like(w)
        v = torch.zeros_like(w)
        x = torch.randn(5, 3, dtype=torch.float64)

        for t in range(1, 4):
            loss = model(x).pow(2).sum()
            optimization_step(model, loss, optimizer)

            g = 2 * (x @ w.T).T @ x
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1 - 0.9**t)
            v_hat = v / (1 - 0.999**t)
            w = w - 1e-2 * m_hat / (v_hat.sqrt() + 1e-8)
            torch.testing.assert_close(
                model.weight.detach(), w, rtol=1e-10, atol=1e-12
            )

    def test_set_lr(self) -> None:
        optimizer = build_adam(nn.Linear(2, 2).parameters(), 1e-4)
        set_lr(optimizer, 3e-5)
        assert optimizer.param_groups[0]["lr"] == 3e-5

    def test_non_finite_loss(self) -> None:
        model = nn.Linear(2, 1)
        optimizer = build_adam(model.parameters(), 1e-4)
        with pytest.raises(MolangNumericalException):
            optimization_step(model, torch.tensor(math.nan), optimizer)

    def test_non_finite_gradient(self) -> None:
        model = nn.Linear(2, 1)
        before = model.weight.detach().clone()
        optimizer = build_adam(model.parameters(), 1e-4)
        model.weight.grad = torch.full_like(model.weight, math.inf)
        with pytest.raises(MolangNumericalException, match="weight"):
            adam_step(model, optimizer)
        assert torch.equal(model.weight.detach(), before)
