from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F  # noqa: N812
from scipy.special import logsumexp

from molang.exception import (
    MolangContractException,
    MolangInvalidArgumentException,
    MolangShapeException,
)
from molang.masking import MaskSpan
from molang.nn.optim import build_adam
from molang.objectives import (
    LossBreakdown,
    Temperature,
    cstar_loss,
    mmp_loss,
    similarity_matrix,
    span_mask,
    temperature_gradient_step,
)

from .base import TestBase


def double(*shape: int) -> torch.Tensor:
    return torch.randn(*shape, dtype=torch.float64, requires_grad=True)


def unit(*shape: int) -> torch.Tensor:
    return F.normalize(torch.randn(*shape, dtype=torch.float64), dim=-1)


def cross_entropy_oracle(sim: np.ndarray) -> float:
    """Mean over rows of -log softmax at the diagonal, one row at a time."""
    n = len(sim)
    return sum(logsumexp(sim[i]) - sim[i, i] for i in range(n)) / n


class TestCstarLoss(TestBase):
    def setUp(self) -> None:
        super().setUp()
        self.target = torch.randn(5, 10, 132, dtype=torch.float64)
        self.validity = torch.ones(5, 10, dtype=torch.bool)

    def _loss(
        self, m: torch.Tensor, t: torch.Tensor, **kwargs: float
    ) -> LossBreakdown:
        n = len(m)
        return cstar_loss(
            m,
            t,
            self.target[:n],
            self.target[:n],
            self.validity[:n],
            kwargs.pop("tau", 0.07),
            **kwargs,
        )

    def test_uniform_similarities(self) -> None:
        v = unit(1, 8).expand(4, 8)
        loss = self._loss(v, v, tau=0.5)
        assert float(loss.total) == pytest.approx(2 * math.log(4))
        assert float(loss.recon) == 0.0

    def test_matches_brute_force(self) -> None:
        m, t = unit(5, 8), unit(5, 8)
        loss = self._loss(m, t, tau=0.1)
        sim = (m @ t.T).numpy() / 0.1
        assert float(loss.contrastive_m2t) == pytest.approx(
            cross_entropy_oracle(sim), rel=1e-10
        )
        assert float(loss.contrastive_t2m) == pytest.approx(
            cross_entropy_oracle(sim.T), rel=1e-10
        )

    def test_single_pair(self) -> None:
        v = unit(1, 8)
        loss = self._loss(v, unit(1, 8))
        assert float(loss.contrastive_m2t) == 0.0
        assert float(loss.contrastive_t2m) == 0.0

    def test_permutation_invariant(self) -> None:
        m, t = unit(5, 8), unit(5, 8)
        perm = torch.randperm(5)
        a = self._loss(m, t)
        b = self._loss(m[perm], t[perm])
        assert float(a.total) == pytest.approx(float(b.total), rel=1e-12)

    def test_recon_weight(self) -> None:
        m, t = unit(3, 8), unit(3, 8)
        recon = self.target[:3] + 0.5
        loss = cstar_loss(
            m, t, recon, self.target[:3], self.validity[:3], 0.07, alpha=2.0
        )
        assert float(loss.recon) == pytest.approx(0.5)
        expected = float(loss.contrastive_m2t + loss.contrastive_t2m) + 1.0
        assert float(loss.total) == pytest.approx(expected)
        assert loss.to_dict()["alpha"] == 2.0

    def test_gradients(self) -> None:
        target = torch.randn(3, 4, 5, dtype=torch.float64)
        validity = torch.ones(3, 4, dtype=torch.bool)

        def total(
            m: torch.Tensor,
            t: torch.Tensor,
            recon: torch.Tensor,
            log_inv_tau: torch.Tensor,
        ) -> torch.Tensor:
            return cstar_loss(
                F.normalize(m, dim=-1),
                F.normalize(t, dim=-1),
                recon,
                target,
                validity,
                torch.exp(-log_inv_tau),
                alpha=2.0,
            ).total

        log_inv_tau = torch.tensor(
            math.log(1 / 0.07), dtype=torch.float64, requires_grad=True
        )
        recon = (target + torch.randn_like(target)).requires_grad_(True)
        inputs = (double(3, 8), double(3, 8), recon, log_inv_tau)
        assert torch.autograd.gradcheck(total, inputs)

    def test_temperature_gradient_closed_form(self) -> None:
        m, t = unit(4, 8), unit(4, 8)
        s = torch.tensor(2.0, dtype=torch.float64, requires_grad=True)
        loss = self._loss(m, t, tau=torch.exp(-s), alpha=0.0)
        loss.total.backward()

        sim = np.exp(2.0) * (m @ t.T).numpy()
        rows = np.exp(sim - logsumexp(sim, axis=1, keepdims=True))
        cols = np.exp(sim - logsumexp(sim, axis=0, keepdims=True))
        grad_sim = (rows - np.eye(4)) / 4 + (cols - np.eye(4)) / 4
        assert s.grad is not None
        assert float(s.grad) == pytest.approx(
            float((grad_sim * sim).sum()), rel=1e-10
        )

    def test_vanishes_as_tau_shrinks(self) -> None:
        v = torch.eye(4, 8, dtype=torch.float64)
        losses = []
        for tau in (1.0, 0.5, 0.1, 0.05, 0.01):
            loss = float(self._loss(v, v, tau=tau, alpha=0.0).total)
            assert loss == pytest.approx(
                2 * math.log1p(3 * math.exp(-1 / tau)), rel=1e-6, abs=1e-12
            )
            losses.append(loss)
        assert all(a > b for a, b in itertools.pairwise(losses))
        assert losses[-1] < 1e-10

    def test_contracts(self) -> None:
        with pytest.raises(MolangContractException):
            self._loss(torch.ones(2, 8, dtype=torch.float64), unit(2, 8))
        with pytest.raises(MolangShapeException):
            self._loss(unit(2, 8), unit(3, 8))
        with pytest.raises(MolangShapeException):
            similarity_matrix(unit(2, 8), unit(2, 4), 0.1)
        with pytest.raises(MolangInvalidArgumentException):
            self._loss(unit(0, 8), unit(0, 8))


class TestTemperature(TestBase):
    def test_long_run_stays_clamped(self) -> None:
        m = t = unit(4, 8).float()
        agreement = (m @ t.T).diagonal().sum()
        for sign, bound in ((1.0, 0.01), (-1.0, 1.0)):
            temp = Temperature()
            optimizer = build_adam(temp.parameters(), 0.05)
            for _ in range(500):
                loss = -sign * agreement / temp.tau
                temperature_gradient_step(temp, temp, loss, optimizer)
                assert 0.01 - 1e-6 <= float(temp.tau) <= 1.0 + 1e-6
            assert float(temp.tau) == pytest.approx(bound, rel=1e-4)

    def test_initial(self) -> None:
        assert float(Temperature().tau) == pytest.approx(0.07)
        with pytest.raises(MolangInvalidArgumentException):
            Temperature(2.0)

    def test_clamp(self) -> None:
        temp = Temperature()
        with torch.no_grad():
            temp.log_inv_tau.fill_(10.0)
        temp.clamp_()
        assert float(temp.tau) == pytest.approx(0.01)
        with torch.no_grad():
            temp.log_inv_tau.fill_(-3.0)
        temp.clamp_()
        assert float(temp.tau) == pytest.approx(1.0)

    def test_gradient_step_keeps_tau_in_range(self) -> None:
        temp = Temperature(0.0101)
        optimizer = build_adam(temp.parameters(), 1.0)
        m = t = unit(4, 8).float()
        for _ in range(3):
            loss = -(m @ t.T).diagonal().sum() / temp.tau
            temperature_gradient_step(temp, temp, loss, optimizer)
            assert 0.01 - 1e-7 <= float(temp.tau) <= 1.0


class TestMmpLoss(TestBase):
    def setUp(self) -> None:
        super().setUp()
        self.target = torch.zeros(2, 10, 132)
        self.validity = torch.zeros(2, 10, dtype=torch.bool)
        self.validity[0, :10] = True
        self.validity[1, :6] = True

    def test_gradients(self) -> None:
        target = torch.randn(2, 6, 5, dtype=torch.float64)
        validity = torch.ones(2, 6, dtype=torch.bool)
        validity[1, 4:] = False
        spans = [MaskSpan(1, 3), MaskSpan(0, 2)]

        def loss(recon: torch.Tensor) -> torch.Tensor:
            return mmp_loss(recon, target, spans, validity)

        recon = (target + torch.randn_like(target)).requires_grad_(True)
        assert torch.autograd.gradcheck(loss, (recon,))

        loss(recon).backward()
        assert recon.grad is not None
        scored = torch.zeros(2, 6, dtype=torch.bool)
        scored[0, 1:4] = True
        scored[1, 0:2] = True
        assert (recon.grad[~scored] == 0).all()
        frames = torch.tensor([3.0, 2.0], dtype=torch.float64)
        expected = 1 / (2 * frames * 5)
        magnitude = recon.grad.abs()
        torch.testing.assert_close(
            magnitude[0, 1:4], expected[0].expand(3, 5)
        )
        torch.testing.assert_close(
            magnitude[1, 0:2], expected[1].expand(2, 5)
        )

    def test_only_masked_frames_count(self) -> None:
        recon = torch.zeros(2, 10, 132)
        recon[0, 2:4] = 1.0
        recon[0, 7] = 100.0
        recon[1, 0] = 3.0
        spans = [MaskSpan(2, 2), MaskSpan(0, 2)]
        loss = mmp_loss(recon, self.target, spans, self.validity)
        # item 0 mean 1.0, item 1 mean 1.5
        assert float(loss) == pytest.approx(1.25)

    def test_all_frames(self) -> None:
        recon = torch.ones(2, 10, 132)
        recon[1, 6:] = 50.0
        loss = mmp_loss(recon, self.target, [None, None], self.validity, True)
        assert float(loss) == pytest.approx(1.0)

    def test_nothing_to_score(self) -> None:
        with pytest.raises(MolangInvalidArgumentException):
            mmp_loss(self.target, self.target, [None, None], self.validity)

    def test_span_must_fit(self) -> None:
        with pytest.raises(MolangInvalidArgumentException):
            span_mask([None, MaskSpan(4, 3)], self.validity)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(MolangShapeException):
            mmp_loss(
                self.target[:, :5],
                self.target,
                [MaskSpan(0, 1), None],
                self.validity,
            )
