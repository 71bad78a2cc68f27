from __future__ import annotations

import pytest
import torch

from molang.exception import (
    MolangInvalidArgumentException,
    MolangShapeException,
)
from molang.nn import functional as mf

from ..base import TestBase


def double(*shape: int) -> torch.Tensor:
    return torch.randn(*shape, dtype=torch.float64, requires_grad=True)


class TestFunctional(TestBase):
    def test_linear_gradients(self) -> None:
        inputs = (double(3, 4), double(5, 4), double(5))
        assert torch.autograd.gradcheck(mf.linear, inputs)

    def test_layer_norm_gradients(self) -> None:
        inputs = (double(2, 3, 6), double(6), double(6))
        assert torch.autograd.gradcheck(mf.layer_norm, inputs)

    def test_softmax_gradients(self) -> None:
        assert torch.autograd.gradcheck(mf.softmax, (double(3, 5),))

    def test_embedding_lookup_gradients(self) -> None:
        ids = torch.tensor([[0, 3, 3], [2, 1, 0]])

        def lookup(table: torch.Tensor) -> torch.Tensor:
            return mf.embedding_lookup(table, ids)

        assert torch.autograd.gradcheck(lookup, (double(4, 5),))

    def test_dropout_gradients_with_fixed_mask(self) -> None:
        def drop(x: torch.Tensor) -> torch.Tensor:
            gen = torch.Generator().manual_seed(5)
            return mf.dropout(x, 0.3, generator=gen)

        x = double(6, 4)
        assert torch.autograd.gradcheck(drop, (x,))
        keep = drop(x) != 0
        drop(x).sum().backward()
        assert x.grad is not None
        expected = keep.double() / 0.7
        torch.testing.assert_close(x.grad, expected)

    def test_layer_norm_normalizes(self) -> None:
        x = torch.randn(4, 16, dtype=torch.float64) * 3 + 2
        y = mf.layer_norm(x, torch.ones(16).double(), torch.zeros(16).double())
        torch.testing.assert_close(
            y.mean(-1), torch.zeros(4, dtype=torch.float64), atol=1e-8,
            rtol=0,
        )

    def test_softmax_rows_sum_to_one(self) -> None:
        y = mf.softmax(torch.randn(3, 7) * 50)
        torch.testing.assert_close(y.sum(-1), torch.ones(3))

    def test_embedding_lookup(self) -> None:
        table = torch.arange(12.0).view(4, 3)
        out = mf.embedding_lookup(table, torch.tensor([[3, 0]]))
        assert out.tolist() == [[[9.0, 10.0, 11.0], [0.0, 1.0, 2.0]]]
        with pytest.raises(MolangInvalidArgumentException):
            mf.embedding_lookup(table, torch.tensor([4]))

    def test_shape_errors(self) -> None:
        with pytest.raises(MolangShapeException, match="linear"):
            mf.linear(torch.zeros(2, 3), torch.zeros(5, 4))
        with pytest.raises(MolangShapeException):
            mf.linear(torch.zeros(2, 4), torch.zeros(5, 4), torch.zeros(4))
        with pytest.raises(MolangShapeException):
            mf.layer_norm(torch.zeros(2, 4), torch.ones(3), torch.zeros(3))

    def test_dropout(self) -> None:
        x = torch.ones(10_000)
        assert mf.dropout(x, 0.5, training=False) is x
        assert mf.dropout(x, 0.0) is x
        gen = torch.Generator().manual_seed(0)
        y = mf.dropout(x, 0.5, generator=gen)
        assert set(y.unique().tolist()) == {0.0, 2.0}
        assert abs(y.mean().item() - 1.0) < 0.05
        with pytest.raises(MolangInvalidArgumentException):
            mf.dropout(x, 1.0)
