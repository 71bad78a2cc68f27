from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from molang.const import MAX_MASK_LEN
from molang.exception import MolangInvalidArgumentException

if TYPE_CHECKING:
    from molang.typing import FloatArray


@dataclass(frozen=True)
class MaskSpan:
    t_start: int
    length: int

    @property
    def t_end(self) -> int:
        return self.t_start + self.length

    def check(self, valid_length: int) -> None:
        if self.length < 1 or self.t_start < 0 or self.t_end > valid_length:
            m = f"{self} doesn't fit inside {valid_length} valid frames."
            raise MolangInvalidArgumentException(m)


def sample_mask_span(
    valid_length: int,
    rng: np.random.Generator,
    max_length: int = MAX_MASK_LEN,
) -> MaskSpan:
    """Draw a span length uniformly from 1..max, then a uniform start.

    Short clips clamp the upper length bound to their valid length.
    """
    if valid_length < 1:
        m = f"can't mask a clip with {valid_length} valid frames"
        raise MolangInvalidArgumentException(m)

    hi = min(max_length, valid_length)
    length = int(rng.integers(1, hi + 1))
    t_start = int(rng.integers(0, valid_length - length + 1))
    return MaskSpan(t_start, length)


def apply_mask(
    frames: FloatArray,
    span: MaskSpan | None,
    rng: np.random.Generator,
    valid_length: int | None = None,
) -> FloatArray:
    """Replace the frames of ``span`` with i.i.d. standard normal noise."""
    out = np.array(frames, copy=True)
    if span is None:
        return out

    span.check(len(out) if valid_length is None else valid_length)
    region = out[span.t_start : span.t_end]
    out[span.t_start : span.t_end] = rng.standard_normal(region.shape)
    return out
