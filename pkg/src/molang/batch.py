from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import torch

from molang.const import FRAME_DIM, MAX_FRAMES, MAX_TOKENS
from molang.exception import MolangInvalidArgumentException
from molang.masking import apply_mask, sample_mask_span

if TYPE_CHECKING:
    from collections.abc import Sequence

    from molang.dataset import MotionSample
    from molang.masking import MaskSpan
    from molang.vocab import Vocab


@dataclass
class Batch:
    """Padded model inputs for ``B`` samples.

    ``motion`` is what the encoder sees; ``target`` is the clean motion the
    reconstruction head is scored against. They only differ after masking.
    """

    motion: torch.Tensor
    target: torch.Tensor
    validity: torch.Tensor
    spans: list[MaskSpan | None]
    token_ids: torch.Tensor | None = None
    token_padding: torch.Tensor | None = None
    texts: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    sample_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.motion.shape[0]

    @property
    def lengths(self) -> list[int]:
        return [int(x) for x in self.validity.sum(dim=1)]

    @property
    def key_padding(self) -> torch.Tensor:
        return ~self.validity

    def masked(self, rng: np.random.Generator) -> Batch:
        """Copy with one noise span per item, spans re-drawn on every call."""
        motion = self.target.numpy().astype(np.float64)
        spans: list[MaskSpan | None] = []
        for i, length in enumerate(self.lengths):
            span = sample_mask_span(length, rng)
            motion[i] = apply_mask(motion[i], span, rng, length)
            spans.append(span)

        masked = torch.from_numpy(motion.astype(np.float32))
        return dataclasses.replace(self, motion=masked, spans=spans)


def collate(
    samples: Sequence[MotionSample],
    vocab: Vocab | None = None,
    max_frames: int = MAX_FRAMES,
    max_tokens: int = MAX_TOKENS,
) -> Batch:
    if not samples:
        raise MolangInvalidArgumentException("can't collate an empty batch")

    motion = np.zeros((len(samples), max_frames, FRAME_DIM), dtype=np.float32)
    validity = np.zeros((len(samples), max_frames), dtype=bool)
    for i, s in enumerate(samples):
        n = len(s.frames)
        if n > max_frames:
            m = f"sample {s.sample_id} has {n} frames, limit is {max_frames}"
            raise MolangInvalidArgumentException(m)
        motion[i, :n] = s.frames
        validity[i, :n] = True

    token_ids = token_padding = None
    if vocab is not None:
        encoded = [vocab.tokenize(s.text, max_tokens) for s in samples]
        token_ids = torch.tensor([ids for ids, _ in encoded])
        token_padding = torch.tensor([pad for _, pad in encoded])

    tensor = torch.from_numpy(motion)
    return Batch(
        motion=tensor,
        target=tensor,
        validity=torch.from_numpy(validity),
        spans=[None] * len(samples),
        token_ids=token_ids,
        token_padding=token_padding,
        texts=[s.text for s in samples],
        labels=[s.label for s in samples],
        sample_ids=[s.sample_id for s in samples],
    )
