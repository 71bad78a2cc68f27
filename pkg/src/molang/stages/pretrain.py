from __future__ import annotations

import logging
from typing import TYPE_CHECKING

from molang.dataset import motion_samples
from molang.motion_encoder import MotionEncoder
from molang.objectives import mmp_loss
from molang.stage import StageResult, TrainingStage

if TYPE_CHECKING:
    import numpy as np
    import torch
    from torch import nn

    from molang.batch import Batch
    from molang.config import StageConfig
    from molang.dataset import DatasetManifest, MotionSample

LOGGER = logging.getLogger("molang")


class MmpPretrainStage(TrainingStage):
    """Masked motion prediction on motion-only windows."""

    NAME = "mmp_pretrain"

    def load_samples(self) -> list[MotionSample]:
        return list(motion_samples(self.manifest))

    def build_model(self) -> MotionEncoder:
        return MotionEncoder(self.config.motion_config())

    def batch_loss(
        self, model: nn.Module, batch: Batch, rng: np.random.Generator
    ) -> tuple[torch.Tensor, dict[str, float]]:
        masking = self.config.masking
        encoding = model.encode(batch, apply_masking=masking, rng=rng)
        loss = mmp_loss(
            encoding.reconstruction,
            batch.target,
            encoding.batch.spans,
            batch.validity,
            all_frames=self.config.mmp_all_frames or not masking,
        )
        return loss, {"total": float(loss), "recon": float(loss)}


def pretrain_mmp(manifest: DatasetManifest, config: StageConfig) -> StageResult:
    return MmpPretrainStage(config, manifest).run()
