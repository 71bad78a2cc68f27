from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING

from molang.dataset import paired_samples
from molang.exception import MolangConfigException
from molang.model import load_molang
from molang.stages.contrastive import ContrastiveStage

if TYPE_CHECKING:
    from molang.config import StageConfig
    from molang.dataset import DatasetManifest, MotionSample
    from molang.model import MoLang
    from molang.stage import StageResult

LOGGER = logging.getLogger("molang")


class FinetuneStage(ContrastiveStage):
    """Contrastive training where every pair's text is its class label.

    The vocabulary comes from the checkpoint; label words it doesn't know
    tokenize to UNK.
    """

    NAME = "finetune"

    def load_samples(self) -> list[MotionSample]:
        if not self.config.init_checkpoint:
            raise MolangConfigException("finetuning needs a checkpoint")
        self.initial = load_molang(self.config.init_checkpoint)
        self.vocab = self.initial.vocab

        samples = []
        for s in paired_samples(self.manifest):
            if not s.label:
                m = f"{s.sample_id} has no class label to finetune on"
                raise MolangConfigException(m)
            samples.append(dataclasses.replace(s, text=s.label))
        return samples

    def build_model(self) -> MoLang:
        return self.initial


def finetune(
    manifest: DatasetManifest,
    molang_checkpoint: str,
    config: StageConfig,
) -> StageResult:
    config = dataclasses.replace(config, init_checkpoint=molang_checkpoint)
    return FinetuneStage(config, manifest).run()
