from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING

from molang.dataset import paired_samples
from molang.exception import MolangConfigException
from molang.model import MoLang, load_model
from molang.motion_encoder import MotionEncoder
from molang.objectives import cstar_loss, temperature_gradient_step
from molang.stage import StageResult, TrainingStage
from molang.text_encoder import TextEncoderConfig
from molang.vocab import build_vocab, split_words

if TYPE_CHECKING:
    from collections.abc import Sequence

    import numpy as np
    import torch
    from torch import nn

    from molang.batch import Batch
    from molang.config import StageConfig
    from molang.dataset import DatasetManifest, MotionSample
    from molang.typing import Payload

LOGGER = logging.getLogger("molang")


def unique_text_batches(
    texts: Sequence[str], order: Sequence[int], batch_size: int
) -> list[list[int]]:
    """Greedy batches in ``order`` with no repeated text inside a batch.

    Items that would repeat a text are deferred to a later batch, so every
    index lands in exactly one batch and the split is deterministic.
    """
    pending = list(order)
    batches = []
    while pending:
        batch: list[int] = []
        seen: set[str] = set()
        deferred = []
        for i in pending:
            key = " ".join(split_words(texts[i]))
            if len(batch) < batch_size and key not in seen:
                batch.append(i)
                seen.add(key)
            else:
                deferred.append(i)
        batches.append(batch)
        pending = deferred
    return batches


class ContrastiveStage(TrainingStage):
    """Joint motion-text training with the CstAR objective."""

    NAME = "contrastive"

    def load_samples(self) -> list[MotionSample]:
        samples = list(paired_samples(self.manifest))
        self.vocab = build_vocab(s.text for s in samples)
        return samples

    def _initial_motion(self) -> MotionEncoder | None:
        config = self.config
        if not (config.mmp_init and config.init_checkpoint):
            return None

        init = load_model(config.init_checkpoint)
        if isinstance(init, MoLang):
            if self.vocab is None or init.vocab.to_list() != (
                self.vocab.to_list()
            ):
                m = (
                    f"{config.init_checkpoint} was trained with a different "
                    f"vocabulary than this dataset"
                )
                raise MolangConfigException(m)
            encoder = init.motion
        else:
            encoder = init

        if encoder.config.use_gcb != config.gcb:
            m = (
                f"{config.init_checkpoint} has gcb={encoder.config.use_gcb}, "
                f"the stage asks for gcb={config.gcb}"
            )
            raise MolangConfigException(m)
        LOGGER.info(f"Motion encoder starts from {config.init_checkpoint}.")
        return encoder

    def build_model(self) -> MoLang:
        config = self.config
        if self.vocab is None:
            raise MolangConfigException("contrastive stage has no vocabulary")

        encoder = self._initial_motion()
        motion_config = (
            encoder.config if encoder is not None else config.motion_config()
        )
        text_config = TextEncoderConfig.from_preset(
            config.preset, len(self.vocab), **config.text
        )
        model = MoLang(motion_config, text_config, self.vocab, config.tau_init)
        if encoder is not None:
            model.motion.load_state_dict(encoder.state_dict())
        return model

    def epoch_batches(self, rng: np.random.Generator) -> list[list[int]]:
        if not self.config.unique_texts_per_batch:
            return super().epoch_batches(rng)
        order = rng.permutation(len(self.samples)).tolist()
        texts = [s.text for s in self.samples]
        return unique_text_batches(texts, order, self.config.batch_size)

    def batch_loss(
        self, model: nn.Module, batch: Batch, rng: np.random.Generator
    ) -> tuple[torch.Tensor, dict[str, float]]:
        encoding = model.motion.encode(
            batch, apply_masking=self.config.masking, rng=rng
        )
        text_vecs = model.text(batch.token_ids, batch.token_padding)
        out = cstar_loss(
            encoding.projected,
            text_vecs,
            encoding.reconstruction,
            batch.target,
            batch.validity,
            model.temperature.tau,
            self.config.recon_weight,
        )
        values = out.to_dict()
        values["tau"] = float(model.temperature.tau)
        return out.total, values

    def optimize(
        self,
        model: nn.Module,
        loss: torch.Tensor,
        optimizer: torch.optim.Optimizer,
    ) -> None:
        temperature_gradient_step(model, model.temperature, loss, optimizer)

    def config_payload(self) -> Payload:
        vocab = self.vocab.to_list() if self.vocab is not None else []
        return {**super().config_payload(), "vocab": vocab}


def train_contrastive(
    manifest: DatasetManifest,
    config: StageConfig,
    motion_checkpoint: str | None = None,
) -> StageResult:
    if motion_checkpoint is not None:
        config = dataclasses.replace(config, init_checkpoint=motion_checkpoint)
    return ContrastiveStage(config, manifest).run()

