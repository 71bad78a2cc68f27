from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import TYPE_CHECKING, ClassVar

import torch
from torch import nn

from molang.exception import MolangCheckpointException, MolangConfigException
from molang.motion_encoder import MotionEncoder, MotionEncoderConfig
from molang.nn.checkpoint import load_state, read_checkpoint, save_checkpoint
from molang.objectives import Temperature
from molang.text_encoder import TextEncoder, TextEncoderConfig
from molang.vocab import Vocab

if TYPE_CHECKING:
    from collections.abc import Iterator
    from pathlib import Path

    from molang.typing import Payload

LOGGER = logging.getLogger("molang")


class MoLang(nn.Module):
    """Motion and text encoders sharing one projection space."""

    KIND: ClassVar[str] = "molang"

    def __init__(
        self,
        motion_config: MotionEncoderConfig,
        text_config: TextEncoderConfig,
        vocab: Vocab,
        tau: float | None = None,
    ):
        super().__init__()
        if motion_config.projection_dim != text_config.projection_dim:
            m = (
                f"projection dims differ: motion "
                f"{motion_config.projection_dim}, text "
                f"{text_config.projection_dim}"
            )
            raise MolangConfigException(m)
        if text_config.vocab_size != len(vocab):
            m = (
                f"text encoder expects {text_config.vocab_size} tokens, "
                f"vocabulary has {len(vocab)}"
            )
            raise MolangConfigException(m)

        self.vocab = vocab
        self.motion = MotionEncoder(motion_config)
        self.text = TextEncoder(text_config)
        self.temperature = Temperature() if tau is None else Temperature(tau)

    def config_payload(self) -> Payload:
        return {
            "kind": self.KIND,
            "motion": self.motion.config.to_dict(),
            "text": self.text.config.to_dict(),
            "vocab": self.vocab.to_list(),
            "pretrained_source": self.text.config.pretrained_source,
        }

    def encode_texts(self, texts: list[str]) -> torch.Tensor:
        encoded = [
            self.vocab.tokenize(t, self.text.config.max_tokens) for t in texts
        ]
        ids = torch.tensor([x for x, _ in encoded])
        padding = torch.tensor([p for _, p in encoded])
        return self.text(ids, padding)


def motion_config_payload(encoder: MotionEncoder) -> Payload:
    return {"kind": "motion_encoder", "motion": encoder.config.to_dict()}


def save_model(
    model: MoLang | MotionEncoder,
    path: Path | str,
    metadata: Payload | None = None,
) -> None:
    if isinstance(model, MoLang):
        config = model.config_payload()
    else:
        config = motion_config_payload(model)
    save_checkpoint(model, path, config, metadata)


def load_model(path: Path | str) -> MoLang | MotionEncoder:
    """Rebuild a model from a checkpoint and its sidecar config."""
    checkpoint = read_checkpoint(path)
    config = checkpoint.config
    try:
        kind = config["kind"]
        motion_config = MotionEncoderConfig.from_dict(config["motion"])
        model: MoLang | MotionEncoder
        if kind == MoLang.KIND:
            vocab = Vocab.from_list(config["vocab"])
            text_config = TextEncoderConfig.from_dict(config["text"])
            model = MoLang(motion_config, text_config, vocab)
        elif kind == "motion_encoder":
            model = MotionEncoder(motion_config)
        else:
            raise MolangCheckpointException(f"unknown model kind {kind!r}")
    except (KeyError, TypeError) as e:
        m = f"checkpoint sidecar for {path} is incomplete: {e}"
        raise MolangCheckpointException(m) from e

    load_state(model, checkpoint.tensors)
    LOGGER.debug(f"Loaded {kind} from {path}.")
    return model


def load_molang(path: Path | str) -> MoLang:
    model = load_model(path)
    if not isinstance(model, MoLang):
        m = f"{path} holds a motion encoder, not a full model"
        raise MolangConfigException(m)
    return model


@contextmanager
def evaluating(model: nn.Module) -> Iterator[nn.Module]:
    """Eval mode without gradients; the previous mode is restored."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            yield model
    finally:
        model.train(was_training)
