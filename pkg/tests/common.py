from __future__ import annotations

from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import torch

from molang.clip import Annotation, MotionClip
from molang.config import StageConfig
from molang.dataset import DatasetManifest, MotionSample
from molang.geometry import axis_angle_to_6d
from molang.model import MoLang
from molang.motion_encoder import MotionEncoderConfig
from molang.synth import DEFAULT_CLASSES, SynthSpec, synth_generate
from molang.text_encoder import TextEncoderConfig
from molang.vocab import Vocab, build_vocab


def random_frames(rng: np.random.Generator, length: int) -> np.ndarray:
    rotvec = rng.normal(0.0, 0.5, (length, 22, 3))
    return axis_angle_to_6d(rotvec).reshape(length, 132)


def random_clip(
    rng: np.random.Generator,
    length: int = 40,
    fps: float = 30.0,
    text: str = "walk forward",
) -> MotionClip:
    frames = random_frames(rng, length)
    return MotionClip(fps, frames, [Annotation(0, length, text)])


def random_sample(
    rng: np.random.Generator,
    length: int = 20,
    text: str = "walk forward",
    label: str = "walk",
    sample_id: str = "s",
) -> MotionSample:
    return MotionSample(sample_id, random_frames(rng, length), text, label)


TINY_MOTION = {
    "layers": 2,
    "heads": 2,
    "ffn_dim": 16,
    "dim": 8,
    "dropout": 0.0,
    "gcb_after_layer": 1,
    "gcb_joint_dim": 4,
    "projection_dim": 8,
}

TINY_TEXT = {
    "layers": 1,
    "heads": 2,
    "dim": 8,
    "ffn_dim": 16,
    "dropout": 0.0,
    "projection_dim": 8,
}


def tiny_motion_config(**overrides: Any) -> MotionEncoderConfig:
    options = {**TINY_MOTION, "preset": "tiny"}
    return MotionEncoderConfig(**{**options, **overrides})


def tiny_text_config(vocab_size: int, **overrides: Any) -> TextEncoderConfig:
    options = {**TINY_TEXT, "preset": "tiny"}
    return TextEncoderConfig(vocab_size, **{**options, **overrides})


def tiny_vocab() -> Vocab:
    return build_vocab(["walk forward", "raise the right arm", "jump"])


def tiny_model(vocab: Vocab | None = None, **motion: Any) -> MoLang:
    vocab = vocab or tiny_vocab()
    return MoLang(
        tiny_motion_config(**motion), tiny_text_config(len(vocab)), vocab
    )


def tiny_spec(classes: int = 3, clips_per_class: int = 5) -> SynthSpec:
    return SynthSpec(
        classes=DEFAULT_CLASSES[:classes],
        clips_per_class=clips_per_class,
        min_frames=20,
        max_frames=30,
    )


def tiny_dataset(
    classes: int = 3, clips_per_class: int = 5, seed: int = 0
) -> tuple[DatasetManifest, DatasetManifest]:
    return synth_generate(tiny_spec(classes, clips_per_class), seed)


def tiny_stage_config(
    stage: str, out_dir: Path | str, **overrides: Any
) -> StageConfig:
    options = {
        "epochs": 2,
        "batch_size": 4,
        "motion": TINY_MOTION,
        "text": TINY_TEXT,
        "out_dir": str(out_dir),
    }
    return StageConfig.for_stage(stage, **{**options, **overrides})


def parameter_gradcheck(
    module: torch.nn.Module,
    loss: Callable[[dict[str, torch.Tensor]], torch.Tensor],
    fast_mode: bool = False,
) -> bool:
    """Finite-difference check of ``loss`` against every module parameter."""
    names = [name for name, _ in module.named_parameters()]
    values = tuple(
        p.detach().clone().requires_grad_(True) for p in module.parameters()
    )

    def call(*params: torch.Tensor) -> torch.Tensor:
        return loss(dict(zip(names, params, strict=True)))

    return torch.autograd.gradcheck(call, values, fast_mode=fast_mode)
