"""Transformer motion encoder with a graph convolutional bottleneck.

Frames become tokens through a linear map, a learned CLS token is prepended,
and learned positional plus valid-segment embeddings are summed in. Between
two chosen transformer blocks every frame token is lifted into per-joint
features, mixed along the skeleton's adjacency, and projected back.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Self

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn

from molang.const import FRAME_DIM, MAX_FRAMES, NUM_JOINTS
from molang.exception import MolangConfigException, MolangShapeException
from molang.nn.layers import (
    INIT_STD,
    Dropout,
    Embedding,
    LayerNorm,
    Linear,
    TransformerBlock,
    block_parameter_count,
)
from molang.skeleton import SkeletonGraph

if TYPE_CHECKING:
    from molang.batch import Batch
    from molang.typing import Payload

LOGGER = logging.getLogger("molang")

PRESETS: dict[str, dict[str, Any]] = {
    "paper": {
        "layers": 10,
        "heads": 12,
        "ffn_dim": 1024,
        "dim": 768,
        "gcb_after_layer": 4,
        "gcb_joint_dim": 32,
        "projection_dim": 768,
    },
    "desk": {
        "layers": 4,
        "heads": 4,
        "ffn_dim": 128,
        "dim": 64,
        "gcb_after_layer": 2,
        "gcb_joint_dim": 8,
        "projection_dim": 64,
    },
}


@dataclass(frozen=True)
class MotionEncoderConfig:
    layers: int = 4
    heads: int = 4
    ffn_dim: int = 128
    dim: int = 64
    dropout: float = 0.1
    max_len: int = MAX_FRAMES
    gcb_after_layer: int = 2
    gcb_joint_dim: int = 8
    use_gcb: bool = True
    projection_dim: int = 64
    preset: str = "desk"

    def __post_init__(self) -> None:
        if self.max_len < 1:
            m = f"max_len must be positive, got {self.max_len}"
            raise MolangConfigException(m)
        if self.dim % self.heads != 0:
            m = f"dim {self.dim} isn't divisible by {self.heads} heads"
            raise MolangConfigException(m)
        if self.use_gcb and not 1 <= self.gcb_after_layer < self.layers:
            m = (
                f"gcb_after_layer={self.gcb_after_layer} must lie in "
                f"[1, {self.layers})"
            )
            raise MolangConfigException(m)

    @classmethod
    def from_preset(cls, preset: str, **overrides: Any) -> Self:
        if preset not in PRESETS:
            m = f"unknown preset {preset!r}, use one of {sorted(PRESETS)}"
            raise MolangConfigException(m)
        return cls(**{**PRESETS[preset], "preset": preset, **overrides})

    def to_dict(self) -> Payload:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Payload) -> Self:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            m = f"unknown motion encoder options {sorted(unknown)}"
            raise MolangConfigException(m)
        return cls(**data)

    def parameter_count(self) -> int:
        d, g, j = self.dim, self.gcb_joint_dim, NUM_JOINTS
        count = FRAME_DIM * d + d  # frame embedding
        count += d  # CLS
        count += (self.max_len + 1) * d + 2 * d  # positions, segments
        count += self.layers * block_parameter_count(d, self.ffn_dim)
        if self.use_gcb:
            count += d * j * g + j * g + g * g + j * g * d + d + 2 * d
        count += 2 * d  # final norm
        count += d * FRAME_DIM + FRAME_DIM  # reconstruction head
        count += d * self.projection_dim + self.projection_dim
        return count


@dataclass
class MotionEncoding:
    frame_states: torch.Tensor
    cls_vector: torch.Tensor
    projected: torch.Tensor
    reconstruction: torch.Tensor
    batch: Batch


class GraphBottleneck(nn.Module):
    """Per-frame graph convolution over joint features.

    ``y_i = relu(sum_k a_ik h_k W)`` runs in a ``g``-wide joint space reached
    by a learned ``d -> 22g`` projection; the result is projected back to
    ``d``, added to the input and layer-normed. CLS passes through untouched.
    """

    def __init__(self, dim: int, joint_dim: int, adjacency: torch.Tensor):
        super().__init__()
        self.joint_dim = joint_dim
        self.num_joints = adjacency.shape[0]
        self.register_buffer("adjacency", adjacency, persistent=False)

        width = self.num_joints * joint_dim
        self.to_joints = Linear(dim, width)
        self.weight = nn.Parameter(torch.empty(joint_dim, joint_dim))
        self.from_joints = Linear(width, dim)
        self.norm = LayerNorm(dim)
        nn.init.trunc_normal_(
            self.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD
        )

    def graph_branch(self, joints: torch.Tensor) -> torch.Tensor:
        """``... x J x g`` joint features to mixed ``... x J x g``."""
        mixed = torch.einsum("ik,...kg->...ig", self.adjacency, joints)
        return F.relu(mixed @ self.weight)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        cls, frames = h[:, :1], h[:, 1:]
        joints = self.to_joints(frames).unflatten(
            -1, (self.num_joints, self.joint_dim)
        )
        mixed = self.from_joints(self.graph_branch(joints).flatten(-2))
        return torch.cat([cls, self.norm(frames + mixed)], dim=1)


class MotionEncoder(nn.Module):
    def __init__(
        self,
        config: MotionEncoderConfig,
        skeleton: SkeletonGraph | None = None,
    ):
        super().__init__()
        self.config = config
        d = config.dim

        self.frame_embedding = Linear(FRAME_DIM, d)
        self.cls_token = nn.Parameter(torch.empty(d))
        self.positions = Embedding(config.max_len + 1, d)
        self.segments = Embedding(2, d)
        self.dropout = Dropout(config.dropout)
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.heads, config.ffn_dim, config.dropout)
            for _ in range(config.layers)
        )

        self.gcb: GraphBottleneck | None = None
        if config.use_gcb:
            skeleton = skeleton or SkeletonGraph.smpl()
            adjacency = torch.from_numpy(
                skeleton.adjacency.astype(np.float32)
            )
            self.gcb = GraphBottleneck(d, config.gcb_joint_dim, adjacency)

        self.final_norm = LayerNorm(d)
        self.reconstruction_head = Linear(d, FRAME_DIM)
        self.projection = Linear(d, config.projection_dim)
        nn.init.normal_(self.cls_token, std=INIT_STD)

    def embed_frames(
        self, motion: torch.Tensor, validity: torch.Tensor
    ) -> torch.Tensor:
        """``B x T x 132`` frames to ``B x (T+1) x d`` tokens."""
        b, t = validity.shape
        if (
            motion.ndim != 3
            or motion.shape[:2] != (b, t)
            or motion.shape[-1] != FRAME_DIM
            or t > self.config.max_len
        ):
            raise MolangShapeException(
                "embed_frames", motion.shape, validity.shape
            )

        frames = self.frame_embedding(motion)
        cls = self.cls_token.expand(b, 1, -1)
        tokens = torch.cat([cls, frames], dim=1)

        valid = torch.cat(
            [torch.ones(b, 1, dtype=torch.long), validity.long()], dim=1
        )
        positions = torch.arange(t + 1)
        return tokens + self.positions(positions) + self.segments(valid)

    def reconstruct(self, frame_states: torch.Tensor) -> torch.Tensor:
        """Per-token ``d -> 132`` head on non-CLS states."""
        return self.reconstruction_head(frame_states)

    def forward(
        self, motion: torch.Tensor, validity: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns token states, unit-norm projection and reconstruction."""
        h = self.dropout(self.embed_frames(motion, validity))
        key_padding = torch.cat(
            [torch.zeros_like(validity[:, :1]), ~validity], dim=1
        )

        for i, block in enumerate(self.blocks, start=1):
            h = block(h, key_padding)
            if self.gcb is not None and i == self.config.gcb_after_layer:
                h = self.gcb(h)
        h = self.final_norm(h)

        projected = F.normalize(self.projection(h[:, 0]), dim=-1)
        return h, projected, self.reconstruct(h[:, 1:])

    def encode(
        self,
        batch: Batch,
        apply_masking: bool = False,
        rng: np.random.Generator | None = None,
    ) -> MotionEncoding:
        if apply_masking:
            if rng is None:
                m = "masking needs an explicit random generator"
                raise MolangConfigException(m)
            batch = batch.masked(rng)

        states, projected, recon = self(batch.motion, batch.validity)
        return MotionEncoding(
            frame_states=states,
            cls_vector=states[:, 0],
            projected=projected,
            reconstruction=recon,
            batch=batch,
        )
