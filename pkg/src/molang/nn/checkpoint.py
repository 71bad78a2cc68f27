"""Binary tensor checkpoints with a JSON sidecar.

Layout (little-endian)::

    b"MOLN" | u32 version | u32 tensor count
    per tensor: u32 name length | UTF-8 name | u8 rank | u64 extents[rank]
                | f32 payload
    u32 CRC32 of every byte before it

The sidecar ``<path>.json`` holds the model config and training metadata.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch

from molang.const import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from molang.exception import MolangCheckpointException

if TYPE_CHECKING:
    from torch import nn

    from molang.typing import Payload

LOGGER = logging.getLogger("molang")

HEADER = struct.Struct("<4sII")
NAME_LEN = struct.Struct("<I")
RANK = struct.Struct("<B")
EXTENT = struct.Struct("<Q")
CRC = struct.Struct("<I")


@dataclass
class Checkpoint:
    tensors: dict[str, torch.Tensor]
    config: Payload = field(default_factory=dict)
    metadata: Payload = field(default_factory=dict)


def sidecar_path(path: Path | str) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_tensors(tensors: dict[str, torch.Tensor]) -> bytes:
    parts = [HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(tensors))]
    for name, tensor in tensors.items():
        raw = name.encode()
        data = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        parts.append(NAME_LEN.pack(len(raw)))
        parts.append(raw)
        parts.append(RANK.pack(data.ndim))
        parts.extend(EXTENT.pack(n) for n in data.shape)
        parts.append(np.ascontiguousarray(data).tobytes())

    body = b"".join(parts)
    return body + CRC.pack(zlib.crc32(body))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            m = f"checkpoint truncated at offset {self.offset}"
            raise MolangCheckpointException(m)
        chunk = self.blob[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: struct.Struct) -> tuple[int, ...]:
        return fmt.unpack(self.take(fmt.size))


def decode_tensors(blob: bytes) -> dict[str, torch.Tensor]:
    if len(blob) < HEADER.size + CRC.size:
        raise MolangCheckpointException("checkpoint is truncated")

    reader = _Reader(blob)
    magic, version, count = HEADER.unpack(reader.take(HEADER.size))
    if magic != CHECKPOINT_MAGIC:
        raise MolangCheckpointException(f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        m = f"unsupported checkpoint version {version}"
        raise MolangCheckpointException(m)

    (stored,) = CRC.unpack(blob[-CRC.size :])
    if zlib.crc32(blob[: -CRC.size]) != stored:
        raise MolangCheckpointException("checkpoint CRC mismatch")

    tensors = {}
    reader.blob = blob[: -CRC.size]
    for _ in range(count):
        (n,) = reader.unpack(NAME_LEN)
        try:
            name = reader.take(n).decode()
        except UnicodeDecodeError as e:
            m = f"tensor name at offset {reader.offset} isn't UTF-8"
            raise MolangCheckpointException(m) from e
        (rank,) = reader.unpack(RANK)
        shape = tuple(reader.unpack(EXTENT)[0] for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) * 4
        data = np.frombuffer(reader.take(size), dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(data.astype(np.float32))

    if reader.offset != len(reader.blob):
        m = f"{len(reader.blob) - reader.offset} trailing bytes in checkpoint"
        raise MolangCheckpointException(m)
    return tensors


def write_checkpoint(path: Path | str, checkpoint: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_tensors(checkpoint.tensors))
    tmp.replace(path)

    sidecar = {"config": checkpoint.config, "metadata": checkpoint.metadata}
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")
    LOGGER.debug(f"Wrote {len(checkpoint.tensors)} tensors to {path}.")


def read_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    try:
        tensors = decode_tensors(path.read_bytes())
    except OSError as e:
        raise MolangCheckpointException(f"can't read {path}: {e}") from e

    side = sidecar_path(path)
    if not side.exists():
        return Checkpoint(tensors)
    try:
        data = json.loads(side.read_text())
    except json.JSONDecodeError as e:
        m = f"{side}:{e.lineno}:{e.colno}: {e.msg}"
        raise MolangCheckpointException(m) from e
    return Checkpoint(tensors, data.get("config", {}), data.get("metadata", {}))


def save_checkpoint(
    model: nn.Module,
    path: Path | str,
    config: Payload | None = None,
    metadata: Payload | None = None,
) -> None:
    tensors = dict(model.state_dict())
    write_checkpoint(path, Checkpoint(tensors, config or {}, metadata or {}))


def load_state(model: nn.Module, tensors: dict[str, torch.Tensor]) -> None:
    """Copy ``tensors`` into ``model``; nothing is touched on mismatch."""
    expected = model.state_dict()
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        m = f"checkpoint doesn't match model: missing {missing}, extra {extra}"
        raise MolangCheckpointException(m)
    for name, value in expected.items():
        if tuple(value.shape) != tuple(tensors[name].shape):
            m = (
                f"{name}: checkpoint shape {tuple(tensors[name].shape)} "
                f"!= model shape {tuple(value.shape)}"
            )
            raise MolangCheckpointException(m)

    model.load_state_dict(tensors)


def optimizer_tensors(
    model: nn.Module, optimizer: torch.optim.Optimizer
) -> tuple[dict[str, torch.Tensor], dict[str, int]]:
    """Adam moments keyed by parameter name, plus per-parameter step."""
    tensors, steps = {}, {}
    for name, p in model.named_parameters():
        state = optimizer.state.get(p)
        if not state:
            continue
        tensors[f"exp_avg.{name}"] = state["exp_avg"]
        tensors[f"exp_avg_sq.{name}"] = state["exp_avg_sq"]
        steps[name] = int(state["step"])
    return tensors, steps


def restore_optimizer(
    model: nn.Module,
    optimizer: torch.optim.Optimizer,
    tensors: dict[str, torch.Tensor],
    steps: dict[str, int],
) -> None:
    for name, p in model.named_parameters():
        if name not in steps:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(steps[name])),
            "exp_avg": tensors[f"exp_avg.{name}"].clone(),
            "exp_avg_sq": tensors[f"exp_avg_sq.{name}"].clone(),
        }
