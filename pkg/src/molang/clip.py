from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Self

import numpy as np

from molang.const import (
    FRAME_DIM,
    MAX_FRAMES,
    NUM_JOINTS,
    ROT6D_DIM,
    TARGET_FPS,
)
from molang.exception import (
    MolangInvalidArgumentException,
    MolangParseException,
)
from molang.skeleton import forward_kinematics

if TYPE_CHECKING:
    from molang.skeleton import SkeletonGraph
    from molang.typing import FloatArray, Payload

LOGGER = logging.getLogger("molang")


@dataclass(frozen=True)
class Annotation:
    start: int
    end: int
    text: str

    def overlaps(self, lo: int, hi: int) -> bool:
        return self.start < hi and self.end > lo


@dataclass
class MotionClip:
    """A ``T x 132`` sequence of joint-major 6D poses."""

    fps: float
    frames: FloatArray
    annotations: list[Annotation] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.fps <= 0 or not math.isfinite(self.fps):
            m = f"fps must be positive, got {self.fps}"
            raise MolangInvalidArgumentException(m)
        if self.frames.ndim == 3:
            self.frames = self.frames.reshape(len(self.frames), FRAME_DIM)
        if self.frames.ndim != 2 or self.frames.shape[1] != FRAME_DIM:
            m = f"frames must be T x {FRAME_DIM}, got {self.frames.shape}"
            raise MolangInvalidArgumentException(m)
        if len(self.frames) < 1:
            raise MolangInvalidArgumentException("a clip needs a frame")
        if not np.all(np.isfinite(self.frames)):
            raise MolangInvalidArgumentException("frames must be finite")
        for a in self.annotations:
            if not 0 <= a.start < a.end <= len(self.frames):
                m = f"annotation {a} is outside [0, {len(self.frames)})"
                raise MolangInvalidArgumentException(m)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def poses(self) -> FloatArray:
        return self.frames.reshape(len(self.frames), NUM_JOINTS, ROT6D_DIM)

    def to_payload(self) -> Payload:
        return {
            "fps": float(self.fps),
            "frames": self.frames.tolist(),
            "annotations": [
                {"start": a.start, "end": a.end, "text": a.text}
                for a in self.annotations
            ],
        }

    @classmethod
    def from_payload(cls, data: Payload) -> Self:
        annotations = [
            Annotation(int(a["start"]), int(a["end"]), str(a["text"]))
            for a in data.get("annotations", [])
        ]
        frames = np.asarray(data["frames"], dtype=np.float64)
        return cls(float(data["fps"]), frames, annotations)

    def to_bytes(self) -> bytes:
        """Canonical serialization; the dataset fingerprint hashes these."""
        text = json.dumps(
            self.to_payload(), sort_keys=True, separators=(",", ":")
        )
        return (text + "\n").encode()


def _rescale_annotations(
    annotations: list[Annotation], ratio: float, length: int
) -> list[Annotation]:
    out = []
    for a in annotations:
        start = min(round(a.start * ratio), length - 1)
        end = min(max(round(a.end * ratio), start + 1), length)
        out.append(Annotation(start, end, a.text))
    return out


def resample(clip: MotionClip, target_fps: float = TARGET_FPS) -> MotionClip:
    """Bring a clip to ``target_fps`` by blending in 6D space."""
    if clip.fps <= 0:
        m = f"fps must be positive, got {clip.fps}"
        raise MolangInvalidArgumentException(m)
    if clip.fps == target_fps:
        return MotionClip(target_fps, clip.frames.copy(), clip.annotations)

    n = len(clip)
    length = max(1, round(n * target_fps / clip.fps))

    # Source position of every output frame, in source frame units.
    pos = np.arange(length) * (clip.fps / target_fps)
    pos = np.minimum(pos, n - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    w = (pos - lo)[:, None]

    a, b = clip.frames[lo], clip.frames[hi]
    frames = np.where(w == 0.0, a, (1.0 - w) * a + w * b)

    ratio = target_fps / clip.fps
    annotations = _rescale_annotations(clip.annotations, ratio, length)
    LOGGER.debug(f"Resampled {n} frames @ {clip.fps}Hz to {length} frames.")
    return MotionClip(target_fps, frames, annotations)


def truncate_or_reject(
    clip: MotionClip, max_frames: int = MAX_FRAMES
) -> list[MotionClip]:
    """Split an over-length clip into consecutive windows.

    Each window keeps the annotations overlapping it, clipped to the window.
    """
    n = len(clip)
    if n <= max_frames:
        return [clip]

    windows = []
    for lo in range(0, n, max_frames):
        hi = min(lo + max_frames, n)
        annotations = [
            Annotation(max(a.start, lo) - lo, min(a.end, hi) - lo, a.text)
            for a in clip.annotations
            if a.overlaps(lo, hi)
        ]
        windows.append(MotionClip(clip.fps, clip.frames[lo:hi], annotations))
    return windows


def normalize_clip(clip: MotionClip) -> list[MotionClip]:
    return truncate_or_reject(resample(clip))


def clip_positions(clip: MotionClip, skel: SkeletonGraph) -> FloatArray:
    """Joint positions for every frame, ``T x J x 3`` meters."""
    return forward_kinematics(clip.poses, skel)


def parse_clip(data: bytes | str, source: str = "<clip>") -> MotionClip:
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as e:
        m = f"{source}:{e.lineno}:{e.colno}: {e.msg}"
        raise MolangParseException(m) from e
    except UnicodeDecodeError as e:
        m = f"{source}:offset {e.start}: {e.reason}"
        raise MolangParseException(m) from e

    try:
        return MotionClip.from_payload(payload)
    except (KeyError, TypeError, ValueError) as e:
        m = f"{source}: malformed clip: {e}"
        raise MolangParseException(m) from e
    except MolangInvalidArgumentException as e:
        m = f"{source}: invalid clip: {e}"
        raise MolangParseException(m) from e


def load_clip(path: Path | str) -> MotionClip:
    path = Path(path)
    return parse_clip(path.read_bytes(), str(path))


def save_clip(clip: MotionClip, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(clip.to_bytes())
