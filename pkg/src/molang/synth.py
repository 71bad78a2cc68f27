"""Procedural motion-language benchmark.

Each motion class drives a few joints with sinusoidal axis-angle programs and
owns a handful of free-form phrases. Clips vary in length, amplitude,
frequency and phase, carry per-frame rotation jitter on every joint, and are
annotated with one sampled phrase covering the whole clip.

The default spec holds 8 classes of 125 clips each, split 800 train / 200
test with every class represented in both.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from typing import TYPE_CHECKING, Self

import numpy as np

from molang.clip import Annotation, MotionClip
from molang.const import MAX_FRAMES, NUM_JOINTS, TARGET_FPS
from molang.dataset import DatasetManifest, ManifestEntry
from molang.exception import (
    MolangInvalidSkeletonException,
    MolangInvalidSpecException,
    MolangParseException,
)
from molang.geometry import axis_angle_to_6d
from molang.skeleton import SkeletonGraph

if TYPE_CHECKING:
    from molang.typing import FloatArray, Payload

LOGGER = logging.getLogger("molang")

Range = tuple[float, float]


@dataclass(frozen=True)
class JointProgram:
    joint: str
    axis: tuple[float, float, float]
    amplitude: Range
    frequency: Range
    phase: Range = (0.0, 2 * np.pi)
    offset: Range = (0.0, 0.0)


@dataclass(frozen=True)
class MotionClassSpec:
    name: str
    phrases: tuple[str, ...]
    programs: tuple[JointProgram, ...]


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[MotionClassSpec, ...]
    clips_per_class: int = 125
    min_frames: int = 30
    max_frames: int = MAX_FRAMES
    jitter_std: float = 0.05
    test_fraction: float = 0.2

    def validate(self, skel: SkeletonGraph) -> None:
        if len(self.classes) < 2:
            m = f"need at least 2 motion classes, got {len(self.classes)}"
            raise MolangInvalidSpecException(m)
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise MolangInvalidSpecException("class names must be unique")
        for name in ("clips_per_class", "min_frames", "max_frames"):
            _integer(getattr(self, name), name)
        for name in ("jitter_std", "test_fraction"):
            _number(getattr(self, name), name)
        if not 1 <= self.min_frames <= self.max_frames <= MAX_FRAMES:
            m = f"bad frame range {self.min_frames}..{self.max_frames}"
            raise MolangInvalidSpecException(m)
        if self.clips_per_class < 1 or self.jitter_std < 0:
            raise MolangInvalidSpecException("bad clip count or jitter")
        if not 0.0 <= self.test_fraction < 1.0:
            m = f"test_fraction {self.test_fraction} isn't in [0, 1)"
            raise MolangInvalidSpecException(m)

        for c in self.classes:
            if len(c.phrases) < 3:
                m = f"class {c.name!r} needs at least 3 phrases"
                raise MolangInvalidSpecException(m)
            if not c.programs:
                m = f"class {c.name!r} has no joint program"
                raise MolangInvalidSpecException(m)
            for p in c.programs:
                where = f"{c.name}/{p.joint}"
                try:
                    skel.joint_index(p.joint)
                except MolangInvalidSkeletonException as e:
                    raise MolangInvalidSpecException(str(e)) from e
                axis = _vector(p.axis, 3, f"{where} axis")
                if np.linalg.norm(axis) == 0:
                    raise MolangInvalidSpecException(f"{where}: axis is zero")
                for r in (p.amplitude, p.frequency, p.phase, p.offset):
                    lo, hi = _vector(r, 2, f"{where} range")
                    if lo > hi:
                        m = f"{where}: range {lo}..{hi} is empty"
                        raise MolangInvalidSpecException(m)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_payload(cls, data: Payload) -> Self:
        if not isinstance(data, dict) or not isinstance(
            data.get("classes"), list
        ):
            raise MolangInvalidSpecException("spec needs a 'classes' list")
        classes = tuple(_class_spec(c) for c in data["classes"])
        options = {k: v for k, v in data.items() if k != "classes"}
        unknown = set(options) - {f.name for f in fields(cls)}
        if unknown:
            m = f"unknown spec fields: {', '.join(sorted(unknown))}"
            raise MolangInvalidSpecException(m)
        for name in ("clips_per_class", "min_frames", "max_frames"):
            if name in options:
                options[name] = _integer(options[name], name)
        for name in ("jitter_std", "test_fraction"):
            if name in options:
                options[name] = _number(options[name], name)
        return cls(classes=classes, **options)

    @classmethod
    def from_json(cls, text: str) -> Self:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            m = f"spec:{e.lineno}:{e.colno}: {e.msg}"
            raise MolangParseException(m) from e
        try:
            return cls.from_payload(data)
        except (KeyError, TypeError) as e:
            raise MolangInvalidSpecException(f"malformed spec: {e}") from e


def _integer(value: object, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise MolangInvalidSpecException(f"{what} must be an integer")
    return value


def _number(value: object, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise MolangInvalidSpecException(f"{what} must be a number")
    if not np.isfinite(value):
        raise MolangInvalidSpecException(f"{what} must be finite")
    return float(value)


def _vector(value: object, size: int, what: str) -> tuple[float, ...]:
    if not isinstance(value, list | tuple) or len(value) != size:
        m = f"{what} must hold {size} numbers, got {value!r}"
        raise MolangInvalidSpecException(m)
    return tuple(_number(v, what) for v in value)


def _axis(value: object, what: str) -> tuple[float, float, float]:
    x, y, z = _vector(value, 3, what)
    return x, y, z


def _range(value: object, what: str) -> Range:
    lo, hi = _vector(value, 2, what)
    return lo, hi


def _text(value: object, what: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise MolangInvalidSpecException(f"{what} must be a non-empty string")
    return value


def _joint_program(data: Payload, where: str) -> JointProgram:
    if not isinstance(data, dict):
        raise MolangInvalidSpecException(f"{where}: program must be an object")
    joint = _text(data["joint"], f"{where} joint")
    where = f"{where}/{joint}"
    return JointProgram(
        joint=joint,
        axis=_axis(data["axis"], f"{where} axis"),
        amplitude=_range(data["amplitude"], f"{where} amplitude"),
        frequency=_range(data["frequency"], f"{where} frequency"),
        phase=_range(data.get("phase", (0.0, 2 * np.pi)), f"{where} phase"),
        offset=_range(data.get("offset", (0.0, 0.0)), f"{where} offset"),
    )


def _class_spec(data: Payload) -> MotionClassSpec:
    if not isinstance(data, dict):
        raise MolangInvalidSpecException("each class must be an object")
    name = _text(data["name"], "class name")
    phrases = data["phrases"]
    if not isinstance(phrases, list):
        raise MolangInvalidSpecException(f"{name}: phrases must be a list")
    programs = data["programs"]
    if not isinstance(programs, list):
        raise MolangInvalidSpecException(f"{name}: programs must be a list")
    return MotionClassSpec(
        name=name,
        phrases=tuple(_text(p, f"{name} phrase") for p in phrases),
        programs=tuple(_joint_program(p, name) for p in programs),
    )


def _program(
    joint: str,
    axis: tuple[float, float, float],
    amplitude: Range,
    frequency: Range,
    offset: Range = (0.0, 0.0),
) -> JointProgram:
    return JointProgram(joint, axis, amplitude, frequency, offset=offset)


DEFAULT_CLASSES = (
    MotionClassSpec(
        "raise right arm",
        (
            "a person raises the right arm",
            "lifting right hand up",
            "right arm goes up",
            "someone lifts their right arm",
        ),
        (_program("right_shoulder", (0, 0, -1), (0.5, 0.8), (0.2, 0.4),
                  offset=(0.6, 0.9)),),
    ),
    MotionClassSpec(
        "raise left arm",
        (
            "a person raises the left arm",
            "lifting left hand up",
            "left arm goes up",
            "someone lifts their left arm",
        ),
        (_program("left_shoulder", (0, 0, 1), (0.5, 0.8), (0.2, 0.4),
                  offset=(0.6, 0.9)),),
    ),
    MotionClassSpec(
        "wave",
        (
            "a person waves hello",
            "waving the hand",
            "someone waves at a friend",
            "greeting with a wave",
        ),
        (
            _program("right_shoulder", (0, 0, -1), (0.0, 0.1), (0.2, 0.4),
                     offset=(1.2, 1.5)),
            _program("right_elbow", (0, 1, 0), (0.4, 0.7), (1.5, 2.5)),
        ),
    ),
    MotionClassSpec(
        "squat",
        (
            "a person squats down",
            "doing squats",
            "bending the knees to crouch",
            "someone squats and stands up",
        ),
        (
            _program("left_hip", (1, 0, 0), (0.5, 0.9), (0.4, 0.8)),
            _program("right_hip", (1, 0, 0), (0.5, 0.9), (0.4, 0.8)),
            _program("left_knee", (1, 0, 0), (0.8, 1.2), (0.4, 0.8)),
            _program("right_knee", (1, 0, 0), (0.8, 1.2), (0.4, 0.8)),
        ),
    ),
    MotionClassSpec(
        "kick",
        (
            "a person kicks with the right leg",
            "kicking forward",
            "someone kicks a ball",
            "a quick kick with the foot",
        ),
        (
            _program("right_hip", (-1, 0, 0), (0.8, 1.2), (0.8, 1.2)),
            _program("right_knee", (1, 0, 0), (0.3, 0.6), (0.8, 1.2)),
        ),
    ),
    MotionClassSpec(
        "turn",
        (
            "a person turns around",
            "turning in place",
            "someone rotates the body",
            "spinning slowly around",
        ),
        (_program("pelvis", (0, 1, 0), (1.2, 2.4), (0.1, 0.25)),),
    ),
    MotionClassSpec(
        "jump in place",
        (
            "a person jumps in place",
            "jumping up and down",
            "hopping on the spot",
            "someone bounces with both feet",
        ),
        (
            _program("left_knee", (1, 0, 0), (0.2, 0.4), (1.6, 2.4)),
            _program("right_knee", (1, 0, 0), (0.2, 0.4), (1.6, 2.4)),
            _program("left_ankle", (1, 0, 0), (0.2, 0.3), (1.6, 2.4)),
            _program("right_ankle", (1, 0, 0), (0.2, 0.3), (1.6, 2.4)),
        ),
    ),
    MotionClassSpec(
        "bow",
        (
            "a person bows",
            "bowing forward politely",
            "someone bends the upper body forward",
            "taking a bow",
        ),
        (
            _program("spine1", (1, 0, 0), (0.3, 0.5), (0.2, 0.5)),
            _program("spine2", (1, 0, 0), (0.2, 0.4), (0.2, 0.5)),
        ),
    ),
)


def default_spec() -> SynthSpec:
    return SynthSpec(classes=DEFAULT_CLASSES)


def _uniform(rng: np.random.Generator, r: Range) -> float:
    return float(rng.uniform(r[0], r[1]))


def synth_clip(
    cls_spec: MotionClassSpec,
    spec: SynthSpec,
    skel: SkeletonGraph,
    rng: np.random.Generator,
) -> MotionClip:
    length = int(rng.integers(spec.min_frames, spec.max_frames + 1))
    t = np.arange(length) / TARGET_FPS

    rotvec = np.zeros((length, NUM_JOINTS, 3))
    for p in cls_spec.programs:
        axis = np.asarray(p.axis, dtype=np.float64)
        axis /= np.linalg.norm(axis)
        amplitude = _uniform(rng, p.amplitude)
        frequency = _uniform(rng, p.frequency)
        phase = _uniform(rng, p.phase)
        offset = _uniform(rng, p.offset)
        angle = offset + amplitude * np.sin(2 * np.pi * frequency * t + phase)
        rotvec[:, skel.joint_index(p.joint)] += angle[:, None] * axis

    rotvec += rng.normal(0.0, spec.jitter_std, rotvec.shape)
    frames: FloatArray = axis_angle_to_6d(rotvec)

    phrase = cls_spec.phrases[int(rng.integers(len(cls_spec.phrases)))]
    annotations = [Annotation(0, length, phrase)]
    return MotionClip(TARGET_FPS, frames, annotations)


def synth_generate(
    spec: SynthSpec, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic (train, test) manifests with in-memory clips."""
    skel = SkeletonGraph.smpl()
    spec.validate(skel)

    rng = np.random.default_rng(seed)
    n_test = round(spec.clips_per_class * spec.test_fraction)

    train: list[ManifestEntry] = []
    test: list[ManifestEntry] = []
    for c, cls_spec in enumerate(spec.classes):
        entries = [
            ManifestEntry(
                path=f"clips/{c:02d}_{i:04d}.json",
                annotation=0,
                label=cls_spec.name,
                clip=synth_clip(cls_spec, spec, skel, rng),
            )
            for i in range(spec.clips_per_class)
        ]
        order = rng.permutation(len(entries))
        test += [entries[i] for i in sorted(order[:n_test])]
        train += [entries[i] for i in sorted(order[n_test:])]

    LOGGER.info(
        f"Synthesized {len(train)} train / {len(test)} test clips "
        f"over {len(spec.classes)} classes (seed {seed})."
    )
    return DatasetManifest(train, "train"), DatasetManifest(test, "test")
