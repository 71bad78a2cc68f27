from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest

from molang.dataset import paired_samples
from molang.exception import MolangInvalidSpecException, MolangParseException
from molang.synth import (
    DEFAULT_CLASSES,
    MotionClassSpec,
    SynthSpec,
    default_spec,
    synth_generate,
)

from .base import TestBase
from .common import tiny_dataset, tiny_spec


class TestSynth(TestBase):
    def test_split_counts(self) -> None:
        train, test = tiny_dataset(classes=3, clips_per_class=5)
        assert len(train) == 12
        assert len(test) == 3
        assert train.labels == sorted(c.name for c in DEFAULT_CLASSES[:3])
        for label in train.labels:
            assert sum(e.label == label for e in test.entries) == 1

    def test_deterministic(self) -> None:
        a, _ = tiny_dataset(seed=3)
        b, _ = tiny_dataset(seed=3)
        c, _ = tiny_dataset(seed=4)
        assert a.fingerprint == b.fingerprint
        assert a.fingerprint != c.fingerprint

    def test_clips_are_annotated(self) -> None:
        train, _ = tiny_dataset()
        phrases = {p for c in DEFAULT_CLASSES for p in c.phrases}
        for sample in paired_samples(train):
            assert 20 <= len(sample.frames) <= 30
            assert sample.text in phrases
            assert np.isfinite(sample.frames).all()

    def test_default_spec_is_valid(self) -> None:
        spec = default_spec()
        assert len(spec.classes) == 8
        assert SynthSpec.from_json(spec.to_json()) == spec

    def test_one_class(self) -> None:
        spec = tiny_spec(classes=1)
        with pytest.raises(MolangInvalidSpecException):
            synth_generate(spec, 0)

    def test_too_few_phrases(self) -> None:
        first = DEFAULT_CLASSES[0]
        short = MotionClassSpec(first.name, first.phrases[:2], first.programs)
        spec = dataclasses.replace(
            tiny_spec(), classes=(short, *DEFAULT_CLASSES[1:3])
        )
        with pytest.raises(MolangInvalidSpecException, match="phrases"):
            synth_generate(spec, 0)

    def test_unknown_joint(self) -> None:
        first = DEFAULT_CLASSES[0]
        program = dataclasses.replace(first.programs[0], joint="tail")
        broken = MotionClassSpec(first.name, first.phrases, (program,))
        spec = dataclasses.replace(
            tiny_spec(), classes=(broken, *DEFAULT_CLASSES[1:3])
        )
        with pytest.raises(MolangInvalidSpecException):
            synth_generate(spec, 0)

    def test_bad_json(self) -> None:
        with pytest.raises(MolangParseException):
            SynthSpec.from_json("{")
        with pytest.raises(MolangInvalidSpecException):
            SynthSpec.from_json('{"classes": [{"name": "x"}]}')

    def test_mistyped_fields(self) -> None:
        good = json.loads(tiny_spec().to_json())
        for key, value in (
            ("min_frames", "10"),
            ("clips_per_class", 2.5),
            ("clips_per_class", True),
            ("jitter_std", "a"),
            ("shuffle", True),
        ):
            with pytest.raises(MolangInvalidSpecException, match=key):
                SynthSpec.from_json(json.dumps({**good, key: value}))

    def test_program_shapes(self) -> None:
        good = json.loads(tiny_spec().to_json())
        program = good["classes"][0]["programs"][0]
        for key, value in (
            ("axis", [0, 1]),
            ("axis", [0, "1", 0]),
            ("amplitude", [0.5]),
            ("phase", 1.0),
        ):
            broken = {**program, key: value}
            first = {**good["classes"][0], "programs": [broken]}
            payload = {**good, "classes": [first, *good["classes"][1:]]}
            with pytest.raises(MolangInvalidSpecException, match=key):
                SynthSpec.from_json(json.dumps(payload))

    def test_validate_checks_direct_construction(self) -> None:
        first = DEFAULT_CLASSES[0]
        program = dataclasses.replace(first.programs[0], axis=(0.0, 1.0))
        broken = MotionClassSpec(first.name, first.phrases, (program,))
        spec = dataclasses.replace(
            tiny_spec(), classes=(broken, *DEFAULT_CLASSES[1:3])
        )
        with pytest.raises(MolangInvalidSpecException, match="axis"):
            synth_generate(spec, 0)
        with pytest.raises(MolangInvalidSpecException, match="min_frames"):
            synth_generate(dataclasses.replace(tiny_spec(), min_frames=1.5), 0)

    def test_default_size(self) -> None:
        spec = default_spec()
        n_test = round(spec.clips_per_class * spec.test_fraction)
        n_train = spec.clips_per_class - n_test
        assert len(spec.classes) * n_train == 800
        assert len(spec.classes) * n_test == 200
