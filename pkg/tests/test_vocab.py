from __future__ import annotations

import pytest

from molang.const import CLS_ID, PAD_ID, SEP_ID, UNK_ID
from molang.exception import (
    MolangConfigException,
    MolangInvalidArgumentException,
)
from molang.vocab import RESERVED, Vocab, build_vocab, split_words

from .base import TestBase


class TestVocab(TestBase):
    def setUp(self) -> None:
        super().setUp()
        self.sut = build_vocab(["Walk forward", "walk back", "jump!"])

    def test_split_words(self) -> None:
        assert split_words("A person, WALKS 2 steps!") == [
            "a", "person", "walks", "2", "steps"
        ]

    def test_reserved_first(self) -> None:
        assert tuple(self.sut.tokens[:4]) == RESERVED
        assert self.sut.token_id("[PAD]") == PAD_ID

    def test_frequency_then_alphabetical(self) -> None:
        assert self.sut.tokens[4:] == ["walk", "back", "forward", "jump"]

    def test_min_freq(self) -> None:
        vocab = build_vocab(["walk forward", "walk back"], min_freq=2)
        assert vocab.tokens[4:] == ["walk"]

    def test_tokenize(self) -> None:
        ids, padding = self.sut.tokenize("walk sideways", 6)
        assert ids == [CLS_ID, 4, UNK_ID, SEP_ID, PAD_ID, PAD_ID]
        assert padding == [False, False, False, False, True, True]

    def test_truncation_keeps_sep(self) -> None:
        ids, padding = self.sut.tokenize("walk walk walk walk", 4)
        assert ids == [CLS_ID, 4, 4, SEP_ID]
        assert not any(padding)

    def test_decode(self) -> None:
        ids, _ = self.sut.tokenize("Jump forward", 8)
        assert self.sut.decode(ids) == "jump forward"

    def test_round_trip(self) -> None:
        assert Vocab.from_list(self.sut.to_list()) == self.sut

    def test_bad_vocab(self) -> None:
        with pytest.raises(MolangConfigException):
            Vocab(["walk"])
        with pytest.raises(MolangConfigException):
            Vocab([*RESERVED, "walk", "walk"])

    def test_bad_arguments(self) -> None:
        with pytest.raises(MolangInvalidArgumentException):
            build_vocab([])
        with pytest.raises(MolangInvalidArgumentException):
            self.sut.tokenize("walk", 1)
