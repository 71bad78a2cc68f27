from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Self

from molang.const import (
    CLS_ID,
    CLS_TOKEN,
    MAX_TOKENS,
    PAD_ID,
    PAD_TOKEN,
    SEP_ID,
    SEP_TOKEN,
    UNK_ID,
    UNK_TOKEN,
)
from molang.exception import (
    MolangConfigException,
    MolangInvalidArgumentException,
)

if TYPE_CHECKING:
    from collections.abc import Iterable

RESERVED = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)

WORD_RE = re.compile(r"[a-z0-9]+")


def split_words(text: str) -> list[str]:
    """Lowercase and split on anything that isn't a letter or digit."""
    return WORD_RE.findall(text.lower())


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            m = f"vocabulary must start with {RESERVED}"
            raise MolangConfigException(m)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise MolangConfigException("vocabulary has duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self.index

    def token_id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def tokenize(
        self, text: str, max_tokens: int = MAX_TOKENS
    ) -> tuple[list[int], list[bool]]:
        """``[CLS] words [SEP]`` padded to ``max_tokens``.

        Returns the ids and a padding mask that is ``True`` on PAD slots.
        Over-long texts keep ``[SEP]`` in the last slot.
        """
        if max_tokens < 2:
            m = f"max_tokens must leave room for [CLS] and [SEP]: {max_tokens}"
            raise MolangInvalidArgumentException(m)

        words = [self.token_id(w) for w in split_words(text)]
        ids = [CLS_ID, *words[: max_tokens - 2], SEP_ID]
        padding = [False] * len(ids) + [True] * (max_tokens - len(ids))
        ids += [PAD_ID] * (max_tokens - len(ids))
        return ids, padding

    def decode(self, ids: Iterable[int]) -> str:
        words = [
            self.tokens[i]
            for i in ids
            if i not in (PAD_ID, CLS_ID, SEP_ID)
        ]
        return " ".join(words)

    def to_list(self) -> list[str]:
        return list(self.tokens)

    @classmethod
    def from_list(cls, tokens: list[str]) -> Self:
        return cls(list(tokens))


def build_vocab(corpus: Iterable[str], min_freq: int = 1) -> Vocab:
    """Frequency-ordered vocabulary, ties broken lexicographically."""
    corpus = list(corpus)
    if not corpus:
        raise MolangInvalidArgumentException("corpus is empty")

    counts = Counter(w for text in corpus for w in split_words(text))
    words = sorted(
        (w for w, c in counts.items() if c >= min_freq and w not in RESERVED),
        key=lambda w: (-counts[w], w),
    )
    return Vocab([*RESERVED, *words])
