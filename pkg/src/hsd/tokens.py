"""Vocabulary, tokenizer and the 1-indexed sequence algebra.

Token sequences are plain tuples of ints. Slicing helpers use 1-indexed,
inclusive bounds so that ``seq_slice(a, p, q)`` reads like ``a_{p:q}``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

TokenSeq = tuple[int, ...]

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2

SEP_FORM = "<sep>"

# <name> specials stay whole; otherwise words and single punctuation marks.
_TOKEN_RE = re.compile(r"<\w+>|\w+|[^\w\s]")


class SliceError(IndexError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    forms: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if len(self.forms) < 3:
            raise ValueError("vocabulary needs at least the PAD, EOS and UNK entries")
        if len(set(self.forms)) != len(self.forms):
            raise ValueError("vocabulary surface forms must be distinct")
        self.index.clear()
        self.index.update({form: i for i, form in enumerate(self.forms)})

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line for line in lines if line != ""))

    @classmethod
    def builtin(cls) -> "Vocabulary":
        return _builtin_vocab()

    def __len__(self) -> int:
        return len(self.forms)

    @property
    def pad(self) -> int:
        return PAD_ID

    @property
    def eos(self) -> int:
        return EOS_ID

    @property
    def unk(self) -> int:
        return UNK_ID

    @property
    def sep(self) -> int:
        try:
            return self.index[SEP_FORM]
        except KeyError:
            raise ValueError(f"vocabulary has no {SEP_FORM} token") from None

    @property
    def special_ids(self) -> frozenset[int]:
        ids = {PAD_ID, EOS_ID, UNK_ID}
        if SEP_FORM in self.index:
            ids.add(self.index[SEP_FORM])
        return frozenset(ids)

    @property
    def content_ids(self) -> tuple[int, ...]:
        """Ids that may appear in region text (everything but the specials)."""
        special = self.special_ids
        return tuple(i for i in range(len(self.forms)) if i not in special)

    def encode(self, text: str) -> TokenSeq:
        return tokenize(text, self)

    def decode(self, tokens: Iterable[int]) -> str:
        return " ".join(self.forms[t] for t in tokens)


_BUILTIN: Vocabulary | None = None


def _builtin_vocab() -> Vocabulary:
    global _BUILTIN
    if _BUILTIN is None:
        text = resources.files("hsd").joinpath("data/vocab.txt").read_text(encoding="utf-8")
        _BUILTIN = Vocabulary(tuple(line for line in text.splitlines() if line))
    return _BUILTIN


def builtin_corpus() -> str:
    return resources.files("hsd").joinpath("data/corpus.txt").read_text(encoding="utf-8")


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def tokenize(text: str, vocab: Vocabulary) -> TokenSeq:
    index = vocab.index
    return tuple(index.get(word, UNK_ID) for word in split_words(text))


def concat(a: Sequence[int], b: Sequence[int]) -> TokenSeq:
    return tuple(a) + tuple(b)


def seq_slice(a: Sequence[int], p: int, q: int) -> TokenSeq:
    """Return ``a_{p:q}`` (1-indexed, inclusive); ``a_{p:p-1}`` is empty."""
    if not (1 <= p <= q + 1 and q <= len(a)):
        raise SliceError(f"slice {p}:{q} out of range for length {len(a)}")
    return tuple(a[p - 1 : q])
