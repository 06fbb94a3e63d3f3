"""Simulated documents: regions in reading order with ground-truth tokens."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping

from hsd.rng import substream
from hsd.tokens import TokenSeq, Vocabulary, builtin_corpus, tokenize


class DocumentParseError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class RegionKind(str, enum.Enum):
    TEXT = "text"
    TABLE = "table"
    FORMULA = "formula"


@dataclass(frozen=True)
class Region:
    region_index: int
    truth: TokenSeq
    kind: RegionKind = RegionKind.TEXT


@dataclass(frozen=True)
class Document:
    doc_id: str
    regions: tuple[Region, ...]
    page_truth: TokenSeq

    @classmethod
    def from_regions(cls, doc_id: str, regions, vocab: Vocabulary) -> "Document":
        regions = tuple(regions)
        if not regions:
            raise ValueError("a document needs at least one region")
        special = vocab.special_ids
        page: list[int] = []
        for i, region in enumerate(regions):
            if region.region_index != i + 1:
                raise ValueError("regions must be numbered 1..M in reading order")
            if not region.truth:
                raise ValueError(f"region {region.region_index} is empty")
            if special.intersection(region.truth):
                raise ValueError(f"region {region.region_index} contains a special token")
            if i:
                page.append(vocab.sep)
            page.extend(region.truth)
        return cls(doc_id, regions, tuple(page))

    @property
    def content(self) -> TokenSeq:
        return tuple(t for r in self.regions for t in r.truth)

    def region_spans(self) -> list[tuple[int, int]]:
        spans, start = [], 0
        for r in self.regions:
            spans.append((start, start + len(r.truth)))
            start += len(r.truth)
        return spans

    def to_json(self, vocab: Vocabulary) -> dict:
        return {
            "doc_id": self.doc_id,
            "regions": [{"kind": r.kind.value, "text": vocab.decode(r.truth)} for r in self.regions],
        }


@lru_cache(maxsize=4)
def _corpus_tokens(vocab: Vocabulary) -> TokenSeq:
    return tokenize(builtin_corpus(), vocab)


_TABLE_LABELS = ("total", "net", "q1", "q2", "q3", "q4", "year", "figures")
_FORMULA_VARS = ("x", "y", "z", "n", "k", "alpha", "beta")


def _table_stream(rng, vocab: Vocabulary, length: int) -> list[str]:
    cols = int(rng.integers(2, 5))
    out: list[str] = []
    while len(out) < length:
        out.append("|")
        out.append(_TABLE_LABELS[int(rng.integers(len(_TABLE_LABELS)))])
        out.append("|")
        for _ in range(cols):
            out.append(str(int(rng.integers(100))))
            out.append("|")
    return out[:length]


def _formula_stream(rng, vocab: Vocabulary, length: int) -> list[str]:
    out: list[str] = []
    while len(out) < length:
        var = _FORMULA_VARS[int(rng.integers(len(_FORMULA_VARS)))]
        if rng.random() < 0.25:
            out += ["\\", "frac", "{", var, "}", "{", str(int(rng.integers(10))), "}"]
        else:
            out += [var, "_", "{", "i", "}", "^", "{", str(int(rng.integers(1, 4))), "}"]
        out.append("=" if rng.random() < 0.2 else ("+" if rng.random() < 0.7 else "-"))
    return out[:length]


def generate_document(
    seed: int,
    n_regions: int,
    region_len_range: tuple[int, int],
    kind_mix: Mapping[str, float] | None = None,
    vocab: Vocabulary | None = None,
    doc_id: str | None = None,
) -> Document:
    """Synthesize a page deterministically from ``seed``.

    Text regions are contiguous runs of the built-in training corpus; table and
    formula regions come from repetitive motif generators.
    """
    vocab = vocab or Vocabulary.builtin()
    lo, hi = region_len_range
    if n_regions < 1:
        raise ConfigError("n_regions must be >= 1")
    if lo < 1 or hi < lo:
        raise ConfigError(f"invalid region length range {region_len_range}")
    kind_mix = dict(kind_mix or {"text": 0.6, "table": 0.25, "formula": 0.15})
    try:
        kinds = [RegionKind(k) for k in kind_mix]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    weights = [float(kind_mix[k.value]) for k in kinds]
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ConfigError("kind_mix weights must be non-negative with a positive sum")
    total = sum(weights)
    probs = [w / total for w in weights]

    rng = substream(seed, "corpus", doc_id or "")
    corpus = _corpus_tokens(vocab)
    regions = []
    for i in range(n_regions):
        kind = kinds[int(rng.choice(len(kinds), p=probs))]
        length = int(rng.integers(lo, hi + 1))
        if kind is RegionKind.TEXT:
            start = int(rng.integers(len(corpus)))
            truth = tuple(corpus[(start + k) % len(corpus)] for k in range(length))
        elif kind is RegionKind.TABLE:
            truth = tuple(vocab.index[w] for w in _table_stream(rng, vocab, length))
        else:
            truth = tuple(vocab.index[w] for w in _formula_stream(rng, vocab, length))
        regions.append(Region(i + 1, truth, kind))
    return Document.from_regions(doc_id or f"doc_{seed}", regions, vocab)


def parse_document(data, vocab: Vocabulary, source: str = "<document>") -> Document:
    if not isinstance(data, dict):
        raise DocumentParseError(f"{source}: top level must be an object")
    doc_id = data.get("doc_id")
    if not isinstance(doc_id, str) or not doc_id:
        raise DocumentParseError(f"{source}: field 'doc_id' must be a non-empty string")
    raw = data.get("regions")
    if not isinstance(raw, list) or not raw:
        raise DocumentParseError(f"{source}: field 'regions' must be a non-empty list")
    regions = []
    for i, item in enumerate(raw):
        where = f"{source}: regions[{i}]"
        if not isinstance(item, dict):
            raise DocumentParseError(f"{where} must be an object")
        try:
            kind = RegionKind(item.get("kind", "text"))
        except ValueError:
            raise DocumentParseError(f"{where}.kind: unknown kind {item.get('kind')!r}") from None
        text = item.get("text")
        if not isinstance(text, str):
            raise DocumentParseError(f"{where}.text must be a string")
        truth = tokenize(text, vocab)
        if not truth:
            raise DocumentParseError(f"{where}.text is empty")
        if vocab.special_ids.intersection(truth):
            raise DocumentParseError(f"{where}.text contains a reserved token")
        regions.append(Region(i + 1, truth, kind))
    return Document.from_regions(doc_id, regions, vocab)


def load_document(path, vocab: Vocabulary | None = None) -> Document:
    vocab = vocab or Vocabulary.builtin()
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DocumentParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_document(data, vocab, str(path))


def save_document(doc: Document, path, vocab: Vocabulary | None = None):
    vocab = vocab or Vocabulary.builtin()
    Path(path).write_text(json.dumps(doc.to_json(vocab), indent=2) + "\n", encoding="utf-8")
