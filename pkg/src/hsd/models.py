"""Target-model abstraction and the two toy models standing in for the parser.

A model only has to answer one question: the next-token log-distribution for a
conditioning view and a token history. ``score_packed`` is derived from that by
reading each packed node's history through the ancestry mask, which is what
makes batched tree verification equivalent to scoring every path on its own.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from hsd.rng import draw_different, substream
from hsd.tokens import EOS_ID, PAD_ID, TokenSeq, Vocabulary, tokenize
from hsd.tree import AncestryMask, PackedTree

PROB_FLOOR = 1e-12


class ContextError(KeyError):
    pass


@dataclass(frozen=True)
class ScoringContext:
    """Conditioning view: the full page (``region is None``) or one region crop.

    ``span`` is the crop's half-open token range in page-content coordinates
    (region truths concatenated without separators). When omitted for a region
    view, the document region's own extent is used.
    """

    doc_id: str | None
    region: int | None = None
    span: tuple[int, int] | None = None

    @classmethod
    def page(cls, doc_id: str | None) -> "ScoringContext":
        return cls(doc_id)

    @property
    def is_page(self) -> bool:
        return self.region is None


@dataclass(frozen=True, eq=False)
class NextTokenDist:
    logprobs: np.ndarray

    def __post_init__(self):
        self.logprobs.setflags(write=False)

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "NextTokenDist":
        return cls(np.log(np.maximum(probs, PROB_FLOOR)))

    def __len__(self) -> int:
        return self.logprobs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, NextTokenDist):
            return NotImplemented
        return np.array_equal(self.logprobs, other.logprobs)

    __hash__ = None

    def prob(self, token: int) -> float:
        return math.exp(self.logprobs[token])

    def argmax(self) -> int:
        # np.argmax returns the first maximum, i.e. the lowest token id on ties
        return int(np.argmax(self.logprobs))


class TargetModel:
    vocab_size: int

    def next_dist(self, ctx: ScoringContext, seq: Sequence[int]) -> NextTokenDist:
        raise NotImplementedError

    def score_packed(
        self,
        ctx: ScoringContext,
        prefix: Sequence[int],
        packed: PackedTree,
        mask: AncestryMask | None = None,
    ) -> list[NextTokenDist]:
        """Distributions for the root (prefix only) followed by one per packed position."""
        if mask is None:
            mask = AncestryMask.from_parents(packed.parents)
        prefix = tuple(prefix)
        out = [self.next_dist(ctx, prefix)]
        tokens = packed.tokens
        for i in range(len(packed)):
            visible = tuple(tokens[j] for j in mask.visible(i))
            out.append(self.next_dist(ctx, prefix + visible))
        return out


def greedy_decode(
    model: TargetModel, ctx: ScoringContext, max_len: int, prefix: Sequence[int] = ()
) -> TokenSeq:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    seq = list(prefix)
    while len(seq) < max_len:
        tok = model.next_dist(ctx, seq).argmax()
        if tok == EOS_ID:
            break
        seq.append(tok)
    return tuple(seq)


def sequence_logprob(model: TargetModel, ctx: ScoringContext, seq: Sequence[int]) -> float:
    total = 0.0
    for t in range(len(seq)):
        total += float(model.next_dist(ctx, seq[:t]).logprobs[seq[t]])
    return total


# -- conditioning scripts -------------------------------------------------


@dataclass(frozen=True)
class DocScripts:
    page: TokenSeq
    regions: tuple[TokenSeq, ...]

    @property
    def content(self) -> TokenSeq:
        return tuple(t for r in self.regions for t in r)

    def region_span(self, index: int) -> tuple[int, int]:
        start = sum(len(r) for r in self.regions[: index - 1])
        return start, start + len(self.regions[index - 1])


class ScriptBook:
    """Maps a scoring context to the text the model 'sees' for that view."""

    def __init__(self):
        self.docs: dict[str, DocScripts] = {}
        self._content: dict[str, TokenSeq] = {}

    def add_scripts(self, doc_id: str, page: Sequence[int], regions: Iterable[Sequence[int]]):
        scripts = DocScripts(tuple(page), tuple(tuple(r) for r in regions))
        self.docs[doc_id] = scripts
        self._content[doc_id] = scripts.content

    def add_document(self, doc, region_drift: float = 0.0, seed: int = 0, vocab: Vocabulary | None = None):
        """Register a document; ``region_drift`` perturbs the region-level view only."""
        regions = [r.truth for r in doc.regions]
        if region_drift > 0:
            if vocab is None:
                vocab = Vocabulary.builtin()
            content_ids = vocab.content_ids
            rng = substream(seed, "model-drift", doc.doc_id)
            drifted = []
            for truth in regions:
                drifted.append(
                    tuple(
                        draw_different(rng, content_ids, tok) if rng.random() < region_drift else tok
                        for tok in truth
                    )
                )
            regions = drifted
        self.add_scripts(doc.doc_id, doc.page_truth, regions)

    def resolve(self, ctx: ScoringContext) -> tuple[tuple, TokenSeq]:
        scripts = self.docs.get(ctx.doc_id)
        if scripts is None:
            raise ContextError(f"unknown document {ctx.doc_id!r}")
        if ctx.region is None:
            return (ctx.doc_id, "page"), scripts.page
        if ctx.span is None:
            if not 1 <= ctx.region <= len(scripts.regions):
                raise ContextError(f"document {ctx.doc_id!r} has no region {ctx.region}")
            return (ctx.doc_id, "region", ctx.region), scripts.regions[ctx.region - 1]
        start, stop = ctx.span
        content = self._content[ctx.doc_id]
        if not 0 <= start < stop <= len(content):
            raise ContextError(f"crop span {ctx.span} outside document {ctx.doc_id!r}")
        return (ctx.doc_id, "span", start, stop), content[start:stop]


# -- scripted model ---------------------------------------------------------


def scripted_resync(g: Sequence[int], prefix: Sequence[int], resync_min: int) -> int | None:
    """Position j (1-indexed) in ``g`` where the longest suffix of ``prefix`` ends.

    Longest match wins, then the largest j. Matches shorter than ``resync_min``
    do not count.
    """
    best_len, best_j = 0, None
    for j in range(1, len(g) + 1):
        k = 0
        while k < j and k < len(prefix) and prefix[-1 - k] == g[j - 1 - k]:
            k += 1
        if k >= best_len and k > 0:
            best_len, best_j = k, j
    if best_j is None or best_len < max(resync_min, 1):
        return None
    return best_j


class ScriptedModel(ScriptBook, TargetModel):
    """Puts ``p_top`` on the scripted next token and spreads the rest uniformly.

    On-script histories continue the script directly; anything else
    resynchronizes through ``scripted_resync`` and falls back to EOS.
    """

    def __init__(self, vocab_size: int, p_top: float = 0.9, resync_min: int = 3):
        super().__init__()
        if not 0.5 < p_top < 1.0:
            raise ValueError("p_top must lie in (0.5, 1)")
        self.vocab_size = vocab_size
        self.p_top = p_top
        self.resync_min = resync_min
        self._dists: dict[int, NextTokenDist] = {}

    @classmethod
    def from_json(cls, path, vocab: Vocabulary) -> "ScriptedModel":
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        model = cls(len(vocab), p_top=spec.get("p_top", 0.9), resync_min=spec.get("resync_min", 3))
        regions = sorted(spec["regions"], key=lambda r: r["region_index"])
        model.add_scripts(
            spec["doc_id"],
            tokenize(spec["page_text"], vocab),
            [tokenize(r["text"], vocab) for r in regions],
        )
        return model

    def scripted_token(self, g: TokenSeq, seq: Sequence[int]) -> int:
        t = len(seq)
        if t <= len(g) and tuple(seq) == g[:t]:
            return g[t] if t < len(g) else EOS_ID
        j = scripted_resync(g, seq, self.resync_min)
        if j is None or j >= len(g):
            return EOS_ID
        return g[j]

    def dist_for(self, token: int) -> NextTokenDist:
        dist = self._dists.get(token)
        if dist is None:
            probs = np.full(self.vocab_size, (1.0 - self.p_top) / (self.vocab_size - 1))
            probs[token] = self.p_top
            dist = NextTokenDist.from_probs(probs)
            self._dists[token] = dist
        return dist

    def next_dist(self, ctx: ScoringContext, seq: Sequence[int]) -> NextTokenDist:
        _, g = self.resolve(ctx)
        return self.dist_for(self.scripted_token(g, seq))


# -- n-gram model -------------------------------------------------------------


class NGramModel(ScriptBook, TargetModel):
    """Additively smoothed n-gram model.

    Background counts come from training text. For a document view, counts from
    that view's script are added on top with weight ``script_weight``, so the model is sharp where the page
    is unambiguous and soft where contexts repeat. PAD gets zero mass. A
    context with ``doc_id=None`` uses background counts only.
    """

    def __init__(self, vocab_size: int, order: int = 3, delta: float = 0.1, script_weight: float = 10.0):
        super().__init__()
        if order < 1:
            raise ValueError("order must be >= 1")
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.vocab_size = vocab_size
        self.order = order
        self.delta = delta
        self.script_weight = script_weight
        self.background: dict[tuple, Counter] = defaultdict(Counter)
        self._view_counts: dict[tuple, dict[tuple, Counter]] = {}
        self._cache: dict[tuple, NextTokenDist] = {}

    def _count_into(self, table: dict, seq: Sequence[int]):
        padded = (PAD_ID,) * (self.order - 1) + tuple(seq) + (EOS_ID,)
        for i in range(self.order - 1, len(padded)):
            table[padded[i - self.order + 1 : i]][padded[i]] += 1

    def train(self, seqs: Iterable[Sequence[int]]) -> "NGramModel":
        for seq in seqs:
            self._count_into(self.background, seq)
        self._cache.clear()
        return self

    def train_text(self, text: str, vocab: Vocabulary) -> "NGramModel":
        # the whole text is one stream, so EOS is only learned at its very end
        return self.train([tokenize(text, vocab)])

    def context_of(self, seq: Sequence[int]) -> tuple:
        if self.order == 1:
            return ()
        padded = (PAD_ID,) * (self.order - 1) + tuple(seq[-(self.order - 1) :])
        return padded[-(self.order - 1) :]

    def _view_table(self, key: tuple, script: TokenSeq) -> dict:
        table = self._view_counts.get(key)
        if table is None:
            table = defaultdict(Counter)
            self._count_into(table, script)
            self._view_counts[key] = table
        return table

    def next_dist(self, ctx: ScoringContext, seq: Sequence[int]) -> NextTokenDist:
        if ctx.doc_id is None:
            key, script = None, None
        else:
            key, script = self.resolve(ctx)
        context = self.context_of(seq)
        cache_key = (key, context)
        dist = self._cache.get(cache_key)
        if dist is not None:
            return dist
        counts = np.full(self.vocab_size, self.delta)
        for tok, c in self.background.get(context, {}).items():
            counts[tok] += c
        if key is not None:
            for tok, c in self._view_table(key, script).get(context, {}).items():
                counts[tok] += self.script_weight * c
        counts[PAD_ID] = 0.0
        dist = NextTokenDist.from_probs(counts / counts.sum())
        self._cache[cache_key] = dist
        return dist
