"""Emulated lightweight parsing pipeline: layout plus fixed per-region drafts.

The pipeline runs once per page. Its layout is the document's regions after
token-space jitter (boundary shifts, splits, merges) and each region's draft is
the crop's content after recognition noise (substitution, deletion).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

from hsd.docsim import Document
from hsd.models import ScoringContext
from hsd.rng import draw_different, substream
from hsd.tokens import TokenSeq, Vocabulary


@dataclass(frozen=True)
class NoiseSpec:
    sub_rate: float = 0.0
    del_rate: float = 0.0
    jitter: int = 0
    split_merge_rate: float = 0.0
    seed: int = 0
    drafts_per_region: int = 1

    def __post_init__(self):
        for name in ("sub_rate", "del_rate", "split_merge_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if self.drafts_per_region < 1:
            raise ValueError("drafts_per_region must be >= 1")

    @property
    def is_zero(self) -> bool:
        return self.sub_rate == 0 and self.del_rate == 0 and self.jitter == 0 and self.split_merge_rate == 0


@dataclass(frozen=True)
class PipelineRegion:
    index: int
    span: tuple[int, int]

    def context(self, doc_id: str) -> ScoringContext:
        return ScoringContext(doc_id, self.index, self.span)

    def __len__(self) -> int:
        return self.span[1] - self.span[0]


@dataclass(frozen=True)
class RegionDrafts:
    region: PipelineRegion
    drafts: tuple[TokenSeq, ...]


@dataclass(frozen=True)
class DraftSet:
    per_region: tuple[RegionDrafts, ...]

    def all_drafts(self) -> list[TokenSeq]:
        return [d for rd in self.per_region for d in rd.drafts]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for rd in self.per_region:
            h.update(repr((rd.region.index, rd.region.span, rd.drafts)).encode())
        return h.hexdigest()


class PageDraftSet:
    """Unordered multiset of page-level drafts."""

    def __init__(self, drafts: Iterable[Sequence[int]] = ()):
        self.drafts: tuple[TokenSeq, ...] = tuple(sorted(tuple(d) for d in drafts if len(d)))

    def __iter__(self):
        return iter(self.drafts)

    def __len__(self) -> int:
        return len(self.drafts)

    def __eq__(self, other):
        if not isinstance(other, PageDraftSet):
            return NotImplemented
        return self.drafts == other.drafts

    def __hash__(self):
        return hash(self.drafts)

    def __repr__(self):
        return f"PageDraftSet({list(self.drafts)})"


def jitter_layout(
    spans: Sequence[tuple[int, int]], jitter: int, split_merge_rate: float, rng
) -> list[tuple[int, int]]:
    """Shift each inner boundary by a draw from [-jitter, jitter], then split/merge.

    Shifts are clamped so every region keeps at least one token. A negative
    draw moves tokens from the end of the left region into the right one.
    """
    bounds = [s for s, _ in spans] + [spans[-1][1]]
    if jitter > 0:
        for k in range(1, len(bounds) - 1):
            shift = int(rng.integers(-jitter, jitter + 1))
            bounds[k] = min(max(bounds[k] + shift, bounds[k - 1] + 1), bounds[k + 1] - 1)
    out = [(bounds[k], bounds[k + 1]) for k in range(len(bounds) - 1)]
    if split_merge_rate > 0:
        result: list[tuple[int, int]] = []
        k = 0
        while k < len(out):
            start, stop = out[k]
            if rng.random() < split_merge_rate:
                if rng.random() < 0.5 and stop - start >= 2:
                    cut = int(rng.integers(start + 1, stop))
                    result += [(start, cut), (cut, stop)]
                    k += 1
                    continue
                if k + 1 < len(out):
                    result.append((start, out[k + 1][1]))
                    k += 2
                    continue
            result.append((start, stop))
            k += 1
        out = result
    return out


def corrupt(tokens: Sequence[int], sub_rate: float, del_rate: float, content_ids, rng) -> TokenSeq:
    subbed = [draw_different(rng, content_ids, t) if rng.random() < sub_rate else t for t in tokens]
    if del_rate <= 0:
        return tuple(subbed)
    return tuple(t for t in subbed if rng.random() >= del_rate)


def run_pipeline(
    doc: Document, noise: NoiseSpec, vocab: Vocabulary | None = None
) -> tuple[list[PipelineRegion], DraftSet]:
    vocab = vocab or Vocabulary.builtin()
    spans = doc.region_spans()
    if noise.jitter or noise.split_merge_rate:
        spans = jitter_layout(
            spans, noise.jitter, noise.split_merge_rate, substream(noise.seed, "jitter", doc.doc_id)
        )
    content = doc.content
    layout = [PipelineRegion(i + 1, span) for i, span in enumerate(spans)]
    content_ids = vocab.content_ids
    per_region = []
    for region in layout:
        crop = content[region.span[0] : region.span[1]]
        drafts = []
        for k in range(noise.drafts_per_region):
            rng = substream(noise.seed, "draft", doc.doc_id, region.index, k)
            draft = corrupt(crop, noise.sub_rate, noise.del_rate, content_ids, rng)
            # a fully deleted draft carries no proposal; the region then decodes unaided
            if draft:
                drafts.append(draft)
        per_region.append(RegionDrafts(region, tuple(drafts)))
    return layout, DraftSet(tuple(per_region))


def aggregate_page_drafts(stage1_outputs: Iterable[Sequence[int]]) -> PageDraftSet:
    return PageDraftSet(stage1_outputs)


def levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def _primary_source(span: tuple[int, int], doc_spans) -> int:
    best, best_overlap = 0, -1
    for i, (s, e) in enumerate(doc_spans):
        overlap = min(e, span[1]) - max(s, span[0])
        if overlap > best_overlap:
            best, best_overlap = i, overlap
    return best


def draft_quality_score(drafts: DraftSet, doc: Document) -> float:
    """1 minus the mean normalized edit distance over reading-order regions.

    Each document region is compared with the first pipeline region whose
    largest overlap is that document region; regions left unmatched by
    jitter score zero.
    """
    doc_spans = doc.region_spans()
    matched: dict[int, TokenSeq] = {}
    for rd in drafts.per_region:
        src = _primary_source(rd.region.span, doc_spans)
        if src not in matched:
            matched[src] = rd.drafts[0] if rd.drafts else ()
    sims = []
    for i, region in enumerate(doc.regions):
        if i not in matched:
            sims.append(0.0)
            continue
        draft = matched[i]
        denom = max(len(draft), len(region.truth))
        sims.append(1.0 - levenshtein(draft, region.truth) / denom)
    return sum(sims) / len(sims)
