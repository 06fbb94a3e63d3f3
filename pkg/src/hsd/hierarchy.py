"""Two-stage region-then-page orchestration and the ablation run modes."""

from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from hsd.docsim import Document
from hsd.dsv import AlignParams, StepRecord, spec_decode
from hsd.metrics import (
    LatencyModel,
    RunMetrics,
    ar_trace,
    batched_cost,
    compute_aal,
    modeled_times,
    tokens_per_step,
)
from hsd.models import ScoringContext, TargetModel, greedy_decode, sequence_logprob
from hsd.pipeline import (
    DraftSet,
    NoiseSpec,
    PageDraftSet,
    PipelineRegion,
    aggregate_page_drafts,
    run_pipeline,
)
from hsd.tokens import TokenSeq, Vocabulary

log = logging.getLogger(__name__)


class RunMode(str, enum.Enum):
    AR = "ar"
    PAGE_ONLY = "page_only"
    HIERARCHICAL = "hierarchical"


@dataclass
class Stage1Result:
    outputs: list[TokenSeq]
    traces: list[list[StepRecord]]
    degraded: list[bool]


@dataclass
class PageResult:
    mode: RunMode
    output: TokenSeq
    stage2_trace: list[StepRecord] = field(default_factory=list)
    stage1_traces: list[list[StepRecord]] = field(default_factory=list)
    stage1_outputs: list[TokenSeq] = field(default_factory=list)
    stage1_degraded: list[bool] = field(default_factory=list)
    layout: list[PipelineRegion] = field(default_factory=list)
    drafts: DraftSet | None = None
    page_drafts: PageDraftSet | None = None
    timings: dict = field(default_factory=dict)

    def to_json(self, vocab: Vocabulary | None = None) -> dict:
        out = {
            "mode": self.mode.value,
            "output": list(self.output),
            "stage2_trace": [r.to_json(i) for i, r in enumerate(self.stage2_trace)],
            "stage1_traces": [[r.to_json(i) for i, r in enumerate(t)] for t in self.stage1_traces],
            "stage1_outputs": [list(o) for o in self.stage1_outputs],
            "stage1_degraded": list(self.stage1_degraded),
        }
        if vocab is not None:
            out["text"] = vocab.decode(self.output)
        return out


def _decode_region(model, doc_id, region: PipelineRegion, drafts, params) -> tuple[TokenSeq, list, bool]:
    ctx = region.context(doc_id)
    try:
        output, trace = spec_decode(model, ctx, drafts, params)
        return output, trace, False
    except Exception as exc:
        log.warning("stage 1 failed on %s region %d: %s", doc_id, region.index, exc)
        if not drafts:
            return (), [], True
        try:
            best = max(drafts, key=lambda d: sequence_logprob(model, ctx, d))
        except Exception:
            best = drafts[0]
        return tuple(best), [], True


def run_stage1(
    model: TargetModel,
    doc: Document,
    layout: Sequence[PipelineRegion],
    drafts: DraftSet,
    params: AlignParams,
    jobs: int = 1,
) -> Stage1Result:
    """Verify every pipeline region against its own drafts, independently.

    Results come back in pipeline-region order whatever the worker count.
    """
    if [rd.region for rd in drafts.per_region] != list(layout):
        raise ValueError("draft set does not match the layout")
    work = [(rd.region, rd.drafts) for rd in drafts.per_region]
    if jobs > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda w: _decode_region(model, doc.doc_id, w[0], w[1], params), work))
    else:
        results = [_decode_region(model, doc.doc_id, region, ds, params) for region, ds in work]
    return Stage1Result(
        outputs=[r[0] for r in results],
        traces=[r[1] for r in results],
        degraded=[r[2] for r in results],
    )


def run_stage2(
    model: TargetModel, doc: Document, page_drafts: PageDraftSet, params: AlignParams
) -> tuple[TokenSeq, list[StepRecord]]:
    return spec_decode(model, ScoringContext.page(doc.doc_id), page_drafts, params)


def run_page(
    model: TargetModel,
    doc: Document,
    mode: RunMode,
    noise: NoiseSpec,
    params: AlignParams,
    jobs: int = 1,
    vocab: Vocabulary | None = None,
) -> PageResult:
    mode = RunMode(mode)
    clock = time.perf_counter
    if mode is RunMode.AR:
        t0 = clock()
        output = greedy_decode(model, ScoringContext.page(doc.doc_id), params.max_len)
        return PageResult(mode, output, timings={"decode": clock() - t0})

    t0 = clock()
    layout, drafts = run_pipeline(doc, noise, vocab)
    t1 = clock()
    result = PageResult(mode, (), layout=layout, drafts=drafts)
    if mode is RunMode.PAGE_ONLY:
        page_drafts = PageDraftSet(drafts.all_drafts())
    else:
        stage1 = run_stage1(model, doc, layout, drafts, params, jobs)
        result.stage1_outputs = stage1.outputs
        result.stage1_traces = stage1.traces
        result.stage1_degraded = stage1.degraded
        page_drafts = aggregate_page_drafts(stage1.outputs)
    t2 = clock()
    result.output, result.stage2_trace = run_stage2(model, doc, page_drafts, params)
    t3 = clock()
    result.page_drafts = page_drafts
    result.timings = {"pipeline": t1 - t0, "stage1": t2 - t1, "stage2": t3 - t2, "decode": t3 - t0}
    return result


def page_metrics(result: PageResult, lat: LatencyModel, context_tokens: int) -> RunMetrics:
    """Modeled and measured costs for one page run.

    AAL, tokens-per-step and step count describe the page-level pass (Stage 2,
    or the plain decode for AR). Stage 1 is charged as lockstep batched rounds
    across regions.
    """
    measured = result.timings.get("decode", 0.0)
    if result.mode is RunMode.AR:
        trace = ar_trace(len(result.output))
        decode, full = modeled_times(trace, lat, context_tokens, include_pipeline=False)
        return RunMetrics(0.0, 1.0, len(trace), decode, full, measured, measured)
    trace = result.stage2_trace
    stage1 = batched_cost(result.stage1_traces, lat) if result.mode is RunMode.HIERARCHICAL else 0.0
    decode, full = modeled_times(trace, lat, context_tokens, include_pipeline=True, extra_decode=stage1)
    return RunMetrics(
        compute_aal(trace), tokens_per_step(trace), len(trace), decode, full, measured, measured
    )


def stage1_aal(result: PageResult) -> float | None:
    steps = [r for t in result.stage1_traces for r in t]
    return compute_aal(steps) if steps else None
