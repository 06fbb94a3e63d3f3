"""Experiment matrix runner and the three report tiers (JSON lines, CSV, markdown)."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from hsd.config import ExperimentConfig
from hsd.docsim import Document
from hsd.hierarchy import PageResult, RunMode, page_metrics, run_page, stage1_aal
from hsd.metrics import RunMetrics, speedup
from hsd.pipeline import NoiseSpec, draft_quality_score, run_pipeline
from hsd.tokens import Vocabulary

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "doc_id", "mode", "tau", "n", "sub_rate", "del_rate", "jitter",
    "aal", "tokens_per_step", "steps", "sr_decode", "sr_e2e", "draft_quality",
]


@dataclass
class RunRecord:
    doc_id: str
    mode: RunMode
    tau: float | None
    n: int | None
    noise: NoiseSpec
    metrics: RunMetrics | None = None
    sr_decode: float | None = None
    sr_e2e: float | None = None
    draft_quality: float | None = None
    result: PageResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def csv_row(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "mode": self.mode.value,
            "tau": _fmt(self.tau),
            "n": "" if self.n is None else str(self.n),
            "sub_rate": _fmt(self.noise.sub_rate),
            "del_rate": _fmt(self.noise.del_rate),
            "jitter": str(self.noise.jitter),
            "aal": _fmt(self.metrics.aal),
            "tokens_per_step": _fmt(self.metrics.tokens_per_step),
            "steps": str(self.metrics.steps),
            "sr_decode": _fmt(self.sr_decode),
            "sr_e2e": _fmt(self.sr_e2e),
            "draft_quality": _fmt(self.draft_quality),
        }

    def to_json(self) -> dict:
        out = {
            "doc_id": self.doc_id,
            "mode": self.mode.value,
            "tau": self.tau,
            "n": self.n,
            "noise": {
                "sub_rate": self.noise.sub_rate,
                "del_rate": self.noise.del_rate,
                "jitter": self.noise.jitter,
                "split_merge_rate": self.noise.split_merge_rate,
                "drafts_per_region": self.noise.drafts_per_region,
            },
        }
        if self.error is not None:
            out["error"] = self.error
            return out
        m = self.metrics
        out.update(
            aal=m.aal,
            tokens_per_step=m.tokens_per_step,
            steps=m.steps,
            modeled_decode_time=m.modeled_decode_time,
            modeled_full_time=m.modeled_full_time,
            sr_decode=self.sr_decode,
            sr_e2e=self.sr_e2e,
            draft_quality=self.draft_quality,
            output_len=len(self.result.output),
        )
        if self.result.mode is RunMode.AR:
            out["trace"] = [{"step": i, "a_i": 0, "bonus": 1, "packed_size": 1, "candidates_found": 0}
                            for i in range(len(self.result.output))]
        else:
            out["trace"] = [r.to_json(i) for i, r in enumerate(self.result.stage2_trace)]
        if self.result.mode is RunMode.HIERARCHICAL:
            out["stage1_aal"] = stage1_aal(self.result)
            out["stage1_traces"] = [[r.to_json(i) for i, r in enumerate(t)] for t in self.result.stage1_traces]
            out["stage1_degraded"] = list(self.result.stage1_degraded)
        return out


def _fmt(value) -> str:
    if value is None:
        return ""
    return f"{value:.6f}"


@dataclass
class DocOutcome:
    doc_id: str
    records: list[RunRecord] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)


def run_document(cfg: ExperimentConfig, doc: Document, vocab: Vocabulary, base: Path | None = None) -> DocOutcome:
    lat = cfg.latency_model()
    outcome = DocOutcome(doc.doc_id)
    model = cfg.build_model(doc, vocab, base)
    default_params = cfg.align_params(cfg.align.tau[0], cfg.align.n[0])
    ar_result = run_page(model, doc, RunMode.AR, NoiseSpec(seed=cfg.seed), default_params)
    ar_metrics = page_metrics(ar_result, lat, cfg.context_tokens)
    for noise in cfg.noise_grid():
        quality = draft_quality_score(run_pipeline(doc, noise, vocab)[1], doc)
        for mode, tau, n in cfg.run_variants():
            rec = RunRecord(doc.doc_id, mode, tau, n, noise, draft_quality=quality)
            try:
                if mode is RunMode.AR:
                    result, metrics = ar_result, ar_metrics
                else:
                    result = run_page(model, doc, mode, noise, cfg.align_params(tau, n), vocab=vocab)
                    metrics = page_metrics(result, lat, cfg.context_tokens)
                rec.result, rec.metrics = result, metrics
                rec.sr_decode, rec.sr_e2e = speedup(ar_metrics, metrics)
                outcome.timings.append(
                    {"doc_id": doc.doc_id, "mode": mode.value, "tau": tau, "n": n,
                     "sub_rate": noise.sub_rate, "del_rate": noise.del_rate, "jitter": noise.jitter,
                     **{f"measured_{k}": v for k, v in result.timings.items()}}
                )
            except Exception as exc:
                log.warning("run failed: %s %s tau=%s n=%s: %s", doc.doc_id, mode.value, tau, n, exc)
                rec.error = f"{type(exc).__name__}: {exc}"
            outcome.records.append(rec)
    return outcome


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    timings: list[dict]

    @property
    def failures(self) -> list[RunRecord]:
        return [r for r in self.records if not r.ok]


def run_experiment(
    cfg: ExperimentConfig, vocab: Vocabulary | None = None, jobs: int = 1, base: Path | None = None
) -> ExperimentResult:
    vocab = vocab or Vocabulary.builtin()
    docs = cfg.build_documents(vocab, base)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda d: run_document(cfg, d, vocab, base), docs))
    else:
        outcomes = [run_document(cfg, d, vocab, base) for d in docs]
    # pool.map keeps submission order, so the reduction is independent of completion order
    records = [r for o in outcomes for r in o.records]
    timings = [t for o in outcomes for t in o.timings]
    return ExperimentResult(records, timings)


def render_csv(records: list[RunRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        if rec.ok:
            writer.writerow(rec.csv_row())
    return buf.getvalue()


def render_jsonl(rows: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def summary_groups(records: list[RunRecord]) -> dict[tuple, list[RunRecord]]:
    groups: dict[tuple, list[RunRecord]] = {}
    for rec in records:
        if not rec.ok:
            continue
        key = (rec.mode, rec.tau, rec.n, rec.noise.sub_rate, rec.noise.del_rate, rec.noise.jitter)
        groups.setdefault(key, []).append(rec)
    return groups


def render_markdown(records: list[RunRecord]) -> str:
    """One row per (mode, tau, n, noise). Speedups are ratios of summed modeled times."""
    lines = [
        "| Method | tau | n | sub_rate | del_rate | jitter | docs | AAL | tokens/step | SR_decode | SR_e2e | draft quality |",
        "|---|---|---|---|---|---|---|---|---|---|---|---|",
    ]
    for (mode, tau, n, sub, dele, jit), recs in summary_groups(records).items():
        aal = sum(r.metrics.aal for r in recs) / len(recs)
        tps = sum(r.metrics.tokens_per_step for r in recs) / len(recs)
        # sr = ar_time / spec_time, so ar_time = spec_time * sr
        ar_dec = sum(r.metrics.modeled_decode_time * r.sr_decode for r in recs)
        ar_full = sum(r.metrics.modeled_full_time * r.sr_e2e for r in recs)
        sr_dec = ar_dec / sum(r.metrics.modeled_decode_time for r in recs)
        sr_e2e = ar_full / sum(r.metrics.modeled_full_time for r in recs)
        quality = sum(r.draft_quality for r in recs) / len(recs)
        lines.append(
            f"| {_METHOD_NAMES[mode]} | {'-' if tau is None else f'{tau:g}'} | {'-' if n is None else n} "
            f"| {sub:g} | {dele:g} | {jit} | {len(recs)} | {aal:.2f} | {tps:.2f} "
            f"| {sr_dec:.2f}x | {sr_e2e:.2f}x | {quality:.3f} |"
        )
    return "\n".join(lines) + "\n"


_METHOD_NAMES = {
    RunMode.AR: "Baseline (AR)",
    RunMode.PAGE_ONLY: "Page-level spec. decoding only",
    RunMode.HIERARCHICAL: "Hierarchical spec. decoding",
}


def write_reports(result: ExperimentResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "runs": out / "runs.jsonl",
        "csv": out / "results.csv",
        "summary": out / "summary.md",
        "timings": out / "timings.jsonl",
    }
    paths["runs"].write_text(render_jsonl([r.to_json() for r in result.records]), encoding="utf-8")
    paths["csv"].write_text(render_csv(result.records), encoding="utf-8")
    paths["summary"].write_text(render_markdown(result.records), encoding="utf-8")
    paths["timings"].write_text(render_jsonl(result.timings), encoding="utf-8")
    return paths
