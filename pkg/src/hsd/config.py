"""Experiment configuration: a JSON file validated into typed settings."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from hsd.docsim import ConfigError, Document, generate_document, load_document
from hsd.dsv import AlignParams
from hsd.hierarchy import RunMode
from hsd.metrics import LatencyModel
from hsd.models import NGramModel, ScriptedModel, TargetModel
from hsd.pipeline import NoiseSpec
from hsd.rng import substream
from hsd.tokens import Vocabulary, builtin_corpus


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


IntOrRange = Union[int, tuple[int, int]]


class CorpusConfig(_Strict):
    n_docs: int = Field(ge=0)
    n_regions: IntOrRange = (2, 4)
    region_len: tuple[int, int] = (20, 60)
    kind_mix: dict[str, float] = {"text": 0.6, "table": 0.25, "formula": 0.15}

    @field_validator("region_len")
    @classmethod
    def _len_range(cls, v):
        if v[0] < 1 or v[1] < v[0]:
            raise ValueError("region_len must be [lo, hi] with 1 <= lo <= hi")
        return v

    @field_validator("n_regions")
    @classmethod
    def _regions_range(cls, v):
        lo, hi = (v, v) if isinstance(v, int) else v
        if lo < 1 or hi < lo:
            raise ValueError("n_regions must be >= 1 (or a range [lo, hi])")
        return v


class ModelConfig(_Strict):
    kind: Literal["scripted", "ngram"] = "scripted"
    p_top: float = Field(0.9, gt=0.5, lt=1.0)
    resync_min: int = Field(3, ge=1)
    region_drift: float = Field(0.0, ge=0.0, le=1.0)
    order: int = Field(3, ge=1)
    delta: float = Field(0.1, gt=0.0)
    script_weight: float = Field(10.0, ge=0.0)
    train_files: list[str] = []


class AlignConfig(_Strict):
    n: list[int] = Field([3], min_length=1)
    tau: list[float] = Field([0.75], min_length=1)
    depth_cap: int = Field(16, ge=1)
    max_tree_tokens: int = Field(256, ge=1)
    max_len: int = Field(2048, ge=1)

    @field_validator("n")
    @classmethod
    def _n(cls, v):
        if any(x < 1 for x in v):
            raise ValueError("every n must be >= 1")
        return v

    @field_validator("tau")
    @classmethod
    def _tau(cls, v):
        if any(not 0.0 < x <= 1.0 for x in v):
            raise ValueError("every tau must lie in (0, 1]")
        return v


class NoiseConfig(_Strict):
    sub_rate: list[float] = Field([0.0], min_length=1)
    del_rate: list[float] = Field([0.0], min_length=1)
    jitter: list[int] = Field([0], min_length=1)
    split_merge_rate: float = Field(0.0, ge=0.0, le=1.0)
    drafts_per_region: int = Field(1, ge=1)

    @field_validator("sub_rate", "del_rate")
    @classmethod
    def _rates(cls, v):
        if any(not 0.0 <= x <= 1.0 for x in v):
            raise ValueError("rates must lie in [0, 1]")
        return v

    @field_validator("jitter")
    @classmethod
    def _jitter(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("jitter must be >= 0")
        return v


class LatencyConfig(_Strict):
    pipeline_page_cost: float = Field(2.0, ge=0)
    prefill_base: float = Field(8.0, ge=0)
    prefill_per_token: float = Field(0.01, ge=0)
    step_base: float = Field(1.0, gt=0)
    step_per_token: float = Field(0.01, ge=0)


class Variant(_Strict):
    mode: RunMode
    tau: Optional[float] = Field(None, gt=0.0, le=1.0)
    n: Optional[int] = Field(None, ge=1)


class ExperimentConfig(_Strict):
    seed: int
    corpus: Optional[CorpusConfig] = None
    documents: Optional[list[str]] = None
    model: ModelConfig = ModelConfig()
    align: AlignConfig = AlignConfig()
    noise: NoiseConfig = NoiseConfig()
    modes: list[RunMode] = Field([RunMode.AR, RunMode.PAGE_ONLY, RunMode.HIERARCHICAL], min_length=1)
    variants: Optional[list[Variant]] = Field(None, min_length=1)
    latency: LatencyConfig = LatencyConfig()
    context_tokens: int = Field(256, ge=0)
    out: str = "hsd_out"

    @model_validator(mode="after")
    def _source(self):
        if (self.corpus is None) == (self.documents is None):
            raise ValueError("exactly one of 'corpus' or 'documents' must be given")
        return self

    # -- derived objects --------------------------------------------------

    def run_variants(self) -> list[tuple[RunMode, float | None, int | None]]:
        """(mode, tau, n) triples; AR ignores tau and n and appears once."""
        if self.variants is not None:
            out = []
            for v in self.variants:
                if v.mode is RunMode.AR:
                    out.append((RunMode.AR, None, None))
                else:
                    out.append((v.mode, v.tau if v.tau is not None else self.align.tau[0],
                                v.n if v.n is not None else self.align.n[0]))
            return out
        out = []
        for mode in self.modes:
            if mode is RunMode.AR:
                out.append((RunMode.AR, None, None))
            else:
                out += [(mode, tau, n) for tau in self.align.tau for n in self.align.n]
        return out

    def noise_grid(self) -> list[NoiseSpec]:
        return [
            NoiseSpec(sub, dele, jit, self.noise.split_merge_rate, self.seed, self.noise.drafts_per_region)
            for sub in self.noise.sub_rate
            for dele in self.noise.del_rate
            for jit in self.noise.jitter
        ]

    def align_params(self, tau: float, n: int) -> AlignParams:
        return AlignParams(n=n, tau=tau, depth_cap=self.align.depth_cap,
                           max_tree_tokens=self.align.max_tree_tokens, max_len=self.align.max_len)

    def latency_model(self) -> LatencyModel:
        return LatencyModel(**self.latency.model_dump())

    def build_documents(self, vocab: Vocabulary, base: Path | None = None) -> list[Document]:
        if self.corpus is not None:
            return generate_corpus(self.seed, self.corpus, vocab)
        paths: list[Path] = []
        for entry in self.documents:
            p = Path(entry)
            if base is not None and not p.is_absolute():
                p = base / p
            paths += sorted(p.glob("*.json")) if p.is_dir() else [p]
        return [load_document(p, vocab) for p in paths]

    def build_model(self, doc: Document, vocab: Vocabulary, base: Path | None = None) -> TargetModel:
        m = self.model
        if m.kind == "scripted":
            model = ScriptedModel(len(vocab), p_top=m.p_top, resync_min=m.resync_min)
        else:
            model = NGramModel(len(vocab), order=m.order, delta=m.delta, script_weight=m.script_weight)
            model.train_text(_training_text(tuple(m.train_files), base), vocab)
        model.add_document(doc, region_drift=m.region_drift, seed=self.seed, vocab=vocab)
        return model


def _training_text(files: tuple[str, ...], base: Path | None) -> str:
    if not files:
        return builtin_corpus()
    parts = []
    for f in files:
        p = Path(f)
        if base is not None and not p.is_absolute():
            p = base / p
        parts.append(p.read_text(encoding="utf-8"))
    return "\n".join(parts)


def doc_name(seed: int, i: int) -> str:
    return f"doc_{seed:04d}_{i:03d}"


def generate_corpus(seed: int, corpus: CorpusConfig, vocab: Vocabulary) -> list[Document]:
    docs = []
    lo, hi = (corpus.n_regions, corpus.n_regions) if isinstance(corpus.n_regions, int) else corpus.n_regions
    for i in range(corpus.n_docs):
        doc_id = doc_name(seed, i)
        n_regions = int(substream(seed, "corpus-shape", doc_id).integers(lo, hi + 1))
        docs.append(generate_document(seed, n_regions, tuple(corpus.region_len), corpus.kind_mix, vocab, doc_id))
    return docs


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "\n".join(lines)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if isinstance(raw, dict) and "HSD_SEED" in os.environ:
        try:
            raw["seed"] = int(os.environ["HSD_SEED"])
        except ValueError:
            raise ConfigError("HSD_SEED must be an integer") from None
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from None
