"""Acceptance-length and speedup metrics over step traces, plus the latency model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from hsd.dsv import StepRecord


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    """Affine cost model in units of one single-token target forward.

    prefill_cost(tokens) = prefill_base + prefill_per_token * tokens
    step_cost(tokens)    = step_base + step_per_token * tokens
    """

    pipeline_page_cost: float = 2.0
    prefill_base: float = 8.0
    prefill_per_token: float = 0.01
    step_base: float = 1.0
    step_per_token: float = 0.01

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.step_cost(1) <= 0:
            raise ValueError("step_cost(1) must be positive")

    def prefill_cost(self, context_tokens: int) -> float:
        return self.prefill_base + self.prefill_per_token * context_tokens

    def step_cost(self, packed_tokens: int) -> float:
        return self.step_base + self.step_per_token * packed_tokens

    def scaled_prefill(self, factor: float) -> "LatencyModel":
        return LatencyModel(
            self.pipeline_page_cost,
            self.prefill_base * factor,
            self.prefill_per_token * factor,
            self.step_base,
            self.step_per_token,
        )


@dataclass(frozen=True)
class RunMetrics:
    aal: float
    tokens_per_step: float
    steps: int
    modeled_decode_time: float
    modeled_full_time: float
    measured_decode_time: float = 0.0
    measured_full_time: float = 0.0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def compute_aal(trace: Sequence[StepRecord]) -> float:
    if not trace:
        raise MetricError("AAL is undefined for an empty trace")
    return sum(r.a_i for r in trace) / len(trace)


def tokens_per_step(trace: Sequence[StepRecord]) -> float:
    if not trace:
        raise MetricError("tokens per step is undefined for an empty trace")
    return sum(r.a_i + r.bonus for r in trace) / len(trace)


def ar_trace(n_tokens: int) -> list[StepRecord]:
    """Plain autoregressive decoding as a trace: one single-token step per emitted token."""
    return [StepRecord(a_i=0, bonus=1, packed_size=1, candidates_found=0) for _ in range(n_tokens)]


def decode_cost(trace: Sequence[StepRecord], lat: LatencyModel) -> float:
    return sum(lat.step_cost(r.packed_size) for r in trace)


def batched_cost(traces: Sequence[Sequence[StepRecord]], lat: LatencyModel) -> float:
    """Cost of traces advanced in lockstep, one batched forward per round.

    Round r packs every still-running trace's r-th step into a single forward.
    """
    rounds = max((len(t) for t in traces), default=0)
    total = 0.0
    for r in range(rounds):
        tokens = sum(t[r].packed_size for t in traces if r < len(t))
        total += lat.step_cost(tokens)
    return total


def modeled_times(
    trace: Sequence[StepRecord],
    lat: LatencyModel,
    context_tokens: int,
    include_pipeline: bool,
    extra_decode: float = 0.0,
) -> tuple[float, float]:
    """(decode_time, full_time). ``extra_decode`` adds work outside ``trace`` such as Stage 1."""
    decode = decode_cost(trace, lat) + extra_decode
    if include_pipeline:
        decode += lat.pipeline_page_cost
    return decode, decode + lat.prefill_cost(context_tokens)


def speedup(baseline: RunMetrics, accelerated: RunMetrics, measured: bool = False) -> tuple[float, float]:
    if measured:
        num = (baseline.measured_decode_time, baseline.measured_full_time)
        den = (accelerated.measured_decode_time, accelerated.measured_full_time)
    else:
        num = (baseline.modeled_decode_time, baseline.modeled_full_time)
        den = (accelerated.modeled_decode_time, accelerated.modeled_full_time)
    if den[0] <= 0 or den[1] <= 0:
        raise MetricError("accelerated run has non-positive time")
    return num[0] / den[0], num[1] / den[1]
