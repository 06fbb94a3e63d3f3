"""Hierarchical speculative decoding for document parsing, over toy target models."""

from hsd.dsv import AlignParams, spec_decode
from hsd.hierarchy import RunMode, run_page
from hsd.models import NGramModel, ScoringContext, ScriptedModel
from hsd.pipeline import NoiseSpec, run_pipeline
from hsd.tokens import Vocabulary

__all__ = [
    "AlignParams",
    "NGramModel",
    "NoiseSpec",
    "RunMode",
    "ScoringContext",
    "ScriptedModel",
    "Vocabulary",
    "run_page",
    "run_pipeline",
    "spec_decode",
]
