"""Capture adapter: runs titration plans against a model runtime and writes
ctxdrift trace directories (`manifest.json` + `trace.jsonl`)."""

from .capture import (
    DEFAULT_ATTENTION_CONVENTION,
    CaptureConfig,
    CaptureError,
    CaptureResult,
    Generation,
    NliScorer,
    Runtime,
    SemanticScorer,
    capture_run,
    load_dataset,
    load_plan,
    score_nli,
    score_semantics,
)

__all__ = [
    "DEFAULT_ATTENTION_CONVENTION",
    "CaptureConfig",
    "CaptureError",
    "CaptureResult",
    "Generation",
    "NliScorer",
    "Runtime",
    "SemanticScorer",
    "capture_run",
    "load_dataset",
    "load_plan",
    "score_nli",
    "score_semantics",
]
