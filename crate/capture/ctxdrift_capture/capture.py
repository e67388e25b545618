"""Plan execution, scorer channels and trace writing."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Union

log = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
RECORDS_FILE = "trace.jsonl"
REFERENCE_DELIMITER = ";"
NLI_LABELS = ("entailment", "neutral", "contradiction")
TRACK_ORDER = ("relevant", "irrelevant")
DEFAULT_ATTENTION_CONVENTION = (
    "layer=last; heads=mean; query=last token; positions=prompt+generation; captured=post-generation"
)


class CaptureError(Exception):
    """Raised when a capture cannot start or its inputs are invalid."""


@dataclass(frozen=True)
class Generation:
    answer: str
    hidden: Sequence[float]
    attention: Sequence[float]


class Runtime(Protocol):
    """A loaded model that answers prompts and exposes its internals."""

    hidden_dim: int

    def generate(self, prompt: str, *, max_new_tokens: int, temperature: float, seed: int) -> Generation: ...


class SemanticScorer(Protocol):
    def score(self, answer: str, reference: str) -> float: ...


class NliScorer(Protocol):
    def label(self, premise: str, hypothesis: str) -> str: ...


@dataclass
class CaptureConfig:
    model_id: str
    max_new_tokens: int = 64
    temperature: float = 0.0
    seed: int = 0
    attention_convention: str = DEFAULT_ATTENTION_CONVENTION
    semantic_scorer: Optional[str] = None
    nli_scorer: Optional[str] = None
    batch_size: int = 1
    epsilon_pad: float = 1e-12
    created_at: Optional[str] = None

    def validate(self) -> None:
        if not self.model_id:
            raise CaptureError("model_id must not be empty")
        if self.max_new_tokens < 1:
            raise CaptureError("max_new_tokens must be >= 1")
        if not (self.temperature >= 0.0 and math.isfinite(self.temperature)):
            raise CaptureError("temperature must be a finite non-negative number")
        if self.batch_size < 1:
            raise CaptureError("batch_size must be >= 1")
        if not (self.epsilon_pad > 0.0 and math.isfinite(self.epsilon_pad)):
            raise CaptureError("epsilon_pad must be a positive finite number")
        if not self.attention_convention:
            raise CaptureError("attention_convention must not be empty")


@dataclass
class CaptureResult:
    out_dir: Path
    records: int
    skipped: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.skipped)


@dataclass(frozen=True)
class _Question:
    id: str
    references: List[str]


def load_plan(path: Union[str, Path]) -> List[dict]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CaptureError(f"{path}: line {n}: {e}") from e
            missing = {"question_id", "track", "round", "prompt"} - rec.keys()
            if missing:
                raise CaptureError(f"{path}: line {n}: missing {sorted(missing)}")
            if rec["track"] not in TRACK_ORDER:
                raise CaptureError(f"{path}: line {n}: unknown track {rec['track']!r}")
            if not isinstance(rec["round"], int) or rec["round"] < 0:
                raise CaptureError(f"{path}: line {n}: round must be a non-negative integer")
            out.append(rec)
    if not out:
        raise CaptureError(f"{path}: plan is empty")
    return out


def load_dataset(path: Union[str, Path]) -> Dict[str, _Question]:
    """Reads the dataset CSV (or JSON array) into id -> references, best answer first."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        rows = json.loads(path.read_text(encoding="utf-8"))
    else:
        with path.open(encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
    out: Dict[str, _Question] = {}
    for row in rows:
        qid = (row.get("id") or "").strip()
        best = (row.get("best_answer") or "").strip()
        if not qid or not best:
            raise CaptureError(f"{path}: row without id or best_answer")
        raw = row.get("references") or []
        if isinstance(raw, str):
            raw = raw.split(REFERENCE_DELIMITER)
        refs = [r.strip() for r in raw if r.strip()]
        if best not in refs:
            refs.insert(0, best)
        out[qid] = _Question(qid, refs)
    return out


def score_semantics(
    answer: str, references: Iterable[str], scorer: Optional[SemanticScorer]
) -> Optional[Dict[str, float]]:
    """Similarity in [0, 1] per reference; None when the channel must be omitted."""
    if scorer is None or not answer.strip():
        return None
    out = {}
    try:
        for ref in references:
            s = float(scorer.score(answer, ref))
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"score {s} outside [0, 1]")
            out[ref] = s
    except Exception as e:  # scorer failures omit the channel
        log.warning("semantic scorer failed: %s", e)
        return None
    return out


def score_nli(
    answer: str, references: Iterable[str], scorer: Optional[NliScorer]
) -> Optional[Dict[str, str]]:
    """One NLI label per reference with the answer as premise; None when omitted."""
    if scorer is None or not answer.strip():
        return None
    out = {}
    try:
        for ref in references:
            label = str(scorer.label(answer, ref)).lower()
            if label not in NLI_LABELS:
                raise ValueError(f"unknown label {label!r}")
            out[ref] = label
    except Exception as e:
        log.warning("nli scorer failed: %s", e)
        return None
    return out


def renormalize(attention: Sequence[float]) -> List[float]:
    values = [float(v) for v in attention]
    if not values or any(not math.isfinite(v) or v < 0.0 for v in values):
        raise ValueError("attention must be non-empty, finite and non-negative")
    total = math.fsum(values)
    if total <= 0.0:
        raise ValueError("attention has zero mass")
    return [v / total for v in values]


def _record(rec: Mapping, gen: Generation, hidden_dim: int, question: _Question, semantic, nli):
    hidden = [float(v) for v in gen.hidden]
    if len(hidden) != hidden_dim:
        raise ValueError(f"hidden length {len(hidden)} does not match hidden_dim {hidden_dim}")
    if any(not math.isfinite(v) for v in hidden):
        raise ValueError("hidden contains a non-finite value")
    scorers = {}
    sem = score_semantics(gen.answer, question.references, semantic)
    if sem is not None:
        scorers["semantic_scores"] = sem
    labels = score_nli(gen.answer, question.references, nli)
    if labels is not None:
        scorers["nli_labels"] = labels
    return {
        "question_id": rec["question_id"],
        "track": rec["track"],
        "round": rec["round"],
        "context_ids": list(range(1, rec["round"] + 1)),
        "answer": gen.answer,
        "hidden": hidden,
        "attention": renormalize(gen.attention),
        "scorers": scorers,
    }


def capture_run(
    plan: Union[str, Path],
    dataset: Union[str, Path],
    config: CaptureConfig,
    out_dir: Union[str, Path],
    runtime: Union[Runtime, Callable[[CaptureConfig], Runtime]],
    semantic: Optional[SemanticScorer] = None,
    nli: Optional[NliScorer] = None,
) -> CaptureResult:
    """Executes every plan record and writes a trace directory.

    `runtime` is either a loaded runtime or a factory called with `config`;
    a factory failure aborts before anything is written. A failed record is
    skipped and logged, which leaves the trace partial.
    """
    config.validate()
    records = load_plan(plan)
    questions = load_dataset(dataset)
    unknown = sorted({r["question_id"] for r in records} - questions.keys())
    if unknown:
        raise CaptureError(f"plan references questions missing from the dataset: {unknown}")
    out_dir = Path(out_dir)
    if (out_dir / MANIFEST_FILE).exists():
        raise CaptureError(f"{out_dir} already holds a trace")

    if callable(runtime) and not hasattr(runtime, "generate"):
        try:
            runtime = runtime(config)
        except Exception as e:
            raise CaptureError(f"model load failed: {e}") from e
    hidden_dim = int(runtime.hidden_dim)
    if hidden_dim < 1:
        raise CaptureError("runtime reports hidden_dim < 1")

    result = CaptureResult(out_dir=out_dir, records=0)
    if semantic is None:
        result.warnings.append("no semantic scorer: semantic channel omitted")
    if nli is None:
        result.warnings.append("no nli scorer: nli channel omitted")

    lines = []
    for rec in records:
        key = f"({rec['question_id']}, {rec['track']}, round {rec['round']})"
        q = questions[rec["question_id"]]
        try:
            gen = runtime.generate(
                rec["prompt"],
                max_new_tokens=config.max_new_tokens,
                temperature=config.temperature,
                seed=config.seed,
            )
            line = _record(rec, gen, hidden_dim, q, semantic, nli)
        except Exception as e:
            log.warning("skipping %s: %s", key, e)
            result.skipped.append(key)
            continue
        if not gen.answer.strip():
            result.warnings.append(f"{key}: empty answer, scorer channels omitted")
        lines.append(json.dumps(line, ensure_ascii=False, allow_nan=False))

    tracks = [t for t in TRACK_ORDER if any(r["track"] == t for r in records)]
    question_ids = list(dict.fromkeys(r["question_id"] for r in records))
    created = config.created_at or datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    manifest = {
        "model_name": config.model_id,
        "hidden_dim": hidden_dim,
        "rounds": max(1, max(r["round"] for r in records)),
        "tracks": tracks,
        "question_ids": question_ids,
        "epsilon_pad": config.epsilon_pad,
        "created_at": created,
        "attention_convention": config.attention_convention,
    }
    os.makedirs(out_dir, exist_ok=True)
    (out_dir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    (out_dir / RECORDS_FILE).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    result.records = len(lines)
    return result
