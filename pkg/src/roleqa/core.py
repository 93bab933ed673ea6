"""Value types shared across retrieval, reranking, the pipeline and training.

Everything here is immutable after construction so traces and prompt sets can
be passed between worker threads without copying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any


class RoleQAError(Exception):
    """Base class for errors raised by this package."""


class StageError(RoleQAError):
    """A pipeline or training stage could not complete.

    ``partial`` optionally carries whatever was finished before the failure
    (a partial Trace for inference runs).
    """

    def __init__(self, stage: str, message: str, partial: Any = None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message
        self.partial = partial


@dataclass(frozen=True)
class Question:
    id: str
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError(f"question {self.id!r} has empty text")


@dataclass(frozen=True)
class GoldAnswers:
    answers: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "answers", tuple(self.answers))
        if not self.answers:
            raise ValueError("at least one gold answer is required")
        if any(a == "" for a in self.answers):
            raise ValueError("gold answers may not be empty strings")


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str
    retrieval_score: float = 0.0
    rank: int = 0

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"document {self.doc_id!r} has empty text")
        if not math.isfinite(self.retrieval_score):
            raise ValueError(f"document {self.doc_id!r} has non-finite score")

    def with_rank(self, rank: int) -> Document:
        return Document(self.doc_id, self.title, self.text, self.retrieval_score, rank)


def reindex(docs) -> list[Document]:
    """Return ``docs`` with ranks rewritten to 0..len-1 in list order."""
    return [d if d.rank == i else d.with_rank(i) for i, d in enumerate(docs)]


@dataclass(frozen=True)
class Expansion:
    text: str
    source_prompt_version: int = 0

    def __post_init__(self):
        if not self.text:
            raise ValueError("expansion text is empty")


@dataclass(frozen=True)
class Score:
    """Evaluator output. Any real input is clamped into [0, 1]; NaN maps to 0."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if math.isnan(v):
            v = 0.0
        object.__setattr__(self, "value", min(1.0, max(0.0, v)))

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class PromptSet:
    theta_e: str
    theta_d: str
    theta_a: str
    version: int = 0

    def __post_init__(self):
        for name in ("theta_e", "theta_d", "theta_a"):
            if not getattr(self, name):
                raise ValueError(f"prompt {name} is empty")
        if self.version < 0:
            raise ValueError("prompt version must be >= 0")

    def updated(self, theta_e: str, theta_d: str, theta_a: str) -> PromptSet:
        return PromptSet(theta_e, theta_d, theta_a, self.version + 1)

    def get(self, kind: str) -> str:
        return {"expand": self.theta_e, "rerank": self.theta_d, "answer": self.theta_a}[kind]


@dataclass(frozen=True)
class Trace:
    """Record of one inference run: every latent candidate, score and choice.

    Fields after ``question_id`` stay ``None``/empty for stages that did not
    run; ``error`` is set when the run aborted.
    """

    question_id: str
    expansion_candidates: tuple[tuple[Expansion, Score], ...] = ()
    chosen_expansion: Expansion | None = None
    retrieved: tuple[Document, ...] = ()
    reranked: tuple[Document, ...] = ()
    rerank_candidates: tuple[tuple[tuple[Document, ...], Score], ...] = ()
    answer: str = ""
    prompt_version: int = 0
    timing: dict[str, float] = field(default_factory=dict)
    stages: tuple[str, ...] = ()
    window_calls: int = 0
    fallback_windows: int = 0
    warnings: tuple[str, ...] = ()
    strategy: str = "sliding"
    error: str | None = None


def validate_trace(trace: Trace) -> bool:
    """True iff the trace is complete and internally consistent."""
    if trace.error is not None or not trace.answer.strip():
        return False
    if trace.chosen_expansion is None:
        return False
    if trace.chosen_expansion not in [e for e, _ in trace.expansion_candidates]:
        return False
    retrieved_ids = {d.doc_id for d in trace.retrieved}
    reranked_ids = [d.doc_id for d in trace.reranked]
    if len(set(reranked_ids)) != len(reranked_ids):
        return False
    if not set(reranked_ids) <= retrieved_ids:
        return False
    for docs in (trace.retrieved, trace.reranked):
        if [d.rank for d in docs] != list(range(len(docs))):
            return False
    if trace.reranked and tuple(trace.reranked) not in [tuple(c) for c, _ in trace.rerank_candidates]:
        return False
    return True
