"""Forward inference: expansion -> document selection -> answer.

Each latent step samples candidates, scores them with the matching evaluator
and keeps the argmax (lowest index on ties). The returned ``Trace`` keeps every
candidate and score so the selections can be audited afterwards.
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from roleqa import roles as R
from roleqa.core import Document, Expansion, PromptSet, Question, RoleQAError, Score, StageError, Trace, reindex
from roleqa.rerank import WindowConfig, rerank_with_candidates

log = logging.getLogger(__name__)

Retriever = Callable[[Question, str, int], list[Document]]

LOCATIONS = ("first", "last", "random")
STRATEGIES = ("sliding", "retrieval", "random")


@dataclass(frozen=True)
class PipelineConfig:
    m_expansions: int = 10
    n_retrieve: int = 100
    window: WindowConfig = field(default_factory=WindowConfig)
    rerank_candidates: int = 1
    insertion_location: str = "first"
    random_seed: int = 0
    strategy: str = "sliding"

    def __post_init__(self):
        if self.m_expansions < 1 or self.n_retrieve < 1 or self.rerank_candidates < 1:
            raise ValueError("pipeline counts must be >= 1")
        if self.insertion_location not in LOCATIONS:
            raise ValueError(f"insertion_location must be one of {LOCATIONS}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")


def argmax_first(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def expand_query(q: Question, prompts: PromptSet, cfg: PipelineConfig, roles: R.RoleBindings, *,
                 m: int | None = None) -> tuple[Expansion, list[tuple[Expansion, Score]]]:
    m = cfg.m_expansions if m is None else m
    cands = R.generate_expansions(q, prompts.theta_e, m, roles.backend("expand"),
                                  temperature=roles.temperature("expand"), seed=cfg.random_seed,
                                  prompt_version=prompts.version)
    if not cands:
        raise StageError("expand", f"no usable expansion for question {q.id}")
    scored = [(e, R.score_expansion(e, q, roles.backend("score_expansion"), role_prompt=prompts.theta_e,
                                    temperature=roles.temperature("score_expansion"), seed=cfg.random_seed))
              for e in cands]
    best = argmax_first([s.value for _, s in scored])
    return scored[best][0], scored


@dataclass
class DocumentSelection:
    docs: list[Document]
    retrieved: list[Document]
    candidates: list[tuple[list[Document], Score]]
    best_index: int
    full_order: list[Document]
    window_calls: int = 0
    fallback_windows: int = 0
    warnings: list[str] = field(default_factory=list)
    retrieve_ms: float = 0.0


def retrieval_query(q: Question, e: Expansion | None) -> str:
    return q.text if e is None else f"{q.text} {e.text}"


def make_window_ranker(q: Question, e: Expansion | None, theta_d: str, roles: R.RoleBindings, seed: int,
                       counter: dict | None = None):
    backend = roles.backend("rank_window")

    def ranker(window):
        docs, fallback = R.rank_window(q, e, window, theta_d, backend,
                                       temperature=roles.temperature("rank_window"), seed=seed,
                                       max_window=roles.max_window, doc_tokens=roles.doc_tokens)
        if counter is not None:
            counter["calls"] = counter.get("calls", 0) + 1
            counter["fallbacks"] = counter.get("fallbacks", 0) + int(fallback)
        return docs

    return ranker


def select_documents(q: Question, e: Expansion | None, prompts: PromptSet, cfg: PipelineConfig,
                     retriever: Retriever, roles: R.RoleBindings, *, c: int | None = None) -> DocumentSelection:
    """Coarse BM25/imported retrieval of ``n_retrieve`` candidates, then reranking to k."""
    c = cfg.rerank_candidates if c is None else c
    t0 = time.perf_counter()
    warnings: list[str] = []
    try:
        retrieved = retriever(q, retrieval_query(q, e), cfg.n_retrieve)
    except RoleQAError as exc:
        if "empty query" not in str(exc):
            raise StageError("retrieve", str(exc)) from exc
        retrieved = []
    retrieve_ms = (time.perf_counter() - t0) * 1000.0
    if not retrieved:
        warnings.append("empty retrieval: answering without documents")
        log.warning("question %s: empty retrieval, continuing closed-book", q.id)
        return DocumentSelection([], [], [], 0, [], warnings=warnings, retrieve_ms=retrieve_ms)

    evaluator_backend = roles.backend("score_reranking")

    def evaluator(docs):
        return R.score_reranking(docs, q, e, evaluator_backend, role_prompt=prompts.theta_d,
                                 temperature=roles.temperature("score_reranking"), seed=cfg.random_seed)

    k = cfg.window.k
    if cfg.strategy == "sliding":
        counter: dict = {}
        best, cands, best_i, orders = rerank_with_candidates(
            retrieved, cfg.window,
            lambda i: make_window_ranker(q, e, prompts.theta_d, roles, cfg.random_seed + i, counter),
            evaluator, c)
        return DocumentSelection(best, retrieved, cands, best_i, orders[best_i], counter.get("calls", 0),
                                 counter.get("fallbacks", 0), warnings, retrieve_ms)
    if cfg.strategy == "retrieval":
        order = list(retrieved)
    else:
        order = list(retrieved)
        random.Random(f"{cfg.random_seed}:{q.id}").shuffle(order)
    order = reindex(order)
    top = order[:k]
    return DocumentSelection(top, retrieved, [(top, evaluator(top))], 0, order, warnings=warnings,
                             retrieve_ms=retrieve_ms)


def assemble_evidence(e: Expansion | None, docs: Sequence[Document], location: str = "first",
                      seed: int | str = 0) -> list[Expansion | Document]:
    """Insert the expansion among the documents as an auxiliary passage."""
    items: list[Expansion | Document] = list(docs)
    if e is None:
        return items
    if location == "first":
        pos = 0
    elif location == "last":
        pos = len(items)
    elif location == "random":
        pos = random.Random(str(seed)).randint(0, len(items))
    else:
        raise ValueError(f"unknown insertion location {location!r}")
    items.insert(pos, e)
    return items


def run_pipeline(q: Question, prompts: PromptSet, cfg: PipelineConfig, retriever: Retriever,
                 roles: R.RoleBindings, *, record_timing: bool = True) -> Trace:
    """One full inference pass. On a stage failure raises ``StageError`` whose
    ``partial`` is a Trace with the completed stages and ``error`` set."""
    state: dict = {"question_id": q.id, "prompt_version": prompts.version, "strategy": cfg.strategy}
    timing: dict[str, float] = {}
    stages: list[str] = []

    def finish(**extra) -> Trace:
        return Trace(**state, timing=timing if record_timing else {}, stages=tuple(stages), **extra)

    try:
        t0 = time.perf_counter()
        chosen, scored = expand_query(q, prompts, cfg, roles)
        timing["expand"] = (time.perf_counter() - t0) * 1000.0
        stages.append("expand")
        state["expansion_candidates"] = tuple(scored)
        state["chosen_expansion"] = chosen

        t0 = time.perf_counter()
        sel = select_documents(q, chosen, prompts, cfg, retriever, roles)
        timing["retrieve"] = sel.retrieve_ms
        timing["rerank"] = (time.perf_counter() - t0) * 1000.0 - sel.retrieve_ms
        stages += ["retrieve", "rerank"]
        state.update(
            retrieved=tuple(sel.retrieved),
            reranked=tuple(sel.docs),
            rerank_candidates=tuple((tuple(d), s) for d, s in sel.candidates),
            window_calls=sel.window_calls,
            fallback_windows=sel.fallback_windows,
            warnings=tuple(sel.warnings),
        )

        t0 = time.perf_counter()
        evidence = assemble_evidence(chosen, sel.docs, cfg.insertion_location, f"{cfg.random_seed}:{q.id}")
        answer = R.generate_answer(q, evidence, prompts.theta_a, roles.backend("answer"),
                                   temperature=roles.temperature("answer"), seed=cfg.random_seed)
        timing["answer"] = (time.perf_counter() - t0) * 1000.0
        stages.append("answer")
    except StageError as exc:
        raise StageError(exc.stage, exc.message, partial=finish(error=str(exc))) from exc
    except RoleQAError as exc:
        raise StageError("pipeline", str(exc), partial=finish(error=str(exc))) from exc
    return finish(answer=answer)
