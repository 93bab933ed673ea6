"""Role operations: expansion generator, window reranker, reader, evaluators and
the prompt-rewriting role used during training.

Each operation builds a ``RoleRequest``, sends it to the backend bound to that
role, and parses the samples. Generators raise ``StageError`` when the backend
fails; evaluators never raise and return ``Score(0.0)`` instead.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from roleqa.backends import Backend, BackendError, RoleRequest, RoleResponse
from roleqa.core import Document, Expansion, GoldAnswers, Question, Score, StageError

log = logging.getLogger(__name__)

RETRY_SEED_OFFSET = 7919

DEFAULT_PROMPTS = {
    "theta_e": (
        "You are a knowledgeable encyclopedia editor. Write a short background passage that "
        "explains the key facts needed to answer the question."
    ),
    "theta_d": (
        "You are a search relevance expert. Rank the passages by how likely each one is to contain "
        "the answer to the question. Reply only with the ranking, e.g. [2] > [1] > [3]."
    ),
    "theta_a": "Answer the question using the evidence. Reply with a short answer phrase only.",
}

EVALUATOR_PROMPTS = {
    "score_expansion": (
        "Rate from 0 to 1 how relevant and logically consistent the background passage is for "
        "answering the question. Reply with a single number."
    ),
    "score_reranking": (
        "Rate from 0 to 1 how much the ranked passages help answer the question. Reply with a "
        "single number."
    ),
    "score_answer": (
        "Rate from 0 to 1 how likely a reader given this evidence would produce the given answer. "
        "Reply with a single number."
    ),
}

UPDATE_PROMPT = (
    "You improve instructions for a language model playing the role: {role}. You are given the "
    "current instruction, what it produced, and the desired target. Rewrite the instruction so its "
    "output moves toward the target. Reply with the rewritten instruction only."
)

POSTERIOR_EXPAND_NOTE = "Revise the prior background passage minimally so it supports the known answer."

DEFAULT_TEMPERATURES = {
    "expand": 0.7,
    "rank_window": 0.7,
    "answer": 0.0,
    "score_expansion": 0.0,
    "score_reranking": 0.0,
    "score_answer": 0.0,
    "propose_prompt": 0.7,
}


@dataclass
class RoleBindings:
    """Which backend serves each role kind, plus sampling settings."""

    backends: dict[str, Backend]
    temperatures: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TEMPERATURES))
    seed: int = 0
    max_window: int = 64
    doc_tokens: int = 120

    @classmethod
    def uniform(cls, backend: Backend, **kw) -> RoleBindings:
        from roleqa.backends import ROLE_KINDS

        return cls({k: backend for k in ROLE_KINDS}, **kw)

    def backend(self, kind: str) -> Backend:
        try:
            return self.backends[kind]
        except KeyError:
            raise StageError(kind, "no backend bound to this role") from None

    def temperature(self, kind: str) -> float:
        return self.temperatures.get(kind, DEFAULT_TEMPERATURES[kind])


def render_documents(docs: Sequence[Document], max_tokens: int | None = None) -> str:
    lines = []
    for i, d in enumerate(docs, 1):
        text = " ".join(d.text.split())
        if max_tokens is not None:
            words = text.split(" ")
            if len(words) > max_tokens:
                text = " ".join(words[:max_tokens])
        head = f"{d.title}. " if d.title else ""
        lines.append(f"[{i}] {head}{text}")
    return "\n".join(lines)


def render_evidence(items: Sequence[Expansion | Document]) -> str:
    lines = []
    for i, item in enumerate(items, 1):
        if isinstance(item, Expansion):
            lines.append(f"[{i}] {' '.join(item.text.split())}")
        else:
            head = f"{item.title}. " if item.title else ""
            lines.append(f"[{i}] {head}{' '.join(item.text.split())}")
    return "\n".join(lines)


def _call(backend: Backend, request: RoleRequest, stage: str) -> RoleResponse:
    try:
        resp = backend.complete(request)
    except BackendError as exc:
        raise StageError(stage, str(exc)) from exc
    if len(resp.samples) != request.sample_count:
        raise StageError(stage, f"backend returned {len(resp.samples)} samples, wanted {request.sample_count}")
    return resp


def generate_expansions(q: Question, theta_e: str, m: int, backend: Backend, *, temperature: float = 0.7,
                        seed: int = 0, prompt_version: int = 0,
                        posterior: Mapping[str, str] | None = None) -> list[Expansion]:
    """Sample ``m`` expansions. ``posterior`` adds gold-conditioned context
    (prior expansion, documents, answer) for posterior sampling."""
    if m < 1:
        raise ValueError("m must be >= 1")
    ctx = [("question", q.text)]
    if posterior:
        ctx += [(k, posterior[k]) for k in ("prior_expansion", "documents", "answer") if k in posterior]
    prompt = theta_e if not posterior else f"{theta_e}\n\n{POSTERIOR_EXPAND_NOTE}"
    req = RoleRequest("expand", prompt, tuple(ctx), temperature, m, seed)
    samples = [s.strip() for s in _call(backend, req, "expand").samples]
    empty = [i for i, s in enumerate(samples) if not s]
    if empty:
        retry = req.with_samples(len(empty)).with_seed(seed + RETRY_SEED_OFFSET)
        refill = [s.strip() for s in _call(backend, retry, "expand").samples]
        for i, s in zip(empty, refill):
            samples[i] = s
        dropped = sum(1 for s in samples if not s)
        if dropped:
            log.warning("dropped %d empty expansion(s) for question %s after retry", dropped, q.id)
    return [Expansion(s, prompt_version) for s in samples if s]


_RANK_SEQ = re.compile(r"\[\s*(\d+)\s*\](?:\s*>\s*\[\s*(\d+)\s*\])*")
_RANK_ITEM = re.compile(r"\[\s*(\d+)\s*\]")


def parse_ranking(text: str, size: int) -> list[int] | None:
    """Parse "[3] > [1] > [2]" into 0-based indices; None unless it is a permutation
    of ``range(size)``. Prose around the bracketed chain is ignored."""
    best = None
    for m in _RANK_SEQ.finditer(text):
        chain = [int(x) for x in _RANK_ITEM.findall(m.group(0))]
        if best is None or len(chain) > len(best):
            best = chain
    if best is None or sorted(best) != list(range(1, size + 1)):
        return None
    return [i - 1 for i in best]


def rank_window(q: Question, e: Expansion | None, window: Sequence[Document], theta_d: str,
                backend: Backend, *, temperature: float = 0.7, seed: int = 0, max_window: int = 64,
                doc_tokens: int = 120) -> tuple[list[Document], bool]:
    """Reorder one window. Returns ``(docs, fallback)``; on an unusable
    ranking the input order comes back with ``fallback=True``."""
    if not 1 <= len(window) <= max_window:
        raise ValueError(f"window length {len(window)} outside [1, {max_window}]")
    ctx = [("question", q.text)]
    if e is not None:
        ctx.append(("expansion", e.text))
    ctx += [("documents", render_documents(window, doc_tokens)), ("num_documents", str(len(window)))]
    req = RoleRequest("rank_window", theta_d, tuple(ctx), temperature, 1, seed)
    try:
        text = backend.complete(req).samples[0]
    except BackendError as exc:
        log.warning("rank_window backend failure, keeping input order: %s", exc)
        return list(window), True
    order = parse_ranking(text, len(window))
    if order is None:
        log.debug("unparseable ranking %r for window of %d", text, len(window))
        return list(window), True
    return [window[i] for i in order], False


def generate_answer(q: Question, evidence: Sequence[Expansion | Document], theta_a: str, backend: Backend, *,
                    temperature: float = 0.0, seed: int = 0) -> str:
    req = RoleRequest("answer", theta_a, (("question", q.text), ("evidence", render_evidence(evidence))),
                      temperature, 1, seed)
    answer = _call(backend, req, "answer").samples[0].strip()
    if not answer:
        answer = _call(backend, req.with_seed(seed + RETRY_SEED_OFFSET), "answer").samples[0].strip()
    if not answer:
        raise StageError("answer", f"empty answer for question {q.id} after retry")
    return answer


_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")


def parse_score(text: str) -> float | None:
    m = _NUMBER.search(text)
    return float(m.group(0)) if m else None


def _score(kind: str, ctx: list[tuple[str, str]], backend: Backend, temperature: float, seed: int) -> Score:
    req = RoleRequest(kind, EVALUATOR_PROMPTS[kind], tuple(ctx), temperature, 1, seed)
    for attempt in range(2):
        try:
            text = backend.complete(req).samples[0]
        except BackendError as exc:
            log.warning("%s backend failure: %s", kind, exc)
            return Score(0.0)
        value = parse_score(text)
        if value is not None:
            return Score(value)
        req = req.with_seed(seed + RETRY_SEED_OFFSET)
    log.warning("%s: unparseable evaluator output %r, scoring 0", kind, text)
    return Score(0.0)


def score_expansion(candidate: Expansion, q: Question, backend: Backend, *, role_prompt: str | None = None,
                    temperature: float = 0.0, seed: int = 0) -> Score:
    ctx = [("question", q.text), ("expansion", candidate.text)]
    if role_prompt is not None:
        ctx.append(("role_prompt", role_prompt))
    return _score("score_expansion", ctx, backend, temperature, seed)


def score_reranking(candidate_docs: Sequence[Document], q: Question, e: Expansion | None, backend: Backend, *,
                    role_prompt: str | None = None, temperature: float = 0.0, seed: int = 0) -> Score:
    ctx = [("question", q.text)]
    if e is not None:
        ctx.append(("expansion", e.text))
    ctx.append(("documents", render_documents(candidate_docs)))
    if role_prompt is not None:
        ctx.append(("role_prompt", role_prompt))
    return _score("score_reranking", ctx, backend, temperature, seed)


def score_answer(gold: GoldAnswers, q: Question, e: Expansion | None, docs: Sequence[Document],
                 backend: Backend, *, role_prompt: str | None = None, temperature: float = 0.0,
                 seed: int = 0) -> Score:
    """Likelihood-style score of the first gold answer given the generation inputs."""
    ctx = [("question", q.text)]
    if e is not None:
        ctx.append(("expansion", e.text))
    ctx += [("documents", render_documents(docs)), ("answer", gold.answers[0])]
    if role_prompt is not None:
        ctx.append(("role_prompt", role_prompt))
    return _score("score_answer", ctx, backend, temperature, seed)


ROLE_NAMES = {
    "answer": "answer generator (reader)",
    "rerank": "document reranker",
    "expand": "query expansion generator",
}


def propose_prompts(kind: str, context: Mapping[str, str], K: int, backend: Backend, *, current_prompt: str,
                    include_incumbent: bool = True, temperature: float = 0.7, seed: int = 0) -> list[str]:
    """Ask the update role for ``K`` rewrites of ``current_prompt``.

    ``context`` carries the prior outputs and target for this kind (keys from the
    ``propose_prompt`` schema). The incumbent is appended last when requested;
    on backend failure only the incumbent is returned.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    ctx = [("target_role", kind), ("current_prompt", current_prompt)] + list(context.items())
    req = RoleRequest("propose_prompt", UPDATE_PROMPT.format(role=ROLE_NAMES[kind]), tuple(ctx),
                      temperature, K, seed)
    try:
        samples = backend.complete(req).samples
    except BackendError as exc:
        log.warning("prompt proposal for %s failed, keeping incumbent: %s", kind, exc)
        return [current_prompt]
    out = [s.strip() for s in samples if s.strip()]
    if include_incumbent or not out:
        out.append(current_prompt)
    return out
