"""File formats: datasets, traces, prompt stores (all UTF-8 JSON / JSON-lines)."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from roleqa.core import Document, Expansion, GoldAnswers, PromptSet, Question, RoleQAError, Score, Trace

PROMPT_STORE_FORMAT = "roleqa-prompts/1"


class FormatError(RoleQAError):
    pass


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
    return rows


def write_jsonl(path, rows) -> None:
    atomic_write_text(path, "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rows))


def read_dataset(path) -> list[tuple[Question, GoldAnswers]]:
    """JSON-lines ``{"id", "question", "answers": [...]}``."""
    out = []
    for i, rec in enumerate(read_jsonl(path), 1):
        try:
            out.append((Question(str(rec["id"]), rec["question"]), GoldAnswers(tuple(rec["answers"]))))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: record {i}: {exc}") from None
    return out


def _doc(d: Document) -> dict:
    return {"doc_id": d.doc_id, "title": d.title, "text": d.text, "retrieval_score": d.retrieval_score,
            "rank": d.rank}


def _undoc(d: dict) -> Document:
    return Document(d["doc_id"], d.get("title", ""), d["text"], float(d.get("retrieval_score", 0.0)),
                    int(d.get("rank", 0)))


def _exp(e: Expansion | None):
    return None if e is None else {"text": e.text, "source_prompt_version": e.source_prompt_version}


def _unexp(e) -> Expansion | None:
    return None if e is None else Expansion(e["text"], int(e.get("source_prompt_version", 0)))


def trace_to_dict(t: Trace, *, include_timing: bool = True) -> dict:
    return {
        "question_id": t.question_id,
        "expansion_candidates": [{"expansion": _exp(e), "score": s.value} for e, s in t.expansion_candidates],
        "chosen_expansion": _exp(t.chosen_expansion),
        "retrieved": [_doc(d) for d in t.retrieved],
        "reranked": [_doc(d) for d in t.reranked],
        "rerank_candidates": [{"docs": [d.doc_id for d in docs], "score": s.value}
                              for docs, s in t.rerank_candidates],
        "answer": t.answer,
        "prompt_version": t.prompt_version,
        "timing": dict(t.timing) if include_timing else {},
        "stages": list(t.stages),
        "window_calls": t.window_calls,
        "fallback_windows": t.fallback_windows,
        "warnings": list(t.warnings),
        "strategy": t.strategy,
        "error": t.error,
    }


def trace_from_dict(d: dict) -> Trace:
    retrieved = tuple(_undoc(x) for x in d.get("retrieved", []))
    by_id = {doc.doc_id: doc for doc in retrieved}
    cands = []
    for c in d.get("rerank_candidates", []):
        docs = tuple(by_id[i].with_rank(r) for r, i in enumerate(c["docs"]))
        cands.append((docs, Score(c["score"])))
    return Trace(
        question_id=str(d["question_id"]),
        expansion_candidates=tuple((_unexp(c["expansion"]), Score(c["score"]))
                                   for c in d.get("expansion_candidates", [])),
        chosen_expansion=_unexp(d.get("chosen_expansion")),
        retrieved=retrieved,
        reranked=tuple(_undoc(x) for x in d.get("reranked", [])),
        rerank_candidates=tuple(cands),
        answer=d.get("answer", ""),
        prompt_version=int(d.get("prompt_version", 0)),
        timing=dict(d.get("timing", {})),
        stages=tuple(d.get("stages", [])),
        window_calls=int(d.get("window_calls", 0)),
        fallback_windows=int(d.get("fallback_windows", 0)),
        warnings=tuple(d.get("warnings", [])),
        strategy=d.get("strategy", "sliding"),
        error=d.get("error"),
    )


def read_traces(path) -> list[Trace]:
    return [trace_from_dict(r) for r in read_jsonl(path)]


def prompt_store_dict(prompts: PromptSet, history=(), examples_done: int = 0) -> dict:
    return {
        "format": PROMPT_STORE_FORMAT,
        "version": prompts.version,
        "theta_e": prompts.theta_e,
        "theta_d": prompts.theta_d,
        "theta_a": prompts.theta_a,
        "history": list(history),
        "examples_done": examples_done,
    }


def write_prompt_store(path, prompts: PromptSet, history=(), examples_done: int = 0) -> None:
    atomic_write_text(path, json.dumps(prompt_store_dict(prompts, history, examples_done), ensure_ascii=False,
                                       indent=2) + "\n")


def read_prompt_store(path) -> dict:
    """Returns ``{"prompts": PromptSet, "history": [...], "examples_done": int}``."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        prompts = PromptSet(data["theta_e"], data["theta_d"], data["theta_a"], int(data.get("version", 0)))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"cannot read prompt store {path}: {exc}") from None
    return {"prompts": prompts, "history": list(data.get("history", [])),
            "examples_done": int(data.get("examples_done", 0))}
