"""Exact match, answer recall over document prefixes, and bootstrap EM."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from roleqa.core import Document, GoldAnswers, RoleQAError, Trace

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    text = text.lower().translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, gold: GoldAnswers | Sequence[str]) -> int:
    answers = gold.answers if isinstance(gold, GoldAnswers) else gold
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(a) for a in answers))


def answer_hit(docs: Sequence[Document | str], gold: GoldAnswers | Sequence[str]) -> int:
    """1 iff any normalized gold answer is a substring of the normalized, joined texts."""
    if not docs:
        return 0
    answers = gold.answers if isinstance(gold, GoldAnswers) else gold
    hay = normalize_answer(" ".join(d if isinstance(d, str) else d.text for d in docs))
    for a in answers:
        needle = normalize_answer(a)
        if needle and needle in hay:
            return 1
    return 0


class EvalError(RoleQAError):
    pass


@dataclass
class EvalReport:
    em: float
    em_bootstrap_mean: float
    em_bootstrap_rounds: int
    recall_at: dict[int, float]
    per_example: list[dict] = field(default_factory=list)
    fallback_rate: float = 0.0
    count: int = 0

    def to_dict(self) -> dict:
        return {
            "em": self.em,
            "em_bootstrap_mean": self.em_bootstrap_mean,
            "em_bootstrap_rounds": self.em_bootstrap_rounds,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "fallback_rate": self.fallback_rate,
            "count": self.count,
            "per_example": self.per_example,
        }

    def table(self, title: str | None = None) -> str:
        ks = sorted(self.recall_at)
        header = ["EM", "EM(bootstrap)"] + [f"Recall@{k}" for k in ks] + ["fallback"]
        row = [f"{100 * self.em:.2f}", f"{100 * self.em_bootstrap_mean:.2f}"]
        row += [f"{100 * self.recall_at[k]:.2f}" for k in ks] + [f"{100 * self.fallback_rate:.2f}"]
        widths = [max(len(h), len(r)) for h, r in zip(header, row)]
        lines = [title] if title else []
        lines.append("  ".join(h.rjust(w) for h, w in zip(header, widths)))
        lines.append("  ".join(r.rjust(w) for r, w in zip(row, widths)))
        return "\n".join(lines)


def bootstrap_mean(bits: Sequence[int], rounds: int, seed: int = 0) -> float:
    """Mean over ``rounds`` resamples (with replacement, same size) of the sample mean."""
    arr = np.asarray(bits, dtype=float)
    if rounds <= 0 or arr.size == 0:
        return float(arr.mean()) if arr.size else 0.0
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.size, size=(rounds, arr.size))
    return float(arr[idx].mean(axis=1).mean())


def evaluate(traces: Sequence[Trace], dataset: Mapping[str, GoldAnswers], ks: Sequence[int] = (2, 4, 8),
             bootstrap_rounds: int = 10, seed: int = 0, include_expansion: bool = False) -> EvalReport:
    """EM and recall@k over ``traces``; ``dataset`` maps question id to gold answers."""
    ks = sorted(set(ks))
    em_bits = []
    hits: dict[int, list[int]] = {k: [] for k in ks}
    per_example = []
    calls = fallbacks = 0
    for t in traces:
        if t.question_id not in dataset:
            raise EvalError(f"trace for unknown question id {t.question_id!r}")
        gold = dataset[t.question_id]
        bit = exact_match(t.answer, gold) if t.answer else 0
        em_bits.append(bit)
        row = {"question_id": t.question_id, "em": bit, "hits": {}}
        for k in ks:
            docs: list = list(t.reranked[:k])
            if include_expansion and t.chosen_expansion is not None:
                docs.insert(0, t.chosen_expansion.text)
            h = answer_hit(docs, gold)
            hits[k].append(h)
            row["hits"][str(k)] = h
        per_example.append(row)
        calls += t.window_calls
        fallbacks += t.fallback_windows
    n = len(em_bits)
    em = sum(em_bits) / n if n else 0.0
    return EvalReport(
        em=em,
        em_bootstrap_mean=bootstrap_mean(em_bits, bootstrap_rounds, seed),
        em_bootstrap_rounds=bootstrap_rounds,
        recall_at={k: (sum(v) / n if n else 0.0) for k, v in hits.items()},
        per_example=per_example,
        fallback_rate=fallbacks / calls if calls else 0.0,
        count=n,
    )
