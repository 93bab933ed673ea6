"""Sliding-window listwise reranking of n candidates down to k = w - l.

The window starts at the back of the retrieval order and moves toward the
front by ``l`` per step; the best ``w - l`` documents of every reordered window
are carried into the next one, so after the window anchored at position 0 the
global best ``w - l`` sit at the head of the list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from roleqa.core import Document, RoleQAError, Score, reindex

WindowRanker = Callable[[Sequence[Document]], Sequence[Document]]


class RerankError(RoleQAError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    w: int = 20
    l: int = 10  # noqa: E741

    def __post_init__(self):
        if self.w < 2:
            raise ValueError("window size w must be >= 2")
        if not 1 <= self.l < self.w:
            raise ValueError("step l must satisfy 1 <= l < w")

    @property
    def k(self) -> int:
        return self.w - self.l


def window_starts(n: int, cfg: WindowConfig) -> list[int]:
    """Start positions of the windows, back to front."""
    if n <= cfg.w:
        return [0]
    starts = []
    start = n - cfg.w
    while True:
        starts.append(start)
        if start == 0:
            return starts
        start = max(0, start - cfg.l)


def expected_window_calls(n: int, cfg: WindowConfig) -> int:
    return 1 if n <= cfg.w else math.ceil((n - cfg.w) / cfg.l) + 1


def _slide(docs: Sequence[Document], cfg: WindowConfig, window_ranker: WindowRanker) -> list[Document]:
    if not docs:
        raise RerankError("no candidates to rerank")
    order = list(docs)
    for start in window_starts(len(order), cfg):
        window = order[start:start + cfg.w]
        ranked = list(window_ranker(window))
        ids = {d.doc_id for d in window}
        if len(ranked) != len(window) or len(ids) != len(window) or {d.doc_id for d in ranked} != ids:
            raise RerankError("window ranker did not return a permutation of its window")
        order[start:start + cfg.w] = ranked
    return order


def sliding_window_order(docs: Sequence[Document], cfg: WindowConfig, window_ranker: WindowRanker) -> list[Document]:
    """Run every window and return the full reordered list (length n)."""
    return reindex(_slide(docs, cfg, window_ranker))


def sliding_window_rerank(docs: Sequence[Document], cfg: WindowConfig, window_ranker: WindowRanker) -> list[Document]:
    """Top ``min(k, n)`` documents after sliding-window reranking, ranks 0..k-1."""
    return reindex(_slide(docs, cfg, window_ranker)[: cfg.k])


def rerank_with_candidates(docs: Sequence[Document], cfg: WindowConfig, make_ranker: Callable[[int], WindowRanker],
                           evaluator: Callable[[Sequence[Document]], Score], c: int = 1):
    """Rerank ``c`` times (``make_ranker(i)`` gives the i-th sampled ranker), score
    each top-k list, and return ``(best, candidates, best_index, full_orders)``.
    Ties go to the lowest candidate index."""
    if c < 1:
        raise ValueError("c must be >= 1")
    candidates: list[tuple[list[Document], Score]] = []
    orders = []
    for i in range(c):
        full = sliding_window_order(docs, cfg, make_ranker(i))
        top = full[: cfg.k]
        orders.append(full)
        candidates.append((top, evaluator(top)))
    best_index = max(range(c), key=lambda i: (candidates[i][1].value, -i))
    return candidates[best_index][0], candidates, best_index, orders
