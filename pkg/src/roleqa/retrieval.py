"""Coarse top-n retrieval: an Okapi BM25 inverted index plus an imported-ranking path.

Scoring for a document D and query Q (unique query terms):

    score(D, Q) = sum_t idf(t) * tf(t, D) * (k1 + 1) / (tf(t, D) + k1 * (1 - b + b * |D| / avgdl))
    idf(t)      = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from roleqa.core import Document, Question, RoleQAError

_TOKEN_RE = re.compile(r"[^0-9a-z]+")

STOPWORDS = frozenset(
    """a an and are as at be by for from has he in is it its of on or that the
    to was were will with who what when where which how did do does""".split()
)


class CorpusError(RoleQAError):
    """Corpus could not be indexed."""


class RetrievalError(RoleQAError):
    pass


def _light_stem(tok: str) -> str:
    # plural and -ing/-ed stripping only; short tokens are left alone
    if len(tok) <= 3:
        return tok
    if tok.endswith("ies"):
        return tok[:-3] + "y"
    if tok.endswith("sses"):
        return tok[:-2]
    if tok.endswith(("xes", "zes", "ches", "shes")):
        return tok[:-2]
    if tok.endswith("s") and not tok.endswith(("ss", "us")):
        return tok[:-1]
    if tok.endswith("ing") and len(tok) > 5:
        return tok[:-3]
    if tok.endswith("ed") and len(tok) > 4:
        return tok[:-2]
    return tok


def tokenize(text: str, *, stopwords: bool = False, stem: bool = False) -> list[str]:
    toks = [t for t in _TOKEN_RE.split(text.lower()) if t]
    if stopwords:
        toks = [t for t in toks if t not in STOPWORDS]
    if stem:
        toks = [_light_stem(t) for t in toks]
    return toks


@dataclass(frozen=True)
class RetrievalConfig:
    n: int = 100
    k1: float = 1.2
    b: float = 0.75
    stopwords: bool = False
    stem: bool = False
    external_scores_path: str | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("retrieval n must be >= 1")
        if self.k1 <= 0:
            raise ValueError("k1 must be > 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@dataclass(frozen=True)
class CorpusIndex:
    postings: dict[str, tuple[tuple[str, int], ...]]
    doc_lengths: dict[str, int]
    doc_store: dict[str, Document]
    stopwords: bool = False
    stem: bool = False
    doc_count: int = field(init=False)
    avg_doc_length: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "doc_count", len(self.doc_store))
        total = sum(self.doc_lengths.values())
        object.__setattr__(self, "avg_doc_length", total / self.doc_count if self.doc_count else 0.0)

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text, stopwords=self.stopwords, stem=self.stem)

    def to_dict(self) -> dict:
        return {
            "format": "roleqa-bm25/1",
            "stopwords": self.stopwords,
            "stem": self.stem,
            "documents": [
                {"id": d.doc_id, "title": d.title, "text": d.text} for d in self.doc_store.values()
            ],
            "doc_lengths": self.doc_lengths,
            "postings": {t: [list(p) for p in ps] for t, ps in self.postings.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> CorpusIndex:
        if data.get("format") != "roleqa-bm25/1":
            raise CorpusError(f"unsupported index format {data.get('format')!r}")
        store = {d["id"]: Document(d["id"], d.get("title", ""), d["text"]) for d in data["documents"]}
        postings = {t: tuple((doc, int(tf)) for doc, tf in ps) for t, ps in data["postings"].items()}
        return cls(postings, dict(data["doc_lengths"]), store, data["stopwords"], data["stem"])


def build_index(corpus: Iterable[tuple[str, str, str]], *, stopwords: bool = False,
                stem: bool = False) -> CorpusIndex:
    store: dict[str, Document] = {}
    lengths: dict[str, int] = {}
    postings: dict[str, list[tuple[str, int]]] = {}
    for doc_id, title, text in corpus:
        if doc_id in store:
            raise CorpusError(f"duplicate doc_id {doc_id!r}")
        store[doc_id] = Document(doc_id, title or "", text)
        toks = tokenize(text, stopwords=stopwords, stem=stem)
        lengths[doc_id] = len(toks)
        for term, tf in Counter(toks).items():
            postings.setdefault(term, []).append((doc_id, tf))
    if not store:
        raise CorpusError("corpus is empty")
    # sort so the index does not depend on stream order
    frozen = {t: tuple(sorted(ps)) for t, ps in sorted(postings.items())}
    ordered_store = {k: store[k] for k in sorted(store)}
    ordered_lengths = {k: lengths[k] for k in sorted(lengths)}
    return CorpusIndex(frozen, ordered_lengths, ordered_store, stopwords, stem)


def bm25_scores(index: CorpusIndex, query_text: str, k1: float = 1.2, b: float = 0.75) -> dict[str, float]:
    terms = index.tokenize(query_text)
    if not terms:
        raise RetrievalError("empty query after tokenization")
    n_docs = index.doc_count
    avgdl = index.avg_doc_length or 1.0
    scores: dict[str, float] = {}
    for term in dict.fromkeys(terms):
        plist = index.postings.get(term)
        if not plist:
            continue
        df = len(plist)
        idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
        for doc_id, tf in plist:
            norm = k1 * (1.0 - b + b * index.doc_lengths[doc_id] / avgdl)
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (k1 + 1.0) / (tf + norm)
    return scores


def retrieve(index: CorpusIndex, query_text: str, config: RetrievalConfig) -> list[Document]:
    """Top-n documents by BM25, ties on ascending doc_id, zero scores dropped."""
    scores = bm25_scores(index, query_text, config.k1, config.b)
    ranked = sorted(((s, d) for d, s in scores.items() if s > 0.0), key=lambda x: (-x[0], x[1]))
    out = []
    for rank, (s, doc_id) in enumerate(ranked[: config.n]):
        src = index.doc_store[doc_id]
        out.append(Document(src.doc_id, src.title, src.text, retrieval_score=s, rank=rank))
    return out


class Bm25Retriever:
    def __init__(self, index: CorpusIndex, config: RetrievalConfig):
        self.index = index
        self.config = config

    def __call__(self, question: Question, query_text: str, n: int) -> list[Document]:
        cfg = self.config if n == self.config.n else RetrievalConfig(
            n, self.config.k1, self.config.b, self.config.stopwords, self.config.stem)
        return retrieve(self.index, query_text, cfg)


class ExternalRetriever:
    """Serves rankings loaded from a score file, keyed by question id."""

    def __init__(self, index: CorpusIndex, rankings: dict[str, list[tuple[str, float]]]):
        self.index = index
        self.rankings = rankings

    def __call__(self, question: Question, query_text: str, n: int) -> list[Document]:
        try:
            ranking = self.rankings[question.id]
        except KeyError:
            raise RetrievalError(f"no imported ranking for question {question.id!r}") from None
        out = []
        for rank, (doc_id, score) in enumerate(ranking[:n]):
            src = self.index.doc_store[doc_id]
            out.append(Document(src.doc_id, src.title, src.text, retrieval_score=score, rank=rank))
        return out


def import_external_scores(index: CorpusIndex, path) -> ExternalRetriever:
    rankings: dict[str, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                qid = str(rec["qid"])
                ranking = [(str(r["doc_id"]), float(r["score"])) for r in rec["ranking"]]
            except (ValueError, KeyError, TypeError) as exc:
                raise RetrievalError(f"{path}:{lineno}: malformed ranking record ({exc})") from None
            for doc_id, score in ranking:
                if doc_id not in index.doc_store:
                    raise RetrievalError(f"{path}:{lineno}: unknown doc_id {doc_id!r}")
                if not math.isfinite(score) or score < 0:
                    raise RetrievalError(f"{path}:{lineno}: invalid score for {doc_id!r}")
            rankings[qid] = ranking
    return ExternalRetriever(index, rankings)


def read_corpus(path) -> list[tuple[str, str, str]]:
    """Parse a JSON-lines corpus of {id, title, text} records."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rows.append((str(rec["id"]), rec.get("title") or "", rec["text"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusError(f"line {lineno}: malformed corpus record ({exc})") from None
    return rows


def save_index(index: CorpusIndex, path) -> None:
    Path(path).write_text(json.dumps(index.to_dict(), ensure_ascii=False), encoding="utf-8")


def load_index(path) -> CorpusIndex:
    return CorpusIndex.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
