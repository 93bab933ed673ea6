"""LLM backends behind a single ``complete(request) -> RoleResponse`` call.

* ``MockBackend``     seeded, hash-based canned text; pure in its inputs.
* ``ScriptedBackend`` exact request -> response tables (JSON-lines).
* ``FunctionBackend`` wraps a Python callable; handy for test tables.
* ``OracleBackend``   knows gold answers; ranks and scores by answer presence.
* ``HttpBackend``     chat-completions style JSON endpoint.
* ``CachedBackend``   on-disk response cache around any backend.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol

from roleqa.core import RoleQAError

log = logging.getLogger(__name__)

ROLE_KINDS = (
    "expand",
    "rank_window",
    "answer",
    "score_expansion",
    "score_reranking",
    "score_answer",
    "propose_prompt",
)

# required / optional context keys per role kind
CONTEXT_SCHEMA: dict[str, tuple[frozenset, frozenset]] = {
    "expand": (frozenset({"question"}), frozenset({"prior_expansion", "documents", "answer"})),
    "rank_window": (frozenset({"question", "documents", "num_documents"}), frozenset({"expansion"})),
    "answer": (frozenset({"question", "evidence"}), frozenset()),
    "score_expansion": (frozenset({"question", "expansion"}), frozenset({"role_prompt"})),
    "score_reranking": (frozenset({"question", "documents"}), frozenset({"expansion", "role_prompt"})),
    "score_answer": (frozenset({"question", "answer", "documents"}), frozenset({"expansion", "role_prompt"})),
    "propose_prompt": (
        frozenset({"target_role", "current_prompt", "question"}),
        frozenset({"prior_expansion", "prior_documents", "prior_answer", "answer",
                   "posterior_documents", "posterior_expansion"}),
    ),
}


class BackendError(RoleQAError):
    pass


@dataclass(frozen=True)
class RoleRequest:
    role_kind: str
    prompt: str
    context_fields: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    sample_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.role_kind not in CONTEXT_SCHEMA:
            raise ValueError(f"unknown role kind {self.role_kind!r}")
        if isinstance(self.context_fields, Mapping):
            object.__setattr__(self, "context_fields", tuple(self.context_fields.items()))
        else:
            object.__setattr__(self, "context_fields", tuple(tuple(kv) for kv in self.context_fields))
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        required, optional = CONTEXT_SCHEMA[self.role_kind]
        keys = [k for k, _ in self.context_fields]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate context field")
        missing = required - set(keys)
        extra = set(keys) - required - optional
        if missing or extra:
            raise ValueError(
                f"{self.role_kind}: bad context fields (missing {sorted(missing)}, unexpected {sorted(extra)})")

    @property
    def context(self) -> dict[str, str]:
        return dict(self.context_fields)

    def with_seed(self, seed: int) -> RoleRequest:
        return replace(self, seed=seed)

    def with_samples(self, count: int) -> RoleRequest:
        return replace(self, sample_count=count)


@dataclass(frozen=True)
class RoleResponse:
    samples: tuple[str, ...]
    backend_id: str
    cached: bool = False

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))


class Backend(Protocol):
    backend_id: str

    def complete(self, request: RoleRequest) -> RoleResponse: ...


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=False, ensure_ascii=False, separators=(",", ":"))


def context_digest(context_fields) -> str:
    if isinstance(context_fields, Mapping):
        context_fields = list(context_fields.items())
    return hashlib.sha256(_canonical([list(kv) for kv in context_fields]).encode()).hexdigest()


def request_key(request: RoleRequest, backend_id: str) -> str:
    payload = [backend_id, request.role_kind, request.prompt, [list(kv) for kv in request.context_fields],
               repr(float(request.temperature)), request.sample_count, request.seed]
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()


def _hash_int(*parts) -> int:
    return int.from_bytes(hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()[:8], "big")


_DOC_LINE = re.compile(r"^\[(\d+)\]\s?(.*)$")


def parse_rendered_documents(text: str) -> list[tuple[int, str]]:
    """Split a rendered document block back into ``(index, line)`` pairs."""
    out = []
    for line in text.splitlines():
        m = _DOC_LINE.match(line.strip())
        if m:
            out.append((int(m.group(1)), m.group(2)))
    return out


def _words(text: str) -> set[str]:
    return {w for w in re.split(r"[^0-9a-z]+", text.lower()) if w}


_FILLER = ("history", "context", "records", "overview", "timeline", "details", "background", "sources")


class MockBackend:
    """Deterministic stand-in for an LLM; every output is a function of the request.

    ``answers`` maps question text to the canned answer the ``answer`` role returns.
    """

    def __init__(self, answers: Mapping[str, str] | None = None, default_answer: str = "unknown",
                 backend_id: str = "mock"):
        self.answers = dict(answers or {})
        self.default_answer = default_answer
        self.backend_id = backend_id

    def complete(self, request: RoleRequest) -> RoleResponse:
        ctx = request.context
        samples = [self._sample(request, ctx, j) for j in range(request.sample_count)]
        return RoleResponse(tuple(samples), self.backend_id)

    def _sample(self, req: RoleRequest, ctx: dict[str, str], j: int) -> str:
        h = _hash_int(req.role_kind, req.prompt, req.context_fields, req.seed, j)
        kind = req.role_kind
        if kind == "expand":
            base = ctx.get("prior_expansion") or f"Background on: {ctx['question']}"
            word = _FILLER[h % len(_FILLER)]
            extra = f" The answer relates to {ctx['answer']}." if "answer" in ctx else ""
            return f"{base} Further {word} note {h % 10007:04d}.{extra}"
        if kind == "rank_window":
            docs = parse_rendered_documents(ctx["documents"])
            query = _words(ctx["question"] + " " + ctx.get("expansion", ""))
            order = sorted(docs, key=lambda d: (-len(query & _words(d[1])),
                                                _hash_int(req.seed, d[1]) if req.temperature > 0 else d[0]))
            return " > ".join(f"[{i}]" for i, _ in order)
        if kind == "answer":
            return self.answers.get(ctx["question"], self.default_answer)
        if kind in ("score_expansion", "score_reranking", "score_answer"):
            v = (h % 1000) / 1000.0
            if kind == "score_answer":
                hay = (ctx.get("expansion", "") + " " + ctx["documents"]).lower()
                v = 0.5 * v + (0.5 if ctx["answer"].lower() in hay else 0.0)
            return f"{v:.3f}"
        if kind == "propose_prompt":
            word = _FILLER[h % len(_FILLER)]
            return f"{ctx['current_prompt']} Pay attention to {word} (revision {h % 997})."
        raise BackendError(f"mock backend cannot serve {kind!r}")


class ScriptedBackend:
    """Replays a request table keyed by ``(role_kind, context_digest)``.

    An entry whose ``context_digest`` is ``"*"`` or missing matches any context
    of that role kind. Repeated entries for the same key are served in order;
    the last one keeps being served once the queue is exhausted.
    """

    def __init__(self, entries=(), backend_id: str = "scripted"):
        self.backend_id = backend_id
        self._table: dict[tuple[str, str], list[tuple[str, ...]]] = {}
        self._served: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()
        for e in entries:
            self.add_entry(e)

    def add_entry(self, entry: dict) -> None:
        match = entry["match"]
        key = (match["role_kind"], match.get("context_digest") or "*")
        self._table.setdefault(key, []).append(tuple(entry["samples"]))

    def add(self, role_kind: str, context_fields, samples) -> None:
        digest = "*" if context_fields is None else context_digest(context_fields)
        self.add_entry({"match": {"role_kind": role_kind, "context_digest": digest}, "samples": list(samples)})

    @classmethod
    def from_file(cls, path, backend_id: str = "scripted") -> ScriptedBackend:
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        entries.append(json.loads(line))
                    except ValueError as exc:
                        raise BackendError(f"{path}:{lineno}: {exc}") from None
        return cls(entries, backend_id)

    def complete(self, request: RoleRequest) -> RoleResponse:
        key = (request.role_kind, context_digest(request.context_fields))
        if key not in self._table:
            key = (request.role_kind, "*")
        if key not in self._table:
            raise BackendError(f"no scripted response for {request.role_kind} {key[1][:12]}")
        with self._lock:
            queue = self._table[key]
            i = self._served.get(key, 0)
            self._served[key] = i + 1
            samples = queue[min(i, len(queue) - 1)]
        if len(samples) < request.sample_count:
            raise BackendError(
                f"scripted entry has {len(samples)} samples, request wants {request.sample_count}")
        return RoleResponse(samples[: request.sample_count], self.backend_id)


class FunctionBackend:
    """Backend whose output is ``fn(request)``: a string or a list of samples."""

    def __init__(self, fn: Callable[[RoleRequest], object], backend_id: str = "function"):
        self.fn = fn
        self.backend_id = backend_id

    def complete(self, request: RoleRequest) -> RoleResponse:
        out = self.fn(request)
        if isinstance(out, str):
            out = [out] * request.sample_count
        return RoleResponse(tuple(out), self.backend_id)


class OracleBackend:
    """Uses gold answers (keyed by question text) to rank and score.

    * rank_window: answer-bearing documents first, stable otherwise.
    * score_reranking: reciprocal rank of the first answer-bearing document.
    * score_answer: exact match between the reader's answer and the gold
      answer, when a reader backend is supplied; otherwise answer presence in
      the evidence.
    * score_expansion: 1.0 if the expansion mentions a gold answer.
    """

    def __init__(self, gold: Mapping[str, list[str]], reader: Backend | None = None,
                 reader_prompt: str = "Answer the question.", backend_id: str = "oracle"):
        self.gold = {q: list(a) for q, a in gold.items()}
        self.reader = reader
        self.reader_prompt = reader_prompt
        self.backend_id = backend_id

    def _hit(self, question: str, text: str) -> bool:
        from roleqa.metrics import normalize_answer

        hay = normalize_answer(text)
        return any(normalize_answer(a) and normalize_answer(a) in hay for a in self.gold.get(question, []))

    def complete(self, request: RoleRequest) -> RoleResponse:
        ctx = request.context
        q = ctx["question"]
        kind = request.role_kind
        if kind == "rank_window":
            docs = parse_rendered_documents(ctx["documents"])
            order = sorted(docs, key=lambda d: (not self._hit(q, d[1]), d[0]))
            out = " > ".join(f"[{i}]" for i, _ in order)
        elif kind == "score_reranking":
            docs = parse_rendered_documents(ctx["documents"])
            out = "0.0"
            for pos, (_, line) in enumerate(docs, 1):
                if self._hit(q, line):
                    out = f"{1.0 / pos:.6f}"
                    break
        elif kind == "score_expansion":
            out = "1.0" if self._hit(q, ctx["expansion"]) else "0.0"
        elif kind == "score_answer":
            if self.reader is not None:
                from roleqa.metrics import exact_match
                from roleqa.core import GoldAnswers

                evidence = "\n".join(x for x in (ctx.get("expansion", ""), ctx["documents"]) if x)
                reader_req = RoleRequest("answer", ctx.get("role_prompt", self.reader_prompt),
                                         (("question", q), ("evidence", evidence)), seed=request.seed)
                pred = self.reader.complete(reader_req).samples[0].strip()
                out = str(float(exact_match(pred, GoldAnswers((ctx["answer"],)))))
            else:
                out = "1.0" if self._hit(q, ctx.get("expansion", "") + " " + ctx["documents"]) else "0.0"
        elif kind == "answer":
            golds = self.gold.get(q)
            out = golds[0] if golds else "unknown"
        else:
            raise BackendError(f"oracle backend cannot serve {kind!r}")
        return RoleResponse((out,) * request.sample_count, self.backend_id)


class HttpBackend:
    """Chat-completions style endpoint.

    Wire format: POST ``{"model", "messages": [{"role", "content"}], "temperature", "n"}``,
    response ``{"choices": [{"message": {"content"}}]}``. The bearer token is read from
    the environment variable named by ``api_key_env`` at call time.
    """

    def __init__(self, endpoint: str, model: str, api_key_env: str | None = None,
                 retries: int = 2, timeout: float = 60.0, backoff: float = 1.0, session=None):
        import requests

        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.timeout = timeout
        self.backoff = backoff
        self.session = session or requests.Session()
        self.backend_id = f"http:{model}@{endpoint}"

    @staticmethod
    def render_messages(request: RoleRequest) -> list[dict]:
        body = "\n\n".join(f"{k}:\n{v}" for k, v in request.context_fields)
        return [{"role": "system", "content": request.prompt}, {"role": "user", "content": body}]

    def payload(self, request: RoleRequest) -> dict:
        return {"model": self.model, "messages": self.render_messages(request),
                "temperature": request.temperature, "n": request.sample_count}

    def complete(self, request: RoleRequest) -> RoleResponse:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            token = os.environ.get(self.api_key_env)
            if not token:
                raise BackendError(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.post(self.endpoint, json=self.payload(request), headers=headers,
                                         timeout=self.timeout)
                resp.raise_for_status()
                choices = resp.json()["choices"]
                samples = tuple(c["message"]["content"] or "" for c in choices)
                if len(samples) < request.sample_count:
                    raise BackendError(f"endpoint returned {len(samples)} of {request.sample_count} samples")
                return RoleResponse(samples[: request.sample_count], self.backend_id)
            except (requests.RequestException, ValueError, KeyError, TypeError, BackendError) as exc:
                last = exc
                log.warning("http backend attempt %d failed: %s", attempt + 1, exc)
                if attempt < self.retries:
                    time.sleep(self.backoff * (2 ** attempt))
        raise BackendError(f"http backend failed after {self.retries + 1} attempts: {last}")


def call_with_cache(request: RoleRequest, backend: Backend, cache_dir) -> RoleResponse:
    """Serve ``request`` from ``cache_dir`` when possible, else call and store.

    Cache I/O problems degrade to an uncached call.
    """
    key = request_key(request, backend.backend_id)
    path = Path(cache_dir) / key[:2] / f"{key}.json"
    try:
        if path.exists():
            data = json.loads(path.read_text(encoding="utf-8"))
            return RoleResponse(tuple(data["samples"]), data["backend_id"], cached=True)
    except (OSError, ValueError, KeyError) as exc:
        log.warning("cache read failed for %s: %s", path, exc)
    response = backend.complete(request)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"samples": list(response.samples), "backend_id": response.backend_id}, fh,
                      ensure_ascii=False)
        os.replace(tmp, path)
    except OSError as exc:
        log.warning("cache write failed for %s: %s", path, exc)
    return response


@dataclass
class CachedBackend:
    inner: Backend
    cache_dir: str

    @property
    def backend_id(self) -> str:
        return self.inner.backend_id

    def complete(self, request: RoleRequest) -> RoleResponse:
        return call_with_cache(request, self.inner, self.cache_dir)


@dataclass
class CountingBackend:
    """Wraps a backend and counts calls per role kind."""

    inner: Backend
    calls: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()

    @property
    def backend_id(self) -> str:
        return self.inner.backend_id

    def complete(self, request: RoleRequest) -> RoleResponse:
        with self._lock:
            self.calls[request.role_kind] = self.calls.get(request.role_kind, 0) + 1
        return self.inner.complete(request)
