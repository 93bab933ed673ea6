import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from roleqa.backends import (BackendError, CachedBackend, CountingBackend, HttpBackend, MockBackend, RoleRequest,
                             ScriptedBackend, call_with_cache, context_digest)


def req(kind="expand", prompt="p", seed=0, n=1, **ctx):
    ctx = ctx or {"question": "who won"}
    return RoleRequest(kind, prompt, tuple(ctx.items()), 0.7, n, seed)


def test_request_schema_enforced():
    with pytest.raises(ValueError):
        RoleRequest("expand", "p", (("documents", "x"),))
    with pytest.raises(ValueError):
        RoleRequest("expand", "p", (("question", "q"), ("bogus", "x")))
    with pytest.raises(ValueError):
        RoleRequest("nope", "p", ())
    with pytest.raises(ValueError):
        RoleRequest("expand", "p", (("question", "q"),), sample_count=0)


def test_mock_is_pure():
    m = MockBackend()
    a = m.complete(req(seed=7, n=3))
    b = MockBackend().complete(req(seed=7, n=3))
    assert a == b
    assert len(set(a.samples)) == 3
    assert m.complete(req(seed=8, n=3)) != a


def test_scripted_exact_and_wildcard():
    s = ScriptedBackend()
    s.add("expand", {"question": "who won"}, ["exact"])
    s.add("expand", None, ["anything"])
    assert s.complete(req()).samples == ("exact",)
    assert s.complete(req(question="other")).samples == ("anything",)
    with pytest.raises(BackendError):
        s.complete(req(kind="answer", question="x", evidence="y"))


def test_scripted_queue_and_file(tmp_path):
    digest = context_digest({"question": "who won"})
    path = tmp_path / "s.jsonl"
    rows = [{"match": {"role_kind": "expand", "context_digest": digest}, "samples": ["first"]},
            {"match": {"role_kind": "expand", "context_digest": digest}, "samples": ["second"]}]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    s = ScriptedBackend.from_file(path)
    assert [s.complete(req()).samples[0] for _ in range(3)] == ["first", "second", "second"]


def test_cache_hit_and_key(tmp_path):
    inner = CountingBackend(MockBackend())
    first = call_with_cache(req(seed=1), inner, tmp_path)
    second = call_with_cache(req(seed=1), inner, tmp_path)
    assert not first.cached and second.cached
    assert first.samples == second.samples
    assert inner.calls["expand"] == 1
    assert not call_with_cache(req(seed=2), inner, tmp_path).cached
    assert not call_with_cache(req(seed=1, prompt="other"), inner, tmp_path).cached
    assert inner.calls["expand"] == 3


def test_cache_round_trip_unicode(tmp_path):
    s = ScriptedBackend()
    s.add("expand", None, ["Café é中  \n trailing"])
    c = CachedBackend(s, str(tmp_path))
    a = c.complete(req())
    b = c.complete(req())
    assert b.cached and a.samples == b.samples


def test_cache_io_failure_degrades(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a dir")
    resp = call_with_cache(req(), MockBackend(), blocker)
    assert not resp.cached and resp.samples


class _Handler(BaseHTTPRequestHandler):
    seen: list = []
    fail_first = 0

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Handler.seen.append((body, self.headers.get("Authorization")))
        if _Handler.fail_first > 0:
            _Handler.fail_first -= 1
            self.send_response(500)
            self.end_headers()
            return
        out = {"choices": [{"message": {"content": f"sample {i}"}} for i in range(body["n"])]}
        data = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    _Handler.seen = []
    _Handler.fail_first = 0
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_port}/v1/chat/completions"
    srv.shutdown()


def test_http_wire_format(server, monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekret")
    b = HttpBackend(server, "some-model", api_key_env="TEST_KEY", backoff=0)
    resp = b.complete(req(n=2))
    assert resp.samples == ("sample 0", "sample 1")
    body, auth = _Handler.seen[0]
    assert body["model"] == "some-model" and body["n"] == 2 and body["temperature"] == 0.7
    assert body["messages"][0] == {"role": "system", "content": "p"}
    assert "who won" in body["messages"][1]["content"]
    assert auth == "Bearer sekret"


def test_http_retries_then_fails(server):
    _Handler.fail_first = 1
    b = HttpBackend(server, "m", retries=1, backoff=0)
    assert b.complete(req()).samples == ("sample 0",)
    _Handler.fail_first = 5
    with pytest.raises(BackendError):
        b.complete(req())


def test_http_missing_key(server, monkeypatch):
    monkeypatch.delenv("NOPE_KEY", raising=False)
    with pytest.raises(BackendError, match="NOPE_KEY"):
        HttpBackend(server, "m", api_key_env="NOPE_KEY").complete(req())
